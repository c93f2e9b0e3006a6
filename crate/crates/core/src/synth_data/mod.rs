//! Procedural labeled datasets: virtual identities rendered under a catalog
//! of parametric illuminations, plus held-out "captured" target domains.

mod benchmark;
mod dataset;
mod render;
mod specs;

pub use benchmark::{generate_benchmark, Benchmark, BenchmarkConfig, REAL_ID_BASE, REAL_ILLUM_BASE, TEST_ID_BASE};
pub use dataset::{generate_domain, generate_target_domain, Dataset, Origin, Sample, MANIFEST_FILE};
pub use render::{box_blur3, render_captured, render_person, render_person_with_mask, FrameSize, RealnessGap};
pub use specs::{
    held_out_near, nearest_in_catalog, sample_identities, sample_illumination_catalog, BodyGeometry, IdentitySpec,
    IlluminationSpec, MIN_IDENTITY_COLOR_DISTANCE, MIN_ILLUMINATION_DISTANCE,
};
