//! Probe/gallery retrieval scoring, image-statistics comparison and the
//! ablation battery.

mod ablation;
mod cmc;
mod stats;

pub use ablation::{run_ablation, AblationConfig, AblationRecord, AblationReport, Condition, SeedDiagnostics, TranslationDiagnostics};
pub use cmc::{cmc, make_split, select_single_shot, CmcCurve, Metric, ProbeGallerySplit, SingleShotSelection};
pub use stats::{image_stats, stats_distance, ImageStats, HISTOGRAM_BINS};
