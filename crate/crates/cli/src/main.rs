use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use illumreid::domain_translation::{train_translation, translate, Ablation, TranslationConfig, TranslationModel};
use illumreid::eval::{cmc, image_stats, make_split, run_ablation, Metric};
use illumreid::illum_inference::{infer_domain, train_illum_classifier, IllumArch, IlluminationClassifier};
use illumreid::pipeline::{load_ablation_config, read_catalog, run_pipeline, validate_config, write_benchmark, ExperimentConfig};
use illumreid::reid_model::{finetune, train_joint, FeatureExtractor, ReidArch};
use illumreid::synth_data::{generate_benchmark, generate_target_domain, sample_identities, BenchmarkConfig, Dataset, IlluminationSpec, RealnessGap, TEST_ID_BASE};
use illumreid::util::{read_json, write_json};
use illumreid::{Error, Result, TrainConfig};
use rand::SeedableRng;
use serde::Serialize;

#[derive(Parser)]
#[command(name = "illumreid", version, about = "Illumination-aware domain adaptation for person re-identification")]
struct Cli {
    /// base random seed
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// output file or directory
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// experiment TOML; stage subcommands take their hyperparameters from it
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// recompute stages whose stored configuration differs
    #[arg(long, global = true)]
    force: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Epochs {
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    lr: Option<f64>,
}

#[derive(Subcommand)]
enum Command {
    /// Generate the synthetic catalog, real source cameras and a target camera
    GenData {
        #[arg(long)]
        identities: Option<usize>,
        #[arg(long)]
        illums: Option<usize>,
        #[arg(long = "per-id")]
        per_id: Option<usize>,
    },
    /// Render captured-looking frames under one illumination
    GenTarget {
        #[arg(long = "illum-spec")]
        illum_spec: PathBuf,
        #[arg(long = "gap-sigma", default_value_t = 0.02)]
        gap_sigma: f32,
        #[arg(long, default_value_t = 25)]
        identities: usize,
        #[arg(long = "per-id", default_value_t = 2)]
        per_id: usize,
        /// directory written by gen-data; the illumination must not be in its catalog
        #[arg(long)]
        catalog: Option<PathBuf>,
    },
    /// Train the identity feature extractor on one or more datasets
    TrainReid {
        #[arg(long, value_delimiter = ',', required = true)]
        data: Vec<PathBuf>,
        #[command(flatten)]
        train: Epochs,
    },
    /// Train the illumination classifier on a multi-domain synthetic dataset
    TrainIllum {
        #[arg(long)]
        data: PathBuf,
        #[command(flatten)]
        train: Epochs,
    },
    /// Vote for the synthetic domain closest to unlabeled target images
    InferIllum {
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long)]
        target: PathBuf,
    },
    /// Train the source→target translator
    TrainTranslate {
        #[arg(long)]
        source: PathBuf,
        #[arg(long)]
        target: PathBuf,
        /// source domain id when the source directory holds several
        #[arg(long)]
        domain: Option<u32>,
        #[arg(long, value_parser = parse_ablation)]
        ablation: Option<Ablation>,
        #[arg(long)]
        epochs: Option<usize>,
    },
    /// Translate a source dataset with a trained translator
    Translate {
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long)]
        source: PathBuf,
    },
    /// Fine-tune a feature extractor on translated data
    Finetune {
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[command(flatten)]
        train: Epochs,
    },
    /// Single-shot CMC of a feature extractor
    Evaluate {
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long)]
        probe: PathBuf,
        #[arg(long)]
        gallery: PathBuf,
        #[arg(long, value_parser = parse_metric, default_value = "cosine")]
        metric: Metric,
    },
    /// Intensity and gradient histograms of a dataset
    Stats {
        #[arg(long)]
        data: PathBuf,
    },
    /// Run the comparison battery over seeds and conditions
    Ablation,
    /// Run every stage of the adaptation pipeline in an experiment directory
    Run,
    /// Print a configuration file with every default filled in
    CheckConfig,
}

fn parse_ablation(s: &str) -> std::result::Result<Ablation, String> {
    Ablation::parse(s).map_err(|e| e.to_string())
}

fn parse_metric(s: &str) -> std::result::Result<Metric, String> {
    Metric::parse(s).map_err(|e| e.to_string())
}

fn need<'a>(v: &'a Option<PathBuf>, flag: &str) -> Result<&'a Path> {
    v.as_deref().ok_or_else(|| Error::validation(format!("--{flag} is required for this command")))
}

fn print_json<T: Serialize>(v: &T) {
    println!("{}", serde_json::to_string_pretty(v).expect("serializable"));
}

struct Ctx {
    seed: u64,
    out: Option<PathBuf>,
    config: Option<ExperimentConfig>,
}

impl Ctx {
    fn train(&self, base: impl Fn(&ExperimentConfig) -> TrainConfig, fallback: TrainConfig, flags: &Epochs) -> TrainConfig {
        let mut t = self.config.as_ref().map(base).unwrap_or(fallback);
        t.seed = self.seed;
        if let Some(e) = flags.epochs {
            t.epochs = e;
        }
        if let Some(lr) = flags.lr {
            t.learning_rate = lr;
        }
        t
    }

    fn defaults(&self) -> ExperimentConfig {
        self.config.clone().unwrap_or_else(|| ExperimentConfig::new(self.seed))
    }
}

fn run(cli: Cli) -> Result<()> {
    if matches!(cli.command, Command::Run | Command::Ablation | Command::CheckConfig) {
        return run_config_command(&cli);
    }
    let config = cli.config.as_deref().map(validate_config).transpose()?;
    let seed = cli.seed.or(config.as_ref().map(|c| c.seed)).unwrap_or(0);
    let ctx = Ctx { seed, out: cli.out.clone(), config };
    let out = || need(&ctx.out, "out");
    match &cli.command {
        Command::GenData { identities, illums, per_id } => {
            let mut b: BenchmarkConfig = ctx.defaults().benchmark;
            b.identities = identities.unwrap_or(b.identities);
            b.illuminations = illums.unwrap_or(b.illuminations);
            b.samples_per_identity = per_id.unwrap_or(b.samples_per_identity);
            let data = write_benchmark(generate_benchmark(&b, seed)?, out()?)?;
            println!("wrote {} synthetic domains, {} real sources, {}+{} target frames to {}", data.synthetic.len(), data.real_sources.len(), data.probe.len(), data.gallery.len(), out()?.display());
        }
        Command::GenTarget { illum_spec, gap_sigma, identities, per_id, catalog } => {
            let illum: IlluminationSpec = read_json(illum_spec)?;
            let catalog = catalog.as_deref().map(read_catalog).transpose()?.unwrap_or_default();
            let b = ctx.defaults().benchmark;
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
            let ids = sample_identities(*identities, TEST_ID_BASE, &mut rng)?;
            let gap = RealnessGap { noise_sigma: *gap_sigma, ..b.gap };
            let ds = generate_target_domain(&ids, &illum, *per_id, &gap, seed, b.frame(), &catalog)?;
            ds.write(out()?)?;
            println!("wrote {} frames to {}", ds.len(), out()?.display());
        }
        Command::TrainReid { data, train } => {
            let sets = data.iter().map(|d| Dataset::read(d)).collect::<Result<Vec<_>>>()?;
            let mut arch: ReidArch = ctx.defaults().reid.arch;
            (arch.height, arch.width) = (sets[0].height, sets[0].width);
            let cfg = ctx.train(|c| c.reid.train.clone(), TrainConfig::new(0), train);
            let (model, report) = train_joint::<f32>(&sets, &arch, &cfg)?;
            model.save(out()?)?;
            print_json(&report);
        }
        Command::TrainIllum { data, train } => {
            let all = Dataset::read(data)?;
            let domains: Vec<Dataset> = all.domain_ids().into_iter().map(|d| all.domain(d)).collect();
            let mut arch: IllumArch = ctx.defaults().illum.arch;
            (arch.height, arch.width) = (all.height, all.width);
            let cfg = ctx.train(|c| c.illum.train.clone(), TrainConfig { epochs: 10, ..TrainConfig::new(0) }, train);
            let (clf, report) = train_illum_classifier::<f32>(&domains, &arch, &cfg)?;
            clf.save(out()?)?;
            print_json(&report);
        }
        Command::InferIllum { ckpt, target } => {
            let clf = IlluminationClassifier::<f32>::load(ckpt)?;
            let ds = Dataset::read(target)?;
            let selection = infer_domain(&clf, &ds.images())?;
            write_json(out()?, &selection)?;
            print_json(&selection);
        }
        Command::TrainTranslate { source, target, domain, ablation, epochs } => {
            let mut src = Dataset::read(source)?;
            if let Some(d) = domain {
                src = src.domain(*d);
            }
            let tgt = Dataset::read(target)?;
            let mut cfg = TranslationConfig { seed, ..ctx.defaults().translation };
            (cfg.arch.height, cfg.arch.width) = (src.height, src.width);
            cfg.ablation = ablation.unwrap_or(cfg.ablation);
            cfg.epochs = epochs.unwrap_or(cfg.epochs);
            let (model, report) = train_translation::<f32>(&src, &tgt, &cfg)?;
            model.save(out()?)?;
            print_json(&report);
        }
        Command::Translate { ckpt, source } => {
            let model = TranslationModel::<f32>::load(ckpt)?;
            let src = Dataset::read(source)?;
            let src = if src.domain_ids().len() > 1 { src.domain(model.source_domain) } else { src };
            let translated = translate(&model, &src)?;
            translated.write(out()?)?;
            println!("translated {} images into {}", translated.len(), out()?.display());
        }
        Command::Finetune { ckpt, data, train } => {
            let model = FeatureExtractor::<f32>::load(ckpt)?;
            let ds = Dataset::read(data)?;
            let cfg = ctx.train(|c| c.finetune.clone(), ExperimentConfig::new(0).finetune, train);
            let (tuned, report) = finetune(&model, &ds, &cfg)?;
            tuned.save(out()?)?;
            print_json(&report);
        }
        Command::Evaluate { ckpt, probe, gallery, metric } => {
            let model = FeatureExtractor::<f32>::load(ckpt)?;
            let split = make_split(&model, &Dataset::read(probe)?, &Dataset::read(gallery)?, seed)?;
            let curve = cmc(&split, *metric)?;
            let report = serde_json::json!({ "metric": metric, "seed": seed, "rank1": curve.rank1(), "n_probes": curve.n_probes, "cmc": curve.accuracies });
            if let Some(o) = &ctx.out {
                write_json(o, &report)?;
            }
            print_json(&report);
        }
        Command::Stats { data } => {
            let stats = image_stats(&Dataset::read(data)?)?;
            match &ctx.out {
                Some(o) => write_json(o, &stats)?,
                None => print_json(&stats),
            }
        }
        Command::Ablation | Command::Run | Command::CheckConfig => unreachable!("handled above"),
    }
    Ok(())
}

fn run_config_command(cli: &Cli) -> Result<()> {
    let path = need(&cli.config, "config")?;
    match cli.command {
        Command::Ablation => {
            let mut cfg = load_ablation_config(path)?;
            if let Some(s) = cli.seed {
                cfg.seeds = vec![s];
            }
            let report = run_ablation(&cfg)?;
            write_json(need(&cli.out, "out")?, &report)?;
            for (condition, mean) in &report.means {
                println!("{condition:>14}  mean rank-1 {mean:.3}");
            }
        }
        Command::Run => {
            let mut cfg = validate_config(path)?;
            if let Some(s) = cli.seed {
                cfg.seed = s;
            }
            let dir = cli.out.clone().or(cfg.out.clone()).ok_or_else(|| Error::validation("no experiment directory: pass --out or set `out` in the config"))?;
            let manifest = run_pipeline(&cfg, &dir, cli.force)?;
            for s in &manifest.stages {
                println!("{:>16}  {:>8.2}s  {}", s.stage, s.wall_seconds, if s.reused { "reused" } else { "computed" });
            }
            let m = &manifest.metrics;
            println!("k* = {} (domain {}); rank-1 {:.3} adapted, {:.3} unadapted", m.k_star, m.selected_domain, m.adapted.rank1, m.baseline.rank1);
        }
        Command::CheckConfig => print!("{}", validate_config(path)?.to_toml()),
        _ => unreachable!(),
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
