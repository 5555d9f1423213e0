use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use gestalt_core::dataio::synth::{generate, SynthConfig};
use gestalt_core::dataio::{Dataset, Split};
use gestalt_core::ensemble::parse_predictions;
use gestalt_core::error::ErrorCategory;
use gestalt_core::evaluation::evaluate_predictions;
use gestalt_core::experiments::phases::{finetune_all, predict_all, pretrain_all};
use gestalt_core::experiments::pipeline::{
    build_sample_template, prepare, read_checkpoint, region_specs, split_train_val, write_checkpoint, Sample,
};
use gestalt_core::experiments::{run, ExperimentConfig, ExperimentKind};
use gestalt_core::gestaltnet::{write_metrics, EpochMetrics, Phase, RegionModel};
use gestalt_core::preproc::annotation::{format_template, parse_template};
use gestalt_core::preproc::RegionTag;
use gestalt_core::rng::{derive_seed, str_id};
use gestalt_core::{GestaltError, Result};

/// Overrides the output root when `--out` is absent.
const OUT_ENV: &str = "GESTALT_OUT";

#[derive(Parser)]
#[command(name = "gestalt", version, about = "Facial-region ensemble classification pipeline")]
struct Cli {
    /// Increase log verbosity (-v info, -vv debug).
    #[arg(short, long, action = clap::ArgAction::Count, global = true)]
    verbose: u8,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct Common {
    /// Experiment configuration (TOML).
    #[arg(long)]
    config: Option<PathBuf>,
    /// Overrides the configured seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Multiplies every epoch count.
    #[arg(long)]
    scale_factor: Option<f64>,
    /// Output directory; falls back to $GESTALT_OUT.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Worker threads for region jobs (0 = all cores).
    #[arg(long)]
    workers: Option<usize>,
}

#[derive(Clone, Copy, ValueEnum)]
enum SynthKindArg {
    Syndrome,
    Identity,
}

#[derive(Subcommand)]
enum Command {
    /// Write a synthetic dataset (PNGs, landmarks, manifest).
    Synth {
        #[command(flatten)]
        common: Common,
        #[arg(long, value_enum, default_value = "syndrome")]
        kind: SynthKindArg,
        #[arg(long, default_value_t = 8)]
        classes: usize,
        #[arg(long, default_value_t = 35)]
        per_class: usize,
        /// Mark the last N samples of each class as test.
        #[arg(long, default_value_t = 0)]
        test_per_class: usize,
    },
    /// Align images and write region crops plus the template.
    Preprocess {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        manifest: PathBuf,
        /// Existing template; built from the manifest's landmarks otherwise.
        #[arg(long)]
        template: Option<PathBuf>,
    },
    /// Pretrain one model per region on an identity-labeled manifest.
    Pretrain {
        #[command(flatten)]
        common: Common,
        /// Identity manifest; the configured pretraining source otherwise.
        #[arg(long)]
        manifest: Option<PathBuf>,
    },
    /// Fine-tune pretrained region models on a labeled manifest.
    Finetune {
        #[command(flatten)]
        common: Common,
        /// Directory holding `<region>-pretrained.ckpt` files.
        #[arg(long)]
        base: PathBuf,
        #[arg(long)]
        manifest: PathBuf,
    },
    /// Score manifest records with fine-tuned region models.
    Predict {
        #[command(flatten)]
        common: Common,
        /// Directory holding `<region>-finetuned.ckpt` files.
        #[arg(long)]
        models: PathBuf,
        #[arg(long)]
        manifest: PathBuf,
        /// Only records with this split.
        #[arg(long)]
        split: Option<Split>,
    },
    /// Top-K, permutation test and confusion matrix for a prediction file.
    Evaluate {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        predictions: PathBuf,
    },
    /// Run a full configured experiment.
    Experiment {
        #[command(flatten)]
        common: Common,
    },
}

fn usage(msg: impl Into<String>) -> GestaltError {
    GestaltError::InvalidArgument(msg.into())
}

fn require_exists(path: &Path) -> Result<()> {
    if !path.exists() {
        return Err(GestaltError::io(path, std::io::Error::from(std::io::ErrorKind::NotFound)));
    }
    Ok(())
}

impl Common {
    fn config(&self) -> Result<ExperimentConfig> {
        let mut cfg = match &self.config {
            Some(p) => {
                require_exists(p)?;
                ExperimentConfig::load(p)?
            }
            None => ExperimentConfig::new(ExperimentKind::Multiclass),
        };
        if let Some(s) = self.seed {
            cfg.seed = s;
        }
        if let Some(f) = self.scale_factor {
            cfg.schedule.scale_factor = f;
        }
        if let Some(w) = self.workers {
            cfg.workers = w;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    fn out(&self) -> Result<PathBuf> {
        let dir = match &self.out {
            Some(p) => p.clone(),
            None => std::env::var_os(OUT_ENV)
                .map(PathBuf::from)
                .ok_or_else(|| usage(format!("--out is required (or set {OUT_ENV})")))?,
        };
        fs::create_dir_all(&dir).map_err(|e| GestaltError::io(&dir, e))?;
        Ok(dir)
    }
}

fn write(path: &Path, bytes: impl AsRef<[u8]>) -> Result<()> {
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent).map_err(|e| GestaltError::io(parent, e))?;
    }
    fs::write(path, bytes).map_err(|e| GestaltError::io(path, e))
}

fn manifest_samples(path: &Path, min_side: usize) -> Result<Vec<(Sample, Option<Split>)>> {
    require_exists(path)?;
    let ds = Dataset::load(path)?;
    let (loaded, excluded) = gestalt_core::dataio::load_samples(&ds, min_side)?;
    if !excluded.is_empty() {
        log::warn!("{} records excluded (missing landmarks or too small)", excluded.len());
    }
    Ok(loaded
        .into_iter()
        .map(|l| {
            let split = l.record.split;
            (
                Sample {
                    id: l.record.id,
                    label: l.record.label,
                    image: l.image.to_grayscale(),
                    landmarks: l.landmarks,
                },
                split,
            )
        })
        .collect())
}

fn load_models(dir: &Path, regions: &[RegionTag], phase: Phase) -> Result<Vec<RegionModel>> {
    require_exists(dir)?;
    let suffix = match phase {
        Phase::Pretrained => "pretrained",
        Phase::Finetuned => "finetuned",
    };
    regions
        .iter()
        .map(|r| {
            let path = dir.join(format!("{}-{suffix}.ckpt", r.as_str()));
            require_exists(&path)?;
            read_checkpoint(&path)
        })
        .collect()
}

fn save_models(out: &Path, trained: &[(RegionModel, Vec<EpochMetrics>)], suffix: &str) -> Result<()> {
    for (m, metrics) in trained {
        let r = m.region.as_str();
        write_checkpoint(m, &out.join(format!("checkpoints/{r}-{suffix}.ckpt")).tap_parent()?)?;
        write_metrics(&out.join(format!("metrics/{r}-{suffix}.jsonl")).tap_parent()?, metrics)?;
    }
    Ok(())
}

trait TapParent: Sized {
    fn tap_parent(self) -> Result<Self>;
}

impl TapParent for PathBuf {
    fn tap_parent(self) -> Result<Self> {
        if let Some(p) = self.parent() {
            fs::create_dir_all(p).map_err(|e| GestaltError::io(p, e))?;
        }
        Ok(self)
    }
}

fn execute(command: Command) -> Result<()> {
    match command {
        Command::Synth {
            common,
            kind,
            classes,
            per_class,
            test_per_class,
        } => {
            let seed = common.seed.unwrap_or(0);
            let cfg = match kind {
                SynthKindArg::Syndrome => SynthConfig::syndromes(classes, per_class, seed),
                SynthKindArg::Identity => SynthConfig::identities(classes, per_class, seed),
            };
            if test_per_class > per_class {
                return Err(usage("--test-per-class exceeds --per-class"));
            }
            let out = common.out()?;
            let samples = generate(&cfg)?;
            let splits: BTreeMap<String, Split> = samples
                .iter()
                .enumerate()
                .filter(|(i, _)| test_per_class > 0 && i % per_class >= per_class - test_per_class)
                .map(|(_, s)| (s.id.clone(), Split::Test))
                .collect();
            gestalt_core::dataio::synth::write_dataset(&samples, &out, &splits)?;
            println!("{}", out.join("manifest.tsv").display());
        }
        Command::Preprocess {
            common,
            manifest,
            template,
        } => {
            let cfg = common.config()?;
            if let Some(t) = &template {
                require_exists(t)?;
            }
            let samples: Vec<Sample> = manifest_samples(&manifest, cfg.min_side)?.into_iter().map(|x| x.0).collect();
            let out = common.out()?;
            let template = match template {
                Some(t) => {
                    let text = fs::read_to_string(&t).map_err(|e| GestaltError::io(&t, e))?;
                    parse_template(&text, &t.display().to_string())?
                }
                None => build_sample_template(&samples, &cfg)?,
            };
            write(&out.join("template.tsv"), format_template(&template) + "\n")?;
            let specs = region_specs(&cfg);
            let mut index = String::from("# id\tregion\tlabel\tcrop\n");
            for p in prepare(&samples, &template, &specs) {
                for (spec, crop) in specs.iter().zip(&p.crops) {
                    let Some(crop) = crop else { continue };
                    let rel = format!("crops/{}/{}.png", spec.tag, p.id);
                    let path = out.join(&rel).tap_parent()?;
                    crop.pixels.save_png(&path)?;
                    index += &format!("{}\t{}\t{}\t{rel}\n", p.id, spec.tag, p.label);
                }
            }
            write(&out.join("crops.tsv"), index)?;
        }
        Command::Pretrain { common, manifest } => {
            let mut cfg = common.config()?;
            if let Some(m) = manifest {
                require_exists(&m)?;
                cfg.pretrain = gestalt_core::experiments::PretrainSource::Manifest { manifest: m };
            }
            let out = common.out()?;
            let (train, val) = gestalt_core::experiments::pipeline::load_pretrain(&cfg)?;
            let template = build_sample_template(&train, &cfg)?;
            let trained = pretrain_all(&cfg, &train, &val, &template)?;
            write(&out.join("config.toml"), cfg.to_toml())?;
            save_models(&out, &trained, "pretrained")?;
        }
        Command::Finetune { common, base, manifest } => {
            require_exists(&manifest)?;
            let cfg = common.config()?;
            let bases = load_models(&base, &cfg.regions, Phase::Pretrained)?;
            let samples = manifest_samples(&manifest, cfg.min_side)?;
            let out = common.out()?;
            let (mut train, mut val) = (Vec::new(), Vec::new());
            for (s, split) in samples {
                match split {
                    Some(Split::Test) => {}
                    Some(Split::Val) => val.push(s),
                    _ => train.push(s),
                }
            }
            if val.is_empty() {
                (train, val) = split_train_val(train, cfg.train_fraction, derive_seed(cfg.seed, &[str_id("split")]))?;
            }
            let trained = finetune_all(&cfg, &bases, &train, &val)?;
            write(&out.join("config.toml"), cfg.to_toml())?;
            save_models(&out, &trained, "finetuned")?;
        }
        Command::Predict {
            common,
            models,
            manifest,
            split,
        } => {
            require_exists(&manifest)?;
            let cfg = common.config()?;
            let models = load_models(&models, &cfg.regions, Phase::Finetuned)?;
            let samples: Vec<Sample> = manifest_samples(&manifest, cfg.min_side)?
                .into_iter()
                .filter(|(_, s)| split.is_none() || *s == split)
                .map(|x| x.0)
                .collect();
            let out = common.out()?;
            let records = predict_all(&models, &samples, true)?;
            let lines: String = records.iter().map(|r| r.to_line() + "\n").collect();
            write(&out.join("predictions.jsonl"), lines)?;
        }
        Command::Evaluate { common, predictions } => {
            let cfg = common.config()?;
            require_exists(&predictions)?;
            let text = fs::read_to_string(&predictions).map_err(|e| GestaltError::io(&predictions, e))?;
            let records = parse_predictions(&text, &predictions.display().to_string())?;
            let out = common.out()?;
            let seed = derive_seed(cfg.seed, &[str_id("permutation")]);
            let report = evaluate_predictions(&records, &cfg.ks, cfg.permutation_draws, seed)?;
            write(&out.join("evaluation.json"), report.to_json())?;
            gestalt_core::evaluation::plot::confusion_heatmap(&report.confusion).save_png(&out.join("plots/confusion.png").tap_parent()?)?;
            let bars: Vec<f64> = report.topk.iter().map(|t| t.accuracy).collect();
            gestalt_core::evaluation::plot::accuracy_bars(&bars).save_png(&out.join("plots/accuracy.png"))?;
            for t in &report.topk {
                println!("top-{}\t{:.4}", t.k, t.accuracy);
            }
        }
        Command::Experiment { common } => {
            if common.config.is_none() {
                return Err(usage("experiment needs --config"));
            }
            let cfg = common.config()?;
            let out = common.out()?;
            let report = run(&cfg, Some(&out))?;
            print!("{}", report.tables());
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    match execute(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(match e.category() {
                ErrorCategory::Usage => 2,
                ErrorCategory::Data => 3,
                ErrorCategory::Internal => 4,
            })
        }
    }
}
