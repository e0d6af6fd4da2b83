//! Command implementations behind the `essl` binary: `gen-data`,
//! `pretrain`, `evaluate` and `gradcheck`.
//!
//! Each command validates its configuration before writing anything and
//! echoes the effective configuration into its output directory.

use std::fs;
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand};
use serde::{Deserialize, Serialize};

use crate::data::{write_synthetic_dataset, CropBox, Dataset, Manifest, SynthConfig};
use crate::error::{Error, Result};
use crate::net::model::init_online;
use crate::rng::SeedStream;
use crate::train::eval::EvalConfig;
use crate::train::gradcheck::{gradcheck, GradcheckOptions, GradcheckReport};
use crate::train::{evaluate, load_checkpoint, pretrain, EvalReport, TrainConfig, TrainSummary};

pub const CONFIG_FILE: &str = "config.json";

/// Everything a run can be configured with. Unknown keys are rejected and
/// omitted keys take their defaults.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub train: TrainConfig,
    pub synth: SynthConfig,
    pub eval: EvalConfig,
    /// Dataset directory; `--data` takes precedence.
    pub data: Option<PathBuf>,
    /// Optional crop applied to every loaded frame.
    pub crop: Option<CropBox>,
}

impl RunConfig {
    pub fn validate(&self) -> Result<()> {
        self.train.validate()?;
        self.synth.validate()?;
        self.eval.validate()?;
        if let Some(c) = &self.crop {
            c.validate()?;
        }
        Ok(())
    }

    /// Parses a JSON config. Schema violations such as unknown keys are
    /// validation errors; unreadable or syntactically broken files are IO errors.
    pub fn from_json(text: &str, path: &Path) -> Result<Self> {
        let cfg: RunConfig = serde_json::from_str(text).map_err(|source| {
            if source.classify() == serde_json::error::Category::Data {
                Error::config("config", source.to_string())
            } else {
                Error::Json {
                    path: path.to_path_buf(),
                    source,
                }
            }
        })?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: Option<&Path>) -> Result<Self> {
        match path {
            None => {
                let cfg = RunConfig::default();
                cfg.validate()?;
                Ok(cfg)
            }
            Some(p) => {
                let text = fs::read_to_string(p).map_err(|e| Error::io(p, e))?;
                Self::from_json(&text, p)
            }
        }
    }

    pub fn write(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let path = dir.join(CONFIG_FILE);
        let mut text = serde_json::to_string_pretty(self).expect("config serializes");
        text.push('\n');
        fs::write(&path, text).map_err(|e| Error::io(&path, e))
    }
}

#[derive(Debug, Parser)]
#[command(name = "essl", version, about = "Equivariant self-supervised pretraining for LiDAR scenes")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic dataset of consecutive frame pairs with flow.
    GenData {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        pairs: usize,
    },
    /// Pretrain the encoder; writes metrics.csv and checkpoints.
    Pretrain {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        data: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        steps: Option<u64>,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Evaluate a checkpoint on held-out pairs and write a JSON report.
    Evaluate {
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Defaults to the config.json beside the checkpoint, if any.
        #[arg(long)]
        config: Option<PathBuf>,
    },
    /// Compare analytic gradients with finite differences on a fixture.
    Gradcheck {
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, hide = true)]
        corrupt_gradient: bool,
    },
}

pub fn cmd_gen_data(config: Option<&Path>, out: &Path, seed: Option<u64>, pairs: usize) -> Result<Manifest> {
    let mut cfg = RunConfig::load(config)?;
    if let Some(s) = seed {
        cfg.synth.seed = s;
    }
    let manifest = write_synthetic_dataset(out, &cfg.synth, cfg.synth.seed, pairs)?;
    cfg.write(out)?;
    log::info!("wrote {} pairs to {}", manifest.pair_count(), out.display());
    Ok(manifest)
}

pub fn cmd_pretrain(
    config: Option<&Path>,
    data: Option<&Path>,
    out: &Path,
    steps: Option<u64>,
    seed: Option<u64>,
) -> Result<TrainSummary> {
    let mut cfg = RunConfig::load(config)?;
    if let Some(k) = steps {
        cfg.train.total_steps = k;
    }
    if let Some(s) = seed {
        cfg.train.seed = s;
    }
    if let Some(d) = data {
        cfg.data = Some(d.to_path_buf());
    }
    cfg.validate()?;
    let root = cfg.data.clone().ok_or_else(|| Error::config("data", "no dataset given (--data or \"data\")"))?;
    let pairs = Dataset::open(&root, cfg.crop)?.load_all()?;
    cfg.write(out)?;
    let summary = pretrain(&cfg.train, &pairs, out)?;
    if let Some(last) = summary.metrics.last() {
        log::info!("finished {} steps, last total {:.6}", cfg.train.total_steps, last.total);
    }
    Ok(summary)
}

pub fn cmd_evaluate(ckpt: &Path, data: &Path, out: &Path, config: Option<&Path>) -> Result<EvalReport> {
    let beside = ckpt.parent().map(|d| d.join(CONFIG_FILE)).filter(|p| p.exists());
    let cfg = RunConfig::load(config.or(beside.as_deref()))?;
    let state = load_checkpoint(ckpt)?;
    let expected = init_online(cfg.train.augment.n_rotation_classes, &mut SeedStream::new(0));
    state.check_schema(&expected)?;
    let pairs = Dataset::open(data, cfg.crop)?.load_all()?;
    let report = evaluate(&state, &pairs, &cfg.train, &cfg.eval)?;
    if let Some(dir) = out.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    let mut text = serde_json::to_string_pretty(&report).expect("report serializes");
    text.push('\n');
    fs::write(out, text).map_err(|e| Error::io(out, e))?;
    Ok(report)
}

pub fn cmd_gradcheck(seed: u64, corrupt: bool) -> Result<GradcheckReport> {
    gradcheck(&GradcheckOptions {
        seed,
        corrupt,
        ..Default::default()
    })
}

pub fn print_gradcheck(report: &GradcheckReport) {
    for t in &report.terms {
        println!(
            "{:<7} max_rel_error {:.3e}  worst {}[{}]  probes {}  skipped {}",
            t.term.name(),
            t.max_rel_error,
            t.worst_param,
            t.worst_index,
            t.probes,
            t.skipped
        );
    }
}

/// Runs a parsed command; returns the process exit code.
pub fn run(cli: Cli) -> i32 {
    let result = match cli.command {
        Command::GenData {
            config,
            out,
            seed,
            pairs,
        } => cmd_gen_data(config.as_deref(), &out, seed, pairs).map(|_| 0),
        Command::Pretrain {
            config,
            data,
            out,
            steps,
            seed,
        } => cmd_pretrain(config.as_deref(), data.as_deref(), &out, steps, seed).map(|_| 0),
        Command::Evaluate { ckpt, data, out, config } => cmd_evaluate(&ckpt, &data, &out, config.as_deref()).map(|r| {
            println!(
                "rotation_accuracy {:.4}  mean_flow_l2 {:.6}  mean_positive_cosine {:.4}  pairs {}",
                r.rotation_accuracy, r.mean_flow_l2, r.mean_positive_cosine, r.pair_count
            );
            0
        }),
        Command::Gradcheck { seed, corrupt_gradient } => cmd_gradcheck(seed, corrupt_gradient).map(|r| {
            print_gradcheck(&r);
            if r.passed() {
                0
            } else {
                let w = r.worst().expect("terms present");
                eprintln!(
                    "gradient check failed: {} on {}[{}] ({:.3e} >= {:.0e})",
                    w.term.name(),
                    w.worst_param,
                    w.worst_index,
                    w.max_rel_error,
                    r.tolerance
                );
                1
            }
        }),
    };
    match result {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}
