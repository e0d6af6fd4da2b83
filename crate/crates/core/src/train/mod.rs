//! Training: the joint spatial/temporal step, optimizer, schedules,
//! checkpoints, evaluation and gradient checking.

pub mod checkpoint;
pub mod eval;
pub mod gradcheck;
pub mod optim;
pub mod run;
pub mod schedule;
pub mod step;

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geom::AugmentConfig;
use crate::loss::LossWeights;
use crate::net::model::{init_online, init_target};
use crate::net::ParamSet;
use crate::rng::SeedStream;
use crate::voxel::VoxelGridConfig;

pub use checkpoint::{load_checkpoint, save_checkpoint};
pub use eval::{evaluate, EvalConfig, EvalReport};
pub use gradcheck::{gradcheck, GradcheckOptions, GradcheckReport};
pub use optim::{adamw_step, AdamState, AdamW};
pub use run::{pretrain, TrainSummary};
pub use schedule::lr_schedule;
pub use step::train_step;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub total_steps: u64,
    pub batch_size: usize,
    pub max_lr: f64,
    pub weight_decay: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    /// Initial target decay rate; 0.9996 is also a common choice.
    pub gamma_base: f64,
    pub loss: LossWeights,
    pub augment: AugmentConfig,
    pub grid: VoxelGridConfig,
    pub seed: u64,
    pub spatial: bool,
    pub temporal: bool,
    /// Matched points sampled per scene for the contrastive loss.
    pub points_per_view: usize,
    /// Periodic checkpoint interval in steps; 0 keeps only the final one.
    pub checkpoint_every: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            total_steps: 300,
            batch_size: 2,
            max_lr: 1e-4,
            weight_decay: 0.01,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            gamma_base: 0.999,
            loss: LossWeights::default(),
            augment: AugmentConfig::default(),
            grid: VoxelGridConfig::default(),
            seed: 0,
            spatial: true,
            temporal: true,
            points_per_view: 2048,
            checkpoint_every: 100,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.total_steps == 0 {
            return Err(Error::config("train.total_steps", "must be >= 1"));
        }
        if self.batch_size == 0 {
            return Err(Error::config("train.batch_size", "must be >= 1"));
        }
        if !(self.max_lr.is_finite() && self.max_lr > 0.0) {
            return Err(Error::config("train.max_lr", "must be finite and > 0"));
        }
        if !(self.weight_decay.is_finite() && self.weight_decay >= 0.0) {
            return Err(Error::config("train.weight_decay", "must be finite and >= 0"));
        }
        for (name, b) in [("train.beta1", self.beta1), ("train.beta2", self.beta2)] {
            if !(0.0..1.0).contains(&b) {
                return Err(Error::config(name, "must lie in [0, 1)"));
            }
        }
        if !(self.eps.is_finite() && self.eps > 0.0) {
            return Err(Error::config("train.eps", "must be finite and > 0"));
        }
        if !(0.0..1.0).contains(&self.gamma_base) {
            return Err(Error::config("train.gamma_base", "must lie in [0, 1)"));
        }
        if self.points_per_view < 2 {
            return Err(Error::config("train.points_per_view", "must be >= 2"));
        }
        self.loss.validate()?;
        self.augment.validate()?;
        self.grid.validate()?;
        Ok(())
    }

    pub fn optimizer(&self, lr: f64) -> AdamW {
        AdamW {
            lr,
            weight_decay: self.weight_decay,
            beta1: self.beta1,
            beta2: self.beta2,
            eps: self.eps,
        }
    }
}

/// Online network `theta`, target network `xi`, optimizer state and step counter.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainState {
    pub online: ParamSet,
    pub target: ParamSet,
    pub opt: AdamState,
    pub step: u64,
}

impl TrainState {
    /// Fresh parameters; the target starts as a copy of the online encoder and projector.
    pub fn init(cfg: &TrainConfig) -> Self {
        let mut rng = SeedStream::new(cfg.seed).fork_named("init");
        let online = init_online(cfg.augment.n_rotation_classes, &mut rng);
        Self {
            target: init_target(&online),
            opt: AdamState::new(&online),
            online,
            step: 0,
        }
    }

    /// Checks every array against a freshly initialized state of the expected architecture.
    pub fn check_schema(&self, expected_online: &ParamSet) -> Result<()> {
        expected_online.check_same_schema(&self.online)?;
        init_target(expected_online).check_same_schema(&self.target)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StepMetrics {
    pub step: u64,
    pub lr: f64,
    pub gamma: f64,
    pub l_pnce: f64,
    pub l_ce: f64,
    pub l_flow: f64,
    pub total: f64,
}

pub const METRICS_HEADER: &str = "step,lr,gamma,l_pnce,l_ce,l_flow,total";

impl StepMetrics {
    /// CSV row with 17 significant digits per float.
    pub fn csv_row(&self) -> String {
        format!(
            "{},{:.16e},{:.16e},{:.16e},{:.16e},{:.16e},{:.16e}",
            self.step, self.lr, self.gamma, self.l_pnce, self.l_ce, self.l_flow, self.total
        )
    }

    pub fn parse_csv_row(line: &str) -> Option<Self> {
        let f: Vec<&str> = line.trim().split(',').collect();
        if f.len() != 7 {
            return None;
        }
        let n = |i: usize| f[i].parse::<f64>().ok();
        Some(Self {
            step: f[0].parse().ok()?,
            lr: n(1)?,
            gamma: n(2)?,
            l_pnce: n(3)?,
            l_ce: n(4)?,
            l_flow: n(5)?,
            total: n(6)?,
        })
    }

    pub fn write_csv<W: Write>(rows: &[StepMetrics], mut w: W) -> std::io::Result<()> {
        writeln!(w, "{METRICS_HEADER}")?;
        for r in rows {
            writeln!(w, "{}", r.csv_row())?;
        }
        Ok(())
    }
}
