//! Target-network tracking: decay schedule and exponential moving average.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::net::params::ParamSet;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EmaSchedule {
    pub gamma_base: f64,
    pub total_steps: u64,
}

impl EmaSchedule {
    pub fn new(gamma_base: f64, total_steps: u64) -> Result<Self> {
        if !(0.0..1.0).contains(&gamma_base) {
            return Err(Error::config("gamma_base", "must lie in [0, 1)"));
        }
        if total_steps == 0 {
            return Err(Error::config("total_steps", "must be >= 1"));
        }
        Ok(Self { gamma_base, total_steps })
    }

    pub fn gamma(&self, step: u64) -> Result<f64> {
        gamma_schedule(step, self.total_steps, self.gamma_base)
    }
}

/// `1 - (1 - gamma_base) * (cos(pi k / K) + 1) / 2`: rises from `gamma_base` to 1.
pub fn gamma_schedule(step: u64, total: u64, gamma_base: f64) -> Result<f64> {
    if total == 0 {
        return Err(Error::config("total_steps", "must be >= 1"));
    }
    if step > total {
        return Err(Error::StepOutOfRange { step, total });
    }
    let c = (PI * step as f64 / total as f64).cos();
    Ok(1.0 - (1.0 - gamma_base) * (c + 1.0) / 2.0)
}

/// `xi <- gamma xi + (1 - gamma) theta` for every target entry.
///
/// The target holds only encoder and projector entries; online entries
/// without a counterpart are ignored.
pub fn ema_update(target: &ParamSet, online: &ParamSet, gamma: f64) -> Result<ParamSet> {
    let mut out = target.clone();
    for p in out.iter_mut() {
        let q = online.get(&p.name).ok_or_else(|| Error::Schema {
            name: p.name.clone(),
            reason: "absent from the online network".into(),
        })?;
        if q.shape != p.shape {
            return Err(Error::Schema {
                name: p.name.clone(),
                reason: format!("target shape {:?} vs online {:?}", p.shape, q.shape),
            });
        }
        for (x, t) in p.data.iter_mut().zip(&q.data) {
            *x = gamma * *x + (1.0 - gamma) * t;
        }
    }
    Ok(out)
}
