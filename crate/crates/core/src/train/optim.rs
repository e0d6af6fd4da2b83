//! AdamW with decoupled weight decay.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::net::ParamSet;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamW {
    pub lr: f64,
    pub weight_decay: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

/// First and second moments plus the number of updates taken.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub m: ParamSet,
    pub v: ParamSet,
    pub t: u64,
}

impl AdamState {
    pub fn new(params: &ParamSet) -> Self {
        Self {
            m: params.zeros_like(),
            v: params.zeros_like(),
            t: 0,
        }
    }
}

/// One update of every trainable entry; buffers are left alone.
pub fn adamw_step(params: &mut ParamSet, grads: &ParamSet, state: &mut AdamState, h: &AdamW) -> Result<()> {
    params.check_same_schema(grads)?;
    params.check_same_schema(&state.m)?;
    params.check_same_schema(&state.v)?;
    state.t += 1;
    let c1 = 1.0 - h.beta1.powi(state.t as i32);
    let c2 = 1.0 - h.beta2.powi(state.t as i32);
    for p in params.iter_mut().filter(|p| p.trainable) {
        let g = &grads.get(&p.name).expect("schema checked").data;
        let m = &mut state.m.get_mut(&p.name).expect("schema checked").data;
        for (mi, gi) in m.iter_mut().zip(g) {
            *mi = h.beta1 * *mi + (1.0 - h.beta1) * gi;
        }
        let v = &mut state.v.get_mut(&p.name).expect("schema checked").data;
        for (vi, gi) in v.iter_mut().zip(g) {
            *vi = h.beta2 * *vi + (1.0 - h.beta2) * gi * gi;
        }
        let m = &state.m.get(&p.name).expect("schema checked").data;
        let v = &state.v.get(&p.name).expect("schema checked").data;
        for ((x, mi), vi) in p.data.iter_mut().zip(m).zip(v) {
            let m_hat = mi / c1;
            let v_hat = vi / c2;
            *x -= h.lr * (m_hat / (v_hat.sqrt() + h.eps) + h.weight_decay * *x);
        }
    }
    if !params.all_finite() {
        return Err(Error::NonFinite {
            step: state.t,
            detail: "parameters became non-finite".into(),
        });
    }
    Ok(())
}
