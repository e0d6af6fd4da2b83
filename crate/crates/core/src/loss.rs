//! Training objectives: point-level InfoNCE, rotation cross-entropy, the flow
//! equivariance distance and their weighted sum.
//!
//! Each kernel returns its value together with the gradient with respect to
//! its inputs; the autodiff tape reuses these.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Bijective matching between rows of view A and rows of view B.
#[derive(Debug, Clone, PartialEq)]
pub struct MatchSet {
    pairs: Vec<(usize, usize)>,
}

impl MatchSet {
    pub fn new(pairs: Vec<(usize, usize)>) -> Result<Self> {
        if pairs.is_empty() {
            return Err(Error::EmptyMatches);
        }
        let mut a: Vec<usize> = pairs.iter().map(|p| p.0).collect();
        let mut b: Vec<usize> = pairs.iter().map(|p| p.1).collect();
        a.sort_unstable();
        b.sort_unstable();
        if a.windows(2).any(|w| w[0] == w[1]) || b.windows(2).any(|w| w[0] == w[1]) {
            return Err(Error::config("matches", "an index appears in more than one pair"));
        }
        Ok(Self { pairs })
    }

    /// `(0,0), (1,1), ...`
    pub fn diagonal(n: usize) -> Result<Self> {
        Self::new((0..n).map(|i| (i, i)).collect())
    }

    pub fn pairs(&self) -> &[(usize, usize)] {
        &self.pairs
    }

    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LossWeights {
    pub lambda_pnce: f64,
    pub lambda_ce: f64,
    pub lambda_flow: f64,
    pub tau: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self {
            lambda_pnce: 0.01,
            lambda_ce: 1.0,
            lambda_flow: 300.0,
            tau: 1.0,
        }
    }
}

impl LossWeights {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("loss.lambda_pnce", self.lambda_pnce),
            ("loss.lambda_ce", self.lambda_ce),
            ("loss.lambda_flow", self.lambda_flow),
        ] {
            if !(v.is_finite() && v >= 0.0) {
                return Err(Error::config(name, "must be finite and >= 0"));
            }
        }
        if !(self.tau.is_finite() && self.tau > 0.0) {
            return Err(Error::config("loss.tau", "must be finite and > 0"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossReport {
    pub l_pnce: f64,
    pub l_ce: f64,
    pub l_flow: f64,
    pub total: f64,
}

pub fn combine(l_pnce: f64, l_ce: f64, l_flow: f64, w: &LossWeights) -> LossReport {
    LossReport {
        l_pnce,
        l_ce,
        l_flow,
        total: w.lambda_pnce * l_pnce + w.lambda_ce * l_ce + w.lambda_flow * l_flow,
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn check_rows(what: &'static str, data: &[f64], dim: usize) -> Result<usize> {
    if dim == 0 || data.len() % dim != 0 {
        return Err(Error::LengthMismatch {
            what,
            expected: dim,
            actual: data.len(),
        });
    }
    Ok(data.len() / dim)
}

pub(crate) struct InfoNceGrad {
    pub value: f64,
    pub grad_a: Vec<f64>,
    pub grad_b: Vec<f64>,
}

/// Mean over matched pairs of `-log(exp(a_i.b_j/tau) / sum_k exp(a_i.b_k/tau))`,
/// `k` ranging over every second element of the match set.
pub(crate) fn info_nce_with_grad(
    feats_a: &[f64],
    feats_b: &[f64],
    dim: usize,
    matches: &MatchSet,
    tau: f64,
) -> Result<InfoNceGrad> {
    let na = check_rows("view A features", feats_a, dim)?;
    let nb = check_rows("view B features", feats_b, dim)?;
    if let Some(&(i, j)) = matches.pairs.iter().find(|&&(i, j)| i >= na || j >= nb) {
        return Err(Error::config("matches", format!("pair ({i}, {j}) out of range")));
    }
    let keys: Vec<usize> = matches.pairs.iter().map(|p| p.1).collect();
    let np = matches.len();
    let scale = 1.0 / (np as f64 * tau);

    // per pair: loss term and softmax over keys
    let rows: Vec<(f64, Vec<f64>)> = matches
        .pairs
        .par_iter()
        .map(|&(i, j)| {
            let a = &feats_a[i * dim..(i + 1) * dim];
            let logits: Vec<f64> = keys.iter().map(|&k| dot(a, &feats_b[k * dim..(k + 1) * dim]) / tau).collect();
            let m = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let z: f64 = logits.iter().map(|l| (l - m).exp()).sum();
            let pos = dot(a, &feats_b[j * dim..(j + 1) * dim]) / tau;
            let loss = m + z.ln() - pos;
            let probs = logits.iter().map(|l| (l - m).exp() / z).collect();
            (loss, probs)
        })
        .collect();
    let value = rows.iter().map(|r| r.0).sum::<f64>() / np as f64;

    let mut grad_a = vec![0.0; feats_a.len()];
    let grad_rows: Vec<Vec<f64>> = matches
        .pairs
        .par_iter()
        .zip(&rows)
        .map(|(&(_, j), (_, probs))| {
            let mut g = vec![0.0; dim];
            for (&k, &p) in keys.iter().zip(probs) {
                for (gd, bd) in g.iter_mut().zip(&feats_b[k * dim..(k + 1) * dim]) {
                    *gd += p * bd;
                }
            }
            for (gd, bd) in g.iter_mut().zip(&feats_b[j * dim..(j + 1) * dim]) {
                *gd = (*gd - bd) * scale;
            }
            g
        })
        .collect();
    for (&(i, _), g) in matches.pairs.iter().zip(grad_rows) {
        grad_a[i * dim..(i + 1) * dim].copy_from_slice(&g);
    }

    let mut grad_b = vec![0.0; feats_b.len()];
    let key_grads: Vec<Vec<f64>> = (0..keys.len())
        .into_par_iter()
        .map(|col| {
            let mut g = vec![0.0; dim];
            for (&(i, j), (_, probs)) in matches.pairs.iter().zip(&rows) {
                let mut w = probs[col];
                if j == keys[col] {
                    w -= 1.0;
                }
                for (gd, ad) in g.iter_mut().zip(&feats_a[i * dim..(i + 1) * dim]) {
                    *gd += w * ad;
                }
            }
            g.iter_mut().for_each(|v| *v *= scale);
            g
        })
        .collect();
    for (&k, g) in keys.iter().zip(key_grads) {
        grad_b[k * dim..(k + 1) * dim].copy_from_slice(&g);
    }
    Ok(InfoNceGrad { value, grad_a, grad_b })
}

/// Point-level InfoNCE over flattened feature rows of width `dim`.
pub fn point_info_nce(feats_a: &[f64], feats_b: &[f64], dim: usize, matches: &MatchSet, tau: f64) -> Result<f64> {
    Ok(info_nce_with_grad(feats_a, feats_b, dim, matches, tau)?.value)
}

/// Mean over rows of `-log softmax(logits_r)[label_r]`, plus the logit gradient.
pub(crate) fn cross_entropy_with_grad(logits: &[f64], n: usize, labels: &[usize]) -> Result<(f64, Vec<f64>)> {
    let rows = check_rows("logits", logits, n)?;
    if rows != labels.len() {
        return Err(Error::LengthMismatch {
            what: "labels vs logit rows",
            expected: rows,
            actual: labels.len(),
        });
    }
    if let Some(&label) = labels.iter().find(|&&l| l >= n) {
        return Err(Error::LabelOutOfRange { label, classes: n });
    }
    let mut grad = vec![0.0; logits.len()];
    let mut total = 0.0;
    for (r, &label) in labels.iter().enumerate() {
        let row = &logits[r * n..(r + 1) * n];
        let m = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let z: f64 = row.iter().map(|l| (l - m).exp()).sum();
        total += m + z.ln() - row[label];
        for (c, g) in grad[r * n..(r + 1) * n].iter_mut().enumerate() {
            let p = (row[c] - m).exp() / z;
            *g = (p - if c == label { 1.0 } else { 0.0 }) / rows as f64;
        }
    }
    Ok((total / rows as f64, grad))
}

pub fn rotation_ce(logits: &[f64], label: usize) -> Result<f64> {
    if logits.is_empty() {
        return Err(Error::LabelOutOfRange { label, classes: 0 });
    }
    Ok(cross_entropy_with_grad(logits, logits.len(), &[label])?.0)
}

/// Unit L2 normalization with zero vectors passed through.
pub(crate) fn normalize_row(v: &[f64]) -> (Vec<f64>, f64) {
    let n = dot(v, v).sqrt();
    if n > 0.0 {
        (v.iter().map(|x| x / n).collect(), n)
    } else {
        (v.to_vec(), 0.0)
    }
}

/// Backprop through `y = v / |v|`; identity when `v` was zero.
pub(crate) fn normalize_row_backward(y: &[f64], norm: f64, g: &[f64], out: &mut [f64]) {
    if norm > 0.0 {
        let yg = dot(y, g);
        for ((o, gi), yi) in out.iter_mut().zip(g).zip(y) {
            *o += (gi - yi * yg) / norm;
        }
    } else {
        for (o, gi) in out.iter_mut().zip(g) {
            *o += gi;
        }
    }
}

/// `(1/cells) * sum_cells |z^ - y^|^2` with per-cell unit normalization.
pub(crate) fn flow_l2_with_grad(z: &[f64], y: &[f64], channels: usize) -> Result<(f64, Vec<f64>, Vec<f64>)> {
    if z.len() != y.len() {
        return Err(Error::LengthMismatch {
            what: "flow maps",
            expected: z.len(),
            actual: y.len(),
        });
    }
    let cells = check_rows("flow map", z, channels)?;
    if cells == 0 {
        return Ok((0.0, Vec::new(), Vec::new()));
    }
    let mut gz = vec![0.0; z.len()];
    let mut gy = vec![0.0; y.len()];
    let mut total = 0.0;
    for c in 0..cells {
        let r = c * channels..(c + 1) * channels;
        let (zn, zl) = normalize_row(&z[r.clone()]);
        let (yn, yl) = normalize_row(&y[r.clone()]);
        let diff: Vec<f64> = zn.iter().zip(&yn).map(|(a, b)| a - b).collect();
        total += dot(&diff, &diff);
        let g: Vec<f64> = diff.iter().map(|d| 2.0 * d / cells as f64).collect();
        let neg: Vec<f64> = g.iter().map(|v| -v).collect();
        normalize_row_backward(&zn, zl, &g, &mut gz[r.clone()]);
        normalize_row_backward(&yn, yl, &neg, &mut gy[r]);
    }
    Ok((total / cells as f64, gz, gy))
}

/// Flow equivariance distance between two maps of equal shape.
pub fn flow_l2(z_prev: &crate::voxel::BevMap, y_t: &crate::voxel::BevMap) -> Result<f64> {
    if (z_prev.height, z_prev.width, z_prev.channels) != (y_t.height, y_t.width, y_t.channels) {
        return Err(Error::LengthMismatch {
            what: "flow map dims",
            expected: z_prev.data.len(),
            actual: y_t.data.len(),
        });
    }
    Ok(flow_l2_with_grad(&z_prev.data, &y_t.data, z_prev.channels)?.0)
}
