//! Held-out probes of a trained model: rotation prediction, flow
//! consistency and agreement of matched point features.

use rand::seq::index::sample;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::ScenePair;
use crate::error::{Error, Result};
use crate::flow::warp_features;
use crate::geom::{apply_transform, sample_transform};
use crate::loss::flow_l2;
use crate::net::model::{classify_forward, encoder_forward, gather_point_features, predict_forward, project_forward};
use crate::rng::SeedStream;
use crate::train::{TrainConfig, TrainState};
use crate::voxel::{bev_maxpool, voxelize, BevMap, SparseVoxelTensor};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalConfig {
    /// Augmented views classified per pair; at least 2, since the first
    /// two views also provide the matched-feature probe.
    pub views_per_pair: usize,
    pub seed: u64,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            views_per_pair: 4,
            seed: 0,
        }
    }
}

impl EvalConfig {
    pub fn validate(&self) -> Result<()> {
        if self.views_per_pair < 2 {
            return Err(Error::config("eval.views_per_pair", "must be >= 2"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RotationTrial {
    pub pair: usize,
    pub label: usize,
    pub predicted: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub rotation_accuracy: f64,
    pub mean_flow_l2: f64,
    pub mean_positive_cosine: f64,
    pub pair_count: usize,
    pub rotation_trials: Vec<RotationTrial>,
}

/// Index of the largest value; ties resolve to the first.
pub fn argmax(v: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in v.iter().enumerate() {
        if x > v[best] {
            best = i;
        }
    }
    best
}

struct View {
    map: Vec<Option<usize>>,
    h: SparseVoxelTensor,
    proj: BevMap,
}

fn embed(state: &TrainState, cloud: &crate::geom::PointCloud, cfg: &TrainConfig) -> Result<View> {
    let (vox, map) = voxelize(cloud, &cfg.grid);
    let h = encoder_forward(&state.online, &vox)?;
    let proj = project_forward(&state.online, &bev_maxpool(&h))?;
    Ok(View { map, h, proj })
}

struct PairResult {
    trials: Vec<RotationTrial>,
    flow: f64,
    cosine: Option<f64>,
}

fn eval_pair(i: usize, pair: &ScenePair, state: &TrainState, cfg: &TrainConfig, ecfg: &EvalConfig) -> Result<PairResult> {
    let mut rng = SeedStream::new(ecfg.seed).fork_named("eval").fork(i as u64);
    let mut trials = Vec::with_capacity(ecfg.views_per_pair);
    let mut views = Vec::with_capacity(2);
    for v in 0..ecfg.views_per_pair {
        let (t, label) = sample_transform(&cfg.augment, &mut rng);
        let view = embed(state, &apply_transform(&pair.curr, &t), cfg)?;
        let logits = classify_forward(&state.online, &view.proj)?;
        trials.push(RotationTrial {
            pair: i,
            label,
            predicted: argmax(&logits),
        });
        if v < 2 {
            views.push(view);
        }
    }

    let (a, b) = (&views[0], &views[1]);
    let surviving: Vec<usize> = (0..pair.curr.len())
        .filter(|&p| a.map[p].is_some() && b.map[p].is_some())
        .collect();
    let cosine = if surviving.is_empty() {
        None
    } else {
        let mut chosen: Vec<usize> = sample(&mut rng, surviving.len(), cfg.points_per_view.min(surviving.len()))
            .into_iter()
            .map(|j| surviving[j])
            .collect();
        chosen.sort_unstable();
        let fa = gather_point_features(&a.h, &a.proj, &pair.curr, &chosen, &a.map)?;
        let fb = gather_point_features(&b.h, &b.proj, &pair.curr, &chosen, &b.map)?;
        let dots: f64 = fa.iter().zip(&fb).map(|(x, y)| x * y).sum();
        Some(dots / chosen.len() as f64)
    };

    let curr = embed(state, &pair.curr, cfg)?;
    let y_t = predict_forward(&state.online, &curr.proj)?;
    let (vox_prev, map_prev) = voxelize(&pair.prev, &cfg.grid);
    let h_prev = encoder_forward(&state.target, &vox_prev)?;
    let warped = warp_features(&h_prev, &pair.prev, &pair.flow, &map_prev)?;
    let z_prev = project_forward(&state.target, &bev_maxpool(&warped))?;
    Ok(PairResult {
        trials,
        flow: flow_l2(&z_prev, &y_t)?,
        cosine,
    })
}

/// Evaluates `state` on held-out pairs. Each view is classified alone,
/// so the classifier normalizes with its running statistics.
pub fn evaluate(state: &TrainState, data: &[ScenePair], cfg: &TrainConfig, ecfg: &EvalConfig) -> Result<EvalReport> {
    cfg.validate()?;
    ecfg.validate()?;
    let results: Vec<PairResult> = data
        .par_iter()
        .enumerate()
        .map(|(i, p)| eval_pair(i, p, state, cfg, ecfg))
        .collect::<Result<_>>()?;
    let trials: Vec<RotationTrial> = results.iter().flat_map(|r| r.trials.iter().copied()).collect();
    let correct = trials.iter().filter(|t| t.label == t.predicted).count();
    let mean = |v: Vec<f64>| if v.is_empty() { 0.0 } else { v.iter().sum::<f64>() / v.len() as f64 };
    Ok(EvalReport {
        rotation_accuracy: if trials.is_empty() { 0.0 } else { correct as f64 / trials.len() as f64 },
        mean_flow_l2: mean(results.iter().map(|r| r.flow).collect()),
        mean_positive_cosine: mean(results.iter().filter_map(|r| r.cosine).collect()),
        pair_count: data.len(),
        rotation_trials: trials,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn argmax_takes_first_of_ties() {
        assert_eq!(argmax(&[1.0, 3.0, 3.0, 2.0]), 1);
        assert_eq!(argmax(&[0.0; 4]), 0);
    }

    #[test]
    fn fewer_than_two_views_is_rejected() {
        let e = EvalConfig {
            views_per_pair: 1,
            ..Default::default()
        };
        assert!(matches!(e.validate(), Err(Error::Config { .. })));
    }
}
