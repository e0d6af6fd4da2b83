//! Encoder `f`, projector `m`, predictor `q`, classifier `s`, and point
//! feature gathering.

use std::sync::Arc;

use crate::error::{Error, Result};
use crate::geom::PointCloud;
use crate::net::params::{filled, glorot, ParamSet, Role};
use crate::net::tape::{Rulebook, Tape, Var, NEIGHBORS, NORM_EPS};
use crate::rng::SeedStream;
use crate::voxel::{bev_argmax, BevMap, SparseVoxelTensor, INPUT_CHANNELS};

/// Encoder channel plan: input, block 1, block 2.
pub const ENCODER_CHANNELS: [usize; 3] = [INPUT_CHANNELS, 16, 32];
/// Projector channel plan.
pub const PROJECTOR_CHANNELS: [usize; 4] = [32, 32, 16, 16];
pub const EMBED_CHANNELS: usize = 16;
pub const CLASSIFIER_HIDDEN: usize = 32;
/// Width of a gathered point feature (encoder + projected BEV).
pub const POINT_FEATURE_DIM: usize = ENCODER_CHANNELS[2] + EMBED_CHANNELS;
/// Momentum of the classifier's running statistics.
pub const RUNNING_MOMENTUM: f64 = 0.1;

/// Builds the full online parameter set (all four roles).
pub fn init_online(n_classes: usize, rng: &mut SeedStream) -> ParamSet {
    let mut ps = ParamSet::new();
    let mut add = |p| ps.insert(p).expect("static schema has unique names");
    for l in 0..2 {
        let (cin, cout) = (ENCODER_CHANNELS[l], ENCODER_CHANNELS[l + 1]);
        add(glorot(&format!("encoder.block{}.weight", l + 1), Role::Encoder, vec![NEIGHBORS, cin, cout], NEIGHBORS * cin, NEIGHBORS * cout, rng));
        add(filled(&format!("encoder.block{}.bias", l + 1), Role::Encoder, vec![cout], 0.0, true));
    }
    for l in 0..3 {
        let (cin, cout) = (PROJECTOR_CHANNELS[l], PROJECTOR_CHANNELS[l + 1]);
        add(glorot(&format!("projector.fc{}.weight", l + 1), Role::Projector, vec![cin, cout], cin, cout, rng));
        add(filled(&format!("projector.fc{}.bias", l + 1), Role::Projector, vec![cout], 0.0, true));
    }
    add(glorot("predictor.weight", Role::Predictor, vec![EMBED_CHANNELS, EMBED_CHANNELS], EMBED_CHANNELS, EMBED_CHANNELS, rng));
    add(filled("predictor.bias", Role::Predictor, vec![EMBED_CHANNELS], 0.0, true));
    let dims = [EMBED_CHANNELS, CLASSIFIER_HIDDEN, CLASSIFIER_HIDDEN, n_classes];
    for l in 0..3 {
        add(glorot(&format!("classifier.fc{}.weight", l + 1), Role::Classifier, vec![dims[l], dims[l + 1]], dims[l], dims[l + 1], rng));
        add(filled(&format!("classifier.fc{}.bias", l + 1), Role::Classifier, vec![dims[l + 1]], 0.0, true));
    }
    for l in 1..=2 {
        add(filled(&format!("classifier.norm{l}.running_mean"), Role::Classifier, vec![CLASSIFIER_HIDDEN], 0.0, false));
        add(filled(&format!("classifier.norm{l}.running_var"), Role::Classifier, vec![CLASSIFIER_HIDDEN], 1.0, false));
    }
    ps
}

/// Target network: a copy of the online encoder and projector.
pub fn init_target(online: &ParamSet) -> ParamSet {
    online.subset(Role::has_target)
}

pub fn n_classes(params: &ParamSet) -> Result<usize> {
    Ok(params.require("classifier.fc3.bias")?.numel())
}

/// Encoder on the tape; output rows align with `t`'s coordinates.
pub fn encode(tape: &mut Tape, params: &ParamSet, t: &SparseVoxelTensor) -> Result<Var> {
    if t.channels() != INPUT_CHANNELS {
        return Err(Error::ChannelMismatch {
            layer: "encoder",
            expected: INPUT_CHANNELS,
            actual: t.channels(),
        });
    }
    let rules = Arc::new(Rulebook::new(t.coords()));
    let mut x = tape.constant(t.len(), t.channels(), t.features().to_vec());
    for l in 1..=2 {
        let w = tape.param(params, &format!("encoder.block{l}.weight"))?;
        let b = tape.param(params, &format!("encoder.block{l}.bias"))?;
        let h = tape.subm_conv(x, w, b, rules.clone())?;
        x = tape.relu(h);
    }
    Ok(x)
}

pub fn encoder_forward(params: &ParamSet, t: &SparseVoxelTensor) -> Result<SparseVoxelTensor> {
    let mut tape = Tape::new();
    let v = encode(&mut tape, params, t)?;
    Ok(t.with_features(tape.shape(v).1, tape.value(v).to_vec()))
}

/// BEV max-pool of an encoded tensor held on the tape.
pub fn pool(tape: &mut Tape, features: Var, coords_of: &SparseVoxelTensor) -> Var {
    let c = tape.shape(features).1;
    let view = coords_of.with_features(c, tape.value(features).to_vec());
    let arg = bev_argmax(&view);
    let g = coords_of.grid();
    tape.bev_max(features, g.bev_height() * g.bev_width(), arg)
}

pub fn project(tape: &mut Tape, params: &ParamSet, bev: Var) -> Result<Var> {
    let mut x = bev;
    for l in 1..=3 {
        let w = tape.param(params, &format!("projector.fc{l}.weight"))?;
        let b = tape.param(params, &format!("projector.fc{l}.bias"))?;
        x = tape.linear(x, w, b, "projector")?;
        if l < 3 {
            let (s, _, _) = tape.standardize(x);
            x = tape.relu(s);
        }
    }
    Ok(x)
}

pub fn predict(tape: &mut Tape, params: &ParamSet, bev: Var) -> Result<Var> {
    let w = tape.param(params, "predictor.weight")?;
    let b = tape.param(params, "predictor.bias")?;
    tape.linear(bev, w, b, "predictor")
}

/// Batch statistics observed by the classifier's two normalization layers.
#[derive(Debug, Clone, Default)]
pub struct NormStats {
    pub layers: Vec<(Vec<f64>, Vec<f64>)>,
}

/// Classifier over a batch of projected BEV maps; one logit row per map.
///
/// With more than one map, hidden layers are standardized with batch
/// statistics. A single map is normalized with the stored running statistics.
pub fn classify(tape: &mut Tape, params: &ParamSet, maps: &[Var]) -> Result<(Var, NormStats)> {
    let pooled = maps.iter().map(|&m| tape.mean_rows(m)).collect();
    let mut x = tape.stack_rows(pooled)?;
    let batch = maps.len();
    let mut stats = NormStats::default();
    for l in 1..=3 {
        let w = tape.param(params, &format!("classifier.fc{l}.weight"))?;
        let b = tape.param(params, &format!("classifier.fc{l}.bias"))?;
        x = tape.linear(x, w, b, "classifier")?;
        if l < 3 {
            let s = if batch > 1 {
                let (s, mean, var) = tape.standardize(x);
                stats.layers.push((mean, var));
                s
            } else {
                let mean = &params.require(&format!("classifier.norm{l}.running_mean"))?.data;
                let var = &params.require(&format!("classifier.norm{l}.running_var"))?.data;
                let scale = var.iter().map(|v| 1.0 / (v + NORM_EPS).sqrt()).collect();
                tape.fixed_affine(x, mean, scale)
            };
            x = tape.relu(s);
        }
    }
    Ok((x, stats))
}

/// Folds batch statistics into the running buffers.
pub fn update_running_stats(params: &mut ParamSet, stats: &NormStats) -> Result<()> {
    for (l, (mean, var)) in stats.layers.iter().enumerate() {
        for (suffix, obs) in [("running_mean", mean), ("running_var", var)] {
            let name = format!("classifier.norm{}.{suffix}", l + 1);
            let p = params.get_mut(&name).ok_or_else(|| Error::Schema {
                name: name.clone(),
                reason: "missing".into(),
            })?;
            for (r, o) in p.data.iter_mut().zip(obs) {
                *r = (1.0 - RUNNING_MOMENTUM) * *r + RUNNING_MOMENTUM * o;
            }
        }
    }
    Ok(())
}

/// `(voxel row, BEV cell)` for each requested point.
pub fn point_rows(t: &SparseVoxelTensor, indices: &[usize], point_to_voxel: &[Option<usize>]) -> Result<Vec<(usize, usize)>> {
    indices
        .iter()
        .map(|&i| {
            let v = point_to_voxel.get(i).copied().flatten().ok_or(Error::DroppedPoint(i))?;
            Ok((v, t.grid().bev_cell(t.coords()[v])))
        })
        .collect()
}

fn bev_to_tape(tape: &mut Tape, bev: &BevMap) -> Var {
    tape.constant(bev.cells(), bev.channels, bev.data.clone())
}

fn bev_from_tape(tape: &Tape, v: Var, like: &BevMap) -> BevMap {
    BevMap {
        height: like.height,
        width: like.width,
        channels: tape.shape(v).1,
        data: tape.value(v).to_vec(),
    }
}

pub fn bev_of(tape: &Tape, v: Var, grid: &crate::voxel::VoxelGridConfig) -> BevMap {
    BevMap {
        height: grid.bev_height(),
        width: grid.bev_width(),
        channels: tape.shape(v).1,
        data: tape.value(v).to_vec(),
    }
}

pub fn project_forward(params: &ParamSet, bev: &BevMap) -> Result<BevMap> {
    let mut tape = Tape::new();
    let x = bev_to_tape(&mut tape, bev);
    let y = project(&mut tape, params, x)?;
    Ok(bev_from_tape(&tape, y, bev))
}

pub fn predict_forward(params: &ParamSet, bev: &BevMap) -> Result<BevMap> {
    let mut tape = Tape::new();
    let x = bev_to_tape(&mut tape, bev);
    let y = predict(&mut tape, params, x)?;
    Ok(bev_from_tape(&tape, y, bev))
}

/// Logits for a single map (running-statistics normalization).
pub fn classify_forward(params: &ParamSet, bev: &BevMap) -> Result<Vec<f64>> {
    let mut tape = Tape::new();
    let x = bev_to_tape(&mut tape, bev);
    let (logits, _) = classify(&mut tape, params, &[x])?;
    Ok(tape.value(logits).to_vec())
}

/// Unit-norm concatenation of each point's encoder feature and projected BEV cell.
pub fn gather_point_features(
    h: &SparseVoxelTensor,
    proj: &BevMap,
    cloud: &PointCloud,
    indices: &[usize],
    point_to_voxel: &[Option<usize>],
) -> Result<Vec<f64>> {
    if point_to_voxel.len() != cloud.len() {
        return Err(Error::LengthMismatch {
            what: "index map vs cloud",
            expected: cloud.len(),
            actual: point_to_voxel.len(),
        });
    }
    let rows = point_rows(h, indices, point_to_voxel)?;
    let mut tape = Tape::new();
    let v = tape.constant(h.len(), h.channels(), h.features().to_vec());
    let c = bev_to_tape(&mut tape, proj);
    let out = tape.gather_normalize(v, c, rows);
    Ok(tape.value(out).to_vec())
}
