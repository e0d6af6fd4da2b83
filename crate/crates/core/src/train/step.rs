//! One joint training step over a batch of scene pairs.

use rand::seq::index::sample;

use crate::data::ScenePair;
use crate::error::{Error, Result};
use crate::flow::warp_features;
use crate::geom::{apply_transform, sample_transform};
use crate::loss::{combine, LossReport, MatchSet};
use crate::net::model::{
    self, classify, encode, encoder_forward, point_rows, pool, predict, project, update_running_stats, NormStats,
};
use crate::net::{ema_update, gamma_schedule, ParamSet, Tape, Var};
use crate::rng::SeedStream;
use crate::train::optim::adamw_step;
use crate::train::schedule::lr_schedule;
use crate::train::{StepMetrics, TrainConfig, TrainState};
use crate::voxel::{bev_maxpool, voxelize};

/// Loss nodes of one forward pass. Disabled branches have no node.
pub struct LossGraph {
    pub pnce: Option<Var>,
    pub ce: Option<Var>,
    pub flow: Option<Var>,
    pub total: Var,
    pub report: LossReport,
    pub norm_stats: NormStats,
}

/// Random stream of step `k`; independent of how many steps ran before.
pub fn step_stream(seed: u64, k: u64) -> SeedStream {
    SeedStream::new(seed).fork_named("step").fork(k)
}

struct SpatialOut {
    pnce: Var,
    maps: [Var; 2],
    labels: [usize; 2],
}

fn spatial_branch(tape: &mut Tape, cfg: &TrainConfig, pair: &ScenePair, online: &ParamSet, rng: &mut SeedStream) -> Result<SpatialOut> {
    let (ta, ca) = sample_transform(&cfg.augment, rng);
    let (tb, cb) = sample_transform(&cfg.augment, rng);
    let mut views = Vec::with_capacity(2);
    for t in [&ta, &tb] {
        let cloud = apply_transform(&pair.curr, t);
        let (vox, map) = voxelize(&cloud, &cfg.grid);
        let h = encode(tape, online, &vox)?;
        let bev = pool(tape, h, &vox);
        let proj = project(tape, online, bev)?;
        views.push((vox, map, h, proj));
    }
    let (va, vb) = (&views[0], &views[1]);
    let surviving: Vec<usize> = (0..pair.curr.len())
        .filter(|&i| va.1[i].is_some() && vb.1[i].is_some())
        .collect();
    if surviving.len() < 2 {
        return Err(Error::Degenerate(format!("{} matched points survive voxelization in both views", surviving.len())));
    }
    let mut chosen: Vec<usize> = sample(rng, surviving.len(), cfg.points_per_view.min(surviving.len()))
        .into_iter()
        .map(|i| surviving[i])
        .collect();
    chosen.sort_unstable();
    let rows_a = point_rows(&va.0, &chosen, &va.1)?;
    let rows_b = point_rows(&vb.0, &chosen, &vb.1)?;
    let fa = tape.gather_normalize(va.2, va.3, rows_a);
    let fb = tape.gather_normalize(vb.2, vb.3, rows_b);
    let pnce = tape.info_nce(fa, fb, &MatchSet::diagonal(chosen.len())?, cfg.loss.tau)?;
    Ok(SpatialOut {
        pnce,
        maps: [va.3, vb.3],
        labels: [ca, cb],
    })
}

fn temporal_branch(tape: &mut Tape, cfg: &TrainConfig, pair: &ScenePair, online: &ParamSet, target: &ParamSet) -> Result<Var> {
    let (vox_t, _) = voxelize(&pair.curr, &cfg.grid);
    let h_t = encode(tape, online, &vox_t)?;
    let bev_t = pool(tape, h_t, &vox_t);
    let z_t = project(tape, online, bev_t)?;
    let y_t = predict(tape, online, z_t)?;

    // target side: plain forward passes, never recorded
    let (vox_prev, map_prev) = voxelize(&pair.prev, &cfg.grid);
    let h_prev = encoder_forward(target, &vox_prev)?;
    let warped = warp_features(&h_prev, &pair.prev, &pair.flow, &map_prev)?;
    let z_prev = model::project_forward(target, &bev_maxpool(&warped))?;
    let z = tape.constant(z_prev.cells(), z_prev.channels, z_prev.data);
    tape.flow_l2(z, y_t)
}

/// Records the full forward pass of a batch and its weighted loss.
pub fn build_losses(
    tape: &mut Tape,
    cfg: &TrainConfig,
    batch: &[ScenePair],
    online: &ParamSet,
    target: &ParamSet,
    rng: &SeedStream,
) -> Result<LossGraph> {
    if batch.is_empty() {
        return Err(Error::config("batch", "empty batch"));
    }
    let inv_b = 1.0 / batch.len() as f64;
    let mut pnce_terms = Vec::new();
    let mut maps = Vec::new();
    let mut labels = Vec::new();
    let mut flow_terms = Vec::new();
    for (b, pair) in batch.iter().enumerate() {
        let mut rng = rng.fork(b as u64);
        if cfg.spatial {
            let s = spatial_branch(tape, cfg, pair, online, &mut rng)?;
            pnce_terms.push((s.pnce, inv_b));
            maps.extend(s.maps);
            labels.extend(s.labels);
        }
        if cfg.temporal {
            flow_terms.push((temporal_branch(tape, cfg, pair, online, target)?, inv_b));
        }
    }

    let mut norm_stats = NormStats::default();
    let (pnce, ce) = if cfg.spatial {
        let pnce = tape.weighted_sum(pnce_terms);
        let (logits, stats) = classify(tape, online, &maps)?;
        norm_stats = stats;
        (Some(pnce), Some(tape.cross_entropy(logits, &labels)?))
    } else {
        (None, None)
    };
    let flow = cfg.temporal.then(|| tape.weighted_sum(flow_terms));

    let value = |v: Option<Var>| v.map_or(0.0, |v| tape.scalar(v));
    let report = combine(value(pnce), value(ce), value(flow), &cfg.loss);
    let w = &cfg.loss;
    let mut terms = Vec::new();
    for (v, lambda) in [(pnce, w.lambda_pnce), (ce, w.lambda_ce), (flow, w.lambda_flow)] {
        if let Some(v) = v {
            terms.push((v, lambda));
        }
    }
    let total = tape.weighted_sum(terms);
    Ok(LossGraph {
        pnce,
        ce,
        flow,
        total,
        report,
        norm_stats,
    })
}

/// Forward, backward, AdamW on the online network, then EMA of the target.
///
/// A degenerate scene yields `Error::Degenerate` and leaves `state` untouched.
pub fn train_step(cfg: &TrainConfig, batch: &[ScenePair], state: &mut TrainState, k: u64) -> Result<StepMetrics> {
    let total_steps = cfg.total_steps;
    let gamma = gamma_schedule(k.min(total_steps), total_steps, cfg.gamma_base)?;
    let lr = lr_schedule(k, total_steps, cfg.max_lr);
    let mut tape = Tape::new();
    let graph = build_losses(&mut tape, cfg, batch, &state.online, &state.target, &step_stream(cfg.seed, k))?;
    let r = graph.report;
    if ![r.l_pnce, r.l_ce, r.l_flow, r.total].iter().all(|v| v.is_finite()) {
        return Err(Error::NonFinite {
            step: k,
            detail: format!("l_pnce={} l_ce={} l_flow={}", r.l_pnce, r.l_ce, r.l_flow),
        });
    }
    let grads = tape.backward(graph.total, &state.online)?;
    let mut online = state.online.clone();
    let mut opt = state.opt.clone();
    adamw_step(&mut online, &grads, &mut opt, &cfg.optimizer(lr))?;
    update_running_stats(&mut online, &graph.norm_stats)?;
    state.target = ema_update(&state.target, &online, gamma)?;
    state.online = online;
    state.opt = opt;
    state.step = k + 1;
    Ok(StepMetrics {
        step: k,
        lr,
        gamma,
        l_pnce: r.l_pnce,
        l_ce: r.l_ce,
        l_flow: r.l_flow,
        total: r.total,
    })
}

/// Gradient of the batch loss with respect to the online network, without updating anything.
pub fn online_gradients(cfg: &TrainConfig, batch: &[ScenePair], state: &TrainState, k: u64) -> Result<(ParamSet, LossReport)> {
    let mut tape = Tape::new();
    let graph = build_losses(&mut tape, cfg, batch, &state.online, &state.target, &step_stream(cfg.seed, k))?;
    Ok((tape.backward(graph.total, &state.online)?, graph.report))
}
