//! The pretraining loop: batching, metrics, checkpoints.

use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;

use crate::data::ScenePair;
use crate::error::{Error, Result};
use crate::rng::SeedStream;
use crate::train::checkpoint::save_checkpoint;
use crate::train::step::train_step;
use crate::train::{StepMetrics, TrainConfig, TrainState, METRICS_HEADER};

pub const METRICS_FILE: &str = "metrics.csv";
pub const FINAL_CHECKPOINT: &str = "final.ckpt";

pub fn checkpoint_name(step: u64) -> String {
    format!("step_{step:06}.ckpt")
}

#[derive(Debug, Clone)]
pub struct TrainSummary {
    pub state: TrainState,
    pub metrics: Vec<StepMetrics>,
    /// Steps whose batch was degenerate and therefore skipped.
    pub skipped: Vec<u64>,
    pub checkpoints: Vec<PathBuf>,
}

/// Indices of the scene pairs used at step `k`.
///
/// Pairs are visited in a fresh seeded permutation each epoch, so every
/// pair is seen once per epoch and step `k` never depends on earlier steps.
pub fn batch_indices(seed: u64, n_pairs: usize, batch_size: usize, k: u64) -> Vec<usize> {
    let stream = SeedStream::new(seed).fork_named("epoch");
    let mut cached: Option<(u64, Vec<usize>)> = None;
    (0..batch_size as u64)
        .map(|j| {
            let pos = k * batch_size as u64 + j;
            let epoch = pos / n_pairs as u64;
            if cached.as_ref().map(|c| c.0) != Some(epoch) {
                let mut perm: Vec<usize> = (0..n_pairs).collect();
                perm.shuffle(&mut stream.fork(epoch));
                cached = Some((epoch, perm));
            }
            cached.as_ref().unwrap().1[(pos % n_pairs as u64) as usize]
        })
        .collect()
}

/// Runs `cfg.total_steps` joint steps from a fresh state and writes
/// `metrics.csv` plus checkpoints into `out`.
pub fn pretrain(cfg: &TrainConfig, data: &[ScenePair], out: impl AsRef<Path>) -> Result<TrainSummary> {
    cfg.validate()?;
    if data.is_empty() {
        return Err(Error::config("data", "dataset has no scene pairs"));
    }
    let out = out.as_ref();
    fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;
    let metrics_path = out.join(METRICS_FILE);
    let file = File::create(&metrics_path).map_err(|e| Error::io(&metrics_path, e))?;
    let mut csv = BufWriter::new(file);
    writeln!(csv, "{METRICS_HEADER}").map_err(|e| Error::io(&metrics_path, e))?;

    let mut state = TrainState::init(cfg);
    let mut metrics = Vec::new();
    let mut skipped = Vec::new();
    let mut checkpoints = Vec::new();
    for k in 0..cfg.total_steps {
        let batch: Vec<ScenePair> = batch_indices(cfg.seed, data.len(), cfg.batch_size, k)
            .into_iter()
            .map(|i| data[i].clone())
            .collect();
        match train_step(cfg, &batch, &mut state, k) {
            Ok(m) => {
                writeln!(csv, "{}", m.csv_row()).map_err(|e| Error::io(&metrics_path, e))?;
                log::debug!("step {k}: total {:.6}", m.total);
                metrics.push(m);
            }
            Err(Error::Degenerate(why)) => {
                log::warn!("step {k} skipped: {why}");
                state.step = k + 1;
                skipped.push(k);
            }
            Err(e) => {
                if let Error::NonFinite { step, detail } = &e {
                    log::error!("non-finite loss at step {step}: {detail}");
                }
                csv.flush().map_err(|e| Error::io(&metrics_path, e))?;
                return Err(e);
            }
        }
        let done = k + 1;
        if cfg.checkpoint_every > 0 && done % cfg.checkpoint_every == 0 && done < cfg.total_steps {
            let path = out.join(checkpoint_name(done));
            save_checkpoint(&state, &path)?;
            checkpoints.push(path);
        }
    }
    csv.flush().map_err(|e| Error::io(&metrics_path, e))?;
    let path = out.join(FINAL_CHECKPOINT);
    save_checkpoint(&state, &path)?;
    checkpoints.push(path);
    Ok(TrainSummary {
        state,
        metrics,
        skipped,
        checkpoints,
    })
}
