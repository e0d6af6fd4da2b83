//! A short joint pretraining run on generated scenes, followed by evaluation.
//!
//! Run with `--release`; pass a step count as the first argument (default 30).

use essl::data::{gen_pair, SynthConfig};
use essl::rng::SeedStream;
use essl::train::{evaluate, pretrain, EvalConfig, TrainConfig};

fn main() -> essl::Result<()> {
    let steps: u64 = std::env::args().nth(1).and_then(|s| s.parse().ok()).unwrap_or(30);
    let synth = SynthConfig::default();
    let root = SeedStream::new(7);
    let train: Vec<_> = (0..40).map(|i| gen_pair(&synth, &mut root.fork(i))).collect::<Result<_, _>>()?;
    let held: Vec<_> = (1000..1010).map(|i| gen_pair(&synth, &mut root.fork(i))).collect::<Result<_, _>>()?;

    let cfg = TrainConfig {
        total_steps: steps,
        checkpoint_every: 0,
        seed: 7,
        ..Default::default()
    };
    let out = std::env::temp_dir().join("essl_pretrain_example");
    let summary = pretrain(&cfg, &train, &out)?;
    for m in summary.metrics.iter().step_by((steps as usize / 10).max(1)) {
        println!(
            "step {:>4}  lr {:.2e}  l_pnce {:.4}  l_ce {:.4}  l_flow {:.4}  total {:.3}",
            m.step, m.lr, m.l_pnce, m.l_ce, m.l_flow, m.total
        );
    }
    let report = evaluate(&summary.state, &held, &cfg, &EvalConfig::default())?;
    println!(
        "held-out: rotation accuracy {:.3}, flow_l2 {:.4}, positive cosine {:.4}",
        report.rotation_accuracy, report.mean_flow_l2, report.mean_positive_cosine
    );
    println!("metrics and checkpoint in {}", out.display());
    Ok(())
}
