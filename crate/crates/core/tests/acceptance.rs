//! Acceptance suite. Prints one PASS/FAIL line per criterion and exits
//! non-zero if any criterion fails.
//!
//! `cargo test --release --test acceptance -- AC3 AC5` runs a subset.

use std::f64::consts::PI;
use std::path::Path;
use std::time::{Duration, Instant};

use rand::Rng;

use essl::cli::{cmd_evaluate, cmd_gen_data, cmd_pretrain, RunConfig};
use essl::data::{gen_pair, ScenePair, SynthConfig};
use essl::flow::{warp_features, SceneFlow};
use essl::geom::{compose, inverse, PointCloud, RigidTransform};
use essl::loss::{flow_l2, point_info_nce, rotation_ce, MatchSet};
use essl::net::model::{encoder_forward, init_online};
use essl::net::{ema_update, gamma_schedule, ParamSet, Role};
use essl::rng::SeedStream;
use essl::train::step::online_gradients;
use essl::train::{gradcheck, GradcheckOptions, TrainConfig, TrainState};
use essl::voxel::{voxelize, BevMap, Coord, SparseVoxelTensor, VoxelGridConfig};

type Outcome = Result<String, String>;

fn check(ok: bool, detail: String) -> Outcome {
    if ok {
        Ok(detail)
    } else {
        Err(detail)
    }
}

// ---------------------------------------------------------------- AC1

/// Flip y, scale, rotate about z, translate; written out longhand.
fn apply_oracle(t: &RigidTransform, p: [f64; 3]) -> [f64; 3] {
    let y = if t.flip { -p[1] } else { p[1] };
    let (x, y, z) = (t.scale * p[0], t.scale * y, t.scale * p[2]);
    let (s, c) = (t.yaw.sin(), t.yaw.cos());
    [
        c * x - s * y + t.translation[0],
        s * x + c * y + t.translation[1],
        z + t.translation[2],
    ]
}

fn random_transform(rng: &mut SeedStream) -> RigidTransform {
    let tr = [rng.gen_range(-5.0..5.0), rng.gen_range(-5.0..5.0), rng.gen_range(-2.0..2.0)];
    RigidTransform::new(rng.gen_bool(0.5), rng.gen_range(0.5..2.0), rng.gen_range(-PI..PI), tr).unwrap()
}

fn dist(a: [f64; 3], b: [f64; 3]) -> f64 {
    (0..3).map(|k| (a[k] - b[k]).abs()).fold(0.0, f64::max)
}

fn ac1() -> Outcome {
    let mut rng = SeedStream::new(1);
    let mut worst = 0.0f64;
    for _ in 0..1000 {
        let (a, b, c) = (random_transform(&mut rng), random_transform(&mut rng), random_transform(&mut rng));
        let p = [rng.gen_range(-20.0..20.0), rng.gen_range(-20.0..20.0), rng.gen_range(-3.0..3.0)];
        let seq = apply_oracle(&c, apply_oracle(&b, apply_oracle(&a, p)));
        let errs = [
            dist(a.apply_point(p), apply_oracle(&a, p)),
            dist(compose(&a, &b).apply_point(p), apply_oracle(&b, apply_oracle(&a, p))),
            dist(inverse(&a).apply_point(apply_oracle(&a, p)), p),
            dist(apply_oracle(&a, inverse(&a).apply_point(p)), p),
            dist(compose(&compose(&a, &b), &c).apply_point(p), seq),
            dist(compose(&a, &compose(&b, &c)).apply_point(p), seq),
        ];
        worst = errs.iter().copied().fold(worst, f64::max);
    }
    check(worst < 1e-9, format!("1000 fixtures, max abs error {worst:.2e} (< 1e-9)"))
}

// ---------------------------------------------------------------- AC2

fn info_nce_oracle(a: &[Vec<f64>], b: &[Vec<f64>], pairs: &[(usize, usize)], tau: f64) -> f64 {
    let dot = |x: &[f64], y: &[f64]| -> f64 {
        let mut s = 0.0;
        for k in 0..x.len() {
            s += x[k] * y[k];
        }
        s
    };
    let mut total = 0.0;
    for &(i, j) in pairs {
        let num = (dot(&a[i], &b[j]) / tau).exp();
        let mut den = 0.0;
        for &(_, k) in pairs {
            den += (dot(&a[i], &b[k]) / tau).exp();
        }
        total += -(num / den).ln();
    }
    total / pairs.len() as f64
}

fn ce_oracle(logits: &[f64], label: usize) -> f64 {
    let mut den = 0.0;
    for l in logits {
        den += l.exp();
    }
    -(logits[label].exp() / den).ln()
}

fn flow_oracle(z: &[Vec<f64>], y: &[Vec<f64>]) -> f64 {
    let unit = |v: &Vec<f64>| -> Vec<f64> {
        let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if n == 0.0 {
            v.clone()
        } else {
            v.iter().map(|x| x / n).collect()
        }
    };
    let mut total = 0.0;
    for (zc, yc) in z.iter().zip(y) {
        let (a, b) = (unit(zc), unit(yc));
        for k in 0..a.len() {
            total += (a[k] - b[k]) * (a[k] - b[k]);
        }
    }
    total / z.len() as f64
}

fn unit_vec(rng: &mut SeedStream, dim: usize) -> Vec<f64> {
    let v: Vec<f64> = (0..dim).map(|_| rng.gen_range(-1.0..1.0)).collect();
    let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    v.iter().map(|x| x / n).collect()
}

fn ac2() -> Outcome {
    let mut rng = SeedStream::new(2);
    let mut worst = 0.0f64;
    for _ in 0..200 {
        let dim = rng.gen_range(2..9);
        let (na, nb) = (rng.gen_range(1..12), rng.gen_range(1..12));
        let a: Vec<Vec<f64>> = (0..na).map(|_| unit_vec(&mut rng, dim)).collect();
        let b: Vec<Vec<f64>> = (0..nb).map(|_| unit_vec(&mut rng, dim)).collect();
        let m = rng.gen_range(1..=na.min(nb));
        let ia = rand::seq::index::sample(&mut rng, na, m).into_vec();
        let ib = rand::seq::index::sample(&mut rng, nb, m).into_vec();
        let pairs: Vec<(usize, usize)> = ia.into_iter().zip(ib).collect();
        let tau = rng.gen_range(0.1..2.0);
        let got = point_info_nce(&a.concat(), &b.concat(), dim, &MatchSet::new(pairs.clone()).unwrap(), tau).unwrap();
        worst = worst.max((got - info_nce_oracle(&a, &b, &pairs, tau)).abs());

        let n = rng.gen_range(2..13);
        let logits: Vec<f64> = (0..n).map(|_| rng.gen_range(-5.0..5.0)).collect();
        let label = rng.gen_range(0..n);
        worst = worst.max((rotation_ce(&logits, label).unwrap() - ce_oracle(&logits, label)).abs());

        let (h, w, c) = (rng.gen_range(1..5), rng.gen_range(1..5), rng.gen_range(1..6));
        let cell = |rng: &mut SeedStream| -> Vec<f64> {
            if rng.gen_bool(0.2) {
                vec![0.0; c]
            } else {
                (0..c).map(|_| rng.gen_range(-3.0..3.0)).collect()
            }
        };
        let zc: Vec<Vec<f64>> = (0..h * w).map(|_| cell(&mut rng)).collect();
        let yc: Vec<Vec<f64>> = (0..h * w).map(|_| cell(&mut rng)).collect();
        let mut zm = BevMap::zeros(h, w, c);
        zm.data = zc.concat();
        let mut ym = BevMap::zeros(h, w, c);
        ym.data = yc.concat();
        worst = worst.max((flow_l2(&zm, &ym).unwrap() - flow_oracle(&zc, &yc)).abs());
    }

    let same = [0.6, 0.8].repeat(4);
    let log4 = point_info_nce(&same, &same, 2, &MatchSet::diagonal(4).unwrap(), 1.0).unwrap();
    let onehot = [1.0, 0.0, 0.0, 1.0];
    let ortho = point_info_nce(&onehot, &onehot, 2, &MatchSet::diagonal(2).unwrap(), 1.0).unwrap();
    let mut z = BevMap::zeros(1, 1, 2);
    z.data = vec![1.0, 0.0];
    let mut y = BevMap::zeros(1, 1, 2);
    y.data = vec![0.0, 1.0];
    let two = flow_l2(&z, &y).unwrap();
    let hand = [
        (log4 - 4f64.ln()).abs(),
        (ortho - (1.0 + (-1f64).exp()).ln()).abs(),
        (two - 2.0).abs(),
    ];
    let hand_worst = hand.iter().copied().fold(0.0, f64::max);
    check(
        worst < 1e-10 && hand_worst < 1e-6,
        format!("200 fixtures, max oracle gap {worst:.2e} (< 1e-10); hand values off by {hand_worst:.2e} (< 1e-6)"),
    )
}

// ---------------------------------------------------------------- AC3

fn ac3() -> Outcome {
    let t0 = Instant::now();
    let report = gradcheck(&GradcheckOptions::default()).map_err(|e| e.to_string())?;
    let secs = t0.elapsed().as_secs_f64();
    let terms: Vec<String> = report
        .terms
        .iter()
        .map(|t| format!("{} {:.1e} ({}/{} skipped)", t.term.name(), t.max_rel_error, t.skipped, t.probes))
        .collect();
    check(
        report.passed() && secs < 60.0,
        format!("{} (< 1e-4), {secs:.1} s (< 60 s)", terms.join(", ")),
    )
}

// ---------------------------------------------------------------- AC4

fn target_distance(target: &ParamSet, online: &ParamSet) -> f64 {
    target
        .iter()
        .map(|p| {
            let q = online.get(&p.name).expect("target names exist online");
            p.data.iter().zip(&q.data).map(|(a, b)| (a - b) * (a - b)).sum::<f64>()
        })
        .sum::<f64>()
        .sqrt()
}

fn ac4() -> Outcome {
    let mut problems = Vec::new();
    for (k_total, base) in [(1u64, 0.5), (300, 0.999), (1000, 0.9996), (17, 0.0)] {
        let g0 = gamma_schedule(0, k_total, base).unwrap();
        let gk = gamma_schedule(k_total, k_total, base).unwrap();
        if g0 != base || gk != 1.0 {
            problems.push(format!("K={k_total}: endpoints {g0}, {gk}"));
        }
        let mut prev = g0;
        for k in 1..=k_total {
            let g = gamma_schedule(k, k_total, base).unwrap();
            if g < prev {
                problems.push(format!("K={k_total}: decreases at {k}"));
                break;
            }
            prev = g;
        }
    }
    let online = init_online(10, &mut SeedStream::new(40));
    let mut target = init_online(10, &mut SeedStream::new(41)).subset(Role::has_target);
    let mut worst = 0.0f64;
    for gamma in [0.999, 0.9, 0.5, 0.0] {
        for _ in 0..10 {
            let before = target_distance(&target, &online);
            target = ema_update(&target, &online, gamma).unwrap();
            let after = target_distance(&target, &online);
            if before > 1e-200 {
                worst = worst.max((after - gamma * before).abs() / before.max(1.0));
            }
        }
    }
    if worst >= 1e-12 {
        problems.push(format!("contraction off by {worst:.2e}"));
    }
    check(
        problems.is_empty(),
        if problems.is_empty() {
            format!("endpoints exact, monotone, contraction off by at most {worst:.1e} (< 1e-12)")
        } else {
            problems.join("; ")
        },
    )
}

// ---------------------------------------------------------------- AC5

fn revoxelize_oracle(points: &[[f64; 3]], grid: &VoxelGridConfig) -> Vec<Coord> {
    let mut out: Vec<Coord> = points
        .iter()
        .map(|p| {
            let f = |a: usize| ((p[a] - grid.range_min[a]) / grid.voxel_size[a]).floor() as i32;
            [f(0), f(1), f(2)]
        })
        .collect();
    out.sort_unstable();
    out.dedup();
    out
}

fn ac5() -> Outcome {
    let grid = VoxelGridConfig {
        range_min: [-4.0, -3.0, -1.0],
        range_max: [4.0, 3.0, 1.0],
        voxel_size: [0.5, 0.5, 0.5],
    };
    let dims = grid.dims();
    let mut rng = SeedStream::new(5);
    let mut problems = Vec::new();
    for fixture in 0..50 {
        // one point per voxel, never in the last x column
        let mut coords: Vec<Coord> = (0..40)
            .map(|_| {
                [
                    rng.gen_range(0..dims[0] as i32 - 1),
                    rng.gen_range(0..dims[1] as i32),
                    rng.gen_range(0..dims[2] as i32),
                ]
            })
            .collect();
        coords.sort_unstable();
        coords.dedup();
        let points: Vec<[f64; 3]> = coords
            .iter()
            .map(|c| {
                let mut p = grid.center(*c);
                for a in 0..3 {
                    p[a] += rng.gen_range(-0.2..0.2) * grid.voxel_size[a];
                }
                p
            })
            .collect();
        let cloud = PointCloud::from_points(points.clone()).unwrap();
        let (vox, map) = voxelize(&cloud, &grid);
        let feats: Vec<f64> = (0..vox.len() * 3).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let h = SparseVoxelTensor::new(grid, 3, vox.coords().to_vec(), feats).unwrap();

        let same = warp_features(&h, &cloud, &SceneFlow::zeros(cloud.len()), &map).unwrap();
        if same != h {
            problems.push(format!("fixture {fixture}: zero flow changed the tensor"));
        }

        let pitch = SceneFlow::new(vec![[grid.voxel_size[0], 0.0, 0.0]; cloud.len()]).unwrap();
        let moved = warp_features(&h, &cloud, &pitch, &map).unwrap();
        let shifted: Vec<Coord> = h.coords().iter().map(|c| [c[0] + 1, c[1], c[2]]).collect();
        let warped_pts: Vec<[f64; 3]> = points.iter().map(|p| [p[0] + grid.voxel_size[0], p[1], p[2]]).collect();
        if moved.coords() != shifted.as_slice() || moved.coords() != revoxelize_oracle(&warped_pts, &grid).as_slice() {
            problems.push(format!("fixture {fixture}: unit-pitch coords differ"));
        }
        if moved.features() != h.features() {
            problems.push(format!("fixture {fixture}: unit-pitch features differ"));
        }
    }
    check(
        problems.is_empty(),
        if problems.is_empty() {
            "50 fixtures: zero flow exact, unit pitch shifts by (1,0,0) and matches re-voxelization".into()
        } else {
            problems.join("; ")
        },
    )
}

// ---------------------------------------------------------------- AC6

fn ac6() -> Outcome {
    let grid = VoxelGridConfig::synthetic();
    let dims = grid.dims();
    let mut rng = SeedStream::new(6);
    let mut failures = Vec::new();
    for fixture in 0..50 {
        let params = init_online(10, &mut rng.fork(fixture));
        let n = rng.gen_range(1..200);
        // clustered so that neighbourhoods are populated
        let centre = [rng.gen_range(10..54), rng.gen_range(10..54), rng.gen_range(4..12)];
        let mut coords: Vec<Coord> = (0..n)
            .map(|_| {
                [
                    centre[0] + rng.gen_range(-6..=6),
                    centre[1] + rng.gen_range(-6..=6),
                    centre[2] + rng.gen_range(-3..=3),
                ]
            })
            .collect();
        coords.sort_unstable();
        coords.dedup();
        let feats: Vec<f64> = (0..coords.len() * 4).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let t = SparseVoxelTensor::new(grid, 4, coords, feats).unwrap();
        let shift = [rng.gen_range(-4..=4), rng.gen_range(-4..=4), rng.gen_range(-1..=1)];
        assert!(dims[2] >= 16);
        let a = encoder_forward(&params, &t.shifted(shift).unwrap()).unwrap();
        let b = encoder_forward(&params, &t).unwrap().shifted(shift).unwrap();
        if a != b {
            failures.push(fixture);
        }
    }
    check(
        failures.is_empty(),
        if failures.is_empty() {
            "50 fixtures, shifted outputs bit-identical".into()
        } else {
            format!("fixtures {failures:?} differ")
        },
    )
}

// ---------------------------------------------------------------- AC7

fn ac7() -> Outcome {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let (train, held, run) = (dir.path().join("train"), dir.path().join("held"), dir.path().join("run"));
    cmd_gen_data(None, &train, Some(7), 200).map_err(|e| e.to_string())?;
    cmd_gen_data(None, &held, Some(1007), 20).map_err(|e| e.to_string())?;

    let pool = rayon::ThreadPoolBuilder::new().num_threads(4).build().map_err(|e| e.to_string())?;
    let t0 = Instant::now();
    let summary = pool
        .install(|| cmd_pretrain(None, Some(&train), &run, Some(300), Some(7)))
        .map_err(|e| e.to_string())?;
    let train_time = t0.elapsed();
    let report = pool
        .install(|| cmd_evaluate(&run.join("final.ckpt"), &held, &run.join("report.json"), None))
        .map_err(|e| e.to_string())?;
    let elapsed = t0.elapsed();

    let m = &summary.metrics;
    if m.len() < 20 {
        return Err(format!("only {} logged steps", m.len()));
    }
    let mean = |rows: &[essl::train::StepMetrics]| rows.iter().map(|r| r.total).sum::<f64>() / rows.len() as f64;
    let (first, last) = (mean(&m[..10]), mean(&m[m.len() - 10..]));
    let ratio = last / first;
    let cores = std::thread::available_parallelism().map(|n| n.get()).unwrap_or(1);
    let detail = format!(
        "total loss {first:.3} -> {last:.3} (ratio {ratio:.3}, need <= 0.70); held-out rotation accuracy {:.3} (need >= 0.30); \
         {:.0} s train + {:.0} s eval (need < 600 s) on {cores} available core(s); {} steps skipped",
        report.rotation_accuracy,
        train_time.as_secs_f64(),
        (elapsed - train_time).as_secs_f64(),
        summary.skipped.len()
    );
    check(
        ratio <= 0.70 && report.rotation_accuracy >= 0.3 && elapsed < Duration::from_secs(600),
        detail,
    )
}

// ---------------------------------------------------------------- AC8

fn role_touched(g: &ParamSet, role: Role) -> bool {
    g.iter().filter(|p| p.role == role).any(|p| p.data.iter().any(|&v| v != 0.0))
}

fn ac8() -> Outcome {
    let synth = SynthConfig {
        points_per_ground: 600,
        points_per_wall: 200,
        points_per_object: 100,
        ..Default::default()
    };
    let batch: Vec<ScenePair> = (0..2).map(|i| gen_pair(&synth, &mut SeedStream::new(80 + i)).unwrap()).collect();
    let base = TrainConfig {
        points_per_view: 256,
        ..Default::default()
    };
    let run = |cfg: &TrainConfig| online_gradients(cfg, &batch, &TrainState::init(cfg), 0).map_err(|e| e.to_string());

    let (g_sp, r_sp) = run(&TrainConfig { temporal: false, ..base.clone() })?;
    let (g_tm, r_tm) = run(&TrainConfig { spatial: false, ..base.clone() })?;
    let (g_all, r_all) = run(&base)?;
    let mut problems = Vec::new();
    if r_sp.l_flow != 0.0 || role_touched(&g_sp, Role::Predictor) {
        problems.push(format!("temporal off: l_flow {}, predictor touched {}", r_sp.l_flow, role_touched(&g_sp, Role::Predictor)));
    }
    if r_tm.l_pnce != 0.0 || r_tm.l_ce != 0.0 || role_touched(&g_tm, Role::Classifier) {
        problems.push(format!(
            "spatial off: l_pnce {}, l_ce {}, classifier touched {}",
            r_tm.l_pnce,
            r_tm.l_ce,
            role_touched(&g_tm, Role::Classifier)
        ));
    }
    if r_all.l_flow == 0.0 || r_all.l_pnce == 0.0 || !role_touched(&g_all, Role::Predictor) || !role_touched(&g_all, Role::Classifier) {
        problems.push("both on: some head received no gradient".into());
    }
    check(
        problems.is_empty(),
        if problems.is_empty() {
            "temporal off zeroes l_flow and predictor gradient; spatial off zeroes l_pnce, l_ce and classifier gradient".into()
        } else {
            problems.join("; ")
        },
    )
}

// ---------------------------------------------------------------- AC9

fn ac9() -> Outcome {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let data = dir.path().join("data");
    let cfg_path = dir.path().join("cfg.json");
    let mut cfg = RunConfig::default();
    cfg.train.points_per_view = 512;
    cfg.train.checkpoint_every = 5;
    std::fs::write(&cfg_path, serde_json::to_string(&cfg).unwrap()).map_err(|e| e.to_string())?;
    cmd_gen_data(None, &data, Some(9), 6).map_err(|e| e.to_string())?;

    let run = |out: &Path, threads: usize| -> Result<Vec<u8>, String> {
        let pool = rayon::ThreadPoolBuilder::new().num_threads(threads).build().map_err(|e| e.to_string())?;
        pool.install(|| cmd_pretrain(Some(&cfg_path), Some(&data), out, Some(12), Some(3)))
            .map_err(|e| e.to_string())?;
        std::fs::read(out.join("metrics.csv")).map_err(|e| e.to_string())
    };
    let a = run(&dir.path().join("a"), 1)?;
    let b = run(&dir.path().join("b"), 4)?;
    check(
        a == b && !a.is_empty(),
        format!("12-step runs on 1 and 4 threads: metrics.csv {} bytes, identical: {}", a.len(), a == b),
    )
}

// ----------------------------------------------------------------

fn main() {
    let criteria: [(&str, fn() -> Outcome); 9] = [
        ("AC1", ac1),
        ("AC2", ac2),
        ("AC3", ac3),
        ("AC4", ac4),
        ("AC5", ac5),
        ("AC6", ac6),
        ("AC7", ac7),
        ("AC8", ac8),
        ("AC9", ac9),
    ];
    let filters: Vec<String> = std::env::args().skip(1).filter(|a| !a.starts_with('-')).collect();
    let mut failed = 0;
    for (name, f) in criteria {
        if !filters.is_empty() && !filters.iter().any(|x| x == name) {
            continue;
        }
        let t0 = Instant::now();
        let outcome = std::panic::catch_unwind(f).unwrap_or_else(|_| Err("panicked".into()));
        let secs = t0.elapsed().as_secs_f64();
        match outcome {
            Ok(d) => println!("{name} PASS [{secs:.1} s] {d}"),
            Err(d) => {
                failed += 1;
                println!("{name} FAIL [{secs:.1} s] {d}");
            }
        }
    }
    if failed > 0 {
        std::process::exit(1);
    }
}
