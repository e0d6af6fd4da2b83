use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn essl(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_essl"))
        .args(args)
        .env("RUST_LOG", "warn")
        .output()
        .expect("binary runs")
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn small_config(dir: &Path) -> std::path::PathBuf {
    let path = dir.join("small.json");
    fs::write(&path, r#"{"train": {"points_per_view": 256, "checkpoint_every": 0}}"#).unwrap();
    path
}

#[test]
fn gen_data_zero_pairs_writes_empty_manifest() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("d");
    let o = essl(&["gen-data", "--out", s(&out), "--pairs", "0"]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let m: serde_json::Value = serde_json::from_str(&fs::read_to_string(out.join("manifest.json")).unwrap()).unwrap();
    assert_eq!(m["sequences"].as_array().unwrap().len(), 0);
}

#[test]
fn gen_data_is_deterministic() {
    let dir = tempfile::tempdir().unwrap();
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    for out in [&a, &b] {
        assert!(essl(&["gen-data", "--out", s(out), "--pairs", "1", "--seed", "4"]).status.success());
    }
    for name in ["pair_000000_prev.bin", "pair_000000_curr.bin", "pair_000000.flow.bin", "manifest.json"] {
        assert_eq!(fs::read(a.join(name)).unwrap(), fs::read(b.join(name)).unwrap(), "{name}");
    }
}

#[test]
fn pretrain_one_step_then_evaluate_twice() {
    let dir = tempfile::tempdir().unwrap();
    let (data, run) = (dir.path().join("data"), dir.path().join("run"));
    let cfg = small_config(dir.path());
    assert!(essl(&["gen-data", "--out", s(&data), "--pairs", "2"]).status.success());
    let o = essl(&["pretrain", "--config", s(&cfg), "--data", s(&data), "--out", s(&run), "--steps", "1"]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let csv = fs::read_to_string(run.join("metrics.csv")).unwrap();
    assert_eq!(csv.lines().count(), 2, "{csv}");
    assert!(csv.starts_with("step,lr,gamma,l_pnce,l_ce,l_flow,total\n"));
    assert!(run.join("final.ckpt").exists() && run.join("config.json").exists());

    let mut reports = Vec::new();
    for name in ["r1.json", "r2.json"] {
        let path = dir.path().join(name);
        let o = essl(&["evaluate", "--ckpt", s(&run.join("final.ckpt")), "--data", s(&data), "--out", s(&path)]);
        assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
        reports.push(fs::read(path).unwrap());
    }
    assert_eq!(reports[0], reports[1]);
    let r: serde_json::Value = serde_json::from_slice(&reports[0]).unwrap();
    assert_eq!(r["pair_count"], 2);
}

#[test]
fn unknown_config_key_exits_1() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("bad.json");
    fs::write(&cfg, r#"{"train": {"learning_rate": 0.1}}"#).unwrap();
    let o = essl(&["gen-data", "--config", s(&cfg), "--out", s(&dir.path().join("d")), "--pairs", "1"]);
    assert_eq!(o.status.code(), Some(1));
    assert!(!dir.path().join("d").exists());
}

#[test]
fn missing_dataset_exits_2() {
    let dir = tempfile::tempdir().unwrap();
    let o = essl(&["pretrain", "--data", s(&dir.path().join("nope")), "--out", s(&dir.path().join("r")), "--steps", "1"]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn corrupt_checkpoint_exits_2() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("data");
    assert!(essl(&["gen-data", "--out", s(&data), "--pairs", "1"]).status.success());
    let ckpt = dir.path().join("x.ckpt");
    fs::write(&ckpt, b"not a checkpoint").unwrap();
    let o = essl(&["evaluate", "--ckpt", s(&ckpt), "--data", s(&data), "--out", s(&dir.path().join("r.json"))]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn gradcheck_passes_and_detects_corruption() {
    let ok = essl(&["gradcheck"]);
    assert_eq!(ok.status.code(), Some(0), "{}", String::from_utf8_lossy(&ok.stdout));
    let stdout = String::from_utf8_lossy(&ok.stdout);
    for term in ["l_pnce", "l_ce", "l_flow", "total"] {
        assert!(stdout.contains(term), "{stdout}");
    }
    assert_eq!(essl(&["gradcheck", "--corrupt-gradient"]).status.code(), Some(1));
}
