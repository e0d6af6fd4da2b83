//! Writes a small synthetic dataset to a temporary directory and reads it back.

use essl::data::{write_synthetic_dataset, Dataset, SynthConfig, MANIFEST_FILE};

fn main() -> essl::Result<()> {
    let dir = std::env::temp_dir().join("essl_synthetic_example");
    let _ = std::fs::remove_dir_all(&dir);
    let manifest = write_synthetic_dataset(&dir, &SynthConfig::default(), 5, 3)?;
    println!("wrote {} pairs and {} to {}", manifest.pair_count(), MANIFEST_FILE, dir.display());

    let ds = Dataset::open(&dir, None)?;
    for i in 0..ds.len() {
        let p = ds.load(i)?;
        let d = p.flow.displacements();
        let mean_dx = d.iter().map(|v| v[0]).sum::<f64>() / d.len() as f64;
        let max_step = d.iter().map(|v| v.iter().map(|x| x * x).sum::<f64>().sqrt()).fold(0.0, f64::max);
        println!(
            "pair {i}: prev {} pts, curr {} pts, mean flow x {mean_dx:+.3} m, largest step {max_step:.3} m",
            p.prev.len(),
            p.curr.len()
        );
    }
    std::fs::remove_dir_all(&dir).ok();
    Ok(())
}
