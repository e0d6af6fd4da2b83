//! Saves a training state, reloads it and checks the round trip is exact.

use essl::train::{load_checkpoint, save_checkpoint, TrainConfig, TrainState};

fn main() -> essl::Result<()> {
    let state = TrainState::init(&TrainConfig::default());
    let path = std::env::temp_dir().join("essl_example.ckpt");
    save_checkpoint(&state, &path)?;
    let bytes = std::fs::metadata(&path).map(|m| m.len()).unwrap_or(0);
    let back = load_checkpoint(&path)?;
    println!(
        "{} online arrays ({} values), {} target arrays, {bytes} bytes on disk",
        state.online.len(),
        state.online.numel(),
        state.target.len()
    );
    println!("round trip exact: {}", back == state);
    std::fs::remove_file(&path).ok();
    Ok(())
}
