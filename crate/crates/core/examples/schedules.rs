//! Learning-rate and target-decay schedules over a run, plus one EMA update.

use essl::net::model::{init_online, init_target};
use essl::net::{ema_update, gamma_schedule};
use essl::rng::SeedStream;
use essl::train::lr_schedule;

fn main() -> essl::Result<()> {
    let total = 300;
    println!("{:>5} {:>12} {:>10}", "step", "lr", "gamma");
    for k in [0, 15, 30, 75, 150, 225, 299, 300] {
        println!("{k:>5} {:>12.4e} {:>10.6}", lr_schedule(k, total, 1e-4), gamma_schedule(k, total, 0.999)?);
    }

    let mut online = init_online(10, &mut SeedStream::new(1));
    let target = init_target(&online);
    for p in online.iter_mut() {
        p.data.iter_mut().for_each(|v| *v += 1.0);
    }
    let updated = ema_update(&target, &online, 0.9)?;
    let moved = updated.max_abs_diff(&target);
    println!("after one update with gamma 0.9 every target entry moved by {moved:.3}");
    Ok(())
}
