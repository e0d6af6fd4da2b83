use std::f64::consts::PI;

/// Fraction of steps spent in linear warmup.
pub const WARMUP_FRACTION: f64 = 0.1;
/// Warmup starts at `max_lr / WARMUP_DIVISOR`.
pub const WARMUP_DIVISOR: f64 = 25.0;
/// Cosine decay ends at `max_lr / FLOOR_DIVISOR`.
pub const FLOOR_DIVISOR: f64 = 100.0;

/// One-cycle learning rate: linear warmup over the first 10% of steps, then
/// cosine decay to the floor at `k = K`. Steps past `K` clamp to the floor.
pub fn lr_schedule(step: u64, total: u64, max_lr: f64) -> f64 {
    let start = max_lr / WARMUP_DIVISOR;
    let floor = max_lr / FLOOR_DIVISOR;
    let k = step.min(total) as f64;
    let warm = WARMUP_FRACTION * total as f64;
    if k <= warm && warm > 0.0 {
        let t = k / warm;
        (1.0 - t) * start + t * max_lr
    } else {
        let progress = (k - warm) / (total as f64 - warm);
        floor + (max_lr - floor) * (1.0 + (PI * progress).cos()) / 2.0
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn endpoints() {
        assert_eq!(lr_schedule(0, 100, 1e-4), 1e-4 / 25.0);
        assert_eq!(lr_schedule(10, 100, 1e-4), 1e-4);
        assert_eq!(lr_schedule(100, 100, 1e-4), 1e-4 / 100.0);
    }

    #[test]
    fn continuous_at_junction() {
        // evaluate both branches at the junction of a schedule whose warmup ends off-grid
        let (total, max_lr) = (333u64, 1e-4);
        let warm = WARMUP_FRACTION * total as f64;
        let start = max_lr / WARMUP_DIVISOR;
        let floor = max_lr / FLOOR_DIVISOR;
        let warm_branch = (1.0 - 1.0) * start + 1.0 * max_lr;
        let decay_branch = floor + (max_lr - floor) * (1.0 + (PI * (warm - warm) / (total as f64 - warm)).cos()) / 2.0;
        assert!((warm_branch - decay_branch).abs() < 1e-12);
        let k = warm.floor() as u64;
        assert!((lr_schedule(k, total, max_lr) - lr_schedule(k + 1, total, max_lr)).abs() < 1e-6);
    }

    #[test]
    fn single_step_schedule() {
        assert_eq!(lr_schedule(1, 1, 1.0), 0.01);
        assert!(lr_schedule(0, 1, 1.0).is_finite());
    }
}
