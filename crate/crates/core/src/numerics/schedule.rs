use std::sync::atomic::{AtomicBool, Ordering};

static OVERRUN_LOGGED: AtomicBool = AtomicBool::new(false);

/// Linear warm-up from 0 to `lr_max`, then cosine decay to `lr_min` at
/// `total_steps`. Steps past the end are clamped to `lr_min`.
pub fn cosine_lr(step: usize, warmup_steps: usize, lr_min: f64, lr_max: f64, total_steps: usize) -> f64 {
    if step > total_steps {
        if !OVERRUN_LOGGED.swap(true, Ordering::Relaxed) {
            log::warn!("lr schedule step {step} past total {total_steps}; clamping to lr_min");
        }
        return lr_min;
    }
    if step < warmup_steps {
        return lr_max * step as f64 / warmup_steps as f64;
    }
    let span = total_steps.saturating_sub(warmup_steps);
    if span == 0 {
        return lr_max;
    }
    let progress = (step - warmup_steps) as f64 / span as f64;
    lr_min + (lr_max - lr_min) * 0.5 * (1.0 + (std::f64::consts::PI * progress).cos())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn endpoints_and_midpoint() {
        let (w, total, lo, hi) = (40, 200, 2e-6, 2e-4);
        assert_eq!(cosine_lr(0, w, lo, hi, total), 0.0);
        assert!((cosine_lr(w, w, lo, hi, total) - hi).abs() < 1e-15);
        assert!((cosine_lr(total, w, lo, hi, total) - lo).abs() < 1e-15);
        // halfway through the decay: cos(π/2) = 0
        let mid = cosine_lr((w + total) / 2, w, lo, hi, total);
        assert!((mid - (lo + (hi - lo) * 0.5)).abs() < 1e-15);
        assert!((cosine_lr(w / 2, w, lo, hi, total) - hi / 2.0).abs() < 1e-15);
    }

    #[test]
    fn overrun_clamps_to_minimum() {
        assert_eq!(cosine_lr(501, 10, 1e-5, 1e-3, 500), 1e-5);
    }
}
