use serde::{Deserialize, Serialize};

/// Two-sided 95% normal quantile.
pub const WILSON_Z: f64 = 1.959963984540054;

/// Wilson score interval for `successes` out of `trials`. With no trials
/// the interval is the whole of `[0, 1]`.
pub fn wilson_interval(successes: u64, trials: u64, z: f64) -> (f64, f64) {
    if trials == 0 {
        return (0.0, 1.0);
    }
    let n = trials as f64;
    let p = successes as f64 / n;
    let z2 = z * z;
    let denom = 1.0 + z2 / n;
    let centre = (p + z2 / (2.0 * n)) / denom;
    let half = z * (p * (1.0 - p) / n + z2 / (4.0 * n * n)).sqrt() / denom;
    ((centre - half).max(0.0).min(p), (centre + half).min(1.0).max(p))
}

/// A proportion with its 95% Wilson interval.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Rate {
    pub successes: u64,
    pub trials: u64,
    pub estimate: f64,
    pub ci_low: f64,
    pub ci_high: f64,
}

impl Rate {
    pub fn new(successes: u64, trials: u64) -> Self {
        let estimate = if trials == 0 {
            0.0
        } else {
            successes as f64 / trials as f64
        };
        let (ci_low, ci_high) = wilson_interval(successes, trials, WILSON_Z);
        Rate {
            successes,
            trials,
            estimate,
            ci_low,
            ci_high,
        }
    }

    /// A mean reported without an interval of its own.
    pub(crate) fn point(estimate: f64, trials: u64) -> Self {
        Rate {
            successes: 0,
            trials,
            estimate,
            ci_low: estimate,
            ci_high: estimate,
        }
    }

    pub fn contains(&self, p: f64) -> bool {
        (self.ci_low..=self.ci_high).contains(&p)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn known_interval() {
        // 50 of 100: 0.5 ± 0.0962 (rounded).
        let (lo, hi) = wilson_interval(50, 100, WILSON_Z);
        assert!((lo - 0.40383).abs() < 1e-5, "{lo}");
        assert!((hi - 0.59617).abs() < 1e-5, "{hi}");
        let (lo, hi) = wilson_interval(0, 10, WILSON_Z);
        assert_eq!(lo, 0.0);
        assert!((hi - 0.27753).abs() < 1e-5, "{hi}");
    }

    proptest! {
        #[test]
        fn interval_brackets_estimate(trials in 1u64..10_000, frac in 0.0f64..=1.0) {
            let k = ((trials as f64) * frac).floor() as u64;
            let r = Rate::new(k, trials);
            prop_assert!(0.0 <= r.ci_low && r.ci_low <= r.estimate);
            prop_assert!(r.estimate <= r.ci_high && r.ci_high <= 1.0);
        }
    }
}
