//! Small statistical accumulators shared by the estimators.

use serde::Serialize;

/// Welford accumulator for mean and variance; mergeable so parallel
/// tasks can be combined in a fixed order.
#[derive(Debug, Clone, Copy, Default, Serialize)]
pub struct RunningMoments {
    n: u64,
    mean: f64,
    m2: f64,
}

impl RunningMoments {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push(&mut self, x: f64) {
        self.n += 1;
        let delta = x - self.mean;
        self.mean += delta / self.n as f64;
        self.m2 += delta * (x - self.mean);
    }

    pub fn merge(&mut self, other: &RunningMoments) {
        if other.n == 0 {
            return;
        }
        if self.n == 0 {
            *self = *other;
            return;
        }
        let n = (self.n + other.n) as f64;
        let delta = other.mean - self.mean;
        self.m2 += other.m2 + delta * delta * self.n as f64 * other.n as f64 / n;
        self.mean += delta * other.n as f64 / n;
        self.n += other.n;
    }

    pub fn count(&self) -> u64 {
        self.n
    }

    pub fn mean(&self) -> f64 {
        self.mean
    }

    /// Unbiased sample variance; 0 for fewer than two observations.
    pub fn variance(&self) -> f64 {
        if self.n < 2 {
            0.0
        } else {
            self.m2 / (self.n - 1) as f64
        }
    }

    /// Standard error of the mean.
    pub fn std_error(&self) -> f64 {
        if self.n == 0 {
            0.0
        } else {
            (self.variance() / self.n as f64).sqrt()
        }
    }
}

/// Accumulator for a ratio estimator `E[Y]/E[X]` over i.i.d. pairs,
/// with a delta-method standard error. Mergeable like [`RunningMoments`].
#[derive(Debug, Clone, Copy, Default, Serialize)]
pub struct RatioMoments {
    n: u64,
    mean_x: f64,
    mean_y: f64,
    m2_x: f64,
    m2_y: f64,
    c2_xy: f64,
}

impl RatioMoments {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push(&mut self, y: f64, x: f64) {
        self.n += 1;
        let n = self.n as f64;
        let dx = x - self.mean_x;
        let dy = y - self.mean_y;
        self.mean_x += dx / n;
        self.mean_y += dy / n;
        self.m2_x += dx * (x - self.mean_x);
        self.m2_y += dy * (y - self.mean_y);
        self.c2_xy += dx * (y - self.mean_y);
    }

    pub fn merge(&mut self, other: &RatioMoments) {
        if other.n == 0 {
            return;
        }
        if self.n == 0 {
            *self = *other;
            return;
        }
        let na = self.n as f64;
        let nb = other.n as f64;
        let n = na + nb;
        let dx = other.mean_x - self.mean_x;
        let dy = other.mean_y - self.mean_y;
        self.m2_x += other.m2_x + dx * dx * na * nb / n;
        self.m2_y += other.m2_y + dy * dy * na * nb / n;
        self.c2_xy += other.c2_xy + dx * dy * na * nb / n;
        self.mean_x += dx * nb / n;
        self.mean_y += dy * nb / n;
        self.n += other.n;
    }

    pub fn count(&self) -> u64 {
        self.n
    }

    pub fn mean_num(&self) -> f64 {
        self.mean_y
    }

    pub fn mean_den(&self) -> f64 {
        self.mean_x
    }

    pub fn ratio(&self) -> f64 {
        self.mean_y / self.mean_x
    }

    /// Delta-method standard error of the ratio.
    pub fn ratio_std_error(&self) -> f64 {
        if self.n < 2 || self.mean_x == 0.0 {
            return 0.0;
        }
        let n = self.n as f64;
        let r = self.ratio();
        let var_y = self.m2_y / (n - 1.0);
        let var_x = self.m2_x / (n - 1.0);
        let cov = self.c2_xy / (n - 1.0);
        let v = (var_y - 2.0 * r * cov + r * r * var_x) / (n * self.mean_x * self.mean_x);
        v.max(0.0).sqrt()
    }
}

/// `|a - b| <= k * sqrt(se_a^2 + se_b^2)`; the agreement check used by
/// cross-estimator comparisons.
pub fn agree_within(a: f64, se_a: f64, b: f64, se_b: f64, k: f64) -> bool {
    (a - b).abs() <= k * se_a.hypot(se_b)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn moments_match_direct_formulas() {
        let xs = [1.0, 4.0, 2.0, 8.0, 5.0, 7.0];
        let mut acc = RunningMoments::new();
        for &x in &xs {
            acc.push(x);
        }
        let mean = xs.iter().sum::<f64>() / xs.len() as f64;
        let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (xs.len() - 1) as f64;
        assert_relative_eq!(acc.mean(), mean, max_relative = 1e-14);
        assert_relative_eq!(acc.variance(), var, max_relative = 1e-14);
    }

    #[test]
    fn merge_equals_sequential() {
        let xs: Vec<f64> = (0..100).map(|i| ((i * 37) % 11) as f64).collect();
        let mut whole = RunningMoments::new();
        for &x in &xs {
            whole.push(x);
        }
        let mut left = RunningMoments::new();
        let mut right = RunningMoments::new();
        for &x in &xs[..33] {
            left.push(x);
        }
        for &x in &xs[33..] {
            right.push(x);
        }
        left.merge(&right);
        assert_eq!(left.count(), whole.count());
        assert_relative_eq!(left.mean(), whole.mean(), max_relative = 1e-12);
        assert_relative_eq!(left.variance(), whole.variance(), max_relative = 1e-12);
    }

    #[test]
    fn ratio_merge_equals_sequential() {
        let pairs: Vec<(f64, f64)> = (1..80)
            .map(|i| (((i * 13) % 7) as f64 + 1.0, ((i * 5) % 4) as f64 + 1.0))
            .collect();
        let mut whole = RatioMoments::new();
        let mut a = RatioMoments::new();
        let mut b = RatioMoments::new();
        for (i, &(y, x)) in pairs.iter().enumerate() {
            whole.push(y, x);
            if i % 2 == 0 {
                a.push(y, x)
            } else {
                b.push(y, x)
            }
        }
        a.merge(&b);
        assert_relative_eq!(a.ratio(), whole.ratio(), max_relative = 1e-12);
        assert_relative_eq!(
            a.ratio_std_error(),
            whole.ratio_std_error(),
            max_relative = 1e-10
        );
    }

    #[test]
    fn ratio_se_shrinks_with_sample_size() {
        // y = 3x + noise-ish deterministic wobble
        let mut small = RatioMoments::new();
        let mut large = RatioMoments::new();
        for i in 0..50u64 {
            let x = 1.0 + (i % 5) as f64;
            let y = 3.0 * x + ((i % 3) as f64 - 1.0);
            small.push(y, x);
        }
        for i in 0..5000u64 {
            let x = 1.0 + (i % 5) as f64;
            let y = 3.0 * x + ((i % 3) as f64 - 1.0);
            large.push(y, x);
        }
        assert!(large.ratio_std_error() < small.ratio_std_error());
        assert_relative_eq!(large.ratio(), 3.0, max_relative = 0.02);
    }
}
