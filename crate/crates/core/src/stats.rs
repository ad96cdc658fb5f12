//! Summary statistics for Monte Carlo output.

use serde::Serialize;

/// Two-sided 95% standard normal quantile.
pub const Z95: f64 = 1.959_963_984_540_054;

/// Neumaier-compensated sum. Summation happens in slice order, so results do
/// not depend on how the values were produced in parallel.
pub fn compensated_sum(values: impl IntoIterator<Item = f64>) -> f64 {
    let mut sum = 0.0f64;
    let mut comp = 0.0f64;
    for v in values {
        let t = sum + v;
        if sum.abs() >= v.abs() {
            comp += (sum - t) + v;
        } else {
            comp += (v - t) + sum;
        }
        sum = t;
    }
    sum + comp
}

/// Sample mean and its standard error.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct MeanEstimate {
    pub mean: f64,
    pub se: f64,
    pub count: usize,
}

impl MeanEstimate {
    pub fn upper(&self, z: f64) -> f64 {
        self.mean + z * self.se
    }

    pub fn lower(&self, z: f64) -> f64 {
        self.mean - z * self.se
    }
}

pub fn mean_se(values: &[f64]) -> MeanEstimate {
    let count = values.len();
    if count == 0 {
        return MeanEstimate { mean: 0.0, se: 0.0, count };
    }
    let mean = compensated_sum(values.iter().copied()) / count as f64;
    if count == 1 {
        return MeanEstimate { mean, se: 0.0, count };
    }
    let ss = compensated_sum(values.iter().map(|v| (v - mean) * (v - mean)));
    let var = ss / (count - 1) as f64;
    MeanEstimate { mean, se: (var / count as f64).sqrt(), count }
}

/// Empirical quantile with a distribution-free confidence interval.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct QuantileEstimate {
    pub level: f64,
    pub estimate: f64,
    pub lower: f64,
    pub upper: f64,
}

impl QuantileEstimate {
    pub fn scaled(self, factor: f64) -> Self {
        Self {
            level: self.level,
            estimate: self.estimate * factor,
            lower: self.lower * factor,
            upper: self.upper * factor,
        }
    }
}

/// Quantile `inf{x : F_n(x) >= p}` of `samples`, i.e. the `ceil(n p)`-th order
/// statistic, with a 95% order-statistic interval from the normal
/// approximation to the binomial count below the true quantile.
pub fn quantile(samples: &[f64], p: f64) -> QuantileEstimate {
    assert!(!samples.is_empty(), "quantile of an empty sample");
    assert!(p > 0.0 && p <= 1.0, "quantile level must lie in (0, 1]");
    let mut sorted = samples.to_vec();
    sorted.sort_by(f64::total_cmp);
    quantile_sorted(&sorted, p)
}

pub fn quantile_sorted(sorted: &[f64], p: f64) -> QuantileEstimate {
    let n = sorted.len();
    let nf = n as f64;
    let rank = ((nf * p).ceil() as usize).clamp(1, n);
    let spread = Z95 * (nf * p * (1.0 - p)).sqrt();
    let lo = ((nf * p - spread).floor() as isize).clamp(1, n as isize) as usize;
    let hi = ((nf * p + spread).ceil() as usize + 1).clamp(1, n);
    QuantileEstimate { level: p, estimate: sorted[rank - 1], lower: sorted[lo - 1], upper: sorted[hi - 1] }
}

/// Two-sample Kolmogorov-Smirnov statistic `sup_x |F_a(x) - F_b(x)|`.
pub fn ks_statistic(a: &[f64], b: &[f64]) -> f64 {
    assert!(!a.is_empty() && !b.is_empty(), "KS statistic of an empty sample");
    let mut a = a.to_vec();
    let mut b = b.to_vec();
    a.sort_by(f64::total_cmp);
    b.sort_by(f64::total_cmp);
    let (na, nb) = (a.len() as f64, b.len() as f64);
    let (mut i, mut j) = (0usize, 0usize);
    let mut best = 0.0f64;
    while i < a.len() && j < b.len() {
        let x = if a[i] <= b[j] { a[i] } else { b[j] };
        while i < a.len() && a[i] <= x {
            i += 1;
        }
        while j < b.len() && b[j] <= x {
            j += 1;
        }
        best = best.max((i as f64 / na - j as f64 / nb).abs());
    }
    best
}

/// Proportion estimate with standard error and Wilson 95% interval.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Proportion {
    pub successes: usize,
    pub trials: usize,
    pub estimate: f64,
    pub se: f64,
    pub lower: f64,
    pub upper: f64,
}

pub fn proportion(successes: usize, trials: usize) -> Proportion {
    if trials == 0 {
        return Proportion { successes, trials, estimate: 0.0, se: 0.0, lower: 0.0, upper: 1.0 };
    }
    let n = trials as f64;
    let p = successes as f64 / n;
    let se = (p * (1.0 - p) / n).sqrt();
    let z2 = Z95 * Z95;
    let centre = (p + z2 / (2.0 * n)) / (1.0 + z2 / n);
    let half = Z95 * (p * (1.0 - p) / n + z2 / (4.0 * n * n)).sqrt() / (1.0 + z2 / n);
    Proportion {
        successes,
        trials,
        estimate: p,
        se,
        lower: if successes == 0 { 0.0 } else { (centre - half).max(0.0) },
        upper: if successes == trials { 1.0 } else { (centre + half).min(1.0) },
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand_distr::{Distribution, Exp};

    #[test]
    fn exponential_quantile_is_covered() {
        let mut rng = crate::seeds::trial_rng(11, 0);
        let law = Exp::new(2.0).unwrap();
        let draws: Vec<f64> = (0..100_000).map(|_| law.sample(&mut rng)).collect();
        let q = quantile(&draws, 0.9);
        let exact = 10f64.ln() / 2.0;
        assert!(q.lower <= exact && exact <= q.upper, "{q:?} vs {exact}");
    }

    #[test]
    fn compensated_sum_recovers_small_terms() {
        let values = [1e16, 1.0, -1e16, 1.0];
        assert_eq!(compensated_sum(values), 2.0);
    }

    #[test]
    fn quantile_picks_ceiling_order_statistic() {
        let xs: Vec<f64> = (1..=10).map(f64::from).collect();
        assert_eq!(quantile(&xs, 0.5).estimate, 5.0);
        assert_eq!(quantile(&xs, 0.51).estimate, 6.0);
        assert_eq!(quantile(&xs, 1.0).estimate, 10.0);
        let q = quantile(&xs, 0.9);
        assert!(q.lower <= q.estimate && q.estimate <= q.upper);
    }

    #[test]
    fn ks_of_identical_and_disjoint_samples() {
        let a = [1.0, 2.0, 3.0];
        assert_eq!(ks_statistic(&a, &a), 0.0);
        assert_eq!(ks_statistic(&a, &[10.0, 11.0]), 1.0);
        assert!((ks_statistic(&[1.0, 2.0], &[1.5, 2.5]) - 0.5).abs() < 1e-15);
    }

    #[test]
    fn wilson_interval_contains_estimate() {
        let p = proportion(3, 100);
        assert!(p.lower < 0.03 && 0.03 < p.upper);
        let z = proportion(0, 100);
        assert_eq!(z.lower, 0.0);
        assert!(z.upper > 0.0);
    }

    #[test]
    fn mean_se_of_constant_is_exact() {
        let m = mean_se(&[2.0; 10]);
        assert_eq!(m.mean, 2.0);
        assert_eq!(m.se, 0.0);
    }
}
