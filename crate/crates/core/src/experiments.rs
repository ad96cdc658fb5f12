//! Monte Carlo experiments: trial batches, consistency curves, the Gaussian
//! limit, quantile checks, bound validity sweeps, the pathwise inequalities
//! and the best-subset-selection study.

use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::bounds::{self, LOptions};
use crate::erm::{collection_stats, fit_from_stats, solve_from_stats};
use crate::error::{Error, Result};
use crate::linalg::{sym_eigen, symmetrize, Matrix};
use crate::localization::{choose_k, ClosedFormComplexity, EDGE_TOL};
use crate::model::{
    subset_collection, FeatureCollection, FeatureIndex, FeatureMap, GaussianDesign, JointDistribution, NoiseLaw,
};
use crate::population::{PopulationProfile, Tolerances};
use crate::processes::ProcessSnapshot;
use crate::seeds::{derive, trial_rng};
use crate::stats::{ks_statistic, mean_se, proportion, quantile, MeanEstimate, Proportion, QuantileEstimate};

/// Two-sample KS tolerance for the distributional checks.
pub const KS_TOL: f64 = 0.05;
/// Relative slack of the pathwise inequalities.
pub const PATHWISE_SLACK: f64 = 1e-8;
/// Absolute rounding floor when comparing an excess risk with a bound.
pub const BOUND_FLOOR: f64 = 1e-20;
/// Eigenvalues of the assembled limit covariance above `-PSD_FLOOR` are clipped
/// to zero.
pub const PSD_FLOOR: f64 = 1e-10;

/// One Monte Carlo trial.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TrialRecord {
    pub trial: u64,
    pub n: usize,
    pub chosen: FeatureIndex,
    pub chosen_optimal: bool,
    pub excess: f64,
    pub oracle_excess: f64,
    pub singular: bool,
    pub oracle_singular: bool,
    /// `sup_{T \ T_*} Delta_n / sqrt(n)`, zero when `T = T_*`.
    pub sup_delta_scaled: f64,
    /// `sup_T Lambda_n / sqrt(n)`.
    pub sup_lambda_scaled: f64,
    /// `sup_T lambda_max(Sigma^{-1/2} Sigma_n Sigma^{-1/2} - I)`.
    pub upper_excursion: f64,
    /// Both scaled suprema below one.
    pub event: bool,
    /// `G_n^2` at the chosen index.
    pub g2_chosen: f64,
    pub snapshot: ProcessSnapshot,
}

impl TrialRecord {
    pub fn scaled_excess(&self) -> f64 {
        self.n as f64 * self.excess
    }

    pub fn scaled_oracle_excess(&self) -> f64 {
        self.n as f64 * self.oracle_excess
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TrialBatch {
    pub n: usize,
    pub master_seed: u64,
    pub records: Vec<TrialRecord>,
    /// SHA-256 over the seed, size and every record's numeric content.
    pub hash: String,
}

impl TrialBatch {
    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn scaled_excess(&self) -> Vec<f64> {
        self.records.iter().map(TrialRecord::scaled_excess).collect()
    }

    pub fn scaled_oracle_excess(&self) -> Vec<f64> {
        self.records.iter().map(TrialRecord::scaled_oracle_excess).collect()
    }
}

fn batch_hash(n: usize, seed: u64, records: &[TrialRecord]) -> String {
    let mut h = Sha256::new();
    h.update((n as u64).to_le_bytes());
    h.update(seed.to_le_bytes());
    for r in records {
        h.update(r.trial.to_le_bytes());
        h.update((r.chosen.0 as u64).to_le_bytes());
        h.update([r.singular as u8, r.oracle_singular as u8, r.event as u8]);
        for v in [r.excess, r.oracle_excess, r.sup_delta_scaled, r.sup_lambda_scaled, r.upper_excursion, r.g2_chosen] {
            h.update(v.to_bits().to_le_bytes());
        }
    }
    hex::encode(h.finalize())
}

fn one_trial(
    law: &JointDistribution,
    collection: &FeatureCollection,
    profile: &PopulationProfile,
    n: usize,
    seed: u64,
    trial: u64,
) -> Result<TrialRecord> {
    let data = law.sample(n, seed, trial)?;
    let stats = collection_stats(&data, collection)?;
    let sol = solve_from_stats(&stats, Some(profile))?;
    let oracle = fit_from_stats(&stats[profile.reference().0], Some(profile))?;
    let snapshot = ProcessSnapshot::from_stats(&stats, profile)?;
    let root_n = (n as f64).sqrt();
    let a = snapshot.sup_delta / root_n;
    let b = snapshot.sup_lambda / root_n;
    let c = snapshot.sup_lambda_upper / root_n;
    let g = snapshot.per_index[sol.chosen.0].g;
    Ok(TrialRecord {
        trial,
        n,
        chosen: sol.chosen,
        chosen_optimal: profile.is_optimal(sol.chosen),
        excess: profile.excess_risk(sol.chosen, &sol.weight_vector())?,
        oracle_excess: profile.excess_risk(oracle.index, &oracle.weight_vector())?,
        singular: sol.singular,
        oracle_singular: oracle.singular,
        sup_delta_scaled: a,
        sup_lambda_scaled: b,
        upper_excursion: c,
        event: a < 1.0 && b < 1.0,
        g2_chosen: g * g,
        snapshot,
    })
}

/// Runs ERM and the oracle on `trials` datasets of size `n`; trial `i` uses the
/// stream `(seed, i)`.
pub fn run_trials(
    law: &JointDistribution,
    collection: &FeatureCollection,
    profile: &PopulationProfile,
    n: usize,
    trials: usize,
    seed: u64,
) -> Result<TrialBatch> {
    if trials == 0 {
        return Err(Error::InsufficientTrials { needed: 1, got: 0 });
    }
    let records = (0..trials as u64)
        .into_par_iter()
        .map(|i| one_trial(law, collection, profile, n, seed, i))
        .collect::<Result<Vec<_>>>()?;
    Ok(TrialBatch { n, master_seed: seed, hash: batch_hash(n, seed, &records), records })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ConsistencyPoint {
    pub n: usize,
    /// Frequency of `t_hat` outside `T_*`.
    pub miss: Proportion,
}

/// `P(t_hat not in T_*)` along `n_grid`; grid point `n` uses the master seed
/// `derive(seed, n)`.
pub fn consistency_curve(
    law: &JointDistribution,
    collection: &FeatureCollection,
    profile: &PopulationProfile,
    n_grid: &[usize],
    trials: usize,
    seed: u64,
) -> Result<Vec<ConsistencyPoint>> {
    if trials == 0 {
        return Err(Error::InsufficientTrials { needed: 1, got: 0 });
    }
    n_grid
        .iter()
        .map(|&n| {
            let master = derive(seed, n as u64);
            let misses = (0..trials as u64)
                .into_par_iter()
                .map(|i| {
                    let data = law.sample(n, master, i)?;
                    let sol = solve_from_stats(&collection_stats(&data, collection)?, Some(profile))?;
                    Ok(usize::from(!profile.is_optimal(sol.chosen)))
                })
                .collect::<Result<Vec<usize>>>()?
                .into_iter()
                .sum();
            Ok(ConsistencyPoint { n, miss: proportion(misses, trials) })
        })
        .collect()
}

/// The joint centred Gaussian `(Z(s))_{s in T_*}` with covariance blocks
/// `Sigma^{-1/2}(t) G(t, s) Sigma^{-1/2}(s)`.
#[derive(Debug, Clone)]
pub struct GaussianLimit {
    pub members: Vec<FeatureIndex>,
    pub layout: Vec<(usize, usize)>,
    pub covariance: Matrix,
    factor: Matrix,
}

impl GaussianLimit {
    pub fn new(profile: &PopulationProfile) -> Result<Self> {
        let members = profile.optimal().to_vec();
        let mut layout = Vec::with_capacity(members.len());
        let mut offset = 0;
        for &t in &members {
            let d = profile.record(t)?.dim;
            layout.push((offset, d));
            offset += d;
        }
        let mut cov = Matrix::zeros(offset, offset);
        for (i, &t) in members.iter().enumerate() {
            for (j, &s) in members.iter().enumerate() {
                let block = profile.whitened_gradient_covariance(t, s)?;
                cov.view_mut((layout[i].0, layout[j].0), (layout[i].1, layout[j].1)).copy_from(&block);
            }
        }
        let cov = symmetrize(&cov);
        let (values, vectors) = sym_eigen(&cov);
        let scale = values.iter().fold(1.0f64, |m, v| m.max(v.abs()));
        if values[0] < -PSD_FLOOR * scale {
            return Err(offending_pair(&members, &layout, &cov, values[0]));
        }
        let roots = values.map(|v| v.max(0.0).sqrt());
        let factor = &vectors * Matrix::from_diagonal(&roots);
        Ok(Self { members, layout, covariance: cov, factor })
    }

    pub fn dim(&self) -> usize {
        self.covariance.nrows()
    }

    /// Draws of the stacked vector `(Z(s))_s`, one column per draw.
    pub fn draw_vectors(&self, draws: usize, seed: u64) -> Matrix {
        let d = self.dim();
        let cols: Vec<crate::linalg::Vector> = (0..draws as u64)
            .into_par_iter()
            .map(|i| {
                let mut rng = trial_rng(seed, i);
                let xi = crate::linalg::Vector::from_fn(d, |_, _| StandardNormal.sample(&mut rng));
                &self.factor * xi
            })
            .collect();
        Matrix::from_columns(&cols)
    }

    /// `(Z^-, Z^+) = (min_s ||Z(s)||^2, max_s ||Z(s)||^2)` per draw.
    pub fn sample(&self, draws: usize, seed: u64) -> LimitSamples {
        let z = self.draw_vectors(draws, seed);
        let mut out = LimitSamples { z_minus: Vec::with_capacity(draws), z_plus: Vec::with_capacity(draws) };
        for col in z.column_iter() {
            let norms = self.layout.iter().map(|&(o, d)| col.rows(o, d).norm_squared());
            let (lo, hi) = norms.fold((f64::INFINITY, 0.0f64), |(lo, hi), v| (lo.min(v), hi.max(v)));
            out.z_minus.push(lo);
            out.z_plus.push(hi);
        }
        out
    }
}

fn offending_pair(members: &[FeatureIndex], layout: &[(usize, usize)], cov: &Matrix, worst: f64) -> Error {
    for i in 0..members.len() {
        for j in i..members.len() {
            let idx: Vec<usize> = [i, j]
                .iter()
                .collect::<std::collections::BTreeSet<_>>()
                .into_iter()
                .flat_map(|&k| layout[k].0..layout[k].0 + layout[k].1)
                .collect();
            let sub = Matrix::from_fn(idx.len(), idx.len(), |r, c| cov[(idx[r], idx[c])]);
            let lo = sym_eigen(&sub).0[0];
            if lo < -PSD_FLOOR * sub.amax().max(1.0) {
                return Error::NotPsd { first: members[i], second: members[j], eigenvalue: lo };
            }
        }
    }
    Error::NotPsd { first: members[0], second: members[members.len() - 1], eigenvalue: worst }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LimitSamples {
    pub z_minus: Vec<f64>,
    pub z_plus: Vec<f64>,
}

pub fn sample_gaussian_limit(profile: &PopulationProfile, draws: usize, seed: u64) -> Result<LimitSamples> {
    Ok(GaussianLimit::new(profile)?.sample(draws, seed))
}

/// Asymptotic limits of `n Q(1 - delta)` for a single class.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Thm1Check {
    pub lower: f64,
    pub upper: f64,
    pub pass: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct QuantileVerdict {
    pub n: usize,
    pub delta: f64,
    pub trials: usize,
    pub empirical: QuantileEstimate,
    pub oracle: QuantileEstimate,
    /// `Q_{Z^-}(1 - delta) / 2`.
    pub lower_reference: QuantileEstimate,
    /// `Q_{Z^+}(1 - delta) / 2`.
    pub upper_reference: QuantileEstimate,
    pub sandwich_pass: bool,
    pub ks_limit: Option<f64>,
    pub ks_oracle: Option<f64>,
    pub ks_pass: Option<bool>,
    pub thm1: Option<Thm1Check>,
}

/// Compares `n Q(1 - delta)` of the batch with half the limit quantiles by
/// overlapping confidence intervals; adds KS comparisons when `T_*` is a
/// singleton and the single-class quantile limits when `delta < 0.1`.
pub fn quantile_sandwich_check(
    batch: &TrialBatch,
    limit: &LimitSamples,
    delta: f64,
    profile: &PopulationProfile,
) -> Result<QuantileVerdict> {
    if !(delta > 0.0 && delta < 1.0) {
        return Err(Error::InvalidArgument(format!("delta must lie in (0, 1), got {delta}")));
    }
    let needed = (50.0 / delta).ceil() as usize;
    if batch.len() < needed {
        return Err(Error::InsufficientTrials { needed, got: batch.len() });
    }
    if limit.z_plus.len() < needed {
        return Err(Error::InsufficientTrials { needed, got: limit.z_plus.len() });
    }
    let level = 1.0 - delta;
    let excess = batch.scaled_excess();
    let oracle_excess = batch.scaled_oracle_excess();
    let empirical = quantile(&excess, level);
    let oracle = quantile(&oracle_excess, level);
    let lower_reference = quantile(&limit.z_minus, level).scaled(0.5);
    let upper_reference = quantile(&limit.z_plus, level).scaled(0.5);
    let sandwich_pass = empirical.upper + BOUND_FLOOR >= lower_reference.lower
        && empirical.lower <= upper_reference.upper + BOUND_FLOOR;
    let (ks_limit, ks_oracle, ks_pass) = if profile.optimal().len() == 1 {
        let half: Vec<f64> = limit.z_plus.iter().map(|z| 0.5 * z).collect();
        let a = ks_statistic(&excess, &half);
        let b = ks_statistic(&excess, &oracle_excess);
        (Some(a), Some(b), Some(a <= KS_TOL && b <= KS_TOL))
    } else {
        (None, None, None)
    };
    let thm1 = if delta < 0.1 {
        let star = profile.reference();
        let lam = crate::linalg::lambda_max(&profile.whitened_gradient_covariance(star, star)?);
        let (lower, upper) = bounds::thm1_quantile_limits(profile.record(star)?.grad_second_moment, lam, delta);
        Some(Thm1Check { lower, upper, pass: oracle.upper >= lower && oracle.lower <= upper })
    } else {
        None
    };
    Ok(QuantileVerdict {
        n: batch.n,
        delta,
        trials: batch.len(),
        empirical,
        oracle,
        lower_reference,
        upper_reference,
        sandwich_pass,
        ks_limit,
        ks_oracle,
        ks_pass,
        thm1,
    })
}

/// Which high-probability bound a sweep checks.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum BoundKind {
    /// The single-class bound `4 (n delta)^{-1} E||g||^2`, for the oracle fit
    /// of the reference optimal index.
    Thm2,
    /// The localized bound `24 (n delta)^{-1} A(S)` with `k` chosen per `n`.
    Cor3,
}

/// Sample-size threshold of a bound: `thm2_n` for the reference index, or the
/// least `n` meeting the closed-form requirement.
pub fn bound_threshold(profile: &PopulationProfile, kind: BoundKind, delta: f64, l_opts: &LOptions) -> Result<f64> {
    match kind {
        BoundKind::Thm2 => {
            let star = profile.reference();
            let lv = bounds::lambda_max_v(profile, &[star])?;
            let l = bounds::estimate_l(profile, &[star], l_opts)?.value;
            Ok(bounds::thm2_threshold(lv, l, profile.record(star)?.dim, delta))
        }
        BoundKind::Cor3 => {
            let all = profile.indices();
            let consts = bounds::Cor3Constants {
                lambda_v: bounds::lambda_max_v(profile, &all)?,
                l: bounds::estimate_l(profile, &all, l_opts)?.value,
                total_dim: all.iter().map(|t| profile.records()[t.0].dim).sum(),
                index_count: all.len(),
                sigma2_d: bounds::class_d(profile)?.sigma2(),
            };
            let d = bounds::class_d(profile)?;
            Ok(bounds::cor3_least_n(&consts, |m| d.r_n(m), delta)? as f64)
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ValidityRow {
    pub n: usize,
    pub above_threshold: bool,
    pub k: usize,
    pub bound: f64,
    pub violations: usize,
    pub singular: usize,
    pub rate: Proportion,
    /// `delta + 2 sqrt(p (1 - p) / N)`.
    pub allowed: f64,
    /// Set only at or above the threshold.
    pub pass: Option<bool>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ValidityReport {
    pub kind: BoundKind,
    pub delta: f64,
    pub threshold: f64,
    pub rows: Vec<ValidityRow>,
}

impl ValidityReport {
    pub fn pass(&self) -> bool {
        self.rows.iter().all(|r| r.pass != Some(false))
    }
}

/// Empirical `P(excess > bound)` along `n_grid`; singular fits count as
/// violations.
#[allow(clippy::too_many_arguments)]
pub fn bound_validity_sweep(
    law: &JointDistribution,
    collection: &FeatureCollection,
    profile: &PopulationProfile,
    kind: BoundKind,
    delta: f64,
    n_grid: &[usize],
    trials: usize,
    seed: u64,
    l_opts: &LOptions,
) -> Result<ValidityReport> {
    if trials == 0 {
        return Err(Error::InsufficientTrials { needed: 1, got: 0 });
    }
    let threshold = bound_threshold(profile, kind, delta, l_opts)?;
    let closed = ClosedFormComplexity::new(profile);
    let mut rows = Vec::with_capacity(n_grid.len());
    for &n in n_grid {
        let (k, bound) = match kind {
            BoundKind::Thm2 => {
                (1, bounds::thm2_bound(n, delta, profile.record(profile.reference())?.grad_second_moment))
            }
            BoundKind::Cor3 => {
                let c = choose_k(n, delta, profile, &closed)?;
                (c.k, c.bound)
            }
        };
        let master = derive(seed, n as u64);
        let outcomes = (0..trials as u64)
            .into_par_iter()
            .map(|i| {
                let data = law.sample(n, master, i)?;
                let stats = collection_stats(&data, collection)?;
                let (t, w, singular) = match kind {
                    BoundKind::Thm2 => {
                        let f = fit_from_stats(&stats[profile.reference().0], Some(profile))?;
                        (f.index, f.weight_vector(), f.singular)
                    }
                    BoundKind::Cor3 => {
                        let s = solve_from_stats(&stats, Some(profile))?;
                        (s.chosen, s.weight_vector(), s.singular)
                    }
                };
                let excess = profile.excess_risk(t, &w)?;
                Ok((singular || excess > bound + PATHWISE_SLACK * bound + BOUND_FLOOR, singular))
            })
            .collect::<Result<Vec<(bool, bool)>>>()?;
        let violations = outcomes.iter().filter(|o| o.0).count();
        let singular = outcomes.iter().filter(|o| o.1).count();
        let rate = proportion(violations, trials);
        let allowed = delta + 2.0 * rate.se;
        let above = n as f64 >= threshold;
        rows.push(ValidityRow {
            n,
            above_threshold: above,
            k,
            bound,
            violations,
            singular,
            rate,
            allowed,
            pass: above.then_some(rate.estimate <= allowed),
        });
    }
    Ok(ValidityReport { kind, delta, threshold, rows })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PathwiseViolation {
    pub trial: u64,
    pub which: &'static str,
    pub lhs: f64,
    pub rhs: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PathwiseReport {
    pub checked: usize,
    pub excluded: usize,
    pub violations: Vec<PathwiseViolation>,
}

/// Checks, on every trial where both scaled suprema are below one:
/// `gap(t_hat) <= G^2 / (2 n (1 - a)(1 - b))` and
/// `G^2 / (2 n (1 + c)^2) <= excess - gap <= G^2 / (2 n (1 - b)^2)`,
/// with `a`, `b`, `c` the scaled `Delta_n`, `Lambda_n` and upper whitened
/// excursion suprema.
pub fn pathwise_master_check(batch: &TrialBatch, profile: &PopulationProfile) -> Result<PathwiseReport> {
    let mut report = PathwiseReport { checked: 0, excluded: 0, violations: Vec::new() };
    for r in &batch.records {
        if !r.event {
            report.excluded += 1;
            continue;
        }
        report.checked += 1;
        let q = 0.5 * r.g2_chosen / r.n as f64;
        let (a, b, c) = (r.sup_delta_scaled, r.sup_lambda_scaled, r.upper_excursion);
        let gap = profile.suboptimality(r.chosen)?;
        let estimation = r.excess - gap;
        let checks = [
            ("suboptimality", gap, q / ((1.0 - a) * (1.0 - b))),
            ("estimation_upper", estimation, q / (1.0 - b).powi(2)),
            ("estimation_lower", q / (1.0 + c).powi(2), estimation),
        ];
        for (which, lhs, rhs) in checks {
            if lhs > rhs + PATHWISE_SLACK * rhs.abs().max(1.0) {
                report.violations.push(PathwiseViolation { trial: r.trial, which, lhs, rhs });
            }
        }
    }
    Ok(report)
}

/// Design of a best-subset-selection study.
#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum BssDesign {
    /// `X` uniform on `{-1, 1}^d`, `Y = <target, X> +- noise`.
    Hypercube { target: Vec<f64>, noise: f64 },
    /// `X ~ N(0, I_d)`, `Y = <target, X> + eps`.
    Gaussian { target: Vec<f64>, noise: NoiseLaw },
}

impl BssDesign {
    pub fn dim(&self) -> usize {
        match self {
            BssDesign::Hypercube { target, .. } | BssDesign::Gaussian { target, .. } => target.len(),
        }
    }

    pub fn noise_variance(&self) -> f64 {
        match self {
            BssDesign::Hypercube { noise, .. } => noise * noise,
            BssDesign::Gaussian { noise, .. } => noise.variance(),
        }
    }

    pub fn law(&self) -> Result<JointDistribution> {
        match self {
            BssDesign::Hypercube { target, noise } => crate::instances::hypercube_law(target.len(), target, *noise),
            BssDesign::Gaussian { target, noise } => {
                Ok(JointDistribution::Generative(GaussianDesign::new(target.clone(), *noise)?))
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BssConfig {
    pub design: BssDesign,
    pub s: usize,
    pub n_grid: Vec<usize>,
    pub trials: usize,
    pub seed: u64,
    pub delta: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BssRow {
    pub n: usize,
    pub recovery: Proportion,
    /// `mean(n excess) / (sigma^2 s)`.
    pub a_n: MeanEstimate,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct RecoveryThreshold {
    pub cor3_n: usize,
    /// Least `n` with `n > min_k 4 k (gamma delta)^{-1} A(S_{k-1})`.
    pub gamma_n: usize,
    pub required: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BssReport {
    pub d: usize,
    pub s: usize,
    pub subsets: usize,
    pub noise_variance: f64,
    pub gap: f64,
    pub threshold: Option<RecoveryThreshold>,
    pub rows: Vec<BssRow>,
    /// Recovery at least `1 - delta` on every row at or above the threshold.
    pub recovery_pass: Option<bool>,
    /// `a_{i+1} <= a_i + 2 sqrt(se_i^2 + se_{i+1}^2)` along the grid.
    pub trend_pass: bool,
}

/// Least `n` for which some `k <= 1 + |T \ T_*|` makes every step of the
/// closed-form iteration exclude all suboptimal indices:
/// `n > 4 k (gamma delta)^{-1} A(F^{k-1}(T))`, with `A` evaluated at `n`.
pub fn recovery_level(profile: &PopulationProfile, delta: f64) -> Result<usize> {
    let gamma = profile.gap();
    if !gamma.is_finite() {
        return Ok(1);
    }
    let source = ClosedFormComplexity::new(profile);
    let k_max = 1 + profile.suboptimal().len();
    let need_at = |n: usize| -> Result<f64> {
        let mut best = f64::INFINITY;
        for k in 1..=k_max {
            let set = if k == 1 {
                profile.indices()
            } else {
                crate::localization::iterate(n, delta, k, profile, &source)?.steps[k - 2].members.clone()
            };
            let a = crate::localization::ComplexitySource::complexity(&source, &set, n)?;
            best = best.min(4.0 * k as f64 * a / (gamma * delta));
        }
        Ok(best)
    };
    let mut n = 1usize;
    for _ in 0..100_000 {
        let need = need_at(n)?;
        if n as f64 > need * (1.0 + EDGE_TOL) + EDGE_TOL {
            return Ok(n);
        }
        n = (need.floor() as usize + 1).max(n + 1);
    }
    Err(Error::InvalidArgument("recovery level iteration did not settle".into()))
}

pub fn bss_study(config: &BssConfig, l_opts: &LOptions) -> Result<BssReport> {
    let d = config.design.dim();
    let collection = subset_collection(FeatureMap::identity(d), config.s)?;
    let law = config.design.law()?;
    let profile = match &law {
        JointDistribution::Discrete(_) => PopulationProfile::compute(&law, &collection, Tolerances::default())?,
        JointDistribution::Generative(g) => PopulationProfile::gaussian_design(g, &collection, Tolerances::default())?,
    };
    let sigma2 = config.design.noise_variance();
    let threshold = match law {
        JointDistribution::Discrete(_) => {
            let cor3_n = bound_threshold(&profile, BoundKind::Cor3, config.delta, l_opts)? as usize;
            let gamma_n = recovery_level(&profile, config.delta)?;
            Some(RecoveryThreshold { cor3_n, gamma_n, required: cor3_n.max(gamma_n) })
        }
        JointDistribution::Generative(_) => None,
    };
    let mut rows = Vec::with_capacity(config.n_grid.len());
    for &n in &config.n_grid {
        let master = derive(config.seed, n as u64);
        let outcomes = (0..config.trials as u64)
            .into_par_iter()
            .map(|i| {
                let data = law.sample(n, master, i)?;
                let sol = solve_from_stats(&collection_stats(&data, &collection)?, Some(&profile))?;
                Ok((profile.is_optimal(sol.chosen), n as f64 * profile.excess_risk(sol.chosen, &sol.weight_vector())?))
            })
            .collect::<Result<Vec<(bool, f64)>>>()?;
        let hits = outcomes.iter().filter(|o| o.0).count();
        let ratios: Vec<f64> = outcomes.iter().map(|o| o.1 / (sigma2 * config.s as f64)).collect();
        rows.push(BssRow { n, recovery: proportion(hits, config.trials), a_n: mean_se(&ratios) });
    }
    let recovery_pass = threshold
        .map(|th| rows.iter().filter(|r| r.n >= th.required).all(|r| r.recovery.estimate >= 1.0 - config.delta));
    let trend_pass = rows
        .windows(2)
        .all(|w| w[1].a_n.mean <= w[0].a_n.mean + 2.0 * (w[0].a_n.se.powi(2) + w[1].a_n.se.powi(2)).sqrt());
    Ok(BssReport {
        d,
        s: config.s,
        subsets: collection.len(),
        noise_variance: sigma2,
        gap: profile.gap(),
        threshold,
        rows,
        recovery_pass,
        trend_pass,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::instances;
    use crate::model::DiscreteLaw;

    fn profile_of(inst: &instances::Instance) -> PopulationProfile {
        PopulationProfile::compute(&inst.law, &inst.collection, Tolerances::default()).unwrap()
    }

    #[test]
    fn noiseless_trials_have_zero_excess() {
        let inst = instances::realizable_noiseless();
        let p = profile_of(&inst);
        let batch = run_trials(&inst.law, &inst.collection, &p, 6, 200, 1).unwrap();
        for r in &batch.records {
            assert!(r.excess < 1e-20 && r.oracle_excess < 1e-20);
        }
        let report = pathwise_master_check(&batch, &p).unwrap();
        assert!(report.violations.is_empty());
        assert_eq!(report.checked + report.excluded, 200);
    }

    #[test]
    fn batches_are_reproducible() {
        let inst = instances::can_a();
        let p = profile_of(&inst);
        let a = run_trials(&inst.law, &inst.collection, &p, 40, 300, 9).unwrap();
        let b = run_trials(&inst.law, &inst.collection, &p, 40, 300, 9).unwrap();
        let c = run_trials(&inst.law, &inst.collection, &p, 40, 300, 10).unwrap();
        assert_eq!(a.hash, b.hash);
        assert_ne!(a.hash, c.hash);
        assert_eq!(a.len(), 300);
    }

    #[test]
    fn excluded_trials_are_counted() {
        let inst = instances::can_a();
        let p = profile_of(&inst);
        let batch = run_trials(&inst.law, &inst.collection, &p, 3, 500, 2).unwrap();
        let report = pathwise_master_check(&batch, &p).unwrap();
        assert!(report.excluded > 0);
        assert_eq!(report.checked + report.excluded, 500);
        assert!(report.violations.is_empty(), "{:?}", report.violations.first());
    }

    #[test]
    fn consistency_examples() {
        let inst = instances::can_a_singleton();
        let p = profile_of(&inst);
        let curve = consistency_curve(&inst.law, &inst.collection, &p, &[5, 50], 200, 0).unwrap();
        assert!(curve.iter().all(|c| c.miss.successes == 0));
        let inst = instances::symmetric_tie();
        let p = profile_of(&inst);
        assert_eq!(p.optimal().len(), 2);
        let curve = consistency_curve(&inst.law, &inst.collection, &p, &[20], 500, 1).unwrap();
        assert_eq!(curve[0].miss.successes, 0);
        let inst = instances::can_a();
        let p = profile_of(&inst);
        let curve = consistency_curve(&inst.law, &inst.collection, &p, &[50, 200, 800, 3200], 2000, 2).unwrap();
        assert_eq!(curve.len(), 4);
        assert!(curve[3].miss.estimate <= curve[0].miss.estimate);
        assert!(curve[3].miss.estimate <= 0.01);
    }

    #[test]
    fn limit_examples() {
        let inst = instances::realizable_noiseless();
        let p = profile_of(&inst);
        let z = sample_gaussian_limit(&p, 100, 0).unwrap();
        assert!(z.z_plus.iter().all(|v| *v < 1e-20));
        let inst = instances::can_a();
        let p = profile_of(&inst);
        let z = sample_gaussian_limit(&p, 1000, 3).unwrap();
        assert_eq!(z.z_minus, z.z_plus);
    }

    #[test]
    fn limit_second_moment_matches_gradient_moment() {
        // Well-specified d = 1 with noise variance 0.25: E||Z||^2 = sigma^2.
        let law = JointDistribution::Discrete(
            DiscreteLaw::with_independent_noise(
                vec![vec![1.0], vec![-2.0], vec![0.5]],
                |x| 3.0 * x[0],
                &[(-0.5, 0.5), (0.5, 0.5)],
            )
            .unwrap(),
        );
        let coll = FeatureCollection::new(vec![("x".into(), FeatureMap::identity(1))]).unwrap();
        let p = PopulationProfile::compute(&law, &coll, Tolerances::default()).unwrap();
        assert!((p.records()[0].grad_second_moment - 0.25).abs() < 1e-12);
        let z = sample_gaussian_limit(&p, 100_000, 4).unwrap();
        let m = mean_se(&z.z_plus);
        assert!((m.mean - 0.25).abs() <= 4.0 * m.se);
    }

    #[test]
    fn limit_covariance_is_reproduced() {
        let inst = instances::symmetric_tie();
        let p = profile_of(&inst);
        let limit = GaussianLimit::new(&p).unwrap();
        assert_eq!(limit.dim(), 2);
        let draws = 100_000;
        let z = limit.draw_vectors(draws, 5);
        for i in 0..2 {
            for j in 0..2 {
                let prods: Vec<f64> = z.column_iter().map(|c| c[i] * c[j]).collect();
                let m = mean_se(&prods);
                assert!((m.mean - limit.covariance[(i, j)]).abs() <= 4.0 * m.se, "({i},{j})");
            }
        }
        let s = limit.sample(1000, 6);
        assert!(s.z_minus.iter().zip(&s.z_plus).all(|(a, b)| a <= b));
    }

    #[test]
    fn quantile_check_needs_enough_trials() {
        let inst = instances::can_a();
        let p = profile_of(&inst);
        let batch = run_trials(&inst.law, &inst.collection, &p, 100, 100, 0).unwrap();
        let z = sample_gaussian_limit(&p, 1000, 0).unwrap();
        assert!(matches!(
            quantile_sandwich_check(&batch, &z, 0.1, &p),
            Err(Error::InsufficientTrials { needed: 500, got: 100 })
        ));
        let v = quantile_sandwich_check(&batch, &z, 0.5, &p).unwrap();
        assert!(v.ks_limit.is_some() && v.thm1.is_none());
    }

    #[test]
    fn zero_noise_quantiles_vanish() {
        let inst = instances::realizable_noiseless();
        let p = profile_of(&inst);
        let batch = run_trials(&inst.law, &inst.collection, &p, 10, 1000, 0).unwrap();
        let z = sample_gaussian_limit(&p, 1000, 0).unwrap();
        let v = quantile_sandwich_check(&batch, &z, 0.05, &p).unwrap();
        for q in [v.empirical.estimate, v.lower_reference.estimate, v.upper_reference.estimate] {
            assert!(q < 1e-20);
        }
        assert!(v.sandwich_pass);
    }

    #[test]
    fn median_sits_in_sandwich() {
        let inst = instances::can_a();
        let p = profile_of(&inst);
        let batch = run_trials(&inst.law, &inst.collection, &p, 2000, 4000, 8).unwrap();
        let z = sample_gaussian_limit(&p, 4000, 8).unwrap();
        let v = quantile_sandwich_check(&batch, &z, 0.5, &p).unwrap();
        assert!(v.sandwich_pass, "{v:?}");
    }

    #[test]
    fn noiseless_bounds_never_fail() {
        let inst = instances::realizable_noiseless();
        let p = profile_of(&inst);
        let r = bound_validity_sweep(
            &inst.law,
            &inst.collection,
            &p,
            BoundKind::Thm2,
            0.1,
            &[50, 400],
            300,
            0,
            &LOptions::default(),
        )
        .unwrap();
        for row in &r.rows {
            assert_eq!(row.violations, row.singular);
        }
        assert!(r.rows.last().unwrap().violations == 0);
    }

    #[test]
    fn full_subset_bss_always_recovers() {
        let config = BssConfig {
            design: BssDesign::Hypercube { target: vec![1.0, -0.5], noise: 0.5 },
            s: 2,
            n_grid: vec![10, 40],
            trials: 200,
            seed: 0,
            delta: 0.1,
        };
        let r = bss_study(&config, &LOptions::default()).unwrap();
        assert_eq!(r.subsets, 1);
        assert!(r.rows.iter().all(|row| row.recovery.estimate == 1.0));
        assert_eq!(r.threshold.unwrap().gamma_n, 1);
    }

    #[test]
    fn gaussian_bss_ratio_trend() {
        let config = BssConfig {
            design: BssDesign::Gaussian {
                target: vec![1.0, -1.0, 0.0, 0.0, 0.0, 0.0],
                noise: NoiseLaw::Gaussian { sigma: 1.0 },
            },
            s: 2,
            n_grid: vec![50, 100, 200, 400],
            trials: 1000,
            seed: 4,
            delta: 0.1,
        };
        let r = bss_study(&config, &LOptions::default()).unwrap();
        assert_eq!(r.subsets, 15);
        assert!(r.threshold.is_none());
        assert!(r.trend_pass, "{:?}", r.rows);
    }
}
