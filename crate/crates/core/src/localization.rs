//! The localization map over index subsets, its iterates, the choice of the
//! iteration count, and the sample size beyond which it collapses to `T_*`.

use std::collections::HashMap;
use std::sync::Mutex;

use serde::Serialize;

use crate::bounds::{localized_bound, subset_complexity};
use crate::error::{Error, Result};
use crate::model::{FeatureCollection, FeatureIndex, JointDistribution};
use crate::population::PopulationProfile;
use crate::processes::{expected_sup, ProcessKind, SupEstimate, SupMode};

/// Indices whose suboptimality equals the threshold within this tolerance are
/// kept.
pub const EDGE_TOL: f64 = 1e-12;

/// A complexity value `C(S)` driving the map, with a ceiling valid for every
/// subset and sample size.
pub trait ComplexitySource: Sync {
    fn complexity(&self, subset: &[FeatureIndex], n: usize) -> Result<f64>;
    fn ceiling(&self) -> Result<f64>;
    fn name(&self) -> &'static str;
}

/// `A(S)` built from the gradient class moments.
pub struct ClosedFormComplexity<'a> {
    profile: &'a PopulationProfile,
}

impl<'a> ClosedFormComplexity<'a> {
    pub fn new(profile: &'a PopulationProfile) -> Self {
        Self { profile }
    }
}

impl ComplexitySource for ClosedFormComplexity<'_> {
    fn complexity(&self, subset: &[FeatureIndex], n: usize) -> Result<f64> {
        Ok(subset_complexity(self.profile, subset, n)?.a)
    }

    /// `c^2(|T|) (sigma_G(T) + c(|T|) r_inf^G(T))^2`, which dominates `A(S)`
    /// for all `S` and `n >= 1`.
    fn ceiling(&self) -> Result<f64> {
        let all = self.profile.indices();
        let class = crate::bounds::class_g(self.profile, &all)?;
        let c = crate::bounds::c_factor(all.len())?;
        Ok(c * c * (class.sigma2().sqrt() + c * class.r_inf()).powi(2))
    }

    fn name(&self) -> &'static str {
        "closed_form"
    }
}

/// Monte Carlo `E[sup_{s in S} G_n^2(s)]`, used at estimate plus three
/// standard errors. Estimates are cached per subset and sample size.
pub struct ExpectedSupComplexity<'a> {
    law: &'a JointDistribution,
    collection: &'a FeatureCollection,
    profile: &'a PopulationProfile,
    trials: usize,
    seed: u64,
    cache: Mutex<HashMap<(Vec<usize>, usize), SupEstimate>>,
}

impl<'a> ExpectedSupComplexity<'a> {
    pub fn new(
        law: &'a JointDistribution,
        collection: &'a FeatureCollection,
        profile: &'a PopulationProfile,
        trials: usize,
        seed: u64,
    ) -> Self {
        Self { law, collection, profile, trials, seed, cache: Mutex::new(HashMap::new()) }
    }

    pub fn estimate(&self, subset: &[FeatureIndex], n: usize) -> Result<SupEstimate> {
        let key = (subset.iter().map(|t| t.0).collect::<Vec<_>>(), n);
        if let Some(hit) = self.cache.lock().expect("cache lock").get(&key) {
            return Ok(*hit);
        }
        let mode = SupMode::MonteCarlo { trials: self.trials, seed: self.seed };
        let est = expected_sup(ProcessKind::GSquared, subset, n, self.law, self.collection, self.profile, mode)?;
        self.cache.lock().expect("cache lock").insert(key, est);
        Ok(est)
    }
}

impl ComplexitySource for ExpectedSupComplexity<'_> {
    fn complexity(&self, subset: &[FeatureIndex], n: usize) -> Result<f64> {
        Ok(self.estimate(subset, n)?.conservative())
    }

    /// `sum_t E||g(t)||^2`, since `E[G_n^2(t)]` equals it for every `n`.
    fn ceiling(&self) -> Result<f64> {
        Ok(self.profile.records().iter().map(|r| r.grad_second_moment).sum())
    }

    fn name(&self) -> &'static str {
        "expected_sup"
    }
}

fn step_threshold(n: usize, delta: f64, complexity: f64) -> f64 {
    2.0 * complexity / (n as f64 * delta)
}

fn sublevel(profile: &PopulationProfile, from: &[FeatureIndex], threshold: f64) -> Result<Vec<FeatureIndex>> {
    let slack = EDGE_TOL * threshold.abs().max(1.0);
    let mut out = Vec::new();
    for &t in from {
        if profile.suboptimality(t)? <= threshold + slack {
            out.push(t);
        }
    }
    Ok(out)
}

/// `{t in T : R(t, w_*(t)) - R_* <= 2 (n delta)^{-1} C(S)}`, selected from all
/// of `T`.
pub fn f_map(
    subset: &[FeatureIndex],
    n: usize,
    delta: f64,
    profile: &PopulationProfile,
    source: &dyn ComplexitySource,
) -> Result<Vec<FeatureIndex>> {
    if subset.is_empty() {
        return Err(Error::EmptyCollection);
    }
    let c = source.complexity(subset, n)?;
    sublevel(profile, &profile.indices(), step_threshold(n, delta, c))
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LocalizationStep {
    pub step: usize,
    pub complexity: f64,
    pub threshold: f64,
    pub members: Vec<FeatureIndex>,
    pub membership: Vec<bool>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LocalizationTrace {
    pub n: usize,
    pub delta: f64,
    pub k: usize,
    pub delta_step: f64,
    pub source: &'static str,
    pub steps: Vec<LocalizationStep>,
    /// First step whose output equals its input.
    pub fixed_point_at: Option<usize>,
    pub final_set: Vec<FeatureIndex>,
    pub final_complexity: f64,
    /// `24 (n delta)^{-1} C(S_k)`.
    pub final_bound: f64,
}

fn check(n: usize, delta: f64, k: usize) -> Result<()> {
    if n == 0 {
        return Err(Error::EmptySample);
    }
    if !(delta > 0.0 && delta < 1.0) {
        return Err(Error::InvalidArgument(format!("delta must lie in (0, 1), got {delta}")));
    }
    if k == 0 {
        return Err(Error::InvalidArgument("k must be at least 1".into()));
    }
    Ok(())
}

fn run(
    n: usize,
    delta: f64,
    k: usize,
    profile: &PopulationProfile,
    source: &dyn ComplexitySource,
    restricted: bool,
) -> Result<LocalizationTrace> {
    check(n, delta, k)?;
    let delta_step = delta / (2 * k) as f64;
    let all = profile.indices();
    let mut current = all.clone();
    let mut steps: Vec<LocalizationStep> = Vec::with_capacity(k);
    let mut fixed_point_at = None;
    for j in 1..=k {
        if fixed_point_at.is_some() {
            let mut repeat = steps.last().expect("a completed step").clone();
            repeat.step = j;
            steps.push(repeat);
            continue;
        }
        let complexity = source.complexity(&current, n)?;
        let threshold = step_threshold(n, delta_step, complexity);
        let from = if restricted { current.clone() } else { all.clone() };
        let next = sublevel(profile, &from, threshold)?;
        if next == current {
            fixed_point_at = Some(j);
        }
        let membership = all.iter().map(|t| next.contains(t)).collect();
        steps.push(LocalizationStep { step: j, complexity, threshold, members: next.clone(), membership });
        current = next;
    }
    let final_complexity = source.complexity(&current, n)?;
    Ok(LocalizationTrace {
        n,
        delta,
        k,
        delta_step,
        source: source.name(),
        steps,
        fixed_point_at,
        final_bound: localized_bound(n, delta, final_complexity),
        final_set: current,
        final_complexity,
    })
}

/// `k` applications of the map from `T` at per-step confidence `delta / 2k`.
pub fn iterate(
    n: usize,
    delta: f64,
    k: usize,
    profile: &PopulationProfile,
    source: &dyn ComplexitySource,
) -> Result<LocalizationTrace> {
    run(n, delta, k, profile, source, false)
}

/// The same iteration, with each step selecting only from the previous set.
pub fn iterate_restricted(
    n: usize,
    delta: f64,
    k: usize,
    profile: &PopulationProfile,
    source: &dyn ComplexitySource,
) -> Result<LocalizationTrace> {
    run(n, delta, k, profile, source, true)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct KChoice {
    pub k: usize,
    pub bound: f64,
    pub bounds: Vec<f64>,
    pub trace: LocalizationTrace,
}

/// The `k` in `1..=1 + |T \ T_*|` minimizing the final bound; ties go to the
/// smallest `k`.
pub fn choose_k(n: usize, delta: f64, profile: &PopulationProfile, source: &dyn ComplexitySource) -> Result<KChoice> {
    let k_max = 1 + profile.suboptimal().len();
    let mut best: Option<(usize, LocalizationTrace)> = None;
    let mut bounds = Vec::with_capacity(k_max);
    for k in 1..=k_max {
        let trace = iterate(n, delta, k, profile, source)?;
        bounds.push(trace.final_bound);
        if best.as_ref().is_none_or(|(_, b)| trace.final_bound < b.final_bound) {
            best = Some((k, trace));
        }
    }
    let (k, trace) = best.expect("k_max >= 1");
    Ok(KChoice { k, bound: trace.final_bound, bounds, trace })
}

/// Least `n_0` such that every step threshold stays below the minimal gap for
/// all `n >= n_0`, so that every iterate equals `T_*`:
/// `n_0 = floor(4 k B / (delta gamma)) + 1` with `B` the source ceiling.
pub fn collapse_level(
    delta: f64,
    k: usize,
    profile: &PopulationProfile,
    source: &dyn ComplexitySource,
) -> Result<usize> {
    check(1, delta, k)?;
    let gamma = profile.gap();
    if !gamma.is_finite() {
        return Ok(1);
    }
    let b = source.ceiling()?;
    let delta_step = delta / (2 * k) as f64;
    let mut n0 = (4.0 * k as f64 * b / (delta * gamma)).floor() as usize + 1;
    loop {
        let thr = step_threshold(n0, delta_step, b);
        if thr + EDGE_TOL * thr.abs().max(1.0) < gamma {
            return Ok(n0);
        }
        n0 += 1;
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::instances;
    use crate::population::Tolerances;
    use proptest::prelude::*;

    fn profile_of(inst: &instances::Instance) -> PopulationProfile {
        PopulationProfile::compute(&inst.law, &inst.collection, Tolerances::default()).unwrap()
    }

    /// A fixed complexity value.
    struct Constant(f64);

    impl ComplexitySource for Constant {
        fn complexity(&self, _: &[FeatureIndex], _: usize) -> Result<f64> {
            Ok(self.0)
        }
        fn ceiling(&self) -> Result<f64> {
            Ok(self.0)
        }
        fn name(&self) -> &'static str {
            "constant"
        }
    }

    #[test]
    fn vacuous_and_separating_thresholds() {
        let inst = instances::can_a_extended();
        let p = profile_of(&inst);
        let all = p.indices();
        let worst = all.iter().map(|&t| p.suboptimality(t).unwrap()).fold(0.0, f64::max);
        // Threshold 2 C / (n delta) with n = 1, delta = 0.5 equals 4 C.
        assert_eq!(f_map(&all, 1, 0.5, &p, &Constant(worst / 4.0)).unwrap(), all);
        assert_eq!(f_map(&all, 1, 0.5, &p, &Constant(0.99 * p.gap() / 4.0)).unwrap(), p.optimal().to_vec());
    }

    #[test]
    fn middle_sublevel_set() {
        let inst = instances::can_a_extended();
        let p = profile_of(&inst);
        let mut gaps: Vec<(f64, FeatureIndex)> =
            p.suboptimal().into_iter().map(|t| (p.suboptimality(t).unwrap(), t)).collect();
        gaps.sort_by(|a, b| a.0.total_cmp(&b.0));
        assert_eq!(gaps.len(), 2);
        assert!(gaps[0].0 < gaps[1].0);
        let source = ClosedFormComplexity::new(&p);
        let all = p.indices();
        let a = source.complexity(&all, 1).unwrap();
        let target = 0.5 * (gaps[0].0 + gaps[1].0);
        // Choose n so that 2 A(T; n) / (n delta) lands at the midpoint.
        let delta = 0.1;
        let mut n = 1usize;
        while step_threshold(n, delta, source.complexity(&all, n).unwrap()) > target {
            n += 1;
        }
        let thr = step_threshold(n, delta, source.complexity(&all, n).unwrap());
        assert!(thr > gaps[0].0 && thr < gaps[1].0, "threshold {thr}, a {a}");
        let out = f_map(&all, n, delta, &p, &source).unwrap();
        let mut expected: Vec<FeatureIndex> = p.optimal().to_vec();
        expected.push(gaps[0].1);
        expected.sort();
        assert_eq!(out, expected);
    }

    #[test]
    fn single_step_matches_map() {
        let inst = instances::can_a_extended();
        let p = profile_of(&inst);
        let source = ClosedFormComplexity::new(&p);
        let trace = iterate(500, 0.2, 1, &p, &source).unwrap();
        assert_eq!(trace.steps.len(), 1);
        assert_eq!(trace.steps[0].members, f_map(&p.indices(), 500, 0.1, &p, &source).unwrap());
    }

    #[test]
    fn fixed_point_persists() {
        let inst = instances::can_a_extended();
        let p = profile_of(&inst);
        let source = ClosedFormComplexity::new(&p);
        for n in [5, 50, 500, 5000] {
            let trace = iterate(n, 0.1, 6, &p, &source).unwrap();
            if let Some(j) = trace.fixed_point_at {
                for m in j..trace.steps.len() {
                    assert_eq!(trace.steps[m].members, trace.steps[j - 1].members);
                }
            }
        }
    }

    #[test]
    fn choose_k_examples() {
        let inst = instances::can_a_singleton();
        let p = profile_of(&inst);
        let c = choose_k(100, 0.1, &p, &ClosedFormComplexity::new(&p)).unwrap();
        assert_eq!((c.k, c.bounds.len()), (1, 1));
        let inst = instances::can_a();
        let p = profile_of(&inst);
        let source = ClosedFormComplexity::new(&p);
        let n0 = collapse_level(0.1, 1, &p, &source).unwrap();
        let c = choose_k(n0, 0.1, &p, &source).unwrap();
        assert_eq!(c.k, 1);
        assert_eq!(c.trace.final_set, p.optimal().to_vec());
        let inst = instances::can_a_extended();
        let p = profile_of(&inst);
        let source = ClosedFormComplexity::new(&p);
        let c = choose_k(200, 0.1, &p, &source).unwrap();
        let min = c.bounds.iter().copied().fold(f64::INFINITY, f64::min);
        assert_eq!(c.bound, min);
        assert_eq!(c.k, 1 + c.bounds.iter().position(|b| *b == min).unwrap());
    }

    #[test]
    fn collapse_at_level_and_double() {
        for inst in [instances::can_a(), instances::can_a_extended(), instances::bss_orthogonal()] {
            let p = profile_of(&inst);
            let source = ClosedFormComplexity::new(&p);
            for k in [1, 2] {
                let n0 = collapse_level(0.1, k, &p, &source).unwrap();
                for n in [n0, 2 * n0] {
                    let trace = iterate(n, 0.1, k, &p, &source).unwrap();
                    for step in &trace.steps {
                        assert_eq!(step.members, p.optimal().to_vec(), "{} n={n} k={k}", inst.name);
                    }
                }
            }
        }
    }

    #[test]
    fn optimal_only_collection_collapses_immediately() {
        let inst = instances::can_a_singleton();
        let p = profile_of(&inst);
        assert_eq!(collapse_level(0.1, 1, &p, &ClosedFormComplexity::new(&p)).unwrap(), 1);
    }

    #[test]
    fn expected_sup_source_is_cached_and_bounded() {
        let inst = instances::can_a();
        let p = profile_of(&inst);
        let source = ExpectedSupComplexity::new(&inst.law, &inst.collection, &p, 400, 3);
        let all = p.indices();
        let a = source.complexity(&all, 50).unwrap();
        let b = source.complexity(&all, 50).unwrap();
        assert_eq!(a.to_bits(), b.to_bits());
        let est = source.estimate(&all, 50).unwrap();
        assert!(est.estimate <= source.ceiling().unwrap());
        let trace = iterate(50, 0.1, 2, &p, &source).unwrap();
        assert!(p.optimal().iter().all(|t| trace.final_set.contains(t)));
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(100))]

        #[test]
        fn iterates_nest_and_contain_optimal(
            seed in any::<u64>(),
            n in 1usize..5000,
            delta in 0.01f64..0.99,
            k in 1usize..5,
        ) {
            let inst = instances::random_instance(seed);
            let p = profile_of(&inst);
            let source = ClosedFormComplexity::new(&p);
            let trace = iterate(n, delta, k, &p, &source).unwrap();
            let mut prev = p.indices();
            let mut prev_thr = f64::INFINITY;
            for step in &trace.steps {
                prop_assert!(step.members.iter().all(|t| prev.contains(t)));
                prop_assert!(p.optimal().iter().all(|t| step.members.contains(t)));
                prop_assert!(step.threshold <= prev_thr + 1e-12 * prev_thr.abs().min(1e300));
                prev_thr = step.threshold;
                prev = step.members.clone();
            }
            let restricted = iterate_restricted(n, delta, k, &p, &source).unwrap();
            prop_assert_eq!(&restricted.final_set, &trace.final_set);
            let smaller = iterate(n, delta / 2.0, k, &p, &source).unwrap();
            for (a, b) in trace.steps.iter().zip(&smaller.steps) {
                prop_assert!(a.members.iter().all(|t| b.members.contains(t)));
            }
        }
    }
}
