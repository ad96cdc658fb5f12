//! The empirical processes `Lambda_n`, `G_n` and `Delta_n`, their suprema, and
//! estimators of expected suprema.

use rayon::prelude::*;
use serde::Serialize;

use crate::erm::{collection_stats, IndexStats};
use crate::error::{Error, Result};
use crate::linalg::{quad_form, sym_eigen};
use crate::model::{Dataset, FeatureCollection, FeatureIndex, JointDistribution};
use crate::population::PopulationProfile;
use crate::stats::mean_se;

/// Minimum Monte Carlo trials for an expected supremum.
pub const MIN_SUP_TRIALS: usize = 100;

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct IndexProcess {
    pub index: FeatureIndex,
    /// `sqrt(n) lambda_max(I - Sigma^{-1/2} Sigma_n Sigma^{-1/2})`.
    pub lambda: f64,
    /// `sqrt(n) lambda_max(Sigma^{-1/2} Sigma_n Sigma^{-1/2} - I)`.
    pub lambda_upper: f64,
    /// `sqrt(n) ||grad R_n(t, w_*(t))||_{Sigma^{-1}}`.
    pub g: f64,
    /// `Delta_n(t, t_*)`; absent on `T_*`.
    pub delta: Option<f64>,
}

/// All process values on one dataset, plus suprema over the whole index set.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ProcessSnapshot {
    pub n: usize,
    pub reference: FeatureIndex,
    pub per_index: Vec<IndexProcess>,
    pub sup_lambda: f64,
    pub sup_lambda_upper: f64,
    pub sup_g2: f64,
    /// Over `T \ T_*`; zero when that set is empty.
    pub sup_delta: f64,
}

fn sup(values: impl Iterator<Item = f64>) -> f64 {
    values.fold(None, |acc: Option<f64>, v| Some(acc.map_or(v, |a| a.max(v)))).unwrap_or(0.0)
}

fn whitened_extremes(stats: &IndexStats, profile: &PopulationProfile) -> Result<(f64, f64)> {
    let w = &profile.record(stats.index)?.sigma_inv_sqrt;
    let m = w * &stats.sigma_n * w;
    let (values, _) = sym_eigen(&m);
    let root_n = (stats.n as f64).sqrt();
    Ok((root_n * (1.0 - values[0]), root_n * (values[values.len() - 1] - 1.0)))
}

fn g_from_stats(stats: &IndexStats, profile: &PopulationProfile) -> Result<f64> {
    let rec = profile.record(stats.index)?;
    let grad = stats.gradient(&rec.w_star);
    Ok(((stats.n as f64) * quad_form(&rec.sigma_inv, &grad)).max(0.0).sqrt())
}

fn delta_from_stats(stats: &IndexStats, reference: &IndexStats, profile: &PopulationProfile) -> Result<f64> {
    let t = stats.index;
    if profile.is_optimal(t) {
        return Err(Error::UndefinedDenominator(t));
    }
    let rt = profile.record(t)?;
    let rs = profile.record(reference.index)?;
    let gap = rt.approx_risk - profile.r_star();
    let diff = stats.risk(&rt.w_star) - reference.risk(&rs.w_star);
    Ok((stats.n as f64).sqrt() * (1.0 - diff / gap))
}

pub fn lambda_process(
    dataset: &Dataset,
    t: FeatureIndex,
    collection: &FeatureCollection,
    profile: &PopulationProfile,
) -> Result<f64> {
    Ok(whitened_extremes(&IndexStats::new(dataset, collection, t)?, profile)?.0)
}

pub fn g_process(
    dataset: &Dataset,
    t: FeatureIndex,
    collection: &FeatureCollection,
    profile: &PopulationProfile,
) -> Result<f64> {
    g_from_stats(&IndexStats::new(dataset, collection, t)?, profile)
}

pub fn delta_process(
    dataset: &Dataset,
    t: FeatureIndex,
    t_star: FeatureIndex,
    collection: &FeatureCollection,
    profile: &PopulationProfile,
) -> Result<f64> {
    if profile.is_optimal(t) {
        return Err(Error::UndefinedDenominator(t));
    }
    if !profile.is_optimal(t_star) {
        return Err(Error::InvalidArgument(format!("reference {t_star} is not optimal")));
    }
    let st = IndexStats::new(dataset, collection, t)?;
    let ss = IndexStats::new(dataset, collection, t_star)?;
    delta_from_stats(&st, &ss, profile)
}

impl ProcessSnapshot {
    /// Snapshot from per-index statistics in collection order.
    pub fn from_stats(stats: &[IndexStats], profile: &PopulationProfile) -> Result<Self> {
        let reference = profile.reference();
        let ref_stats = &stats[reference.0];
        let mut per_index = Vec::with_capacity(stats.len());
        for st in stats {
            let (lambda, lambda_upper) = whitened_extremes(st, profile)?;
            let g = g_from_stats(st, profile)?;
            let delta =
                if profile.is_optimal(st.index) { None } else { Some(delta_from_stats(st, ref_stats, profile)?) };
            per_index.push(IndexProcess { index: st.index, lambda, lambda_upper, g, delta });
        }
        Ok(Self {
            n: ref_stats.n,
            reference,
            sup_lambda: sup(per_index.iter().map(|p| p.lambda)),
            sup_lambda_upper: sup(per_index.iter().map(|p| p.lambda_upper)),
            sup_g2: sup(per_index.iter().map(|p| p.g * p.g)),
            sup_delta: sup(per_index.iter().filter_map(|p| p.delta)),
            per_index,
        })
    }

    pub fn compute(dataset: &Dataset, collection: &FeatureCollection, profile: &PopulationProfile) -> Result<Self> {
        Self::from_stats(&collection_stats(dataset, collection)?, profile)
    }

    /// Supremum of `kind` over `subset`; zero over an empty set.
    pub fn sup_over(&self, kind: ProcessKind, subset: &[FeatureIndex]) -> f64 {
        let values = subset.iter().filter_map(|t| self.per_index.get(t.0)).filter_map(|p| kind.value(p));
        sup(values)
    }
}

/// Which supremum an expectation is taken of.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum ProcessKind {
    Lambda,
    GSquared,
    Delta,
    DeltaSquared,
}

impl ProcessKind {
    fn value(self, p: &IndexProcess) -> Option<f64> {
        match self {
            ProcessKind::Lambda => Some(p.lambda),
            ProcessKind::GSquared => Some(p.g * p.g),
            ProcessKind::Delta => p.delta,
            ProcessKind::DeltaSquared => p.delta.map(|d| d * d),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
#[serde(tag = "mode", rename_all = "snake_case")]
pub enum SupMode {
    MonteCarlo {
        trials: usize,
        seed: u64,
    },
    /// Sum over every sample composition of a discrete law.
    Exact {
        cap: u128,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SupEstimate {
    pub estimate: f64,
    pub se: f64,
    pub mode: SupMode,
}

impl SupEstimate {
    /// `estimate + 3 se`.
    pub fn conservative(&self) -> f64 {
        self.estimate + 3.0 * self.se
    }
}

/// `E[sup_{t in subset} kind_n(t)]` at sample size `n`.
pub fn expected_sup(
    kind: ProcessKind,
    subset: &[FeatureIndex],
    n: usize,
    law: &JointDistribution,
    collection: &FeatureCollection,
    profile: &PopulationProfile,
    mode: SupMode,
) -> Result<SupEstimate> {
    if n == 0 {
        return Err(Error::EmptySample);
    }
    let relevant: Vec<FeatureIndex> = match kind {
        ProcessKind::Delta | ProcessKind::DeltaSquared => {
            subset.iter().copied().filter(|t| !profile.is_optimal(*t)).collect()
        }
        _ => subset.to_vec(),
    };
    if relevant.is_empty() {
        return Ok(SupEstimate { estimate: 0.0, se: 0.0, mode });
    }
    let mut needed = relevant.clone();
    if matches!(kind, ProcessKind::Delta | ProcessKind::DeltaSquared) {
        needed.push(profile.reference());
    }
    needed.sort();
    needed.dedup();
    let value_on = |data: &Dataset| -> Result<f64> {
        let mut stats = Vec::with_capacity(needed.len());
        for &t in &needed {
            stats.push(IndexStats::new(data, collection, t)?);
        }
        let find = |t: FeatureIndex| &stats[needed.binary_search(&t).expect("needed index")];
        let mut vals = Vec::with_capacity(relevant.len());
        for &t in &relevant {
            let st = find(t);
            let v = match kind {
                ProcessKind::Lambda => whitened_extremes(st, profile)?.0,
                ProcessKind::GSquared => g_from_stats(st, profile)?.powi(2),
                ProcessKind::Delta => delta_from_stats(st, find(profile.reference()), profile)?,
                ProcessKind::DeltaSquared => delta_from_stats(st, find(profile.reference()), profile)?.powi(2),
            };
            vals.push(v);
        }
        Ok(sup(vals.into_iter()))
    };
    match mode {
        SupMode::MonteCarlo { trials, seed } => {
            if trials < MIN_SUP_TRIALS {
                return Err(Error::InsufficientTrials { needed: MIN_SUP_TRIALS, got: trials });
            }
            let values = (0..trials as u64)
                .into_par_iter()
                .map(|i| value_on(&law.sample(n, seed, i)?))
                .collect::<Result<Vec<f64>>>()?;
            let m = mean_se(&values);
            Ok(SupEstimate { estimate: m.mean, se: m.se, mode })
        }
        SupMode::Exact { cap } => {
            let discrete = law.as_discrete()?;
            let mut acc = 0.0;
            let mut failure = None;
            discrete.for_each_composition(n, cap, |counts, p| {
                if failure.is_some() {
                    return;
                }
                match discrete.dataset_from_counts(counts, None).and_then(|d| value_on(&d)) {
                    Ok(v) => acc += p * v,
                    Err(e) => failure = Some(e),
                }
            })?;
            if let Some(e) = failure {
                return Err(e);
            }
            Ok(SupEstimate { estimate: acc, se: 0.0, mode })
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::instances;
    use crate::linalg::{Matrix, Vector};
    use crate::model::{DiscreteLaw, FeatureMap};
    use crate::population::Tolerances;
    use proptest::prelude::*;
    use rand::Rng;

    fn profile_of(inst: &instances::Instance) -> PopulationProfile {
        PopulationProfile::compute(&inst.law, &inst.collection, Tolerances::default()).unwrap()
    }

    #[test]
    fn identity_dataset_has_zero_lambda() {
        let inst = instances::can_a();
        let p = profile_of(&inst);
        let law = inst.law.as_discrete().unwrap();
        // Two copies of every atom reproduce the population second moments.
        let data = law.dataset_from_counts(&vec![2; law.len()], None).unwrap();
        for t in inst.collection.indices() {
            assert!(lambda_process(&data, t, &inst.collection, &p).unwrap().abs() < 1e-12);
        }
        // Same data: empirical and population risk differences agree.
        let d = delta_process(&data, FeatureIndex(1), FeatureIndex(0), &inst.collection, &p).unwrap();
        assert!(d.abs() < 1e-10);
        assert!(matches!(
            delta_process(&data, FeatureIndex(0), FeatureIndex(0), &inst.collection, &p),
            Err(Error::UndefinedDenominator(_))
        ));
    }

    #[test]
    fn single_point_examples() {
        let law = JointDistribution::Discrete(DiscreteLaw::uniform(vec![(vec![1.0], 3.0)]).unwrap());
        let coll = FeatureCollection::new(vec![("x".into(), FeatureMap::identity(1))]).unwrap();
        let p = PopulationProfile::compute(&law, &coll, Tolerances::default()).unwrap();
        let data = law.sample(1, 0, 0).unwrap();
        assert_eq!(lambda_process(&data, FeatureIndex(0), &coll, &p).unwrap(), 0.0);
        // Whitened gradient of a single sample with g = Sigma^{1/2} e_1.
        let data = Dataset::from_pairs(vec![(vec![1.0], 2.0)]).unwrap();
        assert!((g_process(&data, FeatureIndex(0), &coll, &p).unwrap() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn noiseless_gradient_vanishes() {
        let inst = instances::realizable_noiseless();
        let p = profile_of(&inst);
        for trial in 0..10 {
            let data = inst.law.sample(7, 4, trial).unwrap();
            assert!(g_process(&data, FeatureIndex(0), &inst.collection, &p).unwrap() < 1e-12);
        }
        let est = expected_sup(
            ProcessKind::GSquared,
            &[FeatureIndex(0)],
            5,
            &inst.law,
            &inst.collection,
            &p,
            SupMode::MonteCarlo { trials: 100, seed: 1 },
        )
        .unwrap();
        assert!(est.estimate < 1e-20 && est.se < 1e-20);
    }

    #[test]
    fn lambda_matches_direct_eigen_oracle() {
        let inst = instances::can_a();
        let p = profile_of(&inst);
        let data = inst.law.sample(20, 8, 0).unwrap();
        for t in inst.collection.indices() {
            let j = t.0;
            let sn: f64 = data.expanded().map(|(x, _)| x.coords()[j].powi(2)).sum::<f64>() / 20.0;
            let direct = 20f64.sqrt() * (1.0 - sn / p.record(t).unwrap().sigma[(0, 0)]);
            assert!((lambda_process(&data, t, &inst.collection, &p).unwrap() - direct).abs() < 1e-10);
        }
    }

    #[test]
    fn empty_subset_has_zero_supremum() {
        let inst = instances::can_a();
        let p = profile_of(&inst);
        let mode = SupMode::MonteCarlo { trials: 100, seed: 0 };
        let e =
            expected_sup(ProcessKind::Delta, &[FeatureIndex(0)], 10, &inst.law, &inst.collection, &p, mode).unwrap();
        assert_eq!((e.estimate, e.se), (0.0, 0.0));
        assert!(matches!(
            expected_sup(
                ProcessKind::Lambda,
                &[FeatureIndex(0)],
                10,
                &inst.law,
                &inst.collection,
                &p,
                SupMode::MonteCarlo { trials: 10, seed: 0 }
            ),
            Err(Error::InsufficientTrials { .. })
        ));
    }

    #[test]
    fn exact_mode_matches_monte_carlo_on_two_atoms() {
        let law = JointDistribution::Discrete(DiscreteLaw::uniform(vec![(vec![1.0], 1.0), (vec![2.0], 0.0)]).unwrap());
        let coll = FeatureCollection::new(vec![("x".into(), FeatureMap::identity(1))]).unwrap();
        let p = PopulationProfile::compute(&law, &coll, Tolerances::default()).unwrap();
        for kind in [ProcessKind::GSquared, ProcessKind::Lambda] {
            let exact =
                expected_sup(kind, &[FeatureIndex(0)], 2, &law, &coll, &p, SupMode::Exact { cap: 1000 }).unwrap();
            let mc = expected_sup(
                kind,
                &[FeatureIndex(0)],
                2,
                &law,
                &coll,
                &p,
                SupMode::MonteCarlo { trials: 1_000_000, seed: 5 },
            )
            .unwrap();
            assert!((exact.estimate - mc.estimate).abs() <= 4.0 * mc.se, "{kind:?}");
        }
    }

    #[test]
    fn g_squared_mean_matches_gradient_moment() {
        let inst = instances::can_a();
        let p = profile_of(&inst);
        let mode = SupMode::MonteCarlo { trials: 100_000, seed: 21 };
        for t in inst.collection.indices() {
            let e = expected_sup(ProcessKind::GSquared, &[t], 10, &inst.law, &inst.collection, &p, mode).unwrap();
            let target = p.record(t).unwrap().grad_second_moment;
            assert!((e.estimate - target).abs() <= 3.0 * e.se, "{t}: {} vs {target}", e.estimate);
            // For n = 1 the identity holds exactly.
            let x = expected_sup(
                ProcessKind::GSquared,
                &[t],
                1,
                &inst.law,
                &inst.collection,
                &p,
                SupMode::Exact { cap: 100 },
            )
            .unwrap();
            assert!((x.estimate - target).abs() < 1e-12);
        }
    }

    #[test]
    fn delta_is_centred() {
        let inst = instances::can_a();
        let p = profile_of(&inst);
        let mode = SupMode::MonteCarlo { trials: 100_000, seed: 2 };
        let e =
            expected_sup(ProcessKind::Delta, &[FeatureIndex(1)], 25, &inst.law, &inst.collection, &p, mode).unwrap();
        assert!(e.estimate.abs() <= 4.0 * e.se, "{} +- {}", e.estimate, e.se);
    }

    #[test]
    fn expected_sup_lambda_does_not_grow_with_n() {
        let inst = instances::can_a();
        let p = profile_of(&inst);
        let all = inst.collection.indices();
        let est: Vec<SupEstimate> = [50, 100, 200]
            .iter()
            .map(|&n| {
                let mode = SupMode::MonteCarlo { trials: 20_000, seed: n as u64 };
                expected_sup(ProcessKind::Lambda, &all, n, &inst.law, &inst.collection, &p, mode).unwrap()
            })
            .collect();
        for w in est.windows(2) {
            let slack = 3.0 * (w[0].se.powi(2) + w[1].se.powi(2)).sqrt();
            assert!(w[1].estimate <= w[0].estimate + slack);
        }
    }

    #[test]
    fn parallel_and_serial_estimates_agree() {
        let inst = instances::can_a();
        let p = profile_of(&inst);
        let mode = SupMode::MonteCarlo { trials: 500, seed: 3 };
        let all = inst.collection.indices();
        let a = expected_sup(ProcessKind::GSquared, &all, 30, &inst.law, &inst.collection, &p, mode).unwrap();
        let pool = rayon::ThreadPoolBuilder::new().num_threads(1).build().unwrap();
        let b = pool
            .install(|| expected_sup(ProcessKind::GSquared, &all, 30, &inst.law, &inst.collection, &p, mode))
            .unwrap();
        assert_eq!(a.estimate.to_bits(), b.estimate.to_bits());
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(24))]

        #[test]
        fn variational_form_certifies_lambda(seed in any::<u64>(), n in 2usize..30) {
            let inst = instances::random_instance(seed);
            let p = profile_of(&inst);
            let data = inst.law.sample(n, seed, 0).unwrap();
            let mut rng = crate::seeds::trial_rng(seed, 77);
            for st in collection_stats(&data, &inst.collection).unwrap() {
                let rec = p.record(st.index).unwrap();
                let lam = whitened_extremes(&st, &p).unwrap().0;
                let m = &rec.sigma_inv_sqrt * &st.sigma_n * &rec.sigma_inv_sqrt;
                let (_, vecs) = sym_eigen(&m);
                let objective = |v: &Vector| {
                    let v = v / v.norm();
                    let mut acc = 0.0;
                    for (phi, _, w) in &st.rows {
                        let psi = &rec.sigma_inv_sqrt * phi;
                        acc += w * (1.0 - v.dot(&psi).powi(2));
                    }
                    (n as f64).sqrt() * acc
                };
                let mut best = f64::NEG_INFINITY;
                for _ in 0..200 {
                    let v = Vector::from_fn(rec.dim, |_, _| rng.random_range(-1.0..1.0));
                    let val = objective(&v);
                    prop_assert!(val <= lam + 1e-9);
                    best = best.max(val);
                }
                let top = objective(&vecs.column(0).into_owned());
                prop_assert!((top - lam).abs() <= 1e-6);
                prop_assert!(best <= lam + 1e-9);
            }
        }

        #[test]
        fn g_is_invariant_to_reparametrization(seed in any::<u64>(), n in 1usize..30) {
            let inst = instances::random_instance(seed);
            let p = profile_of(&inst);
            let mut rng = crate::seeds::trial_rng(seed, 5);
            let maps = inst
                .collection
                .entries()
                .iter()
                .map(|e| {
                    let a: Matrix = instances::random_invertible(e.map.dim(), &mut rng);
                    (e.label.clone(), e.map.transformed(a).unwrap())
                })
                .collect();
            let moved = FeatureCollection::new(maps).unwrap();
            let q = PopulationProfile::compute(&inst.law, &moved, Tolerances::default()).unwrap();
            let data = inst.law.sample(n, seed, 1).unwrap();
            for t in inst.collection.indices() {
                let a = g_process(&data, t, &inst.collection, &p).unwrap();
                let b = g_process(&data, t, &moved, &q).unwrap();
                prop_assert!((a - b).abs() <= 1e-8 * a.max(1.0));
            }
        }
    }
}
