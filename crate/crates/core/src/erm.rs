//! Empirical risk minimization: per-index least squares and the joint argmin.

use serde::Serialize;

use crate::error::{Error, Result};
use crate::linalg::{lambda_min, psd_solve, symmetrize, Matrix, Vector};
use crate::model::{Dataset, FeatureCollection, FeatureIndex};
use crate::population::PopulationProfile;

/// Empirical risks closer than this are ties, broken by index order.
pub const TIE_TOL: f64 = 1e-12;

/// Features of one index evaluated on a dataset, with the sample covariance
/// `Sigma_n(t)` and `b_n(t) = n^{-1} sum phi_t(x_i) y_i`.
#[derive(Debug, Clone)]
pub struct IndexStats {
    pub index: FeatureIndex,
    pub n: usize,
    /// `(phi_t(x), y, multiplicity / n)` for every distinct row.
    pub rows: Vec<(Vector, f64, f64)>,
    pub sigma_n: Matrix,
    pub b_n: Vector,
}

impl IndexStats {
    pub fn new(dataset: &Dataset, collection: &FeatureCollection, t: FeatureIndex) -> Result<Self> {
        let map = &collection.get(t)?.map;
        let d = map.dim();
        let n = dataset.n();
        let mut sigma_n = Matrix::zeros(d, d);
        let mut b_n = Vector::zeros(d);
        let rows: Vec<(Vector, f64, f64)> =
            dataset.samples().iter().map(|s| (map.eval(s.x.coords()), s.y, s.count as f64 / n as f64)).collect();
        for (phi, y, w) in &rows {
            sigma_n += phi * phi.transpose() * *w;
            b_n += phi * (y * w);
        }
        Ok(Self { index: t, n, rows, sigma_n: symmetrize(&sigma_n), b_n })
    }

    pub fn dim(&self) -> usize {
        self.b_n.len()
    }

    /// `R_n(t, w)`, accumulated from residuals.
    pub fn risk(&self, w: &Vector) -> f64 {
        self.rows
            .iter()
            .map(|(phi, y, p)| {
                let r = w.dot(phi) - y;
                0.5 * r * r * p
            })
            .sum()
    }

    /// `grad_w R_n(t, w)`, accumulated from residuals.
    pub fn gradient(&self, w: &Vector) -> Vector {
        let mut g = Vector::zeros(self.dim());
        for (phi, y, p) in &self.rows {
            g += phi * ((w.dot(phi) - y) * p);
        }
        g
    }
}

/// Per-index least-squares fit.
#[derive(Debug, Clone, Serialize)]
pub struct IndexFit {
    pub index: FeatureIndex,
    pub weights: Vec<f64>,
    pub empirical_risk: f64,
    /// Smallest eigenvalue of the whitened sample covariance when a profile
    /// was supplied, otherwise of the raw sample covariance.
    pub lambda_min: f64,
    pub whitened: bool,
    pub singular: bool,
}

impl IndexFit {
    pub fn weight_vector(&self) -> Vector {
        Vector::from_column_slice(&self.weights)
    }
}

pub fn fit_from_stats(stats: &IndexStats, profile: Option<&PopulationProfile>) -> Result<IndexFit> {
    let sol = psd_solve(&stats.sigma_n, &stats.b_n);
    let (lambda, whitened) = match profile {
        Some(p) => {
            let w = &p.record(stats.index)?.sigma_inv_sqrt;
            (min_eig(&(w * &stats.sigma_n * w)), true)
        }
        None => (min_eig(&stats.sigma_n), false),
    };
    Ok(IndexFit {
        index: stats.index,
        empirical_risk: stats.risk(&sol.x),
        weights: sol.x.iter().copied().collect(),
        lambda_min: lambda,
        whitened,
        singular: sol.singular,
    })
}

fn min_eig(m: &Matrix) -> f64 {
    if m.nrows() == 0 {
        0.0
    } else {
        lambda_min(m)
    }
}

/// A minimizer of `R_n(t, .)`; the minimum-norm one when `Sigma_n(t)` is singular.
pub fn fit_linear(
    dataset: &Dataset,
    t: FeatureIndex,
    collection: &FeatureCollection,
    profile: Option<&PopulationProfile>,
) -> Result<IndexFit> {
    fit_from_stats(&IndexStats::new(dataset, collection, t)?, profile)
}

/// `R_n(t, w) = n^{-1} sum 1/2 (<w, phi_t(x_i)> - y_i)^2`.
pub fn empirical_risk(t: FeatureIndex, w: &Vector, dataset: &Dataset, collection: &FeatureCollection) -> Result<f64> {
    let map = &collection.get(t)?.map;
    if w.len() != map.dim() {
        return Err(Error::DimensionMismatch { context: "weights", expected: map.dim(), got: w.len() });
    }
    let n = dataset.n() as f64;
    Ok(dataset
        .samples()
        .iter()
        .map(|s| {
            let r = w.dot(&map.eval(s.x.coords())) - s.y;
            0.5 * r * r * s.count as f64
        })
        .sum::<f64>()
        / n)
}

/// Output of ERM over the whole collection.
#[derive(Debug, Clone, Serialize)]
pub struct ErmSolution {
    pub chosen: FeatureIndex,
    pub weights: Vec<f64>,
    pub empirical_risk: f64,
    pub singular: bool,
    pub table: Vec<IndexFit>,
}

impl ErmSolution {
    pub fn weight_vector(&self) -> Vector {
        Vector::from_column_slice(&self.weights)
    }

    fn from_table(table: Vec<IndexFit>) -> Self {
        let best = table.iter().map(|f| f.empirical_risk).fold(f64::INFINITY, f64::min);
        let pick = table.iter().find(|f| f.empirical_risk <= best + TIE_TOL).expect("non-empty table");
        Self {
            chosen: pick.index,
            weights: pick.weights.clone(),
            empirical_risk: pick.empirical_risk,
            singular: pick.singular,
            table,
        }
    }
}

/// ERM from precomputed statistics, one per index in collection order.
pub fn solve_from_stats(stats: &[IndexStats], profile: Option<&PopulationProfile>) -> Result<ErmSolution> {
    if stats.is_empty() {
        return Err(Error::EmptyCollection);
    }
    let table = stats.iter().map(|s| fit_from_stats(s, profile)).collect::<Result<Vec<_>>>()?;
    Ok(ErmSolution::from_table(table))
}

/// Per-index statistics for the whole collection.
pub fn collection_stats(dataset: &Dataset, collection: &FeatureCollection) -> Result<Vec<IndexStats>> {
    collection.indices().into_iter().map(|t| IndexStats::new(dataset, collection, t)).collect()
}

/// Joint argmin over `(t, w)`; exact ties go to the smaller index.
pub fn solve(
    dataset: &Dataset,
    collection: &FeatureCollection,
    profile: Option<&PopulationProfile>,
) -> Result<ErmSolution> {
    solve_from_stats(&collection_stats(dataset, collection)?, profile)
}

/// Fits only the least element of `T_*`.
pub fn oracle_solve(
    dataset: &Dataset,
    collection: &FeatureCollection,
    profile: &PopulationProfile,
) -> Result<ErmSolution> {
    let fit = fit_linear(dataset, profile.reference(), collection, Some(profile))?;
    Ok(ErmSolution::from_table(vec![fit]))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::instances;
    use crate::model::FeatureMap;
    use crate::population::Tolerances;
    use proptest::prelude::*;

    fn one_d() -> FeatureCollection {
        FeatureCollection::new(vec![("x".into(), FeatureMap::identity(1))]).unwrap()
    }

    #[test]
    fn interpolation_example() {
        let data = Dataset::from_pairs(vec![(vec![1.0], 2.0), (vec![2.0], 4.0)]).unwrap();
        let fit = fit_linear(&data, FeatureIndex(0), &one_d(), None).unwrap();
        assert!((fit.weights[0] - 2.0).abs() < 1e-14);
        assert!(fit.empirical_risk < 1e-28);
        assert!(!fit.singular);
    }

    #[test]
    fn single_sample_in_two_dimensions_is_singular() {
        let data = Dataset::from_pairs(vec![(vec![1.0, 1.0], 2.0)]).unwrap();
        let coll = FeatureCollection::new(vec![("id".into(), FeatureMap::identity(2))]).unwrap();
        let fit = fit_linear(&data, FeatureIndex(0), &coll, None).unwrap();
        assert!(fit.singular);
        assert!((fit.weights[0] - 1.0).abs() < 1e-12 && (fit.weights[1] - 1.0).abs() < 1e-12);
    }

    #[test]
    fn risk_examples() {
        let data = Dataset::from_pairs(vec![(vec![1.0], 2.0), (vec![2.0], -4.0)]).unwrap();
        let zero = Vector::zeros(1);
        let r = empirical_risk(FeatureIndex(0), &zero, &data, &one_d()).unwrap();
        assert!((r - 0.5 * (4.0 + 16.0) / 2.0).abs() < 1e-15);
    }

    #[test]
    fn fit_matches_independent_normal_equations() {
        let inst = instances::can_a();
        let data = inst.law.sample(50, 17, 0).unwrap();
        for t in inst.collection.indices() {
            let fit = fit_linear(&data, t, &inst.collection, None).unwrap();
            let j = t.0;
            let (mut sxx, mut sxy) = (0.0, 0.0);
            for (x, y) in data.expanded() {
                sxx += x.coords()[j] * x.coords()[j];
                sxy += x.coords()[j] * y;
            }
            assert!((fit.weights[0] - sxy / sxx).abs() < 1e-10);
        }
    }

    #[test]
    fn risk_matches_per_sample_loop() {
        let inst = instances::can_a();
        let data = inst.law.sample(37, 3, 1).unwrap();
        let w = Vector::from_element(1, 0.37);
        for t in inst.collection.indices() {
            let j = t.0;
            let naive: f64 =
                data.expanded().map(|(x, y)| 0.5 * (0.37 * x.coords()[j] - y).powi(2)).sum::<f64>() / data.n() as f64;
            let r = empirical_risk(t, &w, &data, &inst.collection).unwrap();
            assert!((r - naive).abs() < 1e-12);
        }
    }

    #[test]
    fn ties_go_to_the_smaller_index() {
        let inst = instances::symmetric_tie();
        // x1 and x2 swap roles between the two points, so both fits tie.
        let data = Dataset::from_pairs(vec![(vec![1.0, -1.0], 1.0), (vec![-1.0, 1.0], 1.0)]).unwrap();
        let sol = solve(&data, &inst.collection, None).unwrap();
        assert_eq!(sol.table[0].empirical_risk, sol.table[1].empirical_risk);
        assert_eq!(sol.chosen, FeatureIndex(0));
    }

    #[test]
    fn oracle_fits_reference_index() {
        let inst = instances::can_a();
        let p = PopulationProfile::compute(&inst.law, &inst.collection, Tolerances::default()).unwrap();
        for trial in 0..5 {
            let data = inst.law.sample(5, 2, trial).unwrap();
            assert_eq!(oracle_solve(&data, &inst.collection, &p).unwrap().chosen, FeatureIndex(0));
        }
        let r = instances::realizable_noiseless();
        let pr = PopulationProfile::compute(&r.law, &r.collection, Tolerances::default()).unwrap();
        let data = r.law.sample(10, 1, 0).unwrap();
        let sol = oracle_solve(&data, &r.collection, &pr).unwrap();
        assert!(pr.excess_risk(sol.chosen, &sol.weight_vector()).unwrap() < 1e-24);
    }

    #[test]
    fn canonical_instance_selects_a() {
        let inst = instances::can_a();
        let mut hits = 0;
        for trial in 0..1000 {
            let data = inst.law.sample(500, 99, trial).unwrap();
            if solve(&data, &inst.collection, None).unwrap().chosen == FeatureIndex(0) {
                hits += 1;
            }
        }
        assert!(hits >= 990, "{hits}");
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(48))]

        #[test]
        fn closed_form_and_excess_identities(seed in any::<u64>(), n in 3usize..40) {
            let inst = instances::random_instance(seed);
            let p = PopulationProfile::compute(&inst.law, &inst.collection, Tolerances::default()).unwrap();
            let data = inst.law.sample(n, seed, 7).unwrap();
            for st in collection_stats(&data, &inst.collection).unwrap() {
                let fit = fit_from_stats(&st, Some(&p)).unwrap();
                if fit.singular || fit.lambda_min < 1e-6 {
                    continue;
                }
                let rec = p.record(st.index).unwrap();
                let grad = st.gradient(&rec.w_star);
                let inv = st.sigma_n.clone().try_inverse().unwrap();
                let closed = &rec.w_star - &inv * &grad;
                let w = fit.weight_vector();
                prop_assert!((&closed - &w).norm() <= 1e-8 * w.norm().max(1.0));
                // Normal equations.
                let resid = &st.sigma_n * &w - &st.b_n;
                prop_assert!(resid.norm() <= 1e-8 * st.b_n.norm().max(1.0));
                // Empirical excess identity.
                let lhs = st.risk(&w) - st.risk(&rec.w_star);
                let rhs = -0.5 * grad.dot(&(&inv * &grad));
                prop_assert!((lhs - rhs).abs() <= 1e-8 * rhs.abs().max(1e-8));
            }
        }

        #[test]
        fn adding_an_index_never_increases_risk(seed in any::<u64>(), n in 2usize..30) {
            let inst = instances::random_instance(seed);
            let data = inst.law.sample(n, seed, 3).unwrap();
            let full = solve(&data, &inst.collection, None).unwrap();
            let keep: Vec<_> = inst.collection.indices().into_iter().take(inst.collection.len() - 1).collect();
            let sub = solve(&data, &inst.collection.restrict(&keep).unwrap(), None).unwrap();
            prop_assert!(full.empirical_risk <= sub.empirical_risk + TIE_TOL);
        }

        #[test]
        fn solve_is_deterministic(seed in any::<u64>()) {
            let inst = instances::random_instance(seed);
            let data = inst.law.sample(11, seed, 0).unwrap();
            let a = solve(&data, &inst.collection, None).unwrap();
            let b = solve(&data, &inst.collection, None).unwrap();
            prop_assert_eq!(serde_json::to_string(&a).unwrap(), serde_json::to_string(&b).unwrap());
        }
    }
}
