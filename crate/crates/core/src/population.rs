//! Exact population quantities: covariances, best linear predictors, their
//! risks, the optimal set and gradient covariances.

use serde::Serialize;

use crate::error::{Error, Result};
use crate::linalg::{quad_form, spd_inverse_parts, symmetrize, Matrix, Vector};
use crate::model::{DiscreteLaw, FeatureCollection, FeatureIndex, GaussianDesign, JointDistribution, LAMBDA_MIN_GUARD};

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Tolerances {
    /// `t` is optimal when `approx_risk(t) - R_* <= optimality_rel * max(1, R_*)`.
    pub optimality_rel: f64,
    /// Smallest admissible eigenvalue of `Sigma(t)`.
    pub lambda_min_guard: f64,
}

impl Default for Tolerances {
    fn default() -> Self {
        Self { optimality_rel: 1e-10, lambda_min_guard: LAMBDA_MIN_GUARD }
    }
}

/// Where the numbers of a profile come from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum ProfileSource {
    /// Finite sums over the atoms of a discrete law.
    Enumeration,
    /// Closed-form Gaussian moments for linear maps of a Gaussian design.
    GaussianClosedForm,
}

#[derive(Debug, Clone)]
pub struct IndexProfile {
    pub index: FeatureIndex,
    pub dim: usize,
    pub sigma: Matrix,
    pub sigma_inv_sqrt: Matrix,
    pub sigma_inv: Matrix,
    pub w_star: Vector,
    /// `R(t, w_*(t))`.
    pub approx_risk: f64,
    /// `E ||g(t, (X, Y))||^2_{Sigma(t)^{-1}}`.
    pub grad_second_moment: f64,
    /// `G(t, t)`.
    pub grad_cov: Matrix,
}

/// Per-atom evaluations at the population optimum, indexed `[t][atom]`.
#[derive(Debug, Clone)]
pub struct AtomTables {
    pub weights: Vec<f64>,
    pub features: Vec<Vec<Vector>>,
    pub gradients: Vec<Vec<Vector>>,
    /// `Sigma(t)^{-1/2} g(t, atom)`.
    pub whitened_gradients: Vec<Vec<Vector>>,
    /// `l(<w_*(t), phi_t(x)>, y)`.
    pub losses: Vec<Vec<f64>>,
}

#[derive(Debug, Clone)]
struct ClosedFormParts {
    maps: Vec<Matrix>,
    residual_dirs: Vec<Vector>,
    noise_var: f64,
}

#[derive(Debug, Clone)]
pub struct PopulationProfile {
    records: Vec<IndexProfile>,
    r_star: f64,
    optimal: Vec<FeatureIndex>,
    gap: f64,
    source: ProfileSource,
    mixed_dimensions: bool,
    tables: Option<AtomTables>,
    closed_form: Option<ClosedFormParts>,
}

fn finish_record(
    index: FeatureIndex,
    sigma: Matrix,
    b: &Vector,
    guard: f64,
) -> Result<(Matrix, Matrix, Matrix, Vector)> {
    let sigma = symmetrize(&sigma);
    let (inv_sqrt, inv) =
        spd_inverse_parts(&sigma, guard).map_err(|lo| Error::DegenerateFeature { index, lambda_min: lo })?;
    let w_star = sigma.clone().cholesky().map(|c| c.solve(b)).unwrap_or_else(|| &inv * b);
    Ok((sigma, inv_sqrt, inv, w_star))
}

impl PopulationProfile {
    /// Exact profile of a discrete law; generative laws are rejected.
    pub fn compute(law: &JointDistribution, collection: &FeatureCollection, tol: Tolerances) -> Result<Self> {
        Self::exact(law.as_discrete()?, collection, tol)
    }

    pub fn exact(law: &DiscreteLaw, collection: &FeatureCollection, tol: Tolerances) -> Result<Self> {
        collection.validate(law)?;
        let weights = law.weights();
        let mut records = Vec::with_capacity(collection.len());
        let mut tables = AtomTables {
            weights: weights.clone(),
            features: Vec::new(),
            gradients: Vec::new(),
            whitened_gradients: Vec::new(),
            losses: Vec::new(),
        };
        for entry in collection.entries() {
            let d = entry.map.dim();
            let feats: Vec<Vector> = law.atoms().iter().map(|a| entry.map.eval(a.x.coords())).collect();
            let mut sigma = Matrix::zeros(d, d);
            let mut b = Vector::zeros(d);
            for (phi, atom) in feats.iter().zip(law.atoms()) {
                sigma += phi * phi.transpose() * atom.weight;
                b += phi * (atom.y * atom.weight);
            }
            let (sigma, inv_sqrt, inv, w_star) = finish_record(entry.index, sigma, &b, tol.lambda_min_guard)?;
            let mut approx = 0.0;
            let mut grad_cov = Matrix::zeros(d, d);
            let mut moment = 0.0;
            let mut grads = Vec::with_capacity(feats.len());
            let mut white = Vec::with_capacity(feats.len());
            let mut losses = Vec::with_capacity(feats.len());
            for (phi, atom) in feats.iter().zip(law.atoms()) {
                let r = w_star.dot(phi) - atom.y;
                let loss = 0.5 * r * r;
                let g = phi * r;
                approx += atom.weight * loss;
                grad_cov += &g * g.transpose() * atom.weight;
                moment += atom.weight * quad_form(&inv, &g);
                white.push(&inv_sqrt * &g);
                grads.push(g);
                losses.push(loss);
            }
            tables.features.push(feats);
            tables.gradients.push(grads);
            tables.whitened_gradients.push(white);
            tables.losses.push(losses);
            records.push(IndexProfile {
                index: entry.index,
                dim: d,
                sigma,
                sigma_inv_sqrt: inv_sqrt,
                sigma_inv: inv,
                w_star,
                approx_risk: approx,
                grad_second_moment: moment,
                grad_cov: symmetrize(&grad_cov),
            });
        }
        Ok(Self::assemble(records, collection, tol, ProfileSource::Enumeration, Some(tables), None))
    }

    /// Closed-form profile for linear maps `phi_t(x) = M_t x` of a Gaussian
    /// design `X ~ N(0, I)`, `Y = <beta, X> + eps`.
    pub fn gaussian_design(design: &GaussianDesign, collection: &FeatureCollection, tol: Tolerances) -> Result<Self> {
        let beta = Vector::from_column_slice(&design.target);
        let noise_var = design.noise.variance();
        let mut records = Vec::with_capacity(collection.len());
        let mut maps = Vec::with_capacity(collection.len());
        let mut dirs = Vec::with_capacity(collection.len());
        for entry in collection.entries() {
            let m = entry.map.linear_part().ok_or_else(|| {
                Error::InvalidArgument(format!("closed-form profile needs a linear map; {} is not", entry.label))
            })?;
            if m.ncols() != design.dim() {
                return Err(Error::DimensionMismatch {
                    context: "feature map input dimension",
                    expected: design.dim(),
                    got: m.ncols(),
                });
            }
            let sigma = &m * m.transpose();
            let b = &m * &beta;
            let (sigma, inv_sqrt, inv, w_star) = finish_record(entry.index, sigma, &b, tol.lambda_min_guard)?;
            let u = &beta - m.transpose() * &w_star;
            let approx = 0.5 * (u.norm_squared() + noise_var);
            let grad_cov = closed_form_cross(&m, &u, &m, &u, noise_var);
            let moment = (&inv * &grad_cov).trace();
            records.push(IndexProfile {
                index: entry.index,
                dim: m.nrows(),
                sigma,
                sigma_inv_sqrt: inv_sqrt,
                sigma_inv: inv,
                w_star,
                approx_risk: approx,
                grad_second_moment: moment,
                grad_cov: symmetrize(&grad_cov),
            });
            maps.push(m);
            dirs.push(u);
        }
        let parts = ClosedFormParts { maps, residual_dirs: dirs, noise_var };
        Ok(Self::assemble(records, collection, tol, ProfileSource::GaussianClosedForm, None, Some(parts)))
    }

    fn assemble(
        records: Vec<IndexProfile>,
        collection: &FeatureCollection,
        tol: Tolerances,
        source: ProfileSource,
        tables: Option<AtomTables>,
        closed_form: Option<ClosedFormParts>,
    ) -> Self {
        let r_star = records.iter().map(|r| r.approx_risk).fold(f64::INFINITY, f64::min);
        let slack = tol.optimality_rel * r_star.abs().max(1.0);
        let optimal: Vec<FeatureIndex> =
            records.iter().filter(|r| r.approx_risk - r_star <= slack).map(|r| r.index).collect();
        let gap = records
            .iter()
            .filter(|r| !optimal.contains(&r.index))
            .map(|r| r.approx_risk - r_star)
            .fold(f64::INFINITY, f64::min);
        Self {
            records,
            r_star,
            optimal,
            gap,
            source,
            mixed_dimensions: collection.mixed_dimensions(),
            tables,
            closed_form,
        }
    }

    pub fn records(&self) -> &[IndexProfile] {
        &self.records
    }

    pub fn record(&self, t: FeatureIndex) -> Result<&IndexProfile> {
        self.records.get(t.0).ok_or(Error::UnknownIndex(t))
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn indices(&self) -> Vec<FeatureIndex> {
        self.records.iter().map(|r| r.index).collect()
    }

    pub fn r_star(&self) -> f64 {
        self.r_star
    }

    /// `T_*`, in index order.
    pub fn optimal(&self) -> &[FeatureIndex] {
        &self.optimal
    }

    /// `T \ T_*`, in index order.
    pub fn suboptimal(&self) -> Vec<FeatureIndex> {
        self.records.iter().map(|r| r.index).filter(|t| !self.optimal.contains(t)).collect()
    }

    pub fn is_optimal(&self, t: FeatureIndex) -> bool {
        self.optimal.contains(&t)
    }

    /// The least element of `T_*`.
    pub fn reference(&self) -> FeatureIndex {
        self.optimal[0]
    }

    /// Smallest positive suboptimality; `+inf` when `T_* = T`.
    pub fn gap(&self) -> f64 {
        self.gap
    }

    pub fn source(&self) -> ProfileSource {
        self.source
    }

    pub fn mixed_dimensions(&self) -> bool {
        self.mixed_dimensions
    }

    pub fn tables(&self) -> Option<&AtomTables> {
        self.tables.as_ref()
    }

    /// `R(t, w_*(t)) - R_*`, set to exactly zero on `T_*`.
    pub fn suboptimality(&self, t: FeatureIndex) -> Result<f64> {
        if self.is_optimal(t) {
            return Ok(0.0);
        }
        Ok(self.record(t)?.approx_risk - self.r_star)
    }

    /// `R(t, w) - R_* = 1/2 ||w - w_*(t)||^2_{Sigma(t)} + (R(t, w_*(t)) - R_*)`.
    pub fn excess_risk(&self, t: FeatureIndex, w: &Vector) -> Result<f64> {
        let rec = self.record(t)?;
        if w.len() != rec.dim {
            return Err(Error::DimensionMismatch { context: "weights", expected: rec.dim, got: w.len() });
        }
        let diff = w - &rec.w_star;
        Ok((0.5 * quad_form(&rec.sigma, &diff)).max(0.0) + self.suboptimality(t)?)
    }

    /// `G(t, s) = E[g(t, Z) g(s, Z)^T]`.
    pub fn gradient_covariance(&self, t: FeatureIndex, s: FeatureIndex) -> Result<Matrix> {
        let (rt, rs) = (self.record(t)?, self.record(s)?);
        if let Some(tab) = &self.tables {
            let mut out = Matrix::zeros(rt.dim, rs.dim);
            for (a, &w) in tab.weights.iter().enumerate() {
                out += &tab.gradients[t.0][a] * tab.gradients[s.0][a].transpose() * w;
            }
            return Ok(out);
        }
        let cf = self.closed_form.as_ref().expect("profile has one source");
        Ok(closed_form_cross(
            &cf.maps[t.0],
            &cf.residual_dirs[t.0],
            &cf.maps[s.0],
            &cf.residual_dirs[s.0],
            cf.noise_var,
        ))
    }

    /// `Sigma(t)^{-1/2} G(t, s) Sigma(s)^{-1/2}`.
    pub fn whitened_gradient_covariance(&self, t: FeatureIndex, s: FeatureIndex) -> Result<Matrix> {
        let g = self.gradient_covariance(t, s)?;
        Ok(&self.record(t)?.sigma_inv_sqrt * g * &self.record(s)?.sigma_inv_sqrt)
    }
}

/// `E[(u_t.x + e)(u_s.x + e) M_t x x^T M_s^T]` for `x ~ N(0, I)`, by Isserlis.
fn closed_form_cross(mt: &Matrix, ut: &Vector, ms: &Matrix, us: &Vector, noise_var: f64) -> Matrix {
    let scalar = ut.dot(us) + noise_var;
    let a = mt * us;
    let b = ms * ut;
    mt * ms.transpose() * scalar + &a * b.transpose() + (mt * ut) * (ms * us).transpose()
}

/// `Sigma(t)`, exactly.
pub fn covariance(t: FeatureIndex, law: &JointDistribution, collection: &FeatureCollection) -> Result<Matrix> {
    let map = &collection.get(t)?.map;
    let d = map.dim();
    let sigma = law.exact_expectation(|x, _| {
        let phi = map.eval(x.coords());
        &phi * phi.transpose()
    });
    let sigma = symmetrize(&sigma.map_err(|_| Error::GenerativeLaw)?);
    let lo = if d == 0 { 0.0 } else { crate::linalg::lambda_min(&sigma) };
    if lo.is_nan() || lo <= LAMBDA_MIN_GUARD {
        return Err(Error::DegenerateFeature { index: t, lambda_min: lo });
    }
    Ok(sigma)
}

/// `w_*(t) = Sigma(t)^{-1} E[phi_t(X) Y]`.
pub fn optimal_weights(t: FeatureIndex, law: &JointDistribution, collection: &FeatureCollection) -> Result<Vector> {
    let sigma = covariance(t, law, collection)?;
    let map = &collection.get(t)?.map;
    let b = law.exact_expectation(|x, y| map.eval(x.coords()) * y)?;
    let (_, _, _, w) = finish_record(t, sigma, &b, LAMBDA_MIN_GUARD)?;
    Ok(w)
}

/// `R(t, w) = E[l(<w, phi_t(X)>, Y)]`, exactly.
pub fn population_risk(
    law: &JointDistribution,
    collection: &FeatureCollection,
    t: FeatureIndex,
    w: &Vector,
) -> Result<f64> {
    let map = &collection.get(t)?.map;
    law.exact_expectation(|x, y| {
        let r = w.dot(&map.eval(x.coords())) - y;
        0.5 * r * r
    })
}
