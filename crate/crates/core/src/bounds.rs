//! Closed-form constants, sample-size thresholds and excess-risk bounds.
//!
//! Logarithms are natural throughout.

use std::f64::consts::E;

use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::linalg::{lambda_max, Matrix, Vector};
use crate::localization::{self, ClosedFormComplexity, ExpectedSupComplexity};
use crate::model::{
    for_each_composition, multinomial_counts, FeatureCollection, FeatureIndex, GaussianDesign, JointDistribution,
};
use crate::population::{AtomTables, PopulationProfile};
use crate::processes::{expected_sup, ProcessKind, SupMode};
use crate::seeds::{derive, trial_rng};
use crate::stats::mean_se;

/// `c(m) = 5 sqrt(1 + ln m)` for a class of `m >= 1` functions.
pub fn c_factor(m: usize) -> Result<f64> {
    if m == 0 {
        return Err(Error::InvalidArgument("c(m) needs m >= 1".into()));
    }
    Ok(c_factor_real(m as f64))
}

/// `c(m)` at a real argument `m >= 1`.
pub fn c_factor_real(m: f64) -> f64 {
    5.0 * (1.0 + m.ln()).sqrt()
}

/// Whether a value is computed exactly or estimated.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Tag {
    Exact,
    Estimated,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Quantity {
    pub value: f64,
    pub tag: Tag,
    pub se: f64,
}

impl Quantity {
    pub fn exact(value: f64) -> Self {
        Self { value, tag: Tag::Exact, se: 0.0 }
    }

    pub fn estimated(value: f64, se: f64) -> Self {
        Self { value, tag: Tag::Estimated, se }
    }

    /// `value + 3 se`.
    pub fn conservative(&self) -> f64 {
        self.value + 3.0 * self.se
    }
}

fn draws_check(trials: usize) -> Result<()> {
    if trials < crate::processes::MIN_SUP_TRIALS {
        return Err(Error::InsufficientTrials { needed: crate::processes::MIN_SUP_TRIALS, got: trials });
    }
    Ok(())
}

/// Square root of a Monte Carlo mean, with a delta-method standard error.
fn sqrt_of_mean(values: &[f64]) -> Quantity {
    let m = mean_se(values);
    let root = m.mean.max(0.0).sqrt();
    let se = if root > 0.0 { m.se / (2.0 * root) } else { m.se.sqrt() };
    Quantity::estimated(root, se)
}

/// A finite class of vector-valued functions tabulated on the atoms of a
/// discrete law. Values are stored centred at their means.
#[derive(Debug, Clone)]
pub struct FiniteClass {
    weights: Vec<f64>,
    centred: Vec<Vec<Vector>>,
}

impl FiniteClass {
    /// `values[f][a]` is function `f` at atom `a`.
    pub fn new(weights: Vec<f64>, values: Vec<Vec<Vector>>) -> Result<Self> {
        if weights.is_empty() {
            return Err(Error::EmptySample);
        }
        let mut centred = Vec::with_capacity(values.len());
        for f in values {
            if f.len() != weights.len() {
                return Err(Error::DimensionMismatch { context: "class table", expected: weights.len(), got: f.len() });
            }
            let dim = f[0].len();
            if let Some(bad) = f.iter().find(|v| v.len() != dim) {
                return Err(Error::DimensionMismatch {
                    context: "class function value",
                    expected: dim,
                    got: bad.len(),
                });
            }
            let mut mean = Vector::zeros(dim);
            for (v, w) in f.iter().zip(&weights) {
                mean += v * *w;
            }
            centred.push(f.into_iter().map(|v| v - &mean).collect());
        }
        Ok(Self { weights, centred })
    }

    pub fn len(&self) -> usize {
        self.centred.len()
    }

    pub fn is_empty(&self) -> bool {
        self.centred.is_empty()
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    /// `max_f E ||f - E f||^2`.
    pub fn sigma2(&self) -> f64 {
        self.centred
            .iter()
            .map(|f| f.iter().zip(&self.weights).map(|(v, w)| w * v.norm_squared()).sum::<f64>())
            .fold(0.0, f64::max)
    }

    /// `max_f ||f(a) - E f||^2` for every atom `a`.
    pub fn atom_max(&self) -> Vec<f64> {
        (0..self.weights.len()).map(|a| self.centred.iter().map(|f| f[a].norm_squared()).fold(0.0, f64::max)).collect()
    }

    /// `r_n = E[max_{i, f} ||f(Z_i) - E f||^2]^{1/2}`, exactly, from the law
    /// of the largest of `n` draws of the per-atom maxima.
    pub fn r_n(&self, n: usize) -> f64 {
        if self.is_empty() || n == 0 {
            return 0.0;
        }
        let mut pairs: Vec<(f64, f64)> =
            self.atom_max().into_iter().zip(self.weights.iter().copied()).filter(|(_, w)| *w > 0.0).collect();
        pairs.sort_by(|a, b| a.0.total_cmp(&b.0));
        let nf = n as f64;
        let mut below = 0.0f64;
        let mut prev_h = 0.0f64;
        let mut acc = 0.0f64;
        for (h, w) in pairs {
            // P(max >= h) = 1 - P(all draws below h).
            let tail = if below <= 0.0 { 1.0 } else { -(nf * below.min(1.0).ln()).exp_m1() };
            acc += (h - prev_h) * tail;
            prev_h = h;
            below += w;
        }
        acc.max(0.0).sqrt()
    }

    /// `lim_n r_n = (max_a max_f ||f(a) - E f||^2)^{1/2}` over atoms of positive
    /// weight; an upper bound on `r_n` for every `n`.
    pub fn r_inf(&self) -> f64 {
        self.atom_max()
            .into_iter()
            .zip(&self.weights)
            .filter(|(_, w)| **w > 0.0)
            .map(|(h, _)| h)
            .fold(0.0, f64::max)
            .sqrt()
    }

    /// Monte Carlo estimate of `r_n`.
    pub fn r_n_monte_carlo(&self, n: usize, trials: usize, seed: u64) -> Result<Quantity> {
        draws_check(trials)?;
        if self.is_empty() {
            return Ok(Quantity::estimated(0.0, 0.0));
        }
        let h = self.atom_max();
        let values: Vec<f64> = (0..trials as u64)
            .into_par_iter()
            .map(|i| {
                let counts = multinomial_counts(&self.weights, n, &mut trial_rng(seed, i));
                counts.iter().zip(&h).filter(|(c, _)| **c > 0).map(|(_, v)| *v).fold(0.0, f64::max)
            })
            .collect();
        Ok(sqrt_of_mean(&values))
    }

    fn max_norm2(&self, counts: &[u32], n: usize) -> f64 {
        let scale = (n as f64).sqrt().recip();
        self.centred
            .iter()
            .map(|f| {
                let mut s = Vector::zeros(f[0].len());
                for (v, c) in f.iter().zip(counts) {
                    if *c > 0 {
                        s += v * (*c as f64);
                    }
                }
                (s * scale).norm_squared()
            })
            .fold(0.0, f64::max)
    }

    /// `E[max_f ||E_n(f)||^2]^{1/2}` by enumerating every sample composition.
    pub fn sup_moment_exact(&self, n: usize, cap: u128) -> Result<f64> {
        if self.is_empty() {
            return Ok(0.0);
        }
        let mut acc = 0.0;
        for_each_composition(&self.weights, n, cap, |counts, p| acc += p * self.max_norm2(counts, n))?;
        Ok(acc.max(0.0).sqrt())
    }

    /// Monte Carlo estimate of `E[max_f ||E_n(f)||^2]^{1/2}`.
    pub fn sup_moment_monte_carlo(&self, n: usize, trials: usize, seed: u64) -> Result<Quantity> {
        draws_check(trials)?;
        if self.is_empty() {
            return Ok(Quantity::estimated(0.0, 0.0));
        }
        let values: Vec<f64> = (0..trials as u64)
            .into_par_iter()
            .map(|i| self.max_norm2(&multinomial_counts(&self.weights, n, &mut trial_rng(seed, i)), n))
            .collect();
        Ok(sqrt_of_mean(&values))
    }
}

fn tables(profile: &PopulationProfile) -> Result<&AtomTables> {
    profile.tables().ok_or(Error::GenerativeLaw)
}

/// The class `{Sigma^{-1/2}(s) g(s, .) : s in subset}`.
pub fn class_g(profile: &PopulationProfile, subset: &[FeatureIndex]) -> Result<FiniteClass> {
    let tab = tables(profile)?;
    let mut values = Vec::with_capacity(subset.len());
    for &s in subset {
        profile.record(s)?;
        values.push(tab.whitened_gradients[s.0].clone());
    }
    FiniteClass::new(tab.weights.clone(), values)
}

/// The class of normalized loss differences
/// `(l_t - l_{t_*}) / (R(t, w_*(t)) - R_*)` over `t` outside `T_*`, with
/// `t_*` the reference optimal index.
pub fn class_d(profile: &PopulationProfile) -> Result<FiniteClass> {
    let tab = tables(profile)?;
    let star = profile.reference().0;
    let mut values = Vec::new();
    for t in profile.suboptimal() {
        let gap = profile.suboptimality(t)?;
        let f = tab.losses[t.0]
            .iter()
            .zip(&tab.losses[star])
            .map(|(a, b)| Vector::from_element(1, (a - b) / gap))
            .collect();
        values.push(f);
    }
    FiniteClass::new(tab.weights.clone(), values)
}

/// `(sigma^2, r_n)` of a class; zero for an empty class.
pub fn class_moments(class: &FiniteClass, n: usize) -> (f64, f64) {
    (class.sigma2(), class.r_n(n))
}

/// Both sides of the finite-class sandwich and a Monte Carlo value of the
/// middle term `E[max_f ||E_n(f)||^2]^{1/2}`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Sandwich {
    pub sigma: f64,
    pub r_n: f64,
    pub lower: f64,
    pub upper: f64,
    pub estimate: Quantity,
}

pub fn finite_sup_sandwich(class: &FiniteClass, n: usize, trials: usize, seed: u64) -> Result<Sandwich> {
    if class.is_empty() {
        draws_check(trials)?;
        let zero = Quantity::estimated(0.0, 0.0);
        return Ok(Sandwich { sigma: 0.0, r_n: 0.0, lower: 0.0, upper: 0.0, estimate: zero });
    }
    let (s2, r) = class_moments(class, n);
    let sigma = s2.sqrt();
    let c = c_factor(class.len())?;
    let root_n = (n as f64).sqrt();
    Ok(Sandwich {
        sigma,
        r_n: r,
        lower: 0.5 * sigma + 0.25 * r / root_n,
        upper: c * sigma + c * c * r / root_n,
        estimate: class.sup_moment_monte_carlo(n, trials, seed)?,
    })
}

/// `sqrt(2 lambda_max(V) ln(e d)) + lambda_max(E Z) ln(e d) / (3 sqrt n)`.
pub fn matrix_bernstein_bound(mean: &Matrix, v: &Matrix, n: usize, d: usize) -> f64 {
    let l = (E * d as f64).ln();
    (2.0 * lambda_max(v).max(0.0) * l).sqrt() + lambda_max(mean).max(0.0) * l / (3.0 * (n as f64).sqrt())
}

/// A discrete law on positive semi-definite matrices.
#[derive(Debug, Clone)]
pub struct PsdMatrixLaw {
    pub weights: Vec<f64>,
    pub matrices: Vec<Matrix>,
}

impl PsdMatrixLaw {
    pub fn new(weights: Vec<f64>, matrices: Vec<Matrix>) -> Result<Self> {
        if weights.is_empty() || weights.len() != matrices.len() {
            return Err(Error::DimensionMismatch {
                context: "matrix law",
                expected: weights.len(),
                got: matrices.len(),
            });
        }
        Ok(Self { weights, matrices })
    }

    pub fn dim(&self) -> usize {
        self.matrices[0].nrows()
    }

    pub fn mean(&self) -> Matrix {
        let mut m = Matrix::zeros(self.dim(), self.dim());
        for (z, w) in self.matrices.iter().zip(&self.weights) {
            m += z * *w;
        }
        m
    }

    /// `E[(E Z - Z)^2]`.
    pub fn variance(&self) -> Matrix {
        let mean = self.mean();
        let mut v = Matrix::zeros(self.dim(), self.dim());
        for (z, w) in self.matrices.iter().zip(&self.weights) {
            let d = &mean - z;
            v += (&d * &d) * *w;
        }
        v
    }

    pub fn bernstein_bound(&self, n: usize) -> f64 {
        matrix_bernstein_bound(&self.mean(), &self.variance(), n, self.dim())
    }

    /// Monte Carlo `E[lambda_max(sqrt(n) (E Z - mean of n draws))]`.
    pub fn expected_lambda_max(&self, n: usize, trials: usize, seed: u64) -> Result<Quantity> {
        draws_check(trials)?;
        if n == 0 {
            return Err(Error::EmptySample);
        }
        let mean = self.mean();
        let root_n = (n as f64).sqrt();
        let values: Vec<f64> = (0..trials as u64)
            .into_par_iter()
            .map(|i| {
                let counts = multinomial_counts(&self.weights, n, &mut trial_rng(seed, i));
                let mut avg = Matrix::zeros(self.dim(), self.dim());
                for (z, c) in self.matrices.iter().zip(&counts) {
                    if *c > 0 {
                        avg += z * (*c as f64 / n as f64);
                    }
                }
                lambda_max(&((&mean - avg) * root_n))
            })
            .collect();
        let m = mean_se(&values);
        Ok(Quantity::estimated(m.mean, m.se))
    }
}

/// Offsets of the blocks of `subset` inside the stacked feature vector.
fn block_layout(profile: &PopulationProfile, subset: &[FeatureIndex]) -> Result<Vec<(usize, usize)>> {
    let mut out = Vec::with_capacity(subset.len());
    let mut offset = 0;
    for &t in subset {
        let d = profile.record(t)?.dim;
        out.push((offset, d));
        offset += d;
    }
    Ok(out)
}

/// Whitened features `Sigma^{-1/2}(t) phi_t(x)` per atom, indexed `[t][atom]`.
fn whitened_features(profile: &PopulationProfile, t: FeatureIndex) -> Result<Vec<Vector>> {
    let tab = tables(profile)?;
    let w = &profile.record(t)?.sigma_inv_sqrt;
    Ok(tab.features[t.0].iter().map(|phi| w * phi).collect())
}

/// The law of `blockdiag_t(psi_t psi_t^T)` over `subset`, with
/// `psi_t = Sigma^{-1/2}(t) phi_t(X)`.
pub fn whitened_feature_law(profile: &PopulationProfile, subset: &[FeatureIndex]) -> Result<PsdMatrixLaw> {
    let tab = tables(profile)?;
    let layout = block_layout(profile, subset)?;
    let total: usize = layout.iter().map(|b| b.1).sum();
    let psis = subset.iter().map(|&t| whitened_features(profile, t)).collect::<Result<Vec<_>>>()?;
    let matrices = (0..tab.weights.len())
        .map(|a| {
            let mut m = Matrix::zeros(total, total);
            for ((off, d), psi) in layout.iter().zip(&psis) {
                let p = &psi[a];
                m.view_mut((*off, *off), (*d, *d)).copy_from(&(p * p.transpose()));
            }
            m
        })
        .collect();
    PsdMatrixLaw::new(tab.weights.clone(), matrices)
}

/// `V(t) = E[(psi psi^T - I)^2]`, exactly.
pub fn v_block(profile: &PopulationProfile, t: FeatureIndex) -> Result<Matrix> {
    let tab = tables(profile)?;
    let d = profile.record(t)?.dim;
    let mut v = Matrix::zeros(d, d);
    for (psi, w) in whitened_features(profile, t)?.iter().zip(&tab.weights) {
        // (psi psi^T - I)^2 = (|psi|^2 - 2) psi psi^T + I
        v += (psi * psi.transpose()) * (*w * (psi.norm_squared() - 2.0));
        v += Matrix::identity(d, d) * *w;
    }
    Ok(crate::linalg::symmetrize(&v))
}

/// `max_t lambda_max(V(t))` over `subset`.
pub fn lambda_max_v(profile: &PopulationProfile, subset: &[FeatureIndex]) -> Result<f64> {
    let mut best = 0.0f64;
    for &t in subset {
        best = best.max(lambda_max(&v_block(profile, t)?));
    }
    Ok(best)
}

/// `tr(V) / lambda_max(V)` over `subset`.
pub fn intrinsic_dimension(profile: &PopulationProfile, subset: &[FeatureIndex]) -> Result<f64> {
    let mut trace = 0.0;
    let mut top = 0.0f64;
    for &t in subset {
        let v = v_block(profile, t)?;
        trace += v.trace();
        top = top.max(lambda_max(&v));
    }
    Ok(if top > 0.0 { trace / top } else { 0.0 })
}

/// Monte Carlo `lambda_max(V(t))` for a Gaussian design, using the exact
/// population whitening. The standard error comes from 20 equal batches.
pub fn lambda_max_v_gaussian(
    design: &GaussianDesign,
    collection: &FeatureCollection,
    profile: &PopulationProfile,
    t: FeatureIndex,
    draws: usize,
    seed: u64,
) -> Result<Quantity> {
    const BATCHES: u64 = 20;
    let per = draws / BATCHES as usize;
    if per == 0 {
        return Err(Error::InsufficientTrials { needed: BATCHES as usize, got: draws });
    }
    let map = &collection.get(t)?.map;
    let w = &profile.record(t)?.sigma_inv_sqrt;
    let d = map.dim();
    let batch_v: Vec<Matrix> = (0..BATCHES)
        .into_par_iter()
        .map(|b| {
            let mut rng = trial_rng(seed, b);
            let mut v = Matrix::zeros(d, d);
            for _ in 0..per {
                let (x, _) = design.draw(&mut rng);
                let psi = w * map.eval(&x);
                v += (&psi * psi.transpose()) * (psi.norm_squared() - 2.0);
                v += Matrix::identity(d, d);
            }
            v / per as f64
        })
        .collect();
    let mut pooled = Matrix::zeros(d, d);
    for v in &batch_v {
        pooled += v / BATCHES as f64;
    }
    let per_batch: Vec<f64> = batch_v.iter().map(lambda_max).collect();
    let spread = mean_se(&per_batch);
    Ok(Quantity::estimated(lambda_max(&pooled), spread.se))
}

/// The quartic `v -> E[(sum_t <v_t, psi_t>^2 - 1)^2]` over a stack of blocks.
#[derive(Debug, Clone)]
struct QuarticForm {
    weights: Vec<f64>,
    layout: Vec<(usize, usize)>,
    /// Stacked whitened features per atom.
    psi: Vec<Vector>,
}

impl QuarticForm {
    fn new(profile: &PopulationProfile, subset: &[FeatureIndex]) -> Result<Self> {
        let tab = tables(profile)?;
        let layout = block_layout(profile, subset)?;
        let total: usize = layout.iter().map(|b| b.1).sum();
        let blocks = subset.iter().map(|&t| whitened_features(profile, t)).collect::<Result<Vec<_>>>()?;
        let psi = (0..tab.weights.len())
            .map(|a| {
                let mut v = Vector::zeros(total);
                for ((off, d), b) in layout.iter().zip(&blocks) {
                    v.rows_mut(*off, *d).copy_from(&b[a]);
                }
                v
            })
            .collect();
        Ok(Self { weights: tab.weights.clone(), layout, psi })
    }

    fn dim(&self) -> usize {
        self.layout.iter().map(|b| b.1).sum()
    }

    fn q(&self, a: usize, v: &Vector) -> f64 {
        self.layout.iter().map(|&(off, d)| self.psi[a].rows(off, d).dot(&v.rows(off, d)).powi(2)).sum()
    }

    fn value(&self, v: &Vector) -> f64 {
        (0..self.weights.len()).map(|a| self.weights[a] * (self.q(a, v) - 1.0).powi(2)).sum()
    }

    fn value_and_gradient(&self, v: &Vector) -> (f64, Vector) {
        let mut value = 0.0;
        let mut grad = Vector::zeros(self.dim());
        for a in 0..self.weights.len() {
            let q = self.q(a, v);
            value += self.weights[a] * (q - 1.0).powi(2);
            let scale = 4.0 * self.weights[a] * (q - 1.0);
            for &(off, d) in &self.layout {
                let p = self.psi[a].rows(off, d);
                let inner = p.dot(&v.rows(off, d));
                let mut g = grad.rows_mut(off, d);
                g += p * (scale * inner);
            }
        }
        (value, grad)
    }

    fn block_start(&self, block: usize, rng: &mut impl Rng) -> Vector {
        let (off, d) = self.layout[block];
        let mut v = Vector::zeros(self.dim());
        for i in off..off + d {
            v[i] = rng.sample(StandardNormal);
        }
        v
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct LOptions {
    pub restarts: usize,
    pub tol: f64,
    pub max_iter: usize,
    pub seed: u64,
}

impl Default for LOptions {
    fn default() -> Self {
        Self { restarts: 64, tol: 1e-8, max_iter: 5000, seed: 0 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
#[serde(tag = "method", rename_all = "snake_case")]
pub enum LMethod {
    /// One-dimensional stack: the objective at `v = 1`.
    Exact,
    ProjectedAscent {
        restarts: usize,
        converged: usize,
    },
    Grid {
        resolution: f64,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LEstimate {
    pub value: f64,
    pub method: LMethod,
    /// The same maximization restricted to each single block.
    pub block_values: Vec<f64>,
}

impl LEstimate {
    pub fn quantity(&self) -> Quantity {
        match self.method {
            LMethod::Exact => Quantity::exact(self.value),
            _ => Quantity::estimated(self.value, 0.0),
        }
    }
}

/// Projected gradient ascent on the unit sphere with backtracking. Returns the
/// final point, value and whether the relative improvement fell below `tol`.
fn ascend(form: &QuarticForm, start: Vector, opts: &LOptions) -> (Vector, f64, bool) {
    let mut v = start.normalize();
    let (mut f, mut g) = form.value_and_gradient(&v);
    let mut step = 1.0 / (g.norm() + 1.0);
    for _ in 0..opts.max_iter {
        let tangent = &g - &v * g.dot(&v);
        if tangent.norm() < 1e-14 {
            return (v, f, true);
        }
        let mut accepted = None;
        for _ in 0..60 {
            let cand = (&v + &tangent * step).normalize();
            let fc = form.value(&cand);
            if fc > f {
                accepted = Some((cand, fc));
                break;
            }
            step *= 0.5;
        }
        let Some((cand, fc)) = accepted else { return (v, f, true) };
        let gain = fc - f;
        v = cand;
        (f, g) = form.value_and_gradient(&v);
        if gain <= opts.tol * f.abs().max(1.0) {
            return (v, f, true);
        }
        step *= 2.0;
    }
    (v, f, false)
}

fn ascend_many(form: &QuarticForm, starts: Vec<Vector>, opts: &LOptions) -> Vec<(Vector, f64, bool)> {
    starts.into_par_iter().map(|s| ascend(form, s, opts)).collect()
}

fn block_optimum(form: &QuarticForm, block: usize, t: FeatureIndex, opts: &LOptions) -> (Vector, f64, usize) {
    let starts = (0..opts.restarts.max(1) as u64)
        .map(|r| form.block_start(block, &mut trial_rng(derive(opts.seed, t.0 as u64 + 1), r)))
        .collect();
    let runs = ascend_many(form, starts, opts);
    let converged = runs.iter().filter(|r| r.2).count();
    let best = runs.into_iter().max_by(|a, b| a.1.total_cmp(&b.1)).expect("at least one start");
    (best.0, best.1, converged)
}

/// `L = sup E[(sum_t <v_t, psi_t>^2 - 1)^2]` over `sum_t |v_t|^2 = 1`, by
/// projected ascent from random starts, from random starts inside each
/// block, and from each block's optimum.
pub fn estimate_l(profile: &PopulationProfile, subset: &[FeatureIndex], opts: &LOptions) -> Result<LEstimate> {
    if subset.is_empty() {
        return Err(Error::EmptyCollection);
    }
    let form = QuarticForm::new(profile, subset)?;
    if form.dim() == 1 {
        let v = Vector::from_element(1, 1.0);
        let value = form.value(&v);
        return Ok(LEstimate { value, method: LMethod::Exact, block_values: vec![value] });
    }
    let mut converged = 0;
    let mut runs = 0;
    let mut block_values = Vec::with_capacity(subset.len());
    let mut starts = Vec::new();
    for (b, &t) in subset.iter().enumerate() {
        let (v, val, c) = block_optimum(&form, b, t, opts);
        block_values.push(val);
        converged += c;
        runs += opts.restarts.max(1);
        starts.push(v);
    }
    let mut best = block_values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if subset.len() > 1 {
        let mut rng = trial_rng(opts.seed, 0);
        for _ in 0..opts.restarts {
            starts.push(Vector::from_fn(form.dim(), |_, _| rng.sample(StandardNormal)));
        }
        runs += starts.len();
        for (_, val, c) in ascend_many(&form, starts, opts) {
            best = best.max(val);
            converged += c as usize;
        }
    }
    Ok(LEstimate { value: best, method: LMethod::ProjectedAscent { restarts: runs, converged }, block_values })
}

/// Brute-force maximization of the same quartic over an angular grid, for a
/// stacked dimension of at most 3.
pub fn l_grid(profile: &PopulationProfile, subset: &[FeatureIndex], resolution: f64) -> Result<LEstimate> {
    let form = QuarticForm::new(profile, subset)?;
    let pi = std::f64::consts::PI;
    let steps = |range: f64| (range / resolution).ceil() as usize;
    let value = match form.dim() {
        1 => form.value(&Vector::from_element(1, 1.0)),
        2 => (0..steps(pi))
            .into_par_iter()
            .map(|i| {
                let a = i as f64 * resolution;
                form.value(&Vector::from_vec(vec![a.cos(), a.sin()]))
            })
            .reduce(|| f64::NEG_INFINITY, f64::max),
        3 => (0..=steps(pi))
            .into_par_iter()
            .map(|i| {
                let theta = (i as f64 * resolution).min(pi);
                let (st, ct) = theta.sin_cos();
                (0..steps(pi))
                    .map(|j| {
                        let phi = j as f64 * resolution;
                        form.value(&Vector::from_vec(vec![st * phi.cos(), st * phi.sin(), ct]))
                    })
                    .fold(f64::NEG_INFINITY, f64::max)
            })
            .reduce(|| f64::NEG_INFINITY, f64::max),
        d => return Err(Error::InvalidArgument(format!("grid search needs stacked dimension <= 3, got {d}"))),
    };
    Ok(LEstimate { value, method: LMethod::Grid { resolution }, block_values: Vec::new() })
}

/// `(512 lambda_max(V) + 6) ln(e d) + (128 L + 11) ln(2 / delta)`.
pub fn thm2_threshold(lambda_v: f64, l: f64, d: usize, delta: f64) -> f64 {
    (512.0 * lambda_v + 6.0) * (E * d as f64).ln() + (128.0 * l + 11.0) * (2.0 / delta).ln()
}

/// `4 (n delta)^{-1} E||g||^2_{Sigma^{-1}}`.
pub fn thm2_bound(n: usize, delta: f64, grad_moment: f64) -> f64 {
    4.0 * grad_moment / (n as f64 * delta)
}

/// `64 E[sup Lambda_n] + (128 L + 11) ln(6 / delta) + 6 delta^{-2} E[sup Delta_n]`.
pub fn thm4_threshold(e_sup_lambda: f64, l: f64, e_sup_delta: f64, delta: f64) -> f64 {
    64.0 * e_sup_lambda + (128.0 * l + 11.0) * (6.0 / delta).ln() + 6.0 * e_sup_delta / (delta * delta)
}

/// `24 (n delta)^{-1} C`, the localized excess-risk bound for a complexity `C`.
pub fn localized_bound(n: usize, delta: f64, complexity: f64) -> f64 {
    24.0 * complexity / (n as f64 * delta)
}

/// Inputs to the closed-form sample-size requirement for finite collections.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Cor3Constants {
    pub lambda_v: f64,
    pub l: f64,
    /// Total stacked dimension `sum_t d_t`.
    pub total_dim: usize,
    pub index_count: usize,
    pub sigma2_d: f64,
}

/// The right-hand side of the closed-form requirement at a given `r_n(D)`.
pub fn cor3_threshold(c: &Cor3Constants, r_n_d: f64, delta: f64) -> Result<f64> {
    let cf = c_factor(c.index_count)?;
    Ok((512.0 * c.lambda_v + 6.0) * (E * c.total_dim as f64).ln()
        + (128.0 * c.l + 11.0) * (6.0 / delta).ln()
        + 24.0 * cf * c.sigma2_d / delta
        + 10.0 * cf * cf * r_n_d / delta.sqrt())
}

/// Least `n` meeting the closed-form requirement when `r_n(D)` depends on
/// `n`, by the fixed-point iteration `n <- ceil(rhs(n))` from `n = 1`.
pub fn cor3_least_n(c: &Cor3Constants, r_n_d: impl Fn(usize) -> f64, delta: f64) -> Result<usize> {
    let mut n = 1usize;
    for _ in 0..10_000 {
        let need = cor3_threshold(c, r_n_d(n), delta)?;
        if (n as f64) >= need {
            return Ok(n);
        }
        n = (need.ceil() as usize).max(n + 1);
    }
    Err(Error::InvalidArgument("threshold iteration did not settle".into()))
}

/// `A(S) = c^2(|S|) (sigma_G(S) + c(|S|) r_n^G(S) / sqrt n)^2`.
pub fn a_value(m: usize, sigma_g: f64, r_n_g: f64, n: usize) -> Result<f64> {
    if m == 0 {
        return Ok(0.0);
    }
    let c = c_factor(m)?;
    Ok(c * c * (sigma_g + c * r_n_g / (n as f64).sqrt()).powi(2))
}

/// `80 (1 + ln |T_*|) max_{s in T_*} E||g(s)||^2`.
pub fn remark1_main(optimal_count: usize, max_grad_moment: f64) -> f64 {
    80.0 * (1.0 + (optimal_count as f64).ln()) * max_grad_moment
}

/// Lower and upper limits for `n Q(1 - delta)` of the rescaled excess risk of
/// a single class: `c X` and `C X` with `X = E||g||^2 + 2 lambda ln(1/delta)`,
/// `C = 1`, `c = 1/32`.
pub fn thm1_quantile_limits(grad_moment: f64, lambda: f64, delta: f64) -> (f64, f64) {
    let x = grad_moment + 2.0 * lambda * (1.0 / delta).ln();
    (x / 32.0, x)
}

/// Moments of the gradient class on one subset.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SubsetComplexity {
    pub members: Vec<FeatureIndex>,
    pub sigma_g: f64,
    pub r_n_g: f64,
    pub a: f64,
}

pub fn subset_complexity(profile: &PopulationProfile, subset: &[FeatureIndex], n: usize) -> Result<SubsetComplexity> {
    let class = class_g(profile, subset)?;
    let (s2, r) = class_moments(&class, n);
    let sigma_g = s2.sqrt();
    Ok(SubsetComplexity { members: subset.to_vec(), sigma_g, r_n_g: r, a: a_value(subset.len(), sigma_g, r, n)? })
}

/// Everything the report formulas consume. A missing field is reported by
/// name.
#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct BoundInputs {
    pub lambda_max_v: Option<Quantity>,
    pub lambda_max_v_star: Option<Quantity>,
    pub l: Option<Quantity>,
    pub l_star: Option<Quantity>,
    pub dim_star: Option<usize>,
    pub total_dim: Option<usize>,
    pub index_count: Option<usize>,
    pub optimal_count: Option<usize>,
    pub sigma2_d: Option<Quantity>,
    pub r_n_d: Option<Quantity>,
    pub cor3_least_n: Option<usize>,
    pub e_sup_lambda: Option<Quantity>,
    pub e_sup_delta: Option<Quantity>,
    pub e_sup_delta2: Option<Quantity>,
    pub e_sup_g2_localized: Option<Quantity>,
    pub a_localized: Option<Quantity>,
    pub grad_moment_star: Option<Quantity>,
    pub max_grad_moment_optimal: Option<Quantity>,
    pub grad_cov_lambda_star: Option<Quantity>,
}

fn need<T: Copy>(field: Option<T>, name: &'static str) -> Result<T> {
    field.ok_or(Error::IncompleteReport(name))
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ReportEntry {
    pub name: String,
    pub value: f64,
    pub tag: Tag,
    pub se: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BoundReport {
    pub n: usize,
    pub delta: f64,
    pub k: usize,
    pub entries: Vec<ReportEntry>,
    pub l_method: Option<LMethod>,
    pub subsets: Vec<SubsetComplexity>,
    pub localized_set: Vec<FeatureIndex>,
    pub localized_set_expected_sup: Vec<FeatureIndex>,
    /// `tr(V) / lambda_max(V)`, reported for reference only.
    pub intrinsic_dimension: Option<f64>,
}

impl BoundReport {
    pub fn get(&self, name: &str) -> Option<&ReportEntry> {
        self.entries.iter().find(|e| e.name == name)
    }

    pub fn value(&self, name: &str) -> Result<f64> {
        self.get(name).map(|e| e.value).ok_or_else(|| Error::InvalidArgument(format!("no report entry {name}")))
    }

    fn push(&mut self, name: &str, q: Quantity) {
        self.entries.push(ReportEntry { name: name.into(), value: q.value, tag: q.tag, se: q.se });
    }
}

fn combine(tags: &[Tag]) -> Tag {
    if tags.iter().all(|t| *t == Tag::Exact) {
        Tag::Exact
    } else {
        Tag::Estimated
    }
}

fn check_delta(delta: f64) -> Result<()> {
    if !(delta > 0.0 && delta < 1.0) {
        return Err(Error::InvalidArgument(format!("delta must lie in (0, 1), got {delta}")));
    }
    Ok(())
}

/// Evaluates every threshold and bound from `inputs` at `(n, delta, k)`.
pub fn thresholds_and_bounds(inputs: &BoundInputs, n: usize, delta: f64, k: usize) -> Result<BoundReport> {
    check_delta(delta)?;
    if n == 0 {
        return Err(Error::EmptySample);
    }
    if k == 0 {
        return Err(Error::InvalidArgument("k must be at least 1".into()));
    }
    let lv = need(inputs.lambda_max_v, "lambda_max_v")?;
    let lvs = need(inputs.lambda_max_v_star, "lambda_max_v_star")?;
    let l = need(inputs.l, "l")?;
    let ls = need(inputs.l_star, "l_star")?;
    let dim_star = need(inputs.dim_star, "dim_star")?;
    let total_dim = need(inputs.total_dim, "total_dim")?;
    let count = need(inputs.index_count, "index_count")?;
    let optimal = need(inputs.optimal_count, "optimal_count")?;
    let s2d = need(inputs.sigma2_d, "sigma2_d")?;
    let rnd = need(inputs.r_n_d, "r_n_d")?;
    let esl = need(inputs.e_sup_lambda, "e_sup_lambda")?;
    let esd = need(inputs.e_sup_delta, "e_sup_delta")?;
    let esd2 = need(inputs.e_sup_delta2, "e_sup_delta2")?;
    let esg = need(inputs.e_sup_g2_localized, "e_sup_g2_localized")?;
    let aloc = need(inputs.a_localized, "a_localized")?;
    let gms = need(inputs.grad_moment_star, "grad_moment_star")?;
    let gmo = need(inputs.max_grad_moment_optimal, "max_grad_moment_optimal")?;
    let gcl = need(inputs.grad_cov_lambda_star, "grad_cov_lambda_star")?;

    let mut report = BoundReport {
        n,
        delta,
        k,
        entries: Vec::new(),
        l_method: None,
        subsets: Vec::new(),
        localized_set: Vec::new(),
        localized_set_expected_sup: Vec::new(),
        intrinsic_dimension: None,
    };
    for (name, q) in [
        ("lambda_max_v", lv),
        ("lambda_max_v_star", lvs),
        ("l", l),
        ("l_star", ls),
        ("sigma2_d", s2d),
        ("r_n_d", rnd),
        ("e_sup_lambda", esl),
        ("e_sup_delta", esd),
        ("e_sup_delta2", esd2),
        ("e_sup_g2_localized", esg),
        ("a_localized", aloc),
        ("grad_moment_star", gms),
        ("grad_cov_lambda_max_star", gcl),
    ] {
        report.push(name, q);
    }
    report.push("c_index_count", Quantity::exact(c_factor(count)?));

    let t2 = thm2_threshold(lvs.value, ls.value, dim_star, delta);
    report.push("thm2_n", Quantity { value: t2, tag: combine(&[lvs.tag, ls.tag]), se: 0.0 });
    report.push("thm2_bound", Quantity { value: thm2_bound(n, delta, gms.value), tag: gms.tag, se: 0.0 });

    let t4 = thm4_threshold(esl.value, l.value, esd.value, delta);
    let t4_se = ((64.0 * esl.se).powi(2) + (6.0 * esd.se / (delta * delta)).powi(2)).sqrt();
    report.push("thm4_n", Quantity { value: t4, tag: combine(&[esl.tag, l.tag, esd.tag]), se: t4_se });
    let scale = 24.0 / (n as f64 * delta);
    report.push("thm4_bound", Quantity { value: scale * esg.value, tag: esg.tag, se: scale * esg.se });

    let consts = Cor3Constants { lambda_v: lv.value, l: l.value, total_dim, index_count: count, sigma2_d: s2d.value };
    let c3 = cor3_threshold(&consts, rnd.value, delta)?;
    report.push("cor3_n", Quantity { value: c3, tag: combine(&[lv.tag, l.tag, s2d.tag, rnd.tag]), se: 0.0 });
    if let Some(least) = inputs.cor3_least_n {
        report.push("cor3_least_n", Quantity { value: least as f64, tag: combine(&[lv.tag, l.tag]), se: 0.0 });
    }
    report.push("cor3_bound", Quantity { value: scale * aloc.value, tag: aloc.tag, se: scale * aloc.se });
    report.push("remark1_main", Quantity { value: remark1_main(optimal, gmo.value), tag: gmo.tag, se: 0.0 });
    let (lo, hi) = thm1_quantile_limits(gms.value, gcl.value, delta);
    report.push("thm1_quantile_lower", Quantity { value: lo, tag: combine(&[gms.tag, gcl.tag]), se: 0.0 });
    report.push("thm1_quantile_upper", Quantity { value: hi, tag: combine(&[gms.tag, gcl.tag]), se: 0.0 });
    Ok(report)
}

/// Settings for assembling a full report.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ReportOptions {
    /// Monte Carlo datasets per expected supremum.
    pub trials: usize,
    pub seed: u64,
    pub l: LOptions,
    /// Collections up to this size get `A(S)` for every non-empty subset;
    /// larger ones only along the localization chain.
    pub max_lattice: usize,
}

impl Default for ReportOptions {
    fn default() -> Self {
        Self { trials: 10_000, seed: 0, l: LOptions::default(), max_lattice: 10 }
    }
}

/// Computes every constituent for a discrete law and evaluates the report.
pub fn compute_report(
    law: &JointDistribution,
    collection: &FeatureCollection,
    profile: &PopulationProfile,
    n: usize,
    delta: f64,
    k: usize,
    opts: &ReportOptions,
) -> Result<BoundReport> {
    check_delta(delta)?;
    tables(profile)?;
    let all = profile.indices();
    let star = profile.reference();
    let mut inputs = BoundInputs {
        lambda_max_v: Some(Quantity::exact(lambda_max_v(profile, &all)?)),
        lambda_max_v_star: Some(Quantity::exact(lambda_max_v(profile, &[star])?)),
        dim_star: Some(profile.record(star)?.dim),
        total_dim: Some(all.iter().map(|t| profile.records()[t.0].dim).sum()),
        index_count: Some(all.len()),
        optimal_count: Some(profile.optimal().len()),
        ..BoundInputs::default()
    };
    let l_all = estimate_l(profile, &all, &opts.l)?;
    inputs.l = Some(l_all.quantity());
    let l_star = estimate_l(profile, &[star], &opts.l)?;
    inputs.l_star = Some(l_star.quantity());

    let d_class = class_d(profile)?;
    let (s2d, rnd) = class_moments(&d_class, n);
    inputs.sigma2_d = Some(Quantity::exact(s2d));
    inputs.r_n_d = Some(Quantity::exact(rnd));
    let consts = Cor3Constants {
        lambda_v: inputs.lambda_max_v.expect("set").value,
        l: l_all.value,
        total_dim: inputs.total_dim.expect("set"),
        index_count: all.len(),
        sigma2_d: s2d,
    };
    inputs.cor3_least_n = Some(cor3_least_n(&consts, |m| d_class.r_n(m), delta)?);

    let mc = |kind, subset: &[FeatureIndex], salt| {
        let mode = SupMode::MonteCarlo { trials: opts.trials, seed: derive(opts.seed, salt) };
        expected_sup(kind, subset, n, law, collection, profile, mode).map(|e| Quantity::estimated(e.estimate, e.se))
    };
    let suboptimal = profile.suboptimal();
    inputs.e_sup_lambda = Some(mc(ProcessKind::Lambda, &all, 1)?);
    inputs.e_sup_delta = Some(mc(ProcessKind::Delta, &suboptimal, 2)?);
    inputs.e_sup_delta2 = Some(mc(ProcessKind::DeltaSquared, &suboptimal, 3)?);

    let closed = ClosedFormComplexity::new(profile);
    let trace = localization::iterate(n, delta, k, profile, &closed)?;
    inputs.a_localized = Some(Quantity::exact(trace.final_complexity));
    let sup_source = ExpectedSupComplexity::new(law, collection, profile, opts.trials, derive(opts.seed, 4));
    let trace_mc = localization::iterate(n, delta, k, profile, &sup_source)?;
    let est = sup_source.estimate(&trace_mc.final_set, n)?;
    inputs.e_sup_g2_localized = Some(Quantity::estimated(est.estimate, est.se));

    let optimal_moments: Vec<f64> =
        profile.optimal().iter().map(|t| profile.records()[t.0].grad_second_moment).collect();
    inputs.grad_moment_star = Some(Quantity::exact(profile.record(star)?.grad_second_moment));
    inputs.max_grad_moment_optimal = Some(Quantity::exact(optimal_moments.iter().copied().fold(0.0, f64::max)));
    inputs.grad_cov_lambda_star = Some(Quantity::exact(lambda_max(&profile.whitened_gradient_covariance(star, star)?)));

    let mut report = thresholds_and_bounds(&inputs, n, delta, k)?;
    report.l_method = Some(l_all.method);
    report.localized_set = trace.final_set.clone();
    report.localized_set_expected_sup = trace_mc.final_set.clone();
    report.intrinsic_dimension = Some(intrinsic_dimension(profile, &all)?);
    report.subsets = if all.len() <= opts.max_lattice {
        (1u64..(1u64 << all.len()))
            .map(|mask| {
                let s: Vec<FeatureIndex> = all.iter().copied().filter(|t| mask >> t.0 & 1 == 1).collect();
                subset_complexity(profile, &s, n)
            })
            .collect::<Result<_>>()?
    } else {
        let mut chain: Vec<Vec<FeatureIndex>> = vec![all.clone()];
        for step in &trace.steps {
            if chain.last() != Some(&step.members) {
                chain.push(step.members.clone());
            }
        }
        chain.iter().map(|s| subset_complexity(profile, s, n)).collect::<Result<_>>()?
    };
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::instances;
    use crate::model::{DiscreteLaw, FeatureMap, NoiseLaw};
    use crate::population::Tolerances;
    use proptest::prelude::*;
    use rand::Rng;

    fn profile_of(inst: &instances::Instance) -> PopulationProfile {
        PopulationProfile::compute(&inst.law, &inst.collection, Tolerances::default()).unwrap()
    }

    fn scalar_class(weights: Vec<f64>, fs: Vec<Vec<f64>>) -> FiniteClass {
        FiniteClass::new(
            weights,
            fs.into_iter().map(|f| f.into_iter().map(|v| Vector::from_element(1, v)).collect()).collect(),
        )
        .unwrap()
    }

    #[test]
    fn c_factor_examples() {
        assert_eq!(c_factor(1).unwrap(), 5.0);
        assert!((c_factor_real(E.powi(3)) - 10.0).abs() < 1e-12);
        assert!((c_factor(2).unwrap() - 6.506_05).abs() < 1e-5);
        assert!(c_factor(0).is_err());
    }

    #[test]
    fn symmetric_sign_singleton_sandwich() {
        let class = scalar_class(vec![0.5, 0.5], vec![vec![-1.0, 1.0]]);
        assert_eq!(class.sup_moment_exact(1, 10).unwrap(), 1.0);
        let s = finite_sup_sandwich(&class, 1, 1000, 0).unwrap();
        assert_eq!((s.sigma, s.r_n), (1.0, 1.0));
        assert!((s.lower - 0.75).abs() < 1e-15);
        assert!((s.upper - 30.0).abs() < 1e-12);
        assert!((s.estimate.value - 1.0).abs() < 1e-12);
    }

    #[test]
    fn zero_class_sandwich_is_zero() {
        let class = scalar_class(vec![0.3, 0.7], vec![vec![2.0, 2.0], vec![0.0, 0.0]]);
        let s = finite_sup_sandwich(&class, 5, 200, 1).unwrap();
        assert_eq!((s.lower, s.upper, s.estimate.value), (0.0, 0.0, 0.0));
        let empty = FiniteClass::new(vec![1.0], Vec::new()).unwrap();
        assert_eq!(class_moments(&empty, 3), (0.0, 0.0));
    }

    #[test]
    fn exact_r_n_matches_monte_carlo_and_limits() {
        let class = scalar_class(vec![0.2, 0.5, 0.3], vec![vec![1.0, -2.0, 3.0], vec![0.5, 0.0, -1.0]]);
        for n in [1, 2, 5, 10] {
            let exact = class.r_n(n);
            let mc = class.r_n_monte_carlo(n, 200_000, n as u64).unwrap();
            assert!((exact - mc.value).abs() <= 4.0 * mc.se + 1e-12, "n={n}: {exact} vs {mc:?}");
        }
        for n in [1, 10, 40, 1000] {
            assert!(class.r_n(n) <= class.r_inf() + 1e-12);
        }
        assert!((class.r_n(1000) - class.r_inf()).abs() < 1e-12);
        // n = 1 reduces to E[max_f ||f - E f||^2].
        let direct: f64 = class.atom_max().iter().zip(class.weights()).map(|(h, w)| h * w).sum();
        assert!((class.r_n(1) - direct.sqrt()).abs() < 1e-12);
        assert!(class.r_n(1) <= class.r_n(2) && class.r_n(2) <= class.r_n(10));
    }

    #[test]
    fn random_class_lies_in_sandwich() {
        let mut rng = trial_rng(9, 9);
        let values =
            (0..8).map(|_| (0..3).map(|_| Vector::from_element(1, rng.random_range(-2.0..2.0))).collect()).collect();
        let class = FiniteClass::new(vec![0.2, 0.3, 0.5], values).unwrap();
        let s = finite_sup_sandwich(&class, 16, 100_000, 4).unwrap();
        assert!(s.lower <= s.estimate.value && s.estimate.value <= s.upper, "{s:?}");
    }

    #[test]
    fn gradient_class_of_noiseless_law_vanishes() {
        let inst = instances::realizable_noiseless();
        let p = profile_of(&inst);
        let class = class_g(&p, &[FeatureIndex(0)]).unwrap();
        let (s2, r) = class_moments(&class, 7);
        assert!(s2 < 1e-24 && r < 1e-12);
        assert!(subset_complexity(&p, &[FeatureIndex(0)], 7).unwrap().a < 1e-20);
    }

    #[test]
    fn deterministic_loss_gap_has_zero_variance() {
        // Y = x_1 exactly, x_2 = x_1 + 1 shifted with unit gap on every atom.
        let law = JointDistribution::Discrete(
            DiscreteLaw::uniform(vec![
                (vec![1.0, 0.0], 1.0),
                (vec![-1.0, 0.0], -1.0),
                (vec![1.0, 1.0], 1.0),
                (vec![-1.0, 1.0], -1.0),
            ])
            .unwrap(),
        );
        let coll = FeatureCollection::new(vec![
            ("x1".into(), FeatureMap::coordinates(2, &[0]).unwrap()),
            ("x2".into(), FeatureMap::coordinates(2, &[1]).unwrap()),
        ])
        .unwrap();
        let p = PopulationProfile::compute(&law, &coll, Tolerances::default()).unwrap();
        // Loss of the second map: w = 0, so l = y^2 / 2 = 1/2 on every atom.
        let class = class_d(&p).unwrap();
        assert_eq!(class.len(), 1);
        assert!(class.sigma2() < 1e-24);
    }

    #[test]
    fn loss_difference_class_exact_matches_monte_carlo() {
        let inst = instances::can_a();
        let p = profile_of(&inst);
        let class = class_d(&p).unwrap();
        let exact = class.sup_moment_exact(2, 10_000).unwrap();
        let mc = class.sup_moment_monte_carlo(2, 1_000_000, 3).unwrap();
        assert!((exact - mc.value).abs() <= 4.0 * mc.se, "{exact} vs {mc:?}");
        let r_mc = class.r_n_monte_carlo(2, 1_000_000, 4).unwrap();
        assert!((class.r_n(2) - r_mc.value).abs() <= 4.0 * r_mc.se);
    }

    #[test]
    fn bernstein_examples() {
        let mean = Matrix::from_element(1, 1, 0.5);
        let v = Matrix::from_element(1, 1, 0.25);
        assert!((matrix_bernstein_bound(&mean, &v, 4, 1) - (0.5f64.sqrt() + 1.0 / 12.0)).abs() < 1e-12);
        let constant = PsdMatrixLaw::new(vec![0.5, 0.5], vec![Matrix::identity(2, 2); 2]).unwrap();
        assert!(lambda_max(&constant.variance()) < 1e-15);
        let e = constant.expected_lambda_max(9, 100, 0).unwrap();
        assert!(e.value.abs() < 1e-12);
        assert!((constant.bernstein_bound(9) - (E * 2.0).ln() / 9.0).abs() < 1e-12);
        let bern = PsdMatrixLaw::new(vec![0.5, 0.5], vec![Matrix::zeros(1, 1), Matrix::identity(1, 1)]).unwrap();
        assert!((bern.variance()[(0, 0)] - 0.25).abs() < 1e-15);
    }

    #[test]
    fn whitened_blocks_satisfy_bernstein() {
        let inst = instances::can_a();
        let p = profile_of(&inst);
        let law = whitened_feature_law(&p, &p.indices()).unwrap();
        assert!((law.mean() - Matrix::identity(2, 2)).norm() < 1e-12);
        let e = law.expected_lambda_max(100, 10_000, 7).unwrap();
        assert!(e.value + 3.0 * e.se <= law.bernstein_bound(100));
    }

    #[test]
    fn v_examples() {
        // Rademacher coordinate: psi^2 = 1 on the support.
        let inst = instances::symmetric_tie();
        let p = profile_of(&inst);
        assert!(lambda_max_v(&p, &p.indices()).unwrap().abs() < 1e-12);
        for s in 2..=5 {
            let inst = instances::intercept_block(s);
            let p = profile_of(&inst);
            let v = v_block(&p, FeatureIndex(0)).unwrap();
            assert!(lambda_max(&v) >= (s - 1) as f64 - 1e-9);
            assert!((v - Matrix::identity(s, s) * (s - 1) as f64).norm() < 1e-9);
        }
    }

    #[test]
    fn gaussian_design_v_is_s_plus_one() {
        let s = 3;
        let design = GaussianDesign::new(vec![1.0; s], NoiseLaw::Gaussian { sigma: 1.0 }).unwrap();
        let coll = FeatureCollection::new(vec![("all".into(), FeatureMap::identity(s))]).unwrap();
        let p = PopulationProfile::gaussian_design(&design, &coll, Tolerances::default()).unwrap();
        let q = lambda_max_v_gaussian(&design, &coll, &p, FeatureIndex(0), 1_000_000, 11).unwrap();
        assert!((q.value - (s + 1) as f64).abs() <= 0.02 * (s + 1) as f64, "{q:?}");
    }

    #[test]
    fn l_examples() {
        let inst = instances::symmetric_tie();
        let p = profile_of(&inst);
        let single = estimate_l(&p, &[FeatureIndex(0)], &LOptions::default()).unwrap();
        assert_eq!(single.method, LMethod::Exact);
        assert!(single.value.abs() < 1e-12);
        let inst = instances::can_a();
        let p = profile_of(&inst);
        let all = p.indices();
        let ascent = estimate_l(&p, &all, &LOptions::default()).unwrap();
        let grid = l_grid(&p, &all, 1e-3).unwrap();
        assert!((ascent.value - grid.value).abs() <= 1e-3, "{} vs {}", ascent.value, grid.value);
        assert!(matches!(ascent.method, LMethod::ProjectedAscent { .. }));
    }

    #[test]
    fn l_matches_grid_in_three_dimensions() {
        let inst = instances::can_a_extended();
        let p = profile_of(&inst);
        let all = p.indices();
        let ascent = estimate_l(&p, &all, &LOptions::default()).unwrap();
        let grid = l_grid(&p, &all, 1e-3).unwrap();
        assert!((ascent.value - grid.value).abs() <= 1e-3, "{} vs {}", ascent.value, grid.value);
    }

    #[test]
    fn threshold_examples() {
        let t = thm2_threshold(1.0, 1.0, 1, 0.1);
        assert!((t - (518.0 + 139.0 * 20f64.ln())).abs() < 1e-9);
        assert!((t - 934.4).abs() < 0.05);
        assert_eq!(a_value(1, 0.0, 0.0, 10).unwrap(), 0.0);
        assert_eq!(remark1_main(1, 2.0), 160.0);
        let (lo, hi) = thm1_quantile_limits(1.0, 0.5, 0.05);
        assert!((hi - (1.0 + 20f64.ln())).abs() < 1e-12 && (lo - hi / 32.0).abs() < 1e-15);
    }

    #[test]
    fn missing_input_is_named() {
        let err = thresholds_and_bounds(&BoundInputs::default(), 10, 0.1, 1).unwrap_err();
        assert!(matches!(err, Error::IncompleteReport("lambda_max_v")));
        let mut inputs = BoundInputs { lambda_max_v: Some(Quantity::exact(1.0)), ..BoundInputs::default() };
        inputs.lambda_max_v_star = inputs.lambda_max_v;
        let err = thresholds_and_bounds(&inputs, 10, 0.1, 1).unwrap_err();
        assert!(matches!(err, Error::IncompleteReport("l")));
    }

    #[test]
    fn cor3_least_n_is_a_fixed_point() {
        let inst = instances::can_a();
        let p = profile_of(&inst);
        let d = class_d(&p).unwrap();
        let consts = Cor3Constants { lambda_v: 1.0, l: 2.0, total_dim: 2, index_count: 2, sigma2_d: d.sigma2() };
        let n = cor3_least_n(&consts, |m| d.r_n(m), 0.1).unwrap();
        assert!(n as f64 >= cor3_threshold(&consts, d.r_n(n), 0.1).unwrap());
        assert!(((n - 1) as f64) < cor3_threshold(&consts, d.r_n(n - 1), 0.1).unwrap());
    }

    #[test]
    fn full_report_on_canonical_instance() {
        let inst = instances::can_a();
        let p = profile_of(&inst);
        let opts = ReportOptions { trials: 2000, seed: 1, ..ReportOptions::default() };
        let r = compute_report(&inst.law, &inst.collection, &p, 1000, 0.1, 1, &opts).unwrap();
        for e in &r.entries {
            assert!(e.value.is_finite(), "{}", e.name);
            if !["e_sup_delta", "e_sup_lambda"].contains(&e.name.as_str()) {
                assert!(e.value >= 0.0, "{} = {}", e.name, e.value);
            }
        }
        assert_eq!(r.subsets.len(), 3);
        for a in &r.subsets {
            for b in &r.subsets {
                if a.members.iter().all(|t| b.members.contains(t)) {
                    assert!(a.a <= b.a + 1e-12);
                }
            }
        }
        let json = serde_json::to_value(&r).unwrap();
        assert!(json["entries"].as_array().unwrap().iter().any(|e| e["name"] == "cor3_bound"));
        let smaller = compute_report(&inst.law, &inst.collection, &p, 1000, 0.05, 1, &opts).unwrap();
        for name in ["thm2_n", "cor3_n", "cor3_least_n"] {
            assert!(smaller.value(name).unwrap() >= r.value(name).unwrap());
        }
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(50))]

        #[test]
        fn sandwich_holds_on_random_classes(seed in any::<u64>()) {
            let mut rng = trial_rng(seed, 1);
            let atoms = rng.random_range(3..=5usize);
            let raw: Vec<f64> = (0..atoms).map(|_| rng.random_range(0.1..1.0)).collect();
            let total: f64 = raw.iter().sum();
            let weights = raw.iter().map(|w| w / total).collect();
            let size = rng.random_range(1..=16usize);
            let dim = rng.random_range(1..=3usize);
            let values = (0..size)
                .map(|_| (0..atoms).map(|_| Vector::from_fn(dim, |_, _| rng.random_range(-2.0..2.0))).collect())
                .collect();
            let class = FiniteClass::new(weights, values).unwrap();
            let n = rng.random_range(1..=30usize);
            let s = finite_sup_sandwich(&class, n, 10_000, seed).unwrap();
            prop_assert!(s.lower <= s.estimate.value + 3.0 * s.estimate.se);
            prop_assert!(s.estimate.value - 3.0 * s.estimate.se <= s.upper);
        }
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(20))]

        #[test]
        fn bernstein_holds_on_random_psd_laws(seed in any::<u64>()) {
            let mut rng = trial_rng(seed, 2);
            let d = rng.random_range(1..=3usize);
            let atoms = rng.random_range(2..=5usize);
            let raw: Vec<f64> = (0..atoms).map(|_| rng.random_range(0.1..1.0)).collect();
            let total: f64 = raw.iter().sum();
            let mats = (0..atoms)
                .map(|_| {
                    let b = Matrix::from_fn(d, d, |_, _| rng.random_range(-1.5..1.5));
                    &b * b.transpose()
                })
                .collect();
            let law = PsdMatrixLaw::new(raw.iter().map(|w| w / total).collect(), mats).unwrap();
            let n = rng.random_range(1..=50usize);
            let e = law.expected_lambda_max(n, 10_000, seed).unwrap();
            prop_assert!(e.value - 3.0 * e.se <= law.bernstein_bound(n));
        }
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(16))]

        #[test]
        fn a_is_monotone_along_chains(seed in any::<u64>(), n in 1usize..200) {
            let inst = instances::random_instance(seed);
            let p = profile_of(&inst);
            let mut order = p.indices();
            let mut rng = trial_rng(seed, 3);
            for i in (1..order.len()).rev() {
                order.swap(i, rng.random_range(0..=i));
            }
            let mut prev = 0.0;
            for j in 1..=order.len() {
                let a = subset_complexity(&p, &order[..j], n).unwrap().a;
                prop_assert!(a + 1e-12 >= prev);
                prev = a;
            }
        }

        #[test]
        fn l_dominates_block_values(seed in any::<u64>()) {
            let inst = instances::random_instance(seed);
            let p = profile_of(&inst);
            let opts = LOptions { restarts: 8, ..LOptions::default() };
            let all = p.indices();
            let joint = estimate_l(&p, &all, &opts).unwrap();
            for &t in &all {
                let single = estimate_l(&p, &[t], &opts).unwrap();
                prop_assert!(joint.value + 1e-9 >= single.value);
            }
        }
    }
}
