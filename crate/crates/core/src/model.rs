//! Laws of `(X, Y)`, feature maps, collections of feature maps, and datasets.

use std::fmt;
use std::ops::{Add, Mul};
use std::sync::Arc;

use nalgebra::SVD;
use rand::Rng;
use rand_distr::{Binomial, Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{lambda_min, Matrix, Vector};
use crate::seeds::trial_rng;

/// Tolerance on the total mass of a discrete law.
pub const WEIGHT_SUM_TOL: f64 = 1e-12;
/// Covariances with a smaller eigenvalue are treated as singular.
pub const LAMBDA_MIN_GUARD: f64 = 1e-10;
/// Default warning cap on the size of a subset collection.
pub const DEFAULT_SUBSET_CAP: u128 = 1_000_000;

/// A point of the input space.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct InputPoint(Vec<f64>);

impl InputPoint {
    pub fn new(coords: Vec<f64>) -> Result<Self> {
        if coords.iter().any(|c| !c.is_finite()) {
            return Err(Error::NonFinite("input point"));
        }
        Ok(Self(coords))
    }

    pub fn coords(&self) -> &[f64] {
        &self.0
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }
}

/// One support point of a discrete law.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Atom {
    pub x: InputPoint,
    pub y: f64,
    pub weight: f64,
}

/// A finitely supported law of `(X, Y)`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DiscreteLaw {
    atoms: Vec<Atom>,
}

impl DiscreteLaw {
    pub fn new(atoms: Vec<Atom>) -> Result<Self> {
        let Some(first) = atoms.first() else {
            return Err(Error::InvalidLaw("no atoms".into()));
        };
        let p = first.x.dim();
        let mut total = 0.0;
        for (i, atom) in atoms.iter().enumerate() {
            if atom.x.dim() != p {
                return Err(Error::DimensionMismatch {
                    context: "atom input dimension",
                    expected: p,
                    got: atom.x.dim(),
                });
            }
            if !atom.y.is_finite() {
                return Err(Error::NonFinite("atom response"));
            }
            if !(atom.weight.is_finite() && atom.weight > 0.0) {
                return Err(Error::InvalidLaw(format!("atom {i} has non-positive weight {}", atom.weight)));
            }
            total += atom.weight;
        }
        if (total - 1.0).abs() > WEIGHT_SUM_TOL {
            return Err(Error::InvalidLaw(format!("weights sum to {total}, not 1")));
        }
        Ok(Self { atoms })
    }

    /// Uniform law over the listed `(x, y)` pairs.
    pub fn uniform(points: Vec<(Vec<f64>, f64)>) -> Result<Self> {
        let w = 1.0 / points.len().max(1) as f64;
        let atoms = points
            .into_iter()
            .map(|(x, y)| Ok(Atom { x: InputPoint::new(x)?, y, weight: w }))
            .collect::<Result<Vec<_>>>()?;
        Self::new(atoms)
    }

    /// `X` uniform on `inputs`, `Y = target(X) + noise` with the noise drawn
    /// independently from the `(value, probability)` list.
    pub fn with_independent_noise(
        inputs: Vec<Vec<f64>>,
        target: impl Fn(&[f64]) -> f64,
        noise: &[(f64, f64)],
    ) -> Result<Self> {
        let wx = 1.0 / inputs.len().max(1) as f64;
        let mut atoms = Vec::with_capacity(inputs.len() * noise.len());
        for x in inputs {
            let x = InputPoint::new(x)?;
            let mean = target(x.coords());
            for &(eps, p) in noise {
                atoms.push(Atom { x: x.clone(), y: mean + eps, weight: wx * p });
            }
        }
        Self::new(atoms)
    }

    pub fn atoms(&self) -> &[Atom] {
        &self.atoms
    }

    pub fn len(&self) -> usize {
        self.atoms.len()
    }

    pub fn is_empty(&self) -> bool {
        self.atoms.is_empty()
    }

    pub fn input_dim(&self) -> usize {
        self.atoms[0].x.dim()
    }

    pub fn weights(&self) -> Vec<f64> {
        self.atoms.iter().map(|a| a.weight).collect()
    }

    /// `sum_atoms weight * f(x, y)`.
    pub fn expect<T, F>(&self, f: F) -> T
    where
        T: Add<Output = T> + Mul<f64, Output = T>,
        F: Fn(&InputPoint, f64) -> T,
    {
        let mut iter = self.atoms.iter();
        let first = iter.next().expect("validated law has atoms");
        let mut acc = f(&first.x, first.y) * first.weight;
        for atom in iter {
            acc = acc + f(&atom.x, atom.y) * atom.weight;
        }
        acc
    }

    /// Multinomial atom counts for `n` draws.
    pub fn sample_counts<R: Rng + ?Sized>(&self, n: usize, rng: &mut R) -> Vec<u32> {
        multinomial_counts(&self.weights(), n, rng)
    }

    /// Calls `f(counts, probability)` for every possible atom-count vector of a
    /// sample of size `n`. Fails when there are more than `cap` of them.
    pub fn for_each_composition(&self, n: usize, cap: u128, f: impl FnMut(&[u32], f64)) -> Result<()> {
        for_each_composition(&self.weights(), n, cap, f)
    }

    /// Dataset with the given atom counts (zero counts are dropped).
    pub fn dataset_from_counts(&self, counts: &[u32], provenance: Option<SeedProvenance>) -> Result<Dataset> {
        if counts.len() != self.atoms.len() {
            return Err(Error::DimensionMismatch {
                context: "atom counts",
                expected: self.atoms.len(),
                got: counts.len(),
            });
        }
        let samples = self
            .atoms
            .iter()
            .zip(counts)
            .filter(|(_, &c)| c > 0)
            .map(|(a, &c)| Sample { x: a.x.clone(), y: a.y, count: c })
            .collect();
        let mut data = Dataset::from_weighted(samples)?;
        data.provenance = provenance;
        data.atom_counts = Some(counts.to_vec());
        Ok(data)
    }
}

/// Multinomial counts for `n` draws from `weights`, by sequential conditional
/// binomials.
pub fn multinomial_counts<R: Rng + ?Sized>(weights: &[f64], n: usize, rng: &mut R) -> Vec<u32> {
    let mut counts = vec![0u32; weights.len()];
    let mut remaining = n as u64;
    let mut mass = 1.0f64;
    let last = weights.len() - 1;
    for (i, &w) in weights.iter().enumerate() {
        if remaining == 0 {
            break;
        }
        if i == last {
            counts[i] = remaining as u32;
            break;
        }
        let p = (w / mass).clamp(0.0, 1.0);
        let k = Binomial::new(remaining, p).expect("valid binomial").sample(rng);
        counts[i] = k as u32;
        remaining -= k;
        mass -= w;
        if mass <= 0.0 {
            counts[i] += remaining as u32;
            break;
        }
    }
    counts
}

/// Calls `f(counts, probability)` for every count vector of `n` draws from
/// `weights`. Fails when there are more than `cap` of them.
pub fn for_each_composition(weights: &[f64], n: usize, cap: u128, mut f: impl FnMut(&[u32], f64)) -> Result<()> {
    let m = weights.len();
    if m == 0 {
        return Err(Error::EmptyCollection);
    }
    let total = binomial(n + m - 1, m - 1);
    if total > cap {
        return Err(Error::InvalidArgument(format!("{total} sample compositions exceed the enumeration cap of {cap}")));
    }
    let log_w: Vec<f64> = weights.iter().map(|w| w.ln()).collect();
    let log_fact: Vec<f64> = std::iter::once(0.0)
        .chain((1..=n).scan(0.0, |acc, k| {
            *acc += (k as f64).ln();
            Some(*acc)
        }))
        .collect();
    let mut counts = vec![0u32; m];
    counts[m - 1] = n as u32;
    loop {
        let mut lp = log_fact[n];
        for (c, lw) in counts.iter().zip(&log_w) {
            if *c > 0 {
                lp += *c as f64 * lw - log_fact[*c as usize];
            }
        }
        f(&counts, lp.exp());
        if !next_composition(&mut counts, n as u32) {
            break;
        }
    }
    Ok(())
}

/// Law of the additive noise of a generative design.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum NoiseLaw {
    Gaussian { sigma: f64 },
    Rademacher { scale: f64 },
}

impl NoiseLaw {
    pub fn variance(&self) -> f64 {
        match *self {
            NoiseLaw::Gaussian { sigma } => sigma * sigma,
            NoiseLaw::Rademacher { scale } => scale * scale,
        }
    }

    fn draw<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        match *self {
            NoiseLaw::Gaussian { sigma } => sigma * rng.sample::<f64, _>(StandardNormal),
            NoiseLaw::Rademacher { scale } => {
                if rng.random::<bool>() {
                    scale
                } else {
                    -scale
                }
            }
        }
    }
}

/// `X ~ N(0, I_p)` and `Y = <target, X> + noise`, noise independent of `X`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GaussianDesign {
    pub target: Vec<f64>,
    pub noise: NoiseLaw,
}

impl GaussianDesign {
    pub fn new(target: Vec<f64>, noise: NoiseLaw) -> Result<Self> {
        if target.is_empty() {
            return Err(Error::InvalidLaw("empty target".into()));
        }
        if target.iter().any(|v| !v.is_finite()) || !noise.variance().is_finite() {
            return Err(Error::NonFinite("gaussian design"));
        }
        Ok(Self { target, noise })
    }

    pub fn dim(&self) -> usize {
        self.target.len()
    }

    pub fn draw<R: Rng + ?Sized>(&self, rng: &mut R) -> (Vec<f64>, f64) {
        let x: Vec<f64> = (0..self.dim()).map(|_| rng.sample(StandardNormal)).collect();
        let y = x.iter().zip(&self.target).map(|(a, b)| a * b).sum::<f64>() + self.noise.draw(rng);
        (x, y)
    }
}

/// The law of `(X, Y)`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub enum JointDistribution {
    Discrete(DiscreteLaw),
    Generative(GaussianDesign),
}

impl JointDistribution {
    pub fn as_discrete(&self) -> Result<&DiscreteLaw> {
        match self {
            JointDistribution::Discrete(law) => Ok(law),
            JointDistribution::Generative(_) => Err(Error::GenerativeLaw),
        }
    }

    pub fn input_dim(&self) -> usize {
        match self {
            JointDistribution::Discrete(law) => law.input_dim(),
            JointDistribution::Generative(g) => g.dim(),
        }
    }

    /// Exact expectation of `f(X, Y)`; only defined for discrete laws.
    pub fn exact_expectation<T, F>(&self, f: F) -> Result<T>
    where
        T: Add<Output = T> + Mul<f64, Output = T>,
        F: Fn(&InputPoint, f64) -> T,
    {
        Ok(self.as_discrete()?.expect(f))
    }

    /// `n` i.i.d. draws from the stream `(master, trial)`.
    pub fn sample(&self, n: usize, master: u64, trial: u64) -> Result<Dataset> {
        if n == 0 {
            return Err(Error::EmptySample);
        }
        let mut rng = trial_rng(master, trial);
        let provenance = Some(SeedProvenance { master, trial });
        match self {
            JointDistribution::Discrete(law) => {
                let counts = law.sample_counts(n, &mut rng);
                law.dataset_from_counts(&counts, provenance)
            }
            JointDistribution::Generative(design) => {
                let mut samples = Vec::with_capacity(n);
                for _ in 0..n {
                    let (x, y) = design.draw(&mut rng);
                    samples.push(Sample { x: InputPoint(x), y, count: 1 });
                }
                let mut data = Dataset::from_weighted(samples)?;
                data.provenance = provenance;
                Ok(data)
            }
        }
    }
}

/// Free-function form of [`JointDistribution::exact_expectation`].
pub fn exact_expectation<T, F>(f: F, law: &JointDistribution) -> Result<T>
where
    T: Add<Output = T> + Mul<f64, Output = T>,
    F: Fn(&InputPoint, f64) -> T,
{
    law.exact_expectation(f)
}

/// Free-function form of [`JointDistribution::sample`].
pub fn sample_dataset(law: &JointDistribution, n: usize, seed: SeedProvenance) -> Result<Dataset> {
    law.sample(n, seed.master, seed.trial)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SeedProvenance {
    pub master: u64,
    pub trial: u64,
}

/// A distinct observation together with its multiplicity in the dataset.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Sample {
    pub x: InputPoint,
    pub y: f64,
    pub count: u32,
}

/// A sample of size `n`, stored as distinct rows with multiplicities.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Dataset {
    samples: Vec<Sample>,
    n: usize,
    provenance: Option<SeedProvenance>,
    atom_counts: Option<Vec<u32>>,
}

impl Dataset {
    pub fn from_pairs(pairs: Vec<(Vec<f64>, f64)>) -> Result<Self> {
        let samples = pairs
            .into_iter()
            .map(|(x, y)| {
                if !y.is_finite() {
                    return Err(Error::NonFinite("response"));
                }
                Ok(Sample { x: InputPoint::new(x)?, y, count: 1 })
            })
            .collect::<Result<Vec<_>>>()?;
        Self::from_weighted(samples)
    }

    pub fn from_weighted(samples: Vec<Sample>) -> Result<Self> {
        let n: usize = samples.iter().map(|s| s.count as usize).sum();
        if n == 0 {
            return Err(Error::EmptySample);
        }
        Ok(Self { samples, n, provenance: None, atom_counts: None })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn samples(&self) -> &[Sample] {
        &self.samples
    }

    /// Every observation, repeated according to its multiplicity.
    pub fn expanded(&self) -> impl Iterator<Item = (&InputPoint, f64)> + '_ {
        self.samples.iter().flat_map(|s| std::iter::repeat_n((&s.x, s.y), s.count as usize))
    }

    pub fn provenance(&self) -> Option<SeedProvenance> {
        self.provenance
    }

    /// Per-atom counts when drawn from a discrete law.
    pub fn atom_counts(&self) -> Option<&[u32]> {
        self.atom_counts.as_deref()
    }
}

/// Identifier of a feature map within a collection; its order breaks ties.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct FeatureIndex(pub usize);

impl fmt::Display for FeatureIndex {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "#{}", self.0)
    }
}

type CustomFn = dyn Fn(&[f64]) -> Vec<f64> + Send + Sync;

#[derive(Clone)]
enum MapKind {
    Affine { weights: Matrix, offset: Vector },
    Select { base: Arc<FeatureMap>, coords: Vec<usize> },
    Transform { base: Arc<FeatureMap>, a: Matrix },
    Custom { dim: usize, f: Arc<CustomFn> },
}

/// A feature map `phi: X -> R^d`.
#[derive(Clone)]
pub struct FeatureMap {
    kind: MapKind,
}

impl fmt::Debug for FeatureMap {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match &self.kind {
            MapKind::Affine { weights, offset } => {
                f.debug_struct("Affine").field("weights", weights).field("offset", offset).finish()
            }
            MapKind::Select { base, coords } => {
                f.debug_struct("Select").field("base", base).field("coords", coords).finish()
            }
            MapKind::Transform { base, a } => f.debug_struct("Transform").field("base", base).field("a", a).finish(),
            MapKind::Custom { dim, .. } => f.debug_struct("Custom").field("dim", dim).finish(),
        }
    }
}

impl FeatureMap {
    /// `phi(x) = W x`.
    pub fn linear(weights: Matrix) -> Self {
        let offset = Vector::zeros(weights.nrows());
        Self { kind: MapKind::Affine { weights, offset } }
    }

    /// `phi(x) = W x + b`.
    pub fn affine(weights: Matrix, offset: Vector) -> Result<Self> {
        if weights.nrows() != offset.len() {
            return Err(Error::DimensionMismatch {
                context: "affine offset",
                expected: weights.nrows(),
                got: offset.len(),
            });
        }
        Ok(Self { kind: MapKind::Affine { weights, offset } })
    }

    /// The identity on `R^p`.
    pub fn identity(p: usize) -> Self {
        Self::linear(Matrix::identity(p, p))
    }

    /// The coordinate projections `x -> (x_j)_{j in coords}` on `R^p`.
    pub fn coordinates(p: usize, coords: &[usize]) -> Result<Self> {
        let mut w = Matrix::zeros(coords.len(), p);
        for (row, &j) in coords.iter().enumerate() {
            if j >= p {
                return Err(Error::InvalidArgument(format!("coordinate {j} out of range for dimension {p}")));
            }
            w[(row, j)] = 1.0;
        }
        Ok(Self::linear(w))
    }

    /// `x -> (1, x_1, ..., x_p)`.
    pub fn with_intercept(p: usize) -> Self {
        let mut w = Matrix::zeros(p + 1, p);
        let mut b = Vector::zeros(p + 1);
        b[0] = 1.0;
        for j in 0..p {
            w[(j + 1, j)] = 1.0;
        }
        Self { kind: MapKind::Affine { weights: w, offset: b } }
    }

    /// An arbitrary map with fixed output dimension.
    pub fn custom(dim: usize, f: impl Fn(&[f64]) -> Vec<f64> + Send + Sync + 'static) -> Self {
        Self { kind: MapKind::Custom { dim, f: Arc::new(f) } }
    }

    /// Restriction of `base` to the given output coordinates, in the given order.
    pub fn select(base: Arc<FeatureMap>, coords: Vec<usize>) -> Result<Self> {
        if let Some(&bad) = coords.iter().find(|&&c| c >= base.dim()) {
            return Err(Error::InvalidArgument(format!(
                "coordinate {bad} out of range for feature dimension {}",
                base.dim()
            )));
        }
        Ok(Self { kind: MapKind::Select { base, coords } })
    }

    /// `x -> A phi(x)`.
    pub fn transformed(&self, a: Matrix) -> Result<Self> {
        if a.ncols() != self.dim() {
            return Err(Error::DimensionMismatch {
                context: "feature transform",
                expected: self.dim(),
                got: a.ncols(),
            });
        }
        Ok(Self { kind: MapKind::Transform { base: Arc::new(self.clone()), a } })
    }

    pub fn dim(&self) -> usize {
        match &self.kind {
            MapKind::Affine { weights, .. } => weights.nrows(),
            MapKind::Select { coords, .. } => coords.len(),
            MapKind::Transform { a, .. } => a.nrows(),
            MapKind::Custom { dim, .. } => *dim,
        }
    }

    pub fn eval(&self, x: &[f64]) -> Vector {
        match &self.kind {
            MapKind::Affine { weights, offset } => {
                assert_eq!(weights.ncols(), x.len(), "feature map input dimension");
                let mut out = offset.clone();
                for i in 0..weights.nrows() {
                    let mut acc = 0.0;
                    for (j, xj) in x.iter().enumerate() {
                        acc += weights[(i, j)] * xj;
                    }
                    out[i] += acc;
                }
                out
            }
            MapKind::Select { base, coords } => {
                let full = base.eval(x);
                Vector::from_iterator(coords.len(), coords.iter().map(|&c| full[c]))
            }
            MapKind::Transform { base, a } => a * base.eval(x),
            MapKind::Custom { dim, f } => {
                let v = f(x);
                assert_eq!(v.len(), *dim, "custom feature map output dimension");
                Vector::from_vec(v)
            }
        }
    }

    /// `W` when the map is `x -> W x` (no offset, no custom parts).
    pub fn linear_part(&self) -> Option<Matrix> {
        match &self.kind {
            MapKind::Affine { weights, offset } => offset.iter().all(|&b| b == 0.0).then(|| weights.clone()),
            MapKind::Select { base, coords } => {
                let w = base.linear_part()?;
                Some(Matrix::from_fn(coords.len(), w.ncols(), |i, j| w[(coords[i], j)]))
            }
            MapKind::Transform { base, a } => base.linear_part().map(|w| a * w),
            MapKind::Custom { .. } => None,
        }
    }
}

#[derive(Debug, Clone)]
pub struct FeatureEntry {
    pub index: FeatureIndex,
    pub label: String,
    pub map: FeatureMap,
    /// Base coordinates when the entry comes from a subset collection.
    pub support: Option<Vec<usize>>,
}

/// A finite, ordered family of feature maps.
#[derive(Debug, Clone)]
pub struct FeatureCollection {
    entries: Vec<FeatureEntry>,
}

impl FeatureCollection {
    pub fn new(maps: Vec<(String, FeatureMap)>) -> Result<Self> {
        if maps.is_empty() {
            return Err(Error::EmptyCollection);
        }
        let entries = maps
            .into_iter()
            .enumerate()
            .map(|(i, (label, map))| FeatureEntry { index: FeatureIndex(i), label, map, support: None })
            .collect();
        Ok(Self { entries })
    }

    pub fn entries(&self) -> &[FeatureEntry] {
        &self.entries
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn indices(&self) -> Vec<FeatureIndex> {
        self.entries.iter().map(|e| e.index).collect()
    }

    pub fn get(&self, t: FeatureIndex) -> Result<&FeatureEntry> {
        self.entries.get(t.0).ok_or(Error::UnknownIndex(t))
    }

    pub fn dim(&self, t: FeatureIndex) -> Result<usize> {
        Ok(self.get(t)?.map.dim())
    }

    /// `sum_t d_t`.
    pub fn total_dim(&self) -> usize {
        self.entries.iter().map(|e| e.map.dim()).sum()
    }

    pub fn mixed_dimensions(&self) -> bool {
        let d0 = self.entries[0].map.dim();
        self.entries.iter().any(|e| e.map.dim() != d0)
    }

    pub fn label(&self, t: FeatureIndex) -> &str {
        self.entries.get(t.0).map(|e| e.label.as_str()).unwrap_or("?")
    }

    /// Sub-collection with the listed entries, re-indexed from zero.
    pub fn restrict(&self, keep: &[FeatureIndex]) -> Result<Self> {
        let mut entries = Vec::with_capacity(keep.len());
        for (i, &t) in keep.iter().enumerate() {
            let mut e = self.get(t)?.clone();
            e.index = FeatureIndex(i);
            entries.push(e);
        }
        if entries.is_empty() {
            return Err(Error::EmptyCollection);
        }
        Ok(Self { entries })
    }

    /// Checks every map on the support of `law`: finite values, non-singular
    /// covariance, and pairwise distinct induced linear classes.
    pub fn validate(&self, law: &DiscreteLaw) -> Result<()> {
        let mut designs = Vec::with_capacity(self.entries.len());
        for e in &self.entries {
            let d = e.map.dim();
            let mut rows = Matrix::zeros(law.len(), d);
            let mut sigma = Matrix::zeros(d, d);
            for (a, atom) in law.atoms().iter().enumerate() {
                let phi = e.map.eval(atom.x.coords());
                if phi.iter().any(|v| !v.is_finite()) {
                    return Err(Error::NonFinite("feature value"));
                }
                rows.set_row(a, &phi.transpose());
                sigma += &phi * phi.transpose() * atom.weight;
            }
            let lo = if d == 0 { 0.0 } else { lambda_min(&sigma) };
            if lo.is_nan() || lo <= LAMBDA_MIN_GUARD {
                return Err(Error::DegenerateFeature { index: e.index, lambda_min: lo });
            }
            designs.push(rows);
        }
        for i in 0..designs.len() {
            for j in (i + 1)..designs.len() {
                if designs[i].ncols() != designs[j].ncols() {
                    continue;
                }
                let joint = Matrix::from_fn(designs[i].nrows(), designs[i].ncols() * 2, |r, c| {
                    let d = designs[i].ncols();
                    if c < d {
                        designs[i][(r, c)]
                    } else {
                        designs[j][(r, c - d)]
                    }
                });
                if numerical_rank(&joint) == designs[i].ncols() {
                    return Err(Error::DuplicateClass { first: self.entries[i].index, second: self.entries[j].index });
                }
            }
        }
        Ok(())
    }
}

/// Odometer step over the first `m - 1` counts with their sum capped at `n`;
/// the last count takes the remainder.
fn next_composition(counts: &mut [u32], n: u32) -> bool {
    let m = counts.len();
    let mut sum: u32 = counts[..m - 1].iter().sum();
    for i in 0..m - 1 {
        if sum < n {
            counts[i] += 1;
            counts[m - 1] = n - sum - 1;
            return true;
        }
        sum -= counts[i];
        counts[i] = 0;
    }
    false
}

fn numerical_rank(m: &Matrix) -> usize {
    let sv = SVD::new(m.clone(), false, false).singular_values;
    let top = sv.iter().copied().fold(0.0f64, f64::max);
    let tol = top * 1e-9 * m.nrows().max(m.ncols()) as f64;
    sv.iter().filter(|&&s| s > tol).count()
}

/// `C(d, s)` without overflow for the sizes of interest.
pub fn binomial(d: usize, s: usize) -> u128 {
    if s > d {
        return 0;
    }
    let s = s.min(d - s);
    let mut acc: u128 = 1;
    for i in 0..s {
        acc = acc * (d - i) as u128 / (i + 1) as u128;
    }
    acc
}

/// Every size-`s` subset of `{0, .., d-1}` in lexicographic order.
pub fn lexicographic_subsets(d: usize, s: usize) -> Vec<Vec<usize>> {
    let mut out = Vec::new();
    if s == 0 || s > d {
        return out;
    }
    let mut cur: Vec<usize> = (0..s).collect();
    loop {
        out.push(cur.clone());
        let Some(i) = (0..s).rev().find(|&i| cur[i] < d - s + i) else {
            return out;
        };
        cur[i] += 1;
        for j in (i + 1)..s {
            cur[j] = cur[j - 1] + 1;
        }
    }
}

/// All restrictions of `base` to `s` of its coordinates.
pub fn subset_collection(base: FeatureMap, s: usize) -> Result<FeatureCollection> {
    subset_collection_with_cap(base, s, DEFAULT_SUBSET_CAP)
}

pub fn subset_collection_with_cap(base: FeatureMap, s: usize, cap: u128) -> Result<FeatureCollection> {
    let d = base.dim();
    if s == 0 || s > d {
        return Err(Error::InvalidSparsity { s, d });
    }
    let count = binomial(d, s);
    if count > cap {
        log::warn!("subset collection has {count} entries, above the cap of {cap}");
    }
    let base = Arc::new(base);
    let entries = lexicographic_subsets(d, s)
        .into_iter()
        .enumerate()
        .map(|(i, coords)| {
            let label = format!("{{{}}}", coords.iter().map(|c| c.to_string()).collect::<Vec<_>>().join(","));
            let map = FeatureMap::select(base.clone(), coords.clone())?;
            Ok(FeatureEntry { index: FeatureIndex(i), label, map, support: Some(coords) })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(FeatureCollection { entries })
}
