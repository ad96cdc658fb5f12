//! Experiment configuration: JSON schema and conversion into core objects.

use std::path::Path;

use serde::Deserialize;

use ferm_core::bounds::LOptions;
use ferm_core::experiments::{BoundKind, BssDesign};
use ferm_core::instances;
use ferm_core::linalg::{Matrix, Vector};
use ferm_core::model::{
    subset_collection_with_cap, Atom, DiscreteLaw, FeatureCollection, FeatureMap, GaussianDesign, InputPoint,
    JointDistribution, NoiseLaw, DEFAULT_SUBSET_CAP,
};
use ferm_core::population::Tolerances;

/// A schema violation, located by a dotted field path.
#[derive(Debug, thiserror::Error)]
#[error("{path}: {message}")]
pub struct ConfigError {
    pub path: String,
    pub message: String,
}

impl ConfigError {
    pub fn new(path: impl Into<String>, message: impl Into<String>) -> Self {
        Self { path: path.into(), message: message.into() }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    /// A named built-in instance; mutually exclusive with `law` + `collection`.
    pub instance: Option<String>,
    pub law: Option<LawSpec>,
    pub collection: Option<CollectionSpec>,
    pub seed: Option<u64>,
    #[serde(default)]
    pub tolerances: ToleranceSpec,
    #[serde(default)]
    pub l: LSpec,
    pub bounds: Option<BoundsParams>,
    pub localize: Option<LocalizeParams>,
    pub quantiles: Option<QuantileParams>,
    pub consistency: Option<ConsistencyParams>,
    pub validity: Option<ValidityParams>,
    pub pathwise: Option<PathwiseParams>,
    pub bss: Option<BssParams>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum LawSpec {
    /// Explicit atoms.
    Discrete { atoms: Vec<AtomSpec> },
    /// `X` uniform on `inputs`, `Y = <target, X> + eps` with independent discrete noise.
    IndependentNoise { inputs: Vec<Vec<f64>>, target: Vec<f64>, noise: Vec<NoiseAtom> },
    /// `X` uniform on `{-1, 1}^p`, `Y = <target, X> +- noise`.
    Hypercube { target: Vec<f64>, noise: f64 },
    /// `X ~ N(0, I)`, `Y = <target, X> + eps`.
    Gaussian { target: Vec<f64>, noise: NoiseLaw },
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AtomSpec {
    pub x: Vec<f64>,
    pub y: f64,
    pub weight: f64,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NoiseAtom {
    pub value: f64,
    pub prob: f64,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum CollectionSpec {
    Maps {
        maps: Vec<MapSpec>,
    },
    /// Every size-`s` coordinate subset of the input.
    Subsets {
        s: usize,
        cap: Option<u128>,
    },
}

#[derive(Debug, Clone, Deserialize)]
pub struct MapSpec {
    pub label: String,
    #[serde(flatten)]
    pub map: MapKindSpec,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(tag = "map", rename_all = "snake_case")]
pub enum MapKindSpec {
    Identity,
    Coordinates {
        coords: Vec<usize>,
    },
    WithIntercept,
    /// `W x + b`, `W` given by rows.
    Affine {
        rows: Vec<Vec<f64>>,
        offset: Option<Vec<f64>>,
    },
}

#[derive(Debug, Clone, Copy, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ToleranceSpec {
    pub optimality_rel: f64,
    pub lambda_min_guard: f64,
}

impl Default for ToleranceSpec {
    fn default() -> Self {
        let t = Tolerances::default();
        Self { optimality_rel: t.optimality_rel, lambda_min_guard: t.lambda_min_guard }
    }
}

impl ToleranceSpec {
    pub fn tolerances(&self) -> Tolerances {
        Tolerances { optimality_rel: self.optimality_rel, lambda_min_guard: self.lambda_min_guard }
    }
}

#[derive(Debug, Clone, Copy, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LSpec {
    pub restarts: usize,
    pub tol: f64,
    pub max_iter: usize,
}

impl Default for LSpec {
    fn default() -> Self {
        let o = LOptions::default();
        Self { restarts: o.restarts, tol: o.tol, max_iter: o.max_iter }
    }
}

impl LSpec {
    pub fn options(&self, seed: u64) -> LOptions {
        LOptions { restarts: self.restarts, tol: self.tol, max_iter: self.max_iter, seed }
    }
}

fn default_delta() -> f64 {
    0.1
}

fn default_trials() -> usize {
    10_000
}

fn default_delta_grid() -> Vec<f64> {
    vec![0.01, 0.05, 0.1, 0.2]
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BoundsParams {
    pub n: usize,
    #[serde(default = "default_delta")]
    pub delta: f64,
    #[serde(default = "default_delta_grid")]
    pub delta_grid: Vec<f64>,
    /// Defaults to the minimizing `k`.
    pub k: Option<usize>,
    #[serde(default = "default_trials")]
    pub trials: usize,
    #[serde(default = "default_lattice")]
    pub max_lattice: usize,
}

fn default_lattice() -> usize {
    10
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SourceSpec {
    ClosedForm,
    ExpectedSup,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LocalizeParams {
    pub n: usize,
    #[serde(default = "default_delta")]
    pub delta: f64,
    pub k: Option<usize>,
    #[serde(default = "default_source")]
    pub source: SourceSpec,
    #[serde(default = "default_trials")]
    pub trials: usize,
}

fn default_source() -> SourceSpec {
    SourceSpec::ClosedForm
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct QuantileParams {
    pub n_grid: Vec<usize>,
    #[serde(default = "default_delta")]
    pub delta: f64,
    #[serde(default = "default_trials")]
    pub trials: usize,
    /// Defaults to `trials`.
    pub limit_draws: Option<usize>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConsistencyParams {
    pub n_grid: Vec<usize>,
    #[serde(default = "default_trials")]
    pub trials: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BoundKindSpec {
    Thm2,
    Cor3,
}

impl From<BoundKindSpec> for BoundKind {
    fn from(k: BoundKindSpec) -> Self {
        match k {
            BoundKindSpec::Thm2 => BoundKind::Thm2,
            BoundKindSpec::Cor3 => BoundKind::Cor3,
        }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ValidityParams {
    pub kind: BoundKindSpec,
    #[serde(default = "default_delta")]
    pub delta: f64,
    /// Defaults to the single point `ceil(threshold)`.
    pub n_grid: Option<Vec<usize>>,
    #[serde(default = "default_trials")]
    pub trials: usize,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PathwiseParams {
    pub n: usize,
    #[serde(default = "default_pathwise_trials")]
    pub trials: usize,
}

fn default_pathwise_trials() -> usize {
    1000
}

#[derive(Debug, Clone, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum BssDesignSpec {
    Hypercube { target: Vec<f64>, noise: f64 },
    Gaussian { target: Vec<f64>, noise: NoiseLaw },
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BssParams {
    pub design: BssDesignSpec,
    pub s: usize,
    /// Defaults to `[m, 2m, 4m, 8m]` with `m` the recovery threshold (discrete
    /// designs only).
    pub n_grid: Option<Vec<usize>>,
    #[serde(default = "default_bss_trials")]
    pub trials: usize,
    #[serde(default = "default_delta")]
    pub delta: f64,
}

fn default_bss_trials() -> usize {
    1000
}

impl BssParams {
    pub fn design(&self) -> BssDesign {
        match &self.design {
            BssDesignSpec::Hypercube { target, noise } => {
                BssDesign::Hypercube { target: target.clone(), noise: *noise }
            }
            BssDesignSpec::Gaussian { target, noise } => BssDesign::Gaussian { target: target.clone(), noise: *noise },
        }
    }
}

/// Parses a config file, reporting schema violations with their field path.
pub fn load(path: &Path) -> Result<ExperimentConfig, ConfigError> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| ConfigError::new("<file>", format!("cannot read {}: {e}", path.display())))?;
    parse(&text)
}

pub fn parse(text: &str) -> Result<ExperimentConfig, ConfigError> {
    let de = &mut serde_json::Deserializer::from_str(text);
    let cfg: ExperimentConfig = serde_path_to_error::deserialize(de).map_err(|e| {
        let path = e.path().to_string();
        ConfigError::new(if path == "." { "<root>".to_string() } else { path }, e.into_inner().to_string())
    })?;
    cfg.validate()?;
    Ok(cfg)
}

fn positive(path: &str, v: usize) -> Result<(), ConfigError> {
    if v == 0 {
        return Err(ConfigError::new(path, "must be at least 1"));
    }
    Ok(())
}

fn unit_open(path: &str, v: f64) -> Result<(), ConfigError> {
    if !(v > 0.0 && v < 1.0) {
        return Err(ConfigError::new(path, format!("must lie in (0, 1), got {v}")));
    }
    Ok(())
}

fn grid(path: &str, g: &[usize]) -> Result<(), ConfigError> {
    if g.is_empty() {
        return Err(ConfigError::new(path, "must not be empty"));
    }
    for (i, &n) in g.iter().enumerate() {
        positive(&format!("{path}[{i}]"), n)?;
    }
    Ok(())
}

impl ExperimentConfig {
    fn validate(&self) -> Result<(), ConfigError> {
        match (&self.instance, &self.law, &self.collection) {
            (Some(_), Some(_), _) => return Err(ConfigError::new("law", "not allowed together with `instance`")),
            (Some(_), _, Some(_)) => {
                return Err(ConfigError::new("collection", "not allowed together with `instance`"))
            }
            (None, Some(_), None) => return Err(ConfigError::new("collection", "missing field")),
            (None, None, Some(_)) => return Err(ConfigError::new("law", "missing field")),
            _ => {}
        }
        if let Some(name) = &self.instance {
            named_instance(name)?;
        }
        if let Some(b) = &self.bounds {
            positive("bounds.n", b.n)?;
            unit_open("bounds.delta", b.delta)?;
            for (i, d) in b.delta_grid.iter().enumerate() {
                unit_open(&format!("bounds.delta_grid[{i}]"), *d)?;
            }
            if let Some(k) = b.k {
                positive("bounds.k", k)?;
            }
        }
        if let Some(l) = &self.localize {
            positive("localize.n", l.n)?;
            unit_open("localize.delta", l.delta)?;
            if let Some(k) = l.k {
                positive("localize.k", k)?;
            }
        }
        if let Some(q) = &self.quantiles {
            grid("quantiles.n_grid", &q.n_grid)?;
            unit_open("quantiles.delta", q.delta)?;
        }
        if let Some(c) = &self.consistency {
            grid("consistency.n_grid", &c.n_grid)?;
        }
        if let Some(v) = &self.validity {
            unit_open("validity.delta", v.delta)?;
            if let Some(g) = &v.n_grid {
                grid("validity.n_grid", g)?;
            }
        }
        if let Some(p) = &self.pathwise {
            positive("pathwise.n", p.n)?;
        }
        if let Some(b) = &self.bss {
            unit_open("bss.delta", b.delta)?;
            if let Some(g) = &b.n_grid {
                grid("bss.n_grid", g)?;
            }
        }
        Ok(())
    }

    /// The master seed: `--seed` wins over the config value; one of them is required.
    pub fn seed(&self, flag: Option<u64>) -> Result<u64, ConfigError> {
        flag.or(self.seed).ok_or_else(|| ConfigError::new("seed", "missing field (set `seed` or pass --seed)"))
    }

    /// The law and collection described by the config.
    pub fn model(&self) -> Result<(JointDistribution, FeatureCollection), ConfigError> {
        if let Some(name) = &self.instance {
            let inst = named_instance(name)?;
            return Ok((inst.law, inst.collection));
        }
        let law_spec = self.law.as_ref().ok_or_else(|| ConfigError::new("law", "missing field"))?;
        let coll_spec = self.collection.as_ref().ok_or_else(|| ConfigError::new("collection", "missing field"))?;
        let law = build_law(law_spec)?;
        let collection = build_collection(coll_spec, law.input_dim())?;
        Ok((law, collection))
    }

    pub fn section<'a, T>(&self, name: &str, v: &'a Option<T>) -> Result<&'a T, ConfigError> {
        v.as_ref().ok_or_else(|| ConfigError::new(name, "missing section for this command"))
    }
}

pub const INSTANCE_NAMES: [&str; 6] =
    ["can-a", "can-a-extended", "can-a-singleton", "symmetric-tie", "realizable", "bss-orthogonal"];

fn named_instance(name: &str) -> Result<instances::Instance, ConfigError> {
    Ok(match name {
        "can-a" => instances::can_a(),
        "can-a-extended" => instances::can_a_extended(),
        "can-a-singleton" => instances::can_a_singleton(),
        "symmetric-tie" => instances::symmetric_tie(),
        "realizable" => instances::realizable_noiseless(),
        "bss-orthogonal" => instances::bss_orthogonal(),
        other => {
            return Err(ConfigError::new(
                "instance",
                format!("unknown instance `{other}`, expected one of {}", INSTANCE_NAMES.join(", ")),
            ))
        }
    })
}

fn law_error(path: &str, e: ferm_core::Error) -> ConfigError {
    ConfigError::new(path, e.to_string())
}

fn linear_target(target: &[f64], path: &str, p: usize) -> Result<(), ConfigError> {
    if target.len() != p {
        return Err(ConfigError::new(path, format!("expected {p} coefficients, got {}", target.len())));
    }
    Ok(())
}

fn build_law(spec: &LawSpec) -> Result<JointDistribution, ConfigError> {
    match spec {
        LawSpec::Discrete { atoms } => {
            let atoms = atoms
                .iter()
                .enumerate()
                .map(|(i, a)| {
                    Ok(Atom {
                        x: InputPoint::new(a.x.clone()).map_err(|e| law_error(&format!("law.atoms[{i}].x"), e))?,
                        y: a.y,
                        weight: a.weight,
                    })
                })
                .collect::<Result<Vec<_>, ConfigError>>()?;
            Ok(JointDistribution::Discrete(DiscreteLaw::new(atoms).map_err(|e| law_error("law.atoms", e))?))
        }
        LawSpec::IndependentNoise { inputs, target, noise } => {
            let p = inputs.first().map_or(0, Vec::len);
            linear_target(target, "law.target", p)?;
            let noise: Vec<(f64, f64)> = noise.iter().map(|a| (a.value, a.prob)).collect();
            let t = target.clone();
            let law = DiscreteLaw::with_independent_noise(
                inputs.clone(),
                move |x| x.iter().zip(&t).map(|(a, b)| a * b).sum(),
                &noise,
            )
            .map_err(|e| law_error("law", e))?;
            Ok(JointDistribution::Discrete(law))
        }
        LawSpec::Hypercube { target, noise } => {
            if target.is_empty() || target.len() > 16 {
                return Err(ConfigError::new("law.target", "hypercube dimension must lie in 1..=16"));
            }
            instances::hypercube_law(target.len(), target, *noise).map_err(|e| law_error("law", e))
        }
        LawSpec::Gaussian { target, noise } => Ok(JointDistribution::Generative(
            GaussianDesign::new(target.clone(), *noise).map_err(|e| law_error("law", e))?,
        )),
    }
}

fn build_collection(spec: &CollectionSpec, p: usize) -> Result<FeatureCollection, ConfigError> {
    match spec {
        CollectionSpec::Subsets { s, cap } => {
            subset_collection_with_cap(FeatureMap::identity(p), *s, cap.unwrap_or(DEFAULT_SUBSET_CAP))
                .map_err(|e| law_error("collection.s", e))
        }
        CollectionSpec::Maps { maps } => {
            if maps.is_empty() {
                return Err(ConfigError::new("collection.maps", "must not be empty"));
            }
            let built = maps
                .iter()
                .enumerate()
                .map(|(i, m)| {
                    let path = format!("collection.maps[{i}]");
                    Ok((m.label.clone(), build_map(&m.map, p, &path)?))
                })
                .collect::<Result<Vec<_>, ConfigError>>()?;
            FeatureCollection::new(built).map_err(|e| law_error("collection.maps", e))
        }
    }
}

fn build_map(spec: &MapKindSpec, p: usize, path: &str) -> Result<FeatureMap, ConfigError> {
    match spec {
        MapKindSpec::Identity => Ok(FeatureMap::identity(p)),
        MapKindSpec::WithIntercept => Ok(FeatureMap::with_intercept(p)),
        MapKindSpec::Coordinates { coords } => {
            if coords.is_empty() {
                return Err(ConfigError::new(format!("{path}.coords"), "must not be empty"));
            }
            FeatureMap::coordinates(p, coords).map_err(|e| law_error(&format!("{path}.coords"), e))
        }
        MapKindSpec::Affine { rows, offset } => {
            if rows.is_empty() {
                return Err(ConfigError::new(format!("{path}.rows"), "must not be empty"));
            }
            for (r, row) in rows.iter().enumerate() {
                if row.len() != p {
                    return Err(ConfigError::new(
                        format!("{path}.rows[{r}]"),
                        format!("expected {p} entries, got {}", row.len()),
                    ));
                }
            }
            let w = Matrix::from_fn(rows.len(), p, |i, j| rows[i][j]);
            let b = match offset {
                Some(b) => Vector::from_column_slice(b),
                None => Vector::zeros(rows.len()),
            };
            FeatureMap::affine(w, b).map_err(|e| law_error(&format!("{path}.offset"), e))
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn field_paths_locate_schema_errors() {
        let e = parse(r#"{"instance": "can-a", "bounds": {"n": "ten"}}"#).unwrap_err();
        assert_eq!(e.path, "bounds.n");
        let e = parse(r#"{"instance": "can-a", "bounds": {"n": 10, "delta": 1.5}}"#).unwrap_err();
        assert_eq!(e.path, "bounds.delta");
        let e = parse(r#"{"instance": "can-a", "colour": 1}"#).unwrap_err();
        assert!(e.message.contains("colour"));
        let e = parse(r#"{"law": {"kind": "hypercube", "target": [1.0], "noise": 0.5}}"#).unwrap_err();
        assert_eq!(e.path, "collection");
        let e = parse(r#"{"instance": "nope"}"#).unwrap_err();
        assert_eq!(e.path, "instance");
    }

    #[test]
    fn seed_is_mandatory() {
        let cfg = parse(r#"{"instance": "can-a"}"#).unwrap();
        assert_eq!(cfg.seed(None).unwrap_err().path, "seed");
        assert_eq!(cfg.seed(Some(3)).unwrap(), 3);
        let cfg = parse(r#"{"instance": "can-a", "seed": 5}"#).unwrap();
        assert_eq!(cfg.seed(None).unwrap(), 5);
        assert_eq!(cfg.seed(Some(7)).unwrap(), 7);
    }

    #[test]
    fn explicit_model_builds() {
        let cfg = parse(
            r#"{
                "law": {"kind": "independent_noise", "inputs": [[1, 2], [-1, -1], [2, 1], [-2, -2]],
                        "target": [1, 0], "noise": [{"value": -1, "prob": 0.5}, {"value": 1, "prob": 0.5}]},
                "collection": {"kind": "maps", "maps": [
                    {"label": "A", "map": "coordinates", "coords": [0]},
                    {"label": "B", "map": "coordinates", "coords": [1]}
                ]}
            }"#,
        )
        .unwrap();
        let (law, coll) = cfg.model().unwrap();
        assert_eq!(law.as_discrete().unwrap().len(), 8);
        assert_eq!(coll.len(), 2);
        let cfg = parse(
            r#"{"law": {"kind": "hypercube", "target": [1, 0.5, 0], "noise": 0.5},
                "collection": {"kind": "subsets", "s": 2}}"#,
        )
        .unwrap();
        assert_eq!(cfg.model().unwrap().1.len(), 3);
    }

    #[test]
    fn bad_map_rows_are_located() {
        let cfg = parse(
            r#"{"law": {"kind": "hypercube", "target": [1, 0.5], "noise": 0.5},
                "collection": {"kind": "maps", "maps": [{"label": "m", "map": "affine", "rows": [[1, 2, 3]]}]}}"#,
        )
        .unwrap();
        assert_eq!(cfg.model().unwrap_err().path, "collection.maps[0].rows[0]");
    }
}
