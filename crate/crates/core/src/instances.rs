//! Small named instances used by tests, examples and the CLI.

use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::Result;
use crate::linalg::{lambda_min, Matrix};
use crate::model::{subset_collection, DiscreteLaw, FeatureCollection, FeatureMap, JointDistribution};
use crate::seeds::trial_rng;

#[derive(Debug, Clone)]
pub struct Instance {
    pub name: String,
    pub law: JointDistribution,
    pub collection: FeatureCollection,
}

fn rademacher(scale: f64) -> [(f64, f64); 2] {
    [(-scale, 0.5), (scale, 0.5)]
}

/// `X` uniform on four points of the plane, `Y = x_1 + eps`, `eps = +-1`.
pub fn can_a_law() -> JointDistribution {
    let inputs = vec![vec![1.0, 2.0], vec![-1.0, -1.0], vec![2.0, 1.0], vec![-2.0, -2.0]];
    JointDistribution::Discrete(
        DiscreteLaw::with_independent_noise(inputs, |x| x[0], &rademacher(1.0)).expect("valid law"),
    )
}

fn coord(j: usize) -> FeatureMap {
    FeatureMap::coordinates(2, &[j]).expect("in range")
}

/// The canonical two-map instance: `phi_A(x) = x_1`, `phi_B(x) = x_2`.
pub fn can_a() -> Instance {
    Instance {
        name: "can-a".into(),
        law: can_a_law(),
        collection: FeatureCollection::new(vec![("A".into(), coord(0)), ("B".into(), coord(1))]).expect("non-empty"),
    }
}

/// The canonical instance with a third map `phi_C(x) = x_1 + x_2`.
pub fn can_a_extended() -> Instance {
    let sum = FeatureMap::linear(Matrix::from_row_slice(1, 2, &[1.0, 1.0]));
    Instance {
        name: "can-a-extended".into(),
        law: can_a_law(),
        collection: FeatureCollection::new(vec![("A".into(), coord(0)), ("B".into(), coord(1)), ("C".into(), sum)])
            .expect("non-empty"),
    }
}

/// The canonical law with the optimal map alone.
pub fn can_a_singleton() -> Instance {
    Instance {
        name: "can-a-singleton".into(),
        law: can_a_law(),
        collection: FeatureCollection::new(vec![("A".into(), coord(0))]).expect("non-empty"),
    }
}

/// `X` uniform on `{-1, 1}^2`, `Y = x_1 + x_2 + eps`: both coordinates tie.
pub fn symmetric_tie() -> Instance {
    let inputs = hypercube(2);
    let law = DiscreteLaw::with_independent_noise(inputs, |x| x[0] + x[1], &rademacher(1.0)).expect("valid law");
    Instance {
        name: "symmetric-tie".into(),
        law: JointDistribution::Discrete(law),
        collection: FeatureCollection::new(vec![("x1".into(), coord(0)), ("x2".into(), coord(1))]).expect("non-empty"),
    }
}

/// `X` uniform on a three-point line, `Y = 2 X` exactly.
pub fn realizable_noiseless() -> Instance {
    let law = DiscreteLaw::uniform(vec![(vec![1.0], 2.0), (vec![-1.0], -2.0), (vec![2.0], 4.0)]).expect("valid law");
    Instance {
        name: "realizable".into(),
        law: JointDistribution::Discrete(law),
        collection: FeatureCollection::new(vec![("x".into(), FeatureMap::identity(1))]).expect("non-empty"),
    }
}

/// The vertices of `{-1, 1}^p` in binary order.
pub fn hypercube(p: usize) -> Vec<Vec<f64>> {
    (0..(1usize << p)).map(|mask| (0..p).map(|j| if mask >> j & 1 == 1 { 1.0 } else { -1.0 }).collect()).collect()
}

/// `X` uniform on `{-1, 1}^p`, `Y = <target, X> + eps`, `eps = +-noise`.
pub fn hypercube_law(p: usize, target: &[f64], noise: f64) -> Result<JointDistribution> {
    let target = target.to_vec();
    let law = DiscreteLaw::with_independent_noise(
        hypercube(p),
        move |x| x.iter().zip(&target).map(|(a, b)| a * b).sum(),
        &rademacher(noise),
    )?;
    Ok(JointDistribution::Discrete(law))
}

/// Best subset selection over `{-1, 1}^4` with a planted 2-sparse target.
pub fn bss_orthogonal() -> Instance {
    let law = hypercube_law(4, &[1.0, 0.8, 0.0, 0.0], 0.5).expect("valid law");
    Instance {
        name: "bss-orthogonal".into(),
        law,
        collection: subset_collection(FeatureMap::identity(4), 2).expect("valid sparsity"),
    }
}

/// A single block `(1, x_1, .., x_{s-1})` over the hypercube `{-1, 1}^{s-1}`.
pub fn intercept_block(s: usize) -> Instance {
    let p = s.saturating_sub(1).max(1);
    let law = hypercube_law(p, &vec![1.0; p], 0.5).expect("valid law");
    let map = if s == 1 {
        FeatureMap::affine(Matrix::zeros(1, p), crate::linalg::Vector::from_element(1, 1.0)).expect("shapes")
    } else {
        FeatureMap::with_intercept(p)
    };
    Instance {
        name: format!("intercept-{s}"),
        law,
        collection: FeatureCollection::new(vec![("block".into(), map)]).expect("non-empty"),
    }
}

/// A random square matrix, well away from singular.
pub fn random_invertible<R: Rng + ?Sized>(d: usize, rng: &mut R) -> Matrix {
    loop {
        let m = Matrix::from_fn(d, d, |_, _| rng.sample::<f64, _>(StandardNormal));
        let s = &m * m.transpose();
        if lambda_min(&s) > 0.05 {
            return m;
        }
    }
}

/// A random discrete instance: 2 or 3 input coordinates, 4 to 7 atoms, and
/// 2 to 4 linear maps of dimension 1 or 2. Resampled until it validates.
pub fn random_instance(seed: u64) -> Instance {
    let mut rng = trial_rng(seed, 0xA11CE);
    loop {
        let p = rng.random_range(2..=3usize);
        let atoms = rng.random_range(4..=7usize);
        let raw: Vec<f64> = (0..atoms).map(|_| rng.random_range(0.2..1.0)).collect();
        let total: f64 = raw.iter().sum();
        let points: Vec<_> = (0..atoms)
            .map(|i| {
                let x: Vec<f64> = (0..p).map(|_| rng.random_range(-2.0..2.0)).collect();
                let y = x[0] - 0.5 * x[1] + rng.random_range(-1.0..1.0);
                (x, y, raw[i] / total)
            })
            .collect();
        let atoms_vec = points
            .into_iter()
            .map(|(x, y, weight)| crate::model::Atom {
                x: crate::model::InputPoint::new(x).expect("finite"),
                y,
                weight,
            })
            .collect();
        let Ok(law) = DiscreteLaw::new(atoms_vec) else { continue };
        let m = rng.random_range(2..=4usize);
        let maps = (0..m)
            .map(|i| {
                let d = rng.random_range(1..=2usize);
                let w = Matrix::from_fn(d, p, |_, _| rng.random_range(-1.0..1.0));
                (format!("m{i}"), FeatureMap::linear(w))
            })
            .collect();
        let collection = FeatureCollection::new(maps).expect("non-empty");
        if collection.validate(&law).is_err() {
            continue;
        }
        let law = JointDistribution::Discrete(law);
        let conditioned = collection
            .indices()
            .into_iter()
            .all(|t| crate::population::covariance(t, &law, &collection).is_ok_and(|s| lambda_min(&s) > 0.05));
        if conditioned {
            return Instance { name: format!("random-{seed}"), law, collection };
        }
    }
}
