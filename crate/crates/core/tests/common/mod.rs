#![allow(dead_code)]

pub mod oracle;

use nalgebra::{DMatrix, DVector};
use pcm_selector::linalg::Moments;
use pcm_selector::{Dag, Dataset, LinearScm, RolePartition};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

/// Standardized sample from a random linear model over
/// `[x, y, z.., zbar.., s.., sbar..]`.
pub struct Instance {
    pub data: Dataset,
    pub moments: Moments,
    pub roles: RolePartition,
}

pub fn instance(seed: u64, n: usize, q_z: usize, q_zbar: usize, q_s: usize, q_sbar: usize, noise: f64) -> Instance {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let q_c = q_z + q_zbar;
    let q_m = q_s + q_sbar;
    let mut coef = |k: usize| -> DVector<f64> { DVector::from_fn(k, |_, _| rng.random_range(-1.0..1.0)) };
    let a = coef(q_c);
    let b = coef(q_m);
    let d = DMatrix::from_column_slice(q_c, q_m, coef(q_c * q_m).as_slice());
    let c_direct = coef(1)[0];
    let e = coef(q_m);
    let f = coef(q_c);
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed);
    let mut draw = |r: usize, c: usize| DMatrix::from_fn(r, c, |_, _| rng.sample::<f64, _>(StandardNormal));
    let shared = draw(n, 1);
    let c = draw(n, q_c) + &shared * DMatrix::from_element(1, q_c, 0.5);
    let x = &c * &a + draw(n, 1).column(0) * 1.0;
    let m = &x * b.transpose() + &c * &d + draw(n, q_m);
    let y = &x * c_direct + &m * &e + &c * &f + draw(n, 1).column(0) * noise;
    let q = 2 + q_c + q_m;
    let mut raw = DMatrix::zeros(n, q);
    raw.set_column(0, &x);
    raw.set_column(1, &y);
    raw.view_mut((0, 2), (n, q_c)).copy_from(&c);
    raw.view_mut((0, 2 + q_c), (n, q_m)).copy_from(&m);
    let names = (0..q).map(|i| format!("V{i}")).collect();
    let data = Dataset::from_raw(names, &raw).unwrap();
    let moments = Moments::new(data.matrix());
    let roles = RolePartition::new(
        0,
        1,
        (2..2 + q_z).collect(),
        (2 + q_z..2 + q_c).collect(),
        (2 + q_c..2 + q_c + q_s).collect(),
        (2 + q_c + q_s..q).collect(),
    );
    Instance { data, moments, roles }
}

/// Least-squares coefficients of `target` on `design` computed from the data
/// matrix by SVD.
pub fn lstsq(data: &DMatrix<f64>, target: usize, design: &[usize]) -> DVector<f64> {
    let d = DMatrix::from_fn(data.nrows(), design.len(), |i, j| data[(i, design[j])]);
    let t = data.column(target).into_owned();
    d.svd(true, true).solve(&t, 1e-14).unwrap()
}

pub fn max_gap(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

/// Random linear SCM on `n` vertices with a shuffled topological order.
pub fn random_scm(seed: u64, n: usize) -> LinearScm {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut rng);
    let mut coef = std::collections::BTreeMap::new();
    for i in 0..n {
        for j in i + 1..n {
            if rng.random_bool(0.4) {
                coef.insert((order[i], order[j]), rng.random_range(-0.4..0.4));
            }
        }
    }
    let names = (0..n).map(|i| format!("V{i}")).collect();
    let dag = Dag::new(names, &coef.keys().copied().collect::<Vec<_>>()).unwrap();
    let errors = (0..n).map(|_| rng.random_range(0.5..2.0)).collect();
    LinearScm::new(dag, coef, errors).unwrap()
}
