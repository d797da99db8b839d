//! Least-squares plug-in estimators: the joint OLS fit, the back-door
//! coefficient and the front-door-like product.

use nalgebra::{DMatrix, DVector};

use super::{column_vector, concat, split_rows, Moments};
use crate::data::RolePartition;
use crate::error::Result;

/// OLS coefficients of the joint model `y ~ x + c + m`, `m ~ x + c`.
#[derive(Debug, Clone, PartialEq)]
pub struct OlsJoint {
    pub beta_yx: f64,
    pub b_yc: DVector<f64>,
    pub b_ym: DVector<f64>,
    /// Coefficients of `x` in the mediator regressions, one per mediator.
    pub b_mx: DVector<f64>,
    /// `q_c x q_m`.
    pub b_mc: DMatrix<f64>,
}

pub fn ols_joint(moments: &Moments, roles: &RolePartition) -> Result<OlsJoint> {
    let c = roles.c();
    let m = roles.m();
    let y_design = concat(&[&[roles.x], &c, &m]);
    let by = moments.ols(&[roles.y], &y_design)?;
    let parts = split_rows(&by, &[1, c.len(), m.len()]);
    let m_design = concat(&[&[roles.x], &c]);
    let bm = moments.ols(&m, &m_design)?;
    let mparts = split_rows(&bm, &[1, c.len()]);
    Ok(OlsJoint {
        beta_yx: parts[0][(0, 0)],
        b_yc: column_vector(&parts[1]),
        b_ym: column_vector(&parts[2]),
        b_mx: mparts[0].row(0).transpose(),
        b_mc: mparts[1].clone(),
    })
}

/// Coefficient of `x` in the regression of `y` on `{x} ∪ z`,
/// `S_xx.z^-1 S_xy.z`.
pub fn back_door_estimate(moments: &Moments, x: usize, y: usize, z: &[usize]) -> Result<f64> {
    Ok(moments.partial_coef(&[y], &[x], z)?[(0, 0)])
}

/// `B_{sx.z1} B_{ys.z2}` (with `x` added to the second regression when
/// `include_x` is set).
pub fn front_door_like_estimate(
    moments: &Moments,
    x: usize,
    y: usize,
    s: &[usize],
    z1: &[usize],
    z2: &[usize],
    include_x: bool,
) -> Result<f64> {
    let first = moments.partial_coef(s, &[x], z1)?;
    let mut given = z2.to_vec();
    if include_x {
        given.push(x);
    }
    let second = moments.partial_coef(&[y], s, &given)?;
    Ok((0..s.len()).map(|i| first[(0, i)] * second[(i, 0)]).sum())
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn noisy_data(seed: u64, n: usize, q: usize) -> DMatrix<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        DMatrix::from_fn(n, q, |_, _| rng.random_range(-1.0..1.0))
    }

    #[test]
    fn zero_noise_recovers_coefficients() {
        // columns: x, z, s, y with y = 0.3 x - 0.5 z + 0.7 s
        let mut d = noisy_data(1, 30, 4);
        for i in 0..30 {
            d[(i, 3)] = 0.3 * d[(i, 0)] - 0.5 * d[(i, 1)] + 0.7 * d[(i, 2)];
        }
        let m = Moments::new(&d);
        let roles = RolePartition::new(0, 3, vec![1], vec![], vec![2], vec![]);
        let fit = ols_joint(&m, &roles).unwrap();
        assert!((fit.beta_yx - 0.3).abs() < 1e-10);
        assert!((fit.b_yc[0] + 0.5).abs() < 1e-10);
        assert!((fit.b_ym[0] - 0.7).abs() < 1e-10);
    }

    #[test]
    fn back_door_without_covariates_is_simple_slope() {
        let d = noisy_data(2, 25, 2);
        let m = Moments::new(&d);
        let slope = m.s[(0, 1)] / m.s[(0, 0)];
        assert!((back_door_estimate(&m, 0, 1, &[]).unwrap() - slope).abs() < 1e-12);
    }

    #[test]
    fn orthogonal_design_gives_marginal_slopes() {
        let d = DMatrix::from_row_slice(
            4,
            3,
            &[1.0, 1.0, 2.0, 1.0, -1.0, 0.5, -1.0, 1.0, -0.5, -1.0, -1.0, 1.0],
        );
        let m = Moments::new(&d);
        let joint = m.ols(&[2], &[0, 1]).unwrap();
        assert!((joint[(0, 0)] - m.s[(0, 2)] / m.s[(0, 0)]).abs() < 1e-12);
        assert!((joint[(1, 0)] - m.s[(1, 2)] / m.s[(1, 1)]).abs() < 1e-12);
    }

    #[test]
    fn front_door_product_of_slopes() {
        // columns x, s, y with s = 0.5 x + e, y = 0.4 s exactly
        let mut d = noisy_data(3, 40, 3);
        for i in 0..40 {
            d[(i, 1)] += 0.5 * d[(i, 0)];
            d[(i, 2)] = 0.4 * d[(i, 1)];
        }
        let m = Moments::new(&d);
        let est = front_door_like_estimate(&m, 0, 2, &[1], &[], &[], true).unwrap();
        let first = m.s[(0, 1)] / m.s[(0, 0)];
        assert!((est - first * 0.4).abs() < 1e-10);
    }
}
