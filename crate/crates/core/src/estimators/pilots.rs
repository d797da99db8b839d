//! Ridge pilot fits and the standardized adaptive weights built from them.

use nalgebra::{DMatrix, DVector};

use super::{column_vector, concat, split_rows, Moments};
use crate::data::RolePartition;
use crate::error::Result;

/// Floor applied to pilot magnitudes before taking reciprocals.
pub const WEIGHT_FLOOR: f64 = 1e-8;

/// Response-model pilot: `y` on `[x, s, z, sbar, zbar]` with `lambda` on the
/// `x`, `sbar` and `zbar` coefficients.
#[derive(Debug, Clone, PartialEq)]
pub struct YPilot {
    pub beta_yx: f64,
    pub b_ys: DVector<f64>,
    pub b_yz: DVector<f64>,
    pub b_ysbar: DVector<f64>,
    pub b_yzbar: DVector<f64>,
}

/// Mediator-model pilot: every mediator on `[x, z, zbar]` with `rho` on the
/// `zbar` coefficients. Columns follow `roles.m()`.
#[derive(Debug, Clone, PartialEq)]
pub struct MPilot {
    pub b_mx: DVector<f64>,
    pub b_mz: DMatrix<f64>,
    pub b_mzbar: DMatrix<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PilotEstimates {
    pub y: YPilot,
    pub m: MPilot,
    pub lambda: f64,
    pub rho: f64,
}

pub(crate) fn y_design(roles: &RolePartition, include_x: bool) -> Vec<usize> {
    let x: &[usize] = if include_x { &[roles.x][..] } else { &[] };
    concat(&[x, &roles.s, &roles.z, &roles.sbar, &roles.zbar])
}

pub fn ridge_pilot_y(moments: &Moments, roles: &RolePartition, lambda: f64) -> Result<YPilot> {
    let design = y_design(roles, true);
    let mut pen = vec![lambda];
    pen.extend(std::iter::repeat_n(0.0, roles.s.len() + roles.z.len()));
    pen.extend(std::iter::repeat_n(lambda, roles.sbar.len() + roles.zbar.len()));
    let coef = moments.ridge(&[roles.y], &design, &pen)?;
    let parts = split_rows(
        &coef,
        &[1, roles.s.len(), roles.z.len(), roles.sbar.len(), roles.zbar.len()],
    );
    Ok(YPilot {
        beta_yx: parts[0][(0, 0)],
        b_ys: column_vector(&parts[1]),
        b_yz: column_vector(&parts[2]),
        b_ysbar: column_vector(&parts[3]),
        b_yzbar: column_vector(&parts[4]),
    })
}

pub fn ridge_pilot_m(moments: &Moments, roles: &RolePartition, rho: f64) -> Result<MPilot> {
    let design = concat(&[&[roles.x], &roles.z, &roles.zbar]);
    let mut pen = vec![0.0; 1 + roles.z.len()];
    pen.extend(std::iter::repeat_n(rho, roles.zbar.len()));
    let coef = moments.ridge(&roles.m(), &design, &pen)?;
    let parts = split_rows(&coef, &[1, roles.z.len(), roles.zbar.len()]);
    Ok(MPilot {
        b_mx: parts[0].row(0).transpose(),
        b_mz: parts[1].clone(),
        b_mzbar: parts[2].clone(),
    })
}

impl PilotEstimates {
    pub fn fit(moments: &Moments, roles: &RolePartition, lambda: f64, rho: f64) -> Result<Self> {
        Ok(Self {
            y: ridge_pilot_y(moments, roles, lambda)?,
            m: ridge_pilot_m(moments, roles, rho)?,
            lambda,
            rho,
        })
    }
}

/// Standardized adaptive penalty weights.
#[derive(Debug, Clone, PartialEq)]
pub struct AdaptiveWeights {
    /// One per candidate mediator, from the mediator-model `x` coefficients.
    pub gamma_sbar: DVector<f64>,
    /// One per candidate covariate, from the response-model pilot.
    pub gamma_zbar: DVector<f64>,
    /// `q_zbar x q_m`, from the mediator-model pilot; sums to one overall.
    pub gamma_mzbar: DMatrix<f64>,
    /// Some pilot magnitude fell below [`WEIGHT_FLOOR`].
    pub floored: bool,
}

/// `max(|p|, floor)^(-exponent)`, normalized to sum one. Empty input gives an
/// empty output.
pub fn reciprocal_weights(pilots: &[f64], exponent: f64) -> (Vec<f64>, bool) {
    let mut floored = false;
    let raw: Vec<f64> = pilots
        .iter()
        .map(|p| {
            let a = p.abs();
            if a < WEIGHT_FLOOR {
                floored = true;
            }
            a.max(WEIGHT_FLOOR).powf(-exponent)
        })
        .collect();
    let total: f64 = raw.iter().sum();
    (raw.iter().map(|w| w / total).collect(), floored)
}

pub fn adaptive_weights(
    pilots: &PilotEstimates,
    roles: &RolePartition,
    exponent: f64,
) -> AdaptiveWeights {
    let q_s = roles.s.len();
    let sbar_pilot: Vec<f64> = pilots.m.b_mx.iter().skip(q_s).copied().collect();
    let (gs, f1) = reciprocal_weights(&sbar_pilot, exponent);
    let (gz, f2) = reciprocal_weights(pilots.y.b_yzbar.as_slice(), exponent);
    let mz = &pilots.m.b_mzbar;
    let (gm, f3) = reciprocal_weights(mz.as_slice(), exponent);
    AdaptiveWeights {
        gamma_sbar: DVector::from_vec(gs),
        gamma_zbar: DVector::from_vec(gz),
        gamma_mzbar: DMatrix::from_vec(mz.nrows(), mz.ncols(), gm),
        floored: f1 || f2 || f3,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn reciprocal_example() {
        let (w, floored) = reciprocal_weights(&[0.1, 0.4], 1.0);
        assert!((w[0] - 0.8).abs() < 1e-15 && (w[1] - 0.2).abs() < 1e-15);
        assert!(!floored);
    }

    #[test]
    fn equal_pilots_give_uniform_weights() {
        let (w, _) = reciprocal_weights(&[-0.3, 0.3, 0.3, -0.3], 1.2);
        for v in w {
            assert!((v - 0.25).abs() < 1e-15);
        }
    }

    #[test]
    fn zero_pilot_is_floored() {
        let (w, floored) = reciprocal_weights(&[0.0, 1.0], 1.0);
        assert!(floored);
        assert!(w[0] > 0.99999);
        assert!(reciprocal_weights(&[], 1.0).0.is_empty());
    }

    #[test]
    fn scalar_ridge_closed_form() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let d = DMatrix::from_fn(20, 2, |_, _| rng.random_range(-1.0..1.0));
        let m = Moments::new(&d);
        let roles = RolePartition::new(0, 1, vec![], vec![], vec![], vec![]);
        let lambda = 0.7;
        let fit = ridge_pilot_y(&m, &roles, lambda).unwrap();
        let expected = m.s[(0, 1)] / (20.0 * lambda + m.s[(0, 0)]);
        assert!((fit.beta_yx - expected).abs() < 1e-14);
    }

    #[test]
    fn mediator_pilot_without_zbar_is_ols() {
        let mut rng = ChaCha8Rng::seed_from_u64(10);
        let d = DMatrix::from_fn(30, 4, |_, _| rng.random_range(-1.0..1.0));
        let m = Moments::new(&d);
        let roles = RolePartition::new(0, 3, vec![1], vec![], vec![2], vec![]);
        let ridge = ridge_pilot_m(&m, &roles, 50.0).unwrap();
        let ols = m.ols(&[2], &[0, 1]).unwrap();
        assert!((ridge.b_mx[0] - ols[(0, 0)]).abs() < 1e-12);
    }
}
