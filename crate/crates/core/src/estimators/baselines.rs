//! Penalized regressions of `y` on `{x} ∪ C` whose `x` coefficient serves as
//! a total-effect estimate: LASSO, adaptive LASSO, elastic net and PAL1MA.

use nalgebra::DVector;

use super::{
    column_vector, concat, penalized_problem, pick, reciprocal_weights, residual_gram, sign,
    CdOptions, Moments,
};
use crate::data::RolePartition;
use crate::error::{Error, Result};
use crate::linalg::pinv;

#[derive(Debug, Clone, PartialEq)]
pub struct BaselineFit {
    /// Estimated total effect (the reported `x` coefficient).
    pub estimate: f64,
    /// Stage coefficients over `[x, z, zbar]`.
    pub coef: DVector<f64>,
}

fn check(name: &str, v: f64) -> Result<()> {
    if v.is_finite() && v >= 0.0 {
        Ok(())
    } else {
        Err(Error::InvalidParameter(format!("{name} = {v} must be finite and >= 0")))
    }
}

fn design(roles: &RolePartition) -> Vec<usize> {
    concat(&[&[roles.x], &roles.c()])
}

fn fit(moments: &Moments, roles: &RolePartition, l1: Vec<f64>, l2: Vec<f64>, options: &CdOptions) -> Result<BaselineFit> {
    let d = design(roles);
    let sol = penalized_problem(moments, roles.y, &d, l1, l2).solve(options)?;
    Ok(BaselineFit {
        estimate: sol.coef[0],
        coef: sol.coef,
    })
}

/// Uniform L1 penalty `lambda` on every coefficient.
pub fn lasso(moments: &Moments, roles: &RolePartition, lambda: f64, options: &CdOptions) -> Result<BaselineFit> {
    check("lambda", lambda)?;
    let p = 1 + roles.c().len();
    fit(moments, roles, vec![lambda; p], vec![0.0; p], options)
}

/// Penalty `lambda * (phi |b|_1 + (1 - phi) / 2 |b|_2^2)`.
pub fn elastic_net(
    moments: &Moments,
    roles: &RolePartition,
    lambda: f64,
    phi: f64,
    options: &CdOptions,
) -> Result<BaselineFit> {
    check("lambda", lambda)?;
    if !(0.0..=1.0).contains(&phi) {
        return Err(Error::InvalidParameter(format!("phi = {phi} must lie in [0, 1]")));
    }
    let p = 1 + roles.c().len();
    fit(
        moments,
        roles,
        vec![lambda * phi; p],
        vec![lambda * (1.0 - phi); p],
        options,
    )
}

/// L1 penalty `lambda * w_j` with `w_j = |pilot_j|^(-eta)` rescaled to mean
/// one, from a ridge pilot with penalty `pilot_lambda` on every coefficient.
pub fn adaptive_lasso(
    moments: &Moments,
    roles: &RolePartition,
    lambda: f64,
    eta: f64,
    pilot_lambda: f64,
    options: &CdOptions,
) -> Result<BaselineFit> {
    check("lambda", lambda)?;
    check("eta", eta)?;
    check("pilot_lambda", pilot_lambda)?;
    let d = design(roles);
    let p = d.len();
    let pilot = moments.ridge(&[roles.y], &d, &vec![pilot_lambda; p])?;
    let (w, _) = reciprocal_weights(pilot.as_slice(), eta);
    let l1 = w.iter().map(|w| lambda * w * p as f64).collect();
    fit(moments, roles, l1, vec![0.0; p], options)
}

/// Partially adaptive L1 regression: only the candidate covariates are
/// penalized, with standardized weights `|pilot|^(-eta)`; the `x`
/// coefficient is then corrected on the active set.
pub fn pal1ma(
    moments: &Moments,
    roles: &RolePartition,
    lambda: f64,
    eta: f64,
    pilot_lambda: f64,
    options: &CdOptions,
) -> Result<BaselineFit> {
    check("lambda", lambda)?;
    check("eta", eta)?;
    check("pilot_lambda", pilot_lambda)?;
    let (q_z, q_zbar) = (roles.z.len(), roles.zbar.len());
    let d = concat(&[&[roles.x], &roles.z, &roles.zbar]);
    let mut pilot_pen = vec![pilot_lambda];
    pilot_pen.extend(std::iter::repeat_n(0.0, q_z));
    pilot_pen.extend(std::iter::repeat_n(pilot_lambda, q_zbar));
    let pilot = moments.ridge(&[roles.y], &d, &pilot_pen)?;
    let zbar_pilot: Vec<f64> = pilot.as_slice()[1 + q_z..].to_vec();
    let (gamma, _) = reciprocal_weights(&zbar_pilot, eta);

    let mut l1 = vec![0.0; 1 + q_z];
    l1.extend(gamma.iter().map(|g| lambda * g));
    let sol = penalized_problem(moments, roles.y, &d, l1, vec![0.0; d.len()]).solve(options)?;
    let coef = sol.coef;

    let active: Vec<usize> = (0..q_zbar).filter(|&i| coef[1 + q_z + i] != 0.0).collect();
    let za = pick(&roles.zbar, &active);
    let xz = concat(&[&[roles.x], &roles.z]);
    let mut estimate = coef[0];
    if !za.is_empty() && coef[0] != 0.0 {
        let b_hat = moments.ols(&za, &xz)?;
        let s_hat = residual_gram(moments, &za, &xz, &b_hat);
        let g = DVector::from_iterator(
            za.len(),
            active.iter().map(|&i| gamma[i] * sign(coef[1 + q_z + i])),
        );
        let b_x = column_vector(&b_hat.rows(0, 1).transpose());
        estimate -= moments.n as f64 * lambda * b_x.dot(&(pinv(&s_hat)? * g));
    }
    Ok(BaselineFit { estimate, coef })
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::DMatrix;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn instance(seed: u64) -> (Moments, RolePartition) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut d = DMatrix::from_fn(60, 5, |_, _| rng.random_range(-1.0..1.0));
        for i in 0..60 {
            d[(i, 0)] += 0.5 * d[(i, 2)];
            d[(i, 1)] += 0.4 * d[(i, 0)] + 0.3 * d[(i, 2)] - 0.2 * d[(i, 3)];
        }
        let (std, _) = crate::linalg::standardize(&d).unwrap();
        (
            Moments::new(&std),
            RolePartition::new(0, 1, vec![2], vec![3, 4], vec![], vec![]),
        )
    }

    #[test]
    fn zero_penalty_baselines_equal_ols() {
        let (m, roles) = instance(1);
        let ols = crate::estimators::back_door_estimate(&m, 0, 1, &roles.c()).unwrap();
        let o = CdOptions::default();
        for est in [
            lasso(&m, &roles, 0.0, &o).unwrap().estimate,
            elastic_net(&m, &roles, 0.0, 0.5, &o).unwrap().estimate,
            adaptive_lasso(&m, &roles, 0.0, 1.0, 0.5, &o).unwrap().estimate,
            pal1ma(&m, &roles, 0.0, 1.0, 0.5, &o).unwrap().estimate,
        ] {
            assert!((est - ols).abs() < 1e-8, "{est} vs {ols}");
        }
    }

    #[test]
    fn lasso_shrinks_to_zero() {
        let (m, roles) = instance(2);
        let fit = lasso(&m, &roles, 10.0, &CdOptions::default()).unwrap();
        assert_eq!(fit.estimate, 0.0);
    }

    #[test]
    fn pal1ma_equals_active_set_ols() {
        // the corrected x coefficient is the OLS coefficient on the active design
        let (m, roles) = instance(3);
        let fit = pal1ma(&m, &roles, 0.02, 1.0, 0.5, &CdOptions::default()).unwrap();
        let mut design = vec![0, 2];
        design.extend((0..2).filter(|&i| fit.coef[2 + i] != 0.0).map(|i| 3 + i));
        let ols = m.ols(&[1], &design).unwrap();
        assert!((fit.estimate - ols[(0, 0)]).abs() < 1e-7);
    }

    #[test]
    fn rejects_bad_parameters() {
        let (m, roles) = instance(4);
        let o = CdOptions::default();
        assert!(lasso(&m, &roles, -1.0, &o).is_err());
        assert!(elastic_net(&m, &roles, 1.0, 1.5, &o).is_err());
    }
}
