//! Sums of squares and cross-products, partialled (conditional) moment
//! matrices, pseudoinverse, gram matrices and column standardization.
//!
//! Everything here works on dense `DMatrix<f64>` observation matrices whose
//! rows are observations and columns are variables. Column sets are plain
//! index slices.

use nalgebra::{DMatrix, DVector, SVD};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Designs whose normal-equation matrix has a larger condition number than
/// this are treated as singular.
pub const CONDITION_LIMIT: f64 = 1e12;

/// Relative cutoff used by [`pinv`]: singular values below
/// `PINV_RTOL * max(rows, cols) * sigma_max` are dropped.
pub const PINV_RTOL: f64 = 1e-10;

const SVD_MAX_ITERATIONS: usize = 10_000;

pub fn ensure_finite(m: &DMatrix<f64>, context: &str) -> Result<()> {
    if m.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(Error::NonFinite(context.to_string()))
    }
}

/// Per-column location and scale used to standardize a raw data matrix.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StandardizationRecord {
    pub means: Vec<f64>,
    /// Population standard deviations (1/n convention).
    pub scales: Vec<f64>,
}

impl StandardizationRecord {
    pub fn apply(&self, raw: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        if raw.ncols() != self.means.len() {
            return Err(Error::DimensionMismatch(format!(
                "record has {} columns, data has {}",
                self.means.len(),
                raw.ncols()
            )));
        }
        let mut out = raw.clone();
        for (j, mut col) in out.column_iter_mut().enumerate() {
            for v in col.iter_mut() {
                *v = (*v - self.means[j]) / self.scales[j];
            }
        }
        Ok(out)
    }
}

/// Centers each column to mean 0 and scales it to variance 1 (1/n).
///
/// Fails with [`Error::ConstantColumn`] naming the column index when a column
/// has no spread.
pub fn standardize(raw: &DMatrix<f64>) -> Result<(DMatrix<f64>, StandardizationRecord)> {
    standardize_with(raw, |j| format!("#{j}"))
}

pub(crate) fn standardize_with(
    raw: &DMatrix<f64>,
    name: impl Fn(usize) -> String,
) -> Result<(DMatrix<f64>, StandardizationRecord)> {
    ensure_finite(raw, "raw data")?;
    let n = raw.nrows();
    if n < 2 {
        return Err(Error::DimensionMismatch(format!(
            "standardization needs at least 2 rows, got {n}"
        )));
    }
    let nf = n as f64;
    let mut means = Vec::with_capacity(raw.ncols());
    let mut scales = Vec::with_capacity(raw.ncols());
    for (j, col) in raw.column_iter().enumerate() {
        let mean = col.sum() / nf;
        let var = col.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / nf;
        let magnitude = col.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        let scale = var.sqrt();
        if !(scale > 1e-14 * magnitude) || scale == 0.0 {
            return Err(Error::ConstantColumn(name(j)));
        }
        means.push(mean);
        scales.push(scale);
    }
    let record = StandardizationRecord { means, scales };
    let standardized = record.apply(raw)?;
    Ok((standardized, record))
}

pub fn select_columns(data: &DMatrix<f64>, cols: &[usize]) -> Result<DMatrix<f64>> {
    for &c in cols {
        if c >= data.ncols() {
            return Err(Error::IndexOutOfRange {
                index: c,
                len: data.ncols(),
            });
        }
    }
    Ok(data.select_columns(cols))
}

/// `S_ab = (columns a)^T (columns b)`.
pub fn cross_products(data: &DMatrix<f64>, a: &[usize], b: &[usize]) -> Result<DMatrix<f64>> {
    let xa = select_columns(data, a)?;
    let xb = select_columns(data, b)?;
    Ok(xa.transpose() * xb)
}

/// `S_ab.z = S_ab - S_az S_zz^+ S_zb`, the cross-products of the residuals of
/// the a- and b-columns after projection on the `given` columns.
pub fn conditional_cross_products(
    data: &DMatrix<f64>,
    a: &[usize],
    b: &[usize],
    given: &[usize],
) -> Result<DMatrix<f64>> {
    let s_ab = cross_products(data, a, b)?;
    if given.is_empty() {
        return Ok(s_ab);
    }
    let s_az = cross_products(data, a, given)?;
    let s_zz = cross_products(data, given, given)?;
    let s_zb = cross_products(data, given, b)?;
    Ok(s_ab - s_az * pinv(&s_zz)? * s_zb)
}

/// Moore–Penrose pseudoinverse via SVD. Singular values at or below
/// `rtol * sigma_max` are treated as zero.
pub fn pseudo_inverse(m: &DMatrix<f64>, rtol: f64) -> Result<DMatrix<f64>> {
    ensure_finite(m, "pseudoinverse input")?;
    let (r, c) = m.shape();
    if r == 0 || c == 0 {
        return Ok(DMatrix::zeros(c, r));
    }
    let svd = SVD::try_new(m.clone(), true, true, f64::EPSILON, SVD_MAX_ITERATIONS)
        .ok_or(Error::DecompositionFailure)?;
    let sigma_max = svd.singular_values.iter().cloned().fold(0.0, f64::max);
    let cutoff = rtol * sigma_max;
    let u = svd.u.as_ref().ok_or(Error::DecompositionFailure)?;
    let v_t = svd.v_t.as_ref().ok_or(Error::DecompositionFailure)?;
    let mut out = DMatrix::zeros(c, r);
    for (k, &s) in svd.singular_values.iter().enumerate() {
        if s > cutoff && s > 0.0 {
            // out += v_k u_k^T / s
            let vk = v_t.row(k).transpose();
            let uk = u.column(k);
            out += (vk * uk.transpose()) / s;
        }
    }
    Ok(out)
}

/// Pseudoinverse with the default numerical-rank cutoff
/// `1e-10 * max(rows, cols) * sigma_max`.
pub fn pinv(m: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let k = m.nrows().max(m.ncols()).max(1) as f64;
    pseudo_inverse(m, PINV_RTOL * k)
}

/// `m^T m`.
pub fn gram(m: &DMatrix<f64>) -> DMatrix<f64> {
    m.transpose() * m
}

/// Ratio of the largest to the smallest singular value; infinite when the
/// matrix is rank deficient.
pub fn condition_number(m: &DMatrix<f64>) -> f64 {
    if m.is_empty() {
        return 1.0;
    }
    let sv = m.singular_values();
    let max = sv.iter().cloned().fold(0.0, f64::max);
    let min = sv.iter().cloned().fold(f64::INFINITY, f64::min);
    if min <= 0.0 {
        f64::INFINITY
    } else {
        max / min
    }
}

/// Solves `a x = b` for symmetric positive (semi)definite `a`, refusing
/// numerically singular systems.
pub fn solve_spd(a: &DMatrix<f64>, b: &DMatrix<f64>, context: &str) -> Result<DMatrix<f64>> {
    if a.nrows() == 0 {
        return Ok(DMatrix::zeros(0, b.ncols()));
    }
    ensure_finite(a, context)?;
    let cond = condition_number(a);
    if !(cond < CONDITION_LIMIT) {
        return Err(Error::SingularDesign(format!(
            "{context}: condition number {cond:.3e}"
        )));
    }
    match a.clone().cholesky() {
        Some(ch) => Ok(ch.solve(b)),
        None => a
            .clone()
            .lu()
            .solve(b)
            .ok_or_else(|| Error::SingularDesign(context.to_string())),
    }
}

/// Full sum-of-squares and cross-products matrix of a data set, from which
/// every block and partialled block used by the estimators is read.
#[derive(Debug, Clone)]
pub struct Moments {
    pub n: usize,
    pub s: DMatrix<f64>,
}

impl Moments {
    pub fn new(data: &DMatrix<f64>) -> Self {
        Self {
            n: data.nrows(),
            s: gram(data),
        }
    }

    pub fn q(&self) -> usize {
        self.s.ncols()
    }

    pub fn block(&self, a: &[usize], b: &[usize]) -> DMatrix<f64> {
        DMatrix::from_fn(a.len(), b.len(), |i, j| self.s[(a[i], b[j])])
    }

    /// `S_ab.given` via the partialling identity.
    pub fn conditional(&self, a: &[usize], b: &[usize], given: &[usize]) -> Result<DMatrix<f64>> {
        let s_ab = self.block(a, b);
        if given.is_empty() {
            return Ok(s_ab);
        }
        let s_zz_inv = pinv(&self.block(given, given))?;
        Ok(s_ab - self.block(a, given) * s_zz_inv * self.block(given, b))
    }

    /// OLS coefficients of `targets` regressed on `predictors`
    /// (`|predictors| x |targets|`); the design must be well conditioned.
    pub fn ols(&self, targets: &[usize], predictors: &[usize]) -> Result<DMatrix<f64>> {
        solve_spd(
            &self.block(predictors, predictors),
            &self.block(predictors, targets),
            "normal equations",
        )
    }

    /// Coefficients of `focus` in the regression of `targets` on
    /// `focus ∪ rest`, `S_ff.rest^-1 S_ft.rest`. Only the partialled focus
    /// block has to be invertible; `rest` enters through a pseudoinverse.
    pub fn partial_coef(&self, targets: &[usize], focus: &[usize], rest: &[usize]) -> Result<DMatrix<f64>> {
        solve_spd(
            &self.conditional(focus, focus, rest)?,
            &self.conditional(focus, targets, rest)?,
            "partialled normal equations",
        )
    }

    /// Minimum-norm solution of `(S_pp + n diag(penalties)) B = S_pt`.
    pub fn ridge(
        &self,
        targets: &[usize],
        predictors: &[usize],
        penalties: &[f64],
    ) -> Result<DMatrix<f64>> {
        debug_assert_eq!(predictors.len(), penalties.len());
        let mut a = self.block(predictors, predictors);
        let nf = self.n as f64;
        for (i, &p) in penalties.iter().enumerate() {
            a[(i, i)] += nf * p;
        }
        Ok(pinv(&a)? * self.block(predictors, targets))
    }
}

/// Residual matrix `targets - predictors * coef`.
pub fn residuals(
    data: &DMatrix<f64>,
    targets: &[usize],
    predictors: &[usize],
    coef: &DMatrix<f64>,
) -> Result<DMatrix<f64>> {
    let t = select_columns(data, targets)?;
    if predictors.is_empty() {
        return Ok(t);
    }
    let p = select_columns(data, predictors)?;
    Ok(t - p * coef)
}

pub fn dvec(values: &[f64]) -> DVector<f64> {
    DVector::from_column_slice(values)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_matrix(rng: &mut ChaCha8Rng, r: usize, c: usize) -> DMatrix<f64> {
        DMatrix::from_fn(r, c, |_, _| rng.random_range(-1.0..1.0))
    }

    fn max_abs(m: &DMatrix<f64>) -> f64 {
        m.iter().fold(0.0f64, |a, v| a.max(v.abs()))
    }

    #[test]
    fn standardize_hand_example() {
        let raw = DMatrix::from_column_slice(3, 1, &[1.0, 2.0, 3.0]);
        let (z, rec) = standardize(&raw).unwrap();
        let r = (1.5f64).sqrt();
        assert!((z[0] + r).abs() < 1e-12);
        assert!(z[1].abs() < 1e-12);
        assert!((z[2] - r).abs() < 1e-12);
        assert!((rec.means[0] - 2.0).abs() < 1e-15);
        assert!((rec.scales[0] - (2.0f64 / 3.0).sqrt()).abs() < 1e-15);
    }

    #[test]
    fn standardize_is_idempotent() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let (z, _) = standardize(&random_matrix(&mut rng, 20, 3)).unwrap();
        let (z2, rec) = standardize(&z).unwrap();
        assert!(max_abs(&(z2 - &z)) < 1e-12);
        for j in 0..3 {
            assert!(rec.means[j].abs() < 1e-12);
            assert!((rec.scales[j] - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn standardize_rejects_constant_column() {
        let raw = DMatrix::from_column_slice(3, 2, &[1.0, 2.0, 4.0, 5.0, 5.0, 5.0]);
        assert!(matches!(standardize(&raw), Err(Error::ConstantColumn(c)) if c == "#1"));
    }

    #[test]
    fn standardized_moments() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let raw = random_matrix(&mut rng, 30, 4) * 3.0;
        let (z, rec) = standardize(&raw).unwrap();
        for col in z.column_iter() {
            assert!(col.mean().abs() < 1e-12);
            assert!((col.norm_squared() / 30.0 - 1.0).abs() < 1e-12);
        }
        assert!(max_abs(&(rec.apply(&raw).unwrap() - z)) < 1e-12);
    }

    #[test]
    fn cross_products_of_standardized_column_is_n() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let (z, _) = standardize(&random_matrix(&mut rng, 17, 1)).unwrap();
        let s = cross_products(&z, &[0], &[0]).unwrap();
        assert!((s[(0, 0)] - 17.0).abs() < 1e-10);
    }

    #[test]
    fn cross_products_orthogonal_columns() {
        let d = DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, 1.0]);
        let s = cross_products(&d, &[0], &[1]).unwrap();
        assert_eq!(s[(0, 0)], 0.0);
    }

    #[test]
    fn cross_products_match_double_loop() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let d = random_matrix(&mut rng, 5, 3);
        let all = [0, 1, 2];
        let s = cross_products(&d, &all, &all).unwrap();
        for a in 0..3 {
            for b in 0..3 {
                let mut acc = 0.0;
                for i in 0..5 {
                    acc += d[(i, a)] * d[(i, b)];
                }
                assert!((s[(a, b)] - acc).abs() < 1e-14);
            }
        }
    }

    #[test]
    fn cross_products_rejects_bad_index() {
        let d = DMatrix::<f64>::zeros(3, 2);
        assert!(matches!(
            cross_products(&d, &[2], &[0]),
            Err(Error::IndexOutOfRange { index: 2, len: 2 })
        ));
    }

    /// Residualization oracle: regress on `given` by explicit normal
    /// equations, subtract, multiply residuals.
    fn residualized(d: &DMatrix<f64>, a: &[usize], b: &[usize], given: &[usize]) -> DMatrix<f64> {
        let z = d.select_columns(given);
        let ztz_inv = (z.transpose() * &z).try_inverse().unwrap();
        let hat = &z * ztz_inv * z.transpose();
        let ra = d.select_columns(a) - &hat * d.select_columns(a);
        let rb = d.select_columns(b) - &hat * d.select_columns(b);
        ra.transpose() * rb
    }

    #[test]
    fn conditional_cross_products_cases() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let d = random_matrix(&mut rng, 12, 3);
        let plain = cross_products(&d, &[0, 1], &[2]).unwrap();
        let empty = conditional_cross_products(&d, &[0, 1], &[2], &[]).unwrap();
        assert_eq!(plain, empty);

        let selfres = conditional_cross_products(&d, &[1, 2], &[1, 2], &[1, 2]).unwrap();
        assert!(max_abs(&selfres) < 1e-10);

        let got = conditional_cross_products(&d, &[0, 1], &[0, 1], &[2]).unwrap();
        let want = residualized(&d, &[0, 1], &[0, 1], &[2]);
        assert!(max_abs(&(got - want)) < 1e-12);
    }

    #[test]
    fn moments_match_free_functions() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let d = random_matrix(&mut rng, 15, 5);
        let m = Moments::new(&d);
        let a = m.conditional(&[0, 3], &[1], &[2, 4]).unwrap();
        let b = conditional_cross_products(&d, &[0, 3], &[1], &[2, 4]).unwrap();
        assert!(max_abs(&(a - b)) < 1e-12);
    }

    #[test]
    fn pseudo_inverse_small_cases() {
        let id = DMatrix::<f64>::identity(3, 3);
        assert!(max_abs(&(pinv(&id).unwrap() - &id)) < 1e-14);
        let zero = DMatrix::<f64>::zeros(2, 3);
        let pz = pinv(&zero).unwrap();
        assert_eq!(pz.shape(), (3, 2));
        assert_eq!(max_abs(&pz), 0.0);

        let ones = DMatrix::from_element(2, 2, 1.0);
        let p = pinv(&ones).unwrap();
        assert!(max_abs(&(p.clone() - DMatrix::from_element(2, 2, 0.25))) < 1e-14);
        // four Penrose conditions
        assert!(max_abs(&(&ones * &p * &ones - &ones)) < 1e-12);
        assert!(max_abs(&(&p * &ones * &p - &p)) < 1e-12);
        assert!(max_abs(&((&ones * &p).transpose() - &ones * &p)) < 1e-12);
        assert!(max_abs(&((&p * &ones).transpose() - &p * &ones)) < 1e-12);
    }

    #[test]
    fn pseudo_inverse_rejects_nan() {
        let m = DMatrix::from_element(2, 2, f64::NAN);
        assert!(pinv(&m).is_err());
    }

    #[test]
    fn gram_cases() {
        let v = DMatrix::from_column_slice(3, 1, &[1.0, 2.0, 2.0]);
        assert!((gram(&v)[(0, 0)] - 9.0).abs() < 1e-15);
        let s = std::f64::consts::FRAC_1_SQRT_2;
        let q = DMatrix::from_row_slice(2, 2, &[s, s, s, -s]);
        assert!(max_abs(&(gram(&q) - DMatrix::identity(2, 2))) < 1e-15);

        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let m = random_matrix(&mut rng, 4, 2);
        let g = gram(&m);
        for a in 0..2 {
            for b in 0..2 {
                let acc: f64 = (0..4).map(|i| m[(i, a)] * m[(i, b)]).sum();
                assert!((g[(a, b)] - acc).abs() < 1e-14);
            }
        }
    }

    #[test]
    fn solve_spd_refuses_singular() {
        let a = DMatrix::from_element(2, 2, 1.0);
        let b = DMatrix::from_element(2, 1, 1.0);
        assert!(matches!(solve_spd(&a, &b, "t"), Err(Error::SingularDesign(_))));
    }
}
