//! Cyclic coordinate descent for weighted L1/L2 penalized least squares in
//! covariance form.
//!
//! Minimizes `1/(2n) ||y - D b||^2 + sum_j l1_j |b_j| + sum_j l2_j / 2 * b_j^2`
//! given `G = D^T D / n` and `c = D^T y / n`. Coordinates with zero weights
//! are unpenalized.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::linalg::pinv;

/// Sweeps between attempts to solve the stationarity equations exactly on
/// the current support.
const POLISH_EVERY: usize = 20;
/// Largest optimality violation accepted from such an attempt.
const POLISH_TOL: f64 = 1e-10;
/// Relative eigenvalue below which a support direction counts as null.
const NULL_TOL: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CdOptions {
    /// Stop once no coefficient moves by more than this in a sweep.
    pub tol: f64,
    pub max_sweeps: usize,
}

impl Default for CdOptions {
    fn default() -> Self {
        Self {
            tol: 1e-8,
            max_sweeps: 100_000,
        }
    }
}

#[derive(Debug, Clone)]
pub struct PenalizedProblem {
    pub gram: DMatrix<f64>,
    pub xty: DVector<f64>,
    pub l1: Vec<f64>,
    pub l2: Vec<f64>,
}

#[derive(Debug, Clone)]
pub struct CdSolution {
    pub coef: DVector<f64>,
    pub sweeps: usize,
}

enum Polish {
    Optimal(DVector<f64>),
    Moved(DVector<f64>),
    Failed,
}

pub fn soft_threshold(value: f64, threshold: f64) -> f64 {
    if value > threshold {
        value - threshold
    } else if value < -threshold {
        value + threshold
    } else {
        0.0
    }
}

impl PenalizedProblem {
    pub fn new(gram: DMatrix<f64>, xty: DVector<f64>, l1: Vec<f64>, l2: Vec<f64>) -> Self {
        let p = gram.ncols();
        assert_eq!(gram.nrows(), p);
        assert_eq!(xty.len(), p);
        assert_eq!(l1.len(), p);
        assert_eq!(l2.len(), p);
        Self { gram, xty, l1, l2 }
    }

    pub fn dim(&self) -> usize {
        self.xty.len()
    }

    /// Penalized objective, up to the constant `y^T y / (2n)`.
    pub fn objective(&self, b: &DVector<f64>) -> f64 {
        let quad = 0.5 * b.dot(&(&self.gram * b)) - self.xty.dot(b);
        let pen: f64 = b
            .iter()
            .enumerate()
            .map(|(j, v)| self.l1[j] * v.abs() + 0.5 * self.l2[j] * v * v)
            .sum();
        quad + pen
    }

    /// Negative gradient of the smooth part, `c - G b - l2 ⊙ b`.
    pub fn residual_correlation(&self, b: &DVector<f64>) -> DVector<f64> {
        let mut g = &self.xty - &self.gram * b;
        for j in 0..g.len() {
            g[j] -= self.l2[j] * b[j];
        }
        g
    }

    /// Largest violation of the subgradient optimality conditions.
    pub fn kkt_violation(&self, b: &DVector<f64>) -> f64 {
        let g = self.residual_correlation(b);
        (0..self.dim())
            .map(|j| {
                if b[j] != 0.0 {
                    (g[j] - self.l1[j] * b[j].signum()).abs()
                } else {
                    (g[j].abs() - self.l1[j]).max(0.0)
                }
            })
            .fold(0.0, f64::max)
    }

    pub fn solve(&self, options: &CdOptions) -> Result<CdSolution> {
        let p = self.dim();
        let mut b = DVector::zeros(p);
        // gb = G b, kept current after each coordinate update
        let mut gb = DVector::zeros(p);
        for sweep in 1..=options.max_sweeps {
            let max_change = self.sweep(&mut b, &mut gb);
            if max_change < options.tol {
                let coef = match self.polish(&b) {
                    Polish::Optimal(exact) => exact,
                    _ => b,
                };
                return Ok(CdSolution { coef, sweeps: sweep });
            }
            if sweep % POLISH_EVERY == 0 {
                let mut moved = self.reduce_support(&mut b);
                match self.polish(&b) {
                    Polish::Optimal(exact) => return Ok(CdSolution { coef: exact, sweeps: sweep }),
                    Polish::Moved(next) => {
                        b = next;
                        moved = true;
                    }
                    Polish::Failed => {}
                }
                if moved {
                    gb = &self.gram * &b;
                }
            }
        }
        Err(Error::MaxIterationsExceeded(options.max_sweeps))
    }

    /// One cyclic pass of exact coordinate minimizations. `gb` must equal
    /// `G b` and is kept current. Returns the largest coefficient change.
    fn sweep(&self, b: &mut DVector<f64>, gb: &mut DVector<f64>) -> f64 {
        let mut max_change = 0.0f64;
        for j in 0..self.dim() {
            let gjj = self.gram[(j, j)];
            let denom = gjj + self.l2[j];
            let old = b[j];
            let new = if denom > 0.0 {
                let rho = self.xty[j] - gb[j] + gjj * old;
                soft_threshold(rho, self.l1[j]) / denom
            } else {
                0.0
            };
            let delta = new - old;
            if delta != 0.0 {
                b[j] = new;
                gb.axpy(delta, &self.gram.column(j), 1.0);
                max_change = max_change.max(delta.abs());
            }
        }
        max_change
    }

    fn support(&self, b: &DVector<f64>) -> Vec<usize> {
        (0..self.dim())
            .filter(|&j| b[j] != 0.0 || self.l1[j] == 0.0)
            .collect()
    }

    fn support_hessian(&self, support: &[usize]) -> DMatrix<f64> {
        let k = support.len();
        let mut h = DMatrix::from_fn(k, k, |r, c| self.gram[(support[r], support[c])]);
        for (r, &j) in support.iter().enumerate() {
            h[(r, r)] += self.l2[j];
        }
        h
    }

    /// Moves `b` along null directions of the support hessian, which leave
    /// the smooth part unchanged, without raising the L1 term, until a
    /// penalized coefficient reaches zero. Repeats while such a direction
    /// exists. Returns whether `b` changed.
    fn reduce_support(&self, b: &mut DVector<f64>) -> bool {
        let mut changed = false;
        loop {
            let support = self.support(b);
            let k = support.len();
            if k == 0 {
                return changed;
            }
            let eig = self.support_hessian(&support).symmetric_eigen();
            let top = eig.eigenvalues.amax();
            let (idx, low) = eig.eigenvalues.argmin();
            if low > NULL_TOL * k as f64 * top.max(f64::MIN_POSITIVE) {
                return changed;
            }
            let mut v = eig.eigenvectors.column(idx).into_owned();
            let slope: f64 = support
                .iter()
                .enumerate()
                .map(|(r, &j)| self.l1[j] * super::sign(b[j]) * v[r])
                .sum();
            if slope > 0.0 {
                v = -v;
            }
            let hit = support
                .iter()
                .enumerate()
                .filter(|&(r, &j)| self.l1[j] > 0.0 && b[j] * v[r] < 0.0)
                .map(|(r, &j)| (-b[j] / v[r], j))
                .min_by(|a, b| a.0.total_cmp(&b.0));
            let Some((step, zeroed)) = hit else {
                return changed;
            };
            for (r, &j) in support.iter().enumerate() {
                b[j] += step * v[r];
            }
            b[zeroed] = 0.0;
            changed = true;
        }
    }

    /// Solves the stationarity equations on the support of `b` with its signs
    /// held fixed. Coordinate descent identifies the support long before the
    /// coefficients settle when the gram matrix is ill conditioned. When the
    /// solution changes a sign, moves to the first sign change along the
    /// segment from `b`, which lowers the objective.
    fn polish(&self, b: &DVector<f64>) -> Polish {
        let support = self.support(b);
        let h = self.support_hessian(&support);
        let mut rhs = DVector::zeros(support.len());
        for (r, &j) in support.iter().enumerate() {
            rhs[r] = self.xty[j] - self.l1[j] * super::sign(b[j]);
        }
        let (sol, definite) = match h.clone().cholesky() {
            Some(ch) => (ch.solve(&rhs), true),
            None => match h.clone().lu().solve(&rhs).or_else(|| pinv(&h).ok().map(|p| p * &rhs)) {
                Some(sol) => (sol, false),
                None => return Polish::Failed,
            },
        };
        let crossing = support
            .iter()
            .enumerate()
            .filter(|&(r, &j)| self.l1[j] > 0.0 && sol[r].signum() != b[j].signum())
            .map(|(r, &j)| (b[j] / (b[j] - sol[r]), j))
            .min_by(|x, y| x.0.total_cmp(&y.0));
        let mut out = b.clone();
        match crossing {
            None => {
                for (r, &j) in support.iter().enumerate() {
                    out[j] = sol[r];
                }
                if self.kkt_violation(&out) <= POLISH_TOL {
                    Polish::Optimal(out)
                } else {
                    Polish::Failed
                }
            }
            Some((t, zeroed)) if definite => {
                for (r, &j) in support.iter().enumerate() {
                    out[j] += t * (sol[r] - b[j]);
                }
                out[zeroed] = 0.0;
                Polish::Moved(out)
            }
            Some(_) => Polish::Failed,
        }
    }
}
