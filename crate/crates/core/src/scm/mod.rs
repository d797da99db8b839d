//! Linear structural causal models: population moments, ground-truth total
//! effects, unit-variance calibration, random correlation blocks and
//! Gaussian sampling.

mod experiment;
mod io;

pub use experiment::{build_experiment_scm, build_experiment_scm_with, ExperimentScm, RandomCoefficients, Setting};
pub use io::ScmDocument;

use std::collections::BTreeMap;

use nalgebra::DMatrix;
use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::graph::Dag;

/// Linear SCM with zero intercepts: every vertex is a weighted sum of its
/// parents plus an independent disturbance.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearScm {
    dag: Dag,
    /// `(tail, head) -> alpha_{head, tail}`
    coefficients: BTreeMap<(usize, usize), f64>,
    error_variances: Vec<f64>,
}

impl LinearScm {
    pub fn new(
        dag: Dag,
        coefficients: BTreeMap<(usize, usize), f64>,
        error_variances: Vec<f64>,
    ) -> Result<Self> {
        let edges: std::collections::BTreeSet<(usize, usize)> = dag.edges().into_iter().collect();
        let keys: std::collections::BTreeSet<(usize, usize)> =
            coefficients.keys().copied().collect();
        if edges != keys {
            return Err(Error::InvalidScm(
                "coefficient keys must match the graph edges exactly".into(),
            ));
        }
        if coefficients.values().any(|c| !c.is_finite()) {
            return Err(Error::InvalidScm("non-finite coefficient".into()));
        }
        if error_variances.len() != dag.len() {
            return Err(Error::InvalidScm(format!(
                "{} error variances for {} vertices",
                error_variances.len(),
                dag.len()
            )));
        }
        if let Some(v) = error_variances.iter().position(|&s| !(s > 0.0 && s.is_finite())) {
            return Err(Error::InvalidScm(format!(
                "error variance of `{}` must be positive",
                dag.name(v)
            )));
        }
        Ok(Self {
            dag,
            coefficients,
            error_variances,
        })
    }

    /// Convenience constructor from named weighted edges.
    pub fn from_named(
        names: &[&str],
        edges: &[(&str, &str, f64)],
        error_variances: &[f64],
    ) -> Result<Self> {
        let plain: Vec<(&str, &str)> = edges.iter().map(|(t, h, _)| (*t, *h)).collect();
        let dag = Dag::from_named_edges(names, &plain)?;
        let mut coefficients = BTreeMap::new();
        for (t, h, c) in edges {
            coefficients.insert((dag.vertex(t)?, dag.vertex(h)?), *c);
        }
        Self::new(dag, coefficients, error_variances.to_vec())
    }

    pub fn dag(&self) -> &Dag {
        &self.dag
    }

    pub fn coefficients(&self) -> &BTreeMap<(usize, usize), f64> {
        &self.coefficients
    }

    pub fn coefficient(&self, tail: usize, head: usize) -> Option<f64> {
        self.coefficients.get(&(tail, head)).copied()
    }

    pub fn error_variances(&self) -> &[f64] {
        &self.error_variances
    }

    pub fn len(&self) -> usize {
        self.dag.len()
    }

    pub fn is_empty(&self) -> bool {
        self.dag.is_empty()
    }

    /// `A[(head, tail)] = alpha_{head, tail}`, so that `V = A V + eps`.
    pub fn coefficient_matrix(&self) -> DMatrix<f64> {
        let q = self.len();
        let mut a = DMatrix::zeros(q, q);
        for (&(t, h), &c) in &self.coefficients {
            a[(h, t)] = c;
        }
        a
    }

    fn total_effect_operator(&self) -> Result<DMatrix<f64>> {
        let q = self.len();
        let i_minus_a = DMatrix::identity(q, q) - self.coefficient_matrix();
        let inv = i_minus_a.try_inverse().ok_or(Error::SingularSystem)?;
        if inv.iter().all(|v| v.is_finite()) {
            Ok(inv)
        } else {
            Err(Error::SingularSystem)
        }
    }

    /// Disturbance covariance, with the exogenous block (if any) replacing the
    /// diagonal entries of its vertices.
    fn disturbance_covariance(&self, block: Option<&ExogenousBlock>) -> Result<DMatrix<f64>> {
        let mut omega = DMatrix::from_diagonal(&nalgebra::DVector::from_vec(
            self.error_variances.clone(),
        ));
        if let Some(b) = block {
            b.validate_for(self)?;
            for (i, &vi) in b.vertices.iter().enumerate() {
                for (j, &vj) in b.vertices.iter().enumerate() {
                    omega[(vi, vj)] = b.spec.matrix()[(i, j)];
                }
            }
        }
        Ok(omega)
    }

    /// Exact covariance `(I - A)^-1 Omega (I - A)^-T`.
    pub fn population_covariance(&self, block: Option<&ExogenousBlock>) -> Result<DMatrix<f64>> {
        let b = self.total_effect_operator()?;
        let omega = self.disturbance_covariance(block)?;
        let sigma = &b * omega * b.transpose();
        Ok((&sigma + sigma.transpose()) * 0.5)
    }

    /// Total effect of `x` on `y` as the `(y, x)` entry of `(I - A)^-1`.
    pub fn total_effect_by_inverse(&self, x: usize, y: usize) -> Result<f64> {
        self.check(x)?;
        self.check(y)?;
        if x == y {
            return Ok(1.0);
        }
        Ok(self.total_effect_operator()?[(y, x)])
    }

    /// Total effect of `x` on `y` by enumerating directed paths and summing
    /// the products of their coefficients.
    pub fn total_effect_by_paths(&self, x: usize, y: usize) -> Result<f64> {
        self.check(x)?;
        self.check(y)?;
        if x == y {
            return Ok(1.0);
        }
        fn walk(scm: &LinearScm, v: usize, y: usize, product: f64, total: &mut f64) {
            for &c in scm.dag.children(v) {
                let p = product * scm.coefficients[&(v, c)];
                if c == y {
                    *total += p;
                } else {
                    walk(scm, c, y, p, total);
                }
            }
        }
        let mut total = 0.0;
        walk(self, x, y, 1.0, &mut total);
        Ok(total)
    }

    /// Ground-truth total effect; both routes are evaluated and must agree.
    pub fn true_total_effect(&self, x: usize, y: usize) -> Result<f64> {
        let by_paths = self.total_effect_by_paths(x, y)?;
        let by_inverse = self.total_effect_by_inverse(x, y)?;
        if (by_paths - by_inverse).abs() > 1e-10 * (1.0 + by_paths.abs()) {
            return Err(Error::InvalidScm(format!(
                "total effect routes disagree: {by_paths} vs {by_inverse}"
            )));
        }
        Ok(by_paths)
    }

    /// Returns a copy whose error variances give every vertex population
    /// variance 1. Vertices of the exogenous block keep their unit-diagonal
    /// correlation block.
    pub fn calibrate_unit_variance(&self, block: Option<&ExogenousBlock>) -> Result<LinearScm> {
        if let Some(b) = block {
            b.validate_for(self)?;
        }
        let q = self.len();
        let order = self.dag.topological_order();
        let mut sigma = DMatrix::<f64>::zeros(q, q);
        let mut done = vec![false; q];
        let mut errors = self.error_variances.clone();
        let in_block = |v: usize| block.and_then(|b| b.position(v));

        for &v in &order {
            if let Some(i) = in_block(v) {
                let b = block.expect("position implies block");
                for (j, &w) in b.vertices.iter().enumerate() {
                    if done[w] {
                        sigma[(v, w)] = b.spec.matrix()[(i, j)];
                        sigma[(w, v)] = sigma[(v, w)];
                    }
                }
                sigma[(v, v)] = 1.0;
                errors[v] = 1.0;
                done[v] = true;
                continue;
            }
            let parents = self.dag.parents(v);
            // cov(v, w) = sum_p alpha_vp cov(p, w) for already processed w
            for w in 0..q {
                if done[w] {
                    let c: f64 = parents
                        .iter()
                        .map(|&p| self.coefficients[&(p, v)] * sigma[(p, w)])
                        .sum();
                    sigma[(v, w)] = c;
                    sigma[(w, v)] = c;
                }
            }
            let explained: f64 = parents
                .iter()
                .map(|&p| self.coefficients[&(p, v)] * sigma[(v, p)])
                .sum();
            if !(explained < 1.0) {
                return Err(Error::ExplainedVarianceExceedsOne {
                    vertex: self.dag.name(v).to_string(),
                    value: explained,
                });
            }
            errors[v] = 1.0 - explained;
            sigma[(v, v)] = 1.0;
            done[v] = true;
        }
        LinearScm::new(self.dag.clone(), self.coefficients.clone(), errors)
    }

    /// Draws `n` independent observations (rows). Disturbances are Gaussian;
    /// the exogenous block, when given, is drawn jointly from its correlation
    /// matrix.
    pub fn sample<R: Rng + ?Sized>(
        &self,
        block: Option<&ExogenousBlock>,
        n: usize,
        rng: &mut R,
    ) -> Result<DMatrix<f64>> {
        if let Some(b) = block {
            b.validate_for(self)?;
        }
        let q = self.len();
        let order = self.dag.topological_order();
        let sd: Vec<f64> = self.error_variances.iter().map(|v| v.sqrt()).collect();
        let mut out = DMatrix::zeros(n, q);
        let mut row = vec![0.0; q];
        let mut draws = Vec::new();
        for i in 0..n {
            if let Some(b) = block {
                draws.clear();
                draws.extend((0..b.vertices.len()).map(|_| rng.sample::<f64, _>(StandardNormal)));
                let l = b.spec.factor();
                for (r, &v) in b.vertices.iter().enumerate() {
                    row[v] = (0..=r).map(|k| l[(r, k)] * draws[k]).sum();
                }
            }
            for &v in &order {
                if block.is_some_and(|b| b.position(v).is_some()) {
                    continue;
                }
                let eps: f64 = rng.sample(StandardNormal);
                let mut value = sd[v] * eps;
                for &p in self.dag.parents(v) {
                    value += self.coefficients[&(p, v)] * row[p];
                }
                row[v] = value;
            }
            for v in 0..q {
                out[(i, v)] = row[v];
            }
        }
        Ok(out)
    }

    fn check(&self, v: usize) -> Result<()> {
        if v < self.len() {
            Ok(())
        } else {
            Err(Error::UnknownVertex(format!("#{v}")))
        }
    }
}

/// Symmetric positive-definite correlation matrix, kept with its lower
/// Cholesky factor.
#[derive(Debug, Clone, PartialEq)]
pub struct CovarianceSpec {
    matrix: DMatrix<f64>,
    factor: DMatrix<f64>,
}

impl CovarianceSpec {
    pub fn new(matrix: DMatrix<f64>) -> Result<Self> {
        let q = matrix.nrows();
        if matrix.ncols() != q {
            return Err(Error::InvalidScm("correlation matrix must be square".into()));
        }
        crate::linalg::ensure_finite(&matrix, "correlation matrix")?;
        for i in 0..q {
            if (matrix[(i, i)] - 1.0).abs() > 1e-12 {
                return Err(Error::InvalidScm("correlation matrix needs a unit diagonal".into()));
            }
            for j in 0..i {
                if (matrix[(i, j)] - matrix[(j, i)]).abs() > 1e-12 {
                    return Err(Error::InvalidScm("correlation matrix is not symmetric".into()));
                }
            }
        }
        let factor = matrix
            .clone()
            .cholesky()
            .ok_or_else(|| Error::InvalidScm("correlation matrix is not positive definite".into()))?
            .l();
        Ok(Self { matrix, factor })
    }

    /// Builds the spec from a lower-triangular factor with unit-norm rows.
    fn from_factor(factor: DMatrix<f64>) -> Self {
        let mut matrix = &factor * factor.transpose();
        let q = matrix.nrows();
        for i in 0..q {
            matrix[(i, i)] = 1.0;
            for j in 0..i {
                let v = 0.5 * (matrix[(i, j)] + matrix[(j, i)]);
                matrix[(i, j)] = v;
                matrix[(j, i)] = v;
            }
        }
        Self { matrix, factor }
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.matrix
    }

    /// Lower-triangular `L` with `L L^T = matrix`.
    pub fn factor(&self) -> &DMatrix<f64> {
        &self.factor
    }

    pub fn dim(&self) -> usize {
        self.matrix.nrows()
    }
}

/// Random correlation matrix from the hyperspherical parameterization of its
/// Cholesky factor. Angle `t_ij` has density proportional to
/// `sin(t)^(q - 1 - j)` on `(0, pi)` (drawn by rejection from the uniform),
/// which makes the matrix uniformly distributed over correlation matrices.
///
/// Row `i` of the factor is `(cos t_i1, cos t_i2 sin t_i1, ...,
/// prod_k sin t_ik)`, which has unit norm, so the product has a unit
/// diagonal and is positive definite whenever all sines are nonzero.
pub fn random_correlation<R: Rng + ?Sized>(q: usize, rng: &mut R) -> CovarianceSpec {
    let mut l = DMatrix::zeros(q, q);
    for i in 0..q {
        let mut sin_product = 1.0;
        for j in 0..i {
            let k = (q - 1 - j) as i32;
            let theta: f64 = loop {
                let t = rng.random::<f64>() * std::f64::consts::PI;
                if t > 0.0 && rng.random::<f64>() < t.sin().powi(k) {
                    break t;
                }
            };
            l[(i, j)] = theta.cos() * sin_product;
            sin_product *= theta.sin();
        }
        l[(i, i)] = sin_product;
    }
    CovarianceSpec::from_factor(l)
}

/// Jointly Gaussian root vertices whose disturbances follow a correlation
/// matrix instead of being independent.
#[derive(Debug, Clone, PartialEq)]
pub struct ExogenousBlock {
    pub vertices: Vec<usize>,
    pub spec: CovarianceSpec,
}

impl ExogenousBlock {
    pub fn new(vertices: Vec<usize>, spec: CovarianceSpec) -> Result<Self> {
        if vertices.len() != spec.dim() {
            return Err(Error::InvalidScm(format!(
                "{} block vertices for a {}x{} correlation matrix",
                vertices.len(),
                spec.dim(),
                spec.dim()
            )));
        }
        Ok(Self { vertices, spec })
    }

    fn position(&self, v: usize) -> Option<usize> {
        self.vertices.iter().position(|&w| w == v)
    }

    fn validate_for(&self, scm: &LinearScm) -> Result<()> {
        for &v in &self.vertices {
            if v >= scm.len() {
                return Err(Error::UnknownVertex(format!("#{v}")));
            }
            if !scm.dag.parents(v).is_empty() {
                return Err(Error::InvalidScm(format!(
                    "exogenous vertex `{}` has parents",
                    scm.dag.name(v)
                )));
            }
        }
        Ok(())
    }
}
