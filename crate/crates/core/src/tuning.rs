//! K-fold cross-validation of penalty and tuning parameters.
//!
//! Folds come from a seeded permutation of the rows; observation at
//! permuted position `p` goes to fold `p % k`. Data are not re-standardized
//! per fold. Each candidate is scored by the mean over folds of the held-out
//! mean squared prediction error; ties go to the candidate with the larger
//! penalty values (compared in a fixed parameter order).
//!
//! PCM parameters are chosen in phases: the two ridge pilots first, then the
//! stage-1 response-model parameters `(lambda1, zeta1, xi1)` and the
//! mediator-model `rho1`, and finally the debiasing penalties on the active
//! sets of the full-data stage-1 fit. Within a phase the response- and
//! mediator-model errors depend on disjoint parameters, so their sum is
//! minimized by minimizing each part.

use std::cmp::Ordering;
use std::io::Write;

use nalgebra::DMatrix;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::{Dataset, RolePartition};
use crate::error::{Error, Result};
use crate::estimators::{
    self, adaptive_weights, concat, debias_designs, pcm_stage1_m, pcm_stage1_y, CdOptions,
    Moments, PcmParams, PilotEstimates,
};
use crate::methods::{
    preset, AdaptiveParams, ElasticNetParams, LassoParams, Method, MethodParams,
};
use crate::scm::Setting;

/// Candidate values per parameter. Absent lists use the defaults of
/// [`ParamGrid::values`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ParamGrid {
    #[serde(default = "default_folds")]
    pub folds: usize,
    #[serde(default)]
    pub seed: u64,
    pub lambda: Option<Vec<f64>>,
    pub eta: Option<Vec<f64>>,
    pub phi: Option<Vec<f64>>,
    pub pilot_lambda: Option<Vec<f64>>,
    pub pilot_rho: Option<Vec<f64>>,
    pub lambda1: Option<Vec<f64>>,
    pub rho1: Option<Vec<f64>>,
    pub zeta1: Option<Vec<f64>>,
    pub xi1: Option<Vec<f64>>,
    pub lambda2: Option<Vec<f64>>,
    pub xi2: Option<Vec<f64>>,
    pub rho2: Option<Vec<f64>>,
    pub rho2_prime: Option<Vec<f64>>,
}

fn default_folds() -> usize {
    5
}

impl Default for ParamGrid {
    fn default() -> Self {
        Self::parse("").expect("empty grid parses")
    }
}

/// `k` points log-spaced over `[lo, hi]`.
pub fn log_grid(lo: f64, hi: f64, k: usize) -> Vec<f64> {
    if k == 1 {
        return vec![lo];
    }
    let (a, b) = (lo.log10(), hi.log10());
    (0..k)
        .map(|i| 10f64.powf(a + (b - a) * i as f64 / (k - 1) as f64))
        .collect()
}

fn tenths() -> Vec<f64> {
    (0..=10).map(|i| i as f64 / 10.0).collect()
}

impl ParamGrid {
    pub fn parse(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::ConfigInvalid(format!("grid: {e}")))
    }

    /// Candidate list for `name`, falling back to the defaults: penalties
    /// log-spaced over `[1e-3, 1e2]` (13 points), `zeta1`, `xi1`, `xi2` and
    /// `phi` over `{0, 0.1, ..., 1}`, `eta` over `{0.1, 0.5, 1, 1.5, 2}`.
    pub fn values(&self, name: &str) -> Vec<f64> {
        let given = match name {
            "lambda" => &self.lambda,
            "eta" => &self.eta,
            "phi" => &self.phi,
            "pilot_lambda" => &self.pilot_lambda,
            "pilot_rho" => &self.pilot_rho,
            "lambda1" => &self.lambda1,
            "rho1" => &self.rho1,
            "zeta1" => &self.zeta1,
            "xi1" => &self.xi1,
            "lambda2" => &self.lambda2,
            "xi2" => &self.xi2,
            "rho2" => &self.rho2,
            "rho2_prime" => &self.rho2_prime,
            other => panic!("unknown grid parameter {other}"),
        };
        match given {
            Some(v) => v.clone(),
            None => match name {
                "zeta1" | "xi1" | "xi2" | "phi" => tenths(),
                "eta" => vec![0.1, 0.5, 1.0, 1.5, 2.0],
                _ => log_grid(1e-3, 1e2, 13),
            },
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.folds < 2 {
            return Err(Error::ConfigInvalid(format!("folds = {} must be at least 2", self.folds)));
        }
        for name in [
            "lambda", "eta", "phi", "pilot_lambda", "pilot_rho", "lambda1", "rho1", "zeta1", "xi1",
            "lambda2", "xi2", "rho2", "rho2_prime",
        ] {
            let v = self.values(name);
            if v.is_empty() {
                return Err(Error::EmptyGrid);
            }
            if v.iter().any(|x| !(x.is_finite() && *x >= 0.0)) {
                return Err(Error::ConfigInvalid(format!("grid `{name}` has a negative or non-finite value")));
            }
        }
        for name in ["zeta1", "xi1", "xi2", "phi"] {
            if self.values(name).iter().any(|&v| v > 1.0) {
                return Err(Error::ConfigInvalid(format!("grid `{name}` values must lie in [0, 1]")));
            }
        }
        if self.simplex_pairs().is_empty() {
            return Err(Error::EmptyGrid);
        }
        Ok(())
    }

    /// `(zeta1, xi1)` pairs with `zeta1 + xi1 <= 1`.
    pub fn simplex_pairs(&self) -> Vec<(f64, f64)> {
        let mut out = Vec::new();
        for &z in &self.values("zeta1") {
            for &x in &self.values("xi1") {
                if z + x <= 1.0 + 1e-12 {
                    out.push((z, x));
                }
            }
        }
        out
    }
}

/// One scored candidate.
#[derive(Debug, Clone, PartialEq)]
pub struct CvRow {
    pub phase: String,
    /// Parameter names and values in tie-break order.
    pub params: Vec<(String, f64)>,
    pub mean: f64,
    pub folds: Vec<f64>,
}

impl CvRow {
    pub fn params_text(&self) -> String {
        self.params
            .iter()
            .map(|(k, v)| format!("{k}={v}"))
            .collect::<Vec<_>>()
            .join(";")
    }
}

#[derive(Debug, Clone)]
pub struct CvResult {
    pub method: Method,
    pub params: MethodParams,
    pub table: Vec<CvRow>,
}

/// Fold index of every observation.
pub fn fold_assignment(n: usize, k: usize, seed: u64) -> Result<Vec<usize>> {
    if k < 2 || n < k {
        return Err(Error::FoldTooSmall { n, k });
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let mut fold = vec![0; n];
    for (pos, &row) in order.iter().enumerate() {
        fold[row] = pos % k;
    }
    Ok(fold)
}

struct Fold {
    index: usize,
    train: Moments,
    test: DMatrix<f64>,
}

fn make_folds(data: &Dataset, k: usize, seed: u64) -> Result<Vec<Fold>> {
    let assignment = fold_assignment(data.n(), k, seed)?;
    Ok((0..k)
        .map(|f| {
            let train: Vec<usize> = (0..data.n()).filter(|&i| assignment[i] != f).collect();
            let test: Vec<usize> = (0..data.n()).filter(|&i| assignment[i] == f).collect();
            Fold {
                index: f,
                train: Moments::new(&data.matrix().select_rows(&train)),
                test: data.matrix().select_rows(&test),
            }
        })
        .collect())
}

/// Mean over rows and targets of the squared prediction error.
fn mse(test: &DMatrix<f64>, targets: &[usize], predictors: &[usize], coef: &DMatrix<f64>) -> f64 {
    if targets.is_empty() || test.nrows() == 0 {
        return 0.0;
    }
    let mut total = 0.0;
    for i in 0..test.nrows() {
        for (t, &col) in targets.iter().enumerate() {
            let fitted: f64 = predictors
                .iter()
                .enumerate()
                .map(|(p, &c)| test[(i, c)] * coef[(p, t)])
                .sum();
            let r = test[(i, col)] - fitted;
            total += r * r;
        }
    }
    total / (test.nrows() * targets.len()) as f64
}

fn column(v: &[f64]) -> DMatrix<f64> {
    DMatrix::from_column_slice(v.len(), 1, v)
}

/// Larger penalties first, lexicographically.
fn penalty_order(a: &[(String, f64)], b: &[(String, f64)]) -> Ordering {
    for ((_, x), (_, y)) in a.iter().zip(b) {
        match y.total_cmp(x) {
            Ordering::Equal => continue,
            other => return other,
        }
    }
    Ordering::Equal
}

/// Scores every candidate and returns the index of the selection.
fn run_phase<F>(
    phase: &str,
    candidates: Vec<Vec<(String, f64)>>,
    folds: &[Fold],
    score: F,
    table: &mut Vec<CvRow>,
) -> Result<Vec<f64>>
where
    F: Fn(&[f64], &Fold) -> Result<f64> + Sync,
{
    if candidates.is_empty() {
        return Err(Error::EmptyGrid);
    }
    let mut rows: Vec<CvRow> = candidates
        .into_par_iter()
        .map(|params| {
            let values: Vec<f64> = params.iter().map(|(_, v)| *v).collect();
            let per_fold: Vec<f64> = folds
                .iter()
                .map(|f| score(&values, f).unwrap_or(f64::INFINITY))
                .collect();
            let mean = per_fold.iter().sum::<f64>() / per_fold.len() as f64;
            CvRow {
                phase: phase.to_string(),
                params,
                mean,
                folds: per_fold,
            }
        })
        .collect();
    rows.sort_by(|a, b| penalty_order(&a.params, &b.params));
    let best = rows
        .iter()
        .filter(|r| r.mean.is_finite())
        .min_by(|a, b| a.mean.total_cmp(&b.mean).then(penalty_order(&a.params, &b.params)))
        .map(|r| r.params.iter().map(|(_, v)| *v).collect::<Vec<f64>>())
        .ok_or_else(|| Error::SingularDesign(format!("every {phase} candidate failed")))?;
    table.extend(rows);
    Ok(best)
}

fn named(pairs: &[(&str, f64)]) -> Vec<(String, f64)> {
    pairs.iter().map(|(k, v)| (k.to_string(), *v)).collect()
}

fn product(a: &[f64], b: &[f64], na: &str, nb: &str) -> Vec<Vec<(String, f64)>> {
    a.iter()
        .flat_map(|&x| b.iter().map(move |&y| named(&[(na, x), (nb, y)])))
        .collect()
}

fn singles(a: &[f64], name: &str) -> Vec<Vec<(String, f64)>> {
    a.iter().map(|&x| named(&[(name, x)])).collect()
}

/// Chooses parameters for `method` by k-fold cross-validation.
pub fn cross_validate(
    data: &Dataset,
    roles: &RolePartition,
    method: Method,
    grid: &ParamGrid,
    options: &CdOptions,
) -> Result<CvResult> {
    grid.validate()?;
    roles.validate(data.q())?;
    if !method.is_tunable() {
        return Err(Error::ConfigInvalid(format!("{method} has no tunable parameters")));
    }
    let folds = make_folds(data, grid.folds, grid.seed)?;
    let mut table = Vec::new();
    let baseline_design = concat(&[&[roles.x], &roles.c()]);
    let y = [roles.y];
    let params = match method {
        Method::Lasso => {
            let best = run_phase("lasso", singles(&grid.values("lambda"), "lambda"), &folds, |v, f| {
                let fit = estimators::lasso(&f.train, roles, v[0], options)?;
                Ok(mse(&f.test, &y, &baseline_design, &column(fit.coef.as_slice())))
            }, &mut table)?;
            MethodParams::Lasso(LassoParams { lambda: best[0] })
        }
        Method::ElasticNet => {
            let cands = product(&grid.values("lambda"), &grid.values("phi"), "lambda", "phi");
            let best = run_phase("elastic_net", cands, &folds, |v, f| {
                let fit = estimators::elastic_net(&f.train, roles, v[0], v[1], options)?;
                Ok(mse(&f.test, &y, &baseline_design, &column(fit.coef.as_slice())))
            }, &mut table)?;
            MethodParams::ElasticNet(ElasticNetParams { lambda: best[0], phi: best[1] })
        }
        Method::AdaptiveLasso => {
            let pilot = run_phase("pilot", singles(&grid.values("pilot_lambda"), "pilot_lambda"), &folds, |v, f| {
                let coef = f.train.ridge(&y, &baseline_design, &vec![v[0]; baseline_design.len()])?;
                Ok(mse(&f.test, &y, &baseline_design, &coef))
            }, &mut table)?[0];
            let cands = product(&grid.values("lambda"), &grid.values("eta"), "lambda", "eta");
            let best = run_phase("adaptive_lasso", cands, &folds, |v, f| {
                let fit = estimators::adaptive_lasso(&f.train, roles, v[0], v[1], pilot, options)?;
                Ok(mse(&f.test, &y, &baseline_design, &column(fit.coef.as_slice())))
            }, &mut table)?;
            MethodParams::AdaptiveLasso(AdaptiveParams { lambda: best[0], eta: best[1], pilot_lambda: pilot })
        }
        Method::Pal1ma => {
            let no_m = roles.without_mediators();
            let pilot = run_phase("pilot", singles(&grid.values("pilot_lambda"), "pilot_lambda"), &folds, |v, f| {
                let p = estimators::ridge_pilot_y(&f.train, &no_m, v[0])?;
                let coef = concat_coef(&[&[p.beta_yx], p.b_yz.as_slice(), p.b_yzbar.as_slice()]);
                Ok(mse(&f.test, &y, &baseline_design, &coef))
            }, &mut table)?[0];
            let cands = product(&grid.values("lambda"), &grid.values("eta"), "lambda", "eta");
            let best = run_phase("pal1ma", cands, &folds, |v, f| {
                let fit = estimators::pal1ma(&f.train, roles, v[0], v[1], pilot, options)?;
                Ok(mse(&f.test, &y, &baseline_design, &column(fit.coef.as_slice())))
            }, &mut table)?;
            MethodParams::Pal1ma(AdaptiveParams { lambda: best[0], eta: best[1], pilot_lambda: pilot })
        }
        Method::Pcm => MethodParams::Pcm(tune_pcm(data, roles, grid, &folds, options, &mut table)?),
        _ => unreachable!("checked by is_tunable"),
    };
    Ok(CvResult { method, params, table })
}

fn concat_coef(parts: &[&[f64]]) -> DMatrix<f64> {
    let v: Vec<f64> = parts.iter().flat_map(|p| p.iter().copied()).collect();
    column(&v)
}

fn tune_pcm(
    data: &Dataset,
    roles: &RolePartition,
    grid: &ParamGrid,
    folds: &[Fold],
    options: &CdOptions,
    table: &mut Vec<CvRow>,
) -> Result<PcmParams> {
    let y = [roles.y];
    let m_cols = roles.m();
    let y_design = estimators::y_design(roles, true);
    let m_design = concat(&[&[roles.x], &roles.z, &roles.zbar]);

    let pilot_lambda = run_phase("pilot_y", singles(&grid.values("pilot_lambda"), "pilot_lambda"), folds, |v, f| {
        let p = estimators::ridge_pilot_y(&f.train, roles, v[0])?;
        let coef = concat_coef(&[
            &[p.beta_yx],
            p.b_ys.as_slice(),
            p.b_yz.as_slice(),
            p.b_ysbar.as_slice(),
            p.b_yzbar.as_slice(),
        ]);
        Ok(mse(&f.test, &y, &y_design, &coef))
    }, table)?[0];
    let pilot_rho = run_phase("pilot_m", singles(&grid.values("pilot_rho"), "pilot_rho"), folds, |v, f| {
        let p = estimators::ridge_pilot_m(&f.train, roles, v[0])?;
        let mut coef = DMatrix::zeros(m_design.len(), m_cols.len());
        coef.rows_mut(0, 1).copy_from(&p.b_mx.transpose());
        coef.rows_mut(1, roles.z.len()).copy_from(&p.b_mz);
        coef.rows_mut(1 + roles.z.len(), roles.zbar.len()).copy_from(&p.b_mzbar);
        Ok(mse(&f.test, &m_cols, &m_design, &coef))
    }, table)?[0];

    let mut chosen = match preset(Method::Pcm, Setting::A) {
        MethodParams::Pcm(p) => p,
        _ => unreachable!(),
    };
    let exponent = chosen.weight_exponent;
    let fold_weights: Vec<_> = folds
        .iter()
        .map(|f| {
            PilotEstimates::fit(&f.train, roles, pilot_lambda, pilot_rho)
                .map(|p| adaptive_weights(&p, roles, exponent))
        })
        .collect::<Result<_>>()?;

    let mut cands = Vec::new();
    for &l in &grid.values("lambda1") {
        for &(z, x) in &grid.simplex_pairs() {
            cands.push(named(&[("lambda1", l), ("zeta1", z), ("xi1", x)]));
        }
    }
    let stage_y = run_phase("stage1_y", cands, folds, |v, f| {
        let w = &fold_weights[f.index];
        let s = pcm_stage1_y(&f.train, roles, w, v[0], v[1], v[2], options)?;
        let coef = concat_coef(&[
            &[s.beta_yx],
            s.b_ys.as_slice(),
            s.b_yz.as_slice(),
            s.b_ysbar.as_slice(),
            s.b_yzbar.as_slice(),
        ]);
        Ok(mse(&f.test, &y, &y_design, &coef))
    }, table)?;
    let fold_active: Vec<Option<Vec<usize>>> = folds
        .iter()
        .map(|f| {
            pcm_stage1_y(&f.train, roles, &fold_weights[f.index], stage_y[0], stage_y[1], stage_y[2], options)
                .ok()
                .map(|s| s.active_zbar)
        })
        .collect();
    let rho1 = run_phase("stage1_m", singles(&grid.values("rho1"), "rho1"), folds, |v, f| {
        let w = &fold_weights[f.index];
        let active = fold_active[f.index]
            .as_deref()
            .ok_or_else(|| Error::InvalidParameter("response model failed on this fold".into()))?;
        let s = pcm_stage1_m(&f.train, roles, w, v[0], active, options)?;
        let mut coef = DMatrix::zeros(m_design.len(), m_cols.len());
        coef.rows_mut(0, 1).copy_from(&s.b_mx.transpose());
        coef.rows_mut(1, roles.z.len()).copy_from(&s.b_mz);
        coef.rows_mut(1 + roles.z.len(), roles.zbar.len()).copy_from(&s.b_mzbar);
        Ok(mse(&f.test, &m_cols, &m_design, &coef))
    }, table)?[0];

    chosen.pilot_lambda = pilot_lambda;
    chosen.pilot_rho = pilot_rho;
    chosen.lambda1 = stage_y[0];
    chosen.zeta1 = stage_y[1];
    chosen.xi1 = stage_y[2];
    chosen.rho1 = rho1;

    // active sets of the full-data fit fix the debiasing designs
    let full = Moments::new(data.matrix());
    let w = adaptive_weights(&PilotEstimates::fit(&full, roles, pilot_lambda, pilot_rho)?, roles, exponent);
    let s1 = pcm_stage1_y(&full, roles, &w, chosen.lambda1, chosen.zeta1, chosen.xi1, options)?;
    let design_for = |p: &PcmParams| debias_designs(roles, s1.active_x, &s1.active_sbar, &s1.active_zbar, p);
    let ridge_score = |d: &estimators::RidgeDesign, f: &Fold| -> Result<f64> {
        if d.targets.is_empty() {
            return Ok(0.0);
        }
        let coef = f.train.ridge(&d.targets, &d.predictors, &d.penalties)?;
        Ok(mse(&f.test, &d.targets, &d.predictors, &coef))
    };

    let cands = product(&grid.values("lambda2"), &grid.values("xi2"), "lambda2", "xi2");
    let a = run_phase("debias_x", cands, folds, |v, f| {
        let p = PcmParams { lambda2: v[0], xi2: v[1], ..chosen };
        match design_for(&p).0 {
            Some(d) => ridge_score(&d, f),
            None => Ok(0.0),
        }
    }, table)?;
    let rho2 = run_phase("debias_sbar", singles(&grid.values("rho2"), "rho2"), folds, |v, f| {
        ridge_score(&design_for(&PcmParams { rho2: v[0], ..chosen }).1, f)
    }, table)?[0];
    let rho2_prime = run_phase("debias_zbar", singles(&grid.values("rho2_prime"), "rho2_prime"), folds, |v, f| {
        ridge_score(&design_for(&PcmParams { rho2_prime: v[0], ..chosen }).2, f)
    }, table)?[0];
    chosen.lambda2 = a[0];
    chosen.xi2 = a[1];
    chosen.rho2 = rho2;
    chosen.rho2_prime = rho2_prime;
    Ok(chosen)
}

/// Writes the score table as CSV: phase, params, mean, fold1..foldk.
pub fn write_cv_table<W: Write>(writer: W, rows: &[CvRow]) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    let io = |e: csv::Error| Error::Io(std::io::Error::other(e));
    let k = rows.first().map_or(0, |r| r.folds.len());
    let mut header = vec!["phase".to_string(), "params".into(), "mean".into()];
    header.extend((1..=k).map(|i| format!("fold{i}")));
    w.write_record(&header).map_err(io)?;
    for r in rows {
        let mut rec = vec![r.phase.clone(), r.params_text(), r.mean.to_string()];
        rec.extend(r.folds.iter().map(|v| v.to_string()));
        w.write_record(&rec).map_err(io)?;
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn folds_are_balanced_and_deterministic() {
        let a = fold_assignment(23, 5, 7).unwrap();
        assert_eq!(a, fold_assignment(23, 5, 7).unwrap());
        for f in 0..5 {
            let size = a.iter().filter(|&&x| x == f).count();
            assert!(size == 4 || size == 5);
        }
        assert!(matches!(fold_assignment(3, 5, 0), Err(Error::FoldTooSmall { n: 3, k: 5 })));
    }

    #[test]
    fn log_grid_endpoints() {
        let g = log_grid(1e-3, 1e2, 13);
        assert_eq!(g.len(), 13);
        assert!((g[0] - 1e-3).abs() < 1e-15 && (g[12] - 1e2).abs() < 1e-10);
    }

    #[test]
    fn simplex_filter() {
        let grid = ParamGrid::default();
        let pairs = grid.simplex_pairs();
        assert_eq!(pairs.len(), 66);
        assert!(pairs.iter().all(|(z, x)| z + x <= 1.0 + 1e-12));
    }

    #[test]
    fn ties_prefer_larger_penalties() {
        let a = named(&[("lambda", 1.0)]);
        let b = named(&[("lambda", 2.0)]);
        assert_eq!(penalty_order(&b, &a), Ordering::Less);
    }
}
