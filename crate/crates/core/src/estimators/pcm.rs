//! The PCM Selector: ridge pilots, adaptive weights, weighted-lasso stage-1
//! fits of the response and mediator models, debiasing ridges, the
//! sign-based correction and the assembled total effect.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use super::pilots::y_design;
use super::{
    adaptive_weights, column_vector, concat, penalized_problem, pick, residual_gram, sign,
    split_rows, AdaptiveWeights, CdOptions, Moments, PenalizedProblem, PilotEstimates,
};
use crate::data::RolePartition;
use crate::error::{Error, Result};
use crate::linalg::pinv;

fn unit_exponent() -> f64 {
    1.0
}

/// Penalty and tuning parameters of the PCM Selector.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PcmParams {
    /// Response-model ridge pilot penalty.
    pub pilot_lambda: f64,
    /// Mediator-model ridge pilot penalty.
    pub pilot_rho: f64,
    pub lambda1: f64,
    pub rho1: f64,
    pub zeta1: f64,
    pub xi1: f64,
    pub lambda2: f64,
    pub xi2: f64,
    pub rho2: f64,
    pub rho2_prime: f64,
    /// Exponent applied to pilot magnitudes when forming weights.
    #[serde(default = "unit_exponent")]
    pub weight_exponent: f64,
}

impl PcmParams {
    pub fn validate(&self) -> Result<()> {
        let named = [
            ("pilot_lambda", self.pilot_lambda),
            ("pilot_rho", self.pilot_rho),
            ("lambda1", self.lambda1),
            ("rho1", self.rho1),
            ("zeta1", self.zeta1),
            ("xi1", self.xi1),
            ("lambda2", self.lambda2),
            ("xi2", self.xi2),
            ("rho2", self.rho2),
            ("rho2_prime", self.rho2_prime),
            ("weight_exponent", self.weight_exponent),
        ];
        for (name, v) in named {
            if !(v.is_finite() && v >= 0.0) {
                return Err(Error::InvalidParameter(format!("{name} = {v} must be finite and >= 0")));
            }
        }
        if self.zeta1 + self.xi1 > 1.0 + 1e-12 {
            return Err(Error::InvalidParameter(format!(
                "zeta1 + xi1 = {} exceeds 1",
                self.zeta1 + self.xi1
            )));
        }
        if self.xi2 > 1.0 {
            return Err(Error::InvalidParameter(format!("xi2 = {} exceeds 1", self.xi2)));
        }
        Ok(())
    }

    fn covariate_share(&self) -> f64 {
        (1.0 - self.zeta1 - self.xi1).max(0.0)
    }
}

/// Stage-1 fit of the response model. Active sets hold positions within
/// `roles.sbar` and `roles.zbar`.
#[derive(Debug, Clone, PartialEq)]
pub struct StageOneY {
    pub beta_yx: f64,
    pub b_ys: DVector<f64>,
    pub b_yz: DVector<f64>,
    pub b_ysbar: DVector<f64>,
    pub b_yzbar: DVector<f64>,
    pub active_x: bool,
    pub active_sbar: Vec<usize>,
    pub active_zbar: Vec<usize>,
    pub sweeps: usize,
}

/// Stage-1 fit of the mediator model, one column per mediator in
/// `roles.m()` order.
#[derive(Debug, Clone, PartialEq)]
pub struct StageOneM {
    pub b_mx: DVector<f64>,
    pub b_mz: DMatrix<f64>,
    pub b_mzbar: DMatrix<f64>,
    pub active_zbar: Vec<Vec<usize>>,
}

/// The weighted-lasso problem for the response model over
/// `[x, s, z, sbar, zbar]`.
pub fn stage1_y_problem(
    moments: &Moments,
    roles: &RolePartition,
    w: &AdaptiveWeights,
    lambda1: f64,
    zeta1: f64,
    xi1: f64,
) -> PenalizedProblem {
    let design = y_design(roles, true);
    let share = (1.0 - zeta1 - xi1).max(0.0);
    let mut l1 = vec![lambda1 * zeta1];
    l1.extend(std::iter::repeat_n(0.0, roles.s.len() + roles.z.len()));
    l1.extend(w.gamma_sbar.iter().map(|g| lambda1 * xi1 * g));
    l1.extend(w.gamma_zbar.iter().map(|g| lambda1 * share * g));
    let p = design.len();
    penalized_problem(moments, roles.y, &design, l1, vec![0.0; p])
}

fn nonzero_positions(v: &DVector<f64>) -> Vec<usize> {
    v.iter()
        .enumerate()
        .filter(|(_, b)| **b != 0.0)
        .map(|(i, _)| i)
        .collect()
}

pub fn pcm_stage1_y(
    moments: &Moments,
    roles: &RolePartition,
    w: &AdaptiveWeights,
    lambda1: f64,
    zeta1: f64,
    xi1: f64,
    options: &CdOptions,
) -> Result<StageOneY> {
    let problem = stage1_y_problem(moments, roles, w, lambda1, zeta1, xi1);
    let sol = problem.solve(options)?;
    let coef = DMatrix::from_column_slice(sol.coef.len(), 1, sol.coef.as_slice());
    let parts = split_rows(
        &coef,
        &[1, roles.s.len(), roles.z.len(), roles.sbar.len(), roles.zbar.len()],
    );
    let b_ysbar = column_vector(&parts[3]);
    let b_yzbar = column_vector(&parts[4]);
    Ok(StageOneY {
        beta_yx: parts[0][(0, 0)],
        b_ys: column_vector(&parts[1]),
        b_yz: column_vector(&parts[2]),
        active_x: parts[0][(0, 0)] != 0.0,
        active_sbar: nonzero_positions(&b_ysbar),
        active_zbar: nonzero_positions(&b_yzbar),
        b_ysbar,
        b_yzbar,
        sweeps: sol.sweeps,
    })
}

/// The weighted-lasso problem for mediator `j` (position in `roles.m()`)
/// over `[x, z, zbar_K]`, where `zbar_k` lists positions in `roles.zbar`.
pub fn stage1_m_problem(
    moments: &Moments,
    roles: &RolePartition,
    w: &AdaptiveWeights,
    rho1: f64,
    zbar_k: &[usize],
    j: usize,
) -> PenalizedProblem {
    let design = concat(&[&[roles.x], &roles.z, &pick(&roles.zbar, zbar_k)]);
    let mut l1 = vec![0.0; 1 + roles.z.len()];
    l1.extend(zbar_k.iter().map(|&i| rho1 * w.gamma_mzbar[(i, j)]));
    let p = design.len();
    penalized_problem(moments, roles.m()[j], &design, l1, vec![0.0; p])
}

/// Mediator-model fits restricted to the candidate covariates `zbar_k`
/// (positions in `roles.zbar`), normally the response-model active set.
/// `b_mzbar` keeps one row per candidate covariate, zero outside `zbar_k`.
pub fn pcm_stage1_m(
    moments: &Moments,
    roles: &RolePartition,
    w: &AdaptiveWeights,
    rho1: f64,
    zbar_k: &[usize],
    options: &CdOptions,
) -> Result<StageOneM> {
    let q_m = roles.q_m();
    let (q_z, q_zbar) = (roles.z.len(), roles.zbar.len());
    let mut b_mx = DVector::zeros(q_m);
    let mut b_mz = DMatrix::zeros(q_z, q_m);
    let mut b_mzbar = DMatrix::zeros(q_zbar, q_m);
    let mut active_zbar = Vec::with_capacity(q_m);
    for j in 0..q_m {
        let sol = stage1_m_problem(moments, roles, w, rho1, zbar_k, j).solve(options)?;
        b_mx[j] = sol.coef[0];
        for i in 0..q_z {
            b_mz[(i, j)] = sol.coef[1 + i];
        }
        for (k, &i) in zbar_k.iter().enumerate() {
            b_mzbar[(i, j)] = sol.coef[1 + q_z + k];
        }
        active_zbar.push(nonzero_positions(&b_mzbar.column(j).into_owned()));
    }
    Ok(StageOneM {
        b_mx,
        b_mz,
        b_mzbar,
        active_zbar,
    })
}

/// Ridge fit of the treatment on the active design.
#[derive(Debug, Clone, PartialEq)]
pub struct XRidge {
    pub b_xz: DVector<f64>,
    pub b_xzbar: DVector<f64>,
    pub b_xs: DVector<f64>,
    pub b_xsbar: DVector<f64>,
    /// Residual sum of squares.
    pub s_xx: f64,
}

/// Debiasing ridge fits on the stage-1 active sets. Coefficient matrices are
/// `predictors x targets`; the `sbar` and `zbar` dimensions refer to the
/// active members only.
#[derive(Debug, Clone, PartialEq)]
pub struct DebiasFit {
    /// Absent when the treatment is inactive.
    pub x: Option<XRidge>,
    pub b_sbar_x: DVector<f64>,
    pub b_sbar_s: DMatrix<f64>,
    pub b_sbar_z: DMatrix<f64>,
    pub b_sbar_zbar: DMatrix<f64>,
    pub s_sbar: DMatrix<f64>,
    pub b_zbar_x: DVector<f64>,
    pub b_zbar_z: DMatrix<f64>,
    pub b_zbar_s: DMatrix<f64>,
    pub b_zbar_sbar: DMatrix<f64>,
    pub s_zbar: DMatrix<f64>,
    /// OLS coefficients of `x` for the active `zbar` on `[x, z]`.
    pub b_hat_zbar_x: DVector<f64>,
    pub s_hat_zbar: DMatrix<f64>,
}

fn ridge_fit(
    moments: &Moments,
    targets: &[usize],
    predictors: &[usize],
    penalties: &[f64],
) -> Result<(DMatrix<f64>, DMatrix<f64>)> {
    if targets.is_empty() {
        return Ok((DMatrix::zeros(predictors.len(), 0), DMatrix::zeros(0, 0)));
    }
    let coef = if predictors.is_empty() {
        DMatrix::zeros(0, targets.len())
    } else {
        moments.ridge(targets, predictors, penalties)?
    };
    let gram = residual_gram(moments, targets, predictors, &coef);
    Ok((coef, gram))
}

/// Targets, predictors and per-predictor ridge penalties of one debiasing
/// regression.
#[derive(Debug, Clone, PartialEq)]
pub struct RidgeDesign {
    pub targets: Vec<usize>,
    pub predictors: Vec<usize>,
    pub penalties: Vec<f64>,
}

/// The three debiasing designs: the treatment on `[z, zbar_A, s, sbar_A]`
/// (absent when `x` is inactive), `sbar_A` on `[x, s, z, zbar_A]` and
/// `zbar_A` on `[x, z, s, sbar_A]`, with `x` dropped when inactive.
pub fn debias_designs(
    roles: &RolePartition,
    active_x: bool,
    active_sbar: &[usize],
    active_zbar: &[usize],
    params: &PcmParams,
) -> (Option<RidgeDesign>, RidgeDesign, RidgeDesign) {
    let sa = pick(&roles.sbar, active_sbar);
    let za = pick(&roles.zbar, active_zbar);
    let (q_s, q_z) = (roles.s.len(), roles.z.len());
    let (k_s, k_z) = (sa.len(), za.len());
    let x_cols: Vec<usize> = if active_x { vec![roles.x] } else { vec![] };
    let k_x = x_cols.len();

    let a = active_x.then(|| {
        let mut penalties = vec![0.0; q_z];
        penalties.extend(std::iter::repeat_n(params.lambda2 * (1.0 - params.xi2), k_z));
        penalties.extend(std::iter::repeat_n(0.0, q_s));
        penalties.extend(std::iter::repeat_n(params.lambda2 * params.xi2, k_s));
        RidgeDesign {
            targets: vec![roles.x],
            predictors: concat(&[&roles.z, &za, &roles.s, &sa]),
            penalties,
        }
    });
    let mut pen_b = vec![0.0; k_x + q_s + q_z];
    pen_b.extend(std::iter::repeat_n(params.rho2, k_z));
    let b = RidgeDesign {
        targets: sa.clone(),
        predictors: concat(&[&x_cols, &roles.s, &roles.z, &za]),
        penalties: pen_b,
    };
    let mut pen_c = vec![0.0; k_x + q_z + q_s];
    pen_c.extend(std::iter::repeat_n(params.rho2_prime, k_s));
    let c = RidgeDesign {
        targets: za,
        predictors: concat(&[&x_cols, &roles.z, &roles.s, &sa]),
        penalties: pen_c,
    };
    (a, b, c)
}

/// Solves the three debiasing ridge problems and the OLS fit of the active
/// candidate covariates on `[x, z]`. `active_sbar` and `active_zbar` are
/// positions within `roles.sbar` and `roles.zbar`.
pub fn debias_ridges(
    moments: &Moments,
    roles: &RolePartition,
    active_x: bool,
    active_sbar: &[usize],
    active_zbar: &[usize],
    params: &PcmParams,
) -> Result<DebiasFit> {
    let (q_s, q_z) = (roles.s.len(), roles.z.len());
    let (k_s, k_z) = (active_sbar.len(), active_zbar.len());
    let k_x = usize::from(active_x);
    let (design_a, design_b, design_c) =
        debias_designs(roles, active_x, active_sbar, active_zbar, params);

    let x = match design_a {
        Some(d) => {
            let (coef, gram) = ridge_fit(moments, &d.targets, &d.predictors, &d.penalties)?;
            let p = split_rows(&coef, &[q_z, k_z, q_s, k_s]);
            Some(XRidge {
                b_xz: column_vector(&p[0]),
                b_xzbar: column_vector(&p[1]),
                b_xs: column_vector(&p[2]),
                b_xsbar: column_vector(&p[3]),
                s_xx: gram[(0, 0)],
            })
        }
        None => None,
    };
    let (coef_b, s_sbar) =
        ridge_fit(moments, &design_b.targets, &design_b.predictors, &design_b.penalties)?;
    let pb = split_rows(&coef_b, &[k_x, q_s, q_z, k_z]);
    let (coef_c, s_zbar) =
        ridge_fit(moments, &design_c.targets, &design_c.predictors, &design_c.penalties)?;
    let pc = split_rows(&coef_c, &[k_x, q_z, q_s, k_s]);

    let design_hat = concat(&[&[roles.x], &roles.z]);
    let (coef_hat, s_hat_zbar) =
        ridge_fit(moments, &design_c.targets, &design_hat, &vec![0.0; 1 + q_z])?;

    let x_row = |p: &DMatrix<f64>, k: usize| {
        if p.nrows() == 0 {
            DVector::zeros(k)
        } else {
            p.row(0).transpose()
        }
    };
    Ok(DebiasFit {
        x,
        b_sbar_x: x_row(&pb[0], k_s),
        b_sbar_s: pb[1].clone(),
        b_sbar_z: pb[2].clone(),
        b_sbar_zbar: pb[3].clone(),
        s_sbar,
        b_zbar_x: x_row(&pc[0], k_z),
        b_zbar_z: pc[1].clone(),
        b_zbar_s: pc[2].clone(),
        b_zbar_sbar: pc[3].clone(),
        s_zbar,
        b_hat_zbar_x: coef_hat.row(0).transpose(),
        s_hat_zbar,
    })
}

/// Corrected coefficients. `mediators` lists the dataset columns of the
/// known mediators followed by the active candidate mediators; `b_mx` and
/// `b_ym` follow that order.
#[derive(Debug, Clone, PartialEq)]
pub struct Corrected {
    pub beta_yx: f64,
    pub b_ys: DVector<f64>,
    pub b_ysbar: DVector<f64>,
    pub mediators: Vec<usize>,
    pub b_mx: DVector<f64>,
    pub b_ym: DVector<f64>,
}

impl Corrected {
    pub fn total_effect(&self) -> f64 {
        self.beta_yx + self.b_mx.dot(&self.b_ym)
    }
}

pub fn pcm_correct(
    n: usize,
    roles: &RolePartition,
    stage_y: &StageOneY,
    stage_m: &StageOneM,
    debias: &DebiasFit,
    w: &AdaptiveWeights,
    params: &PcmParams,
) -> Result<Corrected> {
    let nf = n as f64;
    let sa = &stage_y.active_sbar;
    let za = &stage_y.active_zbar;
    let q_s = roles.s.len();

    let signed = |gamma: &DVector<f64>, coef: &DVector<f64>, pos: &[usize]| {
        DVector::from_iterator(pos.len(), pos.iter().map(|&i| gamma[i] * sign(coef[i])))
    };
    let v_x = match &debias.x {
        Some(xr) if xr.s_xx > 0.0 => params.zeta1 * sign(stage_y.beta_yx) / xr.s_xx,
        _ => 0.0,
    };
    let v_s = pinv(&debias.s_sbar)? * signed(&w.gamma_sbar, &stage_y.b_ysbar, sa) * params.xi1;
    let v_z = pinv(&debias.s_zbar)?
        * signed(&w.gamma_zbar, &stage_y.b_yzbar, za)
        * params.covariate_share();

    let shrink = nf * params.lambda1;
    let beta_yx = if stage_y.active_x {
        stage_y.beta_yx - shrink * (-v_x + debias.b_sbar_x.dot(&v_s) + debias.b_zbar_x.dot(&v_z))
    } else {
        0.0
    };
    let (b_xs, b_xsbar) = match &debias.x {
        Some(xr) => (xr.b_xs.clone(), xr.b_xsbar.clone()),
        None => (DVector::zeros(q_s), DVector::zeros(sa.len())),
    };
    let b_ys = &stage_y.b_ys - (b_xs * v_x + &debias.b_sbar_s * &v_s + &debias.b_zbar_s * &v_z) * shrink;
    let ysbar_active = DVector::from_iterator(sa.len(), sa.iter().map(|&i| stage_y.b_ysbar[i]));
    let b_ysbar = ysbar_active - (b_xsbar * v_x - &v_s + &debias.b_zbar_sbar * &v_z) * shrink;

    let mut positions: Vec<usize> = (0..q_s).collect();
    positions.extend(sa.iter().map(|&a| q_s + a));
    let m_cols = roles.m();
    let s_hat_inv = pinv(&debias.s_hat_zbar)?;
    let mut b_mx = DVector::zeros(positions.len());
    for (k, &j) in positions.iter().enumerate() {
        let g = DVector::from_iterator(
            za.len(),
            za.iter().map(|&i| w.gamma_mzbar[(i, j)] * sign(stage_m.b_mzbar[(i, j)])),
        );
        let adj = debias.b_hat_zbar_x.dot(&(&s_hat_inv * g));
        b_mx[k] = stage_m.b_mx[j] - nf * params.rho1 * adj;
    }
    let mut b_ym = DVector::zeros(positions.len());
    b_ym.rows_mut(0, q_s).copy_from(&b_ys);
    b_ym.rows_mut(q_s, sa.len()).copy_from(&b_ysbar);

    Ok(Corrected {
        beta_yx,
        b_ys,
        b_ysbar,
        mediators: pick(&m_cols, &positions),
        b_mx,
        b_ym,
    })
}

/// Every intermediate quantity of one PCM Selector fit.
#[derive(Debug, Clone, PartialEq)]
pub struct PcmFit {
    pub params: PcmParams,
    pub pilots: PilotEstimates,
    pub weights: AdaptiveWeights,
    pub stage_y: StageOneY,
    pub stage_m: StageOneM,
    pub debias: DebiasFit,
    pub corrected: Corrected,
    pub tau_hat: f64,
}

pub fn pcm_total_effect(
    moments: &Moments,
    roles: &RolePartition,
    params: &PcmParams,
    options: &CdOptions,
) -> Result<PcmFit> {
    params.validate()?;
    roles.validate(moments.q())?;
    let pilots = PilotEstimates::fit(moments, roles, params.pilot_lambda, params.pilot_rho)?;
    let weights = adaptive_weights(&pilots, roles, params.weight_exponent);
    let stage_y = pcm_stage1_y(
        moments,
        roles,
        &weights,
        params.lambda1,
        params.zeta1,
        params.xi1,
        options,
    )?;
    let stage_m = pcm_stage1_m(
        moments,
        roles,
        &weights,
        params.rho1,
        &stage_y.active_zbar,
        options,
    )?;
    let debias = debias_ridges(
        moments,
        roles,
        stage_y.active_x,
        &stage_y.active_sbar,
        &stage_y.active_zbar,
        params,
    )?;
    let corrected = pcm_correct(moments.n, roles, &stage_y, &stage_m, &debias, &weights, params)?;
    let tau_hat = corrected.total_effect();
    Ok(PcmFit {
        params: *params,
        pilots,
        weights,
        stage_y,
        stage_m,
        debias,
        corrected,
        tau_hat,
    })
}

fn vec_json(v: &DVector<f64>) -> Value {
    json!(v.as_slice())
}

fn mat_json(m: &DMatrix<f64>) -> Value {
    let rows: Vec<Vec<f64>> = m.row_iter().map(|r| r.iter().copied().collect()).collect();
    json!(rows)
}

fn named(cols: &[usize], names: &[String]) -> Vec<String> {
    cols.iter().map(|&c| names[c].clone()).collect()
}

impl PcmFit {
    /// Structured report with variable names resolved through `names`.
    pub fn to_json(&self, roles: &RolePartition, names: &[String]) -> Value {
        let sy = &self.stage_y;
        let sm = &self.stage_m;
        let d = &self.debias;
        let c = &self.corrected;
        json!({
            "tau_hat": self.tau_hat,
            "params": self.params,
            "variables": {
                "x": names[roles.x],
                "y": names[roles.y],
                "z": named(&roles.z, names),
                "zbar": named(&roles.zbar, names),
                "s": named(&roles.s, names),
                "sbar": named(&roles.sbar, names),
            },
            "pilots": {
                "beta_yx": self.pilots.y.beta_yx,
                "b_ys": vec_json(&self.pilots.y.b_ys),
                "b_yz": vec_json(&self.pilots.y.b_yz),
                "b_ysbar": vec_json(&self.pilots.y.b_ysbar),
                "b_yzbar": vec_json(&self.pilots.y.b_yzbar),
                "b_mx": vec_json(&self.pilots.m.b_mx),
                "b_mz": mat_json(&self.pilots.m.b_mz),
                "b_mzbar": mat_json(&self.pilots.m.b_mzbar),
            },
            "weights": {
                "gamma_sbar": vec_json(&self.weights.gamma_sbar),
                "gamma_zbar": vec_json(&self.weights.gamma_zbar),
                "gamma_mzbar": mat_json(&self.weights.gamma_mzbar),
                "floored": self.weights.floored,
            },
            "stage1": {
                "beta_yx": sy.beta_yx,
                "b_ys": vec_json(&sy.b_ys),
                "b_yz": vec_json(&sy.b_yz),
                "b_ysbar": vec_json(&sy.b_ysbar),
                "b_yzbar": vec_json(&sy.b_yzbar),
                "b_mx": vec_json(&sm.b_mx),
                "b_mz": mat_json(&sm.b_mz),
                "b_mzbar": mat_json(&sm.b_mzbar),
                "active_x": sy.active_x,
                "active_sbar": named(&pick(&roles.sbar, &sy.active_sbar), names),
                "active_zbar": named(&pick(&roles.zbar, &sy.active_zbar), names),
                "sweeps": sy.sweeps,
            },
            "debias": {
                "x": d.x.as_ref().map(|xr| json!({
                    "b_xz": vec_json(&xr.b_xz),
                    "b_xzbar": vec_json(&xr.b_xzbar),
                    "b_xs": vec_json(&xr.b_xs),
                    "b_xsbar": vec_json(&xr.b_xsbar),
                    "s_xx": xr.s_xx,
                })),
                "b_sbar_x": vec_json(&d.b_sbar_x),
                "b_sbar_s": mat_json(&d.b_sbar_s),
                "b_sbar_z": mat_json(&d.b_sbar_z),
                "b_sbar_zbar": mat_json(&d.b_sbar_zbar),
                "s_sbar": mat_json(&d.s_sbar),
                "b_zbar_x": vec_json(&d.b_zbar_x),
                "b_zbar_z": mat_json(&d.b_zbar_z),
                "b_zbar_s": mat_json(&d.b_zbar_s),
                "b_zbar_sbar": mat_json(&d.b_zbar_sbar),
                "s_zbar": mat_json(&d.s_zbar),
                "b_hat_zbar_x": vec_json(&d.b_hat_zbar_x),
                "s_hat_zbar": mat_json(&d.s_hat_zbar),
            },
            "corrected": {
                "beta_yx": c.beta_yx,
                "b_ys": vec_json(&c.b_ys),
                "b_ysbar": vec_json(&c.b_ysbar),
                "mediators": named(&c.mediators, names),
                "b_mx": vec_json(&c.b_mx),
                "b_ym": vec_json(&c.b_ym),
            },
        })
    }
}
