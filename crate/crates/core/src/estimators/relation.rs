//! Closed-form stationarity relation between a stage-1 fit and the OLS fit
//! on its active set, evaluated with partial regression coefficients.

use nalgebra::{DMatrix, DVector};

use super::{concat, pick, sign, Moments, PcmFit};
use crate::data::RolePartition;
use crate::error::Result;
use crate::linalg::pinv;

/// Dataset columns of the restricted response-model design
/// `[x (if active), s, z, active sbar, active zbar]`.
pub fn active_design(roles: &RolePartition, fit: &PcmFit) -> Vec<usize> {
    let x: Vec<usize> = if fit.stage_y.active_x { vec![roles.x] } else { vec![] };
    concat(&[
        &x,
        &roles.s,
        &roles.z,
        &pick(&roles.sbar, &fit.stage_y.active_sbar),
        &pick(&roles.zbar, &fit.stage_y.active_zbar),
    ])
}

fn without(all: &[usize], drop: &[usize]) -> Vec<usize> {
    all.iter().copied().filter(|c| !drop.contains(c)).collect()
}

/// Coefficients of group `g` (rows) in the regression of `t` (columns) on
/// `rest ⊇ g`.
fn partial_coef(m: &Moments, t: &[usize], g: &[usize], rest: &[usize]) -> Result<DMatrix<f64>> {
    if g.is_empty() || t.is_empty() {
        return Ok(DMatrix::zeros(g.len(), t.len()));
    }
    let others = without(rest, g);
    Ok(pinv(&m.conditional(g, g, &others)?)? * m.conditional(g, t, &others)?)
}

fn max_abs(v: &DVector<f64>) -> f64 {
    v.iter().fold(0.0, |a, b| a.max(b.abs()))
}

/// Largest discrepancy between the stage-1 coefficients of `fit` and the
/// values predicted from the restricted OLS fits and the signs of the active
/// coefficients, over the response-model rows `x`, `s`, active `sbar` and
/// the mediator-model `x` coefficients.
pub fn verify_active_set_relation(moments: &Moments, roles: &RolePartition, fit: &PcmFit) -> Result<f64> {
    let p = &fit.params;
    let sy = &fit.stage_y;
    let w = &fit.weights;
    let nf = moments.n as f64;
    let design = active_design(roles, fit);
    let ols = moments.ols(&[roles.y], &design)?;

    let gx: Vec<usize> = if sy.active_x { vec![roles.x] } else { vec![] };
    let gs = roles.s.clone();
    let gsb = pick(&roles.sbar, &sy.active_sbar);
    let gzb = pick(&roles.zbar, &sy.active_zbar);
    let rest_of = |g: &[usize]| without(&design, g);

    let signed = |gamma: &DVector<f64>, coef: &DVector<f64>, pos: &[usize]| {
        DVector::from_iterator(pos.len(), pos.iter().map(|&i| gamma[i] * sign(coef[i])))
    };
    let v_x = if sy.active_x {
        let s_xx = moments.conditional(&gx, &gx, &rest_of(&gx))?[(0, 0)];
        p.zeta1 * sign(sy.beta_yx) / s_xx
    } else {
        0.0
    };
    let v_x = DVector::from_element(gx.len(), v_x);
    let v_s = pinv(&moments.conditional(&gsb, &gsb, &rest_of(&gsb))?)?
        * signed(&w.gamma_sbar, &sy.b_ysbar, &sy.active_sbar)
        * p.xi1;
    let share = (1.0 - p.zeta1 - p.xi1).max(0.0);
    let v_z = pinv(&moments.conditional(&gzb, &gzb, &rest_of(&gzb))?)?
        * signed(&w.gamma_zbar, &sy.b_yzbar, &sy.active_zbar)
        * share;

    // row block `g` of the relation matrix applied to (v_x, v_s, v_z); the
    // diagonal blocks of the x and sbar targets are -1 and -I
    let targets = [(&gx, &v_x), (&gsb, &v_s), (&gzb, &v_z)];
    let term = |g: usize| -> Result<DVector<f64>> {
        let groups = [&gx, &gs, &gsb];
        let rows = groups[g];
        let mut out = DVector::zeros(rows.len());
        for (k, (t, v)) in targets.iter().enumerate() {
            let own = (g == 0 && k == 0) || (g == 2 && k == 1);
            if own {
                out -= *v;
            } else {
                out += partial_coef(moments, t, rows, &rest_of(t))? * *v;
            }
        }
        Ok(out)
    };
    let shrink = nf * p.lambda1;
    let mut worst = 0.0f64;
    // row offsets of x, s and active sbar within [x, s, z, sbar_A, zbar_A]
    let offsets = [0, gx.len(), gx.len() + gs.len() + roles.z.len()];
    let stage_vals: [DVector<f64>; 3] = [
        DVector::from_element(gx.len(), sy.beta_yx),
        sy.b_ys.clone(),
        DVector::from_iterator(gsb.len(), sy.active_sbar.iter().map(|&i| sy.b_ysbar[i])),
    ];
    for (k, (g, actual)) in [&gx, &gs, &gsb].into_iter().zip(stage_vals.iter()).enumerate() {
        let ols_g = ols.rows(offsets[k], g.len()).column(0).into_owned();
        let predicted = ols_g + term(k)? * shrink;
        worst = worst.max(max_abs(&(actual - predicted)));
    }

    let sm = &fit.stage_m;
    let m_cols = roles.m();
    for (j, &target) in m_cols.iter().enumerate() {
        let act = pick(&roles.zbar, &sm.active_zbar[j]);
        let ols_m = moments.ols(&[target], &concat(&[&[roles.x], &roles.z, &act]))?;
        let xz = concat(&[&[roles.x], &roles.z]);
        let b_hat = partial_coef(moments, &act, &[roles.x], &xz)?;
        let s_hat = moments.conditional(&act, &act, &xz)?;
        let g = DVector::from_iterator(
            act.len(),
            sm.active_zbar[j]
                .iter()
                .map(|&i| w.gamma_mzbar[(i, j)] * sign(sm.b_mzbar[(i, j)])),
        );
        let adj = (b_hat * pinv(&s_hat)? * g).get(0).copied().unwrap_or(0.0);
        let predicted = ols_m[(0, 0)] + nf * p.rho1 * adj;
        worst = worst.max((sm.b_mx[j] - predicted).abs());
    }
    Ok(worst)
}
