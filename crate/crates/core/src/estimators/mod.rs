//! Total-effect estimators: the PCM Selector pipeline, OLS plug-in estimators
//! based on adjustment criteria, and penalized regression baselines.
//!
//! Every estimator works on the sum-of-squares matrix of standardized data
//! ([`Moments`]). Penalties follow the `1/(2n) ||residual||^2` loss scale, so
//! an L2 penalty `lambda` adds `n * lambda` to the normal equations.

mod adjustment;
mod baselines;
pub mod cd;
mod pcm;
mod pilots;
mod relation;

pub use adjustment::{back_door_estimate, front_door_like_estimate, ols_joint, OlsJoint};
pub use baselines::{adaptive_lasso, elastic_net, lasso, pal1ma, BaselineFit};
pub use cd::{CdOptions, PenalizedProblem};
pub use pcm::{
    debias_designs, debias_ridges, pcm_correct, pcm_stage1_m, pcm_stage1_y, pcm_total_effect,
    stage1_m_problem, stage1_y_problem, Corrected, DebiasFit, PcmFit, PcmParams, RidgeDesign, StageOneM,
    StageOneY, XRidge,
};
pub use pilots::{
    adaptive_weights, reciprocal_weights, ridge_pilot_m, ridge_pilot_y, AdaptiveWeights,
    MPilot, PilotEstimates, YPilot, WEIGHT_FLOOR,
};
pub(crate) use pilots::y_design;
pub use relation::{active_design, verify_active_set_relation};

use nalgebra::{DMatrix, DVector};

pub use crate::linalg::Moments;

pub(crate) fn concat(parts: &[&[usize]]) -> Vec<usize> {
    parts.iter().flat_map(|p| p.iter().copied()).collect()
}

pub(crate) fn pick(columns: &[usize], positions: &[usize]) -> Vec<usize> {
    positions.iter().map(|&p| columns[p]).collect()
}

pub(crate) fn sign(v: f64) -> f64 {
    if v > 0.0 {
        1.0
    } else if v < 0.0 {
        -1.0
    } else {
        0.0
    }
}

/// Consecutive row ranges of a stacked coefficient matrix.
pub(crate) fn split_rows(m: &DMatrix<f64>, sizes: &[usize]) -> Vec<DMatrix<f64>> {
    let mut start = 0;
    sizes
        .iter()
        .map(|&k| {
            let part = m.rows(start, k).into_owned();
            start += k;
            part
        })
        .collect()
}

pub(crate) fn column_vector(m: &DMatrix<f64>) -> DVector<f64> {
    m.column(0).into_owned()
}

/// Gram matrix of the residuals `T - P B`, computed from moments.
pub(crate) fn residual_gram(
    moments: &Moments,
    targets: &[usize],
    predictors: &[usize],
    coef: &DMatrix<f64>,
) -> DMatrix<f64> {
    if predictors.is_empty() {
        return moments.block(targets, targets);
    }
    let s_pt = moments.block(predictors, targets);
    let s_pp = moments.block(predictors, predictors);
    let cross = coef.transpose() * &s_pt;
    moments.block(targets, targets) - &cross - cross.transpose() + coef.transpose() * s_pp * coef
}

/// `D^T D / n`, `D^T t / n` penalized problem over the given columns.
pub(crate) fn penalized_problem(
    moments: &Moments,
    target: usize,
    predictors: &[usize],
    l1: Vec<f64>,
    l2: Vec<f64>,
) -> PenalizedProblem {
    let nf = moments.n as f64;
    PenalizedProblem::new(
        moments.block(predictors, predictors) / nf,
        column_vector(&moments.block(predictors, &[target])) / nf,
        l1,
        l2,
    )
}
