mod common;

use common::{instance, lstsq, max_gap};
use pcm_selector::estimators::{
    adaptive_weights, back_door_estimate, front_door_like_estimate, pal1ma, pcm_stage1_m, pcm_stage1_y,
    pcm_total_effect, ridge_pilot_y, stage1_m_problem, stage1_y_problem, verify_active_set_relation, active_design,
    CdOptions, PcmParams, PenalizedProblem, PilotEstimates,
};
use pcm_selector::linalg::{condition_number, Moments};
use proptest::prelude::*;

fn params(lambda1: f64, rho1: f64) -> PcmParams {
    PcmParams {
        pilot_lambda: 0.5,
        pilot_rho: 0.5,
        lambda1,
        rho1,
        zeta1: 0.2,
        xi1: 0.3,
        lambda2: 0.1,
        xi2: 0.5,
        rho2: 0.1,
        rho2_prime: 0.1,
        weight_exponent: 1.0,
    }
}

fn opts() -> CdOptions {
    CdOptions::default()
}

#[test]
fn unpenalized_stage_one_is_least_squares() {
    for seed in 0..50 {
        let inst = instance(seed, 200, 1, 2, 1, 2, 1.0);
        let r = &inst.roles;
        let fit = pcm_total_effect(&inst.moments, r, &params(0.0, 0.0), &opts()).unwrap();
        let design = [vec![r.x], r.s.clone(), r.z.clone(), r.sbar.clone(), r.zbar.clone()].concat();
        let ols = lstsq(inst.data.matrix(), r.y, &design);
        let sy = &fit.stage_y;
        let stage: Vec<f64> = [
            vec![sy.beta_yx],
            sy.b_ys.as_slice().to_vec(),
            sy.b_yz.as_slice().to_vec(),
            sy.b_ysbar.as_slice().to_vec(),
            sy.b_yzbar.as_slice().to_vec(),
        ]
        .concat();
        assert!(max_gap(&stage, ols.as_slice()) < 1e-8, "seed {seed}");
        let m_design = [vec![r.x], r.z.clone(), r.zbar.clone()].concat();
        for (j, &m) in r.m().iter().enumerate() {
            let ols = lstsq(inst.data.matrix(), m, &m_design);
            assert!((fit.stage_m.b_mx[j] - ols[0]).abs() < 1e-8);
        }
        let pilot = ridge_pilot_y(&inst.moments, r, 0.0).unwrap();
        assert!((pilot.beta_yx - ols[0]).abs() < 1e-8);
    }
}

#[test]
fn quadratic_penalty_matches_ridge_pilot() {
    for seed in 0..30 {
        let inst = instance(seed, 200, 1, 2, 1, 2, 1.0);
        let r = &inst.roles;
        let lambda = 0.05 * (1 + seed % 7) as f64;
        let (l2_total, zeta, xi) = (3.0 * lambda, 1.0 / 3.0, 1.0 / 3.0);
        let design = [vec![r.x], r.s.clone(), r.z.clone(), r.sbar.clone(), r.zbar.clone()].concat();
        let nf = inst.moments.n as f64;
        let gram = inst.moments.block(&design, &design) / nf;
        let xty = inst.moments.block(&design, &[r.y]).column(0) / nf;
        let mut l2 = vec![l2_total * zeta];
        l2.extend(vec![0.0; r.s.len() + r.z.len()]);
        l2.extend(vec![l2_total * xi; r.sbar.len()]);
        l2.extend(vec![l2_total * (1.0 - zeta - xi); r.zbar.len()]);
        let p = design.len();
        let sol = PenalizedProblem::new(gram, xty, vec![0.0; p], l2).solve(&opts()).unwrap();
        let pilot = ridge_pilot_y(&inst.moments, r, lambda).unwrap();
        let ridge: Vec<f64> = [
            vec![pilot.beta_yx],
            pilot.b_ys.as_slice().to_vec(),
            pilot.b_yz.as_slice().to_vec(),
            pilot.b_ysbar.as_slice().to_vec(),
            pilot.b_yzbar.as_slice().to_vec(),
        ]
        .concat();
        assert!(max_gap(sol.coef.as_slice(), &ridge) < 1e-8, "seed {seed}");
    }
}

#[test]
fn pcm_without_mediators_is_pal1ma() {
    for seed in 0..50 {
        let inst = instance(seed, 200, 1, 2, 1, 2, 1.0);
        let r = inst.roles.without_mediators();
        let (lambda, eta, pilot) = (0.02 * (1 + seed % 5) as f64, 1.0 + 0.1 * (seed % 3) as f64, 0.7);
        let p = PcmParams {
            pilot_lambda: pilot,
            lambda1: lambda,
            zeta1: 0.0,
            xi1: 0.0,
            weight_exponent: eta,
            ..params(lambda, 0.1)
        };
        let fit = pcm_total_effect(&inst.moments, &r, &p, &opts()).unwrap();
        let base = pal1ma(&inst.moments, &r, lambda, eta, pilot, &opts()).unwrap();
        assert!((fit.tau_hat - base.estimate).abs() < 1e-10, "seed {seed}: {} vs {}", fit.tau_hat, base.estimate);
    }
}

#[test]
fn stage_one_solutions_are_stationary() {
    let grid = [0.01, 0.1, 1.0];
    let mut checked = 0;
    for seed in 0..100u64 {
        let inst = instance(seed, 60, 1, 3, 1, 3, 1.0);
        let r = &inst.roles;
        let lambda1 = grid[seed as usize % 3];
        let rho1 = grid[seed as usize / 3 % 3];
        let p = params(lambda1, rho1);
        let pilots = PilotEstimates::fit(&inst.moments, r, p.pilot_lambda, p.pilot_rho).unwrap();
        let w = adaptive_weights(&pilots, r, 1.0);
        let sy = pcm_stage1_y(&inst.moments, r, &w, lambda1, p.zeta1, p.xi1, &opts()).unwrap();
        let problem = stage1_y_problem(&inst.moments, r, &w, lambda1, p.zeta1, p.xi1);
        let coef: Vec<f64> = [
            vec![sy.beta_yx],
            sy.b_ys.as_slice().to_vec(),
            sy.b_yz.as_slice().to_vec(),
            sy.b_ysbar.as_slice().to_vec(),
            sy.b_yzbar.as_slice().to_vec(),
        ]
        .concat();
        assert_stationary(&problem, &coef);
        let all: Vec<usize> = (0..r.zbar.len()).collect();
        for k in [all.clone(), sy.active_zbar.clone()] {
            let sm = pcm_stage1_m(&inst.moments, r, &w, rho1, &k, &opts()).unwrap();
            for j in 0..r.q_m() {
                let problem = stage1_m_problem(&inst.moments, r, &w, rho1, &k, j);
                let mut coef = vec![sm.b_mx[j]];
                coef.extend(sm.b_mz.column(j).iter());
                coef.extend(k.iter().map(|&i| sm.b_mzbar[(i, j)]));
                assert_stationary(&problem, &coef);
                for i in 0..r.zbar.len() {
                    if !k.contains(&i) {
                        assert_eq!(sm.b_mzbar[(i, j)], 0.0);
                    }
                }
            }
        }
        checked += 1;
    }
    assert_eq!(checked, 100);
}

/// Subgradient conditions checked coordinate by coordinate from the gradient.
fn assert_stationary(problem: &PenalizedProblem, coef: &[f64]) {
    let b = nalgebra::DVector::from_column_slice(coef);
    let grad = &problem.gram * &b - &problem.xty;
    for j in 0..coef.len() {
        let pen = problem.l1[j];
        if coef[j] == 0.0 {
            assert!(grad[j].abs() <= pen + 1e-6, "coordinate {j}: |{}| > {pen}", grad[j]);
        } else {
            assert!((grad[j] + pen * coef[j].signum()).abs() <= 1e-6, "coordinate {j}");
        }
    }
}

#[test]
fn active_set_relation_holds_on_well_conditioned_designs() {
    let grid = [0.01, 0.1, 1.0];
    let mut verified = 0;
    for seed in 0..100u64 {
        let inst = instance(1000 + seed, 80, 1, 3, 1, 2, 1.0);
        let r = &inst.roles;
        let p = params(grid[seed as usize % 3], grid[seed as usize / 3 % 3]);
        let fit = pcm_total_effect(&inst.moments, r, &p, &opts()).unwrap();
        let design = active_design(r, &fit);
        if condition_number(&inst.moments.block(&design, &design)) >= 1e6 {
            continue;
        }
        let residual = verify_active_set_relation(&inst.moments, r, &fit).unwrap();
        assert!(residual < 1e-6, "seed {seed}: {residual}");
        verified += 1;
    }
    assert!(verified >= 90);
}

#[test]
fn active_sets_index_candidates_only() {
    for seed in 0..20 {
        let inst = instance(seed, 40, 2, 4, 2, 3, 1.0);
        let fit = pcm_total_effect(&inst.moments, &inst.roles, &params(0.01, 0.01), &opts()).unwrap();
        assert!(fit.stage_y.active_sbar.iter().all(|&i| i < inst.roles.sbar.len()));
        assert!(fit.stage_y.active_zbar.iter().all(|&i| i < inst.roles.zbar.len()));
        let design = active_design(&inst.roles, &fit);
        for v in inst.roles.z.iter().chain(&inst.roles.s) {
            assert_eq!(design.iter().filter(|&&d| d == *v).count(), 1);
        }
    }
}

#[test]
fn exact_data_recovers_adjustment_effects() {
    let inst = instance(7, 50, 1, 2, 1, 2, 0.0);
    let r = &inst.roles;
    let c = r.c();
    let direct = lstsq(inst.data.matrix(), r.y, &[vec![r.x], c.clone()].concat())[0];
    let bd = back_door_estimate(&inst.moments, r.x, r.y, &c).unwrap();
    assert!((bd - direct).abs() < 1e-10);
    let m = r.m();
    let fd = front_door_like_estimate(&inst.moments, r.x, r.y, &m, &c, &c, true).unwrap();
    let first: Vec<f64> = m
        .iter()
        .map(|&t| lstsq(inst.data.matrix(), t, &[vec![r.x], c.clone()].concat())[0])
        .collect();
    let second = lstsq(inst.data.matrix(), r.y, &[m.clone(), vec![r.x], c.clone()].concat());
    let product: f64 = first.iter().zip(second.iter()).map(|(a, b)| a * b).sum();
    assert!((fd - product).abs() < 1e-10);
}

fn negate_y(m: &Moments, y: usize) -> Moments {
    let mut neg = m.clone();
    for j in 0..neg.q() {
        if j != y {
            neg.s[(y, j)] = -neg.s[(y, j)];
            neg.s[(j, y)] = -neg.s[(j, y)];
        }
    }
    neg
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn negating_the_response_negates_the_estimate(seed in 0u64..10_000, l in 0.001f64..0.2, rho in 0.001f64..0.5) {
        let inst = instance(seed, 50, 1, 2, 1, 2, 1.0);
        let neg = negate_y(&inst.moments, inst.roles.y);
        let p = params(l, rho);
        let a = pcm_total_effect(&inst.moments, &inst.roles, &p, &opts()).unwrap();
        let b = pcm_total_effect(&neg, &inst.roles, &p, &opts()).unwrap();
        prop_assert_eq!(a.stage_y.active_zbar.clone(), b.stage_y.active_zbar.clone());
        prop_assert!((a.tau_hat + b.tau_hat).abs() <= 1e-9 * (1.0 + a.tau_hat.abs()));
        prop_assert!((a.stage_y.beta_yx + b.stage_y.beta_yx).abs() <= 1e-9);
        prop_assert!((&a.corrected.b_ym + &b.corrected.b_ym).amax() <= 1e-9);
        prop_assert_eq!(&a.stage_m, &b.stage_m);
    }

    #[test]
    fn estimates_are_invariant_to_sample_order(seed in 0u64..10_000) {
        let inst = instance(seed, 40, 1, 2, 1, 1, 1.0);
        let n = inst.data.n();
        let rows: Vec<usize> = (0..n).rev().collect();
        let flipped = inst.data.subset_rows(&rows);
        let m2 = Moments::new(flipped.matrix());
        let p = params(0.05, 0.05);
        let a = pcm_total_effect(&inst.moments, &inst.roles, &p, &opts()).unwrap();
        let b = pcm_total_effect(&m2, &inst.roles, &p, &opts()).unwrap();
        prop_assert!((a.tau_hat - b.tau_hat).abs() < 1e-8);
    }

    #[test]
    fn penalties_never_enlarge_the_response_active_set(seed in 0u64..10_000, l in 0.001f64..0.1) {
        let inst = instance(seed, 60, 1, 4, 1, 2, 1.0);
        let r = &inst.roles;
        let pilots = PilotEstimates::fit(&inst.moments, r, 0.5, 0.5).unwrap();
        let w = adaptive_weights(&pilots, r, 1.0);
        let huge = pcm_stage1_y(&inst.moments, r, &w, 1e6, 0.2, 0.3, &opts()).unwrap();
        prop_assert!(huge.active_zbar.is_empty() && huge.active_sbar.is_empty() && !huge.active_x);
        let some = pcm_stage1_y(&inst.moments, r, &w, l, 0.2, 0.3, &opts()).unwrap();
        prop_assert!(some.active_zbar.len() <= r.zbar.len());
    }
}

#[test]
fn ridge_is_minimum_norm_on_rank_deficient_designs() {
    let inst = instance(3, 30, 1, 2, 1, 2, 1.0);
    let base = inst.data.matrix().clone();
    let last = base.ncols();
    let dup = base.column(2).into_owned();
    let mut raw = base.insert_column(last, 0.0);
    raw.set_column(last, &dup);
    let m = Moments::new(&raw);
    let coef = m.ridge(&[1], &[0, 2, last], &[0.0, 0.0, 0.0]).unwrap();
    assert!((coef[(1, 0)] - coef[(2, 0)]).abs() < 1e-8);
    let full = m.ols(&[1], &[0, 2]).unwrap();
    assert!((coef[(0, 0)] - full[(0, 0)]).abs() < 1e-8);
    assert!((coef[(1, 0)] + coef[(2, 0)] - full[(1, 0)]).abs() < 1e-8);
}
