//! The simulation model: treatment `X`, response `Y`, a known
//! mediator `S`, five candidate mediators `Sbar1..5`, a known covariate `Z`
//! and ten candidate covariates `Zbar1..10`.

use std::collections::BTreeMap;

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{random_correlation, ExogenousBlock, LinearScm};
use crate::error::Result;
use crate::graph::Dag;

pub const N_SBAR: usize = 5;
pub const N_ZBAR: usize = 10;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Setting {
    /// `S` is front-door-like with `Z`, and `Z` is a back-door set.
    A,
    /// `{S, Sbar1}` is a front-door set; the covariates are unobserved.
    B,
}

impl std::str::FromStr for Setting {
    type Err = String;
    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "A" | "a" => Ok(Setting::A),
            "B" | "b" => Ok(Setting::B),
            other => Err(format!("unknown setting `{other}` (expected A or B)")),
        }
    }
}

/// Whether the coefficients drawn uniformly on `[-0.2, 0.2]` are drawn or
/// forced to zero (the deterministic skeleton).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RandomCoefficients {
    Drawn,
    Zeroed,
}

#[derive(Debug, Clone)]
pub struct ExperimentScm {
    pub setting: Setting,
    /// Calibrated so every variable has population variance 1.
    pub scm: LinearScm,
    /// Correlation block over `C = {Z, Zbar1..10}`.
    pub block: ExogenousBlock,
    pub tau: f64,
}

pub(crate) fn vertex_names() -> Vec<String> {
    let mut names = vec!["Z".to_string()];
    names.extend((1..=N_ZBAR).map(|i| format!("Zbar{i}")));
    names.push("X".into());
    names.push("S".into());
    names.extend((1..=N_SBAR).map(|i| format!("Sbar{i}")));
    names.push("Y".into());
    names
}

impl ExperimentScm {
    pub fn index(&self, name: &str) -> usize {
        self.scm
            .dag()
            .vertex(name)
            .expect("experiment vertex names are fixed")
    }

    pub fn covariates(&self) -> Vec<usize> {
        self.block.vertices.clone()
    }

    pub fn candidate_mediators(&self) -> Vec<usize> {
        (1..=N_SBAR).map(|i| self.index(&format!("Sbar{i}"))).collect()
    }

    pub fn candidate_covariates(&self) -> Vec<usize> {
        (1..=N_ZBAR).map(|i| self.index(&format!("Zbar{i}"))).collect()
    }

    /// Causal diagram used for criterion checks: the structural edges plus a
    /// complete DAG over the covariates, which encodes their unrestricted
    /// correlation.
    pub fn causal_diagram(&self) -> Dag {
        let dag = self.scm.dag();
        let mut edges = dag.edges();
        let c = self.covariates();
        for (i, &a) in c.iter().enumerate() {
            for &b in &c[i + 1..] {
                edges.push((a, b));
            }
        }
        Dag::new(dag.names().to_vec(), &edges).expect("covariates precede all other vertices")
    }
}

pub fn build_experiment_scm<R: Rng + ?Sized>(setting: Setting, rng: &mut R) -> Result<ExperimentScm> {
    build_experiment_scm_with(setting, rng, RandomCoefficients::Drawn)
}

/// Builds and calibrates the simulation SCM. Random draws happen in a fixed
/// order: the covariate correlation matrix, then the ten `Zbar -> Y`
/// coefficients, then `Sbar2..5 -> Y`, then (setting A only) `Sbar1 -> Y`.
pub fn build_experiment_scm_with<R: Rng + ?Sized>(
    setting: Setting,
    rng: &mut R,
    random: RandomCoefficients,
) -> Result<ExperimentScm> {
    let names = vertex_names();
    let idx = |n: &str| names.iter().position(|m| m == n).expect("known name");
    let z = idx("Z");
    let x = idx("X");
    let s = idx("S");
    let y = idx("Y");
    let sbar: Vec<usize> = (1..=N_SBAR).map(|i| idx(&format!("Sbar{i}"))).collect();
    let zbar: Vec<usize> = (1..=N_ZBAR).map(|i| idx(&format!("Zbar{i}"))).collect();

    let spec = random_correlation(1 + N_ZBAR, rng);
    let mut uniform = || match random {
        RandomCoefficients::Drawn => rng.random_range(-0.2..=0.2),
        RandomCoefficients::Zeroed => 0.0,
    };

    let mut coef: BTreeMap<(usize, usize), f64> = BTreeMap::new();
    for &zb in &zbar {
        coef.insert((zb, y), uniform());
    }
    for &sb in &sbar[1..] {
        coef.insert((sb, y), uniform());
    }
    coef.insert((s, y), 0.4);
    for &sb in &sbar {
        coef.insert((s, sb), 0.2);
    }
    match setting {
        Setting::A => {
            coef.insert((sbar[0], y), uniform());
            coef.insert((z, x), 0.8);
            coef.insert((x, s), 0.1);
            coef.insert((z, y), 0.2);
            coef.insert((z, s), 0.2);
            for &sb in &sbar {
                coef.insert((z, sb), 0.2);
            }
        }
        Setting::B => {
            coef.insert((z, x), 0.2);
            coef.insert((x, sbar[0]), 0.2);
            coef.insert((sbar[0], y), 0.2);
            coef.insert((x, s), 0.8);
        }
    }

    let edges: Vec<(usize, usize)> = coef.keys().copied().collect();
    let dag = Dag::new(names.clone(), &edges)?;
    let raw = LinearScm::new(dag, coef, vec![1.0; names.len()])?;
    let mut covariates = vec![z];
    covariates.extend(&zbar);
    let block = ExogenousBlock::new(covariates, spec)?;
    let scm = raw.calibrate_unit_variance(Some(&block))?;
    let tau = scm.true_total_effect(x, y)?;
    Ok(ExperimentScm {
        setting,
        scm,
        block,
        tau,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn skeleton_setting_b_tau() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let e = build_experiment_scm_with(Setting::B, &mut rng, RandomCoefficients::Zeroed).unwrap();
        assert!((e.tau - 0.392).abs() < 1e-12);
    }

    #[test]
    fn setting_a_calibrates_to_unit_variance() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let e = build_experiment_scm(Setting::A, &mut rng).unwrap();
        let sigma = e.scm.population_covariance(Some(&e.block)).unwrap();
        for i in 0..sigma.nrows() {
            assert!((sigma[(i, i)] - 1.0).abs() < 1e-10);
        }
        assert_eq!(e.scm.len(), 19);
    }
}
