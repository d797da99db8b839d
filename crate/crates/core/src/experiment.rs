//! Monte Carlo experiments: repeated sampling from a linear SCM, estimation
//! by every configured method, and per-method summary statistics.
//!
//! Configuration is TOML:
//!
//! ```toml
//! setting = "A"             # "A" or "B"; or scm = "model.toml" with [roles]
//! n = 15
//! replications = 1000
//! seed = 2025
//! output = "results"        # directory for summary.csv and estimates.csv
//! workers = 4               # optional; defaults to $PCM_WORKERS, then all cores
//!
//! [[methods]]
//! name = "pcm"
//! params = { lambda1 = 0.02 }   # optional overrides of the preset
//!
//! [[methods]]
//! name = "lasso"
//! cv = true                 # choose parameters by cross-validation per replication
//! grid = "grid.toml"        # optional; default grid otherwise
//! ```
//!
//! The experiment SCM is built from generator stream 0 of the master seed and
//! replication `r` (numbered from 1) samples from stream `r`, so results do
//! not depend on the number of workers.

use std::collections::BTreeMap;
use std::fs;
use std::io::{Read, Write};
use std::path::{Path, PathBuf};

use nalgebra::DMatrix;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::{Dataset, RoleNames, RolePartition};
use crate::error::{Error, Result};
use crate::estimators::{sign, CdOptions, Moments};
use crate::graph::{Dag, VertexSet, DEFAULT_SEARCH_BUDGET};
use crate::methods::{self, preset, Method, MethodContext, MethodParams};
use crate::scm::{build_experiment_scm, ExogenousBlock, LinearScm, ScmDocument, Setting};
use crate::tuning::{cross_validate, ParamGrid};

/// Environment variable holding the default worker count.
pub const WORKERS_ENV: &str = "PCM_WORKERS";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MethodSpec {
    pub name: Method,
    #[serde(default)]
    pub params: toml::Table,
    #[serde(default)]
    pub cv: bool,
    pub grid: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub setting: Option<Setting>,
    pub scm: Option<PathBuf>,
    pub n: usize,
    pub replications: usize,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_output")]
    pub output: PathBuf,
    pub workers: Option<usize>,
    pub methods: Vec<MethodSpec>,
}

fn default_output() -> PathBuf {
    PathBuf::from("results")
}

impl ExperimentConfig {
    /// Parses a config; relative paths are resolved against `base`.
    pub fn parse(text: &str, base: Option<&Path>) -> Result<Self> {
        let mut cfg: Self =
            toml::from_str(text).map_err(|e| Error::ConfigInvalid(format!("experiment config: {e}")))?;
        if let Some(base) = base {
            let fix = |p: &mut PathBuf| {
                if p.is_relative() {
                    *p = base.join(&*p);
                }
            };
            if let Some(p) = cfg.scm.as_mut() {
                fix(p);
            }
            fix(&mut cfg.output);
            for m in &mut cfg.methods {
                if let Some(g) = m.grid.as_mut() {
                    fix(g);
                }
            }
        }
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path)?;
        Self::parse(&text, path.parent())
    }

    /// Preset config with every method reported for a setting.
    pub fn study(setting: Setting, n: usize, replications: usize, seed: u64) -> Self {
        Self {
            setting: Some(setting),
            scm: None,
            n,
            replications,
            seed,
            output: default_output(),
            workers: None,
            methods: Method::table_rows(setting)
                .into_iter()
                .map(|name| MethodSpec {
                    name,
                    params: toml::Table::new(),
                    cv: false,
                    grid: None,
                })
                .collect(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::ConfigInvalid(m));
        match (&self.setting, &self.scm) {
            (Some(_), Some(_)) => return bad("give either `setting` or `scm`, not both".into()),
            (None, None) => return bad("one of `setting` or `scm` is required".into()),
            _ => {}
        }
        if self.n < 3 {
            return bad(format!("n = {} must be at least 3", self.n));
        }
        if self.replications < 1 {
            return bad("replications must be at least 1".into());
        }
        if self.workers == Some(0) {
            return bad("workers must be at least 1".into());
        }
        if self.methods.is_empty() {
            return bad("no methods configured".into());
        }
        let mut seen = std::collections::BTreeSet::new();
        for m in &self.methods {
            if !seen.insert(m.name) {
                return bad(format!("method {} listed twice", m.name));
            }
            if self.setting == Some(Setting::B) && m.name.needs_covariates() {
                return bad(format!(
                    "{} needs the covariates, which are unobserved in setting B",
                    m.name
                ));
            }
            if m.cv && !m.name.is_tunable() {
                return bad(format!("{} has no parameters to cross-validate", m.name));
            }
            if m.cv && !m.params.is_empty() {
                return bad(format!("{}: give either `params` or `cv`", m.name));
            }
        }
        Ok(())
    }
}

/// Worker count: the explicit value, then `$PCM_WORKERS`, then the number of
/// available cores.
pub fn resolve_workers(explicit: Option<usize>) -> Result<usize> {
    if let Some(w) = explicit {
        return Ok(w.max(1));
    }
    if let Ok(v) = std::env::var(WORKERS_ENV) {
        return match v.trim().parse::<usize>() {
            Ok(w) if w > 0 => Ok(w),
            _ => Err(Error::ConfigInvalid(format!("{WORKERS_ENV} = `{v}` is not a positive integer"))),
        };
    }
    Ok(std::thread::available_parallelism().map_or(1, |n| n.get()))
}

/// The data-generating model of an experiment and how its columns are used.
#[derive(Debug, Clone)]
pub struct ExperimentModel {
    pub scm: LinearScm,
    pub block: Option<ExogenousBlock>,
    /// Causal diagram over all vertices, for criterion searches.
    pub diagram: Dag,
    /// SCM vertices kept as dataset columns, in order.
    pub observed: Vec<usize>,
    pub names: Vec<String>,
    pub roles: RolePartition,
    pub tau: f64,
    /// Setting whose presets apply.
    pub presets: Setting,
}

impl ExperimentModel {
    pub fn build(config: &ExperimentConfig) -> Result<Self> {
        if let Some(setting) = config.setting {
            let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
            let e = build_experiment_scm(setting, &mut rng)?;
            let all = e.scm.dag().names().to_vec();
            let c = e.covariates();
            let observed: Vec<usize> = match setting {
                Setting::A => (0..all.len()).collect(),
                Setting::B => (0..all.len()).filter(|v| !c.contains(v)).collect(),
            };
            let names: Vec<String> = observed.iter().map(|&v| all[v].clone()).collect();
            let name = |v: usize| all[v].clone();
            let role_names = RoleNames {
                x: "X".into(),
                y: "Y".into(),
                z: match setting {
                    Setting::A => vec!["Z".into()],
                    Setting::B => vec![],
                },
                zbar: match setting {
                    Setting::A => e.candidate_covariates().into_iter().map(name).collect(),
                    Setting::B => vec![],
                },
                s: vec!["S".into()],
                sbar: e.candidate_mediators().into_iter().map(name).collect(),
            };
            let roles = role_names.resolve(&names)?;
            Ok(Self {
                diagram: e.causal_diagram(),
                scm: e.scm,
                block: Some(e.block),
                observed,
                names,
                roles,
                tau: e.tau,
                presets: setting,
            })
        } else {
            let path = config.scm.as_ref().expect("validated config");
            let doc = ScmDocument::parse(&fs::read_to_string(path)?)?;
            let role_names = doc
                .roles
                .clone()
                .ok_or_else(|| Error::ConfigInvalid("custom SCM needs a [roles] table".into()))?;
            let (scm, block) = doc.build()?;
            let names = scm.dag().names().to_vec();
            let roles = role_names.resolve(&names)?;
            let tau = scm.true_total_effect(roles.x, roles.y)?;
            Ok(Self {
                diagram: scm.dag().clone(),
                observed: (0..names.len()).collect(),
                scm,
                block,
                names,
                roles,
                tau,
                presets: Setting::A,
            })
        }
    }

    /// Smallest mediator set satisfying the front-door-like criterion in the
    /// causal diagram, as dataset columns.
    pub fn minimal_mediators(&self) -> Result<Vec<usize>> {
        let to_scm = |c: usize| self.observed[c];
        let candidate_z: VertexSet = self.roles.c().into_iter().map(to_scm).collect();
        let sets = self.diagram.minimal_mediator_sets(
            to_scm(self.roles.x),
            to_scm(self.roles.y),
            &candidate_z,
            DEFAULT_SEARCH_BUDGET,
        )?;
        let best = sets
            .iter()
            .filter(|s| s.z1.is_empty() && s.z2.is_empty())
            .min_by_key(|s| s.mediators.len())
            .ok_or_else(|| Error::ConfigInvalid("no front-door mediator set without covariates".into()))?;
        best.mediators
            .iter()
            .map(|v| {
                self.observed
                    .iter()
                    .position(|o| o == v)
                    .ok_or_else(|| Error::UnknownVertex(self.diagram.name(*v).to_string()))
            })
            .collect()
    }

    /// `n` raw observations of the observed columns from generator stream
    /// `stream`.
    pub fn sample_raw(&self, n: usize, seed: u64, stream: u64) -> Result<DMatrix<f64>> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(stream);
        let raw = self.scm.sample(self.block.as_ref(), n, &mut rng)?;
        Ok(raw.select_columns(&self.observed))
    }

    pub fn sample(&self, n: usize, seed: u64, stream: u64) -> Result<Dataset> {
        Dataset::from_raw(self.names.clone(), &self.sample_raw(n, seed, stream)?)
    }
}

/// Mean, standard deviation (`1/(N-1)`), bias and sign-agreement rate.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Summary {
    pub mean: f64,
    pub sd: f64,
    pub bias: f64,
    pub sign: f64,
}

pub fn summarize(estimates: &[f64], true_tau: f64) -> Result<Summary> {
    if estimates.is_empty() {
        return Err(Error::EmptyInput);
    }
    let n = estimates.len() as f64;
    let mean = estimates.iter().sum::<f64>() / n;
    let sd = if estimates.len() > 1 {
        (estimates.iter().map(|e| (e - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
    } else {
        0.0
    };
    let hits = estimates.iter().filter(|&&e| sign(e) == sign(true_tau)).count();
    Ok(Summary {
        mean,
        sd,
        bias: mean - true_tau,
        sign: hits as f64 / n,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct SummaryRow {
    pub method: Method,
    /// `None` when every replication failed.
    pub stats: Option<Summary>,
    pub failures: usize,
    pub params: String,
}

/// Results of a Monte Carlo run. `estimates[r][k]` is the estimate of method
/// `k` in replication `r + 1`; failed fits are NaN.
#[derive(Debug, Clone)]
pub struct ExperimentResult {
    pub tau: f64,
    pub methods: Vec<Method>,
    pub estimates: Vec<Vec<f64>>,
    pub summary: Vec<SummaryRow>,
}

struct Prepared {
    method: Method,
    params: Option<MethodParams>,
    grid: Option<ParamGrid>,
}

fn prepare(config: &ExperimentConfig, model: &ExperimentModel) -> Result<Vec<Prepared>> {
    config
        .methods
        .iter()
        .map(|spec| {
            if spec.name.needs_covariates() && model.roles.c().is_empty() {
                return Err(Error::ConfigInvalid(format!("{} needs covariates", spec.name)));
            }
            if spec.cv {
                let grid = match &spec.grid {
                    Some(p) => ParamGrid::parse(&fs::read_to_string(p)?)?,
                    None => ParamGrid::default(),
                };
                grid.validate()?;
                Ok(Prepared { method: spec.name, params: None, grid: Some(grid) })
            } else {
                let params = preset(spec.name, model.presets).with_overrides(&spec.params, spec.name)?;
                Ok(Prepared { method: spec.name, params: Some(params), grid: None })
            }
        })
        .collect()
}

fn params_label(p: &Prepared) -> String {
    match &p.params {
        Some(params) => params.summary(),
        None => "cv".into(),
    }
}

/// Runs the experiment on a pool of `workers` threads.
pub fn run_monte_carlo(config: &ExperimentConfig, workers: usize) -> Result<ExperimentResult> {
    config.validate()?;
    let model = ExperimentModel::build(config)?;
    let prepared = prepare(config, &model)?;
    let needs_minimal = prepared.iter().any(|p| {
        p.method == Method::FrontDoorMinimal
            && matches!(&p.params, Some(MethodParams::Mediators(m)) if m.mediators.is_none())
    });
    let minimal = if needs_minimal { Some(model.minimal_mediators()?) } else { None };
    let options = CdOptions::default();
    let ctx = MethodContext {
        names: &model.names,
        minimal_mediators: minimal.as_deref(),
    };

    let replicate = |r: usize| -> Vec<f64> {
        let data = match model.sample(config.n, config.seed, r as u64) {
            Ok(d) => d,
            Err(_) => return vec![f64::NAN; prepared.len()],
        };
        let moments = Moments::new(data.matrix());
        prepared
            .iter()
            .map(|p| {
                let params = match (&p.params, &p.grid) {
                    (Some(params), _) => Ok(params.clone()),
                    (None, Some(grid)) => {
                        cross_validate(&data, &model.roles, p.method, grid, &options).map(|c| c.params)
                    }
                    (None, None) => unreachable!("prepared methods carry params or a grid"),
                };
                params
                    .and_then(|params| methods::estimate(p.method, &params, &moments, &model.roles, &ctx, &options))
                    .ok()
                    .filter(|e| e.is_finite())
                    .unwrap_or(f64::NAN)
            })
            .collect()
    };

    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers.max(1))
        .build()
        .map_err(|e| Error::ConfigInvalid(format!("worker pool: {e}")))?;
    let estimates: Vec<Vec<f64>> =
        pool.install(|| (1..=config.replications).into_par_iter().map(replicate).collect());

    let methods: Vec<Method> = prepared.iter().map(|p| p.method).collect();
    let labels: Vec<String> = prepared.iter().map(params_label).collect();
    let columns: Vec<Vec<f64>> = (0..methods.len())
        .map(|k| estimates.iter().map(|row| row[k]).collect())
        .collect();
    let summary = summary_rows(&methods, &columns, &labels, model.tau);
    Ok(ExperimentResult {
        tau: model.tau,
        methods,
        estimates,
        summary,
    })
}

fn summary_rows(methods: &[Method], columns: &[Vec<f64>], labels: &[String], tau: f64) -> Vec<SummaryRow> {
    methods
        .iter()
        .zip(columns)
        .zip(labels)
        .map(|((&method, col), label)| {
            let ok: Vec<f64> = col.iter().copied().filter(|e| e.is_finite()).collect();
            SummaryRow {
                method,
                stats: summarize(&ok, tau).ok(),
                failures: col.len() - ok.len(),
                params: label.clone(),
            }
        })
        .collect()
}

fn csv_error(e: csv::Error) -> Error {
    let line = e.position().map_or(0, |p| p.line() as usize);
    Error::Parse {
        line,
        message: e.to_string(),
    }
}

pub fn write_estimates<W: Write>(writer: W, result: &ExperimentResult) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(["replication", "method", "estimate"]).map_err(csv_error)?;
    for (r, row) in result.estimates.iter().enumerate() {
        for (m, e) in result.methods.iter().zip(row) {
            w.write_record([(r + 1).to_string(), m.name().to_string(), e.to_string()])
                .map_err(csv_error)?;
        }
    }
    w.flush()?;
    Ok(())
}

pub fn write_summary<W: Write>(writer: W, rows: &[SummaryRow]) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(["method", "mean", "sd", "bias", "sign", "failures", "params"])
        .map_err(csv_error)?;
    for row in rows {
        let s = row.stats.unwrap_or(Summary {
            mean: f64::NAN,
            sd: f64::NAN,
            bias: f64::NAN,
            sign: f64::NAN,
        });
        w.write_record([
            row.method.name().to_string(),
            s.mean.to_string(),
            s.sd.to_string(),
            s.bias.to_string(),
            s.sign.to_string(),
            row.failures.to_string(),
            row.params.clone(),
        ])
        .map_err(csv_error)?;
    }
    w.flush()?;
    Ok(())
}

#[derive(Debug, Deserialize)]
struct EstimateRecord {
    #[allow(dead_code)]
    replication: usize,
    method: String,
    estimate: f64,
}

/// Rebuilds summary rows from an estimates table. Methods appear in order of
/// first occurrence; `params` maps method names to their parameter labels.
pub fn summarize_estimates<R: Read>(
    reader: R,
    tau: f64,
    params: &BTreeMap<String, String>,
) -> Result<Vec<SummaryRow>> {
    let mut rdr = csv::Reader::from_reader(reader);
    let mut methods: Vec<Method> = Vec::new();
    let mut columns: Vec<Vec<f64>> = Vec::new();
    for rec in rdr.deserialize::<EstimateRecord>() {
        let rec = rec.map_err(csv_error)?;
        let m: Method = rec.method.parse()?;
        let k = match methods.iter().position(|&x| x == m) {
            Some(k) => k,
            None => {
                methods.push(m);
                columns.push(Vec::new());
                methods.len() - 1
            }
        };
        columns[k].push(rec.estimate);
    }
    let labels: Vec<String> = methods
        .iter()
        .map(|m| params.get(m.name()).cloned().unwrap_or_default())
        .collect();
    Ok(summary_rows(&methods, &columns, &labels, tau))
}

/// Writes `summary.csv`, `estimates.csv` and `run.toml` (true effect and run
/// settings) into `dir`.
pub fn write_outputs(dir: &Path, config: &ExperimentConfig, result: &ExperimentResult) -> Result<()> {
    fs::create_dir_all(dir)?;
    write_summary(fs::File::create(dir.join("summary.csv"))?, &result.summary)?;
    write_estimates(fs::File::create(dir.join("estimates.csv"))?, result)?;
    let mut run = toml::Table::new();
    run.insert("tau".into(), toml::Value::Float(result.tau));
    run.insert("n".into(), toml::Value::Integer(config.n as i64));
    run.insert("replications".into(), toml::Value::Integer(config.replications as i64));
    run.insert("seed".into(), toml::Value::Integer(config.seed as i64));
    fs::write(dir.join("run.toml"), toml::to_string(&run).expect("plain table"))?;
    Ok(())
}
