//! TOML representation of a linear SCM.
//!
//! ```toml
//! vertices = ["Z", "X", "S", "Y"]
//! calibrate = true          # optional; rescale error variances to unit variances
//!
//! [[edges]]
//! from = "Z"
//! to = "X"
//! coef = 0.8
//!
//! [error_variances]         # optional, default 1.0 per vertex
//! Z = 1.0
//!
//! [exogenous]               # optional correlated root block
//! vertices = ["Z", "W"]
//! correlation = [[1.0, 0.3], [0.3, 1.0]]
//!
//! [roles]                   # optional, used by experiments
//! x = "X"
//! y = "Y"
//! z = ["Z"]
//! s = ["S"]
//! ```

use std::collections::BTreeMap;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use super::{CovarianceSpec, ExogenousBlock, LinearScm};
use crate::data::RoleNames;
use crate::error::{Error, Result};
use crate::graph::Dag;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EdgeEntry {
    pub from: String,
    pub to: String,
    pub coef: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExogenousEntry {
    pub vertices: Vec<String>,
    pub correlation: Vec<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScmDocument {
    pub vertices: Vec<String>,
    #[serde(default)]
    pub calibrate: bool,
    #[serde(default)]
    pub edges: Vec<EdgeEntry>,
    #[serde(default)]
    pub error_variances: BTreeMap<String, f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub exogenous: Option<ExogenousEntry>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub roles: Option<RoleNames>,
}

impl ScmDocument {
    pub fn parse(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::ConfigInvalid(format!("SCM document: {e}")))
    }

    pub fn to_toml(&self) -> String {
        toml::to_string_pretty(self).expect("SCM documents always serialize")
    }

    /// Builds the SCM (calibrated when requested) and its exogenous block.
    pub fn build(&self) -> Result<(LinearScm, Option<ExogenousBlock>)> {
        let names: Vec<&str> = self.vertices.iter().map(String::as_str).collect();
        let plain: Vec<(&str, &str)> = self
            .edges
            .iter()
            .map(|e| (e.from.as_str(), e.to.as_str()))
            .collect();
        let dag = Dag::from_named_edges(&names, &plain)?;
        let mut coefficients = BTreeMap::new();
        for e in &self.edges {
            coefficients.insert((dag.vertex(&e.from)?, dag.vertex(&e.to)?), e.coef);
        }
        let mut variances = vec![1.0; dag.len()];
        for (name, &v) in &self.error_variances {
            variances[dag.vertex(name)?] = v;
        }
        let block = match &self.exogenous {
            None => None,
            Some(ex) => {
                let q = ex.vertices.len();
                if ex.correlation.len() != q || ex.correlation.iter().any(|r| r.len() != q) {
                    return Err(Error::ConfigInvalid(
                        "exogenous correlation must be square and match its vertex list".into(),
                    ));
                }
                let flat: Vec<f64> = ex.correlation.iter().flatten().copied().collect();
                let spec = CovarianceSpec::new(DMatrix::from_row_slice(q, q, &flat))?;
                let vertices = ex
                    .vertices
                    .iter()
                    .map(|n| dag.vertex(n))
                    .collect::<Result<Vec<_>>>()?;
                Some(ExogenousBlock::new(vertices, spec)?)
            }
        };
        let scm = LinearScm::new(dag, coefficients, variances)?;
        let scm = if self.calibrate {
            scm.calibrate_unit_variance(block.as_ref())?
        } else {
            scm
        };
        Ok((scm, block))
    }

    pub fn from_scm(scm: &LinearScm, block: Option<&ExogenousBlock>, roles: Option<RoleNames>) -> Self {
        let dag = scm.dag();
        let names = dag.names().to_vec();
        let edges = scm
            .coefficients()
            .iter()
            .map(|(&(t, h), &coef)| EdgeEntry {
                from: names[t].clone(),
                to: names[h].clone(),
                coef,
            })
            .collect();
        let error_variances = names
            .iter()
            .cloned()
            .zip(scm.error_variances().iter().copied())
            .collect();
        let exogenous = block.map(|b| ExogenousEntry {
            vertices: b.vertices.iter().map(|&v| names[v].clone()).collect(),
            correlation: b
                .spec
                .matrix()
                .row_iter()
                .map(|r| r.iter().copied().collect())
                .collect(),
        });
        Self {
            vertices: names,
            calibrate: false,
            edges,
            error_variances,
            exogenous,
            roles,
        }
    }
}
