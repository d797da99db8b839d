//! The estimation methods of the simulation study, their parameters and a single dispatch
//! point used by the CLI, the tuning code and the Monte Carlo harness.

use std::fmt;
use std::str::FromStr;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::data::RolePartition;
use crate::error::{Error, Result};
use crate::estimators::{self, CdOptions, Moments, PcmParams};
use crate::scm::Setting;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    Lasso,
    AdaptiveLasso,
    ElasticNet,
    Pal1ma,
    Pcm,
    /// Front-door-like with `S` and `C`, `x` in the second regression.
    FrontDoorLikeX,
    /// Front-door-like with `S` and `C`, `x` left out of the second
    /// regression.
    FrontDoorLike,
    Backdoor,
    FrontDoorMinimal,
    FrontDoorWhole,
}

impl Method {
    pub const ALL: [Method; 10] = [
        Method::Lasso,
        Method::AdaptiveLasso,
        Method::ElasticNet,
        Method::Pal1ma,
        Method::Pcm,
        Method::FrontDoorLikeX,
        Method::FrontDoorLike,
        Method::Backdoor,
        Method::FrontDoorMinimal,
        Method::FrontDoorWhole,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Method::Lasso => "lasso",
            Method::AdaptiveLasso => "adaptive_lasso",
            Method::ElasticNet => "elastic_net",
            Method::Pal1ma => "pal1ma",
            Method::Pcm => "pcm",
            Method::FrontDoorLikeX => "front_door_like_x",
            Method::FrontDoorLike => "front_door_like",
            Method::Backdoor => "backdoor",
            Method::FrontDoorMinimal => "front_door_minimal",
            Method::FrontDoorWhole => "front_door_whole",
        }
    }

    /// Row label used in summaries.
    pub fn label(self) -> &'static str {
        match self {
            Method::Lasso => "LASSO",
            Method::AdaptiveLasso => "adaptive LASSO",
            Method::ElasticNet => "Elastic Net",
            Method::Pal1ma => "PAL1MA",
            Method::Pcm => "PCM Selector",
            Method::FrontDoorLikeX => "Front-door-like (including x)",
            Method::FrontDoorLike => "Front-door-like (not including x)",
            Method::Backdoor => "Back-door",
            Method::FrontDoorMinimal => "Front-door (minimal)",
            Method::FrontDoorWhole => "Front-door (whole)",
        }
    }

    /// Methods that regress on the covariates `C` and so need them observed.
    pub fn needs_covariates(self) -> bool {
        matches!(
            self,
            Method::Lasso
                | Method::AdaptiveLasso
                | Method::ElasticNet
                | Method::Pal1ma
                | Method::Backdoor
                | Method::FrontDoorLikeX
                | Method::FrontDoorLike
        )
    }

    pub fn is_tunable(self) -> bool {
        matches!(
            self,
            Method::Lasso | Method::AdaptiveLasso | Method::ElasticNet | Method::Pal1ma | Method::Pcm
        )
    }

    /// Methods reported for a setting, in reporting order.
    pub fn table_rows(setting: Setting) -> Vec<Method> {
        match setting {
            Setting::A => vec![
                Method::Lasso,
                Method::AdaptiveLasso,
                Method::ElasticNet,
                Method::Pal1ma,
                Method::Pcm,
                Method::FrontDoorLikeX,
                Method::FrontDoorLike,
                Method::Backdoor,
            ],
            Setting::B => vec![Method::Pcm, Method::FrontDoorMinimal, Method::FrontDoorWhole],
        }
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Method {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        Method::ALL
            .into_iter()
            .find(|m| m.name() == s)
            .ok_or_else(|| {
                let known: Vec<&str> = Method::ALL.iter().map(|m| m.name()).collect();
                Error::ConfigInvalid(format!("unknown method `{s}` (known: {})", known.join(", ")))
            })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LassoParams {
    pub lambda: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AdaptiveParams {
    pub lambda: f64,
    pub eta: f64,
    pub pilot_lambda: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ElasticNetParams {
    pub lambda: f64,
    pub phi: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MediatorParams {
    /// Explicit mediator names; when absent the set is derived from the
    /// roles (whole) or from a causal diagram (minimal).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mediators: Option<Vec<String>>,
}

/// Parameters of one method.
#[derive(Debug, Clone, PartialEq)]
pub enum MethodParams {
    Lasso(LassoParams),
    AdaptiveLasso(AdaptiveParams),
    ElasticNet(ElasticNetParams),
    Pal1ma(AdaptiveParams),
    Pcm(PcmParams),
    Mediators(MediatorParams),
    None,
}

/// Debiasing penalties shipped with the presets (not part of the published settings).
pub const PRESET_LAMBDA2: f64 = 0.1;
pub const PRESET_XI2: f64 = 0.5;
pub const PRESET_RHO2: f64 = 0.1;
pub const PRESET_RHO2_PRIME: f64 = 0.1;

/// Published parameter values (setting B has no covariates, so only the
/// PCM row carries parameters there).
pub fn preset(method: Method, setting: Setting) -> MethodParams {
    let pcm = |pilot_lambda, pilot_rho, lambda1, rho1, zeta1, xi1| PcmParams {
        pilot_lambda,
        pilot_rho,
        lambda1,
        rho1,
        zeta1,
        xi1,
        lambda2: PRESET_LAMBDA2,
        xi2: PRESET_XI2,
        rho2: PRESET_RHO2,
        rho2_prime: PRESET_RHO2_PRIME,
        weight_exponent: 1.0,
    };
    match (method, setting) {
        (Method::Lasso, _) => MethodParams::Lasso(LassoParams { lambda: 0.407 }),
        (Method::AdaptiveLasso, _) => MethodParams::AdaptiveLasso(AdaptiveParams {
            lambda: 0.407,
            eta: 0.1,
            pilot_lambda: 3.157,
        }),
        (Method::ElasticNet, _) => MethodParams::ElasticNet(ElasticNetParams {
            lambda: 0.399,
            phi: 0.91,
        }),
        (Method::Pal1ma, _) => MethodParams::Pal1ma(AdaptiveParams {
            lambda: 0.294,
            eta: 1.2,
            pilot_lambda: 3.157,
        }),
        (Method::Pcm, Setting::A) => MethodParams::Pcm(pcm(3.157, 69.484, 0.017, 0.213, 0.270, 0.190)),
        (Method::Pcm, Setting::B) => MethodParams::Pcm(pcm(3.157, 3.726, 0.346, 0.0, 0.0, 1.0)),
        (Method::FrontDoorMinimal | Method::FrontDoorWhole, _) => {
            MethodParams::Mediators(MediatorParams::default())
        }
        _ => MethodParams::None,
    }
}

fn as_table<T: Serialize>(v: &T) -> toml::Table {
    toml::Table::try_from(v).expect("parameter structs serialize to tables")
}

fn overlay<T: Serialize + DeserializeOwned>(base: &T, over: &toml::Table, method: Method) -> Result<T> {
    let mut table = as_table(base);
    for (k, v) in over {
        table.insert(k.clone(), v.clone());
    }
    table
        .try_into()
        .map_err(|e| Error::ConfigInvalid(format!("parameters for {method}: {e}")))
}

impl MethodParams {
    pub fn to_table(&self) -> toml::Table {
        match self {
            MethodParams::Lasso(p) => as_table(p),
            MethodParams::AdaptiveLasso(p) | MethodParams::Pal1ma(p) => as_table(p),
            MethodParams::ElasticNet(p) => as_table(p),
            MethodParams::Pcm(p) => as_table(p),
            MethodParams::Mediators(p) => as_table(p),
            MethodParams::None => toml::Table::new(),
        }
    }

    /// Replaces fields named in `over`, rejecting unknown names.
    pub fn with_overrides(&self, over: &toml::Table, method: Method) -> Result<Self> {
        if over.is_empty() {
            return Ok(self.clone());
        }
        Ok(match self {
            MethodParams::Lasso(p) => MethodParams::Lasso(overlay(p, over, method)?),
            MethodParams::AdaptiveLasso(p) => MethodParams::AdaptiveLasso(overlay(p, over, method)?),
            MethodParams::ElasticNet(p) => MethodParams::ElasticNet(overlay(p, over, method)?),
            MethodParams::Pal1ma(p) => MethodParams::Pal1ma(overlay(p, over, method)?),
            MethodParams::Pcm(p) => MethodParams::Pcm(overlay(p, over, method)?),
            MethodParams::Mediators(p) => MethodParams::Mediators(overlay(p, over, method)?),
            MethodParams::None => {
                return Err(Error::ConfigInvalid(format!("{method} takes no parameters")));
            }
        })
    }

    /// `key=value` pairs joined by `;`, keys sorted.
    pub fn summary(&self) -> String {
        self.to_table()
            .iter()
            .map(|(k, v)| match v {
                toml::Value::Array(a) => {
                    let items: Vec<String> = a
                        .iter()
                        .map(|i| i.as_str().map(str::to_string).unwrap_or_else(|| i.to_string()))
                        .collect();
                    format!("{k}={}", items.join("+"))
                }
                other => format!("{k}={other}"),
            })
            .collect::<Vec<_>>()
            .join(";")
    }
}

/// Resolves mediator names to columns.
fn resolve_names(names: &[String], wanted: &[String]) -> Result<Vec<usize>> {
    wanted
        .iter()
        .map(|w| {
            names
                .iter()
                .position(|n| n == w)
                .ok_or_else(|| Error::UnknownVertex(w.clone()))
        })
        .collect()
}

/// Context a method may need beyond the moments and roles.
#[derive(Debug, Clone, Default)]
pub struct MethodContext<'a> {
    pub names: &'a [String],
    /// Minimal mediator set found from a causal diagram, if any.
    pub minimal_mediators: Option<&'a [usize]>,
}

/// Total-effect estimate of `method` on the data summarized by `moments`.
pub fn estimate(
    method: Method,
    params: &MethodParams,
    moments: &Moments,
    roles: &RolePartition,
    ctx: &MethodContext<'_>,
    options: &CdOptions,
) -> Result<f64> {
    let c = roles.c();
    let mismatch = || Error::InvalidParameter(format!("parameters do not belong to {method}"));
    match (method, params) {
        (Method::Lasso, MethodParams::Lasso(p)) => {
            Ok(estimators::lasso(moments, roles, p.lambda, options)?.estimate)
        }
        (Method::AdaptiveLasso, MethodParams::AdaptiveLasso(p)) => Ok(estimators::adaptive_lasso(
            moments,
            roles,
            p.lambda,
            p.eta,
            p.pilot_lambda,
            options,
        )?
        .estimate),
        (Method::ElasticNet, MethodParams::ElasticNet(p)) => {
            Ok(estimators::elastic_net(moments, roles, p.lambda, p.phi, options)?.estimate)
        }
        (Method::Pal1ma, MethodParams::Pal1ma(p)) => Ok(estimators::pal1ma(
            moments,
            roles,
            p.lambda,
            p.eta,
            p.pilot_lambda,
            options,
        )?
        .estimate),
        (Method::Pcm, MethodParams::Pcm(p)) => {
            Ok(estimators::pcm_total_effect(moments, roles, p, options)?.tau_hat)
        }
        (Method::Backdoor, _) => estimators::back_door_estimate(moments, roles.x, roles.y, &c),
        (Method::FrontDoorLikeX, _) | (Method::FrontDoorLike, _) => {
            estimators::front_door_like_estimate(
                moments,
                roles.x,
                roles.y,
                &roles.s,
                &c,
                &c,
                method == Method::FrontDoorLikeX,
            )
        }
        (Method::FrontDoorWhole, MethodParams::Mediators(p)) => {
            let m = match &p.mediators {
                Some(list) => resolve_names(ctx.names, list)?,
                None => roles.m(),
            };
            estimators::front_door_like_estimate(moments, roles.x, roles.y, &m, &[], &[], true)
        }
        (Method::FrontDoorMinimal, MethodParams::Mediators(p)) => {
            let m = match (&p.mediators, ctx.minimal_mediators) {
                (Some(list), _) => resolve_names(ctx.names, list)?,
                (None, Some(found)) => found.to_vec(),
                (None, None) => {
                    return Err(Error::ConfigInvalid(
                        "front_door_minimal needs a mediator list or a causal diagram".into(),
                    ))
                }
            };
            estimators::front_door_like_estimate(moments, roles.x, roles.y, &m, &[], &[], true)
        }
        _ => Err(mismatch()),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn names_round_trip() {
        for m in Method::ALL {
            assert_eq!(m.name().parse::<Method>().unwrap(), m);
        }
        assert!("ols".parse::<Method>().is_err());
    }

    #[test]
    fn overrides_replace_fields_and_reject_typos() {
        let base = preset(Method::Lasso, Setting::A);
        let mut over = toml::Table::new();
        over.insert("lambda".into(), toml::Value::Float(0.5));
        let p = base.with_overrides(&over, Method::Lasso).unwrap();
        assert_eq!(p, MethodParams::Lasso(LassoParams { lambda: 0.5 }));
        over.insert("lamda".into(), toml::Value::Float(0.5));
        assert!(base.with_overrides(&over, Method::Lasso).is_err());
    }

    #[test]
    fn summary_is_sorted_key_value() {
        let p = preset(Method::ElasticNet, Setting::A);
        assert_eq!(p.summary(), "lambda=0.399;phi=0.91");
    }

    #[test]
    fn setting_b_rows_avoid_covariates() {
        assert!(Method::table_rows(Setting::B).iter().all(|m| !m.needs_covariates()));
        assert_eq!(Method::table_rows(Setting::A).len(), 8);
    }
}
