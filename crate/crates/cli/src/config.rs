//! Run configuration. Every section has defaults, so `{}` is a valid config
//! (Laplace N = 7 with `f(u) = u^2`); unknown keys are rejected.

use crate::error::CliError;
use rupture::nonlinearity::{Family, Nonlinearity};
use rupture::params::OperatorParams;
use serde::{Deserialize, Serialize};
use std::path::Path;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "preset", rename_all = "snake_case", deny_unknown_fields)]
pub enum OperatorSpec {
    Laplace {
        n: u32,
        #[serde(default)]
        sigma: f64,
    },
    PLaplace {
        n: u32,
        p: f64,
        #[serde(default)]
        sigma: f64,
    },
    KHessian {
        n: u32,
        k: u32,
    },
    Explicit {
        alpha: f64,
        beta: f64,
        gamma: f64,
    },
}

impl Default for OperatorSpec {
    fn default() -> Self {
        OperatorSpec::Laplace { n: 7, sigma: 0.0 }
    }
}

impl OperatorSpec {
    pub fn params(&self) -> rupture::Result<OperatorParams> {
        match *self {
            OperatorSpec::Laplace { n, sigma } => OperatorParams::laplace(n, sigma),
            OperatorSpec::PLaplace { n, p, sigma } => OperatorParams::p_laplace(n, p, sigma),
            OperatorSpec::KHessian { n, k } => OperatorParams::k_hessian(n, k),
            OperatorSpec::Explicit { alpha, beta, gamma } => OperatorParams::new(alpha, beta, gamma),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SolverConfig {
    pub rel_tol: f64,
    pub eps_seed: f64,
    pub r_max: f64,
    pub s_max: f64,
}

impl Default for SolverConfig {
    fn default() -> Self {
        SolverConfig { rel_tol: 1e-10, eps_seed: 1e-8, r_max: 1.0, s_max: 1e3 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RegularConfig {
    pub a: f64,
}

impl Default for RegularConfig {
    fn default() -> Self {
        RegularConfig { a: 1e-3 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LimitConfig {
    pub b: f64,
    /// Defaults to the `q` of the configured nonlinearity.
    pub q: Option<f64>,
}

impl Default for LimitConfig {
    fn default() -> Self {
        LimitConfig { b: 1.0, q: None }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EmdenSource {
    Regular,
    Singular,
    Phase,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EmdenConfig {
    pub source: EmdenSource,
    pub z0: f64,
    pub w0: f64,
    pub t_span: (f64, f64),
}

impl Default for EmdenConfig {
    fn default() -> Self {
        EmdenConfig { source: EmdenSource::Phase, z0: 1e-6, w0: 0.0, t_span: (0.0, 100.0) }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct IntersectionsConfig {
    pub a_list: Vec<f64>,
    pub rho: f64,
    /// Also count `v(., b) - v*` for the limit problem.
    pub limit: bool,
    pub b: f64,
    pub s_switch: f64,
    pub s_max: f64,
    /// Tolerance of the limit count only; the zeros past `s ~ 1e2` need more
    /// than the usual `solver.rel_tol`.
    pub limit_rel_tol: f64,
}

impl Default for IntersectionsConfig {
    fn default() -> Self {
        IntersectionsConfig {
            a_list: vec![1e-2, 1e-4, 1e-6, 1e-8],
            rho: 0.5,
            limit: true,
            b: 1.0,
            s_switch: 1e3,
            s_max: 1e8,
            limit_rel_tol: 1e-12,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ConvergeConfig {
    pub a_list: Vec<f64>,
    pub window: (f64, f64),
}

impl Default for ConvergeConfig {
    fn default() -> Self {
        ConvergeConfig { a_list: vec![1e-2, 1e-3, 1e-4, 1e-5, 1e-6], window: (0.05, 0.5) }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BifurcationConfig {
    /// Explicit grid; when absent, `tau = 1 - 10^{-k/per_decade}` for
    /// `j_min <= k/per_decade <= j_max`.
    pub tau_grid: Option<Vec<f64>>,
    pub j_min: u32,
    pub j_max: u32,
    pub per_decade: u32,
    pub refine_rounds: u32,
    pub tau_resolution: f64,
    /// Range searched for `u* = 1`.
    pub r_max: f64,
}

impl Default for BifurcationConfig {
    fn default() -> Self {
        BifurcationConfig {
            tau_grid: None,
            j_min: 1,
            j_max: 10,
            per_decade: 4,
            refine_rounds: 3,
            tau_resolution: 1e-12,
            r_max: 10.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct VerifyConfig {
    pub r_lo: f64,
    pub r_hi: f64,
    pub points: usize,
}

impl Default for VerifyConfig {
    fn default() -> Self {
        VerifyConfig { r_lo: 1e-4, r_hi: 1.0, points: 41 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub operator: OperatorSpec,
    pub nonlinearity: Family,
    pub solver: SolverConfig,
    pub regular: RegularConfig,
    pub limit: LimitConfig,
    pub emden: EmdenConfig,
    pub intersections: IntersectionsConfig,
    pub converge: ConvergeConfig,
    pub bifurcation: BifurcationConfig,
    pub verify: VerifyConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            operator: OperatorSpec::default(),
            nonlinearity: Family::Power { m: 2.0 },
            solver: SolverConfig::default(),
            regular: RegularConfig::default(),
            limit: LimitConfig::default(),
            emden: EmdenConfig::default(),
            intersections: IntersectionsConfig::default(),
            converge: ConvergeConfig::default(),
            bifurcation: BifurcationConfig::default(),
            verify: VerifyConfig::default(),
        }
    }
}

impl RunConfig {
    pub fn from_json(text: &str) -> Result<Self, CliError> {
        serde_json::from_str(text).map_err(|e| CliError::Validation(format!("config: {e}")))
    }

    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Validation(format!("cannot read config {}: {e}", path.display())))?;
        Self::from_json(&text)
    }

    /// Operator and nonlinearity, validated together.
    pub fn build(&self) -> Result<(OperatorParams, Nonlinearity), CliError> {
        let params = self.operator.params()?;
        let nl = Nonlinearity::new(self.nonlinearity, params.beta)?;
        let s = &self.solver;
        if !(s.rel_tol > 0.0 && s.eps_seed > 0.0 && s.r_max > 0.0 && s.s_max > 0.0) {
            return Err(CliError::Validation("solver settings must be positive".into()));
        }
        Ok((params, nl))
    }

    /// Applies one `--sweep` value. `a` sets the center value of every command
    /// that takes one; `tau` replaces the bifurcation grid by that single point.
    pub fn with_sweep_value(&self, key: &str, value: f64) -> Result<Self, CliError> {
        let mut c = self.clone();
        match key {
            "a" => {
                c.regular.a = value;
                c.intersections.a_list = vec![value];
                c.converge.a_list = vec![value];
            }
            "eps" => c.solver.eps_seed = value,
            "tau" => c.bifurcation.tau_grid = Some(vec![value]),
            "b" => c.limit.b = value,
            _ => return Err(CliError::Validation(format!("unknown sweep key `{key}` (expected a, tau, eps or b)"))),
        }
        Ok(c)
    }
}

/// Parses `key=v1,v2,...`.
pub fn parse_sweep(spec: &str) -> Result<(String, Vec<f64>), CliError> {
    let (key, list) = spec
        .split_once('=')
        .ok_or_else(|| CliError::Validation(format!("sweep `{spec}` must look like key=v1,v2")))?;
    let values = list
        .split(',')
        .map(|v| v.trim().parse::<f64>().map_err(|e| CliError::Validation(format!("sweep value `{v}`: {e}"))))
        .collect::<Result<Vec<f64>, CliError>>()?;
    if values.is_empty() {
        return Err(CliError::Validation("sweep list is empty".into()));
    }
    Ok((key.trim().to_string(), values))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_config_is_the_default() {
        assert_eq!(RunConfig::from_json("{}").unwrap(), RunConfig::default());
    }

    #[test]
    fn presets_and_families_parse() {
        let c = RunConfig::from_json(
            r#"{"operator": {"preset": "p_laplace", "n": 5, "p": 3},
                "nonlinearity": {"family": "power_log", "m": 3, "d": 1, "C": 0}}"#,
        )
        .unwrap();
        let (p, nl) = c.build().unwrap();
        assert_eq!((p.alpha, p.beta, p.gamma), (4.0, 2.0, 5.0));
        assert_eq!(nl.beta, 2.0);
    }

    #[test]
    fn unknown_keys_are_rejected() {
        for bad in [
            r#"{"solver": {"rtol": 1e-9}}"#,
            r#"{"operator": {"preset": "laplace", "n": 7, "dim": 3}}"#,
            r#"{"nonlinearity": {"family": "power", "m": 2, "d": 1}}"#,
            r#"{"extra": 1}"#,
        ] {
            assert!(RunConfig::from_json(bad).is_err(), "{bad}");
        }
    }

    #[test]
    fn ordering_is_validated() {
        let c = RunConfig::from_json(r#"{"operator": {"preset": "explicit", "alpha": 3, "beta": 1, "gamma": 3}}"#).unwrap();
        let e = c.build().unwrap_err();
        assert_eq!(e.exit_code(), 2);
        assert!(e.to_string().contains("gamma > alpha"));
    }

    #[test]
    fn sweep_parsing() {
        assert_eq!(parse_sweep("a=1e-2, 1e-3").unwrap(), ("a".to_string(), vec![1e-2, 1e-3]));
        assert!(parse_sweep("a").is_err());
        assert!(parse_sweep("a=x").is_err());
        assert!(RunConfig::default().with_sweep_value("zeta", 1.0).is_err());
    }
}
