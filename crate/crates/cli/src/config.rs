//! Flat key-value experiment configuration with documented defaults.
//!
//! Every run embeds its fully-resolved configuration in the output, so a
//! report is auditable without the original file.

use std::path::{Path, PathBuf};

use driftlab_core::analysis::default_h_list;
use driftlab_core::flows::{IntegratorConfig, IntegratorMethod};

use crate::CliError;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SettingName {
    Single,
    Multitask,
    Continual,
}

impl SettingName {
    pub fn as_str(&self) -> &'static str {
        match self {
            SettingName::Single => "single",
            SettingName::Multitask => "multitask",
            SettingName::Continual => "continual",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ProblemName {
    QuadraticCommuting,
    QuadraticNoncommuting,
    Mlp,
    /// 1-D pair with gradients θ−1 and θ+1; the conflict term is (θ−1)(θ+1).
    ScalarOpposing,
}

impl ProblemName {
    pub fn as_str(&self) -> &'static str {
        match self {
            ProblemName::QuadraticCommuting => "quadratic_commuting",
            ProblemName::QuadraticNoncommuting => "quadratic_noncommuting",
            ProblemName::Mlp => "mlp",
            ProblemName::ScalarOpposing => "scalar_opposing",
        }
    }
}

/// Fully-resolved run configuration. Field defaults are documented in the
/// README and echoed into every output directory.
#[derive(Debug, Clone)]
pub struct ExperimentConfig {
    pub setting: SettingName,
    pub problem: ProblemName,
    pub h_list: Vec<f64>,
    pub alpha: f64,
    pub beta: f64,
    pub include_bracket: bool,
    pub integrator: IntegratorConfig,
    pub seed: u64,
    pub out: PathBuf,
    /// Diagnostics: number of training steps.
    pub steps: usize,
    /// Diagnostics: training step size.
    pub h: f64,
    /// Quadratic problems: parameter dimension.
    pub dim: usize,
    /// Noncommuting quadratics: required commutator Frobenius norm.
    pub commutator_scale: f64,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            setting: SettingName::Single,
            problem: ProblemName::QuadraticNoncommuting,
            h_list: default_h_list(),
            alpha: 1.0,
            beta: 1.0,
            include_bracket: true,
            integrator: IntegratorConfig::default(),
            seed: 7,
            out: PathBuf::from("runs"),
            steps: 200,
            h: 0.05,
            dim: 6,
            commutator_scale: 0.1,
        }
    }
}

fn bad_key(key: &str, detail: impl std::fmt::Display) -> CliError {
    CliError::Config(format!("invalid value for config key `{key}`: {detail}"))
}

fn parse_f64(key: &str, value: &str) -> Result<f64, CliError> {
    let v: f64 = value.parse().map_err(|e| bad_key(key, e))?;
    if !v.is_finite() {
        return Err(bad_key(key, "must be finite"));
    }
    Ok(v)
}

fn parse_positive_f64(key: &str, value: &str) -> Result<f64, CliError> {
    let v = parse_f64(key, value)?;
    if v <= 0.0 {
        return Err(bad_key(key, "must be positive"));
    }
    Ok(v)
}

impl ExperimentConfig {
    /// Parses `key = value` lines; `#` starts a comment. Unknown keys and
    /// malformed values are reported with the offending key named.
    pub fn parse(text: &str) -> Result<Self, CliError> {
        let mut cfg = ExperimentConfig::default();
        for (lineno, raw) in text.lines().enumerate() {
            let line = match raw.find('#') {
                Some(idx) => &raw[..idx],
                None => raw,
            }
            .trim();
            if line.is_empty() {
                continue;
            }
            let Some((key, value)) = line.split_once('=') else {
                return Err(CliError::Config(format!(
                    "line {}: expected `key = value`, got `{line}`",
                    lineno + 1
                )));
            };
            let (key, value) = (key.trim(), value.trim());
            cfg.apply(key, value)?;
        }
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path).map_err(|e| {
            CliError::Config(format!("cannot read config file {}: {e}", path.display()))
        })?;
        Self::parse(&text)
    }

    fn apply(&mut self, key: &str, value: &str) -> Result<(), CliError> {
        match key {
            "setting" => {
                self.setting = match value {
                    "single" => SettingName::Single,
                    "multitask" => SettingName::Multitask,
                    "continual" => SettingName::Continual,
                    other => {
                        return Err(bad_key(
                            key,
                            format!("`{other}` is not one of single|multitask|continual"),
                        ))
                    }
                }
            }
            "problem" => {
                self.problem = match value {
                    "quadratic_commuting" => ProblemName::QuadraticCommuting,
                    "quadratic_noncommuting" => ProblemName::QuadraticNoncommuting,
                    "mlp" => ProblemName::Mlp,
                    "scalar_opposing" => ProblemName::ScalarOpposing,
                    other => {
                        return Err(bad_key(
                            key,
                            format!(
                                "`{other}` is not one of quadratic_commuting|\
                                 quadratic_noncommuting|mlp|scalar_opposing"
                            ),
                        ))
                    }
                }
            }
            "h_list" => {
                let hs = value
                    .split(',')
                    .map(|s| parse_positive_f64(key, s.trim()))
                    .collect::<Result<Vec<f64>, CliError>>()?;
                let mut sorted = hs.clone();
                sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());
                sorted.dedup();
                if sorted.len() < 4 {
                    return Err(bad_key(key, "needs at least 4 distinct step sizes"));
                }
                self.h_list = hs;
            }
            "alpha" => self.alpha = parse_positive_f64(key, value)?,
            "beta" => self.beta = parse_positive_f64(key, value)?,
            "include_bracket" => {
                self.include_bracket = value
                    .parse::<bool>()
                    .map_err(|_| bad_key(key, "must be true or false"))?
            }
            "integrator" => {
                self.integrator.method = match value {
                    "rk45_adaptive" => IntegratorMethod::Rk45Adaptive,
                    "rk4_fixed" => IntegratorMethod::Rk4Fixed,
                    other => {
                        return Err(bad_key(
                            key,
                            format!("`{other}` is not one of rk45_adaptive|rk4_fixed"),
                        ))
                    }
                }
            }
            "abs_tol" => self.integrator.abs_tol = parse_positive_f64(key, value)?,
            "rel_tol" => self.integrator.rel_tol = parse_positive_f64(key, value)?,
            "max_steps" => {
                self.integrator.max_steps = value.parse().map_err(|e| bad_key(key, e))?
            }
            "substeps" => self.integrator.substeps = value.parse().map_err(|e| bad_key(key, e))?,
            "seed" => self.seed = value.parse().map_err(|e| bad_key(key, e))?,
            "out" => self.out = PathBuf::from(value),
            "steps" => {
                self.steps = value.parse().map_err(|e| bad_key(key, e))?;
                if self.steps == 0 {
                    return Err(bad_key(key, "must be at least 1"));
                }
            }
            "h" => self.h = parse_positive_f64(key, value)?,
            "dim" => {
                self.dim = value.parse().map_err(|e| bad_key(key, e))?;
                if self.dim < 1 {
                    return Err(bad_key(key, "must be at least 1"));
                }
            }
            "commutator_scale" => {
                let v = parse_f64(key, value)?;
                if v < 0.0 {
                    return Err(bad_key(key, "must be nonnegative"));
                }
                self.commutator_scale = v;
            }
            other => {
                return Err(CliError::Config(format!("unknown config key `{other}`")));
            }
        }
        Ok(())
    }

    /// The resolved configuration in file syntax, fixed key order.
    pub fn resolved_text(&self) -> String {
        let method = match self.integrator.method {
            IntegratorMethod::Rk45Adaptive => "rk45_adaptive",
            IntegratorMethod::Rk4Fixed => "rk4_fixed",
        };
        let h_list = self
            .h_list
            .iter()
            .map(|h| h.to_string())
            .collect::<Vec<_>>()
            .join(",");
        format!(
            "setting = {}\nproblem = {}\nh_list = {}\nalpha = {}\nbeta = {}\n\
             include_bracket = {}\nintegrator = {}\nabs_tol = {}\nrel_tol = {}\n\
             max_steps = {}\nsubsteps = {}\nseed = {}\nsteps = {}\nh = {}\ndim = {}\n\
             commutator_scale = {}\nout = {}\n",
            self.setting.as_str(),
            self.problem.as_str(),
            h_list,
            self.alpha,
            self.beta,
            self.include_bracket,
            method,
            self.integrator.abs_tol,
            self.integrator.rel_tol,
            self.integrator.max_steps,
            self.integrator.substeps,
            self.seed,
            self.steps,
            self.h,
            self.dim,
            self.commutator_scale,
            self.out.display(),
        )
    }
}
