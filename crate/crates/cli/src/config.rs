//! Experiment configuration: a TOML file with `[model]`, `[problem]`,
//! `[run]` and optional `[gamma]` / `[verify]` sections.

use std::path::Path;

use iit_core::{FullParams, FullState, HorizonMode, ProblemSpec, ReducedParams, SystemSpec};
use serde::{Deserialize, Serialize};

use crate::CliError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub model: ModelConfig,
    pub problem: ProblemConfig,
    #[serde(default)]
    pub run: RunConfig,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gamma: Option<GammaConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub verify: Option<VerifyConfig>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ModelConfig {
    Reduced(ReducedModel),
    Full(FullModel),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ReducedModel {
    pub b1_0: f64,
    pub b2_0: f64,
    pub d1: f64,
    pub d2: f64,
    pub k: f64,
    pub s_h: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FullModel {
    pub b1: f64,
    pub b2: f64,
    pub d1: f64,
    pub d2: f64,
    pub k: f64,
    pub s_h: f64,
}

impl ReducedModel {
    pub fn params(&self) -> Result<ReducedParams<f64>, CliError> {
        Ok(ReducedParams::new(self.b1_0, self.b2_0, self.d1, self.d2, self.k, self.s_h)?)
    }
}

impl FullModel {
    pub fn params(&self) -> Result<FullParams<f64>, CliError> {
        Ok(FullParams::new(self.b1, self.b2, self.d1, self.d2, self.k, self.s_h)?)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    Fixed,
    Free,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProblemConfig {
    pub mode: Mode,
    /// Horizon for `fixed` mode.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub horizon: Option<f64>,
    /// Starting horizon for `free` mode.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub initial_guess: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub alpha: Option<f64>,
    /// Release bound `M`.
    pub bound: f64,
    pub intervals: usize,
    pub penalty_eps: f64,
    /// Initial proportion (reduced model).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub p0: Option<f64>,
    /// Initial `[n1, n2]` (full model); defaults to the wild equilibrium.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub initial: Option<[f64; 2]>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub n1_max: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub n2_margin: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub out_dir: Option<String>,
    pub seed: u64,
    pub max_iters: usize,
    pub tol: f64,
    /// Multi-start levels as fractions of `M`.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub starts: Option<Vec<f64>>,
    /// Jitter of the starting controls, as a fraction of `M`.
    pub jitter: f64,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            out_dir: None,
            seed: 0,
            max_iters: 5000,
            tol: 1e-6,
            starts: None,
            jitter: 0.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GammaControl {
    /// The bang-bang optimum starting at `xi`.
    Optimal,
    Zero,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GammaConfig {
    pub eps: Vec<f64>,
    pub control: GammaControl,
    pub xi: f64,
    /// Full-model template; its birth rates are replaced by `b_0 / eps`.
    /// Defaults to the reduced model's `d1`, `d2`, `K`, `s_h`.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub full: Option<FullModel>,
}

impl Default for GammaConfig {
    fn default() -> Self {
        Self {
            eps: vec![0.1, 0.05, 0.025, 0.0125],
            control: GammaControl::Optimal,
            xi: 0.0,
            full: None,
        }
    }
}

/// How the certificate picks `q(T)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum TerminalCostate {
    Value(f64),
    Rule(CostateRule),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CostateRule {
    /// Minimize the largest violation over `q(T)`.
    Fit,
    /// Gradient of the terminal penalty, `2 (theta - p(T))+ / eps`.
    Penalty,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct VerifyConfig {
    pub tau: f64,
    /// Defaults to `penalty` for solver reports and `fit` for the analytic
    /// policy.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub q_terminal: Option<TerminalCostate>,
}

impl Default for VerifyConfig {
    fn default() -> Self {
        Self {
            tau: 0.05,
            q_terminal: None,
        }
    }
}

fn bad(msg: impl Into<String>) -> CliError {
    CliError::Config(msg.into())
}

impl ExperimentConfig {
    pub fn load(path: &Path, overrides: &[String]) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path).map_err(|e| bad(format!("{}: {e}", path.display())))?;
        Self::parse(&text, overrides)
    }

    pub fn parse(text: &str, overrides: &[String]) -> Result<Self, CliError> {
        let mut doc: toml::Table = text.parse().map_err(|e: toml::de::Error| bad(e.to_string()))?;
        for o in overrides {
            apply_override(&mut doc, o)?;
        }
        let cfg: Self = toml::Value::Table(doc)
            .try_into()
            .map_err(|e: toml::de::Error| bad(e.to_string()))?;
        cfg.problem_spec()?;
        Ok(cfg)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn reduced(&self) -> Result<ReducedParams<f64>, CliError> {
        match &self.model {
            ModelConfig::Reduced(m) => m.params(),
            ModelConfig::Full(_) => Err(bad("this command needs a reduced model")),
        }
    }

    pub fn problem_spec(&self) -> Result<ProblemSpec<f64>, CliError> {
        let p = &self.problem;
        let horizon = match p.mode {
            Mode::Fixed => {
                if p.alpha.is_some() || p.initial_guess.is_some() {
                    return Err(bad("fixed mode takes `horizon`, not `alpha`/`initial_guess`"));
                }
                HorizonMode::Fixed {
                    horizon: p.horizon.ok_or_else(|| bad("fixed mode needs `problem.horizon`"))?,
                }
            }
            Mode::Free => {
                if p.horizon.is_some() {
                    return Err(bad("free mode takes `initial_guess`, not `horizon`"));
                }
                HorizonMode::Free {
                    initial_guess: p.initial_guess.ok_or_else(|| bad("free mode needs `problem.initial_guess`"))?,
                    alpha: p.alpha.ok_or_else(|| bad("free mode needs `problem.alpha`"))?,
                }
            }
        };
        let system = match &self.model {
            ModelConfig::Reduced(m) => {
                if p.initial.is_some() || p.n1_max.is_some() || p.n2_margin.is_some() {
                    return Err(bad("`initial`, `n1_max`, `n2_margin` apply to the full model"));
                }
                SystemSpec::Reduced {
                    params: m.params()?,
                    p0: p.p0.unwrap_or(0.0),
                }
            }
            ModelConfig::Full(m) => {
                if p.p0.is_some() {
                    return Err(bad("`p0` applies to the reduced model"));
                }
                let params = m.params()?;
                let initial = match p.initial {
                    Some([n1, n2]) => FullState::new(n1, n2)?,
                    None => params.wild_equilibrium(),
                };
                SystemSpec::Full {
                    params,
                    initial,
                    n1_max: p.n1_max.unwrap_or(10.0),
                    n2_margin: p.n2_margin.unwrap_or(10.0),
                }
            }
        };
        let spec = ProblemSpec {
            system,
            horizon,
            bound: p.bound,
            intervals: p.intervals,
            penalty_eps: p.penalty_eps,
        };
        spec.validate()?;
        Ok(spec)
    }
}

/// Sets `a.b.c = value` in the document. The value is read as a TOML
/// literal, falling back to a bare string.
fn apply_override(doc: &mut toml::Table, assignment: &str) -> Result<(), CliError> {
    let (path, raw) = assignment
        .split_once('=')
        .ok_or_else(|| bad(format!("override `{assignment}` is not key=value")))?;
    let keys: Vec<&str> = path.trim().split('.').collect();
    if keys.iter().any(|k| k.is_empty()) {
        return Err(bad(format!("bad override path `{path}`")));
    }
    let value = parse_value(raw.trim());
    let (last, parents) = keys.split_last().expect("at least one key");
    let mut table = doc;
    for key in parents {
        let entry = table
            .entry(key.to_string())
            .or_insert_with(|| toml::Value::Table(toml::Table::new()));
        table = entry
            .as_table_mut()
            .ok_or_else(|| bad(format!("override path `{path}` crosses a non-table value")))?;
    }
    table.insert(last.to_string(), value);
    Ok(())
}

fn parse_value(raw: &str) -> toml::Value {
    format!("v = {raw}")
        .parse::<toml::Table>()
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| toml::Value::String(raw.to_string()))
}

#[cfg(test)]
mod tests {
    use super::*;

    const REDUCED: &str = r#"
[model]
kind = "reduced"
b1_0 = 1.0
b2_0 = 0.9
d1 = 0.27
d2 = 0.3
k = 1.0
s_h = 0.9

[problem]
mode = "fixed"
horizon = 0.5
bound = 10.0
intervals = 300
penalty_eps = 0.01
"#;

    #[test]
    fn parses_and_round_trips() {
        let cfg = ExperimentConfig::parse(REDUCED, &[]).unwrap();
        assert_eq!(cfg.run, RunConfig::default());
        let again = ExperimentConfig::parse(&cfg.to_toml(), &[]).unwrap();
        assert_eq!(cfg, again);
    }

    #[test]
    fn overrides_use_dotted_paths() {
        let cfg = ExperimentConfig::parse(
            REDUCED,
            &["problem.horizon=0.25".into(), "run.max_iters = 7".into(), "run.out_dir=out/x".into()],
        )
        .unwrap();
        assert_eq!(cfg.problem.horizon, Some(0.25));
        assert_eq!(cfg.run.max_iters, 7);
        assert_eq!(cfg.run.out_dir.as_deref(), Some("out/x"));
        assert!(ExperimentConfig::parse(REDUCED, &["problem".into()]).is_err());
        assert!(ExperimentConfig::parse(REDUCED, &["problem.horizon.x=1".into()]).is_err());
    }

    #[test]
    fn unknown_keys_are_rejected() {
        let text = REDUCED.replace("s_h = 0.9", "s_h = 0.9\nfoo = 1");
        assert!(matches!(ExperimentConfig::parse(&text, &[]), Err(CliError::Config(_))));
        let text = format!("{REDUCED}\n[run]\nsed = 3\n");
        assert!(ExperimentConfig::parse(&text, &[]).is_err());
        assert!(ExperimentConfig::parse(REDUCED, &["problem.alpah=0.1".into()]).is_err());
    }

    #[test]
    fn mode_fields_must_match() {
        assert!(ExperimentConfig::parse(REDUCED, &["problem.mode=\"free\"".into()]).is_err());
        assert!(ExperimentConfig::parse(REDUCED, &["problem.alpha=0.5".into()]).is_err());
        let cfg = ExperimentConfig::parse(
            REDUCED,
            &[
                "problem.mode=free".into(),
                "problem.initial_guess=0.1".into(),
                "problem.alpha=0.01".into(),
                "problem.horizon=nan".into(),
            ],
        );
        assert!(cfg.is_err());
    }

    #[test]
    fn bistability_violation_is_a_model_error() {
        let err = ExperimentConfig::parse(REDUCED, &["model.s_h=0.05".into()]).unwrap_err();
        assert!(matches!(err, CliError::Model(_)));
        assert_eq!(err.exit_code(), 2);
    }
}
