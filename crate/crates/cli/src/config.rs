//! Run configuration: a JSON document naming a command, a scenario (or an
//! inline system) and the sampling and sweep controls.

use std::fmt;
use std::str::FromStr;

use serde::Deserialize;
use twostep::model::SystemSpec;
use twostep::scenarios::{Params, ScenarioKind};

use crate::CliError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Command {
    Simulate,
    Sweep,
    Spectrum,
    Effective,
}

impl Command {
    pub fn name(self) -> &'static str {
        match self {
            Command::Simulate => "simulate",
            Command::Sweep => "sweep",
            Command::Spectrum => "spectrum",
            Command::Effective => "effective",
        }
    }

    /// Whether the command writes files rather than printing to stdout.
    pub fn writes_files(self) -> bool {
        matches!(self, Command::Simulate | Command::Sweep)
    }
}

impl fmt::Display for Command {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// A two-step system given directly instead of through a scenario kind.
/// Levels are 1-based.
#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InlineSystem {
    pub step_a: SystemSpec,
    /// Defaults to `step_a` (no modulation).
    #[serde(default)]
    pub step_b: Option<SystemSpec>,
    #[serde(default)]
    pub tau_a: Option<f64>,
    #[serde(default)]
    pub tau_b: Option<f64>,
    /// Level whose dressed gap sets any duration not given.
    #[serde(default)]
    pub target: Option<usize>,
    #[serde(default)]
    pub n: u32,
    #[serde(default = "first_level")]
    pub initial: usize,
}

fn first_level() -> usize {
    1
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Sampling {
    #[serde(default = "default_spp")]
    pub samples_per_period: usize,
    #[serde(default)]
    pub horizon: Option<f64>,
    /// Initial substep for waveform runs; the scenario's own otherwise.
    #[serde(default)]
    pub substep: Option<f64>,
}

fn default_spp() -> usize {
    4
}

#[derive(Debug, Clone, PartialEq, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Axes {
    #[serde(default)]
    pub gamma: Option<Vec<f64>>,
    #[serde(default)]
    pub delta2: Option<Vec<f64>>,
    #[serde(default)]
    pub d_omega1: Option<Vec<f64>>,
    #[serde(default)]
    pub d_omega2: Option<Vec<f64>>,
    #[serde(default)]
    pub ratio: Option<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawConfig {
    command: Command,
    #[serde(default)]
    scenario: Option<String>,
    #[serde(default)]
    params: Params,
    #[serde(default)]
    system: Option<InlineSystem>,
    #[serde(default)]
    axes: Option<Axes>,
    #[serde(default)]
    sampling: Option<Sampling>,
    #[serde(default)]
    t_s: Option<f64>,
    #[serde(default)]
    name: Option<String>,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Source {
    Scenario { kind: ScenarioKind, params: Params },
    Inline(InlineSystem),
}

/// Which sweep the axes select.
#[derive(Debug, Clone, PartialEq)]
pub enum Sweep {
    /// Soft-square hardness.
    Deformation { gamma: Vec<f64> },
    /// Gaussian-pair detuning.
    Stirap { delta2: Vec<f64> },
    /// Static coupling offsets; a missing axis is `[0]`.
    Perturbation { d_omega1: Vec<f64>, d_omega2: Vec<f64> },
    /// Dressed energy ratio of the ladder.
    Spike { ratio: Vec<f64> },
}

impl Sweep {
    pub fn name(&self) -> &'static str {
        match self {
            Sweep::Deformation { .. } => "deformation",
            Sweep::Stirap { .. } => "stirap",
            Sweep::Perturbation { .. } => "perturbation",
            Sweep::Spike { .. } => "spike",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunPlan {
    pub command: Command,
    pub source: Source,
    pub sampling: Sampling,
    pub sweep: Option<Sweep>,
    /// Evaluation time for perturbation and deformation sweeps.
    pub t_s: Option<f64>,
    /// File stem for written artifacts.
    pub name: String,
}

fn invalid(msg: impl Into<String>) -> CliError {
    CliError::Config(msg.into())
}

fn positive(value: f64, what: &str) -> Result<(), CliError> {
    if value.is_finite() && value > 0.0 {
        Ok(())
    } else {
        Err(invalid(format!("{what} must be finite and > 0, got {value}")))
    }
}

fn axis(values: Vec<f64>, name: &str) -> Result<Vec<f64>, CliError> {
    if values.is_empty() {
        return Err(invalid(format!("axis '{name}' is empty")));
    }
    if values.iter().any(|v| !v.is_finite()) {
        return Err(invalid(format!("axis '{name}' has a non-finite value")));
    }
    Ok(values)
}

fn select_sweep(axes: Axes) -> Result<Sweep, CliError> {
    let Axes {
        gamma,
        delta2,
        d_omega1,
        d_omega2,
        ratio,
    } = axes;
    let perturbation = d_omega1.is_some() || d_omega2.is_some();
    let chosen = [gamma.is_some(), delta2.is_some(), perturbation, ratio.is_some()]
        .iter()
        .filter(|&&b| b)
        .count();
    if chosen != 1 {
        return Err(invalid(
            "axes must select exactly one sweep: gamma, delta2, d_omega1/d_omega2 or ratio",
        ));
    }
    if let Some(g) = gamma {
        let g = axis(g, "gamma")?;
        for &v in &g {
            positive(v, "gamma")?;
        }
        return Ok(Sweep::Deformation { gamma: g });
    }
    if let Some(d) = delta2 {
        return Ok(Sweep::Stirap { delta2: axis(d, "delta2")? });
    }
    if let Some(r) = ratio {
        return Ok(Sweep::Spike { ratio: axis(r, "ratio")? });
    }
    Ok(Sweep::Perturbation {
        d_omega1: axis(d_omega1.unwrap_or_else(|| vec![0.0]), "d_omega1")?,
        d_omega2: axis(d_omega2.unwrap_or_else(|| vec![0.0]), "d_omega2")?,
    })
}

/// Parse and validate a JSON run configuration. Unknown keys anywhere in
/// the document are rejected by name.
pub fn parse_config(text: &str) -> Result<RunPlan, CliError> {
    let raw: RawConfig = serde_json::from_str(text).map_err(|e| invalid(e.to_string()))?;

    let source = match (raw.scenario, raw.system) {
        (Some(_), Some(_)) => return Err(invalid("give either 'scenario' or 'system', not both")),
        (None, None) => return Err(invalid("missing 'scenario' or 'system'")),
        (Some(name), None) => {
            let kind = ScenarioKind::from_str(&name).map_err(|e| invalid(e.to_string()))?;
            let defaults = kind.defaults();
            if let Some(key) = raw.params.keys().find(|k| !defaults.contains_key(*k)) {
                return Err(invalid(format!("unknown parameter '{key}' for scenario {kind}")));
            }
            Source::Scenario {
                kind,
                params: raw.params,
            }
        }
        (None, Some(system)) => {
            if !raw.params.is_empty() {
                return Err(invalid("'params' only applies to named scenarios"));
            }
            let dim = system.step_a.dim();
            if system.step_b.as_ref().is_some_and(|b| b.dim() != dim) {
                return Err(invalid("step_a and step_b have different dimensions"));
            }
            for (level, what) in [(Some(system.initial), "initial"), (system.target, "target")] {
                if let Some(l) = level {
                    if l == 0 || l > dim {
                        return Err(invalid(format!("{what} level {l} outside 1..={dim}")));
                    }
                }
            }
            for tau in [system.tau_a, system.tau_b].into_iter().flatten() {
                positive(tau, "step duration")?;
            }
            let needs_target = system.tau_a.is_none() || system.tau_b.is_none();
            if needs_target && system.target.is_none() {
                return Err(invalid("inline system needs 'target' or both 'tau_a' and 'tau_b'"));
            }
            Source::Inline(system)
        }
    };

    let sampling = raw.sampling.unwrap_or(Sampling {
        samples_per_period: default_spp(),
        horizon: None,
        substep: None,
    });
    if sampling.samples_per_period == 0 {
        return Err(invalid("samples_per_period must be >= 1"));
    }
    if let Some(h) = sampling.horizon {
        positive(h, "horizon")?;
    }
    if let Some(s) = sampling.substep {
        positive(s, "substep")?;
    }
    if let Some(t) = raw.t_s {
        positive(t, "t_s")?;
    }

    let sweep = match (raw.command, raw.axes) {
        (Command::Sweep, Some(axes)) => Some(select_sweep(axes)?),
        (Command::Sweep, None) => return Err(invalid("sweep needs 'axes'")),
        (_, Some(_)) => return Err(invalid(format!("'axes' only applies to sweep, not {}", raw.command))),
        (_, None) => None,
    };
    if let Some(sweep) = &sweep {
        let kind = match &source {
            Source::Scenario { kind, .. } => Some(*kind),
            Source::Inline(_) => None,
        };
        let wanted = match sweep {
            Sweep::Stirap { .. } => Some(ScenarioKind::Stirap),
            Sweep::Spike { .. } => Some(ScenarioKind::RydbergLadder),
            _ => None,
        };
        if let Some(w) = wanted {
            if kind != Some(w) {
                return Err(invalid(format!("{} sweep needs scenario {w}", sweep.name())));
            }
        }
        if matches!(sweep, Sweep::Deformation { .. } | Sweep::Perturbation { .. }) && kind.is_none() {
            return Err(invalid(format!("{} sweep needs a named scenario", sweep.name())));
        }
    }

    let name = match raw.name {
        Some(n) => {
            let ok = !n.is_empty()
                && n.chars().all(|c| c.is_ascii_alphanumeric() || matches!(c, '-' | '_' | '.'))
                && !n.starts_with('.');
            if !ok {
                return Err(invalid(format!("output name '{n}' must be a plain file stem")));
            }
            n
        }
        None => match &source {
            Source::Scenario { kind, .. } => match &sweep {
                Some(s) if s.name() == kind.name() => format!("{kind}-sweep"),
                Some(s) => format!("{kind}-{}", s.name()),
                None => kind.to_string(),
            },
            Source::Inline(_) => "inline".to_string(),
        },
    };

    Ok(RunPlan {
        command: raw.command,
        source,
        sampling,
        sweep,
        t_s: raw.t_s,
        name,
    })
}

