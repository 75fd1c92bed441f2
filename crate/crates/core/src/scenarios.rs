//! Named application setups and parameter sweeps.
//!
//! Every builder takes a flat map of numeric parameters. Keys not listed for
//! the kind are rejected; missing keys take the documented defaults. Level
//! indices inside parameter maps (`target`) are 1-based like every other
//! serialized form.

use std::collections::BTreeMap;
use std::f64::consts::PI;
use std::fmt;
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::effective::extract_effective;
use crate::error::{Error, Result};
use crate::model::{build_hamiltonian, Coupling, ModulationSchedule, QuantumState, SystemSpec};
use crate::propagation::{
    extrema, period_propagator, state_at, stroboscopic_evolve, trace_extremum, waveform_evolve, Extremum,
    PopulationTrace, Waveform,
};
use crate::spectral::{
    eigendecompose, perturbative_three_level, spike_distance, transition_interval, transition_interval_ordered,
};

pub type Params = BTreeMap<String, f64>;

/// Multiple of the effective Rabi period used as the default horizon.
pub const HORIZON_RABI_PERIODS: f64 = 1.25;
pub const HORIZON_CAP: f64 = 5000.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ScenarioKind {
    RydbergLadder,
    RydbergSuperposition,
    BlockadePair,
    CounterintuitiveVee,
    RbStar,
    NeFive,
    NeFour,
    Stirap,
}

impl ScenarioKind {
    pub const ALL: [ScenarioKind; 8] = [
        ScenarioKind::RydbergLadder,
        ScenarioKind::RydbergSuperposition,
        ScenarioKind::BlockadePair,
        ScenarioKind::CounterintuitiveVee,
        ScenarioKind::RbStar,
        ScenarioKind::NeFive,
        ScenarioKind::NeFour,
        ScenarioKind::Stirap,
    ];

    pub fn name(self) -> &'static str {
        match self {
            ScenarioKind::RydbergLadder => "rydberg-ladder",
            ScenarioKind::RydbergSuperposition => "rydberg-superposition",
            ScenarioKind::BlockadePair => "blockade-pair",
            ScenarioKind::CounterintuitiveVee => "counterintuitive-vee",
            ScenarioKind::RbStar => "rb-star",
            ScenarioKind::NeFive => "ne-five",
            ScenarioKind::NeFour => "ne-four",
            ScenarioKind::Stirap => "stirap",
        }
    }

    /// Accepted parameters and their defaults.
    pub fn defaults(self) -> Params {
        let pairs: &[(&str, f64)] = match self {
            ScenarioKind::RydbergLadder => &[
                ("delta1", 60.0),
                ("delta2", 30.0),
                ("omega1", 1.0),
                ("omega2", 2.0),
                ("omega1_prime", -1.0),
                ("target", 3.0),
                ("n", 0.0),
            ],
            ScenarioKind::RydbergSuperposition => &[
                ("delta1", 60.0),
                ("delta2", 30.0),
                ("delta3", 28.8),
                ("omega1", 1.0),
                ("omega2", 2.0),
                ("omega3", 2.0),
                ("omega1_prime", -1.0),
                ("target", 3.0),
                ("n", 0.0),
            ],
            ScenarioKind::BlockadePair => &[
                ("delta1", -23.0),
                ("v", 39.0),
                ("omega_eff", 1.0),
                ("omega_eff_prime", 0.5),
                ("target", 3.0),
                ("n", 0.0),
            ],
            ScenarioKind::CounterintuitiveVee => &[
                ("delta1", -48.0),
                ("omega1", 1.0),
                ("omega1_prime", -1.0),
                ("n", 0.0),
            ],
            ScenarioKind::RbStar => &[
                ("delta1", 30.0),
                ("delta2", 53.0),
                ("delta3", 100.0),
                ("omega1", 1.0),
                ("omega1_prime", -1.0),
                ("target", 2.0),
                ("n", 0.0),
            ],
            ScenarioKind::NeFive => &[
                ("delta1", 33.0),
                ("delta2", 9.0),
                ("delta3", 36.0),
                ("delta4", 6.0),
                ("omega1", 1.0),
                ("omega2", 2.0),
                ("omega1_prime", -1.0),
                ("target", 3.0),
                ("n", 3.0),
            ],
            ScenarioKind::NeFour => &[
                ("delta1", 60.0),
                ("delta2", 30.0),
                ("delta3", 28.0),
                ("omega1", 1.0),
                ("omega2", 2.0),
                ("omega1_prime", -1.0),
                ("target", 3.0),
                ("n", 0.0),
            ],
            ScenarioKind::Stirap => &[
                ("delta1", 30.0),
                ("delta2", 0.0),
                ("peak", 1.0),
                ("tau", 200.0),
                ("substep", 0.5),
            ],
        };
        pairs.iter().map(|&(k, v)| (k.to_string(), v)).collect()
    }
}

impl fmt::Display for ScenarioKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for ScenarioKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        ScenarioKind::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| Error::InvalidParameter(format!("unknown scenario kind '{s}'")))
    }
}

/// How a scenario evolves.
#[derive(Debug, Clone)]
pub enum Dynamics {
    Schedule(ModulationSchedule),
    Waveform {
        base: SystemSpec,
        edges: Vec<(usize, usize)>,
        waveform: Waveform,
        t_start: f64,
        t_final: f64,
        substep: f64,
    },
}

#[derive(Debug, Clone)]
pub struct Scenario {
    pub kind: ScenarioKind,
    /// Fully resolved parameters.
    pub params: Params,
    pub dynamics: Dynamics,
    /// Initial bare level (0-based).
    pub initial: usize,
    /// Levels the run is meant to populate (0-based).
    pub targets: Vec<usize>,
    /// Transfer time stated for the setup, where one is known.
    pub declared_ts: Option<f64>,
}

/// Evolution window of a run and how it was chosen.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Horizon {
    pub t_final: f64,
    /// Effective Rabi period out of the initial level, if one was computed.
    pub rabi_period: Option<f64>,
    pub capped: bool,
}

#[derive(Debug, Clone)]
pub struct ScenarioRun {
    pub trace: PopulationTrace,
    pub horizon: Horizon,
    pub extrema: Vec<Extremum>,
}

fn resolve(kind: ScenarioKind, given: &Params) -> Result<Params> {
    let mut params = kind.defaults();
    for (key, &value) in given {
        match params.get_mut(key) {
            Some(slot) => {
                if !value.is_finite() {
                    return Err(Error::InvalidParameter(format!("parameter '{key}' is not finite")));
                }
                *slot = value;
            }
            None => {
                return Err(Error::InvalidParameter(format!(
                    "unknown parameter '{key}' for scenario {kind}"
                )))
            }
        }
    }
    Ok(params)
}

fn index_param(params: &Params, key: &str, lo: usize, hi: usize) -> Result<usize> {
    let v = params[key];
    if v.fract() != 0.0 || v < lo as f64 || v > hi as f64 {
        return Err(Error::InvalidParameter(format!(
            "parameter '{key}' must be an integer in [{lo}, {hi}], got {v}"
        )));
    }
    Ok(v as usize)
}

fn labels(names: &[&str]) -> Vec<String> {
    names.iter().map(|s| s.to_string()).collect()
}

/// Build the pair of step specs that differ only in the couplings listed in
/// `modulated`, which take `prime` in the second step.
fn step_pair(
    detunings: Vec<f64>,
    couplings: Vec<Coupling>,
    modulated: &[(usize, usize)],
    prime: f64,
    names: &[&str],
) -> Result<(SystemSpec, SystemSpec)> {
    let a = SystemSpec::with_labels(detunings, couplings, labels(names))?;
    let mut b = a.clone();
    for &(i, j) in modulated {
        b = b.with_coupling(i, j, prime)?;
    }
    Ok((a, b))
}

/// Durations of both steps from the same bare-labelled target gap.
fn bare_schedule(a: SystemSpec, b: SystemSpec, target: usize, n: u32) -> Result<ModulationSchedule> {
    let ta = transition_interval(&build_hamiltonian(&a), target, n)?;
    let tb = transition_interval(&build_hamiltonian(&b), target, n)?;
    ModulationSchedule::new(a, b, ta, tb)
}

pub fn build_scenario(kind: ScenarioKind, given: &Params) -> Result<Scenario> {
    let p = resolve(kind, given)?;
    let n = if p.contains_key("n") {
        index_param(&p, "n", 0, 1000)? as u32
    } else {
        0
    };
    let g = |k: &str| p[k];
    let mut declared_ts = None;
    let (dynamics, targets) = match kind {
        ScenarioKind::RydbergLadder => {
            let target = index_param(&p, "target", 2, 3)? - 1;
            let (a, b) = step_pair(
                vec![0.0, g("delta1"), g("delta2")],
                vec![Coupling::new(0, 1, g("omega1")), Coupling::new(1, 2, g("omega2"))],
                &[(0, 1)],
                g("omega1_prime"),
                &["1", "2", "3"],
            )?;
            if p == kind.defaults() {
                declared_ts = Some(37.2);
            }
            (Dynamics::Schedule(bare_schedule(a, b, target, n)?), vec![target])
        }
        ScenarioKind::RydbergSuperposition => {
            let target = index_param(&p, "target", 2, 4)? - 1;
            let (a, b) = step_pair(
                vec![0.0, g("delta1"), g("delta2"), g("delta3")],
                vec![
                    Coupling::new(0, 1, g("omega1")),
                    Coupling::new(1, 2, g("omega2")),
                    Coupling::new(2, 3, g("omega3")),
                ],
                &[(0, 1)],
                g("omega1_prime"),
                &["1", "2", "3", "4"],
            )?;
            (Dynamics::Schedule(bare_schedule(a, b, target, n)?), vec![2, 3])
        }
        ScenarioKind::BlockadePair => {
            let target = index_param(&p, "target", 2, 3)? - 1;
            // Symmetric two-atom basis {gg, T, rr}; the pair coupling picks up
            // a factor sqrt(2). Written as -H, which has the same populations.
            let (d1, v) = (g("delta1"), g("v"));
            let c = std::f64::consts::SQRT_2;
            let a = SystemSpec::with_labels(
                vec![0.0, -d1, -(2.0 * d1 + v)],
                vec![Coupling::new(0, 1, c * g("omega_eff")), Coupling::new(1, 2, c * g("omega_eff"))],
                labels(&["gg", "T", "rr"]),
            )?;
            let b = a
                .with_coupling(0, 1, c * g("omega_eff_prime"))?
                .with_coupling(1, 2, c * g("omega_eff_prime"))?;
            (Dynamics::Schedule(bare_schedule(a, b, target, n)?), vec![target])
        }
        ScenarioKind::CounterintuitiveVee => {
            let (a, b) = step_pair(
                vec![0.0, g("delta1"), 0.0],
                vec![Coupling::new(0, 1, g("omega1")), Coupling::new(0, 2, g("omega1"))],
                &[(0, 1), (0, 2)],
                g("omega1_prime"),
                &["1", "2", "3"],
            )?;
            // Resonant 1-3 mixing scrambles bare labels; gaps are taken in
            // energy order instead: lowest-to-middle in the first step,
            // lowest-to-highest in the second.
            let ta = transition_interval_ordered(&build_hamiltonian(&a), 1, n)?;
            let tb = transition_interval_ordered(&build_hamiltonian(&b), 2, n)?;
            (Dynamics::Schedule(ModulationSchedule::new(a, b, ta, tb)?), vec![1])
        }
        ScenarioKind::RbStar => {
            let target = index_param(&p, "target", 2, 4)? - 1;
            let edges = [(0, 1), (0, 2), (0, 3)];
            let (a, b) = step_pair(
                vec![0.0, g("delta1"), g("delta2"), g("delta3")],
                edges.iter().map(|&(i, j)| Coupling::new(i, j, g("omega1"))).collect(),
                &edges,
                g("omega1_prime"),
                &["1", "2", "3", "4"],
            )?;
            (Dynamics::Schedule(bare_schedule(a, b, target, n)?), vec![target])
        }
        ScenarioKind::NeFive => {
            // Levels 1, 2, 3, 2', 3'.
            let target = index_param(&p, "target", 2, 5)? - 1;
            let (a, b) = step_pair(
                vec![
                    0.0,
                    g("delta1"),
                    g("delta1") + g("delta2"),
                    g("delta3"),
                    g("delta3") + g("delta4"),
                ],
                vec![
                    Coupling::new(0, 1, g("omega1")),
                    Coupling::new(0, 3, g("omega1")),
                    Coupling::new(1, 2, g("omega2")),
                    Coupling::new(3, 4, g("omega2")),
                ],
                &[(0, 1), (0, 3)],
                g("omega1_prime"),
                &["1", "2", "3", "2'", "3'"],
            )?;
            (Dynamics::Schedule(bare_schedule(a, b, target, n)?), vec![target])
        }
        ScenarioKind::NeFour => {
            // Levels 1, 2, 3, 3'.
            let target = index_param(&p, "target", 2, 4)? - 1;
            let (a, b) = step_pair(
                vec![0.0, g("delta1"), g("delta2"), g("delta3")],
                vec![
                    Coupling::new(0, 1, g("omega1")),
                    Coupling::new(1, 2, g("omega2")),
                    Coupling::new(1, 3, g("omega2")),
                ],
                &[(0, 1)],
                g("omega1_prime"),
                &["1", "2", "3", "3'"],
            )?;
            (Dynamics::Schedule(bare_schedule(a, b, target, n)?), vec![target])
        }
        ScenarioKind::Stirap => {
            let tau = g("tau");
            if !(tau > 0.0) {
                return Err(Error::InvalidDuration(tau, "finite and > 0"));
            }
            let base = SystemSpec::new(
                vec![0.0, g("delta1"), g("delta2")],
                vec![Coupling::new(0, 1, 0.0), Coupling::new(1, 2, 0.0)],
            )?;
            let dynamics = Dynamics::Waveform {
                base,
                edges: vec![(0, 1), (1, 2)],
                waveform: Waveform::GaussianPair {
                    peak: g("peak"),
                    width: tau,
                    delay: tau,
                },
                t_start: -3.0 * tau,
                t_final: 4.0 * tau,
                substep: g("substep"),
            };
            (dynamics, vec![2])
        }
    };
    Ok(Scenario {
        kind,
        params: p,
        dynamics,
        initial: 0,
        targets,
        declared_ts,
    })
}

impl Scenario {
    pub fn schedule(&self) -> Option<&ModulationSchedule> {
        match &self.dynamics {
            Dynamics::Schedule(s) => Some(s),
            Dynamics::Waveform { .. } => None,
        }
    }

    fn require_schedule(&self) -> Result<&ModulationSchedule> {
        self.schedule().ok_or_else(|| {
            Error::InvalidParameter(format!("scenario {} has no two-step schedule", self.kind))
        })
    }

    pub fn dim(&self) -> usize {
        match &self.dynamics {
            Dynamics::Schedule(s) => s.dim(),
            Dynamics::Waveform { base, .. } => base.dim(),
        }
    }

    pub fn initial_state(&self) -> QuantumState {
        QuantumState::basis(self.dim(), self.initial).expect("initial level in range")
    }

    /// Same setup with the second step replaced by the first.
    pub fn unmodulated(&self) -> Result<Scenario> {
        let s = self.require_schedule()?;
        let schedule = ModulationSchedule::unmodulated(s.step_a().clone(), s.tau_a(), s.tau_b())?;
        Ok(Scenario {
            dynamics: Dynamics::Schedule(schedule),
            ..self.clone()
        })
    }

    /// `1.25` effective Rabi periods out of the initial level, capped at
    /// [`HORIZON_CAP`]; the full window for waveform runs.
    pub fn default_horizon(&self) -> Result<Horizon> {
        match &self.dynamics {
            Dynamics::Waveform { t_final, .. } => Ok(Horizon {
                t_final: *t_final,
                rabi_period: None,
                capped: false,
            }),
            Dynamics::Schedule(s) => schedule_horizon(s, self.initial),
        }
    }

    /// Evolve from the initial level. `horizon` overrides the default window
    /// of schedule runs.
    pub fn run(&self, samples_per_period: usize, horizon: Option<f64>) -> Result<ScenarioRun> {
        let horizon = match horizon {
            Some(t) => {
                if !(t.is_finite() && t > 0.0) {
                    return Err(Error::InvalidDuration(t, "finite and > 0"));
                }
                Horizon {
                    t_final: t,
                    rabi_period: None,
                    capped: false,
                }
            }
            None => self.default_horizon()?,
        };
        let psi0 = self.initial_state();
        let trace = match &self.dynamics {
            Dynamics::Schedule(s) => {
                let n_periods = (horizon.t_final / s.period()).ceil().max(1.0) as usize;
                stroboscopic_evolve(s, &psi0, n_periods, samples_per_period)?
            }
            Dynamics::Waveform {
                base,
                edges,
                waveform,
                t_start,
                substep,
                ..
            } => waveform_evolve(base, edges, waveform, &psi0, *t_start, horizon.t_final, *substep)?,
        };
        let extrema = extrema(&trace);
        Ok(ScenarioRun {
            trace,
            horizon,
            extrema,
        })
    }
}

/// Default window for a two-step run starting in bare level `initial`:
/// [`HORIZON_RABI_PERIODS`] effective Rabi periods, capped at [`HORIZON_CAP`].
pub fn schedule_horizon(schedule: &ModulationSchedule, initial: usize) -> Result<Horizon> {
    if initial >= schedule.dim() {
        return Err(Error::LevelOutOfRange {
            level: initial,
            dim: schedule.dim(),
        });
    }
    let model = extract_effective(&period_propagator(schedule), schedule.period())?;
    let rabi = model.rabi_period(initial);
    let wanted = rabi.map_or(f64::INFINITY, |p| HORIZON_RABI_PERIODS * p);
    Ok(Horizon {
        t_final: wanted.min(HORIZON_CAP),
        rabi_period: rabi,
        capped: wanted > HORIZON_CAP,
    })
}

/// Mixing angle of the `3-4` superposition: `0.5 atan(2 W3 / delta)`, with
/// `delta = 0` giving `sign(W3) pi / 4`.
pub fn superposition_angle(omega3: f64, delta: f64) -> Result<f64> {
    if omega3 == 0.0 && delta == 0.0 {
        return Err(Error::InvalidParameter("angle undefined for W3 = delta = 0".into()));
    }
    if delta == 0.0 {
        return Ok(PI / 4.0 * omega3.signum());
    }
    Ok(0.5 * (2.0 * omega3 / delta).atan())
}

/// Grid of sweep results in row-major axis order (last axis fastest).
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SweepGrid {
    pub axes: Vec<(String, Vec<f64>)>,
    pub columns: Vec<String>,
    pub rows: Vec<Vec<f64>>,
}

impl SweepGrid {
    fn assemble(axes: Vec<(String, Vec<f64>)>, columns: &[&str], rows: Vec<Vec<f64>>) -> Self {
        let grid = SweepGrid {
            axes,
            columns: columns.iter().map(|s| s.to_string()).collect(),
            rows,
        };
        debug_assert_eq!(grid.rows.len(), grid.len());
        grid
    }

    /// Number of grid points (product of axis lengths).
    pub fn len(&self) -> usize {
        self.axes.iter().map(|(_, v)| v.len()).product()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Axis values of point `i`.
    pub fn point(&self, mut i: usize) -> Vec<f64> {
        let mut out = vec![0.0; self.axes.len()];
        for (slot, (_, values)) in out.iter_mut().zip(&self.axes).rev() {
            *slot = values[i % values.len()];
            i /= values.len();
        }
        out
    }

    pub fn column(&self, name: &str) -> Option<Vec<f64>> {
        let k = self.columns.iter().position(|c| c == name)?;
        Some(self.rows.iter().map(|r| r[k]).collect())
    }
}

fn check_axis(values: &[f64]) -> Result<()> {
    if values.is_empty() {
        return Err(Error::EmptyGrid);
    }
    if values.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("sweep axis value"));
    }
    Ok(())
}

fn par_rows<F>(n: usize, f: F) -> Result<Vec<Vec<f64>>>
where
    F: Fn(usize) -> Result<Vec<f64>> + Sync + Send,
{
    (0..n).into_par_iter().map(f).collect()
}

/// Final target population of the Gaussian-pair transfer for each `delta2`.
/// `params` are stirap parameters (without `delta2`).
pub fn stirap_sweep(delta2: &[f64], params: &Params) -> Result<SweepGrid> {
    check_axis(delta2)?;
    if params.contains_key("delta2") {
        return Err(Error::InvalidParameter("delta2 is the sweep axis".into()));
    }
    let base = resolve(ScenarioKind::Stirap, params)?;
    for key in ["peak", "tau", "substep"] {
        if !(base[key] >= 0.0) || (key != "peak" && base[key] == 0.0) {
            return Err(Error::InvalidParameter(format!("pulse parameter '{key}' must be positive")));
        }
    }
    let rows = par_rows(delta2.len(), |i| {
        let mut p = params.clone();
        p.insert("delta2".into(), delta2[i]);
        let sc = build_scenario(ScenarioKind::Stirap, &p)?;
        let run = sc.run(1, None)?;
        Ok(vec![run.trace.final_populations()[2]])
    })?;
    Ok(SweepGrid::assemble(vec![("delta2".into(), delta2.to_vec())], &["P3_final"], rows))
}

/// Target population at `t_s` with static offsets added to the `1-2` and
/// `2-3` couplings of both steps. Step durations stay those of the
/// unperturbed schedule.
pub fn perturbation_sweep(scenario: &Scenario, d_omega1: &[f64], d_omega2: &[f64], t_s: f64) -> Result<SweepGrid> {
    check_axis(d_omega1)?;
    check_axis(d_omega2)?;
    if !(t_s.is_finite() && t_s > 0.0) {
        return Err(Error::InvalidDuration(t_s, "finite and > 0"));
    }
    let s = scenario.require_schedule()?;
    let target = scenario.targets[0];
    let psi0 = scenario.initial_state();
    let shift = |spec: &SystemSpec, i: usize, j: usize, by: f64| spec.with_coupling(i, j, spec.coupling(i, j) + by);
    let n2 = d_omega2.len();
    let rows = par_rows(d_omega1.len() * n2, |k| {
        let (x, y) = (d_omega1[k / n2], d_omega2[k % n2]);
        let a = shift(&shift(s.step_a(), 0, 1, x)?, 1, 2, y)?;
        let b = shift(&shift(s.step_b(), 0, 1, x)?, 1, 2, y)?;
        let perturbed = ModulationSchedule::new(a, b, s.tau_a(), s.tau_b())?;
        Ok(vec![state_at(&perturbed, &psi0, t_s)?.populations()[target]])
    })?;
    Ok(SweepGrid::assemble(
        vec![
            ("d_omega1".into(), d_omega1.to_vec()),
            ("d_omega2".into(), d_omega2.to_vec()),
        ],
        &["P_target_at_ts"],
        rows,
    ))
}

/// Initial substep for soft-square runs: resolves both the period and the
/// logistic edges.
pub fn soft_square_substep(period: f64, gamma: f64) -> f64 {
    (period / 320.0).min(0.125 / gamma)
}

/// Soft-square replacement of the ideal `1-2` modulation for each hardness.
/// Columns: target population at `t_s`, its maximum over the horizon, and
/// the time of that maximum.
pub fn deformation_sweep(scenario: &Scenario, gammas: &[f64], t_s: f64, horizon: f64) -> Result<SweepGrid> {
    check_axis(gammas)?;
    if !(t_s > 0.0 && horizon >= t_s) {
        return Err(Error::InvalidDuration(horizon, "at least t_s > 0"));
    }
    let s = scenario.require_schedule()?;
    let target = scenario.targets[0];
    let psi0 = scenario.initial_state();
    let rows = par_rows(gammas.len(), |i| {
        let gamma = gammas[i];
        let waveform = Waveform::SoftSquare {
            high: s.step_a().coupling(0, 1),
            low: s.step_b().coupling(0, 1),
            tau_a: s.tau_a(),
            tau_b: s.tau_b(),
            gamma,
        };
        let substep = soft_square_substep(s.period(), gamma);
        let trace = waveform_evolve(s.step_a(), &[(0, 1)], &waveform, &psi0, 0.0, horizon, substep)?;
        let at_ts = trace.populations()[trace.nearest_index(t_s)][target];
        let (max, t_max) = trace_extremum(&trace, target)?;
        Ok(vec![at_ts, max, t_max])
    })?;
    Ok(SweepGrid::assemble(
        vec![("gamma".into(), gammas.to_vec())],
        &["P_target_at_ts", "P_target_max", "t_max"],
        rows,
    ))
}

/// Ratio `(E2 - E1) / (E3 - E1)` of the ladder with `delta2` replaced.
fn ladder_ratio(params: &Params, delta2: f64) -> Result<f64> {
    let spec = SystemSpec::new(
        vec![0.0, params["delta1"], delta2],
        vec![
            Coupling::new(0, 1, params["omega1"]),
            Coupling::new(1, 2, params["omega2"]),
        ],
    )?;
    Ok(spike_distance(&eigendecompose(&build_hamiltonian(&spec)))?.0)
}

/// `delta2` in `(0, delta1)` giving the dressed ratio `ratio`, by bisection.
pub fn delta2_for_ratio(params: &Params, ratio: f64) -> Result<f64> {
    let params = resolve(ScenarioKind::RydbergLadder, params)?;
    let d1 = params["delta1"];
    if !(d1 > 0.0) {
        return Err(Error::InvalidParameter("ratio scan needs delta1 > 0".into()));
    }
    // The ratio falls monotonically from large values near delta2 = 0 to 1
    // at the 2-3 crossing.
    let (mut lo, mut hi) = (1e-3 * d1, d1 - 1e-9 * d1);
    let (f_lo, f_hi) = (ladder_ratio(&params, lo)?, ladder_ratio(&params, hi)?);
    if !(ratio < f_lo && ratio > f_hi) {
        return Err(Error::InvalidParameter(format!(
            "ratio {ratio} outside the reachable range ({f_hi}, {f_lo})"
        )));
    }
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if ladder_ratio(&params, mid)? > ratio {
            lo = mid;
        } else {
            hi = mid;
        }
        if hi - lo <= 1e-13 * d1 {
            break;
        }
    }
    Ok(0.5 * (lo + hi))
}

/// Perturbative regime test used by the spike scan: `W1 <= 0.1 |xi2 - xi1|`
/// and `|x1|, |x2| < 0.1`.
pub fn ladder_regime_valid(spec: &SystemSpec) -> bool {
    match perturbative_three_level(spec, 1.0) {
        Ok(p) => spec.coupling(0, 1).abs() <= 0.1 * (p.xi2 - p.xi1).abs(),
        Err(_) => false,
    }
}

/// Ladder transfer quality against the dressed ratio. Each ratio is turned
/// into a `delta2`; the run targets level 3 and lasts the default horizon.
/// Columns: `delta2`, ratio, spike distance, max P2, max P3, regime flag.
pub fn spike_scan(params: &Params, ratios: &[f64], samples_per_period: usize) -> Result<SweepGrid> {
    check_axis(ratios)?;
    if params.contains_key("delta2") {
        return Err(Error::InvalidParameter("delta2 is set by the ratio axis".into()));
    }
    let rows = par_rows(ratios.len(), |i| {
        let delta2 = delta2_for_ratio(params, ratios[i])?;
        let mut p = params.clone();
        p.insert("delta2".into(), delta2);
        p.insert("target".into(), 3.0);
        let sc = build_scenario(ScenarioKind::RydbergLadder, &p)?;
        let s = sc.schedule().unwrap();
        let (ratio, distance) = spike_distance(&eigendecompose(&build_hamiltonian(s.step_a())))?;
        let run = sc.run(samples_per_period, None)?;
        let valid = ladder_regime_valid(s.step_a());
        Ok(vec![
            delta2,
            ratio,
            distance,
            run.extrema[1].max,
            run.extrema[2].max,
            if valid { 1.0 } else { 0.0 },
        ])
    })?;
    Ok(SweepGrid::assemble(
        vec![("ratio".into(), ratios.to_vec())],
        &["delta2", "ratio_exact", "distance", "P2_max", "P3_max", "regime_valid"],
        rows,
    ))
}
