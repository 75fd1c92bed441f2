//! Exact propagators, stroboscopic two-step evolution and sub-stepped
//! evolution under shaped waveforms.

use serde::Serialize;

use crate::error::{Error, Result};
use crate::model::{build_hamiltonian, HamiltonianMatrix, ModulationSchedule, QuantumState, SystemSpec};
use crate::spectral::eigendecompose;
use crate::{CMatrix, CVector, C64};

/// Tolerated norm drift of a propagated state before the run is aborted.
pub const NORM_DRIFT_MAX: f64 = 1e-8;
pub const DEFAULT_SAMPLES_PER_PERIOD: usize = 4;

/// `exp(-i H t)` for many `t` from one eigendecomposition.
#[derive(Debug, Clone)]
pub struct Exponentiator {
    energies: Vec<f64>,
    vectors: CMatrix,
}

impl Exponentiator {
    pub fn new(h: &HamiltonianMatrix) -> Self {
        let s = eigendecompose(h);
        Exponentiator {
            energies: s.eigenvalues().to_vec(),
            vectors: s.eigenvectors().clone(),
        }
    }

    pub fn at(&self, t: f64) -> CMatrix {
        let d = self.energies.len();
        let mut scaled = self.vectors.clone();
        for (k, &e) in self.energies.iter().enumerate() {
            let phase = C64::from_polar(1.0, -e * t);
            for i in 0..d {
                scaled[(i, k)] *= phase;
            }
        }
        scaled * self.vectors.adjoint()
    }
}

fn check_duration(t: f64) -> Result<()> {
    if !(t.is_finite() && t >= 0.0) {
        return Err(Error::InvalidDuration(t, "finite and >= 0"));
    }
    Ok(())
}

pub fn step_propagator(h: &HamiltonianMatrix, t: f64) -> Result<CMatrix> {
    check_duration(t)?;
    Ok(Exponentiator::new(h).at(t))
}

/// `U(T) = exp(-i H_b tau_b) exp(-i H_a tau_a)`.
pub fn period_propagator(schedule: &ModulationSchedule) -> CMatrix {
    let (ha, hb) = schedule.hamiltonians();
    Exponentiator::new(&hb).at(schedule.tau_b()) * Exponentiator::new(&ha).at(schedule.tau_a())
}

/// `m^k` by repeated squaring.
pub fn matrix_power(m: &CMatrix, mut k: u64) -> CMatrix {
    let mut result = CMatrix::identity(m.nrows(), m.ncols());
    let mut base = m.clone();
    while k > 0 {
        if k & 1 == 1 {
            result = &result * &base;
        }
        k >>= 1;
        if k > 0 {
            base = &base * &base;
        }
    }
    result
}

/// Sampled populations of one evolution run.
#[derive(Debug, Clone)]
pub struct PopulationTrace {
    times: Vec<f64>,
    populations: Vec<Vec<f64>>,
    amplitudes: Option<Vec<CVector>>,
    final_state: CVector,
}

impl PopulationTrace {
    pub fn new(times: Vec<f64>, populations: Vec<Vec<f64>>, final_state: CVector) -> Result<Self> {
        if times.is_empty() {
            return Err(Error::InvalidParameter("empty trace".into()));
        }
        if populations.len() != times.len() {
            return Err(Error::LengthMismatch {
                what: "population rows",
                expected: times.len(),
                got: populations.len(),
            });
        }
        if times.windows(2).any(|w| !(w[1] > w[0])) {
            return Err(Error::InvalidParameter("trace times must increase strictly".into()));
        }
        let d = final_state.len();
        for row in &populations {
            if row.len() != d {
                return Err(Error::DimensionMismatch(d, row.len()));
            }
            let sum: f64 = row.iter().sum();
            if (sum - 1.0).abs() > 1e-9 {
                return Err(Error::NotNormalized(sum));
            }
        }
        Ok(PopulationTrace {
            times,
            populations,
            amplitudes: None,
            final_state,
        })
    }

    fn from_states(times: Vec<f64>, states: Vec<CVector>, keep: bool) -> Self {
        let populations = states
            .iter()
            .map(|v| v.iter().map(|z| z.norm_sqr()).collect())
            .collect();
        let final_state = states.last().cloned().unwrap();
        PopulationTrace {
            times,
            populations,
            amplitudes: keep.then_some(states),
            final_state,
        }
    }

    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.final_state.len()
    }

    pub fn times(&self) -> &[f64] {
        &self.times
    }

    pub fn populations(&self) -> &[Vec<f64>] {
        &self.populations
    }

    pub fn amplitudes(&self) -> Option<&[CVector]> {
        self.amplitudes.as_deref()
    }

    pub fn final_state(&self) -> &CVector {
        &self.final_state
    }

    pub fn final_populations(&self) -> &[f64] {
        self.populations.last().unwrap()
    }

    /// Population series of one level.
    pub fn level(&self, level: usize) -> Vec<f64> {
        self.populations.iter().map(|row| row[level]).collect()
    }

    /// Index of the sample closest in time to `t` (earlier sample on ties).
    pub fn nearest_index(&self, t: f64) -> usize {
        let i = self.times.partition_point(|&s| s < t);
        if i == 0 {
            0
        } else if i == self.times.len() {
            i - 1
        } else if t - self.times[i - 1] <= self.times[i] - t {
            i - 1
        } else {
            i
        }
    }

    /// Largest per-sample deviation of row sums from 1.
    pub fn norm_drift(&self) -> f64 {
        self.populations
            .iter()
            .map(|row| (row.iter().sum::<f64>() - 1.0).abs())
            .fold(0.0, f64::max)
    }

    /// Every `stride`-th sample, always keeping the last one.
    pub fn decimate(&self, stride: usize) -> PopulationTrace {
        let stride = stride.max(1);
        let n = self.len();
        let mut idx: Vec<usize> = (0..n).step_by(stride).collect();
        if *idx.last().unwrap() != n - 1 {
            idx.push(n - 1);
        }
        PopulationTrace {
            times: idx.iter().map(|&i| self.times[i]).collect(),
            populations: idx.iter().map(|&i| self.populations[i].clone()).collect(),
            amplitudes: self
                .amplitudes
                .as_ref()
                .map(|a| idx.iter().map(|&i| a[i].clone()).collect()),
            final_state: self.final_state.clone(),
        }
    }
}

/// Maximum sampled population of `level` and the earliest time within
/// `1e-12` of it.
pub fn trace_extremum(trace: &PopulationTrace, level: usize) -> Result<(f64, f64)> {
    if level >= trace.dim() {
        return Err(Error::LevelOutOfRange {
            level,
            dim: trace.dim(),
        });
    }
    let max = trace
        .populations
        .iter()
        .map(|row| row[level])
        .fold(f64::NEG_INFINITY, f64::max);
    let i = trace
        .populations
        .iter()
        .position(|row| row[level] >= max - 1e-12)
        .unwrap();
    Ok((max, trace.times[i]))
}

/// Measurement summary used by scenario checks.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Extremum {
    pub level: usize,
    pub max: f64,
    pub time: f64,
}

pub fn extrema(trace: &PopulationTrace) -> Vec<Extremum> {
    (0..trace.dim())
        .map(|level| {
            let (max, time) = trace_extremum(trace, level).unwrap();
            Extremum { level, max, time }
        })
        .collect()
}

fn check_state(state: &QuantumState, dim: usize) -> Result<()> {
    if state.dim() != dim {
        return Err(Error::DimensionMismatch(dim, state.dim()));
    }
    Ok(())
}

fn check_norm(v: &CVector) -> Result<()> {
    let drift = (v.norm() - 1.0).abs();
    if drift > NORM_DRIFT_MAX {
        return Err(Error::NormDrift(drift));
    }
    Ok(())
}

/// Piecewise-constant evolution through `n_periods` periods.
///
/// Each period is sampled `samples_per_period` times: `ceil(n/2)` equal
/// substeps inside the first step and the rest inside the second, so samples
/// fall inside the steps and not only on period boundaries. The first sample
/// is the initial state at `t = 0`.
pub fn stroboscopic_evolve(
    schedule: &ModulationSchedule,
    psi0: &QuantumState,
    n_periods: usize,
    samples_per_period: usize,
) -> Result<PopulationTrace> {
    stroboscopic_evolve_with(schedule, psi0, n_periods, samples_per_period, false)
}

/// As [`stroboscopic_evolve`], optionally keeping the full state per sample.
pub fn stroboscopic_evolve_with(
    schedule: &ModulationSchedule,
    psi0: &QuantumState,
    n_periods: usize,
    samples_per_period: usize,
    keep_amplitudes: bool,
) -> Result<PopulationTrace> {
    check_state(psi0, schedule.dim())?;
    if n_periods == 0 {
        return Err(Error::InvalidParameter("need at least one period".into()));
    }
    if samples_per_period < 2 {
        return Err(Error::InvalidParameter(format!(
            "samples per period must be >= 2, got {samples_per_period}"
        )));
    }
    let na = samples_per_period.div_ceil(2);
    let nb = samples_per_period - na;
    let (ha, hb) = schedule.hamiltonians();
    let (ta, tb) = (schedule.tau_a(), schedule.tau_b());
    let ua = Exponentiator::new(&ha).at(ta / na as f64);
    let ub = Exponentiator::new(&hb).at(tb / nb as f64);
    let period = schedule.period();

    let n_samples = n_periods * samples_per_period + 1;
    let mut times = Vec::with_capacity(n_samples);
    let mut states = Vec::with_capacity(n_samples);
    let mut psi = psi0.amplitudes().clone();
    times.push(0.0);
    states.push(psi.clone());
    for m in 0..n_periods {
        let start = m as f64 * period;
        for k in 1..=na {
            psi = &ua * psi;
            times.push(start + ta * k as f64 / na as f64);
            states.push(psi.clone());
        }
        for k in 1..=nb {
            psi = &ub * psi;
            times.push(if k == nb {
                (m + 1) as f64 * period
            } else {
                start + ta + tb * k as f64 / nb as f64
            });
            states.push(psi.clone());
        }
        check_norm(&psi)?;
    }
    Ok(PopulationTrace::from_states(times, states, keep_amplitudes))
}

/// Exact state at time `t`, using `U(T)^m` for the whole periods.
pub fn state_at(schedule: &ModulationSchedule, psi0: &QuantumState, t: f64) -> Result<QuantumState> {
    check_state(psi0, schedule.dim())?;
    check_duration(t)?;
    let period = schedule.period();
    let m = (t / period).floor();
    let mut rest = t - m * period;
    let (ha, hb) = schedule.hamiltonians();
    let ea = Exponentiator::new(&ha);
    let eb = Exponentiator::new(&hb);
    let u_period = eb.at(schedule.tau_b()) * ea.at(schedule.tau_a());
    let mut psi = matrix_power(&u_period, m as u64) * psi0.amplitudes();
    if rest < 0.0 {
        rest = 0.0;
    }
    if rest <= schedule.tau_a() {
        psi = ea.at(rest) * psi;
    } else {
        psi = eb.at(rest - schedule.tau_a()) * (ea.at(schedule.tau_a()) * psi);
    }
    check_norm(&psi)?;
    Ok(QuantumState::from_unchecked(psi))
}

/// Time-dependent coupling shapes.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum Waveform {
    /// `high` during `[0, tau_a)` of every period, `low` for the remaining `tau_b`.
    IdealSquare {
        high: f64,
        low: f64,
        tau_a: f64,
        tau_b: f64,
    },
    /// Logistic-smoothed square wave of hardness `gamma`.
    SoftSquare {
        high: f64,
        low: f64,
        tau_a: f64,
        tau_b: f64,
        gamma: f64,
    },
    /// Two channels: a pump `peak * exp(-(t - delay)^2 / width^2)` and an
    /// earlier Stokes pulse `peak * exp(-t^2 / width^2)`.
    GaussianPair { peak: f64, width: f64, delay: f64 },
}

impl Waveform {
    pub fn validate(&self) -> Result<()> {
        let positive = |x: f64, what: &'static str| {
            if x.is_finite() && x > 0.0 {
                Ok(())
            } else {
                Err(Error::InvalidDuration(x, what))
            }
        };
        let finite = |x: f64, what: &'static str| {
            if x.is_finite() {
                Ok(())
            } else {
                Err(Error::NonFinite(what))
            }
        };
        match *self {
            Waveform::IdealSquare { high, low, tau_a, tau_b } => {
                finite(high, "waveform amplitude")?;
                finite(low, "waveform amplitude")?;
                positive(tau_a, "finite and > 0")?;
                positive(tau_b, "finite and > 0")
            }
            Waveform::SoftSquare { high, low, tau_a, tau_b, gamma } => {
                finite(high, "waveform amplitude")?;
                finite(low, "waveform amplitude")?;
                positive(tau_a, "finite and > 0")?;
                positive(tau_b, "finite and > 0")?;
                if !(gamma.is_finite() && gamma > 0.0) {
                    return Err(Error::InvalidParameter(format!("hardness must be > 0, got {gamma}")));
                }
                Ok(())
            }
            Waveform::GaussianPair { peak, width, delay } => {
                finite(peak, "pulse peak")?;
                finite(delay, "pulse delay")?;
                positive(width, "finite and > 0")
            }
        }
    }

    /// Number of coupling edges the waveform drives.
    pub fn channels(&self) -> usize {
        match self {
            Waveform::GaussianPair { .. } => 2,
            _ => 1,
        }
    }

    pub fn period(&self) -> Option<f64> {
        match *self {
            Waveform::IdealSquare { tau_a, tau_b, .. } | Waveform::SoftSquare { tau_a, tau_b, .. } => {
                Some(tau_a + tau_b)
            }
            Waveform::GaussianPair { .. } => None,
        }
    }

    /// Offsets within one period where the waveform switches branch,
    /// including 0 and the period itself.
    fn breakpoints(&self) -> Vec<f64> {
        match *self {
            Waveform::IdealSquare { tau_a, tau_b, .. } => vec![0.0, tau_a, tau_a + tau_b],
            Waveform::SoftSquare { tau_a, tau_b, .. } => {
                let period = tau_a + tau_b;
                vec![0.0, tau_a / 2.0, period - tau_b / 2.0, period]
            }
            Waveform::GaussianPair { .. } => Vec::new(),
        }
    }

    /// Channel values at time `t`.
    pub fn values(&self, t: f64) -> Vec<f64> {
        match *self {
            Waveform::IdealSquare { high, low, tau_a, tau_b } => {
                let s = t.rem_euclid(tau_a + tau_b);
                vec![if s < tau_a { high } else { low }]
            }
            Waveform::SoftSquare { high, low, tau_a, tau_b, gamma } => {
                let period = tau_a + tau_b;
                let s = t.rem_euclid(period);
                let exponent = if s < tau_a / 2.0 {
                    -gamma * s
                } else if s <= period - tau_b / 2.0 {
                    gamma * (s - tau_a)
                } else {
                    -gamma * (s - period)
                };
                vec![low + (high - low) / (1.0 + exponent.exp())]
            }
            Waveform::GaussianPair { peak, width, delay } => {
                let g = |u: f64| peak * (-(u * u) / (width * width)).exp();
                vec![g(t - delay), g(t)]
            }
        }
    }
}

/// Refinement policy for [`waveform_evolve`].
pub const WAVEFORM_TOLERANCE: f64 = 1e-6;
pub const WAVEFORM_MAX_HALVINGS: u32 = 4;

/// Evolve under `base` with the couplings on `edges` replaced by the waveform
/// channels, using midpoint sampling on a uniform grid over
/// `[t_start, t_final]`.
///
/// The substep is halved until the final populations move by less than
/// [`WAVEFORM_TOLERANCE`]; the finest accepted run is returned. The grid ends
/// on `t_final` unless the waveform is periodic and starts on a period
/// boundary: then it is aligned to the period (ending on the first grid point
/// at or after `t_final`) and the per-substep propagators of one period are
/// reused.
pub fn waveform_evolve(
    base: &SystemSpec,
    edges: &[(usize, usize)],
    waveform: &Waveform,
    psi0: &QuantumState,
    t_start: f64,
    t_final: f64,
    substep: f64,
) -> Result<PopulationTrace> {
    waveform.validate()?;
    check_state(psi0, base.dim())?;
    if edges.len() != waveform.channels() {
        return Err(Error::LengthMismatch {
            what: "modulated edges",
            expected: waveform.channels(),
            got: edges.len(),
        });
    }
    for &(i, j) in edges {
        if i.max(j) >= base.dim() {
            return Err(Error::LevelOutOfRange {
                level: i.max(j),
                dim: base.dim(),
            });
        }
        if i == j {
            return Err(Error::SelfLoop(i));
        }
    }
    if !(t_final > t_start) {
        return Err(Error::InvalidDuration(t_final - t_start, "finite and > 0"));
    }
    if !(substep.is_finite() && substep > 0.0) {
        return Err(Error::InvalidDuration(substep, "finite and > 0"));
    }

    let span = t_final - t_start;
    let aligned = waveform.period().is_some_and(|p| {
        let k = (t_start / p).round();
        (t_start - k * p).abs() <= 1e-12 * p.max(1.0)
    });
    // Coarse grid. Periodic waveforms get per-segment step counts so that
    // every branch point of the waveform is a grid node.
    let coarse = if aligned {
        let nodes = waveform.breakpoints();
        Grid::Periodic(
            nodes
                .windows(2)
                .map(|w| ceil_count((w[1] - w[0]) / substep))
                .collect(),
        )
    } else {
        Grid::Uniform(ceil_count(span / substep))
    };

    let mut previous = run_grid(base, edges, waveform, psi0, t_start, span, &coarse)?;
    let mut change = f64::INFINITY;
    for halving in 1..=WAVEFORM_MAX_HALVINGS {
        let next = run_grid(
            base,
            edges,
            waveform,
            psi0,
            t_start,
            span,
            &coarse.refined(1usize << halving),
        )?;
        change = previous
            .final_populations()
            .iter()
            .zip(next.final_populations())
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max);
        if change < WAVEFORM_TOLERANCE {
            return Ok(next);
        }
        previous = next;
    }
    Err(Error::NoConvergence(change))
}

/// `ceil(x)` that ignores rounding noise just above an integer, at least 1.
fn ceil_count(x: f64) -> usize {
    (x * (1.0 - 1e-12)).ceil().max(1.0) as usize
}

enum Grid {
    /// Equal steps over the whole span.
    Uniform(usize),
    /// Step counts per waveform segment, repeated every period.
    Periodic(Vec<usize>),
}

impl Grid {
    fn refined(&self, factor: usize) -> Grid {
        match self {
            Grid::Uniform(n) => Grid::Uniform(n * factor),
            Grid::Periodic(counts) => Grid::Periodic(counts.iter().map(|c| c * factor).collect()),
        }
    }
}

fn run_grid(
    base: &SystemSpec,
    edges: &[(usize, usize)],
    waveform: &Waveform,
    psi0: &QuantumState,
    t_start: f64,
    span: f64,
    grid: &Grid,
) -> Result<PopulationTrace> {
    let step_matrix = |t0: f64, dt: f64| -> Result<CMatrix> {
        let values = waveform.values(t0 + 0.5 * dt);
        let mut spec = base.clone();
        for (&(i, j), &v) in edges.iter().zip(&values) {
            spec = spec.with_coupling(i, j, v)?;
        }
        Ok(Exponentiator::new(&build_hamiltonian(&spec)).at(dt))
    };

    let mut times = vec![t_start];
    let mut states = vec![psi0.amplitudes().clone()];
    let mut psi = psi0.amplitudes().clone();
    match grid {
        Grid::Uniform(steps) => {
            let dt = span / *steps as f64;
            for k in 0..*steps {
                let t0 = t_start + k as f64 * dt;
                psi = step_matrix(t0, dt)? * psi;
                times.push(t0 + dt);
                states.push(psi.clone());
            }
        }
        Grid::Periodic(counts) => {
            let period = waveform.period().expect("periodic grid needs a period");
            let nodes = waveform.breakpoints();
            // (end offset within the period, propagator) per substep
            let mut cache: Vec<(f64, CMatrix)> = Vec::new();
            for (w, &count) in nodes.windows(2).zip(counts) {
                let dt = (w[1] - w[0]) / count as f64;
                for k in 0..count {
                    let t0 = w[0] + k as f64 * dt;
                    let end = if k + 1 == count { w[1] } else { t0 + dt };
                    cache.push((end, step_matrix(t0, dt)?));
                }
            }
            // The last substep is cut short so the trace ends exactly at t_final.
            let t_final = t_start + span;
            let eps = 1e-12 * t_final.abs().max(1.0);
            let mut t = t_start;
            let mut cycle = 0usize;
            'outer: loop {
                let offset = t_start + cycle as f64 * period;
                for (end, u) in &cache {
                    let next = offset + end;
                    if next > t_final + eps {
                        psi = step_matrix(t, t_final - t)? * psi;
                        times.push(t_final);
                        states.push(psi.clone());
                        break 'outer;
                    }
                    psi = u * psi;
                    t = next;
                    times.push(t);
                    states.push(psi.clone());
                    if t >= t_final - eps {
                        break 'outer;
                    }
                }
                cycle += 1;
            }
        }
    }
    check_norm(&psi)?;
    Ok(PopulationTrace::from_states(times, states, false))
}
