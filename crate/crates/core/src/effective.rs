//! One-period effective Hamiltonians: numeric extraction from `U(T)` and the
//! perturbative rotation angles.

use std::f64::consts::PI;

use nalgebra::Schur;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::model::{HamiltonianMatrix, QuantumState};
use crate::propagation::{Exponentiator, PopulationTrace};
use crate::spectral::{eigendecompose, PerturbativeThreeLevel};
use crate::{max_abs_diff, unitarity_deviation, CMatrix, C64};

pub const UNITARITY_TOLERANCE: f64 = 1e-10;
/// Eigenphases closer than this to `+-pi` make the principal log unreliable.
pub const BRANCH_MARGIN: f64 = 0.1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum Channel {
    /// Rotation inside `{|1>, |2>}`.
    OneTwo,
    /// Rotation inside `{|1>, |3>}`.
    OneThree,
}

/// Perturbative per-period rotations and the resulting coupling magnitude.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct AnalyticRotation {
    pub phi1: f64,
    pub phi1_prime: f64,
    pub channel: Channel,
    /// `|phi| / T` of the selected channel.
    pub omega_eff: f64,
}

#[derive(Debug, Clone)]
pub struct EffectiveModel {
    pub h_eff: HamiltonianMatrix,
    pub period: f64,
    /// Principal eigenphases of `U(T)`, in `(-pi, pi]`.
    pub eigenphases: Vec<f64>,
    /// All eigenphases at least [`BRANCH_MARGIN`] away from `+-pi`.
    pub branch_valid: bool,
    /// `max |exp(-i H_eff T) - U(T)|`.
    pub residual: f64,
    pub analytic: Option<AnalyticRotation>,
}

impl EffectiveModel {
    pub fn with_analytic(mut self, pert: &PerturbativeThreeLevel, omega1: f64, channel: Channel) -> Result<Self> {
        let phi1 = analytic_phi1(pert, omega1)?;
        let phi1_prime = analytic_phi1_prime(pert, omega1)?;
        let phi = match channel {
            Channel::OneTwo => phi1,
            Channel::OneThree => phi1_prime,
        };
        self.analytic = Some(AnalyticRotation {
            phi1,
            phi1_prime,
            channel,
            omega_eff: phi.abs() / self.period,
        });
        Ok(self)
    }

    /// Period of the dominant oscillation out of bare level `level`:
    /// `2 pi / |e_a - e_b|` for the two eigenstates of `H_eff` with the
    /// largest weight on that level. `None` if those are degenerate.
    pub fn rabi_period(&self, level: usize) -> Option<f64> {
        let s = eigendecompose(&self.h_eff);
        let mut weights: Vec<(f64, usize)> = (0..s.dim())
            .map(|k| (s.eigenvectors()[(level, k)].norm_sqr(), k))
            .collect();
        weights.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)));
        let gap = (s.eigenvalues()[weights[0].1] - s.eigenvalues()[weights[1].1]).abs();
        (gap > 0.0).then(|| 2.0 * PI / gap)
    }
}

/// `H_eff = (i / T) log U` on the principal branch.
pub fn extract_effective(u: &CMatrix, period: f64) -> Result<EffectiveModel> {
    if u.nrows() != u.ncols() {
        return Err(Error::DimensionMismatch(u.nrows(), u.ncols()));
    }
    if !(period.is_finite() && period > 0.0) {
        return Err(Error::InvalidDuration(period, "finite and > 0"));
    }
    let dev = unitarity_deviation(u);
    if !(dev <= UNITARITY_TOLERANCE) {
        return Err(Error::NotUnitary(dev));
    }
    let d = u.nrows();
    // A unitary is normal, so its Schur form is diagonal.
    let (q, t) = Schur::new(u.clone()).unpack();
    let mut phases = Vec::with_capacity(d);
    for k in 0..d {
        let mut theta = t[(k, k)].arg();
        if theta <= -PI {
            theta += 2.0 * PI;
        }
        phases.push(theta);
    }
    let mut diag = CMatrix::zeros(d, d);
    for (k, &theta) in phases.iter().enumerate() {
        diag[(k, k)] = C64::new(-theta / period, 0.0);
    }
    let raw = &q * diag * q.adjoint();
    let h_eff = HamiltonianMatrix::from_matrix(raw, 1e-8)?;
    let residual = max_abs_diff(&Exponentiator::new(&h_eff).at(period), u);
    let branch_valid = phases.iter().all(|p| p.abs() <= PI - BRANCH_MARGIN);
    Ok(EffectiveModel {
        h_eff,
        period,
        eigenphases: phases,
        branch_valid,
        residual,
        analytic: None,
    })
}

fn check_xi(pert: &PerturbativeThreeLevel) -> Result<()> {
    if pert.xi1 == 0.0 {
        return Err(Error::Singular("xi1 = 0"));
    }
    if pert.xi2 == 0.0 {
        return Err(Error::Singular("xi2 = 0"));
    }
    Ok(())
}

/// `phi1 = 4 W1 (sin^2 a / xi1 + cos^2 a / xi2)`.
pub fn analytic_phi1(pert: &PerturbativeThreeLevel, omega1: f64) -> Result<f64> {
    check_xi(pert)?;
    let (s, c) = pert.alpha.sin_cos();
    Ok(4.0 * omega1 * (s * s / pert.xi1 + c * c / pert.xi2))
}

/// `phi1' = 2 W1 sin(2a) / xi1`.
pub fn analytic_phi1_prime(pert: &PerturbativeThreeLevel, omega1: f64) -> Result<f64> {
    check_xi(pert)?;
    Ok(2.0 * omega1 / pert.xi1 * (2.0 * pert.alpha).sin())
}

/// Evolution under the constant `H_eff`, `samples` uniform points on
/// `[0, t_final]`.
pub fn effective_trace(
    model: &EffectiveModel,
    psi0: &QuantumState,
    t_final: f64,
    samples: usize,
) -> Result<PopulationTrace> {
    if samples < 2 {
        return Err(Error::InvalidParameter("need at least 2 samples".into()));
    }
    if !(t_final.is_finite() && t_final > 0.0) {
        return Err(Error::InvalidDuration(t_final, "finite and > 0"));
    }
    let times: Vec<f64> = (0..samples)
        .map(|k| t_final * k as f64 / (samples - 1) as f64)
        .collect();
    effective_trace_at(model, psi0, &times)
}

/// Evolution under the constant `H_eff` sampled at the given times.
pub fn effective_trace_at(model: &EffectiveModel, psi0: &QuantumState, times: &[f64]) -> Result<PopulationTrace> {
    if psi0.dim() != model.h_eff.dim() {
        return Err(Error::DimensionMismatch(model.h_eff.dim(), psi0.dim()));
    }
    let exp = Exponentiator::new(&model.h_eff);
    let mut populations = Vec::with_capacity(times.len());
    let mut last = psi0.amplitudes().clone();
    for &t in times {
        last = exp.at(t) * psi0.amplitudes();
        populations.push(last.iter().map(|z| z.norm_sqr()).collect());
    }
    PopulationTrace::new(times.to_vec(), populations, last)
}

/// Largest population difference between `a` and `b`, with `b` matched to
/// each of `a`'s sample times inside `b`'s range by nearest sample.
pub fn compare_traces(a: &PopulationTrace, b: &PopulationTrace) -> Result<f64> {
    if a.dim() != b.dim() {
        return Err(Error::DimensionMismatch(a.dim(), b.dim()));
    }
    let (lo, hi) = (b.times()[0], *b.times().last().unwrap());
    let mut matched = false;
    let mut worst = 0.0f64;
    for (i, &t) in a.times().iter().enumerate() {
        if t < lo || t > hi {
            continue;
        }
        matched = true;
        let j = b.nearest_index(t);
        for (pa, pb) in a.populations()[i].iter().zip(&b.populations()[j]) {
            worst = worst.max((pa - pb).abs());
        }
    }
    if !matched {
        return Err(Error::DisjointTraces);
    }
    Ok(worst)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{build_hamiltonian, Coupling, ModulationSchedule, SystemSpec};
    use crate::propagation::{period_propagator, step_propagator, stroboscopic_evolve};
    use crate::spectral::{perturbative_three_level, transition_interval};
    use proptest::prelude::*;

    fn ladder(o1: f64, o2: f64) -> SystemSpec {
        SystemSpec::new(
            vec![0.0, 60.0, 30.0],
            vec![Coupling::new(0, 1, o1), Coupling::new(1, 2, o2)],
        )
        .unwrap()
    }

    fn reference_schedule() -> ModulationSchedule {
        let (a, b) = (ladder(1.0, 2.0), ladder(-1.0, 2.0));
        let ta = transition_interval(&build_hamiltonian(&a), 2, 0).unwrap();
        let tb = transition_interval(&build_hamiltonian(&b), 2, 0).unwrap();
        ModulationSchedule::new(a, b, ta, tb).unwrap()
    }

    fn pert(alpha: f64, xi1: f64, xi2: f64) -> PerturbativeThreeLevel {
        PerturbativeThreeLevel {
            alpha,
            xi1,
            xi2,
            x1: 0.0,
            x2: 0.0,
            e1: 0.0,
            e2: xi1,
            e3: xi2,
            theta1: 0.0,
            theta2: 0.0,
            phi: 0.0,
        }
    }

    #[test]
    fn identity_gives_zero() {
        let m = extract_effective(&CMatrix::identity(3, 3), 1.0).unwrap();
        assert!(m.h_eff.max_abs() < 1e-15);
        assert!(m.branch_valid);
        assert!(m.residual < 1e-15);
    }

    #[test]
    fn rejects_non_unitary() {
        let mut u = CMatrix::identity(2, 2);
        u[(0, 1)] = C64::new(1e-6, 0.0);
        assert!(matches!(extract_effective(&u, 1.0), Err(Error::NotUnitary(_))));
    }

    #[test]
    fn branch_flag_near_pi() {
        let spec = SystemSpec::new(vec![0.0, 3.1], vec![]).unwrap();
        let u = step_propagator(&build_hamiltonian(&spec), 1.0).unwrap();
        let m = extract_effective(&u, 1.0).unwrap();
        assert!(!m.branch_valid);
    }

    #[test]
    fn reference_ladder_structure() {
        let s = reference_schedule();
        let m = extract_effective(&period_propagator(&s), s.period()).unwrap();
        let h = m.h_eff.matrix();
        assert!(m.branch_valid);
        assert!(m.residual <= 1e-9);
        // Frozen from an independent extraction with dense matrix logarithm.
        assert!((h[(0, 2)].norm() - 0.04206).abs() < 5e-5);
        assert!((h[(0, 1)].norm() - 0.00265).abs() < 5e-5);
        assert!((h[(1, 2)].norm() - 0.02624).abs() < 5e-5);
        assert!(h[(0, 1)].norm() <= 0.1 * h[(0, 2)].norm());
        // The (2,3) coupling joins two nearly empty levels far off resonance.
        assert!(h[(1, 2)].norm() <= 0.1 * (h[(1, 1)] - h[(2, 2)]).norm());
    }

    #[test]
    fn one_two_channel_dominates_for_its_interval() {
        let (a, b) = (ladder(1.0, 2.0), ladder(-1.0, 2.0));
        let ta = transition_interval(&build_hamiltonian(&a), 1, 0).unwrap();
        let tb = transition_interval(&build_hamiltonian(&b), 1, 0).unwrap();
        let s = ModulationSchedule::new(a, b, ta, tb).unwrap();
        let m = extract_effective(&period_propagator(&s), s.period()).unwrap();
        let h = m.h_eff.matrix();
        // Frozen: |H13| / |H12| = 0.107 / 0.630.
        assert!((h[(0, 1)].norm() - 0.6296).abs() < 1e-3);
        assert!((h[(0, 2)].norm() - 0.1075).abs() < 1e-3);
        assert!(h[(0, 2)].norm() <= 0.2 * h[(0, 1)].norm());
    }

    #[test]
    fn analytic_limits_and_reference() {
        assert!((analytic_phi1(&pert(0.0, 30.0, 60.0), 1.0).unwrap() - 4.0 / 60.0).abs() < 1e-15);
        assert!((analytic_phi1(&pert(PI / 2.0, 30.0, 60.0), 1.0).unwrap() - 4.0 / 30.0).abs() < 1e-15);
        assert_eq!(analytic_phi1_prime(&pert(0.0, 30.0, 60.0), 1.0).unwrap(), 0.0);
        assert!(analytic_phi1(&pert(0.1, 0.0, 60.0), 1.0).is_err());

        let p = perturbative_three_level(&ladder(1.0, 2.0), 1.0).unwrap();
        let phi1 = analytic_phi1(&p, 1.0).unwrap();
        let phi1p = analytic_phi1_prime(&p, 1.0).unwrap();
        let (s, c) = p.alpha.sin_cos();
        assert!((phi1 - 4.0 * (s * s / p.xi1 + c * c / p.xi2)).abs() < 1e-15);
        assert!((phi1 - 0.0666).abs() < 5e-4);
        assert!((phi1p - (-0.00885)).abs() < 5e-5);

        let flipped = perturbative_three_level(&ladder(1.0, -2.0), 1.0).unwrap();
        assert!((analytic_phi1_prime(&flipped, 1.0).unwrap() + phi1p).abs() < 1e-15);
    }

    #[test]
    fn u13_agrees_with_phi1_prime() {
        let s = reference_schedule();
        let u = period_propagator(&s);
        let p = perturbative_three_level(s.step_a(), s.tau_a()).unwrap();
        let phi1p = analytic_phi1_prime(&p, 1.0).unwrap().abs();
        assert!((u[(0, 2)].norm() - phi1p).abs() <= 0.3 * phi1p);
    }

    #[test]
    fn full_vs_effective_reference() {
        let s = reference_schedule();
        let m = extract_effective(&period_propagator(&s), s.period()).unwrap();
        let psi0 = QuantumState::basis(3, 0).unwrap();
        let n = (40.0 / s.period()) as usize;
        let full = stroboscopic_evolve(&s, &psi0, n, 4).unwrap();
        let eff = effective_trace_at(&m, &psi0, full.times()).unwrap();
        let dev = compare_traces(&full, &eff).unwrap();
        assert!(dev <= 0.05, "{dev}");
        assert!((dev - 0.00112).abs() < 2e-4, "{dev}");
    }

    #[test]
    fn zero_generator_trace_is_constant() {
        let m = extract_effective(&CMatrix::identity(3, 3), 1.0).unwrap();
        let psi0 = QuantumState::basis(3, 1).unwrap();
        let tr = effective_trace(&m, &psi0, 10.0, 11).unwrap();
        assert!(tr.populations().iter().all(|row| (row[1] - 1.0).abs() < 1e-15));
    }

    #[test]
    fn two_level_closed_form() {
        let omega = 0.3;
        let spec = SystemSpec::new(vec![0.0, 0.0], vec![Coupling::new(0, 1, omega)]).unwrap();
        let u = step_propagator(&build_hamiltonian(&spec), 1.0).unwrap();
        let m = extract_effective(&u, 1.0).unwrap();
        let tr = effective_trace(&m, &QuantumState::basis(2, 0).unwrap(), 20.0, 41).unwrap();
        for (t, row) in tr.times().iter().zip(tr.populations()) {
            assert!((row[1] - (omega * t).sin().powi(2)).abs() < 1e-12);
        }
    }

    #[test]
    fn compare_trace_rules() {
        let s = reference_schedule();
        let psi0 = QuantumState::basis(3, 0).unwrap();
        let a = stroboscopic_evolve(&s, &psi0, 200, 4).unwrap();
        assert_eq!(compare_traces(&a, &a).unwrap(), 0.0);
        let shifted = PopulationTrace::new(
            a.times()[..a.len() - 1].to_vec(),
            a.populations()[1..].to_vec(),
            a.final_state().clone(),
        )
        .unwrap();
        assert!(compare_traces(&a, &shifted).unwrap() > 0.0);
        let late: Vec<f64> = a.times().iter().map(|t| t + 1e3).collect();
        let far = PopulationTrace::new(late, a.populations().to_vec(), a.final_state().clone()).unwrap();
        assert_eq!(compare_traces(&a, &far), Err(Error::DisjointTraces));
    }

    proptest! {
        #[test]
        fn log_exp_roundtrip(
            det in prop::collection::vec(-1.0f64..1.0, 3),
            c in prop::collection::vec(-0.5f64..0.5, 3),
            t in 0.1f64..1.0,
        ) {
            let spec = SystemSpec::new(
                vec![0.0, det[0], det[1], det[2]],
                vec![Coupling::new(0, 1, c[0]), Coupling::new(1, 2, c[1]), Coupling::new(0, 3, c[2])],
            ).unwrap();
            let h = build_hamiltonian(&spec);
            let u = step_propagator(&h, t).unwrap();
            let m = extract_effective(&u, t).unwrap();
            prop_assert!(crate::model::hermitian_deviation(m.h_eff.matrix()) <= 1e-12);
            prop_assert!(m.residual <= 1e-9);
            if m.branch_valid {
                prop_assert!(max_abs_diff(m.h_eff.matrix(), h.matrix()) <= 1e-9);
            }
        }

        #[test]
        fn schedule_roundtrip(d2 in 10.0f64..50.0, o2 in 0.5f64..3.0) {
            let a = SystemSpec::new(vec![0.0, 60.0, d2], vec![Coupling::new(0, 1, 1.0), Coupling::new(1, 2, o2)]).unwrap();
            let b = a.with_coupling(0, 1, -1.0).unwrap();
            let s = ModulationSchedule::new(a, b, 0.1, 0.1).unwrap();
            let m = extract_effective(&period_propagator(&s), s.period()).unwrap();
            if m.branch_valid {
                prop_assert!(m.residual <= 1e-9);
            }
        }
    }
}
