//! Level schemes, Hamiltonian construction and the two-step schedule.
//!
//! Energies are measured in units of a reference coupling (the first edge's
//! strength in every shipped scenario) and times in its inverse. Level
//! indices are 0-based in Rust and 1-based in every serialized form.

use std::collections::BTreeSet;

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::{Error, Result};
use crate::{CMatrix, CVector};

/// Real coupling between two levels, `value * (|i><j| + |j><i|)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Coupling {
    pub i: usize,
    pub j: usize,
    pub value: f64,
}

impl Coupling {
    pub fn new(i: usize, j: usize, value: f64) -> Self {
        Coupling { i, j, value }
    }

    /// The unordered pair `(min, max)`.
    pub fn pair(&self) -> (usize, usize) {
        (self.i.min(self.j), self.i.max(self.j))
    }
}

/// One piecewise-constant Hamiltonian: diagonal detunings plus a coupling
/// graph. Immutable once validated.
#[derive(Debug, Clone, PartialEq)]
pub struct SystemSpec {
    detunings: Vec<f64>,
    couplings: Vec<Coupling>,
    labels: Vec<String>,
}

impl SystemSpec {
    pub fn new(detunings: Vec<f64>, couplings: Vec<Coupling>) -> Result<Self> {
        let labels = (1..=detunings.len()).map(|k| k.to_string()).collect();
        Self::with_labels(detunings, couplings, labels)
    }

    pub fn with_labels(
        detunings: Vec<f64>,
        couplings: Vec<Coupling>,
        labels: Vec<String>,
    ) -> Result<Self> {
        let dim = detunings.len();
        if dim < 2 {
            return Err(Error::TooFewLevels(dim));
        }
        if labels.len() != dim {
            return Err(Error::LengthMismatch {
                what: "labels",
                expected: dim,
                got: labels.len(),
            });
        }
        if detunings.iter().any(|d| !d.is_finite()) {
            return Err(Error::NonFinite("detuning"));
        }
        let mut seen = BTreeSet::new();
        for c in &couplings {
            for level in [c.i, c.j] {
                if level >= dim {
                    return Err(Error::LevelOutOfRange { level, dim });
                }
            }
            if c.i == c.j {
                return Err(Error::SelfLoop(c.i));
            }
            if !c.value.is_finite() {
                return Err(Error::NonFinite("coupling"));
            }
            let (a, b) = c.pair();
            if !seen.insert((a, b)) {
                return Err(Error::DuplicateEdge(a, b));
            }
        }
        Ok(SystemSpec {
            detunings,
            couplings,
            labels,
        })
    }

    pub fn dim(&self) -> usize {
        self.detunings.len()
    }

    pub fn detunings(&self) -> &[f64] {
        &self.detunings
    }

    pub fn couplings(&self) -> &[Coupling] {
        &self.couplings
    }

    pub fn labels(&self) -> &[String] {
        &self.labels
    }

    /// Coupling value on the unordered pair `(i, j)`, zero if absent.
    pub fn coupling(&self, i: usize, j: usize) -> f64 {
        let key = (i.min(j), i.max(j));
        self.couplings
            .iter()
            .find(|c| c.pair() == key)
            .map_or(0.0, |c| c.value)
    }

    /// Copy with the coupling on `(i, j)` replaced (or added).
    pub fn with_coupling(&self, i: usize, j: usize, value: f64) -> Result<Self> {
        let key = (i.min(j), i.max(j));
        let mut couplings = self.couplings.clone();
        match couplings.iter_mut().find(|c| c.pair() == key) {
            Some(c) => c.value = value,
            None => couplings.push(Coupling::new(i, j, value)),
        }
        Self::with_labels(self.detunings.clone(), couplings, self.labels.clone())
    }

    /// Copy with detuning of `level` replaced.
    pub fn with_detuning(&self, level: usize, value: f64) -> Result<Self> {
        if level >= self.dim() {
            return Err(Error::LevelOutOfRange {
                level,
                dim: self.dim(),
            });
        }
        let mut detunings = self.detunings.clone();
        detunings[level] = value;
        Self::with_labels(detunings, self.couplings.clone(), self.labels.clone())
    }

    /// Copy with every coupling multiplied by `factor`.
    pub fn scale_couplings(&self, factor: f64) -> Result<Self> {
        let couplings = self
            .couplings
            .iter()
            .map(|c| Coupling::new(c.i, c.j, c.value * factor))
            .collect();
        Self::with_labels(self.detunings.clone(), couplings, self.labels.clone())
    }
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct SystemSpecJson {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    labels: Option<Vec<String>>,
    detunings: Vec<f64>,
    #[serde(default)]
    couplings: Vec<(usize, usize, f64)>,
}

impl Serialize for SystemSpec {
    fn serialize<S: Serializer>(&self, serializer: S) -> std::result::Result<S::Ok, S::Error> {
        SystemSpecJson {
            labels: Some(self.labels.clone()),
            detunings: self.detunings.clone(),
            couplings: self
                .couplings
                .iter()
                .map(|c| (c.i + 1, c.j + 1, c.value))
                .collect(),
        }
        .serialize(serializer)
    }
}

impl<'de> Deserialize<'de> for SystemSpec {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> std::result::Result<Self, D::Error> {
        use serde::de::Error as _;
        let raw = SystemSpecJson::deserialize(deserializer)?;
        let dim = raw.detunings.len();
        let mut couplings = Vec::with_capacity(raw.couplings.len());
        for (i, j, value) in raw.couplings {
            if i == 0 || j == 0 {
                return Err(D::Error::custom("coupling level indices are 1-based"));
            }
            couplings.push(Coupling::new(i - 1, j - 1, value));
        }
        let labels = raw
            .labels
            .unwrap_or_else(|| (1..=dim).map(|k| k.to_string()).collect());
        SystemSpec::with_labels(raw.detunings, couplings, labels).map_err(D::Error::custom)
    }
}

/// Hermitian matrix of a step Hamiltonian.
#[derive(Debug, Clone, PartialEq)]
pub struct HamiltonianMatrix(CMatrix);

impl HamiltonianMatrix {
    /// Wrap an arbitrary matrix after checking Hermiticity to `tol`.
    pub fn from_matrix(m: CMatrix, tol: f64) -> Result<Self> {
        if m.nrows() != m.ncols() {
            return Err(Error::DimensionMismatch(m.nrows(), m.ncols()));
        }
        let dev = hermitian_deviation(&m);
        if dev > tol {
            return Err(Error::InvalidParameter(format!(
                "matrix is not Hermitian (deviation {dev:e})"
            )));
        }
        Ok(HamiltonianMatrix(symmetrize(&m)))
    }

    pub fn zeros(dim: usize) -> Self {
        HamiltonianMatrix(CMatrix::zeros(dim, dim))
    }

    pub fn dim(&self) -> usize {
        self.0.nrows()
    }

    pub fn matrix(&self) -> &CMatrix {
        &self.0
    }

    pub fn into_matrix(self) -> CMatrix {
        self.0
    }

    /// Largest absolute entry, used as a scale for residual checks.
    pub fn max_abs(&self) -> f64 {
        self.0.iter().map(|z| z.norm()).fold(0.0, f64::max)
    }

    pub fn shifted(&self, c: f64) -> Self {
        let mut m = self.0.clone();
        for k in 0..m.nrows() {
            m[(k, k)] += c;
        }
        HamiltonianMatrix(m)
    }
}

/// `max |H - H^dag|`.
pub fn hermitian_deviation(m: &CMatrix) -> f64 {
    let n = m.nrows();
    let mut dev = 0.0f64;
    for i in 0..n {
        for j in 0..n {
            dev = dev.max((m[(i, j)] - m[(j, i)].conj()).norm());
        }
    }
    dev
}

/// `(M + M^dag) / 2`.
pub(crate) fn symmetrize(m: &CMatrix) -> CMatrix {
    (m + m.adjoint()).scale(0.5)
}

pub fn build_hamiltonian(spec: &SystemSpec) -> HamiltonianMatrix {
    let d = spec.dim();
    let mut h = CMatrix::zeros(d, d);
    for (k, &det) in spec.detunings.iter().enumerate() {
        h[(k, k)] = Complex64::new(det, 0.0);
    }
    for c in &spec.couplings {
        let v = Complex64::new(c.value, 0.0);
        h[(c.i, c.j)] = v;
        h[(c.j, c.i)] = v.conj();
    }
    HamiltonianMatrix(h)
}

/// Detuning-to-coupling ratio of one coupled transition.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EdgeRatio {
    pub i: usize,
    pub j: usize,
    pub detuning: f64,
    pub coupling: f64,
    /// `|detuning| / |coupling|`, infinite for a zero coupling.
    pub ratio: f64,
    pub flagged: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MldReport {
    pub threshold: f64,
    pub edges: Vec<EdgeRatio>,
    pub min_ratio: f64,
    /// Any edge below threshold.
    pub flagged: bool,
}

pub const DEFAULT_MLD_THRESHOLD: f64 = 10.0;

/// Large-detuning diagnostics.
///
/// The detuning attributed to an edge is that of its higher-index level,
/// measured from level 0: in a ladder `0 - 1 - 2` the edge `(1, 2)` is
/// compared against the two-photon detuning of level 2.
pub fn mld_diagnostics(spec: &SystemSpec, threshold: f64) -> Result<MldReport> {
    if spec.couplings.is_empty() {
        return Err(Error::InvalidParameter(
            "large-detuning diagnostics need at least one coupling".into(),
        ));
    }
    let origin = spec.detunings[0];
    let edges: Vec<EdgeRatio> = spec
        .couplings
        .iter()
        .map(|c| {
            let (_, hi) = c.pair();
            let detuning = (spec.detunings[hi] - origin).abs();
            let ratio = if c.value == 0.0 {
                f64::INFINITY
            } else {
                detuning / c.value.abs()
            };
            EdgeRatio {
                i: c.i,
                j: c.j,
                detuning,
                coupling: c.value,
                ratio,
                flagged: ratio < threshold,
            }
        })
        .collect();
    let min_ratio = edges.iter().map(|e| e.ratio).fold(f64::INFINITY, f64::min);
    let flagged = edges.iter().any(|e| e.flagged);
    Ok(MldReport {
        threshold,
        edges,
        min_ratio,
        flagged,
    })
}

/// Two alternating step Hamiltonians; `step_a` acts first in each period.
#[derive(Debug, Clone, PartialEq)]
pub struct ModulationSchedule {
    step_a: SystemSpec,
    step_b: SystemSpec,
    tau_a: f64,
    tau_b: f64,
}

impl ModulationSchedule {
    pub fn new(step_a: SystemSpec, step_b: SystemSpec, tau_a: f64, tau_b: f64) -> Result<Self> {
        if step_a.dim() != step_b.dim() {
            return Err(Error::DimensionMismatch(step_a.dim(), step_b.dim()));
        }
        for tau in [tau_a, tau_b] {
            if !(tau.is_finite() && tau > 0.0) {
                return Err(Error::InvalidDuration(tau, "finite and > 0"));
            }
        }
        Ok(ModulationSchedule {
            step_a,
            step_b,
            tau_a,
            tau_b,
        })
    }

    /// Schedule whose second step repeats the first.
    pub fn unmodulated(step: SystemSpec, tau_a: f64, tau_b: f64) -> Result<Self> {
        Self::new(step.clone(), step, tau_a, tau_b)
    }

    pub fn step_a(&self) -> &SystemSpec {
        &self.step_a
    }

    pub fn step_b(&self) -> &SystemSpec {
        &self.step_b
    }

    pub fn tau_a(&self) -> f64 {
        self.tau_a
    }

    pub fn tau_b(&self) -> f64 {
        self.tau_b
    }

    pub fn period(&self) -> f64 {
        self.tau_a + self.tau_b
    }

    pub fn dim(&self) -> usize {
        self.step_a.dim()
    }

    pub fn hamiltonians(&self) -> (HamiltonianMatrix, HamiltonianMatrix) {
        (build_hamiltonian(&self.step_a), build_hamiltonian(&self.step_b))
    }
}

/// Normalized state vector.
#[derive(Debug, Clone, PartialEq)]
pub struct QuantumState(CVector);

pub const NORM_TOLERANCE: f64 = 1e-10;

impl QuantumState {
    pub fn new(amplitudes: CVector) -> Result<Self> {
        let norm = amplitudes.norm();
        if (norm - 1.0).abs() > NORM_TOLERANCE {
            return Err(Error::NotNormalized(norm));
        }
        Ok(QuantumState(amplitudes))
    }

    /// Bare basis state `|level>`.
    pub fn basis(dim: usize, level: usize) -> Result<Self> {
        if level >= dim {
            return Err(Error::LevelOutOfRange { level, dim });
        }
        let mut v = CVector::zeros(dim);
        v[level] = Complex64::new(1.0, 0.0);
        Ok(QuantumState(v))
    }

    pub(crate) fn from_unchecked(v: CVector) -> Self {
        QuantumState(v)
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn amplitudes(&self) -> &CVector {
        &self.0
    }

    pub fn populations(&self) -> Vec<f64> {
        self.0.iter().map(|z| z.norm_sqr()).collect()
    }

    pub fn norm(&self) -> f64 {
        self.0.norm()
    }
}

/// Convenience for tests and builders: real diagonal matrix.
pub fn diagonal(values: &[f64]) -> CMatrix {
    DMatrix::from_diagonal(&DVector::from_iterator(
        values.len(),
        values.iter().map(|&v| Complex64::new(v, 0.0)),
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn ladder(d1: f64, d2: f64, o1: f64, o2: f64) -> SystemSpec {
        SystemSpec::new(
            vec![0.0, d1, d2],
            vec![Coupling::new(0, 1, o1), Coupling::new(1, 2, o2)],
        )
        .unwrap()
    }

    #[test]
    fn empty_couplings_give_zero_matrix() {
        let spec = SystemSpec::new(vec![0.0; 3], vec![]).unwrap();
        let h = build_hamiltonian(&spec);
        assert!(h.matrix().iter().all(|z| *z == Complex64::new(0.0, 0.0)));
    }

    #[test]
    fn reference_ladder_matrix() {
        let h = build_hamiltonian(&ladder(60.0, 30.0, 1.0, 2.0));
        let expected = [
            [0.0, 1.0, 0.0],
            [1.0, 60.0, 2.0],
            [0.0, 2.0, 30.0],
        ];
        for i in 0..3 {
            for j in 0..3 {
                assert_eq!(h.matrix()[(i, j)], Complex64::new(expected[i][j], 0.0));
            }
        }
    }

    #[test]
    fn star_matrix() {
        let spec = SystemSpec::new(
            vec![0.0, 30.0, 53.0, 100.0],
            (1..4).map(|k| Coupling::new(0, k, 1.0)).collect(),
        )
        .unwrap();
        let h = build_hamiltonian(&spec);
        for k in 1..4 {
            assert_eq!(h.matrix()[(0, k)].re, 1.0);
            assert_eq!(h.matrix()[(k, 0)].re, 1.0);
        }
        assert_eq!(h.matrix()[(1, 2)].re, 0.0);
        assert_eq!(h.matrix()[(3, 3)].re, 100.0);
    }

    #[test]
    fn rejects_bad_edges() {
        let dup = SystemSpec::new(
            vec![0.0, 1.0, 2.0],
            vec![Coupling::new(0, 1, 1.0), Coupling::new(1, 0, 2.0)],
        );
        assert_eq!(dup, Err(Error::DuplicateEdge(0, 1)));
        let oob = SystemSpec::new(vec![0.0, 1.0], vec![Coupling::new(0, 2, 1.0)]);
        assert_eq!(oob, Err(Error::LevelOutOfRange { level: 2, dim: 2 }));
        let selfloop = SystemSpec::new(vec![0.0, 1.0], vec![Coupling::new(1, 1, 1.0)]);
        assert_eq!(selfloop, Err(Error::SelfLoop(1)));
        assert_eq!(SystemSpec::new(vec![0.0], vec![]), Err(Error::TooFewLevels(1)));
        assert!(SystemSpec::new(vec![0.0, f64::NAN], vec![]).is_err());
    }

    #[test]
    fn mld_ladder() {
        let report = mld_diagnostics(&ladder(60.0, 30.0, 1.0, 2.0), DEFAULT_MLD_THRESHOLD).unwrap();
        assert_eq!(report.min_ratio, 15.0);
        assert!(!report.flagged);
        assert_eq!(report.edges[0].ratio, 60.0);
    }

    #[test]
    fn mld_resonant() {
        let report = mld_diagnostics(&ladder(0.0, 0.0, 1.0, 2.0), 10.0).unwrap();
        assert_eq!(report.min_ratio, 0.0);
        assert!(report.flagged);
    }

    #[test]
    fn mld_vee() {
        let vee = SystemSpec::new(
            vec![0.0, -48.0, 0.0],
            vec![Coupling::new(0, 1, 1.0), Coupling::new(0, 2, 1.0)],
        )
        .unwrap();
        let report = mld_diagnostics(&vee, 10.0).unwrap();
        assert_eq!(report.edges[0].ratio, 48.0);
        assert!(!report.edges[0].flagged);
        assert_eq!(report.edges[1].ratio, 0.0);
        assert!(report.edges[1].flagged);
    }

    #[test]
    fn mld_zero_coupling_is_infinite() {
        let report = mld_diagnostics(&ladder(60.0, 30.0, 0.0, 2.0), 10.0).unwrap();
        assert!(report.edges[0].ratio.is_infinite());
        assert_eq!(report.min_ratio, 15.0);
        let none = SystemSpec::new(vec![0.0, 1.0], vec![]).unwrap();
        assert!(mld_diagnostics(&none, 10.0).is_err());
    }

    #[test]
    fn json_roundtrip_is_one_based() {
        let spec = ladder(60.0, 30.0, 1.0, 2.0);
        let text = serde_json::to_string(&spec).unwrap();
        assert_eq!(
            text,
            r#"{"labels":["1","2","3"],"detunings":[0.0,60.0,30.0],"couplings":[[1,2,1.0],[2,3,2.0]]}"#
        );
        let back: SystemSpec = serde_json::from_str(&text).unwrap();
        assert_eq!(back, spec);
    }

    #[test]
    fn json_rejects_unknown_key_by_name() {
        let err = serde_json::from_str::<SystemSpec>(r#"{"detuings":[0,1]}"#).unwrap_err();
        assert!(err.to_string().contains("detuings"), "{err}");
        let err = serde_json::from_str::<SystemSpec>(
            r#"{"detunings":[0,1],"couplings":[[1,2,1],[2,1,1]]}"#,
        )
        .unwrap_err();
        assert!(err.to_string().contains("duplicate"), "{err}");
    }

    #[test]
    fn schedule_validation() {
        let a = ladder(60.0, 30.0, 1.0, 2.0);
        let b = SystemSpec::new(vec![0.0, 1.0], vec![]).unwrap();
        assert!(ModulationSchedule::new(a.clone(), b, 1.0, 1.0).is_err());
        assert!(ModulationSchedule::new(a.clone(), a.clone(), 1.0, 0.0).is_err());
        let s = ModulationSchedule::new(a.clone(), a, 0.25, 0.5).unwrap();
        assert_eq!(s.period(), 0.75);
    }

    #[test]
    fn state_normalization() {
        assert!(QuantumState::basis(3, 3).is_err());
        let v = CVector::from_element(2, Complex64::new(1.0, 0.0));
        assert!(matches!(QuantumState::new(v), Err(Error::NotNormalized(_))));
        let p = QuantumState::basis(3, 1).unwrap().populations();
        assert_eq!(p, vec![0.0, 1.0, 0.0]);
    }

    fn arb_spec() -> impl Strategy<Value = SystemSpec> {
        (2usize..6)
            .prop_flat_map(|d| {
                (
                    prop::collection::vec(-100.0f64..100.0, d),
                    prop::collection::vec(prop::option::of(-5.0f64..5.0), d * (d - 1) / 2),
                )
            })
            .prop_map(|(det, edge_vals)| {
                let d = det.len();
                let mut couplings = Vec::new();
                let mut k = 0;
                for i in 0..d {
                    for j in i + 1..d {
                        if let Some(v) = edge_vals[k] {
                            couplings.push(Coupling::new(i, j, v));
                        }
                        k += 1;
                    }
                }
                SystemSpec::new(det, couplings).unwrap()
            })
    }

    proptest! {
        #[test]
        fn constructed_matrices_are_exactly_hermitian(spec in arb_spec()) {
            let h = build_hamiltonian(&spec);
            prop_assert_eq!(hermitian_deviation(h.matrix()), 0.0);
        }

        #[test]
        fn linear_in_couplings(spec in arb_spec(), c in -3.0f64..3.0) {
            let h = build_hamiltonian(&spec).into_matrix();
            let hc = build_hamiltonian(&spec.scale_couplings(c).unwrap()).into_matrix();
            for i in 0..spec.dim() {
                for j in 0..spec.dim() {
                    let want = if i == j { h[(i, j)] } else { h[(i, j)] * c };
                    prop_assert_eq!(hc[(i, j)], want);
                }
            }
        }

        #[test]
        fn matrix_reproduces_spec(spec in arb_spec()) {
            let h = build_hamiltonian(&spec);
            for (k, &d) in spec.detunings().iter().enumerate() {
                prop_assert_eq!(h.matrix()[(k, k)].re, d);
            }
            for c in spec.couplings() {
                prop_assert_eq!(h.matrix()[(c.i, c.j)].re, c.value);
                prop_assert_eq!(h.matrix()[(c.j, c.i)].re, c.value);
            }
        }
    }
}
