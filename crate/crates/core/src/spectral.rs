//! Dressed spectra, bare-level labeling and the perturbative three-level
//! picture.

use std::f64::consts::PI;

use nalgebra::SymmetricEigen;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::model::{HamiltonianMatrix, SystemSpec};
use crate::{CMatrix, C64};

/// Eigenpairs of a step Hamiltonian, ascending in energy.
#[derive(Debug, Clone)]
pub struct DressedSpectrum {
    eigenvalues: Vec<f64>,
    /// Column `k` is the dressed state with energy `eigenvalues[k]`.
    eigenvectors: CMatrix,
    /// Dressed index -> bare level.
    bare_map: Vec<usize>,
    /// `|<bare_map[k]|k>|^2`.
    overlaps: Vec<f64>,
}

/// Overlap at or below which a dressed label is considered ambiguous.
pub const LABEL_OVERLAP_MIN: f64 = 0.5;

impl DressedSpectrum {
    pub fn dim(&self) -> usize {
        self.eigenvalues.len()
    }

    pub fn eigenvalues(&self) -> &[f64] {
        &self.eigenvalues
    }

    pub fn eigenvectors(&self) -> &CMatrix {
        &self.eigenvectors
    }

    pub fn bare_map(&self) -> &[usize] {
        &self.bare_map
    }

    pub fn overlaps(&self) -> &[f64] {
        &self.overlaps
    }

    /// Any dressed state whose dominant bare weight is `<= 0.5`.
    pub fn ambiguous(&self) -> bool {
        self.overlaps.iter().any(|&o| o <= LABEL_OVERLAP_MIN)
    }

    /// Dressed index carrying the label of `bare`.
    pub fn dressed_index(&self, bare: usize) -> Option<usize> {
        self.bare_map.iter().position(|&b| b == bare)
    }

    /// Dressed energy of bare level `bare`, failing if its label is ambiguous.
    pub fn labelled_energy(&self, bare: usize) -> Result<f64> {
        let k = self.dressed_index(bare).ok_or(Error::LevelOutOfRange {
            level: bare,
            dim: self.dim(),
        })?;
        if self.overlaps[k] <= LABEL_OVERLAP_MIN {
            return Err(Error::AmbiguousLabeling {
                level: bare,
                overlap: self.overlaps[k],
            });
        }
        Ok(self.eigenvalues[k])
    }
}

pub fn eigendecompose(h: &HamiltonianMatrix) -> DressedSpectrum {
    let d = h.dim();
    let eig = SymmetricEigen::new(h.matrix().clone());
    let mut order: Vec<usize> = (0..d).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[a].total_cmp(&eig.eigenvalues[b]));

    let mut vectors = CMatrix::zeros(d, d);
    let mut values = Vec::with_capacity(d);
    for (k, &src) in order.iter().enumerate() {
        values.push(eig.eigenvalues[src]);
        let mut col = eig.eigenvectors.column(src).into_owned();
        let norm = col.norm();
        col /= C64::new(norm, 0.0);
        // First component of maximal magnitude is made real positive.
        let mut lead = 0;
        for i in 1..d {
            if col[i].norm() > col[lead].norm() + 1e-14 {
                lead = i;
            }
        }
        let phase = col[lead] / C64::new(col[lead].norm(), 0.0);
        col *= phase.conj();
        col[lead] = C64::new(col[lead].re, 0.0);
        vectors.set_column(k, &col);
    }

    let (bare_map, overlaps) = label_by_overlap(&vectors);
    DressedSpectrum {
        eigenvalues: values,
        eigenvectors: vectors,
        bare_map,
        overlaps,
    }
}

/// Greedy maximum-overlap assignment: pairs are taken in descending order of
/// `|<b|k>|^2`, ties going to the lower bare index.
fn label_by_overlap(vectors: &CMatrix) -> (Vec<usize>, Vec<f64>) {
    let d = vectors.nrows();
    let mut pairs = Vec::with_capacity(d * d);
    for b in 0..d {
        for k in 0..d {
            pairs.push((vectors[(b, k)].norm_sqr(), b, k));
        }
    }
    pairs.sort_by(|x, y| y.0.total_cmp(&x.0).then(x.1.cmp(&y.1)).then(x.2.cmp(&y.2)));
    let mut bare_used = vec![false; d];
    let mut map = vec![usize::MAX; d];
    let mut overlaps = vec![0.0; d];
    for (o, b, k) in pairs {
        if bare_used[b] || map[k] != usize::MAX {
            continue;
        }
        bare_used[b] = true;
        map[k] = b;
        overlaps[k] = o;
    }
    (map, overlaps)
}

/// Step duration putting the phase between the dressed states of bare levels
/// `target` and 0 at `(2n + 1) pi`.
pub fn transition_interval(h: &HamiltonianMatrix, target: usize, n: u32) -> Result<f64> {
    transition_interval_in(&eigendecompose(h), target, n)
}

pub fn transition_interval_in(spectrum: &DressedSpectrum, target: usize, n: u32) -> Result<f64> {
    let ground = spectrum.labelled_energy(0)?;
    let excited = spectrum.labelled_energy(target)?;
    odd_pi_over(excited, ground, n)
}

/// As [`transition_interval`] but with dressed states picked by ascending
/// energy: the gap is `E[upper] - E[0]` of the sorted spectrum. Used where
/// resonant couplings make bare labels meaningless.
pub fn transition_interval_ordered(h: &HamiltonianMatrix, upper: usize, n: u32) -> Result<f64> {
    let spectrum = eigendecompose(h);
    if upper == 0 || upper >= spectrum.dim() {
        return Err(Error::LevelOutOfRange {
            level: upper,
            dim: spectrum.dim(),
        });
    }
    let e = spectrum.eigenvalues();
    odd_pi_over(e[upper], e[0], n)
}

fn odd_pi_over(target: f64, reference: f64, n: u32) -> Result<f64> {
    let gap = target - reference;
    if !(gap > 0.0) {
        return Err(Error::NonPositiveGap { target, reference });
    }
    Ok(f64::from(2 * n + 1) * (PI / gap))
}

/// Ratio `(E2 - E1) / (E3 - E1)` of a three-level dressed spectrum, labels
/// taken from bare levels, and its distance from the odd integers `>= 3`.
pub fn spike_distance(spectrum: &DressedSpectrum) -> Result<(f64, f64)> {
    if spectrum.dim() != 3 {
        return Err(Error::InvalidParameter(format!(
            "spike distance needs a three-level spectrum, got {}",
            spectrum.dim()
        )));
    }
    let e = |bare| spectrum.eigenvalues()[spectrum.dressed_index(bare).unwrap()];
    let g2 = e(1) - e(0);
    let g3 = e(2) - e(0);
    if g3 == 0.0 || g2 == 0.0 || !(g2 / g3).is_finite() {
        return Err(Error::DegenerateGaps);
    }
    let ratio = g2 / g3;
    Ok((ratio, odd_distance(ratio)))
}

/// `min_{n >= 0} |r - (2n + 3)|`.
pub fn odd_distance(r: f64) -> f64 {
    let n = ((r - 3.0) / 2.0).round().max(0.0);
    (r - (2.0 * n + 3.0)).abs()
}

/// Perturbative picture of the ladder `0 -(W1)- 1 -(W2)- 2`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct PerturbativeThreeLevel {
    pub alpha: f64,
    pub xi1: f64,
    pub xi2: f64,
    pub x1: f64,
    pub x2: f64,
    pub e1: f64,
    pub e2: f64,
    pub e3: f64,
    /// `(E2 - E1) t`.
    pub theta1: f64,
    /// `(E3 - E1) t`.
    pub theta2: f64,
    /// The accumulated phase that is not locked to an odd multiple of pi,
    /// wrapped to `(-pi, pi]`.
    pub phi: f64,
}

pub const REGIME_X_MAX: f64 = 0.1;

pub fn perturbative_three_level(spec: &SystemSpec, duration: f64) -> Result<PerturbativeThreeLevel> {
    let (d1, d2, o1, o2) = ladder_parameters(spec)?;
    let alpha = if d2 == d1 {
        if o2 >= 0.0 {
            PI / 4.0
        } else {
            -PI / 4.0
        }
    } else {
        0.5 * (2.0 * o2 / (d2 - d1)).atan()
    };
    let root = ((d1 - d2).powi(2) + 4.0 * o2 * o2).sqrt();
    let xi1 = 0.5 * (d1 + d2 - root);
    let xi2 = 0.5 * (d1 + d2 + root);
    if xi1 == 0.0 {
        return Err(Error::Singular("xi1 = 0"));
    }
    if xi2 == 0.0 {
        return Err(Error::Singular("xi2 = 0"));
    }
    let x1 = o1 * alpha.sin() / xi1;
    let x2 = o1 * alpha.cos() / xi2;
    if x1.abs() >= REGIME_X_MAX || x2.abs() >= REGIME_X_MAX {
        return Err(Error::RegimeViolation {
            x1: x1.abs(),
            x2: x2.abs(),
        });
    }
    let e1 = -xi1 * x1 * x1 - xi2 * x2 * x2;
    let e2 = xi1 * (1.0 + x1 * x1);
    let e3 = xi2 * (1.0 + x2 * x2);
    let theta1 = (e2 - e1) * duration;
    let theta2 = (e3 - e1) * duration;
    let free = if odd_pi_offset(theta1) <= odd_pi_offset(theta2) {
        theta2
    } else {
        theta1
    };
    Ok(PerturbativeThreeLevel {
        alpha,
        xi1,
        xi2,
        x1,
        x2,
        e1,
        e2,
        e3,
        theta1,
        theta2,
        phi: wrap_phase(free),
    })
}

/// `(Delta1, Delta2, Omega1, Omega2)` of a three-level ladder, detunings
/// measured from level 0.
pub(crate) fn ladder_parameters(spec: &SystemSpec) -> Result<(f64, f64, f64, f64)> {
    if spec.dim() != 3 {
        return Err(Error::InvalidParameter(format!(
            "perturbative analysis needs a three-level ladder, got {} levels",
            spec.dim()
        )));
    }
    if spec.coupling(0, 2) != 0.0 {
        return Err(Error::InvalidParameter(
            "perturbative analysis needs a ladder without a 1-3 coupling".into(),
        ));
    }
    let det = spec.detunings();
    Ok((
        det[1] - det[0],
        det[2] - det[0],
        spec.coupling(0, 1),
        spec.coupling(1, 2),
    ))
}

/// Distance of `theta` from the nearest odd multiple of pi.
fn odd_pi_offset(theta: f64) -> f64 {
    wrap_phase(theta - PI).abs()
}

/// Wrap to `(-pi, pi]`.
pub fn wrap_phase(theta: f64) -> f64 {
    let mut w = theta.rem_euclid(2.0 * PI);
    if w > PI {
        w -= 2.0 * PI;
    }
    w
}
