//! Simulation of multilevel atoms under periodic two-step modulation.
//!
//! A system is a set of static [`model::SystemSpec`]s (detunings plus a
//! coupling graph). Alternating two of them with durations `tau_a`, `tau_b`
//! gives a [`model::ModulationSchedule`]; [`propagation`] evolves states
//! through it exactly, [`effective`] extracts the one-period generator, and
//! [`scenarios`] builds the named application setups and parameter sweeps.

pub mod effective;
pub mod error;
pub mod model;
pub mod propagation;
pub mod scenarios;
pub mod spectral;

pub use error::{Error, Result};

pub type C64 = num_complex::Complex64;
pub type CMatrix = nalgebra::DMatrix<C64>;
pub type CVector = nalgebra::DVector<C64>;

/// `max |U^dag U - I|`.
pub fn unitarity_deviation(u: &CMatrix) -> f64 {
    let g = u.adjoint() * u;
    let n = g.nrows();
    let mut dev = 0.0f64;
    for i in 0..n {
        for j in 0..n {
            let want = if i == j { 1.0 } else { 0.0 };
            dev = dev.max((g[(i, j)] - C64::new(want, 0.0)).norm());
        }
    }
    dev
}

/// `max |a - b|` over entries.
pub fn max_abs_diff(a: &CMatrix, b: &CMatrix) -> f64 {
    a.iter()
        .zip(b.iter())
        .map(|(x, y)| (x - y).norm())
        .fold(0.0, f64::max)
}
