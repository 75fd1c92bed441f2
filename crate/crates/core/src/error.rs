use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

/// Failure modes of the simulator.
///
/// Variants split into two families: input/validation problems and numeric
/// failures discovered while computing. [`Error::is_numeric`] tells them apart
/// so front ends can map them onto distinct exit codes.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("system needs at least 2 levels, got {0}")]
    TooFewLevels(usize),
    #[error("expected {expected} {what}, got {got}")]
    LengthMismatch {
        what: &'static str,
        expected: usize,
        got: usize,
    },
    #[error("level index {level} out of range for a {dim}-level system")]
    LevelOutOfRange { level: usize, dim: usize },
    #[error("coupling edge ({0}, {0}) is a self loop")]
    SelfLoop(usize),
    #[error("duplicate coupling edge between levels {0} and {1}")]
    DuplicateEdge(usize, usize),
    #[error("non-finite {0}")]
    NonFinite(&'static str),
    #[error("dimension mismatch: {0} vs {1}")]
    DimensionMismatch(usize, usize),
    #[error("invalid duration {0}: must be {1}")]
    InvalidDuration(f64, &'static str),
    #[error("state norm {0} is not 1")]
    NotNormalized(f64),
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
    #[error("empty sweep grid")]
    EmptyGrid,

    #[error("matrix is not unitary (max |U^dag U - I| = {0:e})")]
    NotUnitary(f64),
    #[error("non-positive gap between dressed energies {target} (target) and {reference} (reference)")]
    NonPositiveGap { target: f64, reference: f64 },
    #[error("ambiguous dressed labeling for level {level}: max overlap {overlap:.4}")]
    AmbiguousLabeling { level: usize, overlap: f64 },
    #[error("perturbation theory singular: {0}")]
    Singular(&'static str),
    #[error("outside the large-detuning regime: |x1| = {x1:.4}, |x2| = {x2:.4}")]
    RegimeViolation { x1: f64, x2: f64 },
    #[error("degenerate dressed gaps")]
    DegenerateGaps,
    #[error("norm drifted by {0:e} during propagation")]
    NormDrift(f64),
    #[error("substep refinement did not converge, last change {0:e}")]
    NoConvergence(f64),
    #[error("traces do not overlap in time")]
    DisjointTraces,
}

impl Error {
    /// True for failures of the numerics rather than of the inputs.
    pub fn is_numeric(&self) -> bool {
        matches!(
            self,
            Error::NotUnitary(_)
                | Error::NonPositiveGap { .. }
                | Error::AmbiguousLabeling { .. }
                | Error::Singular(_)
                | Error::RegimeViolation { .. }
                | Error::DegenerateGaps
                | Error::NormDrift(_)
                | Error::NoConvergence(_)
                | Error::DisjointTraces
        )
    }
}
