use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    Invalid(String),

    #[error("gradient undefined at boundary (theta = {0:?})")]
    BoundaryGradient(Vec<f64>),

    #[error("fisher information undefined at boundary (theta = {0:?})")]
    BoundaryFisher(Vec<f64>),

    #[error("atomic conditional has no density; use the atom API")]
    AtomicConditional,

    #[error("degenerate prior: zero weight on every grid point")]
    DegeneratePrior,

    #[error("posterior collapsed: data impossible under prior support ({0})")]
    PosteriorCollapsed(String),

    #[error("infinite instantaneous regret at step {step}: {diagnostic}")]
    InfiniteRegret { step: usize, diagnostic: String },

    #[error("box [{lo}, {hi}] exits (0, 1); use the grid engine for clipped boxes")]
    BoxOutsideUnitInterval { lo: f64, hi: f64 },

    #[error("n = {0} is too large for exact enumeration with finite m; use the Monte Carlo harness")]
    TooLargeForEnumeration(usize),

    #[error("{0} requires the grid engine")]
    RequiresGrid(&'static str),

    #[error("Schur complement undefined: {0}")]
    SchurUndefined(&'static str),

    #[error("empty candidate set")]
    EmptyCandidates,

    #[error("observation impossible under all atoms and base")]
    ObservationImpossible,

    #[error("non-finite value: {0}")]
    NonFinite(String),

    #[error("invalid config:\n  {}", .0.join("\n  "))]
    Config(Vec<String>),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}: {message}")]
    Parse { path: PathBuf, message: String },
}

pub type Result<T> = std::result::Result<T, Error>;
