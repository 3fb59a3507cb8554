use thiserror::Error;

/// Error type shared by every module of the crate.
#[derive(Debug, Error)]
pub enum Error {
    #[error("grid size must be even, got {0}")]
    OddGridSize(usize),
    #[error("grid size must be at least 8, got {0}")]
    GridTooSmall(usize),
    #[error("grid half-width must be positive, got {0}")]
    NonPositiveHalfWidth(f64),
    #[error("sampled value is not finite at node ({j}, {k})")]
    NonFiniteSample { j: usize, k: usize },
    #[error("fields live on different grids")]
    GridMismatch,
    #[error("support leaks into the outer grid frame (max |f| = {max_frame:e} on the frame band)")]
    SupportMargin { max_frame: f64 },
    #[error("|gamma| falls to {min:e}, below the floor {floor:e}")]
    VanishingConductivity { min: f64, floor: f64 },
    #[error("gamma winds around the origin on grid line {line} (winding number {winding})")]
    BranchAmbiguity { line: usize, winding: i32 },
    #[error("recovered log gamma does not decay at the grid frame (max {max:e}, tol {tol:e})")]
    NonDecayingSolution { max: f64, tol: f64 },
    #[error("fixed point is not contracting at |lambda| = {lambda_abs} (residual {residual:e})")]
    NotContractive { lambda_abs: f64, residual: f64 },
    #[error("no convergence after {0} iterations")]
    MaxIterations(usize),
    #[error("phase exponent {0} exceeds the overflow budget")]
    ExponentialOverflow(f64),
    #[error("mu solution has no convergence certificate")]
    NotConverged,
    #[error("potential support lies within {0} cells of the contour")]
    ContourTooTight(usize),
    #[error("test function support is not covered by the w samples")]
    SupportNotCovered,
    #[error("dataset contains {0} failed samples")]
    PartialDataset(usize),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error("malformed file: {0}")]
    Format(String),
}

pub type Result<T> = std::result::Result<T, Error>;
