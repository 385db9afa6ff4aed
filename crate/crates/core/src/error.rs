use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("invalid parameters: {0}")]
    InvalidParams(String),
    #[error("quasimomentum level {got} does not match cell level {want}")]
    LevelMismatch { got: u32, want: u32 },
    #[error("level {0} is below the minimum for this operation")]
    LevelTooLow(u32),
    #[error("potential window needs blocks {from}..={to} but only {available} are available")]
    MissingBlocks { from: u32, to: u32, available: u32 },
    #[error("recipe is not Hermitian at block {r}, index ({q1}, {q2})")]
    NonHermitianRecipe { r: u32, q1: i64, q2: i64 },
    #[error("matrix is not Hermitian: max deviation {deviation:e} exceeds {tolerance:e}")]
    NonHermitian { deviation: f64, tolerance: f64 },
    #[error("basis dimension {dim} exceeds the configured maximum {max}")]
    DimensionTooLarge { dim: usize, max: usize },
    #[error("empty basis")]
    EmptyBasis,
    #[error("resonant contour: eigenvalue {eigenvalue:e} lies {gap:e} from the contour of radius {radius:e}")]
    ResonantContour {
        eigenvalue: f64,
        gap: f64,
        radius: f64,
    },
    #[error("contour encloses {0} unperturbed eigenvalues, expected exactly one")]
    ContourCount(usize),
    #[error("resonant pair j=({j0}, {j1}) q=({q0}, {q1})")]
    ResonantPair { j0: i64, j1: i64, q0: i64, q1: i64 },
    #[error("quadrature did not converge: last change {change:e} at {nodes} nodes")]
    NonConvergence { change: f64, nodes: usize },
    #[error("z coincides with an eigenvalue (pole)")]
    Pole,
    #[error("no sign change in the bracket at phi = {phi}")]
    BracketFailure { phi: f64 },
    #[error("finite-difference step underflow")]
    StepUnderflow,
    #[error("offset vector is a cell vertex (b0 = 0)")]
    VertexOffset,
    #[error("determinant vanishes on the contour")]
    ZeroOnContour,
    #[error("contour too coarse: winding {winding} not integral at {nodes} nodes")]
    ContourTooCoarse { winding: f64, nodes: usize },
    #[error("disk count {count} exceeds four times the cap {cap}")]
    TooManyDisks { count: usize, cap: f64 },
    #[error("more than two small-b poles survived refinement: {0}")]
    TooManyPoles(usize),
    #[error("angle domains are not nested at level {0}")]
    NotNested(u32),
    #[error("resonant point: plane-wave overlap {overlap} below 1/2")]
    ResonantPoint { overlap: f64 },
    #[error("incompatible quasimomenta across records")]
    IncompatibleRecords,
}

pub type Result<T> = std::result::Result<T, Error>;
