use thiserror::Error;

/// Errors shared across the solver, operator, merge, and storage layers.
#[derive(Debug, Error)]
pub enum Error {
    #[error("non-finite value in {0}")]
    NonFinite(String),

    #[error("grid dimensions must be powers of two >= 4, got {h}x{w}")]
    BadGrid { h: usize, w: usize },

    #[error("shape mismatch in {context}: expected {expected}, got {got}")]
    ShapeMismatch {
        context: String,
        expected: String,
        got: String,
    },

    #[error("weight schema mismatch: {0}")]
    SchemaMismatch(String),

    #[error("lineage mismatch: {0}")]
    LineageMismatch(String),

    #[error("simulation diverged at step {step}: {detail}")]
    SimulationDiverged { step: usize, detail: String },

    #[error("water depth lost positivity at step {step}")]
    PositivityLoss { step: usize },

    #[error("CFL violation at step {step}: number {cfl:.3} exceeds limit {limit}")]
    CflViolation { step: usize, cfl: f64, limit: f64 },

    #[error("degenerate family axis: lambda_low == lambda_high")]
    DegenerateAxis,

    #[error("degenerate truth at frame {frame}: zero norm")]
    DegenerateTruth { frame: usize },

    #[error("invalid parameter: {0}")]
    InvalidParam(String),

    #[error("format error: {0}")]
    Format(String),

    #[error("checkpoint corrupted: {0}")]
    Corrupt(String),

    #[error("missing artifact: {0}")]
    MissingArtifact(String),

    #[error("stale inputs: {0}")]
    StaleInputs(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
