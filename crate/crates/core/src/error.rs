use thiserror::Error;

/// Errors produced anywhere in the crate.
#[derive(Debug, Error)]
pub enum Error {
    #[error("degenerate axis")]
    DegenerateAxis,
    #[error("unsupported irrep order {0}")]
    UnsupportedIrrep(usize),
    #[error("input not on sphere (norm {0})")]
    NotOnSphere(f64),
    #[error("basis solver convention mismatch for (l_in={l_in}, l_out={l_out}, l_f={l_f})")]
    BasisConvention { l_in: usize, l_out: usize, l_f: usize },
    #[error("kernel extent must be odd, got {0}")]
    EvenKernel(usize),
    #[error("invalid radial profile: {0}")]
    Radial(String),
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("loss must be a scalar, got shape {0:?}")]
    NonScalarLoss(Vec<usize>),
    #[error("field type mismatch: expected {expected}, got {actual}")]
    TypeMismatch { expected: String, actual: String },
    #[error("invalid field type: {0}")]
    FieldType(String),
    #[error("rotation is not octahedral")]
    NonOctahedral,
    #[error("channel budget: {0}")]
    Budget(String),
    #[error("degenerate pairing")]
    DegeneratePairing,
    #[error("wilcoxon test needs at least {needed} nonzero differences, got {got}")]
    TooFewPairs { needed: usize, got: usize },
    #[error("empty surface for label {0}")]
    EmptySurface(i32),
    #[error("invalid synthetic spec: {0}")]
    Synth(String),
    #[error("{0}")]
    Format(String),
    #[error("invalid config: {0}")]
    Config(String),
    #[error("{0}")]
    Runtime(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
