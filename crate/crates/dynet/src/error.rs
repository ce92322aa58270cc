use thiserror::Error;

/// Errors produced by the estimators and the simulation machinery.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid dataset: {0}")]
    InvalidDataset(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("model is unstable: {0}")]
    UnstableModel(String),

    #[error("simulation diverged at sample {sample}")]
    SimulationDiverged { sample: usize },

    #[error("model order {order} exceeds sample count {samples}")]
    OrderTooLarge { order: usize, samples: usize },

    #[error("insufficient data: {0}")]
    InsufficientData(String),

    #[error("degenerate input: {0}")]
    DegenerateInput(String),

    #[error("degenerate fit: {0}")]
    DegenerateFit(String),

    #[error("numerical failure: {0}")]
    NumericalFailure(String),

    #[error("model generation failed after {attempts} rejections; lower gains or edge density")]
    GenerationFailure { attempts: usize },

    #[error("degenerate ground truth: {0}")]
    DegenerateTruth(String),

    #[error("protocol error: {0}")]
    Protocol(String),

    #[error("internal consistency violation: {0}")]
    InternalConsistency(String),

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    /// Stable machine-readable tag for each variant.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::InvalidDataset(_) => "invalid_dataset",
            Error::InvalidArgument(_) => "invalid_argument",
            Error::UnstableModel(_) => "unstable_model",
            Error::SimulationDiverged { .. } => "simulation_diverged",
            Error::OrderTooLarge { .. } => "order_too_large",
            Error::InsufficientData(_) => "insufficient_data",
            Error::DegenerateInput(_) => "degenerate_input",
            Error::DegenerateFit(_) => "degenerate_fit",
            Error::NumericalFailure(_) => "numerical_failure",
            Error::GenerationFailure { .. } => "generation_failure",
            Error::DegenerateTruth(_) => "degenerate_truth",
            Error::Protocol(_) => "protocol_error",
            Error::InternalConsistency(_) => "internal_consistency",
            Error::Csv(_) => "csv_error",
            Error::Io(_) => "io_error",
            Error::Json(_) => "json_error",
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
