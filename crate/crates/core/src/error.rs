use thiserror::Error;

/// Errors produced while building, configuring, or evaluating a model.
#[derive(Debug, Error)]
pub enum Error {
    /// A model description violates one of its structural invariants.
    #[error("invalid model `{model}`: {reason}")]
    InvalidModel { model: String, reason: String },

    /// Kernel dimensions are inconsistent (e.g. non-integral head width).
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    /// Unknown preset name. `valid` lists the accepted names.
    #[error("unknown {kind} preset `{name}` (valid: {})", valid.join(", "))]
    UnknownPreset {
        kind: &'static str,
        name: String,
        valid: Vec<String>,
    },

    /// Configuration problem, reported with the offending field path.
    #[error("configuration error at `{path}`: {reason}")]
    Config { path: String, reason: String },

    /// Unit-suffixed quantity could not be parsed.
    #[error("cannot parse {what} `{input}`: {reason}")]
    Unit {
        what: &'static str,
        input: String,
        reason: String,
    },

    /// Not even the smallest tile fits the destination level.
    #[error("infeasible kernel {kernel}: minimal tile needs {needed} bytes but `{level}` holds {capacity}")]
    InfeasibleKernel {
        kernel: String,
        level: String,
        needed: u64,
        capacity: u64,
    },

    /// A kernel failed while timing a graph.
    #[error("step {step}, {class}: {source}")]
    InKernel {
        step: usize,
        class: String,
        #[source]
        source: Box<Error>,
    },

    /// A plan does not describe the kernel it is replayed against.
    #[error("plan/kernel mismatch: {0}")]
    PlanMismatch(String),

    /// Baseline row requested by a speedup table is absent.
    #[error("missing baseline: {0}")]
    MissingBaseline(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    pub(crate) fn config(path: impl Into<String>, reason: impl Into<String>) -> Self {
        Error::Config {
            path: path.into(),
            reason: reason.into(),
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
