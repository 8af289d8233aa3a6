use shotcap_core::annotation::AnnotationError;
use shotcap_core::metrics::MetricError;
use shotcap_core::pipeline::PipelineError;
use shotcap_core::tactics::TacticError;
use shotcap_model::ModelError;

/// Failure of a command, carrying its exit code class.
#[derive(Debug, thiserror::Error)]
pub enum CliError {
    /// Bad flags or configuration (exit 2).
    #[error("{0}")]
    Usage(String),
    /// Unreadable or unwritable files (exit 2).
    #[error("{0}")]
    Io(String),
    /// The inputs were read but the work failed (exit 1).
    #[error("{0}")]
    Domain(String),
}

impl CliError {
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Domain(_) => 1,
            CliError::Usage(_) | CliError::Io(_) => 2,
        }
    }

    pub fn io(path: &std::path::Path, e: impl std::fmt::Display) -> Self {
        CliError::Io(format!("{}: {e}", path.display()))
    }
}

impl From<PipelineError> for CliError {
    fn from(e: PipelineError) -> Self {
        match e {
            PipelineError::Io(_) => CliError::Io(e.to_string()),
            other => CliError::Domain(other.to_string()),
        }
    }
}

impl From<ModelError> for CliError {
    fn from(e: ModelError) -> Self {
        match e {
            ModelError::Io(_) => CliError::Io(e.to_string()),
            ModelError::Pipeline(p) => p.into(),
            ModelError::InvalidConfig(_) => CliError::Usage(e.to_string()),
            other => CliError::Domain(other.to_string()),
        }
    }
}

impl From<AnnotationError> for CliError {
    fn from(e: AnnotationError) -> Self {
        CliError::Domain(e.to_string())
    }
}

impl From<TacticError> for CliError {
    fn from(e: TacticError) -> Self {
        match e {
            TacticError::InvalidParameter(_) => CliError::Usage(e.to_string()),
            other => CliError::Domain(other.to_string()),
        }
    }
}

impl From<MetricError> for CliError {
    fn from(e: MetricError) -> Self {
        CliError::Domain(e.to_string())
    }
}
