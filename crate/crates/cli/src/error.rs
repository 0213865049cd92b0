use flashmeans::KMeansError;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error(transparent)]
    Engine(#[from] KMeansError),
    #[error("output error: {0}")]
    Output(#[from] std::io::Error),
    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
    #[error("internal error: {0}")]
    Internal(String),
}

pub const EXIT_USAGE: i32 = 1;
pub const EXIT_FORMAT: i32 = 2;
pub const EXIT_INTERNAL: i32 = 3;

fn engine_code(e: &KMeansError) -> i32 {
    match e {
        KMeansError::InvalidArgument(_) | KMeansError::Io { .. } => EXIT_USAGE,
        KMeansError::Format { .. } => EXIT_FORMAT,
        KMeansError::Ingest { source, .. } => engine_code(source),
        KMeansError::Contract(_) | KMeansError::Resource(_) | KMeansError::Csv(_) => EXIT_INTERNAL,
    }
}

/// Process exit status for an error.
pub fn exit_code(e: &CliError) -> i32 {
    match e {
        CliError::Usage(_) => EXIT_USAGE,
        CliError::Engine(k) => engine_code(k),
        CliError::Output(_) | CliError::Csv(_) | CliError::Json(_) | CliError::Internal(_) => {
            EXIT_INTERNAL
        }
    }
}
