use thiserror::Error;

#[derive(Debug, Error)]
pub enum DataError {
    #[error("I/O error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },

    #[error("{file}: {reason} at byte offset {offset}")]
    Format {
        file: String,
        offset: u64,
        reason: String,
    },

    #[error("need {requested} instances of classes {class_a}/{class_b}, only {available} available")]
    InsufficientInstances {
        class_a: u8,
        class_b: u8,
        requested: usize,
        available: usize,
    },

    #[error("feature column {column} ({name}) has zero variance and cannot be standardized")]
    ZeroVariance { column: usize, name: String },

    #[error("configuration error: {0}")]
    Config(String),

    #[error("cache error: {0}")]
    Cache(String),

    #[error(transparent)]
    Core(#[from] ipg_core::Error),
}

pub type Result<T, E = DataError> = std::result::Result<T, E>;

pub(crate) fn io_err(path: &std::path::Path) -> impl FnOnce(std::io::Error) -> DataError + '_ {
    move |source| DataError::Io {
        path: path.display().to_string(),
        source,
    }
}
