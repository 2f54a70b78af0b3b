use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    /// An input lies outside the domain of the operation (coordinate bounds,
    /// non-positive parameters, ...).
    #[error("domain error: {0}")]
    Domain(String),

    #[error("degenerate grid: {0}")]
    DegenerateGrid(String),

    #[error("empty window: no events in any quadrat")]
    EmptyWindow,

    #[error("insufficient data: need at least {needed}, got {got} ({what})")]
    InsufficientData {
        what: &'static str,
        needed: usize,
        got: usize,
    },

    #[error("degenerate regressor: log m has zero variance")]
    DegenerateRegressor,

    #[error("factors not identifiable: present cells form {} disconnected components: {}", .components.len(), format_components(.components))]
    Identifiability { components: Vec<Vec<String>> },

    #[error("degenerate cell ({city}, {facility}): c_i + f_j = {value} is not positive")]
    DegenerateCell {
        city: String,
        facility: String,
        value: f64,
    },

    #[error("curve family error: {0}")]
    CurveFamily(String),

    #[error("configuration error: {0}")]
    Config(String),

    #[error("{}line {line}: {message}", path_prefix(.path))]
    Format {
        path: Option<PathBuf>,
        line: u64,
        message: String,
    },

    #[error("numeric failure: {0}")]
    Numeric(String),

    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

/// Coarse error classes, used by the CLI to pick an exit code.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorClass {
    Config,
    Data,
    Numeric,
}

impl Error {
    pub fn class(&self) -> ErrorClass {
        match self {
            Error::Config(_) => ErrorClass::Config,
            Error::Numeric(_) | Error::DegenerateRegressor => ErrorClass::Numeric,
            _ => ErrorClass::Data,
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}

fn format_components(components: &[Vec<String>]) -> String {
    components
        .iter()
        .map(|c| format!("{{{}}}", c.join(", ")))
        .collect::<Vec<_>>()
        .join(" ")
}

fn path_prefix(path: &Option<PathBuf>) -> String {
    match path {
        Some(p) => format!("{}: ", p.display()),
        None => String::new(),
    }
}
