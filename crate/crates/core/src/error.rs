use thiserror::Error;

/// Errors raised anywhere in the toolkit.
#[derive(Debug, Error)]
pub enum Error {
    #[error("{op}: shape mismatch between {lhs:?} and {rhs:?}")]
    Shape {
        op: &'static str,
        lhs: Vec<usize>,
        rhs: Vec<usize>,
    },
    #[error("{op}: non-finite value produced{}", fmt_context(.context))]
    Numeric { op: &'static str, context: String },
    #[error("contract violation: {0}")]
    Contract(String),
    #[error("format error: {0}")]
    Format(String),
    #[error("unsupported format version {found} (expected {expected})")]
    Version { found: u32, expected: u32 },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

fn fmt_context(context: &str) -> String {
    if context.is_empty() {
        String::new()
    } else {
        format!(" in {context}")
    }
}

impl Error {
    pub(crate) fn contract(msg: impl Into<String>) -> Self {
        Error::Contract(msg.into())
    }

    pub(crate) fn format(msg: impl Into<String>) -> Self {
        Error::Format(msg.into())
    }

    /// Attaches a location (layer, phase, batch) to numeric failures.
    pub fn within(self, location: impl Into<String>) -> Self {
        match self {
            Error::Numeric { op, context } => {
                let location = location.into();
                let context = if context.is_empty() {
                    location
                } else {
                    format!("{location}/{context}")
                };
                Error::Numeric { op, context }
            }
            other => other,
        }
    }

    pub fn is_numeric(&self) -> bool {
        matches!(self, Error::Numeric { .. })
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
