use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    /// Incompatible tensor or layer dimensions. `context` names the op or layer.
    #[error("shape error in {context}: {msg}")]
    Shape { context: String, msg: String },

    #[error("invalid input: {0}")]
    Input(String),

    /// A binary or text file that does not follow its format.
    #[error("malformed {format} data at byte offset {offset}: {msg}")]
    Format {
        format: &'static str,
        offset: u64,
        msg: String,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    pub(crate) fn shape(context: impl Into<String>, msg: impl Into<String>) -> Self {
        Error::Shape {
            context: context.into(),
            msg: msg.into(),
        }
    }

    pub(crate) fn input(msg: impl Into<String>) -> Self {
        Error::Input(msg.into())
    }

    /// Re-labels a shape error with the name of the layer it surfaced in.
    pub(crate) fn in_layer(self, layer: &str) -> Self {
        match self {
            Error::Shape { context, msg } => Error::Shape {
                context: layer.to_string(),
                msg: format!("{context}: {msg}"),
            },
            other => other,
        }
    }
}
