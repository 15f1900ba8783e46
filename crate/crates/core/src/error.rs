use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("configuration error: {0}")]
    Config(String),

    #[error("numerical failure in {context}: {message}")]
    Numerical { context: String, message: String },

    #[error("protocol error on worker {worker}: {message}")]
    Protocol { worker: usize, message: String },

    #[error("routing error on worker {worker}: partition {partition} is not owned here")]
    Routing { worker: usize, partition: usize },

    #[error("transport failure between worker {from} and worker {to}: {message}")]
    Transport {
        from: usize,
        to: usize,
        message: String,
    },

    #[error("watchdog expired on worker {worker} after {seconds:.1}s without progress; state: {state}")]
    Watchdog {
        worker: usize,
        seconds: f64,
        state: String,
    },

    #[error("{path}:{line}: {message}")]
    Parse {
        path: String,
        line: u64,
        message: String,
    },

    #[error("malformed record: {0}")]
    Format(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub fn config(msg: impl Into<String>) -> Self {
        Error::Config(msg.into())
    }

    pub fn numerical(context: impl Into<String>, message: impl Into<String>) -> Self {
        Error::Numerical {
            context: context.into(),
            message: message.into(),
        }
    }

    /// Prefixes the context of a numerical error, leaving other variants untouched.
    pub fn within(self, outer: impl std::fmt::Display) -> Self {
        match self {
            Error::Numerical { context, message } => Error::Numerical {
                context: format!("{outer}: {context}"),
                message,
            },
            other => other,
        }
    }
}
