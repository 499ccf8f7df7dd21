use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("numeric error: {0}")]
    Numeric(String),

    /// A map or function was evaluated at a point where its derivative is undefined.
    #[error("singular point: {0}")]
    Singularity(String),

    #[error("configuration error: {0}")]
    Config(String),

    /// A precondition of the stability guarantee does not hold (negative weight,
    /// indefinite inertia).
    #[error("stability contract violated: {0}")]
    Contract(String),

    #[error("at node `{node}`: {source}")]
    AtNode {
        node: String,
        #[source]
        source: Box<Error>,
    },

    #[error("at t = {time:.4}: {source}")]
    AtTime {
        time: f64,
        #[source]
        source: Box<Error>,
    },

    #[error("record {index}: {source}")]
    AtRecord {
        index: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("io: {0}")]
    Io(#[from] std::io::Error),

    #[error("parse: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub fn at_node(self, node: impl Into<String>) -> Self {
        Error::AtNode {
            node: node.into(),
            source: Box::new(self),
        }
    }

    /// Innermost error, with node/time/record context stripped.
    pub fn root_cause(&self) -> &Error {
        match self {
            Error::AtNode { source, .. }
            | Error::AtTime { source, .. }
            | Error::AtRecord { source, .. } => source.root_cause(),
            other => other,
        }
    }

    pub fn is_contract_violation(&self) -> bool {
        matches!(self.root_cause(), Error::Contract(_))
    }
}

pub type Result<T> = std::result::Result<T, Error>;
