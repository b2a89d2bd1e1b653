use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid MDP: {0}")]
    InvalidMdp(String),

    #[error("invalid parameter: {0}")]
    InvalidParam(String),

    #[error("outside the domain of the bound: {0}")]
    Domain(String),

    #[error("invalid config: {0}")]
    Config(String),

    #[error("schedule extends past the end of the trace (needs t = {needed}, trace ends at t = {last})")]
    ScheduleBeyondTrace { needed: u64, last: u64 },

    #[error("seed {seed}: {cause}")]
    Trial { seed: u64, cause: Box<Error> },

    #[error("malformed JSON: {0}")]
    Json(serde_json::Error),

    #[error("csv: {0}")]
    Csv(csv::Error),

    #[error("io: {0}")]
    Io(std::io::Error),
}

// The wrapped message is already in the display text, so these are not
// exposed as sources; error chains would otherwise print it twice.
impl From<serde_json::Error> for Error {
    fn from(e: serde_json::Error) -> Self {
        Error::Json(e)
    }
}

impl From<csv::Error> for Error {
    fn from(e: csv::Error) -> Self {
        Error::Csv(e)
    }
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e)
    }
}

pub type Result<T> = std::result::Result<T, Error>;
