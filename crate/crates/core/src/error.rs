use thiserror::Error;

#[derive(Error, Debug)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("{0} outside of the supported range")]
    Range(String),
    #[error("IMU samples do not cover [{start}, {end}] s")]
    Coverage { start: f64, end: f64 },
    #[error("format error: {0}")]
    Format(String),
    #[error("parse error at line {line}: {msg}")]
    Parse { line: usize, msg: String },
    #[error("validation error: {0}")]
    Validation(String),
    #[error("configuration error: {0}")]
    Config(String),
    #[error("point behind camera (depth {depth} m)")]
    Cheirality { depth: f64 },
    #[error("degenerate motion: {0}")]
    DegenerateMotion(String),
    #[error("Levenberg-Marquardt failed to converge: {0}")]
    Convergence(String),
    #[error("I/O error on {path}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn io(path: impl AsRef<std::path::Path>, source: std::io::Error) -> Self {
        Error::Io { path: path.as_ref().display().to_string(), source }
    }
}
