use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("invalid input: {0}")]
    InvalidInput(String),
    #[error("line {line}: {msg}")]
    Parse { line: usize, msg: String },
    #[error("io: {0}")]
    Io(String),
    #[error("atom-count guard: {nodes} transport nodes exceed the limit {limit}")]
    TooManyAtoms { nodes: usize, limit: usize },
    #[error("solver failure: {0}")]
    Solver(String),
    #[error("{0}")]
    Guard(String),
}

pub type Result<T> = std::result::Result<T, Error>;
