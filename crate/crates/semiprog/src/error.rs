use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("dimension mismatch: {0}")]
    Dimension(String),
    #[error("invalid subsystem index {index} for {count} subsystems")]
    Subsystem { index: usize, count: usize },
    #[error("matrix is not square ({rows}x{cols})")]
    NotSquare { rows: usize, cols: usize },
    #[error("invalid input: {0}")]
    Invalid(String),
    #[error("not a valid state: {0}")]
    NotAState(String),
    #[error("map is not CPTP: {0}")]
    NotCptp(String),
    #[error("map is not HPTP: {0}")]
    NotHptp(String),
    #[error("jump operator {0} is not proportional to a Pauli string")]
    NonPauliJump(usize),
    #[error("Hamiltonian must vanish for a Pauli Lindbladian")]
    NonzeroHamiltonian,
    #[error("channel set is linearly dependent (Gram rank {rank} < {count})")]
    DependentChannels { rank: usize, count: usize },
    #[error("unsupported Lindbladian: {0}")]
    Unsupported(String),
    #[error("solver failure: {0}")]
    Solver(String),
    #[error("parse error: {0}")]
    Parse(String),
}

pub type Result<T> = std::result::Result<T, Error>;
