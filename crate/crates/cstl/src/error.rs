use thiserror::Error;

#[derive(Debug, Error)]
pub enum CstlError {
    #[error("formula syntax error at position {pos}: {msg}")]
    Syntax { pos: usize, msg: String },
    #[error("dimension mismatch: {0}")]
    Dimension(String),
    #[error("invalid interval [{a}, {b}]")]
    Interval { a: f64, b: f64 },
    #[error("unsupported spectrum: {0}")]
    UnsupportedSpectrum(String),
    #[error("ill-conditioned eigenvector matrix (cond {cond:.3e}); supply a Jordan form in the problem file")]
    IllConditioned { cond: f64 },
    #[error("predicate is uncontrollable: {0}")]
    Uncontrollable(String),
    #[error("configuration error: {0}")]
    Config(String),
    #[error("encoding gap: {0}")]
    EncodingGap(String),
    #[error("problem file error: {0}")]
    Problem(String),
    #[error("signal coverage error: {0}")]
    Coverage(String),
    #[error("negation over Until is not representable in negation normal form")]
    NegatedUntil,
    #[error(transparent)]
    Milp(#[from] milp::MilpError),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("serialization error: {0}")]
    Serialize(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, CstlError>;
