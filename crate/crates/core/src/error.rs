use thiserror::Error;

pub type Result<T> = std::result::Result<T, DeblurError>;

#[derive(Debug, Error)]
pub enum DeblurError {
    #[error("dimension error: {0}")]
    Dimension(String),

    #[error("haar depth {depth} does not divide a {height}x{width} grid")]
    Depth {
        depth: usize,
        height: usize,
        width: usize,
    },

    #[error("spectrum is not conjugate symmetric (imaginary residual {residual:.3e}, norm {norm:.3e})")]
    Symmetry { residual: f64, norm: f64 },

    #[error("domain error: {0}")]
    Domain(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    /// Non-finite objective or gradient. `iterate` is the point at which it happened.
    #[error("numerical failure: {message}")]
    Numerical { message: String, iterate: Vec<f64> },

    #[error("degenerate solution: {0}")]
    Degenerate(String),

    #[error("parse error: {0}")]
    Parse(String),
}

impl DeblurError {
    pub(crate) fn dim(msg: impl Into<String>) -> Self {
        DeblurError::Dimension(msg.into())
    }
}
