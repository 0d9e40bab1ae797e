use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ShapeError {
    #[error("shape mismatch: {left:?} vs {right:?}")]
    Mismatch { left: (usize, usize), right: (usize, usize) },
    #[error("expected a square matrix, got {rows}x{cols}")]
    NotSquare { rows: usize, cols: usize },
    #[error("data length {actual} does not match shape (expected {expected})")]
    DataLength { expected: usize, actual: usize },
    #[error("{rows} rows cannot be split into blocks of {block_rows}")]
    BlockRows { rows: usize, block_rows: usize },
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum KernelError {
    #[error("{kernel}: dimension mismatch ({detail})")]
    Dimension { kernel: &'static str, detail: String },
    #[error("matrix is not positive definite (pivot {pivot})")]
    NotPositiveDefinite { pivot: usize },
    #[error(transparent)]
    Shape(#[from] ShapeError),
}

impl KernelError {
    pub(crate) fn dim(kernel: &'static str, detail: impl Into<String>) -> Self {
        KernelError::Dimension {
            kernel,
            detail: detail.into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ProblemError {
    #[error("dimensions must be at least 1, got N_A={n_atoms} N_L={n_l} N_G={n_g}")]
    EmptyDims { n_atoms: usize, n_l: usize, n_g: usize },
    #[error("n_not_hpd={n_not_hpd} exceeds N_A={n_atoms}")]
    TooManyNonHpd { n_not_hpd: usize, n_atoms: usize },
    #[error("problem size overflows: {0}")]
    Sizing(String),
}

#[derive(Debug, Error)]
pub enum FormatError {
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error("not an HSDL problem file")]
    BadMagic,
    #[error("unsupported format version {found} (expected {expected})")]
    Version { found: u32, expected: u32 },
    #[error("malformed problem file: {0}")]
    Malformed(String),
    #[error(transparent)]
    Problem(#[from] ProblemError),
}
