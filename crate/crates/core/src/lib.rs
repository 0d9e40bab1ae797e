//! Construction of the FLAPW Hamiltonian (H) and Overlap (S) matrices from
//! stacked per-atom coefficient blocks, on a CPU alone or on a CPU plus a
//! pool of (simulated) accelerators.

pub mod device;
pub mod dynamic;
pub mod error;
pub mod format;
pub mod kernels;
pub mod ledger;
pub mod matrix;
pub mod oracle;
pub mod pipeline;
pub mod problem;
pub mod static_split;
#[doc(hidden)]
pub mod testutil;

pub use error::{FormatError, KernelError, ProblemError, ShapeError};
pub use kernels::{KernelVariant, Kernels, Side, Trans, Uplo};
pub use ledger::{FlopLedger, LedgerSnapshot};
pub use matrix::{rel_frobenius_error, ComplexMatrix, HermitianView, MatMut, MatRef, C64};
pub use pipeline::{build_hs, flop_model, BuildStats, HSResult, PipelineConfig, PipelineError, Strategy, Variant};
pub use problem::{generate_problem, ProblemDims, ProblemInstance};
