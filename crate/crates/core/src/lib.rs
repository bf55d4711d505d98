//! Blind image deblurring by lifted rank-one recovery.
//!
//! The blur kernel `k` and the latent image `x` are described by coefficient
//! vectors `h` (pixels inside a kernel bounding box) and `m` (selected Haar
//! coefficients). The blurred observation is linear in the lifted matrix
//! `X = h mᵀ`, which is recovered by minimizing the nuclear norm plus a
//! row- or column-group-sparsity penalty under the measurement constraint.
//! The program is solved in factored form `X = Z Hᵀ` with an augmented
//! Lagrangian outer loop and L-BFGS inner solves.
//!
//! Module map:
//!
//! * [`transforms`]: unitary 2D FFT, orthonormal 2D Haar, kernel/image bases.
//! * [`lifted_op`]: the matrix-free lifted measurement operator and its adjoint.
//! * [`lbfgs`]: limited-memory BFGS with a strong Wolfe line search.
//! * [`solver`]: the factored augmented-Lagrangian solver.
//! * [`support`]: kernel and image support refinement and the full pipeline.
//! * [`recovery`]: rank-one extraction, PSF synthesis, blur model, metrics, norms.

pub mod error;
pub mod image;
pub mod lbfgs;
pub mod lifted_op;
pub mod recovery;
pub mod solver;
pub mod support;
pub mod transforms;

pub use error::{DeblurError, Result};
pub use image::{Image, SpectralField};
pub use lifted_op::{FactorPair, LiftedProblem};
pub use recovery::{DeblurResult, GaussianPsfSpec, MotionPsfSpec, Warning};
pub use solver::{FactorState, SolverConfig, SparsityMode, TraceRecord};
pub use support::{MaskTarget, PipelineConfig, SupportMask};
pub use transforms::{ImageBasis, KernelBasis};

pub use num_complex::Complex64;
pub use rustfft::num_complex;
