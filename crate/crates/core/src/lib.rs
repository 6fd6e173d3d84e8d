//! Communication-avoiding QR factorizations with instrumented communication
//! counting.
//!
//! The crate factors dense real matrices three ways and counts every flop,
//! word, and message while doing it:
//!
//! - [`tsqr`]: tall-skinny QR over arbitrary reduction trees (flat, binary,
//!   general branching), with a simulated-parallel driver over virtual
//!   processors and a sequential out-of-core driver bounded by a fast-memory
//!   budget.
//! - [`caqr`]: right-looking QR of general rectangular matrices over 2-D
//!   block-cyclic processor grids (parallel) or square-tile streams
//!   (sequential), using TSQR for the panel factorizations.
//! - [`baselines`]: CholeskyQR, classical and modified Gram-Schmidt, and
//!   unblocked Householder QR for cost and stability comparisons.
//!
//! [`models`] evaluates the closed-form cost models and communication lower
//! bounds the measured ledgers are compared against, and [`instrument`]
//! houses the machine abstraction (fast/slow memory, virtual processors,
//! critical-path counters).

#![allow(clippy::needless_range_loop)]

pub mod baselines;
pub mod caqr;
pub mod dense;
pub mod error;
pub mod householder;
pub mod instrument;
pub mod models;
pub mod tsqr;

pub use dense::{
    block_owner, fro_norm, generate, generate_with_condition, max_abs, read_matrix, write_matrix,
    BlockCyclicLayout, DenseMatrix, GeneratorKind, ProblemShape, SplitMix64,
};
pub use error::{Error, Result};
pub use instrument::{predicted_time, predicted_time_critical_path, CommCounters, MachineParams};
