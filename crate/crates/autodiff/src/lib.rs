//! A small tape-based reverse-mode differentiation engine.
//!
//! Values live in [`Tensor`]s (dense, row-major, `f64`). A [`Tape`] records
//! every primitive applied to [`Var`] handles during the forward pass and
//! replays the adjoints in reverse order on [`Tape::backward`]. The set of
//! primitives is deliberately narrow: it covers dense linear maps, the
//! pointwise nonlinearities used by gated recurrent units and attention, row
//! gather/scatter for graph message passing, batch normalization, and a few
//! reductions.
//!
//! [`check_gradients`] compares the analytic adjoints against central finite
//! differences and is used throughout the test suites.

mod error;
mod gradcheck;
pub mod suite;
mod tape;
mod tensor;

pub use error::{AutodiffError, Result};
pub use gradcheck::{check_gradients, relative_error, GradCheckFailure, GradCheckReport};
pub use tape::{BatchNormMode, BatchStats, Gradients, Tape, Var, BATCH_NORM_EPS};
pub use suite::{primitive_suite, SuiteCase};
pub use tensor::Tensor;
