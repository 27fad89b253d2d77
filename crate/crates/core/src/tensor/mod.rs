//! Dense matrices, sparse propagation operators and the autodiff tape.

pub mod gradcheck;
pub mod matrix;
pub mod param;
pub mod sparse;
pub mod tape;

pub use gradcheck::{finite_diff_check, finite_diff_params, GradCheckReport};
pub use matrix::Matrix;
pub use param::{AdamState, ParamId, ParamStore, Parameter};
pub use sparse::CsrMatrix;
pub use tape::{ElementwiseKind, Gradients, SvdVars, Tape, Var};
