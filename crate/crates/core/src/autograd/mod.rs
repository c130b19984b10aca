//! Tape-based reverse-mode differentiation and its finite-difference oracle.

mod ctx;
mod gradcheck;
pub mod suites;
mod tape;

pub use ctx::{ForwardCtx, Mode};
pub use gradcheck::{finite_diff_check, relative_error, CheckReport, GradCheckConfig};
pub use tape::{CustomOp, GradStore, NodeId, Tape};
