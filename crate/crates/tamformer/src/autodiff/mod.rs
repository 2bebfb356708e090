//! Reverse-mode differentiation core: tensors, the operation tape, and the
//! finite-difference gradient checker.

pub mod gradcheck;
pub mod graph;
pub mod tensor;

pub use gradcheck::{grad_check, GradCheckReport, WorstEntry, DEFAULT_EPS, DEFAULT_THRESHOLD};
pub use graph::{Graph, NodeId, NEG_LARGE};
pub use tensor::{matmul, transpose, Tensor};
