//! Tensor IR: lifting loop nests to whole-array SSA values.
//!
//! [`lift`] turns a validated loop program into a [`TensorProgram`] of
//! `splat`/elementwise/slice/`reduce`/`matmul` operations, [`evaluate`]
//! executes one densely on the host (the mid-level oracle), and
//! [`shape_check`] verifies structural well-formedness.

mod eval;
mod ir;
mod lift;

pub use eval::evaluate;
pub use ir::{
    shape_check, ArgInfo, EwOp, ScalarExpr, SliceDim, TensorOp, TensorProgram, UnOp, ValId,
    ValInfo, YieldBinding, YieldTarget,
};
pub use lift::{lift, LiftError};
