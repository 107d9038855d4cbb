//! Front end for the Fortran-flavoured `.f90omp` input language.
//!
//! [`parse`] turns source text into a [`LoopProgram`] (inferring
//! declarations that bare snippets omit), [`parse_file`] handles sources
//! with several offload loops run in sequence, and [`validate`] applies the
//! parallel-safety rules and classifies inputs, outputs and parameters.

mod ast;
mod lexer;
mod parser;
mod printer;
mod validate;

pub use ast::{
    ArrayDecl, BinOp, Expr, Intrinsic, LValue, LoopIndex, LoopNest, LoopProgram, PragmaInfo,
    ReduceOp, ScalarDecl, StagedProgram, Stmt, Subscript,
};
pub use parser::{parse, parse_file};
pub use printer::{print_program, print_staged};
pub use validate::{
    reduction_contribution, validate, FallbackReason, ValidateOutcome, ValidatedLoopProgram,
};
