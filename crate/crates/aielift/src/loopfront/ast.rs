//! Abstract syntax for the Fortran-flavoured input language.
//!
//! A source file declares arrays and scalars, then contains one or more
//! `!$omp target parallel do` loop nests. Multi-stage kernels (softmax and
//! friends) are a sequence of such nests sharing the declarations.

use crate::diag::Pos;
use crate::value::ElemType;
use serde::Serialize;

/// A declared (or inferred) array: rank 1 or 2, row-major storage.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct ArrayDecl {
    pub name: String,
    /// Extent per dimension; `dims.len()` is the rank (1 or 2).
    pub dims: Vec<usize>,
    pub elem: ElemType,
}

impl ArrayDecl {
    /// Total number of elements.
    pub fn len(&self) -> usize {
        self.dims.iter().product()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct ScalarDecl {
    pub name: String,
    pub elem: ElemType,
}

/// Reduction operators accepted in a `reduction(...)` clause.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum ReduceOp {
    Add,
    Max,
}

impl ReduceOp {
    pub fn name(self) -> &'static str {
        match self {
            ReduceOp::Add => "+",
            ReduceOp::Max => "max",
        }
    }
}

/// The clauses of the `!$omp target parallel do` directive, plus a flag
/// recording whether the body contains `!$omp atomic` statements.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize)]
pub struct PragmaInfo {
    pub privates: Vec<String>,
    pub map_to: Vec<String>,
    pub map_from: Vec<String>,
    pub reduction: Option<(ReduceOp, String)>,
    pub has_atomic: bool,
}

impl PragmaInfo {
    pub fn is_private(&self, name: &str) -> bool {
        self.privates.iter().any(|p| p == name)
    }

    pub fn is_reduction_var(&self, name: &str) -> bool {
        matches!(&self.reduction, Some((_, v)) if v == name)
    }
}

/// One index of the parallel nest with its inclusive 1-based-style bounds
/// (`do i = lo, hi`).
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct LoopIndex {
    pub name: String,
    pub lo: i64,
    pub hi: i64,
}

impl LoopIndex {
    /// Number of iterations (0 when the range is empty).
    pub fn extent(&self) -> usize {
        (self.hi - self.lo + 1).max(0) as usize
    }
}

/// The parallel loop nest: one or two indices, outermost first.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LoopNest {
    pub indices: Vec<LoopIndex>,
    pub body: Vec<Stmt>,
}

/// A single array subscript of the affine form `index ± constant`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Subscript {
    pub index: String,
    pub offset: i64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub enum LValue {
    Scalar(String),
    Element { array: String, subs: Vec<Subscript> },
}

impl LValue {
    pub fn name(&self) -> &str {
        match self {
            LValue::Scalar(n) => n,
            LValue::Element { array, .. } => array,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum BinOp {
    Add,
    Sub,
    Mul,
    Div,
}

impl BinOp {
    pub fn symbol(self) -> &'static str {
        match self {
            BinOp::Add => "+",
            BinOp::Sub => "-",
            BinOp::Mul => "*",
            BinOp::Div => "/",
        }
    }
}

/// Intrinsic functions of the input language.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Intrinsic {
    Exp,
    Sqrt,
    Max,
    Min,
}

impl Intrinsic {
    pub fn name(self) -> &'static str {
        match self {
            Intrinsic::Exp => "exp",
            Intrinsic::Sqrt => "sqrt",
            Intrinsic::Max => "max",
            Intrinsic::Min => "min",
        }
    }

    pub fn arity(self) -> usize {
        match self {
            Intrinsic::Exp | Intrinsic::Sqrt => 1,
            Intrinsic::Max | Intrinsic::Min => 2,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub enum Expr {
    /// Numeric literal; `is_int` records whether the token had no decimal
    /// point, which controls promotion when mixed with integer operands.
    Lit { raw: f64, is_int: bool },
    Scalar { name: String, pos: Pos },
    ArrayRef { array: String, subs: Vec<Subscript>, pos: Pos },
    Unary { neg: Box<Expr> },
    Binary { op: BinOp, lhs: Box<Expr>, rhs: Box<Expr> },
    Call { f: Intrinsic, args: Vec<Expr>, pos: Pos },
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub enum Stmt {
    Assign {
        lhs: LValue,
        rhs: Expr,
        /// Set when the assignment is covered by an `!$omp atomic` directive.
        atomic: bool,
        pos: Pos,
    },
    /// A sequential loop nested inside the parallel body (the accumulation
    /// loop of a matrix product, for example). Runs in iteration order.
    SeqLoop {
        index: LoopIndex,
        body: Vec<Stmt>,
        pos: Pos,
    },
}

impl Stmt {
    pub fn pos(&self) -> Pos {
        match self {
            Stmt::Assign { pos, .. } | Stmt::SeqLoop { pos, .. } => *pos,
        }
    }
}

/// One offloadable loop nest with its declarations and directive.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LoopProgram {
    pub arrays: Vec<ArrayDecl>,
    pub scalars: Vec<ScalarDecl>,
    pub pragma: PragmaInfo,
    pub nest: LoopNest,
}

impl LoopProgram {
    pub fn array(&self, name: &str) -> Option<&ArrayDecl> {
        self.arrays.iter().find(|a| a.name == name)
    }

    pub fn scalar(&self, name: &str) -> Option<&ScalarDecl> {
        self.scalars.iter().find(|s| s.name == name)
    }

    pub fn is_loop_index(&self, name: &str) -> bool {
        self.nest.indices.iter().any(|ix| ix.name == name)
    }

    /// Total points in the parallel iteration domain.
    pub fn domain_points(&self) -> usize {
        self.nest.indices.iter().map(LoopIndex::extent).product()
    }
}

/// A whole source file: one or more loop programs executed in order,
/// sharing the file's declarations.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StagedProgram {
    pub stages: Vec<LoopProgram>,
}
