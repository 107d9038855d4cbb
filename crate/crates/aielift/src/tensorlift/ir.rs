//! Tensor IR data types, textual dump, and structural checking.
//!
//! A [`TensorProgram`] is a small SSA graph over whole-array values: every
//! value is either a program input (`arg`), a broadcast host scalar
//! (`splat`), or the result of one tensor operation. Value shapes inside
//! the compute graph all equal the iteration domain; slices adapt array
//! extents to the domain at the edges.

use crate::loopfront::{BinOp, Intrinsic, ReduceOp};
use crate::value::{ElemType, Value};
use serde::Serialize;
use std::collections::BTreeMap;
use std::fmt::Write as _;

/// Reference to a value in a [`TensorProgram`]: args first, then op results.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize)]
#[serde(transparent)]
pub struct ValId(pub usize);

/// Binary elementwise operators.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum EwOp {
    Add,
    Sub,
    Mul,
    Div,
    Max,
    Min,
}

impl EwOp {
    pub fn mnemonic(self) -> &'static str {
        match self {
            EwOp::Add => "add",
            EwOp::Sub => "sub",
            EwOp::Mul => "mul",
            EwOp::Div => "div",
            EwOp::Max => "max",
            EwOp::Min => "min",
        }
    }

    pub fn commutative(self) -> bool {
        matches!(self, EwOp::Add | EwOp::Mul | EwOp::Max | EwOp::Min)
    }

    pub fn apply(self, a: Value, b: Value) -> Value {
        match self {
            EwOp::Add => a.add(b),
            EwOp::Sub => a.sub(b),
            EwOp::Mul => a.mul(b),
            EwOp::Div => a.div(b),
            EwOp::Max => a.max(b),
            EwOp::Min => a.min(b),
        }
    }
}

/// Unary elementwise operators.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum UnOp {
    Exp,
    Sqrt,
    Relu,
    Neg,
}

impl UnOp {
    pub fn mnemonic(self) -> &'static str {
        match self {
            UnOp::Exp => "exp",
            UnOp::Sqrt => "sqrt",
            UnOp::Relu => "relu",
            UnOp::Neg => "neg",
        }
    }

    pub fn apply(self, a: Value) -> Value {
        match self {
            UnOp::Exp => a.exp(),
            UnOp::Sqrt => a.sqrt(),
            UnOp::Relu => a.relu(),
            UnOp::Neg => a.neg(),
        }
    }
}

/// One dimension of a slice window: take `len` elements starting at
/// 0-based `offset`, `stride` apart.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize)]
pub struct SliceDim {
    pub offset: usize,
    pub len: usize,
    pub stride: usize,
}

impl SliceDim {
    pub fn new(offset: usize, len: usize, stride: usize) -> Self {
        SliceDim { offset, len, stride }
    }

    /// Highest source index touched, inclusive. Zero-length windows touch
    /// nothing; callers reject them in [`shape_check`].
    pub fn last(&self) -> usize {
        self.offset + (self.len.saturating_sub(1)) * self.stride
    }

    pub fn triple(&self) -> (usize, usize, usize) {
        (self.offset, self.len, self.stride)
    }
}

/// A host-evaluated scalar expression attached to a `splat`. Evaluated
/// once per launch from literals and scalar parameters; the result is
/// broadcast over the whole domain.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub enum ScalarExpr {
    Lit(Value),
    Param(String),
    Neg(Box<ScalarExpr>),
    Bin(BinOp, Box<ScalarExpr>, Box<ScalarExpr>),
    Call1(Intrinsic, Box<ScalarExpr>),
    Call2(Intrinsic, Box<ScalarExpr>, Box<ScalarExpr>),
}

impl ScalarExpr {
    /// Evaluate against bound host scalars. Names come from the validated
    /// parameter set, so lookup cannot fail on a well-formed program.
    pub fn eval(&self, scalars: &BTreeMap<String, Value>) -> Value {
        match self {
            ScalarExpr::Lit(v) => *v,
            ScalarExpr::Param(name) => *scalars
                .get(name)
                .unwrap_or_else(|| panic!("parameter `{name}` not bound")),
            ScalarExpr::Neg(e) => e.eval(scalars).neg(),
            ScalarExpr::Bin(op, a, b) => {
                let a = a.eval(scalars);
                let b = b.eval(scalars);
                match op {
                    BinOp::Add => a.add(b),
                    BinOp::Sub => a.sub(b),
                    BinOp::Mul => a.mul(b),
                    BinOp::Div => a.div(b),
                }
            }
            ScalarExpr::Call1(f, a) => {
                let a = a.eval(scalars);
                match f {
                    Intrinsic::Exp => a.exp(),
                    Intrinsic::Sqrt => a.sqrt(),
                    _ => unreachable!("arity checked at parse"),
                }
            }
            ScalarExpr::Call2(f, a, b) => {
                let a = a.eval(scalars);
                let b = b.eval(scalars);
                match f {
                    Intrinsic::Max => a.max(b),
                    Intrinsic::Min => a.min(b),
                    _ => unreachable!("arity checked at parse"),
                }
            }
        }
    }

    /// Result type under the promotion rules (mixed operands go to f32).
    pub fn elem(&self) -> ElemType {
        match self {
            ScalarExpr::Lit(v) => v.elem_type(),
            ScalarExpr::Param(_) => ElemType::F32, // refined by the lifter
            ScalarExpr::Neg(e) | ScalarExpr::Call1(_, e) => e.elem(),
            ScalarExpr::Bin(_, a, b) | ScalarExpr::Call2(_, a, b) => {
                if a.elem() == ElemType::I32 && b.elem() == ElemType::I32 {
                    ElemType::I32
                } else {
                    ElemType::F32
                }
            }
        }
    }

    /// Canonical one-line print, also used as the CSE key.
    pub fn canon(&self) -> String {
        match self {
            ScalarExpr::Lit(Value::F32(v)) => format!("{v:?}"),
            ScalarExpr::Lit(Value::I32(v)) => format!("{v}"),
            ScalarExpr::Param(name) => format!("${name}"),
            ScalarExpr::Neg(e) => format!("(- {})", e.canon()),
            ScalarExpr::Bin(op, a, b) => {
                let sym = match op {
                    BinOp::Add => "+",
                    BinOp::Sub => "-",
                    BinOp::Mul => "*",
                    BinOp::Div => "/",
                };
                format!("({} {} {})", a.canon(), sym, b.canon())
            }
            ScalarExpr::Call1(f, a) => format!("({} {})", intrinsic_name(*f), a.canon()),
            ScalarExpr::Call2(f, a, b) => {
                format!("({} {} {})", intrinsic_name(*f), a.canon(), b.canon())
            }
        }
    }

    pub fn is_zero_literal(&self) -> bool {
        matches!(self, ScalarExpr::Lit(v) if v.as_f64() == 0.0)
    }
}

fn intrinsic_name(f: Intrinsic) -> &'static str {
    match f {
        Intrinsic::Exp => "exp",
        Intrinsic::Sqrt => "sqrt",
        Intrinsic::Max => "max",
        Intrinsic::Min => "min",
    }
}

/// One tensor operation. Operand ids always precede the result id.
#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum TensorOp {
    /// Broadcast a host scalar over the domain.
    Splat { expr: ScalarExpr },
    /// Binary elementwise op over same-shaped operands.
    Elementwise { op: EwOp, lhs: ValId, rhs: ValId },
    /// Unary elementwise op.
    Unary { op: UnOp, src: ValId },
    /// Window read: adapts an array extent to the domain shape.
    ExtractSlice { src: ValId, dims: Vec<SliceDim> },
    /// Window write: places a domain-shaped value into an array-shaped
    /// one; elements outside the window keep the destination array's
    /// pre-run contents.
    InsertSlice { src: ValId, dims: Vec<SliceDim>, dest: String, out_shape: Vec<usize> },
    /// Fold every element into one scalar, starting from the identity.
    Reduce { op: ReduceOp, src: ValId },
    /// Dense matrix product of an `[m,k]` and a `[k,n]` operand.
    MatMul { a: ValId, b: ValId },
}

impl TensorOp {
    pub fn mnemonic(&self) -> &'static str {
        match self {
            TensorOp::Splat { .. } => "splat",
            TensorOp::Elementwise { op, .. } => op.mnemonic(),
            TensorOp::Unary { op, .. } => op.mnemonic(),
            TensorOp::ExtractSlice { .. } => "extract_slice",
            TensorOp::InsertSlice { .. } => "insert_slice",
            TensorOp::Reduce { .. } => "reduce",
            TensorOp::MatMul { .. } => "matmul",
        }
    }

    pub fn operands(&self) -> Vec<ValId> {
        match self {
            TensorOp::Splat { .. } => vec![],
            TensorOp::Elementwise { lhs, rhs, .. } => vec![*lhs, *rhs],
            TensorOp::Unary { src, .. }
            | TensorOp::ExtractSlice { src, .. }
            | TensorOp::InsertSlice { src, .. }
            | TensorOp::Reduce { src, .. } => vec![*src],
            TensorOp::MatMul { a, b } => vec![*a, *b],
        }
    }
}

/// Shape and element type of one SSA value. An empty shape is a scalar.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct ValInfo {
    pub shape: Vec<usize>,
    pub elem: ElemType,
}

impl ValInfo {
    pub fn scalar(elem: ElemType) -> Self {
        ValInfo { shape: vec![], elem }
    }

    pub fn points(&self) -> usize {
        self.shape.iter().product()
    }
}

/// A full-array program input.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ArgInfo {
    pub name: String,
    pub id: ValId,
    pub dims: Vec<usize>,
    pub elem: ElemType,
}

/// Where a yielded value lands in the host environment.
#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum YieldTarget {
    Array { name: String },
    /// A reduction result; the runtime folds the host's initial value in
    /// with `op` after execution.
    Scalar { name: String, op: ReduceOp },
}

impl YieldTarget {
    pub fn name(&self) -> &str {
        match self {
            YieldTarget::Array { name } | YieldTarget::Scalar { name, .. } => name,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct YieldBinding {
    pub value: ValId,
    pub target: YieldTarget,
}

/// The lifted program: SSA values over the iteration domain.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TensorProgram {
    /// Extents of the parallel iteration space (rank 1 or 2).
    pub domain: Vec<usize>,
    /// Shape and type of every value: args first, then op results.
    pub values: Vec<ValInfo>,
    pub args: Vec<ArgInfo>,
    /// Operations in execution order (splats lead). Entry `(id, op)`
    /// defines value `id`.
    pub ops: Vec<(ValId, TensorOp)>,
    pub yields: Vec<YieldBinding>,
    /// Scalar parameter names splat expressions may reference.
    pub params: Vec<String>,
}

impl TensorProgram {
    pub fn domain_points(&self) -> usize {
        self.domain.iter().product()
    }

    pub fn info(&self, id: ValId) -> &ValInfo {
        &self.values[id.0]
    }

    pub fn op(&self, id: ValId) -> Option<&TensorOp> {
        if id.0 < self.args.len() {
            None
        } else {
            Some(&self.ops[id.0 - self.args.len()].1)
        }
    }

    /// Mnemonics of ops and yields in listing order (args excluded) —
    /// the shape regression tests key on this.
    pub fn op_mnemonics(&self) -> Vec<&'static str> {
        let mut out: Vec<&'static str> = self.ops.iter().map(|(_, op)| op.mnemonic()).collect();
        for _ in &self.yields {
            out.push("yield");
        }
        out
    }

    /// Textual listing of the program.
    pub fn dump(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "tensor domain [{}]", join_dims(&self.domain));
        for arg in &self.args {
            let _ = writeln!(
                s,
                "  %{} = arg @{} : {}[{}]",
                arg.id.0,
                arg.name,
                arg.elem,
                join_dims(&arg.dims)
            );
        }
        for (id, op) in &self.ops {
            let info = self.info(*id);
            let ty = if info.shape.is_empty() {
                format!("{}", info.elem)
            } else {
                format!("{}[{}]", info.elem, join_dims(&info.shape))
            };
            let body = match op {
                TensorOp::Splat { expr } => format!("splat {}", expr.canon()),
                TensorOp::Elementwise { op, lhs, rhs } => {
                    format!("{} %{}, %{}", op.mnemonic(), lhs.0, rhs.0)
                }
                TensorOp::Unary { op, src } => format!("{} %{}", op.mnemonic(), src.0),
                TensorOp::ExtractSlice { src, dims } => {
                    format!("extract_slice %{} {}", src.0, join_windows(dims))
                }
                TensorOp::InsertSlice { src, dims, dest, .. } => {
                    format!("insert_slice %{} into @{} {}", src.0, dest, join_windows(dims))
                }
                TensorOp::Reduce { op, src } => format!("reduce {} %{}", op.name(), src.0),
                TensorOp::MatMul { a, b } => format!("matmul %{}, %{}", a.0, b.0),
            };
            let _ = writeln!(s, "  %{} = {} : {}", id.0, body, ty);
        }
        for y in &self.yields {
            match &y.target {
                YieldTarget::Array { name } => {
                    let _ = writeln!(s, "  yield %{} -> @{}", y.value.0, name);
                }
                YieldTarget::Scalar { name, op } => {
                    let _ = writeln!(s, "  yield %{} -> ${} ({})", y.value.0, name, op.name());
                }
            }
        }
        s
    }
}

fn join_dims(dims: &[usize]) -> String {
    dims.iter().map(|d| d.to_string()).collect::<Vec<_>>().join(",")
}

fn join_windows(dims: &[SliceDim]) -> String {
    dims.iter()
        .map(|d| format!("({}, {}, {})", d.offset, d.len, d.stride))
        .collect::<Vec<_>>()
        .join(" x ")
}

/// Structural validity: operand ordering, shape agreement, windows in
/// bounds. Lifting always produces a program that passes; the fuzz
/// harness re-checks every generated one.
pub fn shape_check(tp: &TensorProgram) -> Result<(), String> {
    if tp.domain.is_empty() || tp.domain.len() > 2 {
        return Err(format!("domain rank {} out of range", tp.domain.len()));
    }
    if tp.values.len() != tp.args.len() + tp.ops.len() {
        return Err("value table does not cover args and ops".into());
    }
    for (i, arg) in tp.args.iter().enumerate() {
        if arg.id.0 != i {
            return Err(format!("arg `{}` id %{} out of order", arg.name, arg.id.0));
        }
        if tp.info(arg.id).shape != arg.dims {
            return Err(format!("arg `{}` shape disagrees with its value", arg.name));
        }
    }
    let mut defined: Vec<bool> = vec![false; tp.values.len()];
    for i in 0..tp.args.len() {
        defined[i] = true;
    }
    for (id, op) in &tp.ops {
        for operand in op.operands() {
            if operand.0 >= tp.values.len() || !defined[operand.0] {
                return Err(format!("%{} uses undefined operand %{}", id.0, operand.0));
            }
        }
        let info = tp.info(*id);
        match op {
            TensorOp::Splat { .. } => {
                if info.shape != tp.domain {
                    return Err(format!("splat %{} is not domain-shaped", id.0));
                }
            }
            TensorOp::Elementwise { lhs, rhs, .. } => {
                let (a, b) = (tp.info(*lhs), tp.info(*rhs));
                if a.shape != b.shape || a.shape != info.shape {
                    return Err(format!("elementwise %{} operand shapes differ", id.0));
                }
                if a.shape.is_empty() {
                    return Err(format!("elementwise %{} over scalars", id.0));
                }
            }
            TensorOp::Unary { src, .. } => {
                if tp.info(*src).shape != info.shape {
                    return Err(format!("unary %{} changes shape", id.0));
                }
            }
            TensorOp::ExtractSlice { src, dims } => {
                let src_info = tp.info(*src);
                if dims.len() != src_info.shape.len() {
                    return Err(format!("extract_slice %{} rank mismatch", id.0));
                }
                for (d, w) in dims.iter().enumerate() {
                    if w.len == 0 || w.stride == 0 {
                        return Err(format!("extract_slice %{} has an empty window", id.0));
                    }
                    if w.last() >= src_info.shape[d] {
                        return Err(format!(
                            "extract_slice %{} window ({}, {}, {}) exceeds extent {}",
                            id.0, w.offset, w.len, w.stride, src_info.shape[d]
                        ));
                    }
                }
                let lens: Vec<usize> = dims.iter().map(|w| w.len).collect();
                if info.shape != lens {
                    return Err(format!("extract_slice %{} result shape mismatch", id.0));
                }
            }
            TensorOp::InsertSlice { src, dims, out_shape, .. } => {
                let src_info = tp.info(*src);
                if dims.len() != out_shape.len() || src_info.shape.len() != dims.len() {
                    return Err(format!("insert_slice %{} rank mismatch", id.0));
                }
                for (d, w) in dims.iter().enumerate() {
                    if w.len == 0 || w.stride == 0 || w.last() >= out_shape[d] {
                        return Err(format!("insert_slice %{} window out of bounds", id.0));
                    }
                    if src_info.shape[d] != w.len {
                        return Err(format!("insert_slice %{} source/window mismatch", id.0));
                    }
                }
                if info.shape != *out_shape {
                    return Err(format!("insert_slice %{} result shape mismatch", id.0));
                }
            }
            TensorOp::Reduce { src, .. } => {
                if tp.info(*src).shape.is_empty() {
                    return Err(format!("reduce %{} over a scalar", id.0));
                }
                if !info.shape.is_empty() {
                    return Err(format!("reduce %{} result is not scalar", id.0));
                }
            }
            TensorOp::MatMul { a, b } => {
                let (ai, bi) = (tp.info(*a), tp.info(*b));
                if ai.shape.len() != 2 || bi.shape.len() != 2 || ai.shape[1] != bi.shape[0] {
                    return Err(format!("matmul %{} operand shapes incompatible", id.0));
                }
                if info.shape != vec![ai.shape[0], bi.shape[1]] {
                    return Err(format!("matmul %{} result shape mismatch", id.0));
                }
            }
        }
        defined[id.0] = true;
    }
    let mut seen_targets = std::collections::BTreeSet::new();
    for y in &tp.yields {
        if y.value.0 >= tp.values.len() || !defined[y.value.0] {
            return Err(format!("yield of undefined value %{}", y.value.0));
        }
        let scalar = matches!(y.target, YieldTarget::Scalar { .. });
        if scalar != tp.info(y.value).shape.is_empty() {
            return Err(format!("yield %{} target kind mismatch", y.value.0));
        }
        if !seen_targets.insert(y.target.name().to_string()) {
            return Err(format!("target `{}` yielded twice", y.target.name()));
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny() -> TensorProgram {
        TensorProgram {
            domain: vec![4],
            values: vec![
                ValInfo { shape: vec![4], elem: ElemType::F32 },
                ValInfo { shape: vec![4], elem: ElemType::F32 },
            ],
            args: vec![ArgInfo {
                name: "a".into(),
                id: ValId(0),
                dims: vec![4],
                elem: ElemType::F32,
            }],
            ops: vec![(ValId(1), TensorOp::Unary { op: UnOp::Relu, src: ValId(0) })],
            yields: vec![YieldBinding {
                value: ValId(1),
                target: YieldTarget::Array { name: "c".into() },
            }],
            params: vec![],
        }
    }

    #[test]
    fn well_formed_program_passes_shape_check() {
        shape_check(&tiny()).unwrap();
    }

    #[test]
    fn forward_reference_is_rejected() {
        let mut tp = tiny();
        tp.values.push(ValInfo { shape: vec![4], elem: ElemType::F32 });
        tp.ops[0].1 = TensorOp::Unary { op: UnOp::Relu, src: ValId(2) };
        tp.ops.push((ValId(2), TensorOp::Splat { expr: ScalarExpr::Lit(Value::F32(1.0)) }));
        assert!(shape_check(&tp).unwrap_err().contains("undefined operand"));
    }

    #[test]
    fn out_of_bounds_window_is_rejected() {
        let mut tp = tiny();
        tp.values.push(ValInfo { shape: vec![4], elem: ElemType::F32 });
        tp.ops.push((
            ValId(2),
            TensorOp::ExtractSlice { src: ValId(0), dims: vec![SliceDim::new(1, 4, 1)] },
        ));
        assert!(shape_check(&tp).unwrap_err().contains("exceeds extent"));
    }

    #[test]
    fn scalar_expr_eval_and_canon() {
        let e = ScalarExpr::Bin(
            BinOp::Mul,
            Box::new(ScalarExpr::Param("alpha".into())),
            Box::new(ScalarExpr::Call1(
                Intrinsic::Sqrt,
                Box::new(ScalarExpr::Lit(Value::F32(4.0))),
            )),
        );
        let mut scalars = BTreeMap::new();
        scalars.insert("alpha".to_string(), Value::F32(3.0));
        assert_eq!(e.eval(&scalars), Value::F32(6.0));
        assert_eq!(e.canon(), "($alpha * (sqrt 4.0))");
    }
}
