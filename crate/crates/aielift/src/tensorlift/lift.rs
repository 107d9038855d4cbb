//! Lifting: loop nest → tensor program.
//!
//! Each parallel iteration space becomes the value domain; array accesses
//! become whole-array args narrowed by slice windows; private scalars
//! become SSA edges; loop-invariant scalar subexpressions collapse into
//! host-evaluated `splat`s; the gemm-style inner product loop becomes one
//! `matmul`. Identical subcomputations are shared (hash-consed), dead
//! values are pruned, and `splat`s are hoisted to the top of the listing.
//!
//! Anything outside this shape is a clean [`LiftError`], which the driver
//! turns into a host-CPU fallback rather than a hard failure.

use super::ir::*;
use crate::diag::Pos;
use crate::loopfront::{
    reduction_contribution, BinOp, Expr, Intrinsic, LValue, LoopIndex, ReduceOp, Stmt, Subscript,
    ValidatedLoopProgram,
};
use crate::value::{ElemType, Value};
use std::collections::HashMap;
use thiserror::Error;

/// A program shape the tensor mapping cannot express.
#[derive(Debug, Clone, PartialEq, Error)]
#[error("{message}")]
pub struct LiftError {
    pub message: String,
    pub pos: Option<Pos>,
}

impl LiftError {
    fn at(message: impl Into<String>, pos: Pos) -> Self {
        LiftError { message: message.into(), pos: Some(pos) }
    }
}

/// Lift a validated offload loop into a [`TensorProgram`].
pub fn lift(p: &ValidatedLoopProgram) -> Result<TensorProgram, LiftError> {
    let mut lifter = Lifter::new(p);
    lifter.walk()?;
    Ok(lifter.finish())
}

/// What an expression lifted to: a tensor value over the domain, or a
/// loop-invariant host scalar expression.
#[derive(Clone)]
enum Lifted {
    Tensor(ValId),
    Scalar(ScalarExpr),
}

#[derive(Hash, PartialEq, Eq)]
enum OpKey {
    Splat(String),
    Ew(EwOp, ValId, ValId),
    Un(UnOp, ValId),
    Extract(ValId, Vec<(usize, usize, usize)>),
    Reduce(ReduceOp, ValId),
    MatMul(ValId, ValId),
}

/// Loop index context a subscript is resolved against.
#[derive(Clone)]
struct IdxCtx {
    name: String,
    lo: i64,
    extent: usize,
}

struct Lifter<'p> {
    p: &'p ValidatedLoopProgram,
    par: Vec<IdxCtx>,
    domain: Vec<usize>,
    values: Vec<ValInfo>,
    args: Vec<ArgInfo>,
    ops: Vec<(ValId, TensorOp)>,
    cse: HashMap<OpKey, ValId>,
    arg_ids: HashMap<String, ValId>,
    scalar_defs: HashMap<String, Lifted>,
    /// Arrays written this iteration: subscripts and the stored value, so
    /// later reads of the same element forward the value instead of
    /// re-reading the array's pre-run contents.
    elem_defs: HashMap<String, (Vec<(String, i64)>, ValId)>,
    yields: Vec<YieldBinding>,
    reduced: bool,
}

impl<'p> Lifter<'p> {
    fn new(p: &'p ValidatedLoopProgram) -> Self {
        let par: Vec<IdxCtx> = p
            .program
            .nest
            .indices
            .iter()
            .map(|ix| IdxCtx { name: ix.name.clone(), lo: ix.lo, extent: ix.extent() })
            .collect();
        let domain = par.iter().map(|c| c.extent).collect();
        Lifter {
            p,
            par,
            domain,
            values: Vec::new(),
            args: Vec::new(),
            ops: Vec::new(),
            cse: HashMap::new(),
            arg_ids: HashMap::new(),
            scalar_defs: HashMap::new(),
            elem_defs: HashMap::new(),
            yields: Vec::new(),
            reduced: false,
        }
    }

    fn new_value(&mut self, info: ValInfo) -> ValId {
        self.values.push(info);
        ValId(self.values.len() - 1)
    }

    fn arg(&mut self, name: &str) -> ValId {
        if let Some(id) = self.arg_ids.get(name) {
            return *id;
        }
        let decl = self.p.program.array(name).expect("validated array");
        let id = self.new_value(ValInfo { shape: decl.dims.clone(), elem: decl.elem });
        self.args.push(ArgInfo { name: name.to_string(), id, dims: decl.dims.clone(), elem: decl.elem });
        self.arg_ids.insert(name.to_string(), id);
        id
    }

    fn emit(&mut self, key: Option<OpKey>, op: TensorOp, info: ValInfo) -> ValId {
        if let Some(k) = &key {
            if let Some(id) = self.cse.get(k) {
                return *id;
            }
        }
        let id = self.new_value(info);
        self.ops.push((id, op));
        if let Some(k) = key {
            self.cse.insert(k, id);
        }
        id
    }

    /// Element type of a host scalar expression, using declared parameter
    /// types (mixed arithmetic promotes to f32).
    fn scalar_elem(&self, e: &ScalarExpr) -> ElemType {
        match e {
            ScalarExpr::Lit(v) => v.elem_type(),
            ScalarExpr::Param(name) => {
                self.p.program.scalar(name).map(|s| s.elem).unwrap_or(ElemType::F32)
            }
            ScalarExpr::Neg(a) | ScalarExpr::Call1(_, a) => self.scalar_elem(a),
            ScalarExpr::Bin(_, a, b) | ScalarExpr::Call2(_, a, b) => {
                if self.scalar_elem(a) == ElemType::I32 && self.scalar_elem(b) == ElemType::I32 {
                    ElemType::I32
                } else {
                    ElemType::F32
                }
            }
        }
    }

    fn splat(&mut self, expr: ScalarExpr) -> ValId {
        let elem = self.scalar_elem(&expr);
        let info = ValInfo { shape: self.domain.clone(), elem };
        self.emit(Some(OpKey::Splat(expr.canon())), TensorOp::Splat { expr }, info)
    }

    fn tensor(&mut self, v: Lifted) -> ValId {
        match v {
            Lifted::Tensor(id) => id,
            Lifted::Scalar(e) => self.splat(e),
        }
    }

    /// Resolve an array reference against index contexts (one per array
    /// dimension) into the arg value, narrowed by a window when the
    /// accessed region is not the whole extent.
    fn ref_window(
        &mut self,
        array: &str,
        subs: &[Subscript],
        ctxs: &[IdxCtx],
        pos: Pos,
    ) -> Result<ValId, LiftError> {
        let decl = self
            .p
            .program
            .array(array)
            .ok_or_else(|| LiftError::at(format!("`{array}` is not an array"), pos))?;
        if subs.len() != ctxs.len() || decl.dims.len() != subs.len() {
            return Err(LiftError::at(
                format!("`{array}` subscript ranks do not match the iteration space"),
                pos,
            ));
        }
        let mut dims = Vec::with_capacity(subs.len());
        let mut full = true;
        for ((sub, ctx), extent) in subs.iter().zip(ctxs).zip(&decl.dims) {
            if sub.index != ctx.name {
                return Err(LiftError::at(
                    format!(
                        "`{array}` dimension {} is subscripted by `{}`, expected `{}`",
                        dims.len() + 1,
                        sub.index,
                        ctx.name
                    ),
                    pos,
                ));
            }
            let offset = ctx.lo + sub.offset - 1; // 0-based window start
            debug_assert!(offset >= 0, "validated in-bounds access");
            let w = SliceDim::new(offset as usize, ctx.extent, 1);
            full &= w.offset == 0 && w.len == *extent;
            dims.push(w);
        }
        let src = self.arg(array);
        if full {
            return Ok(src);
        }
        let key = OpKey::Extract(src, dims.iter().map(|w| w.triple()).collect());
        let info = ValInfo { shape: dims.iter().map(|w| w.len).collect(), elem: decl.elem };
        Ok(self.emit(Some(key), TensorOp::ExtractSlice { src, dims }, info))
    }

    fn ew(&mut self, op: EwOp, a: Lifted, b: Lifted) -> ValId {
        let (mut lhs, mut rhs) = (self.tensor(a), self.tensor(b));
        if op.commutative() && rhs < lhs {
            std::mem::swap(&mut lhs, &mut rhs);
        }
        let elem = promote(self.values[lhs.0].elem, self.values[rhs.0].elem);
        let info = ValInfo { shape: self.values[lhs.0].shape.clone(), elem };
        self.emit(Some(OpKey::Ew(op, lhs, rhs)), TensorOp::Elementwise { op, lhs, rhs }, info)
    }

    fn unary(&mut self, op: UnOp, src: ValId) -> ValId {
        let info = self.values[src.0].clone();
        self.emit(Some(OpKey::Un(op, src)), TensorOp::Unary { op, src }, info)
    }

    fn lift_expr(&mut self, e: &Expr) -> Result<Lifted, LiftError> {
        Ok(match e {
            Expr::Lit { raw, is_int } => Lifted::Scalar(ScalarExpr::Lit(if *is_int {
                Value::I32(*raw as i32)
            } else {
                Value::F32(*raw as f32)
            })),
            Expr::Scalar { name, pos } => {
                if let Some(def) = self.scalar_defs.get(name) {
                    def.clone()
                } else if self.p.params.contains(name) {
                    Lifted::Scalar(ScalarExpr::Param(name.clone()))
                } else if self.p.program.is_loop_index(name)
                    || self.par.iter().any(|c| c.name == *name)
                {
                    return Err(LiftError::at(
                        format!("loop index `{name}` used as a value"),
                        *pos,
                    ));
                } else {
                    return Err(LiftError::at(format!("`{name}` has no tensor value"), *pos));
                }
            }
            Expr::ArrayRef { array, subs, pos } => {
                if let Some((wsubs, val)) = self.elem_defs.get(array) {
                    let same = subs.len() == wsubs.len()
                        && subs
                            .iter()
                            .zip(wsubs)
                            .all(|(s, (n, o))| s.index == *n && s.offset == *o);
                    if !same {
                        return Err(LiftError::at(
                            format!("`{array}` is read at a different element than it is written"),
                            *pos,
                        ));
                    }
                    Lifted::Tensor(*val)
                } else {
                    let ctxs = self.par.clone();
                    Lifted::Tensor(self.ref_window(array, subs, &ctxs, *pos)?)
                }
            }
            Expr::Unary { neg } => match self.lift_expr(neg)? {
                Lifted::Scalar(s) => Lifted::Scalar(ScalarExpr::Neg(Box::new(s))),
                Lifted::Tensor(t) => Lifted::Tensor(self.unary(UnOp::Neg, t)),
            },
            Expr::Binary { op, lhs, rhs } => {
                let a = self.lift_expr(lhs)?;
                let b = self.lift_expr(rhs)?;
                match (a, b) {
                    (Lifted::Scalar(a), Lifted::Scalar(b)) => {
                        Lifted::Scalar(ScalarExpr::Bin(*op, Box::new(a), Box::new(b)))
                    }
                    (a, b) => {
                        let ew = match op {
                            BinOp::Add => EwOp::Add,
                            BinOp::Sub => EwOp::Sub,
                            BinOp::Mul => EwOp::Mul,
                            BinOp::Div => EwOp::Div,
                        };
                        Lifted::Tensor(self.ew(ew, a, b))
                    }
                }
            }
            Expr::Call { f, args, .. } => match f {
                Intrinsic::Exp | Intrinsic::Sqrt => {
                    let op = if *f == Intrinsic::Exp { UnOp::Exp } else { UnOp::Sqrt };
                    match self.lift_expr(&args[0])? {
                        Lifted::Scalar(s) => {
                            Lifted::Scalar(ScalarExpr::Call1(*f, Box::new(s)))
                        }
                        Lifted::Tensor(t) => Lifted::Tensor(self.unary(op, t)),
                    }
                }
                Intrinsic::Max | Intrinsic::Min => {
                    let a = self.lift_expr(&args[0])?;
                    let b = self.lift_expr(&args[1])?;
                    let ew = if *f == Intrinsic::Max { EwOp::Max } else { EwOp::Min };
                    match (a, b) {
                        (Lifted::Scalar(a), Lifted::Scalar(b)) => {
                            Lifted::Scalar(ScalarExpr::Call2(*f, Box::new(a), Box::new(b)))
                        }
                        // max(0, x) in either operand order is a relu.
                        (Lifted::Scalar(s), Lifted::Tensor(t))
                        | (Lifted::Tensor(t), Lifted::Scalar(s))
                            if *f == Intrinsic::Max && s.is_zero_literal() =>
                        {
                            Lifted::Tensor(self.unary(UnOp::Relu, t))
                        }
                        (a, b) => Lifted::Tensor(self.ew(ew, a, b)),
                    }
                }
            },
        })
    }

    fn walk(&mut self) -> Result<(), LiftError> {
        let body = self.p.program.nest.body.clone();
        for stmt in &body {
            match stmt {
                Stmt::Assign { lhs, rhs, pos, .. } => match lhs {
                    LValue::Scalar(name) => self.assign_scalar(name, rhs, *pos)?,
                    LValue::Element { array, subs } => {
                        self.assign_element(array, subs, rhs, *pos)?
                    }
                },
                Stmt::SeqLoop { index, body, pos } => self.seq_loop(index, body, *pos)?,
            }
        }
        Ok(())
    }

    fn assign_scalar(&mut self, name: &str, rhs: &Expr, pos: Pos) -> Result<(), LiftError> {
        if self.p.program.pragma.is_reduction_var(name) {
            let (op, _) = self.p.program.pragma.reduction.clone().expect("reduction var");
            if self.reduced {
                return Err(LiftError::at(
                    format!("`{name}` is accumulated more than once per iteration"),
                    pos,
                ));
            }
            let contribution = reduction_contribution(op, name, rhs).ok_or_else(|| {
                LiftError::at(format!("update of `{name}` is not an accumulation"), pos)
            })?
            .clone();
            let lifted = self.lift_expr(&contribution)?;
            let src = self.tensor(lifted);
            let elem = self.values[src.0].elem;
            let decl = self.p.program.scalar(name).expect("declared scalar").elem;
            if elem != decl {
                return Err(LiftError::at(
                    format!("reduction over `{name}` converts between element types"),
                    pos,
                ));
            }
            let id = self.emit(
                Some(OpKey::Reduce(op, src)),
                TensorOp::Reduce { op, src },
                ValInfo::scalar(elem),
            );
            self.reduced = true;
            self.yields.push(YieldBinding {
                value: id,
                target: YieldTarget::Scalar { name: name.to_string(), op },
            });
            Ok(())
        } else {
            let lifted = self.lift_expr(rhs)?;
            // A store that converts between element types would behave
            // differently on the host (which truncates on assignment) and
            // in the dataflow graph (which has no store). Literals convert
            // eagerly; anything else leaves the program on the CPU.
            let decl = self.p.program.scalar(name).expect("declared scalar").elem;
            let lifted = coerce_literal(lifted, decl);
            let got = match &lifted {
                Lifted::Tensor(id) => self.values[id.0].elem,
                Lifted::Scalar(e) => self.scalar_elem(e),
            };
            if got != decl {
                return Err(LiftError::at(
                    format!("assignment to `{name}` converts between element types"),
                    pos,
                ));
            }
            self.scalar_defs.insert(name.to_string(), lifted);
            Ok(())
        }
    }

    fn assign_element(
        &mut self,
        array: &str,
        subs: &[Subscript],
        rhs: &Expr,
        pos: Pos,
    ) -> Result<(), LiftError> {
        if self.yields.iter().any(|y| y.target.name() == array) {
            return Err(LiftError::at(format!("`{array}` is written more than once"), pos));
        }
        let decl_elem = self.p.program.array(array).expect("validated array").elem;
        let lifted = coerce_literal(self.lift_expr(rhs)?, decl_elem);
        let src = self.tensor(lifted);
        if self.values[src.0].elem != decl_elem {
            return Err(LiftError::at(
                format!("store to `{array}` converts between element types"),
                pos,
            ));
        }
        let decl = self.p.program.array(array).expect("validated array");
        if subs.len() != self.par.len() {
            return Err(LiftError::at(
                format!("write to `{array}` does not cover the iteration space"),
                pos,
            ));
        }
        let mut dims = Vec::with_capacity(subs.len());
        let mut full = true;
        for ((sub, ctx), extent) in subs.iter().zip(&self.par).zip(&decl.dims) {
            if sub.index != ctx.name {
                return Err(LiftError::at(
                    format!("write to `{array}` permutes the parallel indices"),
                    pos,
                ));
            }
            let offset = (ctx.lo + sub.offset - 1) as usize;
            let w = SliceDim::new(offset, ctx.extent, 1);
            full &= w.offset == 0 && w.len == *extent;
            dims.push(w);
        }
        let value = if full {
            src
        } else {
            let info = ValInfo { shape: decl.dims.clone(), elem: self.values[src.0].elem };
            self.emit(
                None,
                TensorOp::InsertSlice {
                    src,
                    dims,
                    dest: array.to_string(),
                    out_shape: decl.dims.clone(),
                },
                info,
            )
        };
        self.yields.push(YieldBinding {
            value,
            target: YieldTarget::Array { name: array.to_string() },
        });
        self.elem_defs.insert(
            array.to_string(),
            (subs.iter().map(|s| (s.index.clone(), s.offset)).collect(), src),
        );
        Ok(())
    }

    /// A sequential inner loop lifts only as an inner-product accumulation
    /// `t = t + a(i,k)*b(k,j)` over a zero-initialised private scalar —
    /// that is a matrix product over the 2-D parallel domain.
    fn seq_loop(&mut self, index: &LoopIndex, body: &[Stmt], pos: Pos) -> Result<(), LiftError> {
        let fail = |m: &str| Err(LiftError::at(format!("sequential loop: {m}"), pos));
        if self.par.len() != 2 {
            return fail("inner products need a two-dimensional parallel domain");
        }
        if body.len() != 1 {
            return fail("body must be a single accumulation");
        }
        let (acc, rhs) = match &body[0] {
            Stmt::Assign { lhs: LValue::Scalar(name), rhs, .. } => (name.clone(), rhs),
            _ => return fail("body must accumulate into a private scalar"),
        };
        if !self.p.program.pragma.is_private(&acc) {
            return fail("accumulator must be a private scalar");
        }
        match self.scalar_defs.get(&acc) {
            Some(Lifted::Scalar(s)) if s.is_zero_literal() => {}
            _ => return fail("accumulator must be zero before the loop"),
        }
        let contribution = match reduction_contribution(ReduceOp::Add, &acc, rhs) {
            Some(e) => e.clone(),
            None => return fail("accumulation must have the form `t = t + ...`"),
        };
        let (ra, rb) = match &contribution {
            Expr::Binary { op: BinOp::Mul, lhs, rhs } => (lhs.as_ref(), rhs.as_ref()),
            _ => return fail("contribution must be a product of two array elements"),
        };
        let (ra, rb) = match (ra, rb) {
            (
                Expr::ArrayRef { array: aa, subs: sa, pos: pa },
                Expr::ArrayRef { array: ab, subs: sb, pos: pb },
            ) if sa.len() == 2 && sb.len() == 2 => ((aa, sa, *pa), (ab, sb, *pb)),
            _ => return fail("contribution must be a product of two array elements"),
        };
        let k = IdxCtx { name: index.name.clone(), lo: index.lo, extent: index.extent() };
        let row = self.par[0].clone();
        let col = self.par[1].clone();
        // One factor is indexed (row, k), the other (k, col).
        let classify = |subs: &[Subscript]| -> Option<bool> {
            if subs[0].index == row.name && subs[1].index == k.name {
                Some(true) // left operand
            } else if subs[0].index == k.name && subs[1].index == col.name {
                Some(false) // right operand
            } else {
                None
            }
        };
        let (left, right) = match (classify(ra.1), classify(rb.1)) {
            (Some(true), Some(false)) => (ra, rb),
            (Some(false), Some(true)) => (rb, ra),
            _ => return fail("factors must be indexed (row, k) and (k, col)"),
        };
        let a = self.ref_window(left.0, left.1, &[row.clone(), k.clone()], left.2)?;
        let b = self.ref_window(right.0, right.1, &[k, col], right.2)?;
        let elem = promote(self.values[a.0].elem, self.values[b.0].elem);
        if elem != self.p.program.scalar(&acc).expect("declared scalar").elem {
            return fail("accumulator type differs from the product type");
        }
        let m = self.values[a.0].shape[0];
        let n = self.values[b.0].shape[1];
        if self.values[a.0].shape[1] != self.values[b.0].shape[0] {
            return fail("inner extents of the two factors differ");
        }
        let id = self.emit(
            Some(OpKey::MatMul(a, b)),
            TensorOp::MatMul { a, b },
            ValInfo { shape: vec![m, n], elem },
        );
        self.scalar_defs.insert(acc, Lifted::Tensor(id));
        Ok(())
    }

    /// Prune dead values, hoist splats, renumber args-first, and collect
    /// referenced parameters.
    fn finish(self) -> TensorProgram {
        let mut live = vec![false; self.values.len()];
        let mut stack: Vec<ValId> = self.yields.iter().map(|y| y.value).collect();
        let op_of: HashMap<ValId, &TensorOp> = self.ops.iter().map(|(id, op)| (*id, op)).collect();
        while let Some(id) = stack.pop() {
            if live[id.0] {
                continue;
            }
            live[id.0] = true;
            if let Some(op) = op_of.get(&id) {
                stack.extend(op.operands());
            }
        }

        let live_args: Vec<&ArgInfo> = self.args.iter().filter(|a| live[a.id.0]).collect();
        let is_splat = |op: &TensorOp| matches!(op, TensorOp::Splat { .. });
        let ordered: Vec<&(ValId, TensorOp)> = self
            .ops
            .iter()
            .filter(|(id, op)| live[id.0] && is_splat(op))
            .chain(self.ops.iter().filter(|(id, op)| live[id.0] && !is_splat(op)))
            .collect();

        let mut remap: HashMap<ValId, ValId> = HashMap::new();
        let mut values = Vec::new();
        let mut args = Vec::new();
        for a in &live_args {
            let new = ValId(values.len());
            remap.insert(a.id, new);
            values.push(self.values[a.id.0].clone());
            args.push(ArgInfo { name: a.name.clone(), id: new, dims: a.dims.clone(), elem: a.elem });
        }
        let mut ops = Vec::new();
        let mut params = std::collections::BTreeSet::new();
        for (id, op) in &ordered {
            let new = ValId(values.len());
            remap.insert(*id, new);
            values.push(self.values[id.0].clone());
            let op = remap_op(op, &remap);
            if let TensorOp::Splat { expr } = &op {
                collect_params(expr, &mut params);
            }
            ops.push((new, op));
        }
        let yields = self
            .yields
            .iter()
            .map(|y| YieldBinding { value: remap[&y.value], target: y.target.clone() })
            .collect();
        TensorProgram {
            domain: self.domain,
            values,
            args,
            ops,
            yields,
            params: params.into_iter().collect(),
        }
    }
}

fn promote(a: ElemType, b: ElemType) -> ElemType {
    if a == ElemType::I32 && b == ElemType::I32 {
        ElemType::I32
    } else {
        ElemType::F32
    }
}

/// Bare literals take the type of the location they are stored to, the
/// way Fortran converts on assignment.
fn coerce_literal(v: Lifted, to: ElemType) -> Lifted {
    match v {
        Lifted::Scalar(ScalarExpr::Lit(lit)) if lit.elem_type() != to => {
            Lifted::Scalar(ScalarExpr::Lit(Value::literal(to, lit.as_f64())))
        }
        other => other,
    }
}

fn remap_op(op: &TensorOp, remap: &HashMap<ValId, ValId>) -> TensorOp {
    let r = |id: &ValId| remap[id];
    match op {
        TensorOp::Splat { expr } => TensorOp::Splat { expr: expr.clone() },
        TensorOp::Elementwise { op, lhs, rhs } => {
            TensorOp::Elementwise { op: *op, lhs: r(lhs), rhs: r(rhs) }
        }
        TensorOp::Unary { op, src } => TensorOp::Unary { op: *op, src: r(src) },
        TensorOp::ExtractSlice { src, dims } => {
            TensorOp::ExtractSlice { src: r(src), dims: dims.clone() }
        }
        TensorOp::InsertSlice { src, dims, dest, out_shape } => TensorOp::InsertSlice {
            src: r(src),
            dims: dims.clone(),
            dest: dest.clone(),
            out_shape: out_shape.clone(),
        },
        TensorOp::Reduce { op, src } => TensorOp::Reduce { op: *op, src: r(src) },
        TensorOp::MatMul { a, b } => TensorOp::MatMul { a: r(a), b: r(b) },
    }
}

fn collect_params(e: &ScalarExpr, out: &mut std::collections::BTreeSet<String>) {
    match e {
        ScalarExpr::Lit(_) => {}
        ScalarExpr::Param(name) => {
            out.insert(name.clone());
        }
        ScalarExpr::Neg(a) | ScalarExpr::Call1(_, a) => collect_params(a, out),
        ScalarExpr::Bin(_, a, b) | ScalarExpr::Call2(_, a, b) => {
            collect_params(a, out);
            collect_params(b, out);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::loopfront::{parse, validate};
    use crate::tensorlift::shape_check;

    fn lifted(src: &str) -> TensorProgram {
        let p = validate(&parse(src).unwrap()).unwrap().into_program();
        let tp = lift(&p).unwrap();
        shape_check(&tp).unwrap();
        tp
    }

    fn lift_err(src: &str) -> LiftError {
        let p = validate(&parse(src).unwrap()).unwrap().into_program();
        lift(&p).unwrap_err()
    }

    #[test]
    fn vector_kernel_lists_splat_add_mul_yield() {
        let tp = lifted(
            "!$omp target parallel do private(t) map(from:c)\n\
             do i=1, 128\n  t=a(i)+b(i)\n  c(i)=t*100\nend do\n",
        );
        assert_eq!(tp.op_mnemonics(), vec!["splat", "add", "mul", "yield"]);
        assert_eq!(tp.domain, vec![128]);
        assert_eq!(tp.args.len(), 2);
        let dump = tp.dump();
        assert!(dump.contains("splat 100"), "{dump}");
        assert!(dump.contains("yield %4 -> @c"), "{dump}");
    }

    #[test]
    fn shifted_windows_become_slices() {
        let tp = lifted(
            "real :: a(130), b(130), c(130)\n\
             !$omp target parallel do map(to:a,b) map(from:c)\n\
             do i=2, 129\n  c(i) = a(i-1) + b(i+1)\nend do\n",
        );
        let mut extracts: Vec<(usize, usize, usize)> = tp
            .ops
            .iter()
            .filter_map(|(_, op)| match op {
                TensorOp::ExtractSlice { dims, .. } => Some(dims[0].triple()),
                _ => None,
            })
            .collect();
        extracts.sort_unstable();
        assert_eq!(extracts, vec![(0, 128, 1), (2, 128, 1)]);
        let inserts: Vec<(usize, usize, usize)> = tp
            .ops
            .iter()
            .filter_map(|(_, op)| match op {
                TensorOp::InsertSlice { dims, .. } => Some(dims[0].triple()),
                _ => None,
            })
            .collect();
        assert_eq!(inserts, vec![(1, 128, 1)]);
    }

    #[test]
    fn interior_2d_stencil_uses_rank_two_windows() {
        let tp = lifted(
            "real :: a(64,32), c(64,32)\n\
             !$omp target parallel do map(to:a) map(from:c)\n\
             do i=2, 63\n do j=2, 31\n\
             c(i,j) = 0.25 * (a(i-1,j) + a(i+1,j) + a(i,j-1) + a(i,j+1))\n\
             end do\nend do\n",
        );
        assert_eq!(tp.domain, vec![62, 30]);
        let windows: Vec<Vec<(usize, usize, usize)>> = tp
            .ops
            .iter()
            .filter_map(|(_, op)| match op {
                TensorOp::ExtractSlice { dims, .. } => {
                    Some(dims.iter().map(|w| w.triple()).collect())
                }
                _ => None,
            })
            .collect();
        assert_eq!(windows.len(), 4);
        assert!(windows.contains(&vec![(0, 62, 1), (1, 30, 1)])); // a(i-1,j)
        assert!(windows.contains(&vec![(2, 62, 1), (1, 30, 1)])); // a(i+1,j)
        assert!(windows.contains(&vec![(1, 62, 1), (0, 30, 1)])); // a(i,j-1)
        assert!(windows.contains(&vec![(1, 62, 1), (2, 30, 1)])); // a(i,j+1)
        // one arg read four ways
        assert_eq!(tp.args.len(), 1);
    }

    #[test]
    fn max_with_zero_becomes_relu() {
        for src in [
            "!$omp target parallel do map(from:y)\ndo i=1, 16\n  y(i) = max(0.0, x(i))\nend do\n",
            "!$omp target parallel do map(from:y)\ndo i=1, 16\n  y(i) = max(x(i), 0.0)\nend do\n",
        ] {
            let tp = lifted(src);
            assert_eq!(tp.op_mnemonics(), vec!["relu", "yield"], "{src}");
        }
        // a non-zero bound stays an elementwise max against a splat
        let tp = lifted(
            "real :: alpha\n!$omp target parallel do map(from:y)\n\
             do i=1, 16\n  y(i) = max(x(i), alpha)\nend do\n",
        );
        assert_eq!(tp.op_mnemonics(), vec!["splat", "max", "yield"]);
        assert_eq!(tp.params, vec!["alpha"]);
    }

    #[test]
    fn shared_subexpressions_are_hash_consed() {
        let tp = lifted(
            "!$omp target parallel do map(from:c)\n\
             do i=1, 8\n  c(i) = (a(i)+b(i)) * (b(i)+a(i))\nend do\n",
        );
        // one add (operands normalised), one mul
        assert_eq!(tp.op_mnemonics(), vec!["add", "mul", "yield"]);
    }

    #[test]
    fn scaled_vector_update_splats_the_parameter() {
        let tp = lifted(
            "real :: alpha\n!$omp target parallel do map(to:x,y) map(from:y)\n\
             do i=1, 64\n  y(i) = alpha*x(i) + y(i)\nend do\n",
        );
        assert_eq!(tp.op_mnemonics(), vec!["splat", "mul", "add", "yield"]);
        assert_eq!(tp.params, vec!["alpha"]);
        assert_eq!(tp.args.len(), 2);
    }

    #[test]
    fn reduction_lifts_to_reduce_and_scalar_yield() {
        let tp = lifted(
            "real :: r\n!$omp target parallel do reduction(+:r) map(to:x)\n\
             do i=1, 32\n  r = r + x(i)*x(i)\nend do\n",
        );
        assert_eq!(tp.op_mnemonics(), vec!["mul", "reduce", "yield"]);
        assert_eq!(tp.args.len(), 1, "x*x reads one arg");
        match &tp.yields[0].target {
            YieldTarget::Scalar { name, op } => {
                assert_eq!(name, "r");
                assert_eq!(*op, ReduceOp::Add);
            }
            other => panic!("expected scalar yield, got {other:?}"),
        }
    }

    #[test]
    fn inner_product_loop_lifts_to_matmul() {
        let tp = lifted(
            "real :: a(48,32), b(32,40), c(48,40)\nreal :: t\n\
             !$omp target parallel do private(t) map(to:a,b) map(from:c)\n\
             do i=1,48\n do j=1,40\n  t = 0.0\n  do k=1,32\n   t = t + a(i,k)*b(k,j)\n  end do\n  c(i,j) = t\n end do\nend do\n",
        );
        assert_eq!(tp.op_mnemonics(), vec!["matmul", "yield"]);
        let (id, _) = &tp.ops[0];
        assert_eq!(tp.info(*id).shape, vec![48, 40]);
    }

    #[test]
    fn matmul_accepts_swapped_factors() {
        let tp = lifted(
            "real :: a(8,4), b(4,8), c(8,8)\nreal :: t\n\
             !$omp target parallel do private(t) map(to:a,b) map(from:c)\n\
             do i=1,8\n do j=1,8\n  t = 0.0\n  do k=1,4\n   t = t + b(k,j)*a(i,k)\n  end do\n  c(i,j) = t\n end do\nend do\n",
        );
        assert_eq!(tp.op_mnemonics(), vec!["matmul", "yield"]);
    }

    #[test]
    fn dead_values_and_unused_args_are_pruned() {
        let tp = lifted(
            "!$omp target parallel do private(t) map(from:c)\n\
             do i=1, 8\n  t = a(i)\n  t = b(i) + b(i)\n  c(i) = t\nend do\n",
        );
        assert!(tp.args.iter().all(|a| a.name != "a"), "overwritten read of a is dead");
        assert_eq!(tp.op_mnemonics(), vec!["add", "yield"]);
    }

    #[test]
    fn two_outputs_yield_twice() {
        let tp = lifted(
            "real :: s\n!$omp target parallel do reduction(+:s) map(to:x) map(from:es)\n\
             do i=1, 16\n  es(i) = exp(x(i))\n  s = s + es(i)\nend do\n",
        );
        assert_eq!(tp.op_mnemonics(), vec!["exp", "reduce", "yield", "yield"]);
        // es(i) read feeds the reduce from the same exp value
        assert_eq!(tp.args.len(), 1);
    }

    #[test]
    fn loop_index_as_value_is_unsupported() {
        let err = lift_err(
            "!$omp target parallel do map(from:c)\n\
             do i=1, 8\n  c(i) = a(i) + i\nend do\n",
        );
        assert!(err.message.contains("loop index"), "{err}");
    }

    #[test]
    fn permuted_write_is_unsupported() {
        let err = lift_err(
            "real :: a(8,8), c(8,8)\n\
             !$omp target parallel do map(to:a) map(from:c)\n\
             do i=1,8\n do j=1,8\n  c(j,i) = a(i,j)\n end do\nend do\n",
        );
        assert!(err.message.contains("permutes") || err.message.contains("subscripted"), "{err}");
    }

    #[test]
    fn non_product_sequential_loop_is_unsupported() {
        let err = lift_err(
            "real :: a(8,4), c(8,8)\nreal :: t\n\
             !$omp target parallel do private(t) map(to:a) map(from:c)\n\
             do i=1,8\n do j=1,8\n  t = 0.0\n  do k=1,4\n   t = t + a(i,k)\n  end do\n  c(i,j) = t\n end do\nend do\n",
        );
        assert!(err.message.contains("sequential loop"), "{err}");
    }

    #[test]
    fn splats_are_hoisted_and_ids_ascend() {
        let tp = lifted(
            "!$omp target parallel do private(t) map(from:c)\n\
             do i=1, 128\n  t=a(i)+b(i)\n  c(i)=t*100\nend do\n",
        );
        // args %0 %1, then ops numbered consecutively in listing order
        for (pos, (id, _)) in tp.ops.iter().enumerate() {
            assert_eq!(id.0, tp.args.len() + pos);
        }
        assert!(matches!(tp.ops[0].1, TensorOp::Splat { .. }));
    }

    #[test]
    fn whole_array_write_skips_insert_slice() {
        let tp = lifted(
            "!$omp target parallel do map(from:y)\n\
             do i=1, 32\n  y(i) = max(0.0, x(i))\nend do\n",
        );
        assert!(tp.ops.iter().all(|(_, op)| !matches!(op, TensorOp::InsertSlice { .. })));
    }
}
