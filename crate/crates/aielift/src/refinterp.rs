//! Scalar reference interpreter.
//!
//! Executes a validated loop program iteration by iteration on the host,
//! in plain `f32`/`i32` arithmetic. Every other execution path (tensor
//! evaluator, tile simulator, hybrid runs) is checked against this one.
//!
//! Iterations run in loop order. A `range` restricts execution to a
//! sub-range of the *outermost* index, which is how hybrid runs split work:
//! running `[0, k)` and `[k, n)` must equal running `[0, n)` except for
//! reduction rounding.

use crate::loopfront::{
    reduction_contribution, BinOp, Expr, Intrinsic, LValue, LoopProgram, ReduceOp, Stmt,
    ValidatedLoopProgram,
};
use crate::value::{ElemType, Value};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;
use std::collections::BTreeMap;
use thiserror::Error;

/// A dense row-major array buffer.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Buffer {
    pub elem: ElemType,
    pub dims: Vec<usize>,
    pub data: Vec<Value>,
}

impl Buffer {
    pub fn zeros(elem: ElemType, dims: Vec<usize>) -> Self {
        let len = dims.iter().product();
        Buffer { elem, dims, data: vec![elem.zero(); len] }
    }

    pub fn from_f32(dims: Vec<usize>, data: Vec<f32>) -> Self {
        assert_eq!(dims.iter().product::<usize>(), data.len());
        Buffer { elem: ElemType::F32, dims, data: data.into_iter().map(Value::F32).collect() }
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }
}

/// Named buffers and scalars a program runs against.
#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct Environment {
    pub arrays: BTreeMap<String, Buffer>,
    pub scalars: BTreeMap<String, Value>,
}

impl Environment {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn set_array(&mut self, name: &str, buf: Buffer) -> &mut Self {
        self.arrays.insert(name.to_string(), buf);
        self
    }

    pub fn set_scalar(&mut self, name: &str, v: Value) -> &mut Self {
        self.scalars.insert(name.to_string(), v);
        self
    }

    /// Bind anything the program declares that the caller left unbound:
    /// arrays listed only in `map(from:)` (and other unbound arrays) are
    /// zero-filled, unbound scalars start at zero.
    pub fn prepare(&mut self, p: &ValidatedLoopProgram) {
        for a in &p.program.arrays {
            let entry = self.arrays.entry(a.name.clone());
            entry.or_insert_with(|| Buffer::zeros(a.elem, a.dims.clone()));
        }
        for zf in &p.zero_filled {
            if let Some(decl) = p.program.array(zf) {
                self.arrays.insert(zf.clone(), Buffer::zeros(decl.elem, decl.dims.clone()));
            }
        }
        for s in &p.program.scalars {
            self.scalars.entry(s.name.clone()).or_insert(s.elem.zero());
        }
    }

    /// Deterministic input synthesis: inputs uniform in [-1, 1], parameters
    /// uniform in [0.5, 2], outputs zeroed. Used by the run driver and the
    /// regression harness.
    pub fn synthesize(p: &ValidatedLoopProgram, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut env = Environment::new();
        for a in &p.program.arrays {
            let len: usize = a.dims.iter().product();
            let data: Vec<Value> = (0..len)
                .map(|_| match a.elem {
                    ElemType::F32 => Value::F32(rng.gen_range(-1.0f32..=1.0)),
                    ElemType::I32 => Value::I32(rng.gen_range(-100..=100)),
                })
                .collect();
            env.arrays.insert(a.name.clone(), Buffer { elem: a.elem, dims: a.dims.clone(), data });
        }
        for s in &p.params {
            let decl = p.program.scalar(s).expect("param is declared");
            let v = match decl.elem {
                ElemType::F32 => Value::F32(rng.gen_range(0.5f32..=2.0)),
                ElemType::I32 => Value::I32(rng.gen_range(1..=8)),
            };
            env.scalars.insert(s.clone(), v);
        }
        env.prepare(p);
        env
    }
}

#[derive(Debug, Error, PartialEq)]
pub enum RunError {
    #[error("array `{0}` is not bound in the environment")]
    UnboundArray(String),
    #[error("scalar `{0}` is not bound in the environment")]
    UnboundScalar(String),
    #[error("array `{name}` bound with {got} elements, declared {want}")]
    ShapeMismatch { name: String, got: usize, want: usize },
    #[error("index {index} out of bounds for `{name}` (len {len})")]
    OutOfBounds { name: String, index: i64, len: usize },
    #[error("iteration range {lo}..{hi} outside the loop domain 0..{n}")]
    BadRange { lo: usize, hi: usize, n: usize },
}

/// Sub-range of the outermost loop's iterations, 0-based half-open.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct IterRange {
    pub lo: usize,
    pub hi: usize,
}

impl IterRange {
    pub fn new(lo: usize, hi: usize) -> Self {
        IterRange { lo, hi }
    }

    pub fn len(&self) -> usize {
        self.hi.saturating_sub(self.lo)
    }

    pub fn is_empty(&self) -> bool {
        self.hi <= self.lo
    }
}

/// Execute `p` against `env`, optionally restricted to a sub-range of the
/// outermost index.
pub fn interpret(
    p: &ValidatedLoopProgram,
    env: &mut Environment,
    range: Option<IterRange>,
) -> Result<(), RunError> {
    let program = &p.program;
    let outer = &program.nest.indices[0];
    let n_outer = outer.extent();
    let range = range.unwrap_or(IterRange::new(0, n_outer));
    if range.lo > range.hi || range.hi > n_outer {
        return Err(RunError::BadRange { lo: range.lo, hi: range.hi, n: n_outer });
    }

    let mut machine = Machine::compile(p, env)?;

    // Reduction runs against the identity, then folds in the host's
    // initial value, so partial ranges compose with `op`.
    let red = program.pragma.reduction.clone();
    let red_init = match &red {
        Some((op, var)) => {
            let slot = machine.scalar_slot(var)?;
            let init = machine.scalars[slot];
            let elem = program.scalar(var).expect("validated").elem;
            machine.scalars[slot] = match op {
                ReduceOp::Add => elem.zero(),
                ReduceOp::Max => elem.min_value(),
            };
            Some((op.clone(), slot, init))
        }
        None => None,
    };

    machine.run_range(range)?;

    if let Some((op, slot, init)) = red_init {
        let acc = machine.scalars[slot];
        machine.scalars[slot] = match op {
            ReduceOp::Add => init.add(acc),
            ReduceOp::Max => init.max(acc),
        };
    }
    machine.write_back(env);
    Ok(())
}

/// Convenience wrapper: prepare a fresh copy of `env`, run, return it.
pub fn run(
    p: &ValidatedLoopProgram,
    env: &Environment,
    range: Option<IterRange>,
) -> Result<Environment, RunError> {
    let mut out = env.clone();
    out.prepare(p);
    interpret(p, &mut out, range)?;
    Ok(out)
}

/// Throughput in millions of points per second.
pub fn throughput_mpts(points: usize, seconds: f64) -> f64 {
    if seconds <= 0.0 {
        return 0.0;
    }
    points as f64 / seconds / 1.0e6
}

// ---- resolved program ----------------------------------------------------

/// The interpreter works on a name-free form: arrays, scalars and loop
/// indices become integer slots so the per-iteration path does no map
/// lookups.
struct Machine<'p> {
    program: &'p LoopProgram,
    array_names: Vec<String>,
    buffers: Vec<Buffer>,
    scalar_names: Vec<String>,
    scalars: Vec<Value>,
    /// Loop index values by slot; parallel indices first, then inner loops.
    idx: Vec<i64>,
    body: Vec<RStmt>,
}

enum RExpr {
    Lit(Value),
    IntLit(i64),
    Scalar(usize),
    Index(usize),
    Elem { buf: usize, subs: Vec<(usize, i64)>, row_stride: usize },
    Bin(BinOp, Box<RExpr>, Box<RExpr>),
    Neg(Box<RExpr>),
    Call1(Intrinsic, Box<RExpr>),
    Call2(Intrinsic, Box<RExpr>, Box<RExpr>),
}

enum RStmt {
    AssignScalar { slot: usize, elem: ElemType, rhs: RExpr },
    AssignElem { buf: usize, subs: Vec<(usize, i64)>, row_stride: usize, elem: ElemType, rhs: RExpr },
    Loop { idx_slot: usize, lo: i64, hi: i64, body: Vec<RStmt> },
}

impl<'p> Machine<'p> {
    fn compile(p: &'p ValidatedLoopProgram, env: &Environment) -> Result<Self, RunError> {
        let program = &p.program;
        let mut array_names = Vec::new();
        let mut buffers = Vec::new();
        for a in &program.arrays {
            let buf = env
                .arrays
                .get(&a.name)
                .ok_or_else(|| RunError::UnboundArray(a.name.clone()))?;
            if buf.data.len() != a.len() {
                return Err(RunError::ShapeMismatch {
                    name: a.name.clone(),
                    got: buf.data.len(),
                    want: a.len(),
                });
            }
            array_names.push(a.name.clone());
            buffers.push(buf.clone());
        }
        let mut scalar_names = Vec::new();
        let mut scalars = Vec::new();
        for s in &program.scalars {
            let v = env
                .scalars
                .get(&s.name)
                .copied()
                .ok_or_else(|| RunError::UnboundScalar(s.name.clone()))?;
            scalar_names.push(s.name.clone());
            scalars.push(v);
        }

        let mut m = Machine {
            program,
            array_names,
            buffers,
            scalar_names,
            scalars,
            idx: Vec::new(),
            body: Vec::new(),
        };
        let mut idx_names: Vec<String> =
            program.nest.indices.iter().map(|ix| ix.name.clone()).collect();
        m.body = m.resolve_body(&program.nest.body, &mut idx_names)?;
        m.idx = vec![0; idx_names.len()];
        Ok(m)
    }

    fn scalar_slot(&self, name: &str) -> Result<usize, RunError> {
        self.scalar_names
            .iter()
            .position(|n| n == name)
            .ok_or_else(|| RunError::UnboundScalar(name.to_string()))
    }

    fn resolve_body(
        &self,
        body: &[Stmt],
        idx_names: &mut Vec<String>,
    ) -> Result<Vec<RStmt>, RunError> {
        let mut out = Vec::with_capacity(body.len());
        for stmt in body {
            match stmt {
                Stmt::Assign { lhs, rhs, .. } => {
                    let rhs = self.resolve_expr(rhs, idx_names)?;
                    match lhs {
                        LValue::Scalar(name) => {
                            let slot = self.scalar_slot(name)?;
                            let elem = self.program.scalar(name).expect("declared").elem;
                            out.push(RStmt::AssignScalar { slot, elem, rhs });
                        }
                        LValue::Element { array, subs } => {
                            let (buf, rsubs, row_stride) = self.resolve_access(array, subs, idx_names)?;
                            let elem = self.buffers[buf].elem;
                            out.push(RStmt::AssignElem { buf, subs: rsubs, row_stride, elem, rhs });
                        }
                    }
                }
                Stmt::SeqLoop { index, body, .. } => {
                    idx_names.push(index.name.clone());
                    let idx_slot = idx_names.len() - 1;
                    let inner = self.resolve_body(body, idx_names)?;
                    out.push(RStmt::Loop { idx_slot, lo: index.lo, hi: index.hi, body: inner });
                }
            }
        }
        Ok(out)
    }

    fn resolve_access(
        &self,
        array: &str,
        subs: &[crate::loopfront::Subscript],
        idx_names: &[String],
    ) -> Result<(usize, Vec<(usize, i64)>, usize), RunError> {
        let buf = self
            .array_names
            .iter()
            .position(|n| n == array)
            .ok_or_else(|| RunError::UnboundArray(array.to_string()))?;
        let rsubs: Vec<(usize, i64)> = subs
            .iter()
            .map(|s| {
                let slot = idx_names
                    .iter()
                    .position(|n| *n == s.index)
                    .expect("validated subscript index");
                (slot, s.offset)
            })
            .collect();
        let row_stride = if self.buffers[buf].dims.len() == 2 { self.buffers[buf].dims[1] } else { 0 };
        Ok((buf, rsubs, row_stride))
    }

    fn resolve_expr(&self, e: &Expr, idx_names: &[String]) -> Result<RExpr, RunError> {
        Ok(match e {
            Expr::Lit { raw, is_int } => {
                if *is_int {
                    RExpr::IntLit(*raw as i64)
                } else {
                    RExpr::Lit(Value::F32(*raw as f32))
                }
            }
            Expr::Scalar { name, .. } => {
                if let Some(slot) = idx_names.iter().position(|n| n == name) {
                    RExpr::Index(slot)
                } else {
                    RExpr::Scalar(self.scalar_slot(name)?)
                }
            }
            Expr::ArrayRef { array, subs, .. } => {
                let (buf, rsubs, row_stride) = self.resolve_access(array, subs, idx_names)?;
                RExpr::Elem { buf, subs: rsubs, row_stride }
            }
            Expr::Unary { neg } => RExpr::Neg(Box::new(self.resolve_expr(neg, idx_names)?)),
            Expr::Binary { op, lhs, rhs } => RExpr::Bin(
                *op,
                Box::new(self.resolve_expr(lhs, idx_names)?),
                Box::new(self.resolve_expr(rhs, idx_names)?),
            ),
            Expr::Call { f, args, .. } => {
                if args.len() == 1 {
                    RExpr::Call1(*f, Box::new(self.resolve_expr(&args[0], idx_names)?))
                } else {
                    RExpr::Call2(
                        *f,
                        Box::new(self.resolve_expr(&args[0], idx_names)?),
                        Box::new(self.resolve_expr(&args[1], idx_names)?),
                    )
                }
            }
        })
    }

    fn run_range(&mut self, range: IterRange) -> Result<(), RunError> {
        let indices = &self.program.nest.indices;
        let outer = &indices[0];
        let body = std::mem::take(&mut self.body);
        let result = (|| {
            for t in range.lo..range.hi {
                self.idx[0] = outer.lo + t as i64;
                if indices.len() == 2 {
                    let inner = &indices[1];
                    for v in inner.lo..=inner.hi {
                        self.idx[1] = v;
                        self.exec_body(&body)?;
                    }
                } else {
                    self.exec_body(&body)?;
                }
            }
            Ok(())
        })();
        self.body = body;
        result
    }

    fn exec_body(&mut self, body: &[RStmt]) -> Result<(), RunError> {
        for stmt in body {
            match stmt {
                RStmt::AssignScalar { slot, elem, rhs } => {
                    let v = self.eval(rhs)?;
                    self.scalars[*slot] = convert(v, *elem);
                }
                RStmt::AssignElem { buf, subs, row_stride, elem, rhs } => {
                    let v = self.eval(rhs)?;
                    let at = self.flat_index(*buf, subs, *row_stride)?;
                    self.buffers[*buf].data[at] = convert(v, *elem);
                }
                RStmt::Loop { idx_slot, lo, hi, body } => {
                    for v in *lo..=*hi {
                        self.idx[*idx_slot] = v;
                        self.exec_body(body)?;
                    }
                }
            }
        }
        Ok(())
    }

    /// 0-based flat offset of a 1-based subscript vector.
    fn flat_index(&self, buf: usize, subs: &[(usize, i64)], row_stride: usize) -> Result<usize, RunError> {
        let b = &self.buffers[buf];
        let mut flat: i64 = 0;
        for (dim, (slot, off)) in subs.iter().enumerate() {
            let pos = self.idx[*slot] + off - 1; // to 0-based
            if pos < 0 || pos as usize >= b.dims[dim] {
                return Err(RunError::OutOfBounds {
                    name: self.array_names[buf].clone(),
                    index: pos + 1,
                    len: b.dims[dim],
                });
            }
            flat = if dim == 0 { pos } else { flat * row_stride as i64 + pos };
        }
        Ok(flat as usize)
    }

    fn eval(&self, e: &RExpr) -> Result<Value, RunError> {
        Ok(match e {
            RExpr::Lit(v) => *v,
            RExpr::IntLit(v) => Value::I32(*v as i32),
            RExpr::Scalar(slot) => self.scalars[*slot],
            RExpr::Index(slot) => Value::I32(self.idx[*slot] as i32),
            RExpr::Elem { buf, subs, row_stride } => {
                let at = self.flat_index(*buf, subs, *row_stride)?;
                self.buffers[*buf].data[at]
            }
            RExpr::Neg(a) => self.eval(a)?.neg(),
            RExpr::Bin(op, a, b) => {
                let a = self.eval(a)?;
                let b = self.eval(b)?;
                match op {
                    BinOp::Add => a.add(b),
                    BinOp::Sub => a.sub(b),
                    BinOp::Mul => a.mul(b),
                    BinOp::Div => a.div(b),
                }
            }
            RExpr::Call1(f, a) => {
                let a = self.eval(a)?;
                match f {
                    Intrinsic::Exp => a.exp(),
                    Intrinsic::Sqrt => a.sqrt(),
                    _ => unreachable!("arity checked at parse"),
                }
            }
            RExpr::Call2(f, a, b) => {
                let a = self.eval(a)?;
                let b = self.eval(b)?;
                match f {
                    Intrinsic::Max => a.max(b),
                    Intrinsic::Min => a.min(b),
                    _ => unreachable!("arity checked at parse"),
                }
            }
        })
    }

    fn write_back(self, env: &mut Environment) {
        for (name, buf) in self.array_names.into_iter().zip(self.buffers) {
            env.arrays.insert(name, buf);
        }
        for (name, v) in self.scalar_names.into_iter().zip(self.scalars) {
            // Private scalars are undefined after the region; keep the
            // host's original binding instead of leaking the last
            // iteration's value.
            if self.program.pragma.is_private(&name) {
                continue;
            }
            env.scalars.insert(name, v);
        }
    }
}

/// Fortran-style conversion on assignment: the value takes the
/// destination's type, truncating float→int.
fn convert(v: Value, to: ElemType) -> Value {
    match (v, to) {
        (Value::F32(x), ElemType::I32) => Value::I32(x as i32),
        (Value::I32(x), ElemType::F32) => Value::F32(x as f32),
        (v, _) => v,
    }
}

/// Helper used by lifting and hybrid checks: the contribution expression
/// of the program's reduction statement, if there is exactly one.
pub fn single_reduction_statement(p: &ValidatedLoopProgram) -> Option<&Expr> {
    let (op, var) = p.program.pragma.reduction.as_ref()?;
    let mut found = None;
    for stmt in &p.program.nest.body {
        if let Stmt::Assign { lhs: LValue::Scalar(name), rhs, .. } = stmt {
            if name == var {
                match found {
                    None => found = reduction_contribution(*op, var, rhs),
                    Some(_) => return None, // several updates: not liftable as one Reduce
                }
            }
        }
    }
    found
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::loopfront::{parse, validate};

    fn validated(src: &str) -> ValidatedLoopProgram {
        validate(&parse(src).unwrap()).unwrap().into_program()
    }

    fn f32s(env: &Environment, name: &str) -> Vec<f32> {
        env.arrays[name].data.iter().map(|v| v.as_f32()).collect()
    }

    #[test]
    fn elementwise_add_scale() {
        let p = validated(
            "real :: a(2), b(2), c(2)\n\
             !$omp target parallel do private(t) map(to:a,b) map(from:c)\n\
             do i=1, 2\n  t=a(i)+b(i)\n  c(i)=t*100\nend do\n",
        );
        let mut env = Environment::new();
        env.set_array("a", Buffer::from_f32(vec![2], vec![1.0, 2.0]));
        env.set_array("b", Buffer::from_f32(vec![2], vec![3.0, 4.0]));
        env.prepare(&p);
        interpret(&p, &mut env, None).unwrap();
        assert_eq!(f32s(&env, "c"), vec![400.0, 600.0]);
    }

    #[test]
    fn stencil_shifts_read_windows() {
        let p = validated(
            "real :: a(130), b(130), c(130)\n\
             !$omp target parallel do map(to:a,b) map(from:c)\n\
             do i=2, 129\n  c(i) = a(i-1) + b(i+1)\nend do\n",
        );
        let mut env = Environment::new();
        env.set_array("a", Buffer::from_f32(vec![130], vec![1.0; 130]));
        env.set_array("b", Buffer::from_f32(vec![130], vec![1.0; 130]));
        env.prepare(&p);
        interpret(&p, &mut env, None).unwrap();
        let c = f32s(&env, "c");
        assert_eq!(c[0], 0.0, "c(1) untouched");
        assert_eq!(c[129], 0.0, "c(130) untouched");
        assert!(c[1..129].iter().all(|&v| v == 2.0));
    }

    #[test]
    fn dot_product_reduction() {
        let p = validated(
            "real :: x(3), y(3)\nreal :: r\n\
             !$omp target parallel do reduction(+:r) map(to:x,y)\n\
             do i=1, 3\n  r = r + x(i)*y(i)\nend do\n",
        );
        let mut env = Environment::new();
        env.set_array("x", Buffer::from_f32(vec![3], vec![1.0, 2.0, 3.0]));
        env.set_array("y", Buffer::from_f32(vec![3], vec![4.0, 5.0, 6.0]));
        env.prepare(&p);
        interpret(&p, &mut env, None).unwrap();
        assert_eq!(env.scalars["r"], Value::F32(32.0));
    }

    #[test]
    fn reduction_folds_in_initial_value() {
        let p = validated(
            "real :: x(3)\nreal :: m\n\
             !$omp target parallel do reduction(max:m) map(to:x)\n\
             do i=1, 3\n  m = max(m, x(i))\nend do\n",
        );
        let mut env = Environment::new();
        env.set_array("x", Buffer::from_f32(vec![3], vec![-3.0, -5.0, -4.0]));
        env.set_scalar("m", Value::F32(-4.5));
        env.prepare(&p);
        interpret(&p, &mut env, None).unwrap();
        // max over inputs is -3; the host initial value participates.
        assert_eq!(env.scalars["m"], Value::F32(-3.0));

        let mut env2 = Environment::new();
        env2.set_array("x", Buffer::from_f32(vec![3], vec![-3.0, -5.0, -4.0]));
        env2.set_scalar("m", Value::F32(7.0));
        env2.prepare(&p);
        interpret(&p, &mut env2, None).unwrap();
        assert_eq!(env2.scalars["m"], Value::F32(7.0));
    }

    #[test]
    fn matrix_product_via_inner_loop() {
        let p = validated(
            "real :: a(2,3), b(3,2), c(2,2)\nreal :: t\n\
             !$omp target parallel do private(t) map(to:a,b) map(from:c)\n\
             do i=1,2\n do j=1,2\n  t = 0.0\n  do k=1,3\n   t = t + a(i,k)*b(k,j)\n  end do\n  c(i,j) = t\n end do\nend do\n",
        );
        let mut env = Environment::new();
        env.set_array("a", Buffer::from_f32(vec![2, 3], vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0]));
        env.set_array("b", Buffer::from_f32(vec![3, 2], vec![7.0, 8.0, 9.0, 10.0, 11.0, 12.0]));
        env.prepare(&p);
        interpret(&p, &mut env, None).unwrap();
        assert_eq!(f32s(&env, "c"), vec![58.0, 64.0, 139.0, 154.0]);
    }

    #[test]
    fn range_split_composes_for_elementwise() {
        let p = validated(
            "!$omp target parallel do map(from:c)\n\
             do i=1, 100\n  c(i) = a(i) * 2.0 + 1.0\nend do\n",
        );
        let base = Environment::synthesize(&p, 42);
        let full = run(&p, &base, None).unwrap();
        for split in [0, 1, 37, 50, 99, 100] {
            let mut half = base.clone();
            half.prepare(&p);
            interpret(&p, &mut half, Some(IterRange::new(0, split))).unwrap();
            interpret(&p, &mut half, Some(IterRange::new(split, 100))).unwrap();
            assert_eq!(half.arrays["c"], full.arrays["c"], "split at {split}");
        }
    }

    #[test]
    fn range_split_composes_for_reductions() {
        // Integer sums wrap and associate, so a split run is bit-identical.
        let p = validated(
            "integer :: x(50)\ninteger :: r\n\
             !$omp target parallel do reduction(+:r) map(to:x)\n\
             do i=1, 50\n  r = r + x(i)\nend do\n",
        );
        let base = Environment::synthesize(&p, 7);
        let full = run(&p, &base, None).unwrap();
        let mut split_env = base.clone();
        split_env.prepare(&p);
        interpret(&p, &mut split_env, Some(IterRange::new(0, 20))).unwrap();
        interpret(&p, &mut split_env, Some(IterRange::new(20, 50))).unwrap();
        assert_eq!(split_env.scalars["r"], full.scalars["r"]);

        // Float sums re-associate across the split; they agree to a
        // relative tolerance, not bitwise.
        let pf = validated(
            "real :: r\n!$omp target parallel do reduction(+:r) map(to:x)\n\
             do i=1, 50\n  r = r + x(i)\nend do\n",
        );
        let base = Environment::synthesize(&pf, 7);
        let full = run(&pf, &base, None).unwrap().scalars["r"].as_f32();
        let mut split_env = base.clone();
        split_env.prepare(&pf);
        interpret(&pf, &mut split_env, Some(IterRange::new(0, 20))).unwrap();
        interpret(&pf, &mut split_env, Some(IterRange::new(20, 50))).unwrap();
        let split = split_env.scalars["r"].as_f32();
        assert!((split - full).abs() <= 1e-5 * full.abs().max(1.0), "{split} vs {full}");
    }

    #[test]
    fn out_of_domain_range_is_an_error() {
        let p = validated(
            "!$omp target parallel do map(from:c)\n\
             do i=1, 10\n  c(i) = a(i)\nend do\n",
        );
        let mut env = Environment::synthesize(&p, 0);
        let err = interpret(&p, &mut env, Some(IterRange::new(0, 11))).unwrap_err();
        assert!(matches!(err, RunError::BadRange { .. }));
    }

    #[test]
    fn unbound_array_is_reported() {
        let p = validated(
            "!$omp target parallel do map(from:c)\n\
             do i=1, 4\n  c(i) = a(i)\nend do\n",
        );
        let mut env = Environment::new();
        let err = interpret(&p, &mut env, None).unwrap_err();
        assert_eq!(err, RunError::UnboundArray("a".into()));
    }

    #[test]
    fn integer_arrays_use_wrapping_arithmetic() {
        let p = validated(
            "integer :: a(2), c(2)\n\
             !$omp target parallel do map(to:a) map(from:c)\n\
             do i=1, 2\n  c(i) = a(i) * 3 + 1\nend do\n",
        );
        let mut env = Environment::new();
        env.set_array(
            "a",
            Buffer { elem: ElemType::I32, dims: vec![2], data: vec![Value::I32(5), Value::I32(-2)] },
        );
        env.prepare(&p);
        interpret(&p, &mut env, None).unwrap();
        assert_eq!(env.arrays["c"].data, vec![Value::I32(16), Value::I32(-5)]);
    }

    #[test]
    fn synthesized_env_is_deterministic() {
        let p = validated(
            "real :: alpha\n!$omp target parallel do map(to:x,y) map(from:y)\n\
             do i=1, 32\n  y(i) = alpha*x(i) + y(i)\nend do\n",
        );
        assert_eq!(Environment::synthesize(&p, 5), Environment::synthesize(&p, 5));
        assert_ne!(Environment::synthesize(&p, 5), Environment::synthesize(&p, 6));
    }

    #[test]
    fn throughput_scales_linearly() {
        assert_eq!(throughput_mpts(1_000_000, 1.0), 1.0);
        assert_eq!(throughput_mpts(67_000_000, 0.5), 134.0);
        assert_eq!(throughput_mpts(0, 0.0), 0.0);
    }
}
