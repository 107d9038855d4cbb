//! Semantic validation: offloadability rules and the derived input/output
//! classification the rest of the pipeline builds on.
//!
//! The parallel-safety model is simple but strict: every iteration of the
//! nest must be independent. Scalars written in the body must be private or
//! the reduction variable, array writes must land on per-iteration elements
//! and no array element may be read at a different iteration offset than it
//! is written. `!$omp atomic` statements are exempt from the scalar rules
//! but force the whole loop onto the CPU fallback path.

use super::ast::*;
use crate::diag::{Diagnostic, Pos};
use std::collections::{BTreeMap, BTreeSet};

/// Why a validated program cannot run on the tile array.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum FallbackReason {
    /// The body contains `!$omp atomic` updates.
    AtomicUpdate,
    /// The lifter cannot express the body in the tensor IR.
    Unsupported(String),
}

impl std::fmt::Display for FallbackReason {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            FallbackReason::AtomicUpdate => write!(f, "atomic update in loop body"),
            FallbackReason::Unsupported(what) => write!(f, "unsupported construct: {what}"),
        }
    }
}

/// A loop program that passed validation, with its derived roles.
#[derive(Debug, Clone, PartialEq)]
pub struct ValidatedLoopProgram {
    pub program: LoopProgram,
    /// Scalars read but never written: runtime parameters.
    pub params: Vec<String>,
    /// Arrays whose pre-loop contents are read: host→device inputs.
    pub inputs: Vec<String>,
    /// Arrays written by the body: device→host outputs.
    pub outputs: Vec<String>,
    /// Arrays listed only in `map(from:)`: zero-filled before execution.
    pub zero_filled: Vec<String>,
}

impl ValidatedLoopProgram {
    pub fn reduction(&self) -> Option<(ReduceOp, &str)> {
        self.program
            .pragma
            .reduction
            .as_ref()
            .map(|(op, v)| (*op, v.as_str()))
    }
}

/// Result of validation: either the loop can be compiled for the tile
/// array, or it is well-formed but must run on the host CPU.
#[derive(Debug, Clone, PartialEq)]
pub enum ValidateOutcome {
    Offloadable(ValidatedLoopProgram),
    CpuFallback {
        program: ValidatedLoopProgram,
        reason: FallbackReason,
    },
}

impl ValidateOutcome {
    pub fn program(&self) -> &ValidatedLoopProgram {
        match self {
            ValidateOutcome::Offloadable(p) => p,
            ValidateOutcome::CpuFallback { program, .. } => program,
        }
    }

    pub fn into_program(self) -> ValidatedLoopProgram {
        match self {
            ValidateOutcome::Offloadable(p) => p,
            ValidateOutcome::CpuFallback { program, .. } => program,
        }
    }
}

pub fn validate(p: &LoopProgram) -> Result<ValidateOutcome, Vec<Diagnostic>> {
    let mut v = Validator {
        p,
        diags: Vec::new(),
        scalar_reads: BTreeSet::new(),
        scalar_writes: BTreeSet::new(),
        array_reads: BTreeMap::new(),
        array_writes: BTreeMap::new(),
        atomic_writes: BTreeSet::new(),
        pre_state_reads: BTreeSet::new(),
        defined_scalars: BTreeSet::new(),
        defined_elements: BTreeSet::new(),
        any_atomic: false,
    };
    v.run();
    if !v.diags.is_empty() {
        return Err(v.diags);
    }
    Ok(v.outcome())
}

type SubVec = Vec<(String, i64)>;

struct Validator<'a> {
    p: &'a LoopProgram,
    diags: Vec<Diagnostic>,
    scalar_reads: BTreeSet<String>,
    scalar_writes: BTreeSet<String>,
    /// array -> distinct read subscript vectors (non-atomic statements).
    array_reads: BTreeMap<String, Vec<SubVec>>,
    /// array -> distinct write subscript vectors (non-atomic statements).
    array_writes: BTreeMap<String, Vec<SubVec>>,
    /// arrays written only under `!$omp atomic`.
    atomic_writes: BTreeSet<String>,
    /// arrays whose pre-loop contents are observed.
    pre_state_reads: BTreeSet<String>,
    defined_scalars: BTreeSet<String>,
    defined_elements: BTreeSet<(String, SubVec)>,
    any_atomic: bool,
}

impl<'a> Validator<'a> {
    fn run(&mut self) {
        self.check_nest_shape();
        self.check_clause_names();
        let mut scope: BTreeMap<String, (i64, i64)> = BTreeMap::new();
        for ix in &self.p.nest.indices {
            scope.insert(ix.name.clone(), (ix.lo, ix.hi));
        }
        let body = self.p.nest.body.clone();
        self.walk(&body, &mut scope);
        self.check_dependences();
        self.check_scalar_rules();
        self.check_map_directions();
    }

    fn outcome(&self) -> ValidateOutcome {
        let p = self.p;
        let params: Vec<String> = p
            .scalars
            .iter()
            .map(|s| s.name.clone())
            .filter(|n| {
                self.scalar_reads.contains(n)
                    && !self.scalar_writes.contains(n)
                    && !p.pragma.is_private(n)
                    && !p.pragma.is_reduction_var(n)
            })
            .collect();
        let inputs: Vec<String> = p
            .arrays
            .iter()
            .map(|a| a.name.clone())
            .filter(|n| self.pre_state_reads.contains(n))
            .collect();
        let outputs: Vec<String> = p
            .arrays
            .iter()
            .map(|a| a.name.clone())
            .filter(|n| self.array_writes.contains_key(n) || self.atomic_writes.contains(n))
            .collect();
        let zero_filled: Vec<String> = p
            .arrays
            .iter()
            .map(|a| a.name.clone())
            .filter(|n| p.pragma.map_from.contains(n) && !p.pragma.map_to.contains(n))
            .collect();
        let validated = ValidatedLoopProgram {
            program: p.clone(),
            params,
            inputs,
            outputs,
            zero_filled,
        };
        if self.any_atomic {
            ValidateOutcome::CpuFallback {
                program: validated,
                reason: FallbackReason::AtomicUpdate,
            }
        } else {
            ValidateOutcome::Offloadable(validated)
        }
    }

    fn error(&mut self, pos: Pos, msg: impl Into<String>) {
        self.diags.push(Diagnostic::new(pos, msg));
    }

    fn check_nest_shape(&mut self) {
        let n = self.p.nest.indices.len();
        if n == 0 || n > 2 {
            self.error(Pos::new(1, 1), format!("parallel nest depth {n} is outside the supported 1..2"));
        }
        for ix in &self.p.nest.indices {
            if ix.extent() == 0 {
                self.error(Pos::new(1, 1), format!("loop `{}` has an empty range {}..{}", ix.name, ix.lo, ix.hi));
            }
        }
        let mut seen = BTreeSet::new();
        for ix in &self.p.nest.indices {
            if !seen.insert(&ix.name) {
                self.error(Pos::new(1, 1), format!("loop index `{}` reused in the nest", ix.name));
            }
        }
    }

    fn check_clause_names(&mut self) {
        let p = self.p;
        for name in &p.pragma.privates {
            if p.scalar(name).is_none() {
                self.error(Pos::new(1, 1), format!("`private({name})` does not name a scalar"));
            }
        }
        for name in p.pragma.map_to.iter().chain(&p.pragma.map_from) {
            if p.array(name).is_none() {
                self.error(Pos::new(1, 1), format!("map clause names `{name}`, which is not an array"));
            }
        }
        if let Some((_, var)) = &p.pragma.reduction {
            if p.scalar(var).is_none() {
                self.error(Pos::new(1, 1), format!("reduction variable `{var}` is not a declared scalar"));
            }
            if p.pragma.is_private(var) {
                self.error(Pos::new(1, 1), format!("reduction variable `{var}` cannot also be private"));
            }
        }
    }

    fn walk(&mut self, body: &[Stmt], scope: &mut BTreeMap<String, (i64, i64)>) {
        for stmt in body {
            match stmt {
                Stmt::Assign { lhs, rhs, atomic, pos } => {
                    if *atomic {
                        self.any_atomic = true;
                    }
                    self.visit_expr(rhs, scope, *atomic);
                    match lhs {
                        LValue::Scalar(name) => {
                            if self.p.is_loop_index(name) || scope.contains_key(name) {
                                self.error(*pos, format!("assignment to loop index `{name}`"));
                                continue;
                            }
                            if self.p.scalar(name).is_none() {
                                self.error(*pos, format!("undeclared identifier `{name}`"));
                                continue;
                            }
                            self.scalar_writes.insert(name.clone());
                            self.check_scalar_write(name, rhs, *atomic, *pos);
                            self.defined_scalars.insert(name.clone());
                        }
                        LValue::Element { array, subs } => {
                            self.visit_array_access(array, subs, true, *atomic, *pos, scope);
                        }
                    }
                }
                Stmt::SeqLoop { index, body, pos } => {
                    if index.extent() == 0 {
                        self.error(*pos, format!("inner loop `{}` has an empty range", index.name));
                    }
                    if scope.contains_key(&index.name) || self.p.is_loop_index(&index.name) {
                        self.error(*pos, format!("inner loop index `{}` shadows an enclosing index", index.name));
                    }
                    scope.insert(index.name.clone(), (index.lo, index.hi));
                    self.walk(body, scope);
                    scope.remove(&index.name);
                }
            }
        }
    }

    fn visit_expr(&mut self, e: &Expr, scope: &BTreeMap<String, (i64, i64)>, atomic: bool) {
        match e {
            Expr::Lit { .. } => {}
            Expr::Scalar { name, pos } => {
                if scope.contains_key(name) {
                    return; // loop index used as a value: fine, it is defined
                }
                if self.p.scalar(name).is_none() {
                    self.error(*pos, format!("undeclared identifier `{name}`"));
                    return;
                }
                self.scalar_reads.insert(name.clone());
                if (self.p.pragma.is_private(name)) && !self.defined_scalars.contains(name) {
                    self.error(*pos, format!("private scalar `{name}` read before it is assigned"));
                }
            }
            Expr::ArrayRef { array, subs, pos } => {
                self.visit_array_access(array, subs, false, atomic, *pos, scope);
            }
            Expr::Unary { neg } => self.visit_expr(neg, scope, atomic),
            Expr::Binary { lhs, rhs, .. } => {
                self.visit_expr(lhs, scope, atomic);
                self.visit_expr(rhs, scope, atomic);
            }
            Expr::Call { args, .. } => {
                for a in args {
                    self.visit_expr(a, scope, atomic);
                }
            }
        }
    }

    fn visit_array_access(
        &mut self,
        array: &str,
        subs: &[Subscript],
        write: bool,
        atomic: bool,
        pos: Pos,
        scope: &BTreeMap<String, (i64, i64)>,
    ) {
        let Some(decl) = self.p.array(array) else {
            self.error(pos, format!("undeclared identifier `{array}`"));
            return;
        };
        if decl.dims.len() != subs.len() {
            self.error(pos, format!("`{array}` has rank {}, subscripted with rank {}", decl.dims.len(), subs.len()));
            return;
        }
        let mut vec: SubVec = Vec::with_capacity(subs.len());
        for (dim, s) in subs.iter().enumerate() {
            let Some(&(lo, hi)) = scope.get(&s.index) else {
                self.error(pos, format!("subscript `{}` of `{array}` is not a loop index in scope", s.index));
                return;
            };
            let min = lo + s.offset;
            let max = hi + s.offset;
            let extent = decl.dims[dim] as i64;
            if min < 1 || max > extent {
                self.error(
                    pos,
                    format!(
                        "subscript {} of `{array}` spans {min}..{max}, outside the declared extent 1..{extent}",
                        dim + 1
                    ),
                );
            }
            vec.push((s.index.clone(), s.offset));
        }
        if write {
            // Every parallel index must drive exactly one subscript dimension,
            // otherwise iterations collide on the same element.
            let par: BTreeSet<&str> = self.p.nest.indices.iter().map(|ix| ix.name.as_str()).collect();
            let used: Vec<&str> = vec.iter().map(|(n, _)| n.as_str()).collect();
            let used_set: BTreeSet<&str> = used.iter().copied().collect();
            if used_set != par || used.len() != used_set.len() {
                self.error(
                    pos,
                    format!("write to `{array}` must subscript with each parallel index exactly once"),
                );
                return;
            }
            if atomic {
                self.atomic_writes.insert(array.to_string());
            } else {
                let entry = self.array_writes.entry(array.to_string()).or_default();
                if !entry.contains(&vec) {
                    entry.push(vec.clone());
                }
                self.defined_elements.insert((array.to_string(), vec));
            }
        } else {
            if !self.defined_elements.contains(&(array.to_string(), vec.clone())) {
                self.pre_state_reads.insert(array.to_string());
            }
            if !atomic {
                let entry = self.array_reads.entry(array.to_string()).or_default();
                if !entry.contains(&vec) {
                    entry.push(vec);
                }
            }
        }
    }

    fn check_scalar_write(&mut self, name: &str, rhs: &Expr, atomic: bool, pos: Pos) {
        let p = self.p;
        if p.pragma.is_private(name) {
            return;
        }
        if let Some((op, var)) = &p.pragma.reduction {
            if var == name {
                if reduction_contribution(*op, name, rhs).is_none() {
                    self.error(
                        pos,
                        format!(
                            "reduction variable `{name}` must be updated as `{name} = {}`",
                            match op {
                                ReduceOp::Add => format!("{name} + expr"),
                                ReduceOp::Max => format!("max({name}, expr)"),
                            }
                        ),
                    );
                }
                return;
            }
        }
        if !atomic {
            self.error(
                pos,
                format!("scalar `{name}` written in the parallel body must be private or a reduction variable"),
            );
        }
    }

    fn check_dependences(&mut self) {
        let reads = std::mem::take(&mut self.array_reads);
        let writes = std::mem::take(&mut self.array_writes);
        for (array, wvecs) in &writes {
            if wvecs.len() > 1 {
                self.error(
                    Pos::new(1, 1),
                    format!("`{array}` is written at more than one subscript position; iterations overlap"),
                );
                continue;
            }
            let w = &wvecs[0];
            if let Some(rvecs) = reads.get(array) {
                for r in rvecs {
                    if r != w {
                        self.error(
                            Pos::new(1, 1),
                            format!(
                                "`{array}` is read at a different iteration offset than it is written (loop-carried dependence)"
                            ),
                        );
                        break;
                    }
                }
            }
        }
        self.array_reads = reads;
        self.array_writes = writes;
    }

    fn check_scalar_rules(&mut self) {
        // Reduction variables may only be read inside their own accumulation,
        // which `check_scalar_write` verified; any other read slipped into
        // `scalar_reads` via a non-accumulation expression.
        if let Some((op, var)) = self.p.pragma.reduction.clone() {
            if !self.scalar_writes.contains(&var) {
                self.error(Pos::new(1, 1), format!("reduction variable `{var}` is never updated"));
            }
            let mut stray = false;
            check_stray_reduction_reads(&self.p.nest.body, op, &var, &mut stray);
            if stray {
                self.error(Pos::new(1, 1), format!("reduction variable `{var}` read outside its accumulation"));
            }
        }
    }

    fn check_map_directions(&mut self) {
        let p = self.p;
        for name in &p.pragma.map_from {
            if p.array(name).is_some() && !self.array_writes.contains_key(name) && !self.any_atomic {
                self.error(Pos::new(1, 1), format!("`{name}` is mapped `from` but never written"));
            }
        }
        for (array, _) in &self.array_writes.clone() {
            if p.pragma.map_to.contains(array) && !p.pragma.map_from.contains(array) {
                self.error(
                    Pos::new(1, 1),
                    format!("`{array}` is written but mapped `to` only; its results would be lost"),
                );
            }
        }
        for array in self.pre_state_reads.clone() {
            if p.pragma.map_from.contains(&array) && !p.pragma.map_to.contains(&array) {
                self.error(
                    Pos::new(1, 1),
                    format!("`{array}` is read but mapped `from` only; add it to map(to:...)"),
                );
            }
        }
    }
}

/// If `rhs` is the accumulation pattern for reduction `op` over `var`,
/// return the contributed expression.
pub fn reduction_contribution<'e>(op: ReduceOp, var: &str, rhs: &'e Expr) -> Option<&'e Expr> {
    let is_var = |e: &Expr| matches!(e, Expr::Scalar { name, .. } if name == var);
    let (a, b) = match (op, rhs) {
        (ReduceOp::Add, Expr::Binary { op: BinOp::Add, lhs, rhs }) => (lhs.as_ref(), rhs.as_ref()),
        (ReduceOp::Max, Expr::Call { f: Intrinsic::Max, args, .. }) if args.len() == 2 => (&args[0], &args[1]),
        _ => return None,
    };
    let contribution = if is_var(a) && !mentions(b, var) {
        b
    } else if is_var(b) && !mentions(a, var) {
        a
    } else {
        return None;
    };
    Some(contribution)
}

fn mentions(e: &Expr, var: &str) -> bool {
    match e {
        Expr::Lit { .. } => false,
        Expr::Scalar { name, .. } => name == var,
        Expr::ArrayRef { .. } => false,
        Expr::Unary { neg } => mentions(neg, var),
        Expr::Binary { lhs, rhs, .. } => mentions(lhs, var) || mentions(rhs, var),
        Expr::Call { args, .. } => args.iter().any(|a| mentions(a, var)),
    }
}

fn check_stray_reduction_reads(body: &[Stmt], op: ReduceOp, var: &str, stray: &mut bool) {
    for stmt in body {
        match stmt {
            Stmt::Assign { lhs, rhs, .. } => {
                let is_own_accum = matches!(lhs, LValue::Scalar(n) if n == var)
                    && reduction_contribution(op, var, rhs).is_some();
                if !is_own_accum && mentions(rhs, var) {
                    *stray = true;
                }
            }
            Stmt::SeqLoop { body, .. } => check_stray_reduction_reads(body, op, var, stray),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::super::parser::parse;
    use super::*;

    fn check(src: &str) -> Result<ValidateOutcome, Vec<Diagnostic>> {
        validate(&parse(src).unwrap())
    }

    fn expect_error(src: &str, needle: &str) {
        let diags = check(src).expect_err("expected validation to fail");
        assert!(
            diags.iter().any(|d| d.message.contains(needle)),
            "no diagnostic contains `{needle}`: {diags:?}"
        );
    }

    #[test]
    fn simple_elementwise_loop_is_offloadable() {
        let out = check(
            "!$omp target parallel do private(t) map(from:c)\n\
             do i=1, 128\n  t=a(i)+b(i)\n  c(i)=t*100\nend do\n",
        )
        .unwrap();
        let ValidateOutcome::Offloadable(v) = out else {
            panic!("expected offloadable")
        };
        assert_eq!(v.inputs, vec!["a", "b"]);
        assert_eq!(v.outputs, vec!["c"]);
        assert_eq!(v.zero_filled, vec!["c"]);
        assert!(v.params.is_empty());
    }

    #[test]
    fn scalar_parameters_are_detected() {
        let out = check(
            "real :: alpha\n\
             !$omp target parallel do map(to:x,y) map(from:y)\n\
             do i=1, 64\n  y(i) = alpha*x(i) + y(i)\nend do\n",
        )
        .unwrap();
        let v = out.program();
        assert_eq!(v.params, vec!["alpha"]);
        assert_eq!(v.inputs, vec!["x", "y"]);
        assert_eq!(v.outputs, vec!["y"]);
        assert!(v.zero_filled.is_empty());
    }

    #[test]
    fn atomic_body_falls_back_to_cpu() {
        let out = check(
            "real :: s\n\
             !$omp target parallel do\n\
             do i=1,8\n  !$omp atomic\n  s = s + a(i)\nend do\n",
        )
        .unwrap();
        assert!(matches!(
            out,
            ValidateOutcome::CpuFallback { reason: FallbackReason::AtomicUpdate, .. }
        ));
    }

    #[test]
    fn loop_carried_dependence_is_rejected() {
        expect_error(
            "real :: c(64)\n!$omp target parallel do map(to:c) map(from:c)\n\
             do i=2,63\n  c(i) = c(i-1) + 1.0\nend do\n",
            "loop-carried dependence",
        );
    }

    #[test]
    fn same_offset_read_write_is_allowed() {
        assert!(check(
            "!$omp target parallel do map(to:y) map(from:y)\n\
             do i=1,16\n  y(i) = y(i) * 2.0\nend do\n"
        )
        .is_ok());
    }

    #[test]
    fn shared_scalar_write_is_rejected() {
        expect_error(
            "real :: t\n!$omp target parallel do map(from:c)\n\
             do i=1,8\n  t = a(i)\n  c(i) = t\nend do\n",
            "must be private or a reduction variable",
        );
    }

    #[test]
    fn private_read_before_assignment_is_rejected() {
        expect_error(
            "real :: t\n!$omp target parallel do private(t) map(from:c)\n\
             do i=1,8\n  c(i) = t + a(i)\nend do\n",
            "read before it is assigned",
        );
    }

    #[test]
    fn write_to_map_to_only_array_is_rejected() {
        expect_error(
            "!$omp target parallel do map(to:c)\n\
             do i=1,8\n  c(i) = a(i)\nend do\n",
            "mapped `to` only",
        );
    }

    #[test]
    fn read_of_map_from_only_array_is_rejected() {
        expect_error(
            "!$omp target parallel do map(from:y)\n\
             do i=1,8\n  y(i) = y(i) + a(i)\nend do\n",
            "mapped `from` only",
        );
    }

    #[test]
    fn map_from_array_must_be_written() {
        expect_error(
            "real :: d(8)\n!$omp target parallel do map(from:c,d)\n\
             do i=1,8\n  c(i) = a(i)\nend do\n",
            "never written",
        );
    }

    #[test]
    fn subscript_bounds_are_checked() {
        expect_error(
            "real :: a(64), c(64)\n!$omp target parallel do map(from:c)\n\
             do i=1,64\n  c(i) = a(i+1)\nend do\n",
            "outside the declared extent",
        );
    }

    #[test]
    fn reduction_accumulation_pattern_is_enforced() {
        let ok = check(
            "real :: r\n!$omp target parallel do reduction(+:r)\n\
             do i=1,32\n  r = r + x(i)*y(i)\nend do\n",
        );
        assert!(ok.is_ok());
        expect_error(
            "real :: r\n!$omp target parallel do reduction(+:r)\n\
             do i=1,32\n  r = r * x(i)\nend do\n",
            "must be updated as",
        );
        expect_error(
            "real :: r\n!$omp target parallel do reduction(+:r) map(from:c)\n\
             do i=1,32\n  r = r + x(i)\n  c(i) = r\nend do\n",
            "read outside its accumulation",
        );
    }

    #[test]
    fn max_reduction_accepts_intrinsic_form() {
        let out = check(
            "real :: m\n!$omp target parallel do reduction(max:m)\n\
             do i=1,32\n  m = max(m, x(i))\nend do\n",
        )
        .unwrap();
        assert_eq!(out.program().reduction(), Some((ReduceOp::Max, "m")));
    }

    #[test]
    fn in_body_def_then_read_is_not_an_input() {
        let out = check(
            "!$omp target parallel do map(from:c,d)\n\
             do i=1,8\n  c(i) = a(i)\n  d(i) = c(i) * 2.0\nend do\n",
        )
        .unwrap();
        let v = out.program();
        assert_eq!(v.inputs, vec!["a"]);
        assert_eq!(v.outputs, vec!["c", "d"]);
    }

    #[test]
    fn matrix_accumulation_loop_validates() {
        let out = check(
            "real :: a(4,8), b(8,4), c(4,4)\nreal :: t\n\
             !$omp target parallel do private(t) map(from:c)\n\
             do i=1,4\n do j=1,4\n  t = 0.0\n  do k=1,8\n   t = t + a(i,k)*b(k,j)\n  end do\n  c(i,j) = t\n end do\nend do\n",
        )
        .unwrap();
        assert!(matches!(out, ValidateOutcome::Offloadable(_)));
        assert_eq!(out.program().inputs, vec!["a", "b"]);
    }

    #[test]
    fn write_must_use_each_parallel_index() {
        expect_error(
            "real :: c(8)\n!$omp target parallel do map(from:c)\n\
             do i=1,8\n do j=1,8\n  c(i) = a(i,j)\n end do\nend do\n",
            "each parallel index exactly once",
        );
    }
}
