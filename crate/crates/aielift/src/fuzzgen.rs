//! Seeded generator of random supported loop programs.
//!
//! Every program this module emits must compile for the device: the
//! generator stays inside the supported surface (one pragma loop, plain
//! or shifted array reads, private temporaries, `+`/`max` reductions, a
//! dense matrix product) and respects the fabric budgets that bound a
//! compilable program — at most four distinct host read windows, since a
//! column ingests four streams, and at most two for folds.  The fuzz
//! suites compile thousands of these and assert the structural checks,
//! the deadlock detector, and the interpreter all stay clean.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use std::collections::BTreeSet;
use std::fmt::Write as _;

/// One generated program plus the judgement the harness should apply.
#[derive(Debug, Clone, PartialEq)]
pub struct FuzzProgram {
    pub seed: u64,
    /// Shape family, for coverage accounting.
    pub class: &'static str,
    pub source: String,
    /// `0.0` = must match the interpreter bit for bit; folds re-associate
    /// on the device so they carry a small relative allowance.
    pub tolerance: f64,
}

/// Names of every shape family [`generate`] can produce.
pub const CLASSES: &[&str] =
    &["elementwise", "stencil", "reduce", "map_reduce", "matmul", "int_elementwise"];

/// Deterministically generate one supported program from a seed.
pub fn generate(seed: u64) -> FuzzProgram {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let class = CLASSES[rng.gen_range(0..CLASSES.len())];
    let (source, tolerance) = match class {
        "elementwise" => (elementwise(&mut rng, true), 0.0),
        "stencil" => (stencil(&mut rng), 0.0),
        "reduce" => (reduce(&mut rng, false), 1e-5),
        "map_reduce" => (reduce(&mut rng, true), 1e-5),
        "matmul" => (matmul(&mut rng), 1e-5),
        "int_elementwise" => (elementwise(&mut rng, false), 0.0),
        _ => unreachable!(),
    };
    FuzzProgram { seed, class, source, tolerance }
}

/// Tracks the distinct host read windows an expression tree uses, so the
/// program stays within the column-ingress budget.
struct ExprGen<'r> {
    rng: &'r mut ChaCha8Rng,
    float: bool,
    inputs: Vec<&'static str>,
    /// (array, offset) pairs already read; each distinct pair costs one
    /// host stream.
    windows: BTreeSet<(&'static str, i64)>,
    max_windows: usize,
    /// Offsets to draw from; `[0]` for aligned reads.
    offsets: &'static [i64],
}

impl<'r> ExprGen<'r> {
    fn new(
        rng: &'r mut ChaCha8Rng,
        float: bool,
        inputs: Vec<&'static str>,
        max_windows: usize,
        offsets: &'static [i64],
    ) -> Self {
        ExprGen { rng, float, inputs, windows: BTreeSet::new(), max_windows, offsets }
    }

    fn literal(&mut self) -> String {
        if self.float {
            ["0.25", "0.5", "1.0", "2.0", "100.0"][self.rng.gen_range(0..5)].to_string()
        } else {
            format!("{}", self.rng.gen_range(1..=5))
        }
    }

    fn window(&mut self) -> String {
        // Reuse an existing window when the budget is spent or by choice:
        // repeated reads of one stream are free.
        let reuse = !self.windows.is_empty()
            && (self.windows.len() >= self.max_windows || self.rng.gen_bool(0.4));
        let (arr, off) = if reuse {
            let picks: Vec<_> = self.windows.iter().copied().collect();
            picks[self.rng.gen_range(0..picks.len())]
        } else {
            let arr = self.inputs[self.rng.gen_range(0..self.inputs.len())];
            let off = self.offsets[self.rng.gen_range(0..self.offsets.len())];
            self.windows.insert((arr, off));
            (arr, off)
        };
        match off {
            0 => format!("{arr}(i)"),
            o if o > 0 => format!("{arr}(i+{o})"),
            o => format!("{arr}(i-{})", -o),
        }
    }

    fn leaf(&mut self) -> String {
        match self.rng.gen_range(0..10) {
            0 => self.literal(),
            1 if self.float => "p".to_string(),
            _ => self.window(),
        }
    }

    fn expr(&mut self, depth: usize) -> String {
        if depth == 0 || self.rng.gen_bool(0.3) {
            return self.leaf();
        }
        if self.float && self.rng.gen_bool(0.15) {
            // Unary intrinsics stay safe on synthesized inputs in [-1, 1]:
            // exp is bounded and sqrt gets a squared argument.
            let inner = self.expr(depth - 1);
            return if self.rng.gen_bool(0.5) {
                format!("exp({inner})")
            } else {
                format!("sqrt(({inner}) * ({inner}))")
            };
        }
        let a = self.expr(depth - 1);
        let b = self.expr(depth - 1);
        match self.rng.gen_range(0..6) {
            0 => format!("({a}) + ({b})"),
            1 => format!("({a}) - ({b})"),
            2 => format!("({a}) * ({b})"),
            // Division keeps the denominator away from zero so both legs
            // stay finite; integers skip it entirely.
            3 if self.float => format!("({a}) / (1.0 + ({b}) * ({b}))"),
            3 => format!("({a}) * ({b})"),
            4 => format!("max({a}, {b})"),
            _ => format!("min({a}, {b})"),
        }
    }
}

fn decl_arrays(out: &mut String, elem: &str, names: &[&str], n: usize) {
    let list = names.iter().map(|a| format!("{a}({n})")).collect::<Vec<_>>().join(", ");
    let _ = writeln!(out, "{elem} :: {list}");
}

/// Single-assignment elementwise chains, optionally via a private
/// temporary and with a second output; aligned reads only.
fn elementwise(rng: &mut ChaCha8Rng, float: bool) -> String {
    let n = rng.gen_range(4..=96);
    let ins: Vec<&'static str> = ["a", "b", "c"][..rng.gen_range(1..=3)].to_vec();
    let elem = if float { "real" } else { "integer" };
    let two_outputs = rng.gen_bool(0.25);
    let use_temp = rng.gen_bool(0.4);
    let mut g = ExprGen::new(rng, float, ins.clone(), 3, &[0]);

    let mut body = String::new();
    if use_temp {
        let e = g.expr(2);
        let _ = writeln!(body, "  t = {e}");
        let e2 = g.expr(1);
        let op = if g.rng.gen_bool(0.5) { "+" } else { "*" };
        let _ = writeln!(body, "  y(i) = (t) {op} ({e2})");
    } else {
        let e = g.expr(2);
        let _ = writeln!(body, "  y(i) = {e}");
    }
    if two_outputs {
        let e = g.expr(2);
        let _ = writeln!(body, "  z(i) = {e}");
    }
    let uses_param = float && body.contains('p');

    let mut src = String::new();
    decl_arrays(&mut src, elem, &ins, n);
    let outs: Vec<&str> = if two_outputs { vec!["y", "z"] } else { vec!["y"] };
    decl_arrays(&mut src, elem, &outs, n);
    if uses_param {
        let _ = writeln!(src, "real :: p");
    }
    if use_temp {
        let _ = writeln!(src, "{elem} :: t");
    }
    let _ = writeln!(src, "integer :: i");
    let private = if use_temp { " private(t)" } else { "" };
    let _ = writeln!(
        src,
        "!$omp target parallel do{private} map(to: {}) map(from: {})",
        ins.join(", "),
        outs.join(", ")
    );
    let _ = writeln!(src, "do i = 1, {n}");
    src.push_str(&body);
    let _ = writeln!(src, "end do");
    let _ = writeln!(src, "!$omp end target parallel do");
    src
}

/// Shifted-window reads over the interior of the arrays, margin two.
fn stencil(rng: &mut ChaCha8Rng) -> String {
    let n = rng.gen_range(8..=96);
    let ins: Vec<&'static str> = ["a", "b"][..rng.gen_range(1..=2)].to_vec();
    let mut g = ExprGen::new(rng, true, ins.clone(), 4, &[-2, -1, 0, 1, 2]);
    let e = g.expr(2);
    let uses_param = e.contains('p');

    let mut src = String::new();
    decl_arrays(&mut src, "real", &ins, n);
    decl_arrays(&mut src, "real", &["y"], n);
    if uses_param {
        let _ = writeln!(src, "real :: p");
    }
    let _ = writeln!(src, "integer :: i");
    let _ = writeln!(src, "!$omp target parallel do map(to: {}) map(from: y)", ins.join(", "));
    let _ = writeln!(src, "do i = 3, {}", n - 2);
    let _ = writeln!(src, "  y(i) = {e}");
    let _ = writeln!(src, "end do");
    let _ = writeln!(src, "!$omp end target parallel do");
    src
}

/// `+` or `max` folds, optionally alongside an elementwise output that
/// feeds the fold (the two-output shape the corpus softmax uses).
fn reduce(rng: &mut ChaCha8Rng, with_map: bool) -> String {
    let n = rng.gen_range(4..=96);
    let ins: Vec<&'static str> = ["a", "b"][..rng.gen_range(1..=2)].to_vec();
    let op = if rng.gen_bool(0.5) { "+" } else { "max" };
    let mut g = ExprGen::new(rng, true, ins.clone(), 2, &[0]);
    let e = g.expr(2);
    let uses_param = e.contains('p');

    let mut src = String::new();
    decl_arrays(&mut src, "real", &ins, n);
    if with_map {
        decl_arrays(&mut src, "real", &["y"], n);
    }
    let _ = writeln!(src, "real :: s");
    if uses_param {
        let _ = writeln!(src, "real :: p");
    }
    let _ = writeln!(src, "integer :: i");
    let from = if with_map { " map(from: y)" } else { "" };
    let _ = writeln!(
        src,
        "!$omp target parallel do reduction({op}: s) map(to: {}){from}",
        ins.join(", ")
    );
    let _ = writeln!(src, "do i = 1, {n}");
    if with_map {
        let _ = writeln!(src, "  y(i) = {e}");
        if op == "+" {
            let _ = writeln!(src, "  s = s + y(i)");
        } else {
            let _ = writeln!(src, "  s = max(s, y(i))");
        }
    } else if op == "+" {
        let _ = writeln!(src, "  s = s + ({e})");
    } else {
        let _ = writeln!(src, "  s = max(s, {e})");
    }
    let _ = writeln!(src, "end do");
    let _ = writeln!(src, "!$omp end target parallel do");
    src
}

/// Small dense matrix product with a private accumulator.
fn matmul(rng: &mut ChaCha8Rng) -> String {
    let d = rng.gen_range(2..=8);
    format!(
        "real :: a({d}, {d}), b({d}, {d}), c({d}, {d})\n\
         real :: t\n\
         integer :: i, j, k\n\
         !$omp target parallel do private(t) map(to: a, b) map(from: c)\n\
         do i = 1, {d}\n\
           do j = 1, {d}\n\
             t = 0.0\n\
             do k = 1, {d}\n\
               t = t + a(i, k) * b(k, j)\n\
             end do\n\
             c(i, j) = t\n\
           end do\n\
         end do\n\
         !$omp end target parallel do\n"
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::oracle::compare;
    use crate::corpus::synth_env;
    use crate::pipeline::{compile_source, run_compiled_fast, run_reference, CompileOptions};

    #[test]
    fn generation_is_deterministic() {
        for seed in [0, 1, 42, 10_000] {
            assert_eq!(generate(seed), generate(seed));
        }
    }

    #[test]
    fn every_class_appears_early() {
        let mut seen = BTreeSet::new();
        for seed in 0..200 {
            seen.insert(generate(seed).class);
        }
        for class in CLASSES {
            assert!(seen.contains(class), "class `{class}` never generated in 200 seeds");
        }
    }

    #[test]
    fn generated_programs_compile_and_match_the_interpreter() {
        let opts = CompileOptions::default();
        for seed in 0..200 {
            let f = generate(seed);
            let c = compile_source(&f.source, &opts).unwrap_or_else(|e| {
                panic!("seed {seed} ({}): compile failed: {e}\n{}", f.class, f.source)
            });
            assert!(
                !c.is_fallback(),
                "seed {seed} ({}): unexpectedly fell back\n{}",
                f.class,
                f.source
            );
            let env = synth_env(&c.stage_programs(), seed);
            let got = run_compiled_fast(&c, &env, opts.vw)
                .unwrap_or_else(|e| panic!("seed {seed} ({}): run failed: {e}", f.class))
                .env;
            let want = run_reference(&c.stage_programs(), &env).expect("reference");
            compare(&got, &want, f.tolerance).unwrap_or_else(|m| {
                panic!("seed {seed} ({}): {m}\n{}", f.class, f.source)
            });
        }
    }
}
