//! Canonical benchmark kernels rendered as OpenMP Fortran sources.
//!
//! Each kernel is a template parameterised by a point count `n`, so the
//! same source shape can be compiled at a tiny size for quick checks and
//! at multi-million point sizes for throughput sweeps.  The shipped
//! `corpus/*.f90omp` files are these templates rendered at desk-scale
//! defaults; a test keeps them in sync with the renderers.

use crate::refinterp::Environment;
use crate::loopfront::ValidatedLoopProgram;
use crate::value::Value;

/// One benchmark kernel: a named source template plus the metadata the
/// drivers need to size, run, and judge it.
pub struct CorpusKernel {
    pub name: &'static str,
    /// One-line description used in help text and bench tables.
    pub summary: &'static str,
    /// Maximum relative error allowed against the interpreter.  `0.0`
    /// means outputs must match bit for bit; reductions re-associate on
    /// the device, so kernels that fold need a small allowance.
    pub tolerance: f64,
    /// True when per-point work is constant and no global fold or matrix
    /// product is involved, so the kernel can sweep to multi-million
    /// point sizes in the simulator without quadratic cost.
    pub elementwise: bool,
    /// True when synthesized array inputs must be non-negative.  A fold
    /// over thousands of symmetric terms cancels toward zero, so its
    /// relative error against the interpreter measures the data's
    /// condition number rather than device re-association; keeping the
    /// terms one-signed makes the stated tolerance meaningful at every
    /// size.
    pub nonnegative_inputs: bool,
    /// Desk-scale default size used for the shipped source files.
    pub default_n: usize,
    render: fn(usize) -> String,
    points: fn(usize) -> usize,
}

impl CorpusKernel {
    /// Render the source at `n` requested points.
    pub fn render(&self, n: usize) -> String {
        (self.render)(n)
    }

    /// Grid points the kernel updates when rendered at `n`: the unit the
    /// throughput metric counts.  Stencils update only interior points
    /// and the matrix product updates `d*d` outputs, so this can differ
    /// from `n`.
    pub fn points(&self, n: usize) -> usize {
        (self.points)(n)
    }

    /// File name of the shipped desk-scale rendering.
    pub fn file_name(&self) -> String {
        format!("{}.f90omp", self.name)
    }

    /// Synthesize this kernel's environment, applying the
    /// `nonnegative_inputs` conditioning when the kernel asks for it.
    pub fn env(&self, stages: &[&ValidatedLoopProgram], seed: u64) -> Environment {
        let mut env = synth_env(stages, seed);
        if self.nonnegative_inputs {
            for buf in env.arrays.values_mut() {
                for v in buf.data.iter_mut() {
                    *v = match *v {
                        Value::F32(x) => Value::F32(x.abs()),
                        Value::I32(x) => Value::I32(x.abs()),
                    };
                }
            }
        }
        env
    }
}

/// All benchmark kernels in presentation order.
pub const CORPUS: &[CorpusKernel] = &[
    CorpusKernel {
        name: "softmax",
        summary: "two passes: exponentials with a running sum, then scale by it",
        tolerance: 1e-5,
        elementwise: false,
        nonnegative_inputs: false,
        default_n: 4096,
        render: softmax,
        points: |n| n,
    },
    CorpusKernel {
        name: "relu",
        summary: "clamp negatives to zero",
        tolerance: 0.0,
        elementwise: true,
        nonnegative_inputs: false,
        default_n: 65536,
        render: relu,
        points: |n| n,
    },
    CorpusKernel {
        name: "saxpy",
        summary: "scale one vector and add another",
        tolerance: 0.0,
        elementwise: true,
        nonnegative_inputs: false,
        default_n: 65536,
        render: saxpy,
        points: |n| n,
    },
    CorpusKernel {
        name: "dot",
        summary: "inner product folded to one scalar",
        tolerance: 1e-5,
        elementwise: false,
        // A 4096-term signed inner product has expected value zero, so
        // one-signed data keeps the 1e-5 gate about re-association.
        nonnegative_inputs: true,
        default_n: 4096,
        render: dot,
        points: |n| n,
    },
    CorpusKernel {
        name: "l2norm",
        summary: "two passes: sum of squares, then divide by its square root",
        tolerance: 1e-5,
        elementwise: false,
        nonnegative_inputs: false,
        default_n: 4096,
        render: l2norm,
        points: |n| n,
    },
    CorpusKernel {
        name: "gemm",
        summary: "dense matrix product, d x d with d near sqrt(n)",
        tolerance: 1e-5,
        elementwise: false,
        nonnegative_inputs: false,
        default_n: 4096,
        render: gemm,
        points: |n| {
            let d = gemm_dim(n);
            d * d
        },
    },
    CorpusKernel {
        name: "stencil1d",
        summary: "shifted-window sum of two vectors into a third",
        tolerance: 0.0,
        elementwise: true,
        nonnegative_inputs: false,
        default_n: 4096,
        render: stencil1d,
        points: |n| n,
    },
    CorpusKernel {
        name: "stencil2d",
        summary: "five-point average over a 2-D grid interior",
        tolerance: 0.0,
        elementwise: true,
        nonnegative_inputs: false,
        default_n: 4096,
        render: stencil2d,
        points: |n| {
            let (h, w) = grid_hw(n);
            (h - 2) * (w - 2)
        },
    },
];

/// Look a kernel up by name.
pub fn kernel(name: &str) -> Option<&'static CorpusKernel> {
    CORPUS.iter().find(|k| k.name == name)
}

/// Matrix dimension for the dense product: the largest square with about
/// `n` output points, never smaller than 2x2.
pub fn gemm_dim(n: usize) -> usize {
    ((n as f64).sqrt().round() as usize).max(2)
}

/// Grid shape for 2-D kernels: height near sqrt(n), width covering the
/// remainder, both at least 3 so an interior exists.
pub fn grid_hw(n: usize) -> (usize, usize) {
    let h = ((n as f64).sqrt().floor() as usize).max(3);
    let w = (n + h - 1) / h;
    (h, w.max(3))
}

/// Synthesize one environment covering every stage of a program: inputs
/// and scalars are seeded per stage and the first binding of each name
/// wins, so intermediates produced by one stage and consumed by the next
/// start from the same deterministic state on every run.
pub fn synth_env(stages: &[&ValidatedLoopProgram], seed: u64) -> Environment {
    let mut env = Environment::new();
    for p in stages {
        let stage_env = Environment::synthesize(p, seed);
        for (k, v) in stage_env.arrays {
            env.arrays.entry(k).or_insert(v);
        }
        for (k, v) in stage_env.scalars {
            env.scalars.entry(k).or_insert(v);
        }
    }
    env
}

fn softmax(n: usize) -> String {
    format!(
        "! softmax over {n} points in two passes: exponentials with a running\n\
         ! sum, then scale each point by the total.  Desk-scale default is\n\
         ! n = 4096; production runs use point counts in the millions.\n\
         real :: x({n}), es({n}), y({n})\n\
         real :: s\n\
         integer :: i\n\
         !$omp target parallel do reduction(+: s) map(to: x) map(from: es)\n\
         do i = 1, {n}\n\
           es(i) = exp(x(i))\n\
           s = s + es(i)\n\
         end do\n\
         !$omp end target parallel do\n\
         !$omp target parallel do map(to: es) map(from: y)\n\
         do i = 1, {n}\n\
           y(i) = es(i) / s\n\
         end do\n\
         !$omp end target parallel do\n"
    )
}

fn relu(n: usize) -> String {
    format!(
        "! relu over {n} points: clamp negatives to zero.  Desk-scale default\n\
         ! is n = 65536; production runs use point counts in the millions.\n\
         real :: x({n}), y({n})\n\
         integer :: i\n\
         !$omp target parallel do map(to: x) map(from: y)\n\
         do i = 1, {n}\n\
           y(i) = max(0.0, x(i))\n\
         end do\n\
         !$omp end target parallel do\n"
    )
}

fn saxpy(n: usize) -> String {
    format!(
        "! saxpy over {n} points: z = a*x + y with a host scalar a.  Desk-scale\n\
         ! default is n = 65536; production runs use point counts in the\n\
         ! millions.\n\
         real :: x({n}), y({n}), z({n})\n\
         real :: a\n\
         integer :: i\n\
         !$omp target parallel do map(to: x, y) map(from: z)\n\
         do i = 1, {n}\n\
           z(i) = a * x(i) + y(i)\n\
         end do\n\
         !$omp end target parallel do\n"
    )
}

fn dot(n: usize) -> String {
    format!(
        "! dot product of two {n}-point vectors folded into one scalar.\n\
         ! Desk-scale default is n = 4096; production runs use point counts\n\
         ! in the millions.\n\
         real :: x({n}), y({n})\n\
         real :: s\n\
         integer :: i\n\
         !$omp target parallel do reduction(+: s) map(to: x, y)\n\
         do i = 1, {n}\n\
           s = s + x(i) * y(i)\n\
         end do\n\
         !$omp end target parallel do\n"
    )
}

fn l2norm(n: usize) -> String {
    format!(
        "! l2 normalisation of {n} points in two passes: sum of squares, then\n\
         ! divide by its square root.  Desk-scale default is n = 4096;\n\
         ! production runs use point counts in the millions.\n\
         real :: x({n}), y({n})\n\
         real :: s\n\
         integer :: i\n\
         !$omp target parallel do reduction(+: s) map(to: x)\n\
         do i = 1, {n}\n\
           s = s + x(i) * x(i)\n\
         end do\n\
         !$omp end target parallel do\n\
         !$omp target parallel do map(to: x) map(from: y)\n\
         do i = 1, {n}\n\
           y(i) = x(i) / sqrt(s)\n\
         end do\n\
         !$omp end target parallel do\n"
    )
}

fn gemm(n: usize) -> String {
    let d = gemm_dim(n);
    format!(
        "! dense matrix product c = a*b at {d}x{d} (about {n} output points).\n\
         ! Desk-scale default is 64x64; production runs use dimensions in the\n\
         ! thousands.\n\
         real :: a({d}, {d}), b({d}, {d}), c({d}, {d})\n\
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

fn stencil1d(n: usize) -> String {
    let len = n + 2;
    let hi = n + 1;
    format!(
        "! shifted-window sum over {n} interior points: c(i) = a(i-1) + b(i+1)\n\
         ! with one halo cell at each end.  Desk-scale default is n = 4096;\n\
         ! production runs use point counts in the millions.\n\
         real :: a({len}), b({len}), c({len})\n\
         integer :: i\n\
         !$omp target parallel do map(to: a, b) map(from: c)\n\
         do i = 2, {hi}\n\
           c(i) = a(i-1) + b(i+1)\n\
         end do\n\
         !$omp end target parallel do\n"
    )
}

fn stencil2d(n: usize) -> String {
    let (h, w) = grid_hw(n);
    let (hi, wi) = (h - 1, w - 1);
    format!(
        "! five-point average (centre plus four neighbours) over the interior\n\
         ! of a {h}x{w} grid, computed in two passes because each compute tile\n\
         ! ingests at most two streams and a column at most four: the row pass\n\
         ! sums the vertical neighbours with the centre, the column pass adds\n\
         ! the horizontal neighbours and scales.  Desk-scale default is about\n\
         ! 4096 points; production runs use grids with millions of points.\n\
         real :: u({h}, {w}), rowsum({h}, {w}), v({h}, {w})\n\
         integer :: i, j\n\
         !$omp target parallel do map(to: u) map(from: rowsum)\n\
         do i = 2, {hi}\n\
           do j = 2, {wi}\n\
             rowsum(i, j) = u(i, j) + u(i-1, j) + u(i+1, j)\n\
           end do\n\
         end do\n\
         !$omp end target parallel do\n\
         !$omp target parallel do map(to: rowsum, u) map(from: v)\n\
         do i = 2, {hi}\n\
           do j = 2, {wi}\n\
             v(i, j) = (rowsum(i, j) + u(i, j-1) + u(i, j+1)) * 0.2\n\
           end do\n\
         end do\n\
         !$omp end target parallel do\n"
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::pipeline::{compile_source, run_compiled_fast, run_reference, CompileOptions};
    use crate::tensorlift::{lift, SliceDim, TensorOp};
    use crate::value::Value;
    use std::path::PathBuf;

    fn bits(v: Value) -> u64 {
        match v {
            Value::F32(f) => f.to_bits() as u64,
            Value::I32(i) => i as u32 as u64 | (1 << 40),
        }
    }

    fn rel_close(a: Value, b: Value, tol: f64) -> bool {
        match (a, b) {
            (Value::F32(x), Value::F32(y)) => {
                let (x, y) = (x as f64, y as f64);
                (x - y).abs() <= tol * y.abs().max(1.0)
            }
            (Value::I32(x), Value::I32(y)) => x == y,
            _ => false,
        }
    }

    fn assert_envs_close(got: &Environment, want: &Environment, tol: f64, what: &str) {
        assert_eq!(
            got.arrays.keys().collect::<Vec<_>>(),
            want.arrays.keys().collect::<Vec<_>>(),
            "{what}: array sets differ"
        );
        for (name, buf) in &got.arrays {
            let other = &want.arrays[name];
            assert_eq!(buf.data.len(), other.data.len(), "{what}: `{name}` length");
            for (i, (x, y)) in buf.data.iter().zip(&other.data).enumerate() {
                let ok = if tol == 0.0 { bits(*x) == bits(*y) } else { rel_close(*x, *y, tol) };
                assert!(ok, "{what}: `{name}`[{i}] differs: {x:?} vs {y:?}");
            }
        }
        for (name, x) in &got.scalars {
            let y = &want.scalars[name];
            let ok = if tol == 0.0 { bits(*x) == bits(*y) } else { rel_close(*x, *y, tol) };
            assert!(ok, "{what}: scalar `{name}` differs: {x:?} vs {y:?}");
        }
    }

    #[test]
    fn every_kernel_compiles_for_the_device_and_matches_the_oracle() {
        let opts = CompileOptions::default();
        for k in CORPUS {
            let src = k.render(97);
            let c = compile_source(&src, &opts)
                .unwrap_or_else(|e| panic!("{}: compile failed: {e}", k.name));
            assert!(!c.is_fallback(), "{}: unexpectedly fell back to the host", k.name);
            let env = k.env(&c.stage_programs(), 7);
            let got = run_compiled_fast(&c, &env, opts.vw).expect(k.name).env;
            let want = run_reference(&c.stage_programs(), &env).expect(k.name);
            assert_envs_close(&got, &want, k.tolerance, k.name);
        }
    }

    #[test]
    fn window_offsets_match_the_shifted_reads() {
        let src = stencil1d(128);
        let vp = crate::loopfront::validate(&crate::loopfront::parse(&src).expect("parse"))
            .expect("validate")
            .into_program();
        let tp = lift(&vp).expect("lift");
        let mut extracts = Vec::new();
        let mut inserts = Vec::new();
        for (_, op) in &tp.ops {
            match op {
                TensorOp::ExtractSlice { dims, .. } => extracts.push(dims.clone()),
                TensorOp::InsertSlice { dims, .. } => inserts.push(dims.clone()),
                _ => {}
            }
        }
        extracts.sort_by_key(|d| d[0].offset);
        assert_eq!(
            extracts,
            vec![vec![SliceDim::new(0, 128, 1)], vec![SliceDim::new(2, 128, 1)]],
            "read windows"
        );
        assert_eq!(inserts, vec![vec![SliceDim::new(1, 128, 1)]], "write window");
    }

    #[test]
    fn sizing_helpers_cover_the_requested_points() {
        for n in [9, 97, 4096, 65536] {
            let (h, w) = grid_hw(n);
            assert!(h >= 3 && w >= 3, "grid at n={n} has no interior");
            assert!(h * w >= n, "grid at n={n} drops points");
            assert!(gemm_dim(n) >= 2);
        }
        for k in CORPUS {
            assert!(k.points(97) > 0, "{}: no points at n=97", k.name);
        }
        assert_eq!(kernel("relu").unwrap().points(4096), 4096);
        assert_eq!(kernel("stencil1d").unwrap().points(4096), 4096);
        assert_eq!(kernel("gemm").unwrap().points(4096), 64 * 64);
        assert_eq!(kernel("missing").map(|k| k.name), None);
    }

    #[test]
    fn corpus_names_are_unique() {
        let mut names: Vec<_> = CORPUS.iter().map(|k| k.name).collect();
        names.sort_unstable();
        names.dedup();
        assert_eq!(names.len(), CORPUS.len());
    }

    fn shipped_dir() -> PathBuf {
        PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../corpus")
    }

    #[test]
    fn shipped_sources_match_the_renderers() {
        let dir = shipped_dir();
        if std::env::var_os("CORPUS_REGEN").is_some() {
            std::fs::create_dir_all(&dir).expect("create corpus dir");
            for k in CORPUS {
                std::fs::write(dir.join(k.file_name()), k.render(k.default_n))
                    .expect("write shipped source");
            }
        }
        for k in CORPUS {
            let path = dir.join(k.file_name());
            let shipped = std::fs::read_to_string(&path).unwrap_or_else(|e| {
                panic!("{}: missing shipped source {}: {e}", k.name, path.display())
            });
            assert_eq!(
                shipped,
                k.render(k.default_n),
                "{}: shipped source drifted from the renderer (set CORPUS_REGEN=1 to refresh)",
                k.name
            );
        }
    }
}
