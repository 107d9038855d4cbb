//! End-to-end acceptance gates for the toolchain.
//!
//! Each test pins one release requirement — interpreter equivalence
//! across the corpus, IR shape fidelity on two reference programs,
//! structural soundness under fuzzing, vector-width and hybrid-split
//! equivalence, the replication speedup, graceful fallback, and report
//! determinism — and prints one PASS line.  Run with `cargo test -p
//! aielift-cli --test acceptance -- --nocapture` to read the checklist.

use std::collections::BTreeSet;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::Command;
use std::time::Instant;

use aielift::corpus;
use aielift::decompose::check_fanio;
use aielift::fuzzgen;
use aielift::hybridrt::{run_hybrid, HybridConfig};
use aielift::loopfront::{parse_file, validate, ValidateOutcome, ValidatedLoopProgram};
use aielift::npusim::SimConfig;
use aielift::oracle;
use aielift::pipeline::{
    compile_source, run_compiled, run_compiled_fast, run_reference, Compiled, CompileOptions,
};
use aielift::placeroute::validate_design;
use aielift::tensorlift::{lift, TensorOp, TensorProgram, ValId};

const WORKERS: u64 = 8;

fn golden_dir() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/golden")
}

fn lift_single(src: &str) -> (ValidatedLoopProgram, TensorProgram) {
    let staged = parse_file(src).expect("source parses");
    assert_eq!(staged.stages.len(), 1);
    let vp = match validate(&staged.stages[0]).expect("source validates") {
        ValidateOutcome::Offloadable(p) => p,
        ValidateOutcome::CpuFallback { reason, .. } => panic!("unexpected fallback: {reason}"),
    };
    let tensor = lift(&vp).expect("source lifts");
    (vp, tensor)
}

fn assert_golden(name: &str, text: &str) {
    let path = golden_dir().join(name);
    if std::env::var_os("GOLDEN_REGEN").is_some() {
        fs::write(&path, text).unwrap();
    }
    let committed = fs::read_to_string(&path).unwrap_or_else(|_| {
        panic!("missing golden {}; set GOLDEN_REGEN=1 to refresh", path.display())
    });
    assert_eq!(committed, text, "{name} drifted; set GOLDEN_REGEN=1 to refresh");
}

/// Compare one compiled corpus kernel against the interpreter for one seed.
fn assert_matches(ck: &corpus::CorpusKernel, compiled: &Compiled, seed: u64, vw: usize, label: &str) {
    let tol = ck.tolerance;
    let stages = compiled.stage_programs();
    let env = ck.env(&stages, seed);
    let want = run_reference(&stages, &env)
        .unwrap_or_else(|e| panic!("{label} seed {seed}: interpreter: {e}"));
    let got = run_compiled_fast(compiled, &env, vw)
        .unwrap_or_else(|e| panic!("{label} seed {seed}: device: {e}"));
    if let Err(e) = oracle::compare(&got.env, &want, tol) {
        panic!("{label} seed {seed}: {e}");
    }
}

// ---------------------------------------------------------------------
// 1. Interpreter equivalence across the corpus, sizes, and seeds.
// ---------------------------------------------------------------------

#[test]
fn corpus_matches_interpreter_across_sizes_and_seeds() {
    let t0 = Instant::now();
    let opts = CompileOptions::default();
    let mut runs = 0usize;
    for ck in corpus::CORPUS {
        let mut sizes = vec![97usize, 4096];
        if ck.elementwise {
            sizes.push(1 << 20);
        }
        for n in sizes {
            let src = ck.render(n);
            let compiled = compile_source(&src, &opts)
                .unwrap_or_else(|e| panic!("{} n={n}: {e}", ck.name));
            assert!(!compiled.is_fallback(), "{} n={n} must offload", ck.name);
            let label = format!("{} n={n}", ck.name);
            std::thread::scope(|sc| {
                for w in 0..WORKERS {
                    let (compiled, label) = (&compiled, &label);
                    sc.spawn(move || {
                        let mut seed = w;
                        while seed < 100 {
                            assert_matches(ck, compiled, seed, opts.vw, label);
                            seed += WORKERS;
                        }
                    });
                }
            });
            runs += 100;
        }
    }
    let elapsed = t0.elapsed();
    assert!(
        elapsed.as_secs() < 300,
        "equivalence sweep took {elapsed:?}, budget is five minutes"
    );
    println!(
        "PASS corpus equivalence: {runs} runs (8 kernels x sizes incl. 2^20 x 100 seeds) \
         in {elapsed:.1?}"
    );
}

// ---------------------------------------------------------------------
// 2. IR shape fidelity on two small reference programs.
// ---------------------------------------------------------------------

fn operand_ids(op: &TensorOp) -> Vec<ValId> {
    match op {
        TensorOp::Splat { .. } => vec![],
        TensorOp::Elementwise { lhs, rhs, .. } => vec![*lhs, *rhs],
        TensorOp::Unary { src, .. } => vec![*src],
        TensorOp::ExtractSlice { src, .. } => vec![*src],
        TensorOp::InsertSlice { src, .. } => vec![*src],
        TensorOp::Reduce { src, .. } => vec![*src],
        TensorOp::MatMul { a, b } => vec![*a, *b],
    }
}

/// Mnemonics as they appear in the printed IR (plus `yield` lines).
fn dump_mnemonics(tensor: &TensorProgram) -> BTreeSet<String> {
    let mut names = BTreeSet::new();
    for line in tensor.dump().lines() {
        let line = line.trim();
        if let Some(rest) = line.split(" = ").nth(1) {
            let m = rest.split_whitespace().next().unwrap().to_string();
            if m != "arg" {
                names.insert(m);
            }
        } else if line.starts_with("yield") {
            names.insert("yield".to_string());
        }
    }
    names
}

fn assert_dependency_order(tensor: &TensorProgram) {
    let mut defined: BTreeSet<ValId> =
        (0..tensor.args.len()).map(ValId).collect();
    for (id, op) in &tensor.ops {
        for operand in operand_ids(op) {
            assert!(
                defined.contains(&operand),
                "op %{} uses %{} before it is defined",
                id.0,
                operand.0
            );
        }
        defined.insert(*id);
    }
    for y in &tensor.yields {
        assert!(defined.contains(&y.value), "yield of undefined value");
    }
}

#[test]
fn example_programs_lift_to_expected_tensor_ops() {
    // A per-point sum through a private temporary, then a scale: the IR
    // must contain exactly a splat, an add, a mul, and a yield, listed
    // so every value is defined before use.
    let src = "\
real :: a(128), b(128), c(128)
real :: t
integer :: i
!$omp target parallel do private(t) map(to: a, b) map(from: c)
do i = 1, 128
  t = a(i) + b(i)
  c(i) = t * 100
end do
!$omp end target parallel do
";
    let (_, tensor) = lift_single(src);
    let names = dump_mnemonics(&tensor);
    let want: BTreeSet<String> =
        ["splat", "add", "mul", "yield"].iter().map(|s| s.to_string()).collect();
    assert_eq!(names, want, "tensor IR must be exactly a splat, add, mul, and yield");
    assert_dependency_order(&tensor);
    assert_golden("add_then_scale_tensor.txt", &tensor.dump());

    // A shifted-window sum `c(i) = a(i-1) + b(i+1)` over 128 points: the
    // reads lift to window extracts at offsets 0 and 2 of length 128,
    // the write to a window insert at offset 1.
    let src = corpus::kernel("stencil1d").unwrap().render(128);
    let (_, tensor) = lift_single(&src);
    let mut extracts = Vec::new();
    let mut inserts = Vec::new();
    for (_, op) in &tensor.ops {
        match op {
            TensorOp::ExtractSlice { dims, .. } => {
                assert_eq!(dims.len(), 1);
                extracts.push((dims[0].offset, dims[0].len, dims[0].stride));
            }
            TensorOp::InsertSlice { dims, .. } => {
                assert_eq!(dims.len(), 1);
                inserts.push((dims[0].offset, dims[0].len, dims[0].stride));
            }
            _ => {}
        }
    }
    extracts.sort_unstable();
    assert_eq!(extracts, vec![(0, 128, 1), (2, 128, 1)]);
    assert_eq!(inserts, vec![(1, 128, 1)]);
    assert_dependency_order(&tensor);
    assert_golden("shifted_window_tensor.txt", &tensor.dump());

    println!(
        "PASS lift fidelity: add-then-scale gives exactly {{splat, add, mul, yield}} in \
         dependency order; shifted windows extract at (0,128,1)/(2,128,1) and insert at (1,128,1)"
    );
}

// ---------------------------------------------------------------------
// 3. Structural soundness of 1,000 fuzzed supported programs.
// ---------------------------------------------------------------------

#[test]
fn fuzzed_programs_satisfy_structural_invariants() {
    let opts = CompileOptions::default();
    let cfg = SimConfig::default();
    let total: usize = std::thread::scope(|sc| {
        let handles: Vec<_> = (0..WORKERS)
            .map(|w| {
                let (opts, cfg) = (&opts, &cfg);
                sc.spawn(move || {
                    let mut done = 0usize;
                    let mut seed = w;
                    while seed < 1000 {
                        let fp = fuzzgen::generate(seed);
                        let compiled = compile_source(&fp.source, opts).unwrap_or_else(|e| {
                            panic!("seed {seed}: compile: {e}\n{}", fp.source)
                        });
                        let stages = match &compiled {
                            Compiled::Device(stages) => stages,
                            Compiled::CpuFallback { reason, .. } => {
                                panic!("seed {seed}: unexpected fallback: {reason}")
                            }
                        };
                        for s in stages {
                            let g = &s.design.graph;
                            check_fanio(g).unwrap_or_else(|e| {
                                panic!("seed {seed}: fan-in/out: {e}\n{}", fp.source)
                            });
                            let v = validate_design(&s.design);
                            assert!(v.is_empty(), "seed {seed}: design: {v:?}\n{}", fp.source);
                            // Chunks must tile the outer axis exactly:
                            // start at 0, no gaps or overlaps, end at the
                            // domain extent.
                            let mut spans: Vec<_> =
                                g.chunks.iter().map(|c| (c.lo, c.hi)).collect();
                            spans.sort_unstable();
                            assert_eq!(spans.first().map(|s| s.0), Some(0), "seed {seed}");
                            for pair in spans.windows(2) {
                                assert_eq!(
                                    pair[0].1, pair[1].0,
                                    "seed {seed}: chunk gap or overlap"
                                );
                            }
                            assert_eq!(
                                spans.last().unwrap().1,
                                g.domain[0],
                                "seed {seed}: chunks must cover the domain"
                            );
                        }
                        let env = corpus::synth_env(&compiled.stage_programs(), seed);
                        run_compiled(&compiled, &env, cfg).unwrap_or_else(|e| {
                            panic!("seed {seed}: simulation did not complete: {e}\n{}", fp.source)
                        });
                        done += 1;
                        seed += WORKERS;
                    }
                    done
                })
            })
            .collect();
        handles.into_iter().map(|h| h.join().unwrap()).sum()
    });
    assert_eq!(total, 1000);
    println!(
        "PASS fuzzed invariants: 1,000 generated programs compiled with zero fan-in/out \
         violations, zero design violations, exact chunk coverage, and every simulation drained"
    );
}

// ---------------------------------------------------------------------
// 4. Vector-width equivalence, including epilogue remainders.
// ---------------------------------------------------------------------

#[test]
fn vector_widths_agree_including_epilogues() {
    let cfgs: Vec<(usize, SimConfig)> = [1usize, 4, 16]
        .iter()
        .map(|&vw| (vw, SimConfig { vw, ..SimConfig::default() }))
        .collect();
    let mut runs = 0usize;
    for name in ["relu", "saxpy", "dot", "stencil1d"] {
        let ck = corpus::kernel(name).unwrap();
        for (vw, cfg) in &cfgs {
            let opts = CompileOptions { vw: *vw, ..Default::default() };
            for n in 1..=67usize {
                let src = ck.render(n);
                let compiled = compile_source(&src, &opts)
                    .unwrap_or_else(|e| panic!("{name} vw={vw} n={n}: {e}"));
                let stages = compiled.stage_programs();
                let env = ck.env(&stages, 1);
                let want = run_reference(&stages, &env).unwrap();
                let got = run_compiled(&compiled, &env, cfg)
                    .unwrap_or_else(|e| panic!("{name} vw={vw} n={n}: {e}"));
                oracle::compare(&got.env, &want, ck.tolerance)
                    .unwrap_or_else(|e| panic!("{name} vw={vw} n={n}: {e}"));
                runs += 1;
            }
        }
    }
    println!(
        "PASS vector widths: {{1, 4, 16}} x n in 1..=67 x 4 kernels ({runs} cycle-level runs) \
         agree with the interpreter"
    );
}

// ---------------------------------------------------------------------
// 5. Hybrid splits match the full interpreter; both legs stay busy.
// ---------------------------------------------------------------------

#[test]
fn hybrid_fractions_match_full_interpreter() {
    let n = 512;
    let opts = CompileOptions::default();
    let simcfg = SimConfig::default();
    let hcfg = HybridConfig::default();
    for ck in corpus::CORPUS {
        let src = ck.render(n);
        let compiled =
            compile_source(&src, &opts).unwrap_or_else(|e| panic!("{}: {e}", ck.name));
        let stages = compiled.stage_programs();
        let env = ck.env(&stages, 5);
        let want = run_reference(&stages, &env).unwrap();
        for f in [0.0, 0.33, 0.67, 1.0] {
            let (got, rep) = run_hybrid(&compiled, &env, f, &opts, &simcfg, &hcfg)
                .unwrap_or_else(|e| panic!("{} f={f}: {e}", ck.name));
            oracle::compare(&got, &want, ck.tolerance)
                .unwrap_or_else(|e| panic!("{} f={f}: {e}", ck.name));
            assert!(rep.fallback.is_none(), "{} f={f} must not fall back", ck.name);
            if f > 0.0 && f < 1.0 {
                for (i, s) in rep.stages.iter().enumerate() {
                    assert!(
                        s.cpu_points > 0 && s.npu_points > 0,
                        "{} f={f} stage {}: both legs must be active (cpu {}, npu {})",
                        ck.name,
                        i + 1,
                        s.cpu_points,
                        s.npu_points
                    );
                }
            }
        }
    }
    println!(
        "PASS hybrid: f in {{0, 0.33, 0.67, 1}} x 8 kernels match the full interpreter; \
         interior fractions keep both legs active"
    );
}

// ---------------------------------------------------------------------
// 6. Replication speedup on a large elementwise kernel.
// ---------------------------------------------------------------------

#[test]
fn replication_speeds_up_large_elementwise() {
    let ck = corpus::kernel("relu").unwrap();
    let src = ck.render(1 << 20);
    let simcfg = SimConfig::default();
    let mut cycles = Vec::new();
    for replicas in [1usize, 16] {
        let opts = CompileOptions { replicas: Some(replicas), ..Default::default() };
        let compiled = compile_source(&src, &opts).unwrap();
        let stages = compiled.stage_programs();
        let env = ck.env(&stages, 0);
        let want = run_reference(&stages, &env).unwrap();
        let out = run_compiled(&compiled, &env, &simcfg).unwrap();
        oracle::compare(&out.env, &want, ck.tolerance)
            .unwrap_or_else(|e| panic!("R={replicas}: {e}"));
        cycles.push(out.reports.iter().map(|r| r.cycles).sum::<u64>());
    }
    let ratio = cycles[0] as f64 / cycles[1] as f64;
    assert!(
        ratio >= 8.0,
        "16 replicas must be at least 8x faster on 2^20 points: \
         {} vs {} cycles ({ratio:.2}x)",
        cycles[0],
        cycles[1]
    );
    println!(
        "PASS replication: relu at 1,048,576 points, R=1 {} cycles vs R=16 {} cycles ({ratio:.2}x)",
        cycles[0], cycles[1]
    );
}

// ---------------------------------------------------------------------
// 7. Unsupported constructs degrade to a correct host run, exit code 2.
// ---------------------------------------------------------------------

#[test]
fn unsupported_pragma_falls_back_with_exit_2() {
    let dir = tempfile::tempdir().unwrap();
    let src_path = dir.path().join("atomic_sum.f90omp");
    fs::write(
        &src_path,
        "real :: x(256), y(256)\n\
         real :: s\n\
         integer :: i\n\
         !$omp target parallel do map(to: x) map(from: y)\n\
         do i = 1, 256\n\
           y(i) = x(i) * 2\n\
           !$omp atomic\n\
           s = s + x(i)\n\
         end do\n\
         !$omp end target parallel do\n",
    )
    .unwrap();
    let out = dir.path().join("out");
    let run = Command::new(env!("CARGO_BIN_EXE_aielift"))
        .arg("run")
        .arg(&src_path)
        .arg("--out")
        .arg(&out)
        .output()
        .unwrap();
    assert_eq!(
        run.status.code(),
        Some(2),
        "stdout: {}\nstderr: {}",
        String::from_utf8_lossy(&run.stdout),
        String::from_utf8_lossy(&run.stderr)
    );
    let report: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(out.join("report.json")).unwrap()).unwrap();
    assert_eq!(report["oracle"]["ok"], serde_json::Value::Bool(true));
    assert!(
        report["fallback"].as_str().unwrap().contains("atomic"),
        "fallback reason must name the atomic update"
    );
    println!(
        "PASS fallback: atomic update compiles to a host run with correct outputs and exit code 2"
    );
}

// ---------------------------------------------------------------------
// 8. Identical invocations produce byte-identical reports.
// ---------------------------------------------------------------------

#[test]
fn identical_invocations_emit_identical_reports() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("out");
    let src = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../corpus/l2norm.f90omp");
    let run = || {
        let o = Command::new(env!("CARGO_BIN_EXE_aielift"))
            .arg("run")
            .arg(&src)
            .args(["--seed", "11", "--hybrid", "0.25", "--repeats", "2"])
            .arg("--out")
            .arg(&out)
            .output()
            .unwrap();
        assert!(
            o.status.success(),
            "stderr: {}",
            String::from_utf8_lossy(&o.stderr)
        );
        (o.stdout, fs::read(out.join("report.json")).unwrap())
    };
    let first = run();
    let second = run();
    assert_eq!(first, second, "identical manifests must give byte-identical reports");
    assert!(!first.0.is_empty());
    println!(
        "PASS determinism: two identical invocations produced byte-identical stdout and \
         report.json (seed 11, hybrid 0.25, 2 repeats)"
    );
}
