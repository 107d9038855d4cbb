//! Command-line driver for the loop-nest-to-tile-array toolchain.
//!
//! `aielift compile` lowers an annotated source file and writes one dump
//! per compiler pass.  `aielift run` executes the compiled design on the
//! simulated device (optionally co-executing with the host), checks every
//! output binding against the reference interpreter, and emits a JSON
//! report.  `aielift bench` sweeps corpus kernels across decomposition
//! strategies and replica counts into a table of modelled costs.
//! `aielift validate` re-checks the structural invariants of a placed
//! design.
//!
//! Exit codes: 0 success, 1 usage or compile error, 2 the program ran
//! correctly but on the host fallback path, 3 device outputs diverged
//! from the interpreter.

use std::fmt::Write as _;
use std::fs;
use std::path::PathBuf;
use std::process::ExitCode;

use aielift::decompose::{check_fanio, Node, Strategy};
use aielift::hlaie::materialize;
use aielift::hybridrt::{run_hybrid, HybridConfig, HybridReport};
use aielift::loopfront::{parse_file, print_staged, StagedProgram, ValidatedLoopProgram};
use aielift::npusim::SimConfig;
use aielift::pipeline::{compile_source, run_compiled, run_reference, Compiled, CompileOptions};
use aielift::placeroute::{validate_design, Topology};
use aielift::refinterp::Environment;
use aielift::tensorlift::TensorOp;
use aielift::value::Value;
use aielift::{corpus, oracle};
use anyhow::{anyhow, bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;

#[derive(Parser)]
#[command(
    name = "aielift",
    version,
    about = "Compile annotated loop nests onto a simulated tile array and check them \
             against a reference interpreter"
)]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Compile a source file and write per-pass dumps to the output directory.
    Compile(CompileCmd),
    /// Compile, simulate, verify against the interpreter, and emit a JSON report.
    Run(RunCmd),
    /// Sweep corpus kernels across strategies and replica counts; print a cost table.
    Bench(BenchCmd),
    /// Compile a source file and re-check the placed design's structural invariants.
    Validate(ValidateCmd),
}

/// Flags shared by every subcommand.
#[derive(Args, Clone)]
struct CommonOpts {
    /// Device topology description (JSON); defaults to the built-in part.
    #[arg(long, value_name = "FILE")]
    topo: Option<PathBuf>,

    /// Simulator cost/energy model (JSON); defaults to the built-in model.
    #[arg(long, value_name = "FILE")]
    simcfg: Option<PathBuf>,

    /// How to decompose each loop nest across tiles.
    #[arg(long, value_enum, default_value_t = StrategyArg::Mixed)]
    strategy: StrategyArg,

    /// Replica-count override; the default derives from device capacity.
    #[arg(long, value_name = "R")]
    replicas: Option<usize>,

    /// Vector width kernels are lowered and simulated at.
    #[arg(long, value_name = "W", default_value_t = 16)]
    vw: usize,

    /// Seed for synthesized input data.
    #[arg(long, value_name = "S", default_value_t = 0)]
    seed: u64,

    /// Record per-tile event traces in simulation reports.
    #[arg(long)]
    trace: bool,

    /// Directory dumps and reports are written to.
    #[arg(long, value_name = "DIR", default_value = "out")]
    out: PathBuf,
}

#[derive(Args)]
struct CompileCmd {
    /// Annotated source file.
    source: PathBuf,
    #[command(flatten)]
    common: CommonOpts,
}

#[derive(Args)]
struct RunCmd {
    /// Annotated source file.
    source: PathBuf,
    #[command(flatten)]
    common: CommonOpts,

    /// Fraction of each stage's iteration domain kept on the host
    /// (0 = all device, 1 = all host; the legs run concurrently).
    #[arg(long, value_name = "F", default_value_t = 0.0)]
    hybrid: f64,

    /// Execute the design this many times and require identical results
    /// and reports from every repetition.
    #[arg(long, value_name = "N", default_value_t = 1)]
    repeats: usize,

    /// Test mode: corrupt one output word after the device run so the
    /// interpreter check must fail.
    #[arg(long)]
    inject_fault: bool,
}

#[derive(Args)]
struct BenchCmd {
    #[command(flatten)]
    common: CommonOpts,

    /// Comma-separated corpus kernel names (default: the whole corpus).
    #[arg(long, value_delimiter = ',')]
    kernels: Option<Vec<String>>,

    /// Point-count override (default: each kernel's desk-scale size).
    #[arg(long, value_name = "N")]
    n: Option<usize>,

    /// Strategies to sweep.
    #[arg(
        long,
        value_enum,
        value_delimiter = ',',
        default_values_t = vec![StrategyArg::Op, StrategyArg::Iter, StrategyArg::Mixed]
    )]
    strategies: Vec<StrategyArg>,

    /// Replica counts to sweep; `auto` derives from device capacity.
    /// `--replicas=R` is shorthand for a single-entry list.
    #[arg(long, value_delimiter = ',', default_value = "auto")]
    replica_list: Vec<String>,
}

#[derive(Args)]
struct ValidateCmd {
    /// Annotated source file.
    source: PathBuf,
    #[command(flatten)]
    common: CommonOpts,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum StrategyArg {
    Op,
    Iter,
    Mixed,
}

impl StrategyArg {
    fn name(self) -> &'static str {
        match self {
            StrategyArg::Op => "op",
            StrategyArg::Iter => "iter",
            StrategyArg::Mixed => "mixed",
        }
    }
}

impl From<StrategyArg> for Strategy {
    fn from(s: StrategyArg) -> Strategy {
        match s {
            StrategyArg::Op => Strategy::Op,
            StrategyArg::Iter => Strategy::Iter,
            StrategyArg::Mixed => Strategy::Mixed,
        }
    }
}

impl CommonOpts {
    fn topology(&self) -> Result<Topology> {
        match &self.topo {
            Some(p) => {
                let text = fs::read_to_string(p)
                    .with_context(|| format!("reading topology {}", p.display()))?;
                serde_json::from_str(&text)
                    .with_context(|| format!("parsing topology {}", p.display()))
            }
            None => Ok(Topology::hawk_point()),
        }
    }

    fn compile_options(&self) -> Result<CompileOptions> {
        Ok(CompileOptions {
            topology: self.topology()?,
            strategy: self.strategy.into(),
            replicas: self.replicas,
            tree_combine: false,
            vw: self.vw,
        })
    }

    /// Load the cost model, then apply the per-invocation width and trace
    /// flags on top.
    fn sim_config(&self) -> Result<SimConfig> {
        let mut cfg: SimConfig = match &self.simcfg {
            Some(p) => {
                let text = fs::read_to_string(p)
                    .with_context(|| format!("reading simulator config {}", p.display()))?;
                serde_json::from_str(&text)
                    .with_context(|| format!("parsing simulator config {}", p.display()))?
            }
            None => SimConfig::default(),
        };
        cfg.vw = self.vw;
        cfg.trace = self.trace;
        Ok(cfg)
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            // Help and version requests land here too; those exit 0.
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    let result = match cli.cmd {
        Cmd::Compile(c) => cmd_compile(c),
        Cmd::Run(c) => cmd_run(c),
        Cmd::Bench(c) => cmd_bench(c),
        Cmd::Validate(c) => cmd_validate(c),
    };
    match result {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}

// -----------------------------------------------------------------------
// shared helpers
// -----------------------------------------------------------------------

fn read_source(path: &PathBuf) -> Result<(String, String)> {
    let name = path.display().to_string();
    let src = fs::read_to_string(path).with_context(|| format!("reading {name}"))?;
    Ok((src, name))
}

/// Parse, rendering diagnostics with the file name attached.
fn parse_with_path(src: &str, path: &str) -> Result<StagedProgram> {
    parse_file(src).map_err(|diags| {
        let msg =
            diags.iter().map(|d| d.render(path)).collect::<Vec<_>>().join("\n");
        anyhow!("{msg}")
    })
}

fn compile(src: &str, path: &str, opts: &CompileOptions) -> Result<Compiled> {
    compile_source(src, opts).with_context(|| format!("compiling {path}"))
}

/// FNV-1a over every binding: names, shapes, and the exact bit patterns
/// of all values, in deterministic map order.
struct Fnv(u64);

impl Fnv {
    fn new() -> Self {
        Fnv(0xcbf2_9ce4_8422_2325)
    }

    fn eat(&mut self, bytes: &[u8]) {
        for &b in bytes {
            self.0 = (self.0 ^ b as u64).wrapping_mul(0x100_0000_01b3);
        }
    }
}

fn digest_env(env: &Environment) -> String {
    let mut h = Fnv::new();
    for (name, buf) in &env.arrays {
        h.eat(name.as_bytes());
        h.eat(&[0]);
        for d in &buf.dims {
            h.eat(&(*d as u64).to_le_bytes());
        }
        for v in &buf.data {
            h.eat(&oracle::value_bits(*v).to_le_bytes());
        }
    }
    for (name, v) in &env.scalars {
        h.eat(name.as_bytes());
        h.eat(&[1]);
        h.eat(&oracle::value_bits(*v).to_le_bytes());
    }
    format!("{:016x}", h.0)
}

/// Reductions and matrix products re-associate on the device, so those
/// runs get a small relative allowance; everything else must match the
/// interpreter bit for bit.
fn tolerance_for(c: &Compiled) -> f64 {
    match c {
        Compiled::CpuFallback { .. } => 0.0,
        Compiled::Device(stages) => {
            let reassociates = stages.iter().any(|s| {
                s.tensor.ops.iter().any(|(_, op)| {
                    matches!(op, TensorOp::Reduce { .. } | TensorOp::MatMul { .. })
                })
            });
            if reassociates {
                1e-5
            } else {
                0.0
            }
        }
    }
}

// -----------------------------------------------------------------------
// compile
// -----------------------------------------------------------------------

fn cmd_compile(c: CompileCmd) -> Result<ExitCode> {
    let (src, path) = read_source(&c.source)?;
    let staged = parse_with_path(&src, &path)?;
    let out = &c.common.out;
    fs::create_dir_all(out).with_context(|| format!("creating {}", out.display()))?;
    fs::write(out.join("ast.txt"), print_staged(&staged))?;

    let opts = c.common.compile_options()?;
    let compiled = compile(&src, &path, &opts)?;
    let stages = match &compiled {
        Compiled::CpuFallback { reason, .. } => {
            fs::write(out.join("fallback.txt"), format!("{reason}\n"))?;
            println!("wrote {}/ast.txt", out.display());
            println!("host fallback: {reason}");
            return Ok(ExitCode::from(2));
        }
        Compiled::Device(stages) => stages,
    };

    let multi = stages.len() > 1;
    let mut tensor = String::new();
    let mut tiles = String::new();
    let mut asm = String::new();
    for (i, s) in stages.iter().enumerate() {
        if multi {
            let hdr = format!("== stage {} ==\n", i + 1);
            tensor.push_str(&hdr);
            tiles.push_str(&hdr);
            asm.push_str(&hdr);
        }
        tensor.push_str(&s.tensor.dump());
        tiles.push_str(&s.design.graph.dump());
        // One listing per distinct kernel; replicas share the program.
        for node in &s.design.graph.nodes {
            if let Node::Kernel(k) = node {
                if k.replica == 0 {
                    let tk = materialize(&k.name, &k.spec, opts.vw, opts.topology.tile_bytes)?;
                    asm.push_str(&tk.dump());
                }
            }
        }
    }
    fs::write(out.join("tensor.txt"), tensor)?;
    fs::write(out.join("tiles.txt"), tiles)?;
    fs::write(out.join("hlaie.txt"), asm)?;
    let designs: Vec<_> = stages.iter().map(|s| &s.design).collect();
    let mut placed = serde_json::to_string_pretty(&designs)?;
    placed.push('\n');
    fs::write(out.join("placed.json"), placed)?;

    println!(
        "wrote {d}/ast.txt {d}/tensor.txt {d}/tiles.txt {d}/hlaie.txt {d}/placed.json",
        d = out.display()
    );
    Ok(ExitCode::SUCCESS)
}

// -----------------------------------------------------------------------
// run
// -----------------------------------------------------------------------

#[derive(Serialize)]
struct Manifest {
    source: String,
    topology: Option<String>,
    simcfg: Option<String>,
    strategy: &'static str,
    replicas: Option<usize>,
    vw: usize,
    hybrid: f64,
    seed: u64,
    report: String,
}

#[derive(Serialize)]
struct Totals {
    /// Device cycles summed over all stages.
    cycles: u64,
    energy_pj: f64,
    model_joules: f64,
    /// Iteration-domain points processed across both legs.
    points: usize,
    mpts: f64,
}

#[derive(Serialize)]
struct OracleReport {
    tolerance: f64,
    max_rel_error: f64,
    ok: bool,
}

#[derive(Serialize)]
struct RunReport {
    manifest: Manifest,
    fallback: Option<String>,
    repeats: usize,
    totals: Totals,
    oracle: OracleReport,
    outputs_digest: String,
    hybrid: HybridReport,
}

/// Corrupt one produced value so the interpreter check must trip: the
/// first element of the first output array, or the first scalar binding
/// for reduction-only programs.
fn inject_fault(env: &mut Environment, stages: &[&ValidatedLoopProgram]) {
    fn bump(v: &mut Value) {
        match v {
            Value::F32(x) => *v = Value::F32(*x + x.abs().max(1.0)),
            Value::I32(x) => *v = Value::I32(x.wrapping_add(1)),
        }
    }
    for p in stages {
        for name in &p.outputs {
            if let Some(buf) = env.arrays.get_mut(name) {
                if let Some(v) = buf.data.first_mut() {
                    bump(v);
                    return;
                }
            }
        }
    }
    if let Some(v) = env.scalars.values_mut().next() {
        bump(v);
    }
}

fn cmd_run(c: RunCmd) -> Result<ExitCode> {
    if !(0.0..=1.0).contains(&c.hybrid) {
        bail!("--hybrid must be between 0 and 1, got {}", c.hybrid);
    }
    if c.repeats == 0 {
        bail!("--repeats must be at least 1");
    }
    let (src, path) = read_source(&c.source)?;
    parse_with_path(&src, &path)?;
    let opts = c.common.compile_options()?;
    let simcfg = c.common.sim_config()?;
    let compiled = compile(&src, &path, &opts)?;
    let stages = compiled.stage_programs();

    let env0 = corpus::synth_env(&stages, c.common.seed);
    let want = run_reference(&stages, &env0).context("reference interpreter failed")?;

    let hcfg = HybridConfig::default();
    let (mut got, hreport) = run_hybrid(&compiled, &env0, c.hybrid, &opts, &simcfg, &hcfg)?;
    let first_digest = digest_env(&got);
    let first_report = serde_json::to_string(&hreport)?;
    for rep in 1..c.repeats {
        let (g, r) = run_hybrid(&compiled, &env0, c.hybrid, &opts, &simcfg, &hcfg)?;
        if digest_env(&g) != first_digest || serde_json::to_string(&r)? != first_report {
            bail!("repetition {} diverged from the first run", rep + 1);
        }
    }
    if c.inject_fault {
        inject_fault(&mut got, &stages);
    }

    let tolerance = tolerance_for(&compiled);
    let check = oracle::compare(&got, &want, tolerance);
    let max_rel_error = oracle::max_rel_error(&got, &want);

    let mut cycles = 0u64;
    let mut energy_pj = 0.0f64;
    let mut points = 0usize;
    for s in &hreport.stages {
        points += s.cpu_points + s.npu_points;
        if let Some(r) = &s.npu {
            cycles += r.cycles;
            energy_pj += r.energy_pj;
        }
    }
    let mpts =
        if hreport.model_ns > 0.0 { points as f64 * 1000.0 / hreport.model_ns } else { 0.0 };

    let out = &c.common.out;
    let report = RunReport {
        manifest: Manifest {
            source: path.clone(),
            topology: c.common.topo.as_ref().map(|p| p.display().to_string()),
            simcfg: c.common.simcfg.as_ref().map(|p| p.display().to_string()),
            strategy: c.common.strategy.name(),
            replicas: c.common.replicas,
            vw: c.common.vw,
            hybrid: c.hybrid,
            seed: c.common.seed,
            report: out.join("report.json").display().to_string(),
        },
        fallback: hreport.fallback.clone(),
        repeats: c.repeats,
        totals: Totals {
            cycles,
            energy_pj,
            model_joules: energy_pj * 1e-12,
            points,
            mpts,
        },
        oracle: OracleReport {
            tolerance,
            max_rel_error,
            ok: check.is_ok(),
        },
        outputs_digest: digest_env(&got),
        hybrid: hreport,
    };
    let mut json = serde_json::to_string_pretty(&report)?;
    json.push('\n');
    fs::create_dir_all(out).with_context(|| format!("creating {}", out.display()))?;
    fs::write(out.join("report.json"), &json)?;
    print!("{json}");

    if let Err(diff) = check {
        eprintln!("output mismatch: {diff}");
        return Ok(ExitCode::from(3));
    }
    if report.fallback.is_some() {
        return Ok(ExitCode::from(2));
    }
    Ok(ExitCode::SUCCESS)
}

// -----------------------------------------------------------------------
// bench
// -----------------------------------------------------------------------

#[derive(Serialize)]
struct BenchRow {
    kernel: String,
    n: usize,
    strategy: &'static str,
    replicas: String,
    model_cycles: Option<u64>,
    model_joules: Option<f64>,
    model_mpts: Option<f64>,
    note: Option<String>,
}

fn bench_row(
    ck: &corpus::CorpusKernel,
    n: usize,
    strategy: StrategyArg,
    replicas: Option<usize>,
    common: &CommonOpts,
) -> Result<BenchRow> {
    let mut row = BenchRow {
        kernel: ck.name.to_string(),
        n,
        strategy: strategy.name(),
        replicas: replicas.map_or_else(|| "auto".to_string(), |r| r.to_string()),
        model_cycles: None,
        model_joules: None,
        model_mpts: None,
        note: None,
    };
    let opts = CompileOptions {
        strategy: strategy.into(),
        replicas,
        ..common.compile_options()?
    };
    let simcfg = common.sim_config()?;
    let src = ck.render(n);
    let compiled = match compile_source(&src, &opts) {
        Ok(c) => c,
        Err(e) => {
            row.note = Some(e.to_string().replace('\n', "; "));
            return Ok(row);
        }
    };
    if let Compiled::CpuFallback { reason, .. } = &compiled {
        row.note = Some(format!("host fallback: {reason}"));
        return Ok(row);
    }
    let env = ck.env(&compiled.stage_programs(), common.seed);
    let outcome = match run_compiled(&compiled, &env, &simcfg) {
        Ok(o) => o,
        Err(e) => {
            row.note = Some(e.to_string().replace('\n', "; "));
            return Ok(row);
        }
    };
    let cycles: u64 = outcome.reports.iter().map(|r| r.cycles).sum();
    let energy_pj: f64 = outcome.reports.iter().map(|r| r.energy_pj).sum();
    let points = ck.points(n);
    let seconds = cycles as f64 / simcfg.clock_hz;
    row.replicas = {
        let mut per_stage: Vec<usize> = match &compiled {
            Compiled::Device(stages) => {
                stages.iter().map(|s| s.design.graph.replicas).collect()
            }
            Compiled::CpuFallback { .. } => unreachable!(),
        };
        per_stage.dedup();
        per_stage.iter().map(|r| r.to_string()).collect::<Vec<_>>().join(",")
    };
    row.model_cycles = Some(cycles);
    row.model_joules = Some(energy_pj * 1e-12);
    row.model_mpts = Some(if seconds > 0.0 { points as f64 / seconds / 1e6 } else { 0.0 });
    Ok(row)
}

fn render_bench_table(rows: &[BenchRow]) -> String {
    let headers =
        ["kernel", "n", "strategy", "R", "model cycles", "model joules", "model MPts/s", "note"];
    let cells: Vec<[String; 8]> = rows
        .iter()
        .map(|r| {
            [
                r.kernel.clone(),
                r.n.to_string(),
                r.strategy.to_string(),
                r.replicas.clone(),
                r.model_cycles.map_or_else(|| "-".into(), |c| c.to_string()),
                r.model_joules.map_or_else(|| "-".into(), |j| format!("{j:.3e}")),
                r.model_mpts.map_or_else(|| "-".into(), |m| format!("{m:.2}")),
                r.note.clone().unwrap_or_default(),
            ]
        })
        .collect();
    let mut width = headers.map(str::len);
    for row in &cells {
        for (w, cell) in width.iter_mut().zip(row) {
            *w = (*w).max(cell.len());
        }
    }
    let mut s = String::new();
    let fmt_row = |s: &mut String, cols: &[String]| {
        let line = cols
            .iter()
            .enumerate()
            .map(|(i, c)| format!("{c:<w$}", w = width[i]))
            .collect::<Vec<_>>()
            .join("  ");
        let _ = writeln!(s, "{}", line.trim_end());
    };
    fmt_row(&mut s, &headers.map(String::from));
    let _ = writeln!(s, "{}", "-".repeat(width.iter().sum::<usize>() + 2 * (width.len() - 1)));
    for row in &cells {
        fmt_row(&mut s, row);
    }
    s
}

fn cmd_bench(c: BenchCmd) -> Result<ExitCode> {
    let kernels: Vec<String> = c
        .kernels
        .unwrap_or_else(|| corpus::CORPUS.iter().map(|k| k.name.to_string()).collect())
        .into_iter()
        .filter(|k| !k.is_empty())
        .collect();
    let replica_list: Vec<Option<usize>> = match c.common.replicas {
        Some(r) => vec![Some(r)],
        None => c
            .replica_list
            .iter()
            .map(|t| {
                if t == "auto" {
                    Ok(None)
                } else {
                    t.parse::<usize>()
                        .map(Some)
                        .map_err(|_| anyhow!("bad replica count `{t}` (want a number or `auto`)"))
                }
            })
            .collect::<Result<_>>()?,
    };

    let mut rows = Vec::new();
    for name in &kernels {
        let ck = corpus::kernel(name)
            .ok_or_else(|| anyhow!("unknown corpus kernel `{name}`"))?;
        let n = c.n.unwrap_or(ck.default_n);
        for &strategy in &c.strategies {
            for &replicas in &replica_list {
                rows.push(bench_row(ck, n, strategy, replicas, &c.common)?);
            }
        }
    }

    let table = render_bench_table(&rows);
    print!("{table}");
    let out = &c.common.out;
    fs::create_dir_all(out).with_context(|| format!("creating {}", out.display()))?;
    fs::write(out.join("bench.txt"), &table)?;
    let mut json = serde_json::to_string_pretty(&serde_json::json!({ "rows": rows }))?;
    json.push('\n');
    fs::write(out.join("bench.json"), json)?;
    Ok(ExitCode::SUCCESS)
}

// -----------------------------------------------------------------------
// validate
// -----------------------------------------------------------------------

fn cmd_validate(c: ValidateCmd) -> Result<ExitCode> {
    let (src, path) = read_source(&c.source)?;
    parse_with_path(&src, &path)?;
    let opts = c.common.compile_options()?;
    let compiled = compile(&src, &path, &opts)?;
    let stages = match &compiled {
        Compiled::CpuFallback { reason, .. } => {
            println!("host fallback: {reason}");
            return Ok(ExitCode::from(2));
        }
        Compiled::Device(stages) => stages,
    };

    let mut violations = Vec::new();
    for (i, s) in stages.iter().enumerate() {
        let g = &s.design.graph;
        let kernels = g.nodes.iter().filter(|n| matches!(n, Node::Kernel(_))).count();
        let mems = g.nodes.len() - kernels;
        println!(
            "stage {}: domain {:?}, {} kernels + {} memory nodes, {} streams, replicas {}",
            i + 1,
            g.domain,
            kernels,
            mems,
            g.streams.len(),
            g.replicas,
        );
        if let Err(e) = check_fanio(g) {
            violations.push(format!("stage {}: {e}", i + 1));
        }
        for v in validate_design(&s.design) {
            violations.push(format!("stage {}: {v}", i + 1));
        }
    }
    if violations.is_empty() {
        println!("design OK");
        Ok(ExitCode::SUCCESS)
    } else {
        for v in &violations {
            eprintln!("violation: {v}");
        }
        Ok(ExitCode::from(1))
    }
}
