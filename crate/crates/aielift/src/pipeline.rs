//! End-to-end drivers: source text through lifting, decomposition,
//! placement and lowering to executable designs — one per pragma loop,
//! run in order with the host materialising intermediates — plus the
//! CPU fallback path for programs the device cannot take.

use crate::decompose::{decompose, DecomposeError, DecomposeOptions, Strategy};
use crate::diag::Diagnostic;
use crate::hlaie::{self, HlaieError};
use crate::loopfront::{parse_file, validate, ValidateOutcome, ValidatedLoopProgram};
use crate::npusim::{run_design, simulate, SimConfig, SimError, SimReport};
use crate::placeroute::{place_route, PlaceError, PlacedDesign, Topology};
use crate::refinterp::{interpret, Environment, RunError};
use crate::tensorlift::{lift, LiftError, TensorProgram};
use thiserror::Error;

/// Everything the compilation passes need to know, beyond the source.
#[derive(Debug, Clone)]
pub struct CompileOptions {
    pub topology: Topology,
    pub strategy: Strategy,
    /// Replica-count override; `None` picks the capacity-derived default.
    pub replicas: Option<usize>,
    /// Fold reduction partials on the array instead of on the host.
    pub tree_combine: bool,
    /// Vector width used to probe kernel lowering at compile time (and
    /// usually to simulate with).
    pub vw: usize,
}

impl Default for CompileOptions {
    fn default() -> Self {
        CompileOptions {
            topology: Topology::hawk_point(),
            strategy: Strategy::Mixed,
            replicas: None,
            tree_combine: false,
            vw: 16,
        }
    }
}

impl CompileOptions {
    fn decompose_options(&self) -> DecomposeOptions {
        DecomposeOptions {
            strategy: self.strategy,
            replicas: self.replicas,
            tree_combine: self.tree_combine,
            strict_columns: false,
        }
    }
}

/// One pragma loop compiled onto the array.
#[derive(Debug, Clone)]
pub struct CompiledStage {
    pub program: ValidatedLoopProgram,
    pub tensor: TensorProgram,
    pub design: PlacedDesign,
}

/// A compiled source file: device designs for every stage, or the
/// decision to run the whole thing on the host.
#[derive(Debug, Clone)]
pub enum Compiled {
    Device(Vec<CompiledStage>),
    CpuFallback { stages: Vec<ValidatedLoopProgram>, reason: String },
}

impl Compiled {
    pub fn stage_programs(&self) -> Vec<&ValidatedLoopProgram> {
        match self {
            Compiled::Device(stages) => stages.iter().map(|s| &s.program).collect(),
            Compiled::CpuFallback { stages, .. } => stages.iter().collect(),
        }
    }

    pub fn is_fallback(&self) -> bool {
        matches!(self, Compiled::CpuFallback { .. })
    }
}

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("parse failed:\n{0}")]
    Parse(String),
    #[error("validation failed:\n{0}")]
    Validate(String),
    #[error(transparent)]
    Lift(#[from] LiftError),
    #[error(transparent)]
    Decompose(#[from] DecomposeError),
    #[error(transparent)]
    Place(#[from] PlaceError),
    #[error(transparent)]
    Lower(#[from] HlaieError),
    #[error(transparent)]
    Sim(#[from] SimError),
    #[error(transparent)]
    Interp(#[from] RunError),
}

fn render_diags(diags: &[Diagnostic]) -> String {
    diags.iter().map(|d| d.to_string()).collect::<Vec<_>>().join("\n")
}

/// Compile one already-validated loop for the array.
pub fn compile_stage(
    vp: &ValidatedLoopProgram,
    opts: &CompileOptions,
) -> Result<CompiledStage, PipelineError> {
    let tensor = lift(vp)?;
    let graph = decompose(&tensor, opts.topology.limits(), &opts.decompose_options())?;
    // The default column packing assumes pipeline stages hand off through
    // shared tile memory. Graphs whose stages cannot sit adjacently can
    // still exhaust stream channels, so retry once charging every pipe
    // against the link budget before giving up.
    let design = match place_route(&graph, &opts.topology) {
        Ok(d) => d,
        Err(first) => {
            let strict =
                DecomposeOptions { strict_columns: true, ..opts.decompose_options() };
            let graph = decompose(&tensor, opts.topology.limits(), &strict)
                .map_err(|_| PipelineError::from(first.clone()))?;
            place_route(&graph, &opts.topology).map_err(|_| first)?
        }
    };
    // Probe the kernel lowering now so local-memory overflows surface as
    // compile errors rather than simulation failures.
    for k in design.graph.kernels() {
        hlaie::materialize(&k.name, &k.spec, opts.vw, opts.topology.tile_bytes)?;
    }
    Ok(CompiledStage { program: vp.clone(), tensor, design })
}

/// Parse, validate and compile a whole source file. A stage the validator
/// marks unsupported (atomic updates and friends) sends the entire file
/// down the CPU fallback path; malformed input is an error.
pub fn compile_source(src: &str, opts: &CompileOptions) -> Result<Compiled, PipelineError> {
    let staged = parse_file(src).map_err(|d| PipelineError::Parse(render_diags(&d)))?;
    let mut programs = Vec::new();
    let mut fallback: Option<String> = None;
    for (i, stage) in staged.stages.iter().enumerate() {
        match validate(stage).map_err(|d| PipelineError::Validate(render_diags(&d)))? {
            ValidateOutcome::Offloadable(p) => programs.push(p),
            ValidateOutcome::CpuFallback { program, reason } => {
                fallback.get_or_insert_with(|| format!("stage {}: {reason}", i + 1));
                programs.push(program);
            }
        }
    }
    match fallback {
        Some(reason) => Ok(Compiled::CpuFallback { stages: programs, reason }),
        None => {
            let stages = programs
                .iter()
                .map(|p| compile_stage(p, opts))
                .collect::<Result<Vec<_>, _>>()?;
            Ok(Compiled::Device(stages))
        }
    }
}

/// The result of executing a compiled file against an environment.
#[derive(Debug, Clone)]
pub struct RunOutcome {
    pub env: Environment,
    /// One simulation report per stage; empty on the fallback path or
    /// when the fast functional executor ran.
    pub reports: Vec<SimReport>,
    pub fallback: Option<String>,
}

/// Run every stage in order through the cycle simulator (or the host
/// interpreter on the fallback path), feeding each stage the previous
/// stage's environment.
pub fn run_compiled(
    c: &Compiled,
    env: &Environment,
    cfg: &SimConfig,
) -> Result<RunOutcome, PipelineError> {
    match c {
        Compiled::CpuFallback { stages, reason } => {
            let env = run_reference(&stage_refs(stages), env)?;
            Ok(RunOutcome { env, reports: Vec::new(), fallback: Some(reason.clone()) })
        }
        Compiled::Device(stages) => {
            let mut e = env.clone();
            let mut reports = Vec::new();
            for s in stages {
                e.prepare(&s.program);
                let (next, report) = simulate(&s.design, &e, cfg)?;
                e = next;
                reports.push(report);
            }
            Ok(RunOutcome { env: e, reports, fallback: None })
        }
    }
}

/// Like [`run_compiled`] but through the fast functional executor; used
/// for bulk verification sweeps where timing is not needed.
pub fn run_compiled_fast(
    c: &Compiled,
    env: &Environment,
    vw: usize,
) -> Result<RunOutcome, PipelineError> {
    match c {
        Compiled::CpuFallback { stages, reason } => {
            let env = run_reference(&stage_refs(stages), env)?;
            Ok(RunOutcome { env, reports: Vec::new(), fallback: Some(reason.clone()) })
        }
        Compiled::Device(stages) => {
            let mut e = env.clone();
            for s in stages {
                e.prepare(&s.program);
                e = run_design(&s.design, &e, vw)?;
            }
            Ok(RunOutcome { env: e, reports: Vec::new(), fallback: None })
        }
    }
}

fn stage_refs(stages: &[ValidatedLoopProgram]) -> Vec<&ValidatedLoopProgram> {
    stages.iter().collect()
}

/// Stage-by-stage host interpretation: the oracle every device run is
/// compared against.
pub fn run_reference(
    stages: &[&ValidatedLoopProgram],
    env: &Environment,
) -> Result<Environment, RunError> {
    let mut e = env.clone();
    for p in stages {
        e.prepare(p);
        interpret(p, &mut e, None)?;
    }
    Ok(e)
}
