//! Co-execution of a loop across the host interpreter and the simulated
//! tile array: split the outer iteration range into a host prefix and a
//! device suffix, run both legs, merge the outputs, and model the
//! combined wall time as the slower leg plus the merge cost.

use crate::decompose::StreamDst;
use crate::hlaie;
use crate::loopfront::{ReduceOp, ValidatedLoopProgram};
use crate::npusim::{simulate, SimConfig, SimReport};
use crate::pipeline::{compile_stage, run_reference, Compiled, CompileOptions, PipelineError};
use crate::placeroute::PlacedDesign;
use crate::refinterp::{interpret, Environment, IterRange};
use crate::value::{ElemType, Value};
use serde::{Deserialize, Serialize};

/// How one loop's outer iterations are divided between the legs.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct HybridPlan {
    pub cpu_fraction: f64,
    /// Host prefix of the outer range.
    pub cpu: IterRange,
    /// Device suffix.
    pub npu: IterRange,
}

/// Contiguous prefix/suffix split: the host takes the first
/// `round(f * N)` outer iterations, the device the rest.
pub fn split(vp: &ValidatedLoopProgram, cpu_fraction: f64) -> HybridPlan {
    assert!(
        (0.0..=1.0).contains(&cpu_fraction),
        "cpu fraction {cpu_fraction} outside [0, 1]"
    );
    let n = vp.program.nest.indices[0].extent();
    let c = ((cpu_fraction * n as f64).round() as usize).min(n);
    HybridPlan {
        cpu_fraction,
        cpu: IterRange::new(0, c),
        npu: IterRange::new(c, n),
    }
}

/// Cost constants for the modelled host leg and the merge step. The host
/// side is the reference interpreter, so its time is a model, not a
/// measurement.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct HybridConfig {
    /// Modelled host cost per iteration-domain point, nanoseconds.
    pub cpu_ns_per_point: f64,
    /// Modelled merge cost per device output word, nanoseconds.
    pub combine_ns_per_word: f64,
}

impl Default for HybridConfig {
    fn default() -> Self {
        HybridConfig { cpu_ns_per_point: 1.0, combine_ns_per_word: 0.1 }
    }
}

/// One stage's co-execution accounting.
#[derive(Debug, Clone, Serialize)]
pub struct HybridStageReport {
    pub cpu_points: usize,
    pub npu_points: usize,
    pub cpu_model_ns: f64,
    pub npu_model_ns: f64,
    pub combine_model_ns: f64,
    /// `max(cpu, npu) + combine`: the legs run concurrently and meet at
    /// the merge.
    pub stage_model_ns: f64,
    /// Device-leg detail; absent when the stage ran entirely on the host.
    pub npu: Option<SimReport>,
}

#[derive(Debug, Clone, Serialize)]
pub struct HybridReport {
    pub cpu_fraction: f64,
    /// Sum of the per-stage model times.
    pub model_ns: f64,
    /// Set when any part of the run degraded to host-only execution.
    pub fallback: Option<String>,
    pub stages: Vec<HybridStageReport>,
}

fn identity(op: ReduceOp, elem: ElemType) -> Value {
    match op {
        ReduceOp::Add => elem.zero(),
        ReduceOp::Max => elem.min_value(),
    }
}

/// The device-leg program: the same loop with its outer bounds narrowed
/// to the planned suffix (halos and windows follow from the bounds).
fn sub_range_program(vp: &ValidatedLoopProgram, r: IterRange) -> ValidatedLoopProgram {
    let mut sub = vp.clone();
    let ix = &mut sub.program.nest.indices[0];
    let base = ix.lo;
    ix.lo = base + r.lo as i64;
    ix.hi = base + r.hi as i64 - 1;
    sub
}

/// Points per outer iteration (the inner extent of a 2-D nest, 1 for 1-D).
fn inner_points(vp: &ValidatedLoopProgram) -> usize {
    vp.program.nest.indices[1..].iter().map(|ix| ix.extent()).product()
}

fn host_stage_report(vp: &ValidatedLoopProgram, hcfg: &HybridConfig) -> HybridStageReport {
    let points = vp.program.domain_points();
    let cpu_model_ns = points as f64 * hcfg.cpu_ns_per_point;
    HybridStageReport {
        cpu_points: points,
        npu_points: 0,
        cpu_model_ns,
        npu_model_ns: 0.0,
        combine_model_ns: 0.0,
        stage_model_ns: cpu_model_ns,
        npu: None,
    }
}

/// Copy everything the device wrote back into the merged environment:
/// array words via the design's DMA segments, the reduction via the
/// combine operator (host partial first, device partial second).
fn merge_device_results(
    design: &PlacedDesign,
    vp: &ValidatedLoopProgram,
    merged: &mut Environment,
    device: &Environment,
) -> Result<(), PipelineError> {
    for t in design.dma.iter().filter(|t| !t.to_device) {
        if !matches!(&design.graph.streams[t.stream].dst, StreamDst::HostArray { .. }) {
            continue;
        }
        let src = &device.arrays[&t.array];
        let dst = merged
            .arrays
            .get_mut(&t.array)
            .expect("merged environment was prepared with the stage's arrays");
        for &(off, n) in &t.segs {
            dst.data[off..off + n].copy_from_slice(&src.data[off..off + n]);
        }
    }
    if let Some((op, name)) = vp.reduction() {
        let host_v = merged.scalars[name];
        let device_v = device.scalars[name];
        merged.scalars.insert(name.to_string(), hlaie::fold(op, host_v, device_v));
    }
    Ok(())
}

/// Run one compiled stage with the planned split. Any device-leg failure
/// (sub-range compile or simulation) degrades the stage to host-only
/// execution and reports why.
#[allow(clippy::too_many_arguments)]
fn run_stage(
    design_full: &PlacedDesign,
    vp: &ValidatedLoopProgram,
    env: &Environment,
    cpu_fraction: f64,
    copts: &CompileOptions,
    simcfg: &SimConfig,
    hcfg: &HybridConfig,
    fallback: &mut Option<String>,
) -> Result<(Environment, HybridStageReport), PipelineError> {
    let plan = split(vp, cpu_fraction);
    let inner = inner_points(vp);

    if plan.npu.is_empty() {
        // everything on the host; the device is never compiled or touched
        let mut merged = env.clone();
        merged.prepare(vp);
        interpret(vp, &mut merged, None)?;
        return Ok((merged, host_stage_report(vp, hcfg)));
    }

    // device leg: reuse the full-range design when the host takes nothing,
    // otherwise compile the suffix sub-range
    let device_run = (|| -> Result<(ValidatedLoopProgram, PlacedDesign), PipelineError> {
        if plan.cpu.is_empty() {
            Ok((vp.clone(), design_full.clone()))
        } else {
            let sub = sub_range_program(vp, plan.npu);
            let stage = compile_stage(&sub, copts)?;
            Ok((stage.program, stage.design))
        }
    })();
    let (sub_vp, design) = match device_run {
        Ok(x) => x,
        Err(e) => {
            fallback.get_or_insert_with(|| format!("device leg unavailable, ran on host: {e}"));
            let mut merged = env.clone();
            merged.prepare(vp);
            interpret(vp, &mut merged, None)?;
            return Ok((merged, host_stage_report(vp, hcfg)));
        }
    };

    // host leg over the prefix
    let mut merged = env.clone();
    merged.prepare(vp);
    if !plan.cpu.is_empty() {
        interpret(vp, &mut merged, Some(plan.cpu))?;
    }

    // device leg over the suffix, reductions seeded with the identity so
    // the merge folds exactly one host and one device contribution
    let mut device_env = env.clone();
    device_env.prepare(&sub_vp);
    if let Some((op, name)) = vp.reduction() {
        let elem = vp.program.scalar(name).expect("reduction scalar is declared").elem;
        device_env.scalars.insert(name.to_string(), identity(op, elem));
    }
    match simulate(&design, &device_env, simcfg) {
        Ok((device_result, npu_rep)) => {
            merge_device_results(&design, vp, &mut merged, &device_result)?;
            let cpu_points = plan.cpu.len() * inner;
            let npu_points = plan.npu.len() * inner;
            let cpu_model_ns = cpu_points as f64 * hcfg.cpu_ns_per_point;
            let npu_model_ns = npu_rep.cycles as f64 / simcfg.clock_hz * 1.0e9;
            let combine_model_ns = npu_rep.dma_words_out as f64 * hcfg.combine_ns_per_word;
            let stage_model_ns = cpu_model_ns.max(npu_model_ns) + combine_model_ns;
            Ok((
                merged,
                HybridStageReport {
                    cpu_points,
                    npu_points,
                    cpu_model_ns,
                    npu_model_ns,
                    combine_model_ns,
                    stage_model_ns,
                    npu: Some(npu_rep),
                },
            ))
        }
        Err(e) => {
            fallback.get_or_insert_with(|| format!("device leg failed, ran on host: {e}"));
            let mut all_host = env.clone();
            all_host.prepare(vp);
            interpret(vp, &mut all_host, None)?;
            Ok((all_host, host_stage_report(vp, hcfg)))
        }
    }
}

/// Run a compiled file with `cpu_fraction` of every stage's outer
/// iterations on the host and the rest on the simulated array, stage by
/// stage. `copts` drives the sub-range recompilations the split needs.
pub fn run_hybrid(
    c: &Compiled,
    env: &Environment,
    cpu_fraction: f64,
    copts: &CompileOptions,
    simcfg: &SimConfig,
    hcfg: &HybridConfig,
) -> Result<(Environment, HybridReport), PipelineError> {
    match c {
        Compiled::CpuFallback { stages, reason } => {
            let result = run_reference(&stages.iter().collect::<Vec<_>>(), env)?;
            let stage_reports: Vec<HybridStageReport> =
                stages.iter().map(|p| host_stage_report(p, hcfg)).collect();
            let model_ns = stage_reports.iter().map(|s| s.stage_model_ns).sum();
            Ok((
                result,
                HybridReport {
                    cpu_fraction,
                    model_ns,
                    fallback: Some(reason.clone()),
                    stages: stage_reports,
                },
            ))
        }
        Compiled::Device(stages) => {
            let mut e = env.clone();
            let mut fallback = None;
            let mut stage_reports = Vec::new();
            for s in stages {
                let (next, rep) = run_stage(
                    &s.design,
                    &s.program,
                    &e,
                    cpu_fraction,
                    copts,
                    simcfg,
                    hcfg,
                    &mut fallback,
                )?;
                e = next;
                stage_reports.push(rep);
            }
            let model_ns = stage_reports.iter().map(|s| s.stage_model_ns).sum();
            Ok((
                e,
                HybridReport { cpu_fraction, model_ns, fallback, stages: stage_reports },
            ))
        }
    }
}
