//! Simulation of a placed design on the tile array. Two executors share
//! one kernel semantics: [`simulate`] steps every agent cycle by cycle —
//! bounded stream FIFOs, one-word-per-cycle host DMA per shim column and
//! direction, bandwidth-gated memory tiles — and reports cycles, energy
//! and per-tile activity; [`run_design`] runs the same lowered kernels to
//! completion in dependency order for fast bulk verification. Both write
//! results back through the design's DMA programs, so their outputs are
//! bitwise identical.

use crate::decompose::{KernelGraph, Node, StreamDst, StreamSrc};
use crate::hlaie::{self, CoreState, CostModel, ExecStats, PortIo, Step, TileKernel};
use crate::placeroute::PlacedDesign;
use crate::refinterp::Environment;
use crate::value::Value;
use serde::{Deserialize, Serialize};
use std::collections::{BTreeMap, VecDeque};
use thiserror::Error;

/// Energy charged per event, picojoules. The totals are a linear model
/// over the activity counts the simulation gathers; the constants are
/// configuration, not measurements.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EnergyModel {
    pub pj_scalar_op: f64,
    pub pj_lane_op: f64,
    /// One word moved to or from tile-local memory.
    pub pj_local_word: f64,
    /// One word crossing one mesh link.
    pub pj_word_hop: f64,
    /// One byte of host DMA traffic.
    pub pj_dma_byte: f64,
}

impl Default for EnergyModel {
    fn default() -> Self {
        EnergyModel {
            pj_scalar_op: 1.0,
            pj_lane_op: 0.8,
            pj_local_word: 0.5,
            pj_word_hop: 0.4,
            pj_dma_byte: 10.0,
        }
    }
}

/// Simulation parameters. Topology figures (FIFO depth, DMA width,
/// memory-tile bandwidth) come from the placed design itself; this holds
/// the knobs that are not part of the array geometry.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SimConfig {
    pub cost: CostModel,
    pub energy: EnergyModel,
    /// Vector width kernels are lowered at (lanes per vector register).
    pub vw: usize,
    /// Core clock in Hz; converts cycle counts into wall time.
    pub clock_hz: f64,
    /// Record per-event trace lines in the report.
    pub trace: bool,
}

impl Default for SimConfig {
    fn default() -> Self {
        SimConfig {
            cost: CostModel::default(),
            energy: EnergyModel::default(),
            vw: 16,
            clock_hz: 1.0e9,
            trace: false,
        }
    }
}

#[derive(Debug, Error)]
pub enum SimError {
    #[error("deadlock after {cycle} cycles: {detail}")]
    Deadlock { cycle: u64, detail: String },
    #[error("stream protocol violated: {0}")]
    Protocol(String),
    #[error("kernel parameter `{0}` is not bound in the environment")]
    UnboundParam(String),
    #[error("array `{0}` is not bound in the environment")]
    UnboundArray(String),
    #[error("reduction scalar `{0}` is not bound in the environment")]
    UnboundScalar(String),
    #[error(transparent)]
    Lower(#[from] hlaie::HlaieError),
}

/// Activity of one compute tile over the run.
#[derive(Debug, Clone, Serialize)]
pub struct TileReport {
    pub name: String,
    pub col: usize,
    pub row: usize,
    /// Cycles the core spent executing (not waiting on ports).
    pub busy_cycles: u64,
    pub stats: ExecStats,
}

#[derive(Debug, Clone, Copy, Serialize)]
pub struct EnergyBreakdown {
    pub scalar_pj: f64,
    pub lane_pj: f64,
    pub local_pj: f64,
    pub stream_pj: f64,
    pub dma_pj: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct SimReport {
    /// Total cycles until the last agent went idle.
    pub cycles: u64,
    /// Iteration-domain points the design processed.
    pub points: usize,
    /// Millions of domain points per second at the configured clock.
    pub throughput_mpts: f64,
    pub energy_pj: f64,
    pub energy: EnergyBreakdown,
    pub dma_words_in: u64,
    pub dma_words_out: u64,
    /// Stream words weighted by mesh links crossed.
    pub stream_word_hops: u64,
    pub tiles: Vec<TileReport>,
    /// Event log; empty unless tracing was enabled.
    pub trace: Vec<String>,
}

// ---------------------------------------------------------------------
// shared setup: parameter binding, host-side words, output write-back
// ---------------------------------------------------------------------

fn check_params(g: &KernelGraph, env: &Environment) -> Result<(), SimError> {
    for name in &g.params {
        if !env.scalars.contains_key(name) {
            return Err(SimError::UnboundParam(name.clone()));
        }
    }
    Ok(())
}

/// Words every host-to-device transfer will push, in transfer order.
fn gather_inputs(
    design: &PlacedDesign,
    env: &Environment,
) -> Result<BTreeMap<usize, Vec<Value>>, SimError> {
    let mut words = BTreeMap::new();
    for t in design.dma.iter().filter(|t| t.to_device) {
        let buf = env
            .arrays
            .get(&t.array)
            .ok_or_else(|| SimError::UnboundArray(t.array.clone()))?;
        let mut v = Vec::with_capacity(t.segs.iter().map(|s| s.1).sum());
        for &(off, n) in &t.segs {
            let end = off + n;
            if end > buf.data.len() {
                return Err(SimError::Protocol(format!(
                    "transfer for `{}` reads words [{off},{end}) past the array end ({})",
                    t.array,
                    buf.data.len()
                )));
            }
            v.extend_from_slice(&buf.data[off..end]);
        }
        words.insert(t.stream, v);
    }
    Ok(words)
}

/// Scatter collected device-to-host words back into a copy of `env` and
/// fold reduction partials (in chunk order, onto the host's initial
/// value).
fn apply_outputs(
    design: &PlacedDesign,
    env: &Environment,
    outs: &BTreeMap<usize, Vec<Value>>,
) -> Result<Environment, SimError> {
    let g = &design.graph;
    let mut result = env.clone();
    let mut partials: BTreeMap<String, BTreeMap<usize, Value>> = BTreeMap::new();
    for t in design.dma.iter().filter(|t| !t.to_device) {
        let words = outs.get(&t.stream).ok_or_else(|| {
            SimError::Protocol(format!("stream s{} produced no host words", t.stream))
        })?;
        match &g.streams[t.stream].dst {
            StreamDst::HostArray { .. } => {
                let buf = result
                    .arrays
                    .get_mut(&t.array)
                    .ok_or_else(|| SimError::UnboundArray(t.array.clone()))?;
                let mut cursor = 0usize;
                for &(off, n) in &t.segs {
                    let end = off + n;
                    if end > buf.data.len() || cursor + n > words.len() {
                        return Err(SimError::Protocol(format!(
                            "transfer for `{}` writes words [{off},{end}) past the array end",
                            t.array
                        )));
                    }
                    buf.data[off..end].copy_from_slice(&words[cursor..cursor + n]);
                    cursor += n;
                }
            }
            StreamDst::HostPartial { name, chunk } => {
                if words.len() != 1 {
                    return Err(SimError::Protocol(format!(
                        "partial stream s{} carried {} words",
                        t.stream,
                        words.len()
                    )));
                }
                partials.entry(name.clone()).or_default().insert(*chunk, words[0]);
            }
            other => {
                return Err(SimError::Protocol(format!(
                    "host transfer s{} targets a device endpoint {other:?}",
                    t.stream
                )));
            }
        }
    }
    if let Some(ci) = &g.combine {
        let init = *result
            .scalars
            .get(&ci.name)
            .ok_or_else(|| SimError::UnboundScalar(ci.name.clone()))?;
        let got = partials.remove(&ci.name).unwrap_or_default();
        if got.len() != ci.partials {
            return Err(SimError::Protocol(format!(
                "reduction `{}` expected {} partials, received {}",
                ci.name,
                ci.partials,
                got.len()
            )));
        }
        // Partials fold left in chunk order, then onto the initial value,
        // matching the reference interpreter's accumulation order.
        let mut acc: Option<Value> = None;
        for (_, p) in got {
            acc = Some(match acc {
                None => p,
                Some(a) => hlaie::fold(ci.op, a, p),
            });
        }
        let v = match acc {
            None => init,
            Some(a) => hlaie::fold(ci.op, init, a),
        };
        result.scalars.insert(ci.name.clone(), v);
    }
    Ok(result)
}

/// Lower one kernel node and evaluate its parameters.
fn lowered_kernel(
    design: &PlacedDesign,
    node: &crate::decompose::KernelNode,
    env: &Environment,
    vw: usize,
) -> Result<(TileKernel, Vec<Value>), SimError> {
    let tk = hlaie::materialize(&node.name, &node.spec, vw, design.topology.tile_bytes)?;
    let params: Vec<Value> = node.spec.params.iter().map(|p| p.eval(&env.scalars)).collect();
    Ok((tk, params))
}

/// Per-port stream wiring of one kernel: input port -> stream id, output
/// port -> 1..2 stream ids (stream order is id order, so deterministic).
fn port_wiring(g: &KernelGraph, id: crate::decompose::NodeId) -> (Vec<usize>, Vec<Vec<usize>>) {
    let Node::Kernel(k) = g.node(id) else { panic!("port wiring queried for a memory node") };
    let mut ins = vec![usize::MAX; k.spec.ins.len()];
    let mut outs = vec![Vec::new(); k.spec.outs.len()];
    for s in &g.streams {
        if let StreamDst::Kernel { node, port } = &s.dst {
            if *node == id {
                ins[*port] = s.id;
            }
        }
        if let StreamSrc::Kernel { node, port } = &s.src {
            if *node == id {
                outs[*port].push(s.id);
            }
        }
    }
    (ins, outs)
}

// ---------------------------------------------------------------------
// functional executor
// ---------------------------------------------------------------------

/// Run every kernel to completion in dependency order over unbounded
/// queues. Kernel dataflow is deterministic, so the results match the
/// cycle-level simulation bit for bit while running much faster; use this
/// for bulk verification and the hybrid runtime's device leg.
pub fn run_design(
    design: &PlacedDesign,
    env: &Environment,
    vw: usize,
) -> Result<Environment, SimError> {
    let g = &design.graph;
    check_params(g, env)?;
    let cost = CostModel::default();
    let mut queues: Vec<VecDeque<Value>> = vec![VecDeque::new(); g.streams.len()];
    for (sid, words) in gather_inputs(design, env)? {
        queues[sid].extend(words);
    }

    let mut fired = vec![false; g.nodes.len()];
    loop {
        let mut changed = false;
        for node in &g.nodes {
            if fired[node.id().0] {
                continue;
            }
            match node {
                Node::Memory(m) => {
                    let in_sid = g
                        .streams
                        .iter()
                        .find(|s| matches!(&s.dst, StreamDst::Memory { node } if *node == m.id))
                        .map(|s| s.id)
                        .ok_or_else(|| {
                            SimError::Protocol(format!("memory `{}` has no input stream", m.name))
                        })?;
                    if queues[in_sid].len() != m.words {
                        continue;
                    }
                    let staged: Vec<Value> = queues[in_sid].drain(..).collect();
                    for s in &g.streams {
                        if matches!(&s.src, StreamSrc::Memory { node } if *node == m.id) {
                            queues[s.id].extend(staged.iter().cloned());
                        }
                    }
                    fired[m.id.0] = true;
                    changed = true;
                }
                Node::Kernel(k) => {
                    let (in_sids, out_sids) = port_wiring(g, k.id);
                    let ready = in_sids
                        .iter()
                        .all(|&sid| queues[sid].len() == g.streams[sid].words);
                    if !ready {
                        continue;
                    }
                    let (tk, params) = lowered_kernel(design, k, env, vw)?;
                    let ins: Vec<VecDeque<Value>> =
                        in_sids.iter().map(|&sid| std::mem::take(&mut queues[sid])).collect();
                    let outs = run_to_completion(&tk, params, ins, &cost)
                        .map_err(|msg| SimError::Protocol(format!("kernel `{}` {msg}", k.name)))?;
                    for (port, words) in outs.iter().enumerate() {
                        for &sid in &out_sids[port] {
                            queues[sid].extend(words.iter().cloned());
                        }
                    }
                    fired[k.id.0] = true;
                    changed = true;
                }
            }
        }
        if !changed {
            break;
        }
    }
    if let Some(stuck) = g.nodes.iter().find(|n| !fired[n.id().0]) {
        return Err(SimError::Protocol(format!(
            "node `{}` never received its full input",
            stuck.name()
        )));
    }

    let mut outs = BTreeMap::new();
    for t in design.dma.iter().filter(|t| !t.to_device) {
        let want = g.streams[t.stream].words;
        let got: Vec<Value> = queues[t.stream].drain(..).collect();
        if got.len() != want {
            return Err(SimError::Protocol(format!(
                "stream s{} delivered {} of {} host words",
                t.stream,
                got.len(),
                want
            )));
        }
        outs.insert(t.stream, got);
    }
    apply_outputs(design, env, &outs)
}

/// Drive one core to completion over pre-filled input queues. Fails on
/// starvation instead of blocking; writes are unbounded.
fn run_to_completion(
    tk: &TileKernel,
    params: Vec<Value>,
    ins: Vec<VecDeque<Value>>,
    cost: &CostModel,
) -> Result<Vec<Vec<Value>>, String> {
    struct Io {
        ins: Vec<VecDeque<Value>>,
        outs: Vec<Vec<Value>>,
    }
    impl PortIo for Io {
        fn read(&mut self, port: usize, n: usize) -> Option<Vec<Value>> {
            if self.ins[port].len() < n {
                return None;
            }
            Some(self.ins[port].drain(..n).collect())
        }
        fn write(&mut self, port: usize, words: &[Value]) -> bool {
            self.outs[port].extend_from_slice(words);
            true
        }
    }
    let mut io = Io { ins, outs: vec![Vec::new(); tk.outs.len()] };
    let mut core = CoreState::new(tk, params);
    loop {
        match core.step(tk, &mut io, cost) {
            Step::Progress { .. } => {}
            Step::Done => break,
            Step::BlockedRead { port } => {
                return Err(format!("starved on input port {port}"));
            }
            Step::BlockedWrite { port } => {
                return Err(format!("blocked writing port {port} with unbounded queues"));
            }
        }
    }
    Ok(io.outs)
}

// ---------------------------------------------------------------------
// cycle-level simulation
// ---------------------------------------------------------------------

const TRACE_CAP: usize = 4096;

struct Trace {
    on: bool,
    cycle: u64,
    lines: Vec<String>,
}

impl Trace {
    fn ev(&mut self, f: impl FnOnce() -> String) {
        if self.on && self.lines.len() < TRACE_CAP {
            let line = format!("cycle {}: {}", self.cycle, f());
            self.lines.push(line);
            if self.lines.len() == TRACE_CAP {
                self.lines.push("... trace truncated".into());
            }
        }
    }
}

struct Fifo {
    cap: usize,
    q: VecDeque<Value>,
    pushed: usize,
    popped: usize,
    /// Total words the stream is declared to carry.
    words: usize,
}

impl Fifo {
    fn space(&self) -> usize {
        self.cap - self.q.len()
    }
}

struct Core {
    name: String,
    col: usize,
    row: usize,
    tk: TileKernel,
    state: CoreState,
    in_fifos: Vec<usize>,
    out_fifos: Vec<Vec<usize>>,
    busy_until: u64,
    busy_cycles: u64,
    done: bool,
    /// Last blocking reason, for deadlock diagnostics.
    wait: Option<(&'static str, usize)>,
}

struct CoreIo<'a> {
    fifos: &'a mut [Fifo],
    ins: &'a [usize],
    outs: &'a [Vec<usize>],
}

impl PortIo for CoreIo<'_> {
    fn read(&mut self, port: usize, n: usize) -> Option<Vec<Value>> {
        let f = &mut self.fifos[self.ins[port]];
        if f.q.len() < n {
            return None;
        }
        f.popped += n;
        Some(f.q.drain(..n).collect())
    }

    fn write(&mut self, port: usize, words: &[Value]) -> bool {
        let ids = &self.outs[port];
        if ids.iter().any(|&id| self.fifos[id].space() < words.len()) {
            return false;
        }
        for &id in ids {
            let f = &mut self.fifos[id];
            f.q.extend(words.iter().cloned());
            f.pushed += words.len();
        }
        true
    }
}

/// One host DMA transfer in flight (a shim services one word per cycle
/// per direction, round-robin over its transfers).
struct DmaJob {
    stream: usize,
    to_device: bool,
    words: Vec<Value>,
    cursor: usize,
    total: usize,
}

struct DmaEngine {
    rr: usize,
    jobs: Vec<DmaJob>,
}

impl DmaEngine {
    /// Move at most one word this cycle; work-conserving round-robin.
    fn service(&mut self, fifos: &mut [Fifo], trace: &mut Trace) -> bool {
        let n = self.jobs.len();
        for k in 0..n {
            let i = (self.rr + k) % n;
            let job = &mut self.jobs[i];
            if job.cursor >= job.total {
                continue;
            }
            let f = &mut fifos[job.stream];
            if job.to_device {
                if f.space() == 0 {
                    continue;
                }
                f.q.push_back(job.words[job.cursor]);
                f.pushed += 1;
            } else {
                let Some(v) = f.q.pop_front() else { continue };
                f.popped += 1;
                job.words.push(v);
            }
            job.cursor += 1;
            if job.cursor == job.total {
                let (s, dir, n) = (job.stream, if job.to_device { "in" } else { "out" }, job.total);
                trace.ev(|| format!("host {dir} transfer s{s} complete ({n} words)"));
            }
            self.rr = (i + 1) % n;
            return true;
        }
        false
    }

    fn done(&self) -> bool {
        self.jobs.iter().all(|j| j.cursor == j.total)
    }
}

/// One staged buffer living in a column's memory tile.
struct MemUnit {
    in_fifo: usize,
    /// (fifo, words already forwarded) per consumer stream.
    outs: Vec<(usize, usize)>,
    buf: Vec<Value>,
    words: usize,
}

impl MemUnit {
    fn done(&self) -> bool {
        self.buf.len() == self.words && self.outs.iter().all(|&(_, sent)| sent == self.words)
    }
}

/// All staged buffers of one column, sharing the memory tile's aggregate
/// bandwidth budget (a fractional word credit per cycle, with a one-cycle
/// burst allowance).
struct MemCol {
    credit: f64,
    units: Vec<MemUnit>,
}

impl MemCol {
    fn service(&mut self, rate: f64, fifos: &mut [Fifo]) -> bool {
        self.credit = (self.credit + rate).min(2.0 * rate);
        let mut any = false;
        loop {
            let mut moved = false;
            for u in &mut self.units {
                if self.credit < 1.0 {
                    break;
                }
                if u.buf.len() < u.words {
                    if let Some(v) = fifos[u.in_fifo].q.pop_front() {
                        fifos[u.in_fifo].popped += 1;
                        u.buf.push(v);
                        self.credit -= 1.0;
                        moved = true;
                    }
                }
                for (fid, sent) in &mut u.outs {
                    while self.credit >= 1.0 && *sent < u.buf.len() && fifos[*fid].space() > 0 {
                        fifos[*fid].q.push_back(u.buf[*sent]);
                        fifos[*fid].pushed += 1;
                        *sent += 1;
                        self.credit -= 1.0;
                        moved = true;
                    }
                }
            }
            any |= moved;
            if !moved || self.credit < 1.0 {
                break;
            }
        }
        if self.units.iter().all(|u| u.done()) {
            self.credit = 0.0;
        }
        any
    }
}

/// Cycle-step the placed design against `env` and report timing, energy
/// and the computed outputs.
pub fn simulate(
    design: &PlacedDesign,
    env: &Environment,
    cfg: &SimConfig,
) -> Result<(Environment, SimReport), SimError> {
    let g = &design.graph;
    let topo = &design.topology;
    check_params(g, env)?;
    for (i, s) in g.streams.iter().enumerate() {
        assert_eq!(s.id, i, "stream ids are dense and ordered");
    }
    let mut inputs = gather_inputs(design, env)?;

    let mut fifos: Vec<Fifo> = g
        .streams
        .iter()
        .map(|s| Fifo {
            cap: topo.fifo_words,
            q: VecDeque::new(),
            pushed: 0,
            popped: 0,
            words: s.words,
        })
        .collect();

    let mut cores: Vec<Core> = Vec::new();
    for node in &g.nodes {
        let Node::Kernel(k) = node else { continue };
        let (tk, params) = lowered_kernel(design, k, env, cfg.vw)?;
        let coord = *design.places.get(&k.name).ok_or_else(|| {
            SimError::Protocol(format!("kernel `{}` has no placement", k.name))
        })?;
        let (in_fifos, out_fifos) = port_wiring(g, k.id);
        let state = CoreState::new(&tk, params);
        cores.push(Core {
            name: k.name.clone(),
            col: coord.col,
            row: coord.row,
            tk,
            state,
            in_fifos,
            out_fifos,
            busy_until: 0,
            busy_cycles: 0,
            done: false,
            wait: None,
        });
    }
    cores.sort_by_key(|c| (c.col, c.row));

    let mut memcols: BTreeMap<usize, MemCol> = BTreeMap::new();
    for node in &g.nodes {
        let Node::Memory(m) = node else { continue };
        let in_fifo = g
            .streams
            .iter()
            .find(|s| matches!(&s.dst, StreamDst::Memory { node } if *node == m.id))
            .map(|s| s.id)
            .ok_or_else(|| {
                SimError::Protocol(format!("memory `{}` has no input stream", m.name))
            })?;
        let outs: Vec<(usize, usize)> = g
            .streams
            .iter()
            .filter(|s| matches!(&s.src, StreamSrc::Memory { node } if *node == m.id))
            .map(|s| (s.id, 0usize))
            .collect();
        memcols
            .entry(m.col)
            .or_insert_with(|| MemCol { credit: 0.0, units: Vec::new() })
            .units
            .push(MemUnit {
                in_fifo,
                outs,
                buf: Vec::with_capacity(m.words),
                words: m.words,
            });
    }
    let mem_rate = topo.memtile_bw as f64 / 4.0;

    let mut dma_in: BTreeMap<usize, DmaEngine> = BTreeMap::new();
    let mut dma_out: BTreeMap<usize, DmaEngine> = BTreeMap::new();
    for t in &design.dma {
        let job = if t.to_device {
            let words = inputs.remove(&t.stream).ok_or_else(|| {
                SimError::Protocol(format!("no host words gathered for stream s{}", t.stream))
            })?;
            let total = words.len();
            DmaJob { stream: t.stream, to_device: true, words, cursor: 0, total }
        } else {
            let total = g.streams[t.stream].words;
            DmaJob {
                stream: t.stream,
                to_device: false,
                words: Vec::with_capacity(total),
                cursor: 0,
                total,
            }
        };
        let bank = if t.to_device { &mut dma_in } else { &mut dma_out };
        bank.entry(t.col).or_insert_with(|| DmaEngine { rr: 0, jobs: Vec::new() }).jobs.push(job);
    }

    let mut trace = Trace { on: cfg.trace, cycle: 0, lines: Vec::new() };
    let mut cycle: u64 = 0;
    loop {
        let complete = cores.iter().all(|c| c.done)
            && dma_in.values().all(|e| e.done())
            && dma_out.values().all(|e| e.done())
            && memcols.values().all(|mc| mc.units.iter().all(|u| u.done()));
        if complete {
            break;
        }

        trace.cycle = cycle;
        let mut moved = false;
        for eng in dma_in.values_mut() {
            moved |= eng.service(&mut fifos, &mut trace);
        }
        for mc in memcols.values_mut() {
            moved |= mc.service(mem_rate, &mut fifos);
        }
        for c in cores.iter_mut() {
            if c.done || c.busy_until > cycle {
                continue;
            }
            let mut io = CoreIo { fifos: &mut fifos, ins: &c.in_fifos, outs: &c.out_fifos };
            loop {
                match c.state.step(&c.tk, &mut io, &cfg.cost) {
                    Step::Progress { cycles: 0 } => {
                        c.wait = None;
                        moved = true;
                    }
                    Step::Progress { cycles: n } => {
                        c.wait = None;
                        c.busy_until = cycle + n;
                        c.busy_cycles += n;
                        moved = true;
                        break;
                    }
                    Step::BlockedRead { port } => {
                        c.wait = Some(("reading", port));
                        break;
                    }
                    Step::BlockedWrite { port } => {
                        c.wait = Some(("writing", port));
                        break;
                    }
                    Step::Done => {
                        c.done = true;
                        moved = true;
                        let (name, instrs) = (&c.name, c.state.stats.instructions);
                        trace.ev(|| format!("kernel {name} finished ({instrs} instructions)"));
                        break;
                    }
                }
            }
        }
        for eng in dma_out.values_mut() {
            moved |= eng.service(&mut fifos, &mut trace);
        }

        if moved {
            cycle += 1;
            continue;
        }
        // Nothing could move at this cycle: fast-forward to the next core
        // retirement, or report a deadlock if no agent has pending work.
        let next = cores
            .iter()
            .filter(|c| !c.done && c.busy_until > cycle)
            .map(|c| c.busy_until)
            .min();
        match next {
            Some(t) => cycle = t,
            None => {
                return Err(SimError::Deadlock {
                    cycle,
                    detail: diagnose(&cores, &fifos, &dma_in, &dma_out),
                });
            }
        }
    }

    // Protocol audit: every stream carried exactly its declared words.
    for (i, f) in fifos.iter().enumerate() {
        if f.pushed != f.words || f.popped != f.words {
            return Err(SimError::Protocol(format!(
                "stream s{i} moved {}/{} words in, {}/{} out",
                f.pushed, f.words, f.popped, f.words
            )));
        }
    }

    let mut outs: BTreeMap<usize, Vec<Value>> = BTreeMap::new();
    let mut dma_words_out: u64 = 0;
    for eng in dma_out.values() {
        for job in &eng.jobs {
            dma_words_out += job.total as u64;
            outs.insert(job.stream, job.words.clone());
        }
    }
    let dma_words_in: u64 =
        dma_in.values().flat_map(|e| e.jobs.iter()).map(|j| j.total as u64).sum();
    let result = apply_outputs(design, env, &outs)?;

    let stream_word_hops: u64 = design
        .routes
        .iter()
        .map(|r| r.hops as u64 * g.streams[r.stream].words as u64)
        .sum();
    let tiles: Vec<TileReport> = cores
        .iter()
        .map(|c| TileReport {
            name: c.name.clone(),
            col: c.col,
            row: c.row,
            busy_cycles: c.busy_cycles,
            stats: c.state.stats,
        })
        .collect();
    let em = &cfg.energy;
    let energy = EnergyBreakdown {
        scalar_pj: tiles.iter().map(|t| t.stats.scalar_ops).sum::<u64>() as f64 * em.pj_scalar_op,
        lane_pj: tiles.iter().map(|t| t.stats.lane_ops).sum::<u64>() as f64 * em.pj_lane_op,
        local_pj: tiles.iter().map(|t| t.stats.local_words).sum::<u64>() as f64
            * em.pj_local_word,
        stream_pj: stream_word_hops as f64 * em.pj_word_hop,
        dma_pj: (dma_words_in + dma_words_out) as f64 * 4.0 * em.pj_dma_byte,
    };
    let energy_pj =
        energy.scalar_pj + energy.lane_pj + energy.local_pj + energy.stream_pj + energy.dma_pj;
    let points = g.domain.iter().product::<usize>();
    let throughput_mpts = if cycle == 0 {
        0.0
    } else {
        points as f64 * cfg.clock_hz / (cycle as f64 * 1.0e6)
    };
    let report = SimReport {
        cycles: cycle,
        points,
        throughput_mpts,
        energy_pj,
        energy,
        dma_words_in,
        dma_words_out,
        stream_word_hops,
        tiles,
        trace: trace.lines,
    };
    Ok((result, report))
}

fn diagnose(
    cores: &[Core],
    fifos: &[Fifo],
    dma_in: &BTreeMap<usize, DmaEngine>,
    dma_out: &BTreeMap<usize, DmaEngine>,
) -> String {
    let mut parts: Vec<String> = Vec::new();
    for c in cores.iter().filter(|c| !c.done) {
        match c.wait {
            Some((dir, port)) => {
                let fid = match dir {
                    "reading" => c.in_fifos[port],
                    _ => c.out_fifos[port][0],
                };
                let f = &fifos[fid];
                parts.push(format!(
                    "kernel `{}` at ({},{}) blocked {dir} port {port} (stream s{fid}: {} queued, {}/{} delivered)",
                    c.name, c.col, c.row, f.q.len(), f.pushed, f.words
                ));
            }
            None => parts.push(format!("kernel `{}` at ({},{}) idle", c.name, c.col, c.row)),
        }
    }
    for (col, eng) in dma_in.iter().chain(dma_out.iter()) {
        for j in eng.jobs.iter().filter(|j| j.cursor < j.total) {
            let dir = if j.to_device { "in" } else { "out" };
            parts.push(format!(
                "host {dir} transfer s{} on column {col} stalled at {}/{}",
                j.stream, j.cursor, j.total
            ));
        }
    }
    if parts.is_empty() {
        parts.push("no agent reported a wait".into());
    }
    parts.join("; ")
}
