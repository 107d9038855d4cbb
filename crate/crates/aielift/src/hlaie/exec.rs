//! Tile-program execution: a resumable single-instruction stepper.
//!
//! The stepper owns the architectural state (registers, lanes, local
//! memory, loop counters) and leaves stream transport to a [`PortIo`]
//! implementation, so the same semantics serve both run-to-completion
//! unit tests (unbounded queues) and the cycle simulator (bounded FIFOs
//! with backpressure). An instruction either completes, reporting its
//! cycle cost, or blocks on a port without consuming anything.

use super::isa::{Addr, Instr, Opnd, TileKernel};
use crate::loopfront::ReduceOp;
use crate::value::Value;

/// Per-instruction-class cycle costs. Ports and the 512-bit vector unit
/// move one word per cycle; 32-bit lane arithmetic is emulated on wider
/// hardware lanes and pays `vector_op` cycles per instruction.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct CostModel {
    pub scalar_op: u64,
    /// Whole-vector ALU instruction (all lanes).
    pub vector_op: u64,
    /// One word through a stream port.
    pub port_word: u64,
    /// One word to or from tile-local memory.
    pub local_word: u64,
}

impl Default for CostModel {
    fn default() -> Self {
        CostModel { scalar_op: 1, vector_op: 4, port_word: 1, local_word: 1 }
    }
}

/// Stream transport the stepper talks to. `None`/`false` mean "not now":
/// the instruction re-issues later without side effects.
pub trait PortIo {
    /// Pop `n` words from input `port` if all are available.
    fn read(&mut self, port: usize, n: usize) -> Option<Vec<Value>>;
    /// Push `words` to output `port` if the FIFO has room for all.
    fn write(&mut self, port: usize, words: &[Value]) -> bool;
}

/// Why the stepper stopped making progress this call.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Step {
    /// Executed one instruction costing this many cycles.
    Progress { cycles: u64 },
    /// Waiting on words from an input port.
    BlockedRead { port: usize },
    /// Waiting on space in an output FIFO.
    BlockedWrite { port: usize },
    /// The program ran to completion.
    Done,
}

#[derive(Debug, Clone)]
struct Frame {
    /// Index of the `Loop` instruction in the parent block (unused for
    /// the root frame).
    loop_ix: usize,
    pc: usize,
    iter: usize,
    count: usize,
}

/// Architectural state of one tile core mid-execution.
#[derive(Debug, Clone)]
pub struct CoreState {
    regs: Vec<Value>,
    vregs: Vec<Vec<Value>>,
    locals: Vec<Value>,
    params: Vec<Value>,
    frames: Vec<Frame>,
    done: bool,
    /// Running operation counts for the energy model.
    pub stats: ExecStats,
}

/// What the core actually did, for energy accounting.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, serde::Serialize)]
pub struct ExecStats {
    pub scalar_ops: u64,
    /// Lane operations (a vector instruction counts one per lane).
    pub lane_ops: u64,
    pub port_words: u64,
    pub local_words: u64,
    pub instructions: u64,
}

impl CoreState {
    /// `params` must hold one host-evaluated word per kernel parameter.
    pub fn new(k: &TileKernel, params: Vec<Value>) -> Self {
        assert_eq!(params.len(), k.params.len(), "one bound word per parameter");
        CoreState {
            regs: vec![Value::F32(0.0); k.nregs],
            vregs: vec![vec![Value::F32(0.0); k.vw]; k.nvregs],
            locals: vec![Value::F32(0.0); k.local_words],
            params,
            frames: vec![Frame { loop_ix: usize::MAX, pc: 0, iter: 0, count: 1 }],
            done: false,
            stats: ExecStats::default(),
        }
    }

    pub fn done(&self) -> bool {
        self.done
    }

    fn opnd(&self, o: &Opnd) -> Value {
        match o {
            Opnd::Reg(r) => self.regs[r.0 as usize],
            Opnd::Imm(v) => *v,
        }
    }

    /// Loop counters of the enclosing loops, outermost first.
    fn iters(&self) -> Vec<usize> {
        self.frames[1..].iter().map(|f| f.iter).collect()
    }

    fn addr(&self, a: &Addr) -> usize {
        a.resolve(&self.iters())
    }

    /// Execute at most one instruction.
    pub fn step(&mut self, k: &TileKernel, io: &mut dyn PortIo, cost: &CostModel) -> Step {
        if self.done {
            return Step::Done;
        }
        // resolve the current block from the frame stack
        let mut body: &[Instr] = &k.instrs;
        for f in &self.frames[1..] {
            match &body[f.loop_ix] {
                Instr::Loop { body: b, .. } => body = b,
                _ => unreachable!("frame points at a loop"),
            }
        }
        let frame = self.frames.last().unwrap();
        if frame.pc >= body.len() {
            // end of block: next iteration or pop
            let f = self.frames.last_mut().unwrap();
            f.iter += 1;
            if f.iter < f.count {
                f.pc = 0;
            } else if self.frames.len() == 1 {
                self.done = true;
                return Step::Done;
            } else {
                let loop_ix = self.frames.pop().unwrap().loop_ix;
                self.frames.last_mut().unwrap().pc = loop_ix + 1;
            }
            return Step::Progress { cycles: 0 };
        }
        let instr = &body[frame.pc];
        let vw = k.vw;
        let cycles = match instr {
            Instr::Const { dst, value } => {
                self.regs[dst.0 as usize] = *value;
                self.stats.scalar_ops += 1;
                cost.scalar_op
            }
            Instr::Param { dst, index } => {
                self.regs[dst.0 as usize] = self.params[*index];
                self.stats.scalar_ops += 1;
                cost.scalar_op
            }
            Instr::Alu1 { op, dst, a } => {
                self.regs[dst.0 as usize] = op.apply(self.opnd(a));
                self.stats.scalar_ops += 1;
                cost.scalar_op
            }
            Instr::Alu2 { op, dst, a, b } => {
                self.regs[dst.0 as usize] = op.apply(self.opnd(a), self.opnd(b));
                self.stats.scalar_ops += 1;
                cost.scalar_op
            }
            Instr::Read { dst, port } => match io.read(*port, 1) {
                Some(w) => {
                    self.regs[dst.0 as usize] = w[0];
                    self.stats.port_words += 1;
                    cost.port_word
                }
                None => return Step::BlockedRead { port: *port },
            },
            Instr::Write { port, a } => {
                let w = [self.opnd(a)];
                if !io.write(*port, &w) {
                    return Step::BlockedWrite { port: *port };
                }
                self.stats.port_words += 1;
                cost.port_word
            }
            Instr::Load { dst, addr } => {
                let ix = self.addr(addr);
                self.regs[dst.0 as usize] = self.locals[ix];
                self.stats.local_words += 1;
                cost.local_word
            }
            Instr::Store { addr, a } => {
                let ix = self.addr(addr);
                self.locals[ix] = self.opnd(a);
                self.stats.local_words += 1;
                cost.local_word
            }
            Instr::VSplat { dst, a } => {
                let v = self.opnd(a);
                self.vregs[dst.0 as usize] = vec![v; vw];
                self.stats.scalar_ops += 1;
                cost.scalar_op
            }
            Instr::VAlu1 { op, dst, a } => {
                let r: Vec<Value> =
                    self.vregs[a.0 as usize].iter().map(|x| op.apply(*x)).collect();
                self.vregs[dst.0 as usize] = r;
                self.stats.lane_ops += vw as u64;
                cost.vector_op
            }
            Instr::VAlu2 { op, dst, a, b } => {
                let r: Vec<Value> = self.vregs[a.0 as usize]
                    .iter()
                    .zip(&self.vregs[b.0 as usize])
                    .map(|(x, y)| op.apply(*x, *y))
                    .collect();
                self.vregs[dst.0 as usize] = r;
                self.stats.lane_ops += vw as u64;
                cost.vector_op
            }
            Instr::VRead { dst, port } => match io.read(*port, vw) {
                Some(w) => {
                    self.vregs[dst.0 as usize] = w;
                    self.stats.port_words += vw as u64;
                    cost.port_word * vw as u64
                }
                None => return Step::BlockedRead { port: *port },
            },
            Instr::VWrite { port, a } => {
                let w = self.vregs[a.0 as usize].clone();
                if !io.write(*port, &w) {
                    return Step::BlockedWrite { port: *port };
                }
                self.stats.port_words += vw as u64;
                cost.port_word * vw as u64
            }
            Instr::VLoad { dst, addr } => {
                let ix = self.addr(addr);
                self.vregs[dst.0 as usize] = self.locals[ix..ix + vw].to_vec();
                self.stats.local_words += vw as u64;
                cost.local_word * vw as u64
            }
            Instr::VStore { addr, a } => {
                let ix = self.addr(addr);
                let v = self.vregs[a.0 as usize].clone();
                self.locals[ix..ix + vw].copy_from_slice(&v);
                self.stats.local_words += vw as u64;
                cost.local_word * vw as u64
            }
            Instr::VFold { op, dst, a } => {
                let lanes = &self.vregs[a.0 as usize];
                let mut acc = lanes[0];
                for l in &lanes[1..] {
                    acc = fold(*op, acc, *l);
                }
                self.regs[dst.0 as usize] = acc;
                self.stats.scalar_ops += vw as u64;
                cost.scalar_op * vw as u64
            }
            Instr::Loop { count, .. } => {
                if *count == 0 {
                    // skip an empty loop entirely
                    self.frames.last_mut().unwrap().pc += 1;
                    self.stats.instructions += 1;
                    return Step::Progress { cycles: 0 };
                }
                let loop_ix = frame.pc;
                self.frames.push(Frame { loop_ix, pc: 0, iter: 0, count: *count });
                self.stats.instructions += 1;
                return Step::Progress { cycles: 0 };
            }
        };
        self.frames.last_mut().unwrap().pc += 1;
        self.stats.instructions += 1;
        Step::Progress { cycles }
    }
}

pub fn fold(op: ReduceOp, a: Value, b: Value) -> Value {
    match op {
        ReduceOp::Add => a.add(b),
        ReduceOp::Max => a.max(b),
    }
}

/// Unbounded-queue transport for direct execution.
pub struct VecIo {
    pub ins: Vec<std::collections::VecDeque<Value>>,
    pub outs: Vec<Vec<Value>>,
}

impl PortIo for VecIo {
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

/// Run a kernel to completion over in-memory streams. Panics if the
/// program blocks on an input that never fills (word-count mismatch).
pub fn run_kernel(
    k: &TileKernel,
    inputs: Vec<Vec<Value>>,
    params: Vec<Value>,
) -> (Vec<Vec<Value>>, u64, ExecStats) {
    let mut io = VecIo {
        ins: inputs.into_iter().map(|v| v.into_iter().collect()).collect(),
        outs: vec![Vec::new(); k.outs.len()],
    };
    let mut core = CoreState::new(k, params);
    let cost = CostModel::default();
    let mut cycles = 0u64;
    loop {
        match core.step(k, &mut io, &cost) {
            Step::Progress { cycles: c } => cycles += c,
            Step::Done => break,
            Step::BlockedRead { port } => {
                panic!("kernel {} starved on input port {port}", k.name)
            }
            Step::BlockedWrite { port } => {
                panic!("kernel {} backed up on output port {port}", k.name)
            }
        }
    }
    (io.outs, cycles, core.stats)
}
