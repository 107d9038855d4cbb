//! Tile instruction set.
//!
//! One compute tile runs one straight-line program with counted,
//! zero-overhead loops. The register files are virtual (the lowering
//! allocates as many as it likes); state is scalar registers, vector
//! registers of `vw` lanes, and a word-addressed local memory. Stream
//! ports block: reads stall until the words arrive, writes stall until
//! the FIFO drains.

use crate::loopfront::ReduceOp;
use crate::tensorlift::{EwOp, ScalarExpr, UnOp};
use crate::value::{ElemType, Value};
use serde::Serialize;
use std::fmt::Write as _;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(transparent)]
pub struct Reg(pub u16);

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(transparent)]
pub struct VReg(pub u16);

/// Scalar operand: register or immediate.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Opnd {
    Reg(Reg),
    Imm(Value),
}

/// Word address into tile-local memory: `base + Σ stride·i(depth)`,
/// where `i(depth)` is the counter of the depth-th enclosing loop
/// (0 = outermost).
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Addr {
    pub base: usize,
    pub terms: Vec<(usize, usize)>,
}

impl Addr {
    pub fn at(base: usize) -> Self {
        Addr { base, terms: vec![] }
    }

    pub fn with(base: usize, terms: &[(usize, usize)]) -> Self {
        Addr { base, terms: terms.to_vec() }
    }

    pub fn resolve(&self, iters: &[usize]) -> usize {
        self.base + self.terms.iter().map(|(d, s)| iters[*d] * s).sum::<usize>()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(tag = "i", rename_all = "snake_case")]
pub enum Instr {
    /// Load an immediate into a scalar register.
    Const { dst: Reg, value: Value },
    /// Bind host parameter word `index` to a scalar register.
    Param { dst: Reg, index: usize },
    Alu1 { op: UnOp, dst: Reg, a: Opnd },
    Alu2 { op: EwOp, dst: Reg, a: Opnd, b: Opnd },
    /// Pop one word from input stream `port`.
    Read { dst: Reg, port: usize },
    /// Push one word to output stream `port`.
    Write { port: usize, a: Opnd },
    Load { dst: Reg, addr: Addr },
    Store { addr: Addr, a: Opnd },
    /// Broadcast a scalar into every lane.
    VSplat { dst: VReg, a: Opnd },
    VAlu1 { op: UnOp, dst: VReg, a: VReg },
    VAlu2 { op: EwOp, dst: VReg, a: VReg, b: VReg },
    /// Pop `vw` words from input stream `port`.
    VRead { dst: VReg, port: usize },
    /// Push `vw` words to output stream `port`.
    VWrite { port: usize, a: VReg },
    VLoad { dst: VReg, addr: Addr },
    VStore { addr: Addr, a: VReg },
    /// Fold the lanes of a vector into a scalar, lane 0 first.
    VFold { op: ReduceOp, dst: Reg, a: VReg },
    /// Counted loop, zero overhead.
    Loop { count: usize, body: Vec<Instr> },
}

/// A lowered, launchable tile program.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TileKernel {
    pub name: String,
    /// Vector width the program was lowered for (1 = scalar only).
    pub vw: usize,
    pub nregs: usize,
    pub nvregs: usize,
    /// Words of tile-local memory the program addresses.
    pub local_words: usize,
    /// Input port word counts/types (stream contract).
    pub ins: Vec<(ElemType, usize)>,
    pub outs: Vec<(ElemType, usize)>,
    /// Host-evaluated scalar parameters, bound by position.
    pub params: Vec<ScalarExpr>,
    pub instrs: Vec<Instr>,
}

impl TileKernel {
    /// Total instructions, loop bodies counted once (static size).
    pub fn static_len(&self) -> usize {
        fn count(instrs: &[Instr]) -> usize {
            instrs
                .iter()
                .map(|i| match i {
                    Instr::Loop { body, .. } => 1 + count(body),
                    _ => 1,
                })
                .sum()
        }
        count(&self.instrs)
    }

    /// Human-readable assembly listing.
    pub fn dump(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(
            s,
            ".kernel {} vw={} locals={} regs={}/{}",
            self.name, self.vw, self.local_words, self.nregs, self.nvregs
        );
        for (i, (elem, words)) in self.ins.iter().enumerate() {
            let _ = writeln!(s, "  .in {i} : {} x{}", elem, words);
        }
        for (i, (elem, words)) in self.outs.iter().enumerate() {
            let _ = writeln!(s, "  .out {i} : {} x{}", elem, words);
        }
        for (i, p) in self.params.iter().enumerate() {
            let _ = writeln!(s, "  .param {i} = {}", p.canon());
        }
        dump_block(&mut s, &self.instrs, 1);
        s
    }
}

fn opnd(o: &Opnd) -> String {
    match o {
        Opnd::Reg(r) => format!("r{}", r.0),
        Opnd::Imm(v) => format!("#{v}"),
    }
}

fn addr(a: &Addr) -> String {
    let mut s = format!("[{}", a.base);
    for (d, st) in &a.terms {
        let _ = write!(s, "+i{d}*{st}");
    }
    s.push(']');
    s
}

fn dump_block(s: &mut String, instrs: &[Instr], depth: usize) {
    let pad = "  ".repeat(depth);
    for i in instrs {
        match i {
            Instr::Const { dst, value } => {
                let _ = writeln!(s, "{pad}const r{} <- #{value}", dst.0);
            }
            Instr::Param { dst, index } => {
                let _ = writeln!(s, "{pad}param r{} <- p{index}", dst.0);
            }
            Instr::Alu1 { op, dst, a } => {
                let _ = writeln!(s, "{pad}{} r{} <- {}", op.mnemonic(), dst.0, opnd(a));
            }
            Instr::Alu2 { op, dst, a, b } => {
                let _ = writeln!(s, "{pad}{} r{} <- {}, {}", op.mnemonic(), dst.0, opnd(a), opnd(b));
            }
            Instr::Read { dst, port } => {
                let _ = writeln!(s, "{pad}read r{} <- in{port}", dst.0);
            }
            Instr::Write { port, a } => {
                let _ = writeln!(s, "{pad}write out{port} <- {}", opnd(a));
            }
            Instr::Load { dst, addr: a } => {
                let _ = writeln!(s, "{pad}load r{} <- {}", dst.0, addr(a));
            }
            Instr::Store { addr: a, a: v } => {
                let _ = writeln!(s, "{pad}store {} <- {}", addr(a), opnd(v));
            }
            Instr::VSplat { dst, a } => {
                let _ = writeln!(s, "{pad}vsplat v{} <- {}", dst.0, opnd(a));
            }
            Instr::VAlu1 { op, dst, a } => {
                let _ = writeln!(s, "{pad}v{} v{} <- v{}", op.mnemonic(), dst.0, a.0);
            }
            Instr::VAlu2 { op, dst, a, b } => {
                let _ = writeln!(s, "{pad}v{} v{} <- v{}, v{}", op.mnemonic(), dst.0, a.0, b.0);
            }
            Instr::VRead { dst, port } => {
                let _ = writeln!(s, "{pad}vread v{} <- in{port}", dst.0);
            }
            Instr::VWrite { port, a } => {
                let _ = writeln!(s, "{pad}vwrite out{port} <- v{}", a.0);
            }
            Instr::VLoad { dst, addr: a } => {
                let _ = writeln!(s, "{pad}vload v{} <- {}", dst.0, addr(a));
            }
            Instr::VStore { addr: a, a: v } => {
                let _ = writeln!(s, "{pad}vstore {} <- v{}", addr(a), v.0);
            }
            Instr::VFold { op, dst, a } => {
                let _ = writeln!(s, "{pad}vfold.{} r{} <- v{}", op.name(), dst.0, a.0);
            }
            Instr::Loop { count, body } => {
                let _ = writeln!(s, "{pad}loop {count} {{");
                dump_block(s, body, depth + 1);
                let _ = writeln!(s, "{pad}}}");
            }
        }
    }
}
