//! Lower kernel specs to tile programs.
//!
//! Streaming kernels become a vectorised main loop over `⌊points/vw⌋`
//! steps plus a scalar epilogue for the remainder; reductions accumulate
//! per lane, fold lane 0 first, then let the epilogue extend the scalar
//! accumulator, and write the partial once at the end. The matrix kernel
//! buffers its right operand in local memory row-major, streams left rows,
//! and vectorises across result columns so every output element
//! accumulates in the same order as the scalar oracle.

use super::isa::{Addr, Instr, Opnd, Reg, TileKernel, VReg};
use crate::decompose::{KNode, KernelBody, KernelSpec};
use crate::loopfront::ReduceOp;
use crate::tensorlift::EwOp;
use crate::value::{ElemType, Value};
use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum HlaieError {
    #[error("vector width must be at least 1, got {0}")]
    BadVectorWidth(usize),
    #[error("kernel `{name}` needs {need} bytes of tile-local memory, the tile has {have}")]
    LocalOverflow { name: String, need: usize, have: usize },
}

#[derive(Default)]
struct Alloc {
    r: u16,
    v: u16,
}

impl Alloc {
    fn reg(&mut self) -> Reg {
        self.r += 1;
        Reg(self.r - 1)
    }
    fn vreg(&mut self) -> VReg {
        self.v += 1;
        VReg(self.v - 1)
    }
}

fn combine_op(op: ReduceOp) -> EwOp {
    match op {
        ReduceOp::Add => EwOp::Add,
        ReduceOp::Max => EwOp::Max,
    }
}

fn identity(op: ReduceOp, elem: ElemType) -> Value {
    match op {
        ReduceOp::Add => elem.zero(),
        ReduceOp::Max => elem.min_value(),
    }
}

/// Lower one kernel for vector width `vw` against a tile-local memory
/// budget of `tile_bytes`.
pub fn materialize(
    name: &str,
    spec: &KernelSpec,
    vw: usize,
    tile_bytes: usize,
) -> Result<TileKernel, HlaieError> {
    if vw == 0 {
        return Err(HlaieError::BadVectorWidth(vw));
    }
    let mut al = Alloc::default();
    let mut instrs = Vec::new();
    let mut local_words = 0usize;

    match &spec.body {
        KernelBody::Streaming { nodes, outs, reduce } => {
            streaming(spec, nodes, outs, *reduce, vw, &mut al, &mut instrs);
        }
        KernelBody::MatMul { k, n, elem, .. } => {
            // B row-major, then one A row, then one C row
            local_words = k * n + k + n;
            let need = local_words * elem.bytes();
            if need > tile_bytes {
                return Err(HlaieError::LocalOverflow {
                    name: name.to_string(),
                    need,
                    have: tile_bytes,
                });
            }
            let m = spec.ins[0].words / k;
            matmul(m, *k, *n, *elem, vw, &mut al, &mut instrs);
        }
    }

    Ok(TileKernel {
        name: name.to_string(),
        vw,
        nregs: al.r as usize,
        nvregs: al.v as usize,
        local_words,
        ins: spec.ins.iter().map(|p| (p.elem, p.words)).collect(),
        outs: spec.outs.iter().map(|p| (p.elem, p.words)).collect(),
        params: spec.params.clone(),
        instrs,
    })
}

fn streaming(
    spec: &KernelSpec,
    nodes: &[KNode],
    outs: &[usize],
    reduce: Option<(ReduceOp, usize)>,
    vw: usize,
    al: &mut Alloc,
    instrs: &mut Vec<Instr>,
) {
    let points = spec.points;
    let full = if vw > 1 { points / vw } else { 0 };
    let tail = points - full * vw;

    // prologue: bind parameters
    let param_regs: Vec<Reg> = (0..spec.params.len())
        .map(|i| {
            let r = al.reg();
            instrs.push(Instr::Param { dst: r, index: i });
            r
        })
        .collect();

    let red_elem = spec.outs.last().map(|p| p.elem).unwrap_or(ElemType::F32);
    let acc = reduce.map(|(op, _)| {
        let r = al.reg();
        instrs.push(Instr::Const { dst: r, value: identity(op, red_elem) });
        r
    });

    if full > 0 {
        let vparams: Vec<VReg> = param_regs
            .iter()
            .map(|r| {
                let v = al.vreg();
                instrs.push(Instr::VSplat { dst: v, a: Opnd::Reg(*r) });
                v
            })
            .collect();
        let vacc = reduce.map(|(op, _)| {
            let v = al.vreg();
            instrs.push(Instr::VSplat { dst: v, a: Opnd::Imm(identity(op, red_elem)) });
            v
        });
        let mut body = Vec::new();
        let mut slot: Vec<VReg> = Vec::with_capacity(nodes.len());
        for node in nodes {
            match node {
                KNode::In { port } => {
                    let v = al.vreg();
                    body.push(Instr::VRead { dst: v, port: *port });
                    slot.push(v);
                }
                KNode::Param { index } => slot.push(vparams[*index]),
                KNode::Unary { op, a } => {
                    let v = al.vreg();
                    body.push(Instr::VAlu1 { op: *op, dst: v, a: slot[*a] });
                    slot.push(v);
                }
                KNode::Binary { op, a, b } => {
                    let v = al.vreg();
                    body.push(Instr::VAlu2 { op: *op, dst: v, a: slot[*a], b: slot[*b] });
                    slot.push(v);
                }
            }
        }
        for (port, nix) in outs.iter().enumerate() {
            body.push(Instr::VWrite { port, a: slot[*nix] });
        }
        if let (Some((op, src)), Some(vacc)) = (reduce, vacc) {
            body.push(Instr::VAlu2 { op: combine_op(op), dst: vacc, a: vacc, b: slot[src] });
        }
        instrs.push(Instr::Loop { count: full, body });
        if let (Some(acc), Some(vacc)) = (acc, vacc) {
            // lanes are identity-seeded, so the fold is the whole partial
            // so far; the epilogue extends it in point order
            instrs.push(Instr::VFold { op: reduce.unwrap().0, dst: acc, a: vacc });
        }
    }

    if tail > 0 {
        let mut body = Vec::new();
        let mut slot: Vec<Reg> = Vec::with_capacity(nodes.len());
        for node in nodes {
            match node {
                KNode::In { port } => {
                    let r = al.reg();
                    body.push(Instr::Read { dst: r, port: *port });
                    slot.push(r);
                }
                KNode::Param { index } => slot.push(param_regs[*index]),
                KNode::Unary { op, a } => {
                    let r = al.reg();
                    body.push(Instr::Alu1 { op: *op, dst: r, a: Opnd::Reg(slot[*a]) });
                    slot.push(r);
                }
                KNode::Binary { op, a, b } => {
                    let r = al.reg();
                    body.push(Instr::Alu2 {
                        op: *op,
                        dst: r,
                        a: Opnd::Reg(slot[*a]),
                        b: Opnd::Reg(slot[*b]),
                    });
                    slot.push(r);
                }
            }
        }
        for (port, nix) in outs.iter().enumerate() {
            body.push(Instr::Write { port, a: Opnd::Reg(slot[*nix]) });
        }
        if let (Some((op, src)), Some(acc)) = (reduce, acc) {
            body.push(Instr::Alu2 {
                op: combine_op(op),
                dst: acc,
                a: Opnd::Reg(acc),
                b: Opnd::Reg(slot[src]),
            });
        }
        instrs.push(Instr::Loop { count: tail, body });
    }

    if let Some(acc) = acc {
        let port = spec.outs.len() - 1;
        instrs.push(Instr::Write { port, a: Opnd::Reg(acc) });
    }
}

/// `c(i,j) = Σ_k a(i,k)·b(k,j)`, vectorised across `j`. Local layout:
/// `b` at 0 (`k·n` words, row-major), the current `a` row after it, the
/// current `c` row last. The `k` loop splats `a(i,k)` and multiplies it
/// into the `c` row chunk by chunk, so each element accumulates in
/// ascending-`k` order exactly like the scalar oracle.
fn matmul(
    m: usize,
    k: usize,
    n: usize,
    elem: ElemType,
    vw: usize,
    al: &mut Alloc,
    instrs: &mut Vec<Instr>,
) {
    let b_base = 0usize;
    let a_base = k * n;
    let c_base = k * n + k;
    let zero = elem.zero();

    // stage the right operand from port 1
    copy_in(instrs, al, 1, b_base, k * n, vw, 0);

    let mut row = Vec::new();
    // read one a row from port 0
    copy_in(&mut row, al, 0, a_base, k, vw, 1);
    // clear the c row
    if vw > 1 && n / vw > 0 {
        let vz = al.vreg();
        instrs.push(Instr::VSplat { dst: vz, a: Opnd::Imm(zero) });
        row.push(Instr::Loop {
            count: n / vw,
            body: vec![Instr::VStore { addr: Addr::with(c_base, &[(1, vw)]), a: vz }],
        });
    }
    if n % vw > 0 || vw == 1 {
        let done = if vw > 1 { n - n % vw } else { 0 };
        let count = n - done;
        row.push(Instr::Loop {
            count,
            body: vec![Instr::Store { addr: Addr::with(c_base + done, &[(1, 1)]), a: Opnd::Imm(zero) }],
        });
    }

    // the k loop: splat a(i,k), run across the c row
    let ar = al.reg();
    let va = al.vreg();
    let mut kbody = vec![
        Instr::Load { dst: ar, addr: Addr::with(a_base, &[(1, 1)]) },
    ];
    if vw > 1 && n / vw > 0 {
        kbody.push(Instr::VSplat { dst: va, a: Opnd::Reg(ar) });
        let vb = al.vreg();
        let vc = al.vreg();
        let vt = al.vreg();
        kbody.push(Instr::Loop {
            count: n / vw,
            body: vec![
                Instr::VLoad { dst: vb, addr: Addr::with(b_base, &[(1, n), (2, vw)]) },
                Instr::VLoad { dst: vc, addr: Addr::with(c_base, &[(2, vw)]) },
                Instr::VAlu2 { op: EwOp::Mul, dst: vt, a: va, b: vb },
                Instr::VAlu2 { op: EwOp::Add, dst: vc, a: vc, b: vt },
                Instr::VStore { addr: Addr::with(c_base, &[(2, vw)]), a: vc },
            ],
        });
    }
    {
        let done = if vw > 1 { n - n % vw } else { 0 };
        let count = n - done;
        if count > 0 {
            let br = al.reg();
            let cr = al.reg();
            let tr = al.reg();
            kbody.push(Instr::Loop {
                count,
                body: vec![
                    Instr::Load { dst: br, addr: Addr::with(b_base + done, &[(1, n), (2, 1)]) },
                    Instr::Load { dst: cr, addr: Addr::with(c_base + done, &[(2, 1)]) },
                    Instr::Alu2 { op: EwOp::Mul, dst: tr, a: Opnd::Reg(ar), b: Opnd::Reg(br) },
                    Instr::Alu2 { op: EwOp::Add, dst: cr, a: Opnd::Reg(cr), b: Opnd::Reg(tr) },
                    Instr::Store { addr: Addr::with(c_base + done, &[(2, 1)]), a: Opnd::Reg(cr) },
                ],
            });
        }
    }
    row.push(Instr::Loop { count: k, body: kbody });

    // stream the c row out of port 0
    if vw > 1 && n / vw > 0 {
        let vc = al.vreg();
        row.push(Instr::Loop {
            count: n / vw,
            body: vec![
                Instr::VLoad { dst: vc, addr: Addr::with(c_base, &[(1, vw)]) },
                Instr::VWrite { port: 0, a: vc },
            ],
        });
    }
    if n % vw > 0 || vw == 1 {
        let done = if vw > 1 { n - n % vw } else { 0 };
        let count = n - done;
        let cr = al.reg();
        row.push(Instr::Loop {
            count,
            body: vec![
                Instr::Load { dst: cr, addr: Addr::with(c_base + done, &[(1, 1)]) },
                Instr::Write { port: 0, a: Opnd::Reg(cr) },
            ],
        });
    }

    instrs.push(Instr::Loop { count: m, body: row });
}

/// Stream `total` words from `port` into local memory at `base`.
/// `depth` is the loop nesting level the emitted loops sit at.
fn copy_in(
    instrs: &mut Vec<Instr>,
    al: &mut Alloc,
    port: usize,
    base: usize,
    total: usize,
    vw: usize,
    depth: usize,
) {
    let full = if vw > 1 { total / vw } else { 0 };
    if full > 0 {
        let v = al.vreg();
        instrs.push(Instr::Loop {
            count: full,
            body: vec![
                Instr::VRead { dst: v, port },
                Instr::VStore { addr: Addr::with(base, &[(depth, vw)]), a: v },
            ],
        });
    }
    let done = full * vw;
    if done < total {
        let r = al.reg();
        instrs.push(Instr::Loop {
            count: total - done,
            body: vec![
                Instr::Read { dst: r, port },
                Instr::Store { addr: Addr::with(base + done, &[(depth, 1)]), a: Opnd::Reg(r) },
            ],
        });
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::decompose::PortDecl;
    use crate::hlaie::exec::run_kernel;
    use crate::tensorlift::{ScalarExpr, UnOp};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    const TILE: usize = 64 * 1024;

    /// Independent reference for a streaming body: evaluate the node DAG
    /// point by point over the input streams.
    fn stream_reference(
        spec: &KernelSpec,
        inputs: &[Vec<Value>],
        params: &[Value],
    ) -> Vec<Vec<Value>> {
        let KernelBody::Streaming { nodes, outs, reduce } = &spec.body else {
            panic!("streaming spec expected");
        };
        let mut out: Vec<Vec<Value>> = vec![Vec::new(); spec.outs.len()];
        let mut acc = reduce.map(|(op, _)| identity(op, spec.outs.last().unwrap().elem));
        for p in 0..spec.points {
            let mut vals: Vec<Value> = Vec::with_capacity(nodes.len());
            for n in nodes {
                let v = match n {
                    KNode::In { port } => inputs[*port][p],
                    KNode::Param { index } => params[*index],
                    KNode::Unary { op, a } => op.apply(vals[*a]),
                    KNode::Binary { op, a, b } => op.apply(vals[*a], vals[*b]),
                };
                vals.push(v);
            }
            for (port, nix) in outs.iter().enumerate() {
                out[port].push(vals[*nix]);
            }
            if let (Some((op, src)), Some(a)) = (reduce, &mut acc) {
                *a = super::super::exec::fold(*op, *a, vals[*src]);
            }
        }
        if let Some(a) = acc {
            out.last_mut().unwrap().push(a);
        }
        out
    }

    fn f32s(rng: &mut ChaCha8Rng, n: usize) -> Vec<Value> {
        (0..n).map(|_| Value::F32(rng.gen_range(-1.0..1.0))).collect()
    }

    fn close(a: Value, b: Value, tol: f64) -> bool {
        match (a, b) {
            (Value::I32(x), Value::I32(y)) => x == y,
            _ => {
                let (x, y) = (a.as_f64(), b.as_f64());
                (x - y).abs() <= tol * x.abs().max(y.abs()).max(1.0)
            }
        }
    }

    /// y = (a + b) * p0, one out port.
    fn fused_spec(points: usize) -> KernelSpec {
        KernelSpec {
            points,
            ins: vec![
                PortDecl { elem: ElemType::F32, words: points },
                PortDecl { elem: ElemType::F32, words: points },
            ],
            outs: vec![PortDecl { elem: ElemType::F32, words: points }],
            params: vec![ScalarExpr::Lit(Value::F32(100.0))],
            body: KernelBody::Streaming {
                nodes: vec![
                    KNode::In { port: 0 },
                    KNode::In { port: 1 },
                    KNode::Binary { op: EwOp::Add, a: 0, b: 1 },
                    KNode::Param { index: 0 },
                    KNode::Binary { op: EwOp::Mul, a: 2, b: 3 },
                ],
                outs: vec![4],
                reduce: None,
            },
        }
    }

    #[test]
    fn elementwise_matches_reference_at_every_width() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for points in [1usize, 16, 67, 128] {
            let spec = fused_spec(points);
            let a = f32s(&mut rng, points);
            let b = f32s(&mut rng, points);
            let params = vec![Value::F32(100.0)];
            let want = stream_reference(&spec, &[a.clone(), b.clone()], &params);
            for vw in [1usize, 4, 16] {
                let k = materialize("t", &spec, vw, TILE).unwrap();
                let (got, _, _) = run_kernel(&k, vec![a.clone(), b.clone()], params.clone());
                assert_eq!(got, want, "points={points} vw={vw}");
            }
        }
    }

    #[test]
    fn fused_reduce_extends_the_lane_fold_with_the_epilogue() {
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        // s = Σ exp(x), plus the exp stream itself
        let points = 67usize;
        let spec = KernelSpec {
            points,
            ins: vec![PortDecl { elem: ElemType::F32, words: points }],
            outs: vec![
                PortDecl { elem: ElemType::F32, words: points },
                PortDecl { elem: ElemType::F32, words: 1 },
            ],
            params: vec![],
            body: KernelBody::Streaming {
                nodes: vec![KNode::In { port: 0 }, KNode::Unary { op: UnOp::Exp, a: 0 }],
                outs: vec![1],
                reduce: Some((ReduceOp::Add, 1)),
            },
        };
        let x = f32s(&mut rng, points);
        let want = stream_reference(&spec, &[x.clone()], &[]);
        for vw in [1usize, 4, 16] {
            let k = materialize("t", &spec, vw, TILE).unwrap();
            let (got, _, _) = run_kernel(&k, vec![x.clone()], vec![]);
            assert_eq!(got[0], want[0], "the tensor stream is exact at vw={vw}");
            assert_eq!(got[1].len(), 1);
            assert!(
                close(got[1][0], want[1][0], 1e-5),
                "partial {:?} vs {:?} at vw={vw}",
                got[1][0],
                want[1][0]
            );
        }
    }

    #[test]
    fn integer_and_max_reductions_are_exact_at_every_width() {
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        let points = 53usize;
        let ispec = KernelSpec {
            points,
            ins: vec![PortDecl { elem: ElemType::I32, words: points }],
            outs: vec![PortDecl { elem: ElemType::I32, words: 1 }],
            params: vec![],
            body: KernelBody::Streaming {
                nodes: vec![KNode::In { port: 0 }],
                outs: vec![],
                reduce: Some((ReduceOp::Add, 0)),
            },
        };
        let xs: Vec<Value> = (0..points).map(|_| Value::I32(rng.gen_range(-100..100))).collect();
        let want = stream_reference(&ispec, &[xs.clone()], &[]);
        for vw in [1usize, 4, 16] {
            let k = materialize("t", &ispec, vw, TILE).unwrap();
            let (got, _, _) = run_kernel(&k, vec![xs.clone()], vec![]);
            assert_eq!(got, want, "wrapping add is order-free, vw={vw}");
        }

        let mspec = KernelSpec {
            points,
            ins: vec![PortDecl { elem: ElemType::F32, words: points }],
            outs: vec![PortDecl { elem: ElemType::F32, words: 1 }],
            params: vec![],
            body: KernelBody::Streaming {
                nodes: vec![KNode::In { port: 0 }],
                outs: vec![],
                reduce: Some((ReduceOp::Max, 0)),
            },
        };
        let xs = f32s(&mut rng, points);
        let want = stream_reference(&mspec, &[xs.clone()], &[]);
        for vw in [1usize, 4, 16] {
            let k = materialize("t", &mspec, vw, TILE).unwrap();
            let (got, _, _) = run_kernel(&k, vec![xs.clone()], vec![]);
            assert_eq!(got, want, "max is order-free, vw={vw}");
        }
    }

    fn matmul_spec(m: usize, k: usize, n: usize) -> KernelSpec {
        KernelSpec {
            points: m * n,
            ins: vec![
                PortDecl { elem: ElemType::F32, words: m * k },
                PortDecl { elem: ElemType::F32, words: k * n },
            ],
            outs: vec![PortDecl { elem: ElemType::F32, words: m * n }],
            params: vec![],
            body: KernelBody::MatMul { m, k, n, elem: ElemType::F32 },
        }
    }

    #[test]
    fn matrix_product_is_bit_exact_at_every_width() {
        let mut rng = ChaCha8Rng::seed_from_u64(14);
        for (m, k, n) in [(5usize, 7usize, 9usize), (8, 64, 64), (1, 3, 1)] {
            let spec = matmul_spec(m, k, n);
            let a = f32s(&mut rng, m * k);
            let b = f32s(&mut rng, k * n);
            // independent oracle: the classic triple loop in ascending-k order
            let mut want = vec![Value::F32(0.0); m * n];
            for i in 0..m {
                for j in 0..n {
                    let mut acc = Value::F32(0.0);
                    for kk in 0..k {
                        acc = acc.add(a[i * k + kk].mul(b[kk * n + j]));
                    }
                    want[i * n + j] = acc;
                }
            }
            for vw in [1usize, 4, 16] {
                let kern = materialize("mm", &spec, vw, TILE).unwrap();
                let (got, _, _) = run_kernel(&kern, vec![a.clone(), b.clone()], vec![]);
                assert_eq!(got[0], want, "m={m} k={k} n={n} vw={vw}");
            }
        }
    }

    #[test]
    fn oversized_matrix_buffer_is_rejected() {
        let spec = matmul_spec(8, 128, 128);
        let err = materialize("mm", &spec, 16, TILE).unwrap_err();
        assert!(matches!(err, HlaieError::LocalOverflow { .. }), "got {err:?}");
        // the same kernel fits a roomier tile
        assert!(materialize("mm", &spec, 16, 256 * 1024).is_ok());
    }

    #[test]
    fn relu_main_loop_costs_thirty_six_cycles_per_sixteen_points() {
        let points = 1024usize;
        let spec = KernelSpec {
            points,
            ins: vec![PortDecl { elem: ElemType::F32, words: points }],
            outs: vec![PortDecl { elem: ElemType::F32, words: points }],
            params: vec![],
            body: KernelBody::Streaming {
                nodes: vec![KNode::In { port: 0 }, KNode::Unary { op: UnOp::Relu, a: 0 }],
                outs: vec![1],
                reduce: None,
            },
        };
        let k = materialize("relu", &spec, 16, TILE).unwrap();
        let xs: Vec<Value> = (0..points).map(|i| Value::F32(i as f32 - 512.0)).collect();
        let (_, cycles, _) = run_kernel(&k, vec![xs.clone()], vec![]);
        // vread 16 + emulated valu 4 + vwrite 16 per 16 points
        assert_eq!(cycles, (points as u64 / 16) * 36);

        let k1 = materialize("relu", &spec, 1, TILE).unwrap();
        let (_, scalar_cycles, _) = run_kernel(&k1, vec![xs], vec![]);
        // read 1 + alu 1 + write 1 per point
        assert_eq!(scalar_cycles, points as u64 * 3);
    }

    #[test]
    fn parameter_forward_kernel_writes_the_splat() {
        let points = 10usize;
        let spec = KernelSpec {
            points,
            ins: vec![],
            outs: vec![PortDecl { elem: ElemType::F32, words: points }],
            params: vec![ScalarExpr::Lit(Value::F32(7.5))],
            body: KernelBody::Streaming {
                nodes: vec![KNode::Param { index: 0 }],
                outs: vec![0],
                reduce: None,
            },
        };
        for vw in [1usize, 4] {
            let k = materialize("fill", &spec, vw, TILE).unwrap();
            let (got, _, _) = run_kernel(&k, vec![], vec![Value::F32(7.5)]);
            assert_eq!(got[0], vec![Value::F32(7.5); points], "vw={vw}");
        }
    }

    #[test]
    fn listing_reads_like_assembly() {
        let spec = fused_spec(128);
        let k = materialize("g0r0", &spec, 16, TILE).unwrap();
        let d = k.dump();
        assert!(d.contains(".kernel g0r0 vw=16"), "{d}");
        assert!(d.contains("vread"), "{d}");
        assert!(d.contains("vadd"), "{d}");
        assert!(d.contains("vmul"), "{d}");
        assert!(d.contains("vwrite out0"), "{d}");
        assert!(d.contains("loop 8 {"), "{d}");
    }
}
