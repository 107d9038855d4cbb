//! Decomposition: tensor program → kernel graph.
//!
//! Three phases. *Grouping* cuts the compute ops into kernels (one per op,
//! everything fused, or greedy fusion under the two-ports-per-direction
//! budget). *Replication* picks a replica count from link capacity and
//! splits the outermost domain axis into contiguous chunks, one per
//! replica. *Materialisation* instantiates kernels per chunk, composes
//! array windows with chunk ranges, assigns columns round-robin, stages
//! broadcast inputs and wide fan-outs through memory tiles, and emits the
//! stream list.

use super::graph::*;
use crate::loopfront::ReduceOp;
use crate::tensorlift::{
    ScalarExpr, SliceDim, TensorOp, TensorProgram, ValId, YieldTarget,
};
use crate::value::ElemType;
use std::collections::{BTreeMap, BTreeSet, HashMap};
use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum DecomposeError {
    #[error("{0}")]
    Infeasible(String),
    #[error(transparent)]
    Graph(#[from] GraphError),
}

#[derive(Debug, Clone, Default)]
pub struct DecomposeOptions {
    pub strategy: Strategy,
    /// Replica count override; `None` picks the capacity-derived default.
    pub replicas: Option<usize>,
    /// Combine reduction partials on the array (binary tree) instead of
    /// on the host.
    pub tree_combine: bool,
    /// Charge every kernel stream — pipes between pipeline stages
    /// included — against the column link budget when packing stages
    /// into columns. The default charges only host-facing streams, since
    /// adjacent stages hand off through shared tile memory; drivers
    /// retry with this set when routing still runs out of channels.
    pub strict_columns: bool,
}

/// Decompose a tensor program onto the array described by `limits`.
pub fn decompose(
    tp: &TensorProgram,
    limits: TopoLimits,
    opts: &DecomposeOptions,
) -> Result<KernelGraph, DecomposeError> {
    let b = Builder::new(tp, limits, opts);
    b.run()
}

/// How a window dimension relates to the iteration domain: tied to a
/// parallel axis (axis 0 is chunked) or free of it.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
enum Axis {
    Par(usize),
    Free,
}

fn compose(window: &[SliceDim], axes: &[Axis], chunk: &ChunkRange) -> Vec<SliceDim> {
    window
        .iter()
        .zip(axes)
        .map(|(w, ax)| match ax {
            Axis::Par(0) => SliceDim::new(w.offset + chunk.lo * w.stride, chunk.len(), w.stride),
            _ => *w,
        })
        .collect()
}

/// Group input edge, chunk-independent.
#[derive(Debug, Clone, PartialEq)]
enum InEdge {
    External { array: String, window: Vec<SliceDim>, axes: Vec<Axis>, elem: ElemType },
    Pipe { value: ValId, from_group: usize, elem: ElemType },
}

#[derive(Debug, Clone, PartialEq)]
enum OutDest {
    Pipe { group: usize },
    Yield { array: String, window: Vec<SliceDim>, axes: Vec<Axis> },
    Partial { name: String },
}

#[derive(Debug, Clone)]
struct OutEdge {
    value: ValId,
    elem: ElemType,
    is_reduce: bool,
    dests: Vec<OutDest>,
}

#[derive(Debug, Clone)]
struct Interface {
    /// Port order is the order of first use.
    ins: Vec<(InKey, InEdge)>,
    outs: Vec<OutEdge>,
    params: Vec<ScalarExpr>,
}

/// Input dedup key: the value plus its role (a square self-product reads
/// the same value under two different window roles).
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
struct InKey {
    value: ValId,
    role: u8,
}

#[derive(Debug, Clone, Default)]
struct Group {
    ops: Vec<ValId>,
    /// Identity group: no compute, forwards this value to its yield.
    forward: Option<ValId>,
}

struct Builder<'t> {
    tp: &'t TensorProgram,
    limits: TopoLimits,
    strategy: Strategy,
    replicas_req: Option<usize>,
    tree_combine: bool,
    strict_columns: bool,
}

impl<'t> Builder<'t> {
    fn new(tp: &'t TensorProgram, limits: TopoLimits, opts: &DecomposeOptions) -> Self {
        Builder {
            tp,
            limits,
            strategy: opts.strategy,
            replicas_req: opts.replicas,
            tree_combine: opts.tree_combine,
            strict_columns: opts.strict_columns,
        }
    }

    fn op(&self, v: ValId) -> Option<&TensorOp> {
        self.tp.op(v)
    }

    fn is_compute(&self, v: ValId) -> bool {
        matches!(
            self.op(v),
            Some(
                TensorOp::Elementwise { .. }
                    | TensorOp::Unary { .. }
                    | TensorOp::Reduce { .. }
                    | TensorOp::MatMul { .. }
            )
        )
    }

    /// Tensor operands of a compute op (splats excluded — they become
    /// kernel parameters).
    fn data_operands(&self, v: ValId) -> Vec<ValId> {
        let Some(op) = self.op(v) else { return vec![] };
        op.operands()
            .into_iter()
            .filter(|o| !matches!(self.op(*o), Some(TensorOp::Splat { .. })))
            .collect()
    }

    /// The value a yield actually forwards plus its window/axes over the
    /// destination array.
    fn yield_specs(&self) -> Vec<(ValId, OutDest)> {
        let mut out = Vec::new();
        for y in &self.tp.yields {
            match &y.target {
                YieldTarget::Array { name } => {
                    let (value, window) = match self.op(y.value) {
                        Some(TensorOp::InsertSlice { src, dims, .. }) => (*src, dims.clone()),
                        _ => {
                            let shape = &self.tp.info(y.value).shape;
                            (
                                y.value,
                                shape.iter().map(|n| SliceDim::new(0, *n, 1)).collect(),
                            )
                        }
                    };
                    let axes = (0..window.len()).map(Axis::Par).collect();
                    out.push((value, OutDest::Yield { array: name.clone(), window, axes }));
                }
                YieldTarget::Scalar { name, .. } => {
                    out.push((y.value, OutDest::Partial { name: name.clone() }));
                }
            }
        }
        out
    }

    // ---- phase 1: grouping -------------------------------------------

    fn group_ops(&self) -> Result<Vec<Group>, DecomposeError> {
        let compute: Vec<ValId> = self
            .tp
            .ops
            .iter()
            .map(|(id, _)| *id)
            .filter(|id| self.is_compute(*id))
            .collect();
        let yields = self.yield_specs();

        let mut groups: Vec<Group> = Vec::new();
        let mut of: HashMap<ValId, usize> = HashMap::new();

        match self.strategy {
            Strategy::Op => {
                for id in &compute {
                    of.insert(*id, groups.len());
                    groups.push(Group { ops: vec![*id], forward: None });
                }
            }
            Strategy::Iter => {
                if !compute.is_empty() {
                    if compute.iter().any(|id| matches!(self.op(*id), Some(TensorOp::MatMul { .. })))
                        && compute.len() > 1
                    {
                        return Err(DecomposeError::Infeasible(
                            "matrix product kernels cannot fuse with other ops; use --strategy mixed"
                                .into(),
                        ));
                    }
                    for id in &compute {
                        of.insert(*id, 0);
                    }
                    groups.push(Group { ops: compute.clone(), forward: None });
                }
            }
            Strategy::Mixed => {
                for id in &compute {
                    let mut placed = false;
                    if !matches!(self.op(*id), Some(TensorOp::MatMul { .. })) {
                        // try fusing into a producer's group
                        let mut cands: Vec<usize> = Vec::new();
                        for v in self.data_operands(*id) {
                            if let Some(g) = of.get(&v) {
                                if !cands.contains(g) {
                                    cands.push(*g);
                                }
                            }
                        }
                        for g in cands {
                            if groups[g]
                                .ops
                                .iter()
                                .any(|o| matches!(self.op(*o), Some(TensorOp::MatMul { .. })))
                            {
                                continue;
                            }
                            if self.merge_makes_cycle(*id, g, &of) {
                                continue;
                            }
                            let mut trial: BTreeSet<ValId> =
                                groups[g].ops.iter().copied().collect();
                            trial.insert(*id);
                            let (ins, outs) = self.count_ports(&trial, &of, g, &yields);
                            if ins <= 2 && outs <= 2 {
                                groups[g].ops.push(*id);
                                of.insert(*id, g);
                                placed = true;
                                break;
                            }
                        }
                    }
                    if !placed {
                        of.insert(*id, groups.len());
                        groups.push(Group { ops: vec![*id], forward: None });
                    }
                }
            }
        }

        // feasibility of every group as-built
        for (g, group) in groups.iter().enumerate() {
            let set: BTreeSet<ValId> = group.ops.iter().copied().collect();
            let (ins, outs) = self.count_ports(&set, &of, g, &yields);
            if ins > 2 || outs > 2 {
                return Err(DecomposeError::Infeasible(format!(
                    "a kernel would need {ins} input and {outs} output streams (2 each allowed); \
                     try --strategy mixed or op"
                )));
            }
        }

        // identity groups for yields of values no compute op produces
        for (value, _dest) in &yields {
            if !self.is_compute(*value) && !groups.iter().any(|g| g.forward == Some(*value)) {
                groups.push(Group { ops: vec![], forward: Some(*value) });
            }
        }
        if groups.is_empty() {
            return Err(DecomposeError::Infeasible("the program computes nothing".into()));
        }
        Ok(groups)
    }

    /// Would fusing `op` into group `g` create a cycle through another
    /// group? True when any *other* producer group of `op` is reachable
    /// from `g`.
    fn merge_makes_cycle(&self, op: ValId, g: usize, of: &HashMap<ValId, usize>) -> bool {
        let others: BTreeSet<usize> = self
            .data_operands(op)
            .iter()
            .filter_map(|v| of.get(v).copied())
            .filter(|h| *h != g)
            .collect();
        if others.is_empty() {
            return false;
        }
        // reachability over the current group DAG, starting at g
        let mut reached = BTreeSet::new();
        let mut stack = vec![g];
        while let Some(cur) = stack.pop() {
            if !reached.insert(cur) {
                continue;
            }
            for (v, vg) in of {
                if *vg == cur {
                    continue;
                }
                if self.data_operands(*v).iter().any(|o| of.get(o) == Some(&cur)) {
                    stack.push(*vg);
                }
            }
        }
        others.iter().any(|h| reached.contains(h))
    }

    /// In/out port counts a hypothetical op set would need. The same
    /// dedup rules the final interface uses.
    fn count_ports(
        &self,
        set: &BTreeSet<ValId>,
        of: &HashMap<ValId, usize>,
        own: usize,
        yields: &[(ValId, OutDest)],
    ) -> (usize, usize) {
        let mut ins: BTreeSet<InKey> = BTreeSet::new();
        for id in set {
            for (slot, v) in self.data_operands(*id).into_iter().enumerate() {
                if set.contains(&v) {
                    continue;
                }
                let role = match self.op(*id) {
                    Some(TensorOp::MatMul { .. }) => 1 + slot as u8,
                    _ => 0,
                };
                ins.insert(InKey { value: v, role });
            }
        }
        let mut outs: BTreeSet<ValId> = BTreeSet::new();
        for id in set {
            let consumed_outside = self.tp.ops.iter().any(|(other, _)| {
                !set.contains(other)
                    && self.is_compute(*other)
                    && of.get(other).map(|g| *g != own).unwrap_or(true)
                    && self.data_operands(*other).contains(id)
            });
            let yielded = yields.iter().any(|(v, _)| v == id);
            if consumed_outside || yielded {
                outs.insert(*id);
            }
        }
        (ins.len(), outs.len())
    }

    // ---- phase 2: interfaces -----------------------------------------

    fn interfaces(
        &self,
        groups: &[Group],
        of: &HashMap<ValId, usize>,
    ) -> Result<Vec<Interface>, DecomposeError> {
        let yields = self.yield_specs();
        let mut out = Vec::with_capacity(groups.len());
        for (gix, group) in groups.iter().enumerate() {
            let set: BTreeSet<ValId> = group.ops.iter().copied().collect();
            let mut ins: Vec<(InKey, InEdge)> = Vec::new();
            let mut params: Vec<ScalarExpr> = Vec::new();
            let push_in = |key: InKey, edge: InEdge, ins: &mut Vec<(InKey, InEdge)>| {
                if !ins.iter().any(|(k, _)| *k == key) {
                    ins.push((key, edge));
                }
            };
            let operand_edge = |v: ValId,
                                    role: u8,
                                    axes: Vec<Axis>,
                                    ins: &mut Vec<(InKey, InEdge)>|
             -> Result<(), DecomposeError> {
                let key = InKey { value: v, role };
                match self.op(v) {
                    None => {
                        // a raw arg: full window
                        let arg = self
                            .tp
                            .args
                            .iter()
                            .find(|a| a.id == v)
                            .expect("non-op operand is an arg");
                        let window: Vec<SliceDim> =
                            arg.dims.iter().map(|n| SliceDim::new(0, *n, 1)).collect();
                        push_in(
                            key,
                            InEdge::External {
                                array: arg.name.clone(),
                                window,
                                axes,
                                elem: arg.elem,
                            },
                            ins,
                        );
                    }
                    Some(TensorOp::ExtractSlice { src, dims }) => {
                        let arg = self
                            .tp
                            .args
                            .iter()
                            .find(|a| a.id == *src)
                            .expect("slices read program args");
                        push_in(
                            key,
                            InEdge::External {
                                array: arg.name.clone(),
                                window: dims.clone(),
                                axes,
                                elem: self.tp.info(v).elem,
                            },
                            ins,
                        );
                    }
                    Some(_) if self.is_compute(v) => {
                        push_in(
                            key,
                            InEdge::Pipe {
                                value: v,
                                from_group: of[&v],
                                elem: self.tp.info(v).elem,
                            },
                            ins,
                        );
                    }
                    Some(other) => {
                        return Err(DecomposeError::Infeasible(format!(
                            "kernel input fed by unexpected op {}",
                            other.mnemonic()
                        )));
                    }
                }
                Ok(())
            };

            let domain_axes: Vec<Axis> = (0..self.tp.domain.len()).map(Axis::Par).collect();
            if let Some(fwd) = group.forward {
                if let Some(TensorOp::Splat { expr }) = self.op(fwd) {
                    params.push(expr.clone());
                } else {
                    operand_edge(fwd, 0, domain_axes.clone(), &mut ins)?;
                }
            }
            for id in &group.ops {
                match self.op(*id).expect("compute op") {
                    TensorOp::Elementwise { lhs, rhs, .. } => {
                        for v in [*lhs, *rhs] {
                            if set.contains(&v) {
                                continue;
                            }
                            if let Some(TensorOp::Splat { expr }) = self.op(v) {
                                if !params.iter().any(|p| p.canon() == expr.canon()) {
                                    params.push(expr.clone());
                                }
                            } else {
                                operand_edge(v, 0, domain_axes.clone(), &mut ins)?;
                            }
                        }
                    }
                    TensorOp::Unary { src, .. } | TensorOp::Reduce { src, .. } => {
                        let v = *src;
                        if !set.contains(&v) {
                            if let Some(TensorOp::Splat { expr }) = self.op(v) {
                                if !params.iter().any(|p| p.canon() == expr.canon()) {
                                    params.push(expr.clone());
                                }
                            } else {
                                operand_edge(v, 0, domain_axes.clone(), &mut ins)?;
                            }
                        }
                    }
                    TensorOp::MatMul { a, b } => {
                        operand_edge(*a, 1, vec![Axis::Par(0), Axis::Free], &mut ins)?;
                        operand_edge(*b, 2, vec![Axis::Free, Axis::Par(1)], &mut ins)?;
                    }
                    _ => unreachable!("group holds compute ops only"),
                }
            }

            // boundary outputs
            let mut outs: Vec<OutEdge> = Vec::new();
            let values: Vec<ValId> = if let Some(fwd) = group.forward {
                vec![fwd]
            } else {
                group.ops.clone()
            };
            for id in &values {
                let mut dests: Vec<OutDest> = Vec::new();
                // Only compute results travel by pipe. A forwarded raw
                // input can also be consumed elsewhere, but those readers
                // stream their own copy from the host (`operand_edge`
                // classifies non-compute operands as external windows).
                if self.is_compute(*id) {
                    for (other_g, other) in groups.iter().enumerate() {
                        if other_g == gix {
                            continue;
                        }
                        let consumed = other
                            .ops
                            .iter()
                            .any(|o| self.data_operands(*o).contains(id))
                            || other.forward == Some(*id);
                        if consumed {
                            dests.push(OutDest::Pipe { group: other_g });
                        }
                    }
                }
                for (v, dest) in &yields {
                    if v == id {
                        dests.push(dest.clone());
                    }
                }
                if dests.is_empty() {
                    continue;
                }
                let is_reduce = matches!(self.op(*id), Some(TensorOp::Reduce { .. }));
                outs.push(OutEdge { value: *id, elem: self.tp.info(*id).elem, is_reduce, dests });
            }
            // reduce partial goes last so streaming kernels emit it after
            // the final point
            outs.sort_by_key(|o| o.is_reduce);
            out.push(Interface { ins, outs, params });
        }
        Ok(out)
    }

    // ---- phase 3: replication & materialisation ----------------------

    /// Assign each group of one pipeline instance to a column, packing
    /// greedily while the column keeps a free row and its vertical links
    /// keep free channels.  Every stream into a column's kernels climbs
    /// that column's links from the memory-tile row, and every stream out
    /// descends them, so a column is full once the summed kernel ins (or
    /// outs) reach the link capacity.
    fn column_partition(&self, ifaces: &[Interface]) -> Vec<usize> {
        let cap = self.limits.link_capacity;
        let mut parts = Vec::with_capacity(ifaces.len());
        let (mut col, mut used_rows, mut used_in, mut used_out) = (0usize, 0usize, 0usize, 0usize);
        for iface in ifaces {
            // Pipes between stages of one instance normally ride shared
            // tile memory, so only host-facing streams consume the
            // column's vertical channels; strict packing charges pipes
            // too, for graphs whose stages cannot sit adjacently.
            let ins = if self.strict_columns {
                iface.ins.len()
            } else {
                iface
                    .ins
                    .iter()
                    .filter(|(_, e)| matches!(e, InEdge::External { .. }))
                    .count()
            };
            // A port with up to two destinations emits one stream per
            // destination; wider fan-out is staged through a memory tile,
            // costing the kernel a single downward stream.
            let outs: usize = iface
                .outs
                .iter()
                .map(|o| {
                    if o.dests.len() > 2 {
                        1
                    } else if self.strict_columns {
                        o.dests.len()
                    } else {
                        o.dests.iter().filter(|d| !matches!(d, OutDest::Pipe { .. })).count()
                    }
                })
                .sum();
            let fits = used_rows + 1 <= self.limits.rows
                && used_in + ins <= cap
                && used_out + outs <= cap;
            if used_rows > 0 && !fits {
                col += 1;
                (used_rows, used_in, used_out) = (0, 0, 0);
            }
            parts.push(col);
            used_rows += 1;
            used_in += ins;
            used_out += outs;
        }
        parts
    }

    fn default_replicas(
        &self,
        groups: &[Group],
        ifaces: &[Interface],
        instance_cols: usize,
    ) -> Result<usize, DecomposeError> {
        if self.strategy == Strategy::Op {
            return Ok(1);
        }
        let cap = self.limits.link_capacity;
        if groups.len() == 1 {
            let ins = ifaces[0].ins.len().max(1);
            // Every destination of an out port is its own stream down the
            // column, so a value yielded to two host arrays costs two
            // channels per replica.
            let outs = ifaces[0].outs.iter().map(|o| o.dests.len()).sum::<usize>().max(1);
            let per_col = self
                .limits
                .rows
                .min(cap / ins)
                .min(cap / outs);
            if per_col == 0 {
                return Err(DecomposeError::Infeasible(format!(
                    "a kernel with {ins} inputs exceeds the {cap}-channel column links"
                )));
            }
            Ok(per_col * self.limits.shim_cols)
        } else {
            if instance_cols > 1 {
                return Ok(1);
            }
            let ext_ins: usize = ifaces
                .iter()
                .flat_map(|i| &i.ins)
                .filter(|(_, e)| matches!(e, InEdge::External { .. }))
                .count();
            let ext_outs: usize = ifaces
                .iter()
                .flat_map(|i| &i.outs)
                .flat_map(|o| &o.dests)
                .filter(|d| !matches!(d, OutDest::Pipe { .. }))
                .count();
            if ext_ins > cap || ext_outs > cap {
                return Err(DecomposeError::Infeasible(format!(
                    "a pipeline needs {ext_ins} host input streams, column links carry {cap}"
                )));
            }
            Ok(self.limits.shim_cols)
        }
    }

    fn run(self) -> Result<KernelGraph, DecomposeError> {
        let groups = self.group_ops()?;
        let mut of: HashMap<ValId, usize> = HashMap::new();
        for (g, group) in groups.iter().enumerate() {
            for id in &group.ops {
                of.insert(*id, g);
            }
        }
        let ifaces = self.interfaces(&groups, &of)?;
        let parts = self.column_partition(&ifaces);
        let instance_cols = parts.iter().copied().max().unwrap_or(0) + 1;
        if instance_cols > self.limits.shim_cols {
            return Err(DecomposeError::Infeasible(format!(
                "a pipeline instance needs {instance_cols} columns, only {} reach the host",
                self.limits.shim_cols
            )));
        }

        let n0 = self.tp.domain[0];
        let inner: usize = self.tp.domain.iter().skip(1).product();
        let replicas = self
            .replicas_req
            .unwrap_or(self.default_replicas(&groups, &ifaces, instance_cols)?)
            .clamp(1, n0);
        let chunk_size = n0.div_ceil(replicas);
        let chunks: Vec<ChunkRange> = (0..replicas)
            .map(|i| ChunkRange { index: i, lo: i * chunk_size, hi: ((i + 1) * chunk_size).min(n0) })
            .filter(|c| !c.is_empty())
            .collect();

        let col_of_instance = |r: usize, g: usize| -> usize {
            if groups.len() == 1 {
                r % self.limits.shim_cols
            } else {
                (r * instance_cols + parts[g]) % self.limits.shim_cols
            }
        };

        let mut nodes: Vec<Node> = Vec::new();
        let mut node_of: HashMap<(usize, usize), NodeId> = HashMap::new(); // (group, replica)
        for chunk in &chunks {
            let r = chunk.index;
            for (g, _) in groups.iter().enumerate() {
                let id = NodeId(nodes.len());
                let col = col_of_instance(r, g);
                let spec = self.kernel_spec(&groups[g], &ifaces[g], chunk, inner)?;
                nodes.push(Node::Kernel(KernelNode {
                    id,
                    name: format!("g{g}r{r}"),
                    group: g,
                    replica: r,
                    chunk: *chunk,
                    col,
                    spec,
                }));
                node_of.insert((g, r), id);
            }
        }

        // streams
        let mut streams: Vec<Stream> = Vec::new();
        let mut next_stream = 0usize;
        let mut push_stream = |streams: &mut Vec<Stream>, src, dst, elem, words| {
            streams.push(Stream { id: next_stream, src, dst, elem, words });
            next_stream += 1;
        };

        // pipes and outputs; ports with more than two consumers are
        // staged through a memory tile (fan-out via data movers)
        let mut partials: Vec<(NodeId, usize, ElemType, usize)> = Vec::new(); // (node, port, elem, chunk)
        for chunk in &chunks {
            let r = chunk.index;
            for (g, iface) in ifaces.iter().enumerate() {
                let src_node = node_of[&(g, r)];
                let src_col = col_of_instance(r, g);
                for (port, out) in iface.outs.iter().enumerate() {
                    let words = if out.is_reduce { 1 } else { chunk.len() * inner };
                    let src = if out.dests.len() > 2 {
                        let mem_id = NodeId(nodes.len());
                        nodes.push(Node::Memory(MemoryNode {
                            id: mem_id,
                            name: format!("f{}g{g}r{r}p{port}", nodes.len()),
                            col: src_col,
                            role: MemoryRole::FanOut,
                            elem: out.elem,
                            words,
                        }));
                        push_stream(
                            &mut streams,
                            StreamSrc::Kernel { node: src_node, port },
                            StreamDst::Memory { node: mem_id },
                            out.elem,
                            words,
                        );
                        StreamSrc::Memory { node: mem_id }
                    } else {
                        StreamSrc::Kernel { node: src_node, port }
                    };
                    for dest in &out.dests {
                        match dest {
                            OutDest::Pipe { group } => {
                                let dst_node = node_of[&(*group, r)];
                                let dst_port = self
                                    .pipe_port(&ifaces[*group], out.value)
                                    .expect("consumer declares the pipe input");
                                push_stream(
                                    &mut streams,
                                    src.clone(),
                                    StreamDst::Kernel { node: dst_node, port: dst_port },
                                    out.elem,
                                    words,
                                );
                            }
                            OutDest::Yield { array, window, axes } => {
                                let slot = HostSlot {
                                    array: array.clone(),
                                    window: compose(window, axes, chunk),
                                };
                                push_stream(
                                    &mut streams,
                                    src.clone(),
                                    StreamDst::HostArray { slot },
                                    out.elem,
                                    words,
                                );
                            }
                            OutDest::Partial { name } => {
                                partials.push((src_node, port, out.elem, chunk.index));
                                let _ = name;
                            }
                        }
                    }
                }
            }
        }

        // host inputs, grouped by (column, slot) for broadcast staging
        #[derive(PartialEq, Eq, PartialOrd, Ord)]
        struct SlotKey {
            col: usize,
            array: String,
            window: Vec<(usize, usize, usize)>,
        }
        let mut slot_consumers: BTreeMap<SlotKey, (ElemType, Vec<(NodeId, usize)>)> =
            BTreeMap::new();
        for chunk in &chunks {
            let r = chunk.index;
            for (g, iface) in ifaces.iter().enumerate() {
                let node = node_of[&(g, r)];
                let col = col_of_instance(r, g);
                for (port, (_, edge)) in iface.ins.iter().enumerate() {
                    if let InEdge::External { array, window, axes, elem } = edge {
                        let w = compose(window, axes, chunk);
                        let key = SlotKey {
                            col,
                            array: array.clone(),
                            window: w.iter().map(|d| d.triple()).collect(),
                        };
                        slot_consumers.entry(key).or_insert((*elem, Vec::new())).1.push((node, port));
                    }
                }
            }
        }
        for (key, (elem, consumers)) in slot_consumers {
            let window: Vec<SliceDim> =
                key.window.iter().map(|(o, l, s)| SliceDim::new(*o, *l, *s)).collect();
            let slot = HostSlot { array: key.array.clone(), window };
            let words = slot.words();
            if consumers.len() == 1 {
                let (node, port) = consumers[0];
                push_stream(
                    &mut streams,
                    StreamSrc::Host { slot },
                    StreamDst::Kernel { node, port },
                    elem,
                    words,
                );
            } else {
                let mem_id = NodeId(nodes.len());
                nodes.push(Node::Memory(MemoryNode {
                    id: mem_id,
                    name: format!("m{}_{}c{}", nodes.len(), key.array, key.col),
                    col: key.col,
                    role: MemoryRole::Broadcast,
                    elem,
                    words,
                }));
                push_stream(
                    &mut streams,
                    StreamSrc::Host { slot },
                    StreamDst::Memory { node: mem_id },
                    elem,
                    words,
                );
                for (node, port) in consumers {
                    push_stream(
                        &mut streams,
                        StreamSrc::Memory { node: mem_id },
                        StreamDst::Kernel { node, port },
                        elem,
                        words,
                    );
                }
            }
        }

        // reduction partials: host combine or on-array combiner tree
        let combine = self.tp.yields.iter().find_map(|y| match &y.target {
            YieldTarget::Scalar { name, op } => Some((name.clone(), *op)),
            _ => None,
        });
        let mut combine_info = None;
        if let Some((name, op)) = combine {
            let elem = partials.first().map(|p| p.2).unwrap_or(ElemType::F32);
            partials.sort_by_key(|p| p.3);
            if self.tree_combine && partials.len() > 1 {
                let ew = match op {
                    ReduceOp::Add => crate::tensorlift::EwOp::Add,
                    ReduceOp::Max => crate::tensorlift::EwOp::Max,
                };
                let mut level: Vec<(NodeId, usize)> =
                    partials.iter().map(|(n, p, _, _)| (*n, *p)).collect();
                let mut cmb = 0usize;
                while level.len() > 1 {
                    let mut next: Vec<(NodeId, usize)> = Vec::new();
                    let mut i = 0;
                    while i < level.len() {
                        if i + 1 == level.len() {
                            next.push(level[i]);
                            break;
                        }
                        let (ln, lp) = level[i];
                        let (rn, rp) = level[i + 1];
                        let col = nodes[ln.0].col();
                        let id = NodeId(nodes.len());
                        let spec = KernelSpec {
                            points: 1,
                            ins: vec![
                                PortDecl { elem, words: 1 },
                                PortDecl { elem, words: 1 },
                            ],
                            outs: vec![PortDecl { elem, words: 1 }],
                            params: vec![],
                            body: KernelBody::Streaming {
                                nodes: vec![
                                    KNode::In { port: 0 },
                                    KNode::In { port: 1 },
                                    KNode::Binary { op: ew, a: 0, b: 1 },
                                ],
                                outs: vec![2],
                                reduce: None,
                            },
                        };
                        nodes.push(Node::Kernel(KernelNode {
                            id,
                            name: format!("cmb{cmb}"),
                            group: usize::MAX,
                            replica: cmb,
                            chunk: ChunkRange { index: 0, lo: 0, hi: 0 },
                            col,
                            spec,
                        }));
                        cmb += 1;
                        push_stream(
                            &mut streams,
                            StreamSrc::Kernel { node: ln, port: lp },
                            StreamDst::Kernel { node: id, port: 0 },
                            elem,
                            1,
                        );
                        push_stream(
                            &mut streams,
                            StreamSrc::Kernel { node: rn, port: rp },
                            StreamDst::Kernel { node: id, port: 1 },
                            elem,
                            1,
                        );
                        next.push((id, 0));
                        i += 2;
                    }
                    level = next;
                }
                let (n, p) = level[0];
                push_stream(
                    &mut streams,
                    StreamSrc::Kernel { node: n, port: p },
                    StreamDst::HostPartial { name: name.clone(), chunk: 0 },
                    elem,
                    1,
                );
                combine_info = Some(CombineInfo { name, op, elem, partials: 1 });
            } else {
                for (n, p, e, c) in &partials {
                    push_stream(
                        &mut streams,
                        StreamSrc::Kernel { node: *n, port: *p },
                        StreamDst::HostPartial { name: name.clone(), chunk: *c },
                        *e,
                        1,
                    );
                }
                combine_info =
                    Some(CombineInfo { name, op, elem, partials: partials.len() });
            }
        }

        // shapes of every array touched by a stream
        let mut arrays: BTreeMap<String, ArrayMeta> = BTreeMap::new();
        for a in &self.tp.args {
            arrays.insert(a.name.clone(), ArrayMeta { elem: a.elem, dims: a.dims.clone() });
        }
        for y in &self.tp.yields {
            if let YieldTarget::Array { name } = &y.target {
                let (elem, dims) = match self.op(y.value) {
                    Some(TensorOp::InsertSlice { out_shape, .. }) => {
                        (self.tp.info(y.value).elem, out_shape.clone())
                    }
                    _ => {
                        let info = self.tp.info(y.value);
                        (info.elem, info.shape.clone())
                    }
                };
                arrays.insert(name.clone(), ArrayMeta { elem, dims });
            }
        }

        let g = KernelGraph {
            domain: self.tp.domain.clone(),
            strategy: self.strategy,
            replicas,
            chunks,
            nodes,
            streams,
            params: self.tp.params.clone(),
            arrays,
            combine: combine_info,
            limits: self.limits,
        };
        check_fanio(&g)?;
        Ok(g)
    }

    /// The input-port index a consumer interface assigned to `value`.
    fn pipe_port(&self, iface: &Interface, value: ValId) -> Option<usize> {
        iface.ins.iter().position(
            |(_, e)| matches!(e, InEdge::Pipe { value: v, .. } if *v == value),
        )
    }

    fn kernel_spec(
        &self,
        group: &Group,
        iface: &Interface,
        chunk: &ChunkRange,
        inner: usize,
    ) -> Result<KernelSpec, DecomposeError> {
        let points = chunk.len() * inner;
        let ins: Vec<PortDecl> = iface
            .ins
            .iter()
            .map(|(_, e)| match e {
                InEdge::External { window, axes, elem, .. } => {
                    let w = compose(window, axes, chunk);
                    PortDecl { elem: *elem, words: w.iter().map(|d| d.len).product() }
                }
                InEdge::Pipe { elem, .. } => PortDecl { elem: *elem, words: points },
            })
            .collect();
        let outs: Vec<PortDecl> = iface
            .outs
            .iter()
            .map(|o| PortDecl { elem: o.elem, words: if o.is_reduce { 1 } else { points } })
            .collect();

        // matrix-product group
        if let Some(mm) = group
            .ops
            .iter()
            .find(|id| matches!(self.op(**id), Some(TensorOp::MatMul { .. })))
        {
            let (k, n) = match self.op(*mm) {
                Some(TensorOp::MatMul { a, b }) => {
                    (self.tp.info(*a).shape[1], self.tp.info(*b).shape[1])
                }
                _ => unreachable!(),
            };
            let elem = self.tp.info(*mm).elem;
            return Ok(KernelSpec {
                points,
                ins,
                outs,
                params: iface.params.clone(),
                body: KernelBody::MatMul { m: chunk.len(), k, n, elem },
            });
        }

        // streaming group: per-point expression DAG
        let mut knodes: Vec<KNode> = Vec::new();
        let mut slot_of: HashMap<ValId, usize> = HashMap::new();
        let mut param_slot: HashMap<String, usize> = HashMap::new();

        // inputs first, in port order
        for (port, (key, _)) in iface.ins.iter().enumerate() {
            knodes.push(KNode::In { port });
            slot_of.insert(key.value, knodes.len() - 1);
        }
        if let Some(fwd) = group.forward {
            if let Some(TensorOp::Splat { expr }) = self.op(fwd) {
                let pix = iface
                    .params
                    .iter()
                    .position(|p| p.canon() == expr.canon())
                    .expect("forwarded splat is a parameter");
                knodes.push(KNode::Param { index: pix });
                slot_of.insert(fwd, knodes.len() - 1);
            }
        }
        let mut reduce = None;
        for id in &group.ops {
            let slot_for = |v: ValId, knodes: &mut Vec<KNode>, slot_of: &mut HashMap<ValId, usize>, param_slot: &mut HashMap<String, usize>| -> usize {
                if let Some(s) = slot_of.get(&v) {
                    return *s;
                }
                if let Some(TensorOp::Splat { expr }) = self.op(v) {
                    if let Some(s) = param_slot.get(&expr.canon()) {
                        slot_of.insert(v, *s);
                        return *s;
                    }
                    let pix = iface
                        .params
                        .iter()
                        .position(|p| p.canon() == expr.canon())
                        .expect("splat operand is a parameter");
                    knodes.push(KNode::Param { index: pix });
                    let s = knodes.len() - 1;
                    param_slot.insert(expr.canon(), s);
                    slot_of.insert(v, s);
                    return s;
                }
                unreachable!("operand {v:?} resolved before use");
            };
            match self.op(*id).expect("compute op") {
                TensorOp::Elementwise { op, lhs, rhs } => {
                    let a = slot_for(*lhs, &mut knodes, &mut slot_of, &mut param_slot);
                    let b = slot_for(*rhs, &mut knodes, &mut slot_of, &mut param_slot);
                    knodes.push(KNode::Binary { op: *op, a, b });
                    slot_of.insert(*id, knodes.len() - 1);
                }
                TensorOp::Unary { op, src } => {
                    let a = slot_for(*src, &mut knodes, &mut slot_of, &mut param_slot);
                    knodes.push(KNode::Unary { op: *op, a });
                    slot_of.insert(*id, knodes.len() - 1);
                }
                TensorOp::Reduce { op, src } => {
                    let a = slot_for(*src, &mut knodes, &mut slot_of, &mut param_slot);
                    reduce = Some((*op, a));
                    slot_of.insert(*id, usize::MAX); // never read as a slot
                }
                other => {
                    return Err(DecomposeError::Infeasible(format!(
                        "op {} cannot stream",
                        other.mnemonic()
                    )))
                }
            }
        }
        let outs_refs: Vec<usize> = iface
            .outs
            .iter()
            .filter(|o| !o.is_reduce)
            .map(|o| slot_of[&o.value])
            .collect();
        Ok(KernelSpec {
            points,
            ins,
            outs,
            params: iface.params.clone(),
            body: KernelBody::Streaming { nodes: knodes, outs: outs_refs, reduce },
        })
    }
}
