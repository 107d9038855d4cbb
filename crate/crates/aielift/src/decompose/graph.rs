//! Kernel graph data model: kernels, memory-tile staging nodes, streams,
//! chunk table, and the structural checks every built graph must pass.

use crate::loopfront::ReduceOp;
use crate::tensorlift::{EwOp, ScalarExpr, SliceDim, UnOp};
use crate::value::ElemType;
use serde::Serialize;
use std::collections::BTreeMap;
use std::fmt::Write as _;
use thiserror::Error;

/// Array-level resource limits the decomposition plans against. Derived
/// from the full topology description; kept small so planning stays
/// independent of physical coordinates.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct TopoLimits {
    /// Columns with a host DMA (shim) attached.
    pub shim_cols: usize,
    /// Compute rows per column.
    pub rows: usize,
    /// Stream channels per direction on every mesh link.
    pub link_capacity: usize,
    /// Memory-tile capacity per column, bytes.
    pub memtile_bytes: usize,
    /// Data movers per memory tile (one stream endpoint each).
    pub memtile_movers: usize,
    /// Local memory per compute tile, bytes.
    pub tile_bytes: usize,
}

impl TopoLimits {
    /// Limits matching the default topology: 4 shim columns, 4 compute
    /// rows, 4 channels per link direction, 512 KiB memory tiles with 12
    /// movers, 64 KiB tile-local memory.
    pub fn default_mesh() -> Self {
        TopoLimits {
            shim_cols: 4,
            rows: 4,
            link_capacity: 4,
            memtile_bytes: 512 * 1024,
            memtile_movers: 12,
            tile_bytes: 64 * 1024,
        }
    }
}

/// How the tensor program is cut into kernels.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum Strategy {
    /// One kernel per tensor op: a pipeline, no replication by default.
    Op,
    /// Everything fused into a single kernel, replicated over chunks;
    /// fails if the fused kernel would exceed the port budget.
    Iter,
    /// Greedy fusion under the port budget, then replication.
    #[default]
    Mixed,
}

impl Strategy {
    pub fn parse(s: &str) -> Option<Strategy> {
        match s {
            "op" => Some(Strategy::Op),
            "iter" => Some(Strategy::Iter),
            "mixed" => Some(Strategy::Mixed),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct ChunkRange {
    pub index: usize,
    /// 0-based half-open range of the outermost domain axis.
    pub lo: usize,
    pub hi: usize,
}

impl ChunkRange {
    pub fn len(&self) -> usize {
        self.hi - self.lo
    }

    pub fn is_empty(&self) -> bool {
        self.hi <= self.lo
    }
}

/// Node reference within a [`KernelGraph`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize)]
#[serde(transparent)]
pub struct NodeId(pub usize);

/// One element of a streaming kernel's per-point expression DAG.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum KNode {
    /// The current word of input port `port`.
    In { port: usize },
    /// Kernel parameter `index` (host-evaluated splat value).
    Param { index: usize },
    Unary { op: UnOp, a: usize },
    Binary { op: EwOp, a: usize, b: usize },
}

/// What a kernel computes.
#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum KernelBody {
    /// Pure streaming: per point, read one word from every input port,
    /// evaluate `nodes`, write `outs` (one word per listed node, in output
    /// port order), and fold `reduce` if present. A reduce result is
    /// written once, to the last output port, after the final point.
    Streaming {
        nodes: Vec<KNode>,
        outs: Vec<usize>,
        reduce: Option<(ReduceOp, usize)>,
    },
    /// Buffered matrix product: port 1 delivers the full `[k,n]` right
    /// operand first (held in tile-local memory), then port 0 streams the
    /// left operand row by row; each row emits `n` words of the result.
    MatMul { m: usize, k: usize, n: usize, elem: ElemType },
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PortDecl {
    pub elem: ElemType,
    pub words: usize,
}

/// Everything the kernel-ISA lowering needs for one tile.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct KernelSpec {
    /// Points this instance processes (streaming kernels step once per
    /// point; the matrix kernel interprets its own shape).
    pub points: usize,
    pub ins: Vec<PortDecl>,
    pub outs: Vec<PortDecl>,
    /// Host-evaluated scalars, bound to `KNode::Param` by position.
    pub params: Vec<ScalarExpr>,
    pub body: KernelBody,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct KernelNode {
    pub id: NodeId,
    pub name: String,
    /// Which fusion group this instance executes.
    pub group: usize,
    /// Which replica (chunk) it is.
    pub replica: usize,
    pub chunk: ChunkRange,
    /// Column the planner assigned (rows are chosen at placement).
    pub col: usize,
    pub spec: KernelSpec,
}

/// Why a memory-tile staging node exists.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum MemoryRole {
    /// One host window consumed identically by several kernels in the
    /// column: stream it in once, copy it out per consumer.
    Broadcast,
    /// A kernel output needed by more kernels than its port fan-out
    /// allows.
    FanOut,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MemoryNode {
    pub id: NodeId,
    pub name: String,
    pub col: usize,
    pub role: MemoryRole,
    pub elem: ElemType,
    /// Words buffered (the full staged window).
    pub words: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Node {
    Kernel(KernelNode),
    Memory(MemoryNode),
}

impl Node {
    pub fn id(&self) -> NodeId {
        match self {
            Node::Kernel(k) => k.id,
            Node::Memory(m) => m.id,
        }
    }

    pub fn name(&self) -> &str {
        match self {
            Node::Kernel(k) => &k.name,
            Node::Memory(m) => &m.name,
        }
    }

    pub fn col(&self) -> usize {
        match self {
            Node::Kernel(k) => k.col,
            Node::Memory(m) => m.col,
        }
    }
}

/// Host-side array window a stream reads from or writes to.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct HostSlot {
    pub array: String,
    pub window: Vec<SliceDim>,
}

impl HostSlot {
    pub fn words(&self) -> usize {
        self.window.iter().map(|w| w.len).product()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum StreamSrc {
    /// Host memory via the shim of the stream's column.
    Host { slot: HostSlot },
    Kernel { node: NodeId, port: usize },
    Memory { node: NodeId },
}

#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum StreamDst {
    Kernel { node: NodeId, port: usize },
    Memory { node: NodeId },
    /// Scatter into a host array window.
    HostArray { slot: HostSlot },
    /// One reduction partial; the host (or a combiner tree) folds
    /// partials in `chunk` order.
    HostPartial { name: String, chunk: usize },
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Stream {
    pub id: usize,
    pub src: StreamSrc,
    pub dst: StreamDst,
    pub elem: ElemType,
    pub words: usize,
}

/// Scalar finalisation metadata for reduction programs.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CombineInfo {
    pub name: String,
    pub op: ReduceOp,
    pub elem: ElemType,
    /// Number of partials the host will receive (1 when a combiner tree
    /// runs on the array).
    pub partials: usize,
}

/// The decomposed design: kernel instances, staging nodes and streams,
/// ready for placement and routing.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct KernelGraph {
    pub domain: Vec<usize>,
    pub strategy: Strategy,
    /// Replicas requested (chunk count before dropping empties).
    pub replicas: usize,
    pub chunks: Vec<ChunkRange>,
    pub nodes: Vec<Node>,
    pub streams: Vec<Stream>,
    /// Host scalars that must be bound to evaluate kernel parameters.
    pub params: Vec<String>,
    /// Shapes of every array the streams touch, for flattening windows
    /// into DMA segments.
    pub arrays: BTreeMap<String, ArrayMeta>,
    pub combine: Option<CombineInfo>,
    pub limits: TopoLimits,
}

/// Element type and shape of a host array.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct ArrayMeta {
    pub elem: ElemType,
    pub dims: Vec<usize>,
}

impl KernelGraph {
    pub fn kernels(&self) -> impl Iterator<Item = &KernelNode> {
        self.nodes.iter().filter_map(|n| match n {
            Node::Kernel(k) => Some(k),
            Node::Memory(_) => None,
        })
    }

    pub fn memories(&self) -> impl Iterator<Item = &MemoryNode> {
        self.nodes.iter().filter_map(|n| match n {
            Node::Memory(m) => Some(m),
            Node::Kernel(_) => None,
        })
    }

    pub fn node(&self, id: NodeId) -> &Node {
        &self.nodes[id.0]
    }

    /// Short textual listing for dumps and goldens.
    pub fn dump(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(
            s,
            "kernel graph: domain [{}], strategy {:?}, {} replicas, {} chunks",
            self.domain.iter().map(|d| d.to_string()).collect::<Vec<_>>().join(","),
            self.strategy,
            self.replicas,
            self.chunks.len()
        );
        for n in &self.nodes {
            match n {
                Node::Kernel(k) => {
                    let body = match &k.spec.body {
                        KernelBody::Streaming { nodes, reduce, .. } => {
                            let mut opnames: Vec<&str> = nodes
                                .iter()
                                .filter_map(|kn| match kn {
                                    KNode::Unary { op, .. } => Some(op.mnemonic()),
                                    KNode::Binary { op, .. } => Some(op.mnemonic()),
                                    _ => None,
                                })
                                .collect();
                            if let Some((op, _)) = reduce {
                                opnames.push(op.name());
                            }
                            if opnames.is_empty() {
                                "copy".to_string()
                            } else {
                                opnames.join("+")
                            }
                        }
                        KernelBody::MatMul { m, k: kk, n, .. } => {
                            format!("matmul {m}x{kk}x{n}")
                        }
                    };
                    let _ = writeln!(
                        s,
                        "  kernel {} col {} chunk [{},{}) : {} ({} in, {} out)",
                        k.name,
                        k.col,
                        k.chunk.lo,
                        k.chunk.hi,
                        body,
                        k.spec.ins.len(),
                        k.spec.outs.len()
                    );
                }
                Node::Memory(m) => {
                    let _ = writeln!(
                        s,
                        "  memory {} col {} : {:?} {} words",
                        m.name, m.col, m.role, m.words
                    );
                }
            }
        }
        for st in &self.streams {
            let from = match &st.src {
                StreamSrc::Host { slot } => format!("host @{}{}", slot.array, fmt_win(&slot.window)),
                StreamSrc::Kernel { node, port } => {
                    format!("{}.out{}", self.node(*node).name(), port)
                }
                StreamSrc::Memory { node } => self.node(*node).name().to_string(),
            };
            let to = match &st.dst {
                StreamDst::Kernel { node, port } => {
                    format!("{}.in{}", self.node(*node).name(), port)
                }
                StreamDst::Memory { node } => self.node(*node).name().to_string(),
                StreamDst::HostArray { slot } => {
                    format!("host @{}{}", slot.array, fmt_win(&slot.window))
                }
                StreamDst::HostPartial { name, chunk } => format!("host ${name}#{chunk}"),
            };
            let _ = writeln!(s, "  stream s{}: {} -> {} ({} words)", st.id, from, to, st.words);
        }
        s
    }
}

fn fmt_win(w: &[SliceDim]) -> String {
    let parts: Vec<String> =
        w.iter().map(|d| format!("({}, {}, {})", d.offset, d.len, d.stride)).collect();
    format!("[{}]", parts.join(" x "))
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum GraphError {
    #[error("kernel `{name}` has {got} {dir} ports (limit {limit})")]
    PortBudget { name: String, dir: &'static str, got: usize, limit: usize },
    #[error("output port {port} of `{name}` feeds {got} streams (limit 2)")]
    StreamFanOut { name: String, port: usize, got: usize },
    #[error("memory node `{name}` uses {got} movers (limit {limit})")]
    MoverBudget { name: String, got: usize, limit: usize },
    #[error("memory tiles in column {col} hold {got} bytes (limit {limit})")]
    MemtileCapacity { col: usize, got: usize, limit: usize },
    #[error("chunks do not partition the domain: {0}")]
    Coverage(String),
    #[error("stream s{id}: {message}")]
    BadStream { id: usize, message: String },
    #[error("kernel `{name}`: {message}")]
    BadKernel { name: String, message: String },
}

/// Structural invariants: port budgets, mover budgets, memory-tile
/// capacity, stream/port agreement and exact chunk coverage.
pub fn check_fanio(g: &KernelGraph) -> Result<(), GraphError> {
    // chunk table partitions [0, domain0)
    let n0 = g.domain[0];
    let mut expect = 0usize;
    for c in &g.chunks {
        if c.lo != expect || c.is_empty() {
            return Err(GraphError::Coverage(format!(
                "chunk {} covers [{},{}) but {} was expected next",
                c.index, c.lo, c.hi, expect
            )));
        }
        expect = c.hi;
    }
    if expect != n0 {
        return Err(GraphError::Coverage(format!("chunks end at {expect}, domain has {n0}")));
    }

    for node in &g.nodes {
        if let Node::Kernel(k) = node {
            if k.spec.ins.len() > 2 {
                return Err(GraphError::PortBudget {
                    name: k.name.clone(),
                    dir: "input",
                    got: k.spec.ins.len(),
                    limit: 2,
                });
            }
            if k.spec.outs.len() > 2 {
                return Err(GraphError::PortBudget {
                    name: k.name.clone(),
                    dir: "output",
                    got: k.spec.outs.len(),
                    limit: 2,
                });
            }
            // every input port fed exactly once, words agree
            for (p, decl) in k.spec.ins.iter().enumerate() {
                let feeding: Vec<&Stream> = g
                    .streams
                    .iter()
                    .filter(|s| {
                        matches!(&s.dst, StreamDst::Kernel { node, port } if *node == k.id && *port == p)
                    })
                    .collect();
                if feeding.len() != 1 {
                    return Err(GraphError::BadKernel {
                        name: k.name.clone(),
                        message: format!("input port {p} is fed by {} streams", feeding.len()),
                    });
                }
                if feeding[0].words != decl.words {
                    return Err(GraphError::BadStream {
                        id: feeding[0].id,
                        message: format!(
                            "carries {} words into a port declared for {}",
                            feeding[0].words, decl.words
                        ),
                    });
                }
            }
            for (p, decl) in k.spec.outs.iter().enumerate() {
                let fed: Vec<&Stream> = g
                    .streams
                    .iter()
                    .filter(|s| {
                        matches!(&s.src, StreamSrc::Kernel { node, port } if *node == k.id && *port == p)
                    })
                    .collect();
                if fed.is_empty() {
                    return Err(GraphError::BadKernel {
                        name: k.name.clone(),
                        message: format!("output port {p} feeds nothing"),
                    });
                }
                if fed.len() > 2 {
                    return Err(GraphError::StreamFanOut {
                        name: k.name.clone(),
                        port: p,
                        got: fed.len(),
                    });
                }
                for s in fed {
                    if s.words != decl.words {
                        return Err(GraphError::BadStream {
                            id: s.id,
                            message: format!(
                                "carries {} words from a port declared for {}",
                                s.words, decl.words
                            ),
                        });
                    }
                }
            }
        }
    }

    // memory nodes: 1 mover per stream endpoint, capacity per column
    let mut col_bytes: std::collections::BTreeMap<usize, usize> = Default::default();
    for m in g.memories() {
        let ins = g
            .streams
            .iter()
            .filter(|s| matches!(&s.dst, StreamDst::Memory { node } if *node == m.id))
            .count();
        let outs = g
            .streams
            .iter()
            .filter(|s| matches!(&s.src, StreamSrc::Memory { node } if *node == m.id))
            .count();
        if ins != 1 {
            return Err(GraphError::BadStream {
                id: 0,
                message: format!("memory `{}` has {} input streams", m.name, ins),
            });
        }
        if ins + outs > g.limits.memtile_movers {
            return Err(GraphError::MoverBudget {
                name: m.name.clone(),
                got: ins + outs,
                limit: g.limits.memtile_movers,
            });
        }
        *col_bytes.entry(m.col).or_default() += m.words * m.elem.bytes();
    }
    for (col, bytes) in col_bytes {
        if bytes > g.limits.memtile_bytes {
            return Err(GraphError::MemtileCapacity {
                col,
                got: bytes,
                limit: g.limits.memtile_bytes,
            });
        }
    }

    // streams bind existing nodes and positive word counts
    for s in &g.streams {
        if s.words == 0 {
            return Err(GraphError::BadStream { id: s.id, message: "carries no words".into() });
        }
        let check_node = |id: NodeId| -> Result<(), GraphError> {
            if id.0 >= g.nodes.len() {
                return Err(GraphError::BadStream {
                    id: s.id,
                    message: format!("references missing node {}", id.0),
                });
            }
            Ok(())
        };
        match &s.src {
            StreamSrc::Kernel { node, .. } | StreamSrc::Memory { node } => check_node(*node)?,
            StreamSrc::Host { .. } => {}
        }
        match &s.dst {
            StreamDst::Kernel { node, .. } | StreamDst::Memory { node } => check_node(*node)?,
            StreamDst::HostArray { .. } | StreamDst::HostPartial { .. } => {}
        }
    }
    Ok(())
}
