//! Placement and routing onto the physical tile grid.
//!
//! The grid has one shim (host DMA) row at the bottom, one memory-tile
//! row above it, and the compute rows above that. The decomposition
//! already fixed every node's column; placement stacks kernels bottom-up
//! within their column (combiner kernels may spill to the nearest column
//! with a free tile) and pins memory nodes to their column's memory
//! tile. Routing is dimension-ordered (column first, then row) with a
//! counted channel budget per directed link; a stream between adjacent
//! compute tiles is a zero-hop shared-memory handoff and uses no
//! channels. Host streams enter and leave through the shim of their
//! device endpoint's column, and each one carries a DMA segment list:
//! its array window flattened into contiguous word runs.

use crate::decompose::{
    check_fanio, GraphError, HostSlot, KernelGraph, NodeId, Stream, StreamDst, StreamSrc,
    TopoLimits,
};
use crate::tensorlift::SliceDim;
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use thiserror::Error;

/// Physical array description.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Topology {
    /// Total columns (may exceed the shim-attached ones).
    pub cols: usize,
    /// Columns 0..shim_cols carry a host DMA shim.
    pub shim_cols: usize,
    pub compute_rows: usize,
    /// Stream channels per direction on every mesh link.
    pub link_capacity: usize,
    /// Local data memory per compute tile, bytes.
    pub tile_bytes: usize,
    /// Memory-tile capacity per column, bytes.
    pub memtile_bytes: usize,
    /// Data movers per memory tile.
    pub memtile_movers: usize,
    /// Aggregate memory-tile bandwidth, bytes per cycle.
    pub memtile_bw: usize,
    /// Stream FIFO depth, words.
    pub fifo_words: usize,
}

impl Topology {
    /// The laptop-class array this project models: five columns of four
    /// compute tiles, four columns shim-attached, 64 KiB per tile, one
    /// 512 KiB memory tile with twelve movers per column.
    pub fn hawk_point() -> Self {
        Topology {
            cols: 5,
            shim_cols: 4,
            compute_rows: 4,
            link_capacity: 4,
            tile_bytes: 64 * 1024,
            memtile_bytes: 512 * 1024,
            memtile_movers: 12,
            memtile_bw: 30,
            fifo_words: 32,
        }
    }

    /// The planning limits the decomposition works against.
    pub fn limits(&self) -> TopoLimits {
        TopoLimits {
            shim_cols: self.shim_cols,
            rows: self.compute_rows,
            link_capacity: self.link_capacity,
            memtile_bytes: self.memtile_bytes,
            memtile_movers: self.memtile_movers,
            tile_bytes: self.tile_bytes,
        }
    }

    /// Row index of the shim row.
    pub const SHIM_ROW: usize = 0;
    /// Row index of the memory-tile row.
    pub const MEM_ROW: usize = 1;
    /// Row index of the first compute row.
    pub const FIRST_COMPUTE_ROW: usize = 2;

    pub fn rows(&self) -> usize {
        Self::FIRST_COMPUTE_ROW + self.compute_rows
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize)]
pub struct Coord {
    pub col: usize,
    pub row: usize,
}

impl Coord {
    fn manhattan(self, o: Coord) -> usize {
        self.col.abs_diff(o.col) + self.row.abs_diff(o.row)
    }

    fn is_compute(self) -> bool {
        self.row >= Topology::FIRST_COMPUTE_ROW
    }
}

/// One routed stream: the tile path from source to destination
/// (inclusive). Adjacent compute tiles hand off through shared memory —
/// `hops` is 0 and no link channels are booked.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Route {
    pub stream: usize,
    pub path: Vec<Coord>,
    pub hops: usize,
    /// Whether this route books stream channels on its links.
    pub uses_channels: bool,
}

/// Host-side DMA program for one host-facing stream: contiguous word
/// runs into the named array (or the per-chunk partial buffer of a
/// reduction scalar).
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct DmaTransfer {
    pub stream: usize,
    /// Shim column servicing the transfer.
    pub col: usize,
    pub to_device: bool,
    pub array: String,
    /// (word offset, word count) runs, in transfer order.
    pub segs: Vec<(usize, usize)>,
}

/// A fully placed and routed design, ready to simulate.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PlacedDesign {
    pub topology: Topology,
    pub graph: KernelGraph,
    /// Node name → tile.
    pub places: BTreeMap<String, Coord>,
    pub routes: Vec<Route>,
    pub dma: Vec<DmaTransfer>,
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum PlaceError {
    #[error("column {col} needs {need} compute tiles, the array has {have}")]
    ColumnOverflow { col: usize, need: usize, have: usize },
    #[error("no free compute tile near column {col} for `{node}`")]
    NoRoom { node: String, col: usize },
    #[error("link ({0},{1})->({2},{3}) is out of stream channels")]
    LinkOverflow(usize, usize, usize, usize),
    #[error("column {0} has no shim for a host stream")]
    MissingShim(usize),
    #[error("array `{0}` has no recorded shape")]
    UnknownArray(String),
    #[error(transparent)]
    Graph(#[from] GraphError),
}

/// Flatten a window over an array of shape `dims` into contiguous
/// (word offset, word count) runs, merging adjacent runs.
pub fn window_segs(window: &[SliceDim], dims: &[usize]) -> Vec<(usize, usize)> {
    assert_eq!(window.len(), dims.len(), "window rank matches the array");
    // row-major suffix strides
    let mut strides = vec![1usize; dims.len()];
    for d in (0..dims.len().saturating_sub(1)).rev() {
        strides[d] = strides[d + 1] * dims[d + 1];
    }
    let mut runs: Vec<(usize, usize)> = Vec::new();
    let mut emit = |off: usize, len: usize| {
        if let Some(last) = runs.last_mut() {
            if last.0 + last.1 == off {
                last.1 += len;
                return;
            }
        }
        runs.push((off, len));
    };
    // expand all dimensions but the innermost
    let outer: Vec<&SliceDim> = window[..window.len() - 1].iter().collect();
    let inner = &window[window.len() - 1];
    let inner_stride = *strides.last().unwrap(); // == 1
    let mut idx = vec![0usize; outer.len()];
    loop {
        let mut base = 0usize;
        for (d, i) in idx.iter().enumerate() {
            base += (window[d].offset + i * window[d].stride) * strides[d];
        }
        if inner.stride == 1 {
            emit(base + inner.offset * inner_stride, inner.len);
        } else {
            for j in 0..inner.len {
                emit(base + (inner.offset + j * inner.stride) * inner_stride, 1);
            }
        }
        // odometer
        let mut d = outer.len();
        loop {
            if d == 0 {
                return runs;
            }
            d -= 1;
            idx[d] += 1;
            if idx[d] < window[d].len {
                break;
            }
            idx[d] = 0;
        }
    }
}

struct Router {
    topo: Topology,
    /// Channels booked per directed link.
    used: BTreeMap<(Coord, Coord), usize>,
}

impl Router {
    fn try_path(&self, path: &[Coord]) -> bool {
        path.windows(2).all(|w| {
            self.used.get(&(w[0], w[1])).copied().unwrap_or(0) < self.topo.link_capacity
        })
    }

    fn book(&mut self, path: &[Coord]) {
        for w in path.windows(2) {
            *self.used.entry((w[0], w[1])).or_insert(0) += 1;
        }
    }

    fn col_then_row(from: Coord, to: Coord) -> Vec<Coord> {
        let mut p = vec![from];
        let mut cur = from;
        while cur.col != to.col {
            cur.col = if to.col > cur.col { cur.col + 1 } else { cur.col - 1 };
            p.push(cur);
        }
        while cur.row != to.row {
            cur.row = if to.row > cur.row { cur.row + 1 } else { cur.row - 1 };
            p.push(cur);
        }
        p
    }

    fn row_then_col(from: Coord, to: Coord) -> Vec<Coord> {
        let mut p = vec![from];
        let mut cur = from;
        while cur.row != to.row {
            cur.row = if to.row > cur.row { cur.row + 1 } else { cur.row - 1 };
            p.push(cur);
        }
        while cur.col != to.col {
            cur.col = if to.col > cur.col { cur.col + 1 } else { cur.col - 1 };
            p.push(cur);
        }
        p
    }

    fn route(&mut self, stream: usize, from: Coord, to: Coord) -> Result<Route, PlaceError> {
        // neighbouring compute tiles share memory: no channels needed
        if from.is_compute() && to.is_compute() && from.manhattan(to) <= 1 {
            return Ok(Route { stream, path: vec![from, to], hops: 0, uses_channels: false });
        }
        let a = Self::col_then_row(from, to);
        if self.try_path(&a) {
            self.book(&a);
            let hops = a.len() - 1;
            return Ok(Route { stream, path: a, hops, uses_channels: true });
        }
        let b = Self::row_then_col(from, to);
        if self.try_path(&b) {
            self.book(&b);
            let hops = b.len() - 1;
            return Ok(Route { stream, path: b, hops, uses_channels: true });
        }
        // report the first saturated link on the preferred path
        for w in a.windows(2) {
            if self.used.get(&(w[0], w[1])).copied().unwrap_or(0) >= self.topo.link_capacity {
                return Err(PlaceError::LinkOverflow(w[0].col, w[0].row, w[1].col, w[1].row));
            }
        }
        unreachable!("one of the paths must hold the saturated link");
    }
}

/// Place every node on a tile and route every stream.
pub fn place_route(graph: &KernelGraph, topo: &Topology) -> Result<PlacedDesign, PlaceError> {
    check_fanio(graph)?;
    let mut places: BTreeMap<String, Coord> = BTreeMap::new();
    let mut occupied: BTreeMap<Coord, String> = BTreeMap::new();

    // column-strict kernels, stacked bottom-up by (replica, group)
    let mut per_col: BTreeMap<usize, Vec<&crate::decompose::KernelNode>> = BTreeMap::new();
    let mut spill: Vec<&crate::decompose::KernelNode> = Vec::new();
    for k in graph.kernels() {
        if k.group == usize::MAX {
            spill.push(k); // combiners take whatever is free nearby
        } else {
            per_col.entry(k.col).or_default().push(k);
        }
    }
    for (col, mut ks) in per_col {
        ks.sort_by_key(|k| (k.replica, k.group));
        if ks.len() > topo.compute_rows {
            return Err(PlaceError::ColumnOverflow {
                col,
                need: ks.len(),
                have: topo.compute_rows,
            });
        }
        for (i, k) in ks.iter().enumerate() {
            let c = Coord { col, row: Topology::FIRST_COMPUTE_ROW + i };
            places.insert(k.name.clone(), c);
            occupied.insert(c, k.name.clone());
        }
    }
    for k in spill {
        let mut cols: Vec<usize> = (0..topo.cols).collect();
        cols.sort_by_key(|c| (c.abs_diff(k.col), *c));
        let mut placed = false;
        'cols: for col in cols {
            for row in Topology::FIRST_COMPUTE_ROW..Topology::FIRST_COMPUTE_ROW + topo.compute_rows
            {
                let c = Coord { col, row };
                if !occupied.contains_key(&c) {
                    places.insert(k.name.clone(), c);
                    occupied.insert(c, k.name.clone());
                    placed = true;
                    break 'cols;
                }
            }
        }
        if !placed {
            return Err(PlaceError::NoRoom { node: k.name.clone(), col: k.col });
        }
    }
    for m in graph.memories() {
        places.insert(m.name.clone(), Coord { col: m.col, row: Topology::MEM_ROW });
    }

    // routing
    let node_coord = |id: NodeId| -> Coord {
        let n = graph.node(id);
        places[n.name()]
    };
    let shim_of = |col: usize| -> Result<Coord, PlaceError> {
        if col >= topo.shim_cols {
            return Err(PlaceError::MissingShim(col));
        }
        Ok(Coord { col, row: Topology::SHIM_ROW })
    };
    let mut router = Router { topo: topo.clone(), used: BTreeMap::new() };
    let mut routes = Vec::with_capacity(graph.streams.len());
    let mut dma = Vec::new();
    for s in &graph.streams {
        let (from, to) = endpoints(s, &node_coord, &shim_of)?;
        routes.push(router.route(s.id, from, to)?);
        if let Some(t) = dma_for(graph, s, from, to)? {
            dma.push(t);
        }
    }

    Ok(PlacedDesign {
        topology: topo.clone(),
        graph: graph.clone(),
        places,
        routes,
        dma,
    })
}

fn endpoints(
    s: &Stream,
    node_coord: &dyn Fn(NodeId) -> Coord,
    shim_of: &dyn Fn(usize) -> Result<Coord, PlaceError>,
) -> Result<(Coord, Coord), PlaceError> {
    let dst = match &s.dst {
        StreamDst::Kernel { node, .. } | StreamDst::Memory { node } => node_coord(*node),
        StreamDst::HostArray { .. } | StreamDst::HostPartial { .. } => {
            let src_c = match &s.src {
                StreamSrc::Kernel { node, .. } | StreamSrc::Memory { node } => node_coord(*node),
                StreamSrc::Host { .. } => unreachable!("host-to-host streams do not exist"),
            };
            shim_of(src_c.col)?
        }
    };
    let src = match &s.src {
        StreamSrc::Kernel { node, .. } | StreamSrc::Memory { node } => node_coord(*node),
        StreamSrc::Host { .. } => shim_of(dst.col)?,
    };
    Ok((src, dst))
}

/// DMA program for host-facing streams; `None` for on-array streams.
fn dma_for(
    graph: &KernelGraph,
    s: &Stream,
    from: Coord,
    to: Coord,
) -> Result<Option<DmaTransfer>, PlaceError> {
    let slot_segs = |slot: &HostSlot| -> Result<Vec<(usize, usize)>, PlaceError> {
        let meta = graph
            .arrays
            .get(&slot.array)
            .ok_or_else(|| PlaceError::UnknownArray(slot.array.clone()))?;
        Ok(window_segs(&slot.window, &meta.dims))
    };
    match (&s.src, &s.dst) {
        (StreamSrc::Host { slot }, _) => Ok(Some(DmaTransfer {
            stream: s.id,
            col: from.col,
            to_device: true,
            array: slot.array.clone(),
            segs: slot_segs(slot)?,
        })),
        (_, StreamDst::HostArray { slot }) => Ok(Some(DmaTransfer {
            stream: s.id,
            col: to.col,
            to_device: false,
            array: slot.array.clone(),
            segs: slot_segs(slot)?,
        })),
        (_, StreamDst::HostPartial { name, chunk }) => Ok(Some(DmaTransfer {
            stream: s.id,
            col: to.col,
            to_device: false,
            array: name.clone(),
            segs: vec![(*chunk, 1)],
        })),
        _ => Ok(None),
    }
}

/// Re-derive every placement and routing invariant from scratch. Returns
/// all violations found (empty = valid design).
pub fn validate_design(d: &PlacedDesign) -> Vec<String> {
    let mut bad = Vec::new();
    let topo = &d.topology;
    if let Err(e) = check_fanio(&d.graph) {
        bad.push(format!("graph structure: {e}"));
    }

    // placements: right rows, right columns, one node per tile
    let mut seen: BTreeMap<Coord, &str> = BTreeMap::new();
    for k in d.graph.kernels() {
        match d.places.get(&k.name) {
            None => bad.push(format!("kernel {} is unplaced", k.name)),
            Some(c) => {
                if !c.is_compute() || c.row >= topo.rows() || c.col >= topo.cols {
                    bad.push(format!("kernel {} sits off the compute grid at {c:?}", k.name));
                }
                if k.group != usize::MAX && c.col != k.col {
                    bad.push(format!(
                        "kernel {} was planned for column {} but sits in {}",
                        k.name, k.col, c.col
                    ));
                }
                if let Some(other) = seen.insert(*c, &k.name) {
                    bad.push(format!("{} and {} share tile {c:?}", other, k.name));
                }
            }
        }
    }
    for m in d.graph.memories() {
        match d.places.get(&m.name) {
            None => bad.push(format!("memory node {} is unplaced", m.name)),
            Some(c) => {
                if c.row != Topology::MEM_ROW || c.col != m.col {
                    bad.push(format!("memory node {} belongs at ({},1), found {c:?}", m.name, m.col));
                }
            }
        }
    }

    // routes: one per stream, connected, correct endpoints, capacity
    if d.routes.len() != d.graph.streams.len() {
        bad.push(format!(
            "{} routes for {} streams",
            d.routes.len(),
            d.graph.streams.len()
        ));
    }
    let node_coord = |id: NodeId| -> Option<Coord> {
        d.places.get(d.graph.node(id).name()).copied()
    };
    let mut used: BTreeMap<(Coord, Coord), usize> = BTreeMap::new();
    for r in &d.routes {
        let Some(s) = d.graph.streams.iter().find(|s| s.id == r.stream) else {
            bad.push(format!("route for unknown stream {}", r.stream));
            continue;
        };
        if r.path.len() < 2 {
            bad.push(format!("stream {} has a degenerate path", s.id));
            continue;
        }
        for w in r.path.windows(2) {
            if w[0].manhattan(w[1]) != 1 {
                bad.push(format!("stream {} jumps {:?} -> {:?}", s.id, w[0], w[1]));
            }
        }
        // endpoint agreement
        let (first, last) = (r.path[0], *r.path.last().unwrap());
        let src_ok = match &s.src {
            StreamSrc::Kernel { node, .. } | StreamSrc::Memory { node } => {
                node_coord(*node) == Some(first)
            }
            StreamSrc::Host { .. } => first.row == Topology::SHIM_ROW && first.col < topo.shim_cols,
        };
        if !src_ok {
            bad.push(format!("stream {} starts at the wrong tile {first:?}", s.id));
        }
        let dst_ok = match &s.dst {
            StreamDst::Kernel { node, .. } | StreamDst::Memory { node } => {
                node_coord(*node) == Some(last)
            }
            StreamDst::HostArray { .. } | StreamDst::HostPartial { .. } => {
                last.row == Topology::SHIM_ROW && last.col < topo.shim_cols
            }
        };
        if !dst_ok {
            bad.push(format!("stream {} ends at the wrong tile {last:?}", s.id));
        }
        if r.uses_channels {
            for w in r.path.windows(2) {
                *used.entry((w[0], w[1])).or_insert(0) += 1;
            }
        } else if !(first.is_compute() && last.is_compute() && first.manhattan(last) <= 1) {
            bad.push(format!(
                "stream {} claims a shared-memory handoff across {first:?} -> {last:?}",
                s.id
            ));
        }
    }
    for ((a, b), n) in &used {
        if *n > topo.link_capacity {
            bad.push(format!(
                "link {a:?} -> {b:?} carries {n} streams, capacity {}",
                topo.link_capacity
            ));
        }
    }

    // DMA: host-facing streams carry exactly their words, in bounds
    for s in &d.graph.streams {
        let host_side = matches!(s.src, StreamSrc::Host { .. })
            || matches!(s.dst, StreamDst::HostArray { .. } | StreamDst::HostPartial { .. });
        let t = d.dma.iter().find(|t| t.stream == s.id);
        match (host_side, t) {
            (true, None) => bad.push(format!("host stream {} has no DMA program", s.id)),
            (false, Some(_)) => bad.push(format!("on-array stream {} has a DMA program", s.id)),
            (true, Some(t)) => {
                let words: usize = t.segs.iter().map(|(_, w)| w).sum();
                if words != s.words {
                    bad.push(format!(
                        "stream {} moves {} words but its DMA covers {words}",
                        s.id, s.words
                    ));
                }
                if t.col >= topo.shim_cols {
                    bad.push(format!("stream {} uses column {} without a shim", s.id, t.col));
                }
                if let Some(meta) = d.graph.arrays.get(&t.array) {
                    let total: usize = meta.dims.iter().product();
                    for (off, len) in &t.segs {
                        if off + len > total {
                            bad.push(format!(
                                "stream {} DMA run ({off},{len}) leaves `{}` ({total} words)",
                                s.id, t.array
                            ));
                        }
                    }
                }
            }
            (false, None) => {}
        }
    }
    bad
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::decompose::{decompose, DecomposeOptions};
    use crate::loopfront::{parse, validate};
    use crate::tensorlift::lift;

    fn design_for(src: &str, opts: &DecomposeOptions) -> PlacedDesign {
        let vp = validate(&parse(src).expect("parse")).expect("validate").into_program();
        let tp = lift(&vp).expect("lift");
        let topo = Topology::hawk_point();
        let g = decompose(&tp, topo.limits(), opts).expect("decompose");
        place_route(&g, &topo).expect("place/route")
    }

    fn relu_src(n: usize) -> String {
        format!(
            "real :: x({n}), y({n})\n\
             integer :: i\n\
             !$omp target parallel do map(to: x) map(from: y)\n\
             do i = 1, {n}\n\
               y(i) = max(0.0, x(i))\n\
             end do\n\
             !$omp end target parallel do\n"
        )
    }

    fn dot_src(n: usize) -> String {
        format!(
            "real :: x({n}), y({n})\n\
             real :: s\n\
             integer :: i\n\
             !$omp target parallel do reduction(+: s)\n\
             do i = 1, {n}\n\
               s = s + x(i) * y(i)\n\
             end do\n\
             !$omp end target parallel do\n"
        )
    }

    #[test]
    fn full_replication_fills_every_compute_tile() {
        let d = design_for(&relu_src(4096), &DecomposeOptions::default());
        assert_eq!(d.graph.kernels().count(), 16);
        let tiles: std::collections::BTreeSet<Coord> = d.places.values().copied().collect();
        assert_eq!(tiles.len(), 16, "sixteen kernels on sixteen distinct tiles");
        for c in &tiles {
            assert!(c.is_compute());
            assert!(c.col < 4);
        }
        assert!(validate_design(&d).is_empty());
    }

    #[test]
    fn routes_respect_channel_budgets() {
        for src in [relu_src(4096), dot_src(4096)] {
            let d = design_for(&src, &DecomposeOptions::default());
            let bad = validate_design(&d);
            assert!(bad.is_empty(), "{bad:?}");
        }
    }

    #[test]
    fn pipeline_stages_hand_off_through_shared_memory() {
        let src = "real :: u(66, 66), v(66, 66)\n\
                   integer :: i, j\n\
                   !$omp target parallel do map(to: u) map(from: v)\n\
                   do i = 2, 65\n\
                     do j = 2, 65\n\
                       v(i, j) = (u(i - 1, j) + u(i + 1, j) + u(i, j - 1) + u(i, j + 1)) * 0.25\n\
                     end do\n\
                   end do\n\
                   !$omp end target parallel do\n";
        let d = design_for(src, &DecomposeOptions::default());
        let zero_hop = d.routes.iter().filter(|r| r.hops == 0).count();
        // three stages per replica → two adjacent handoffs, four replicas
        assert_eq!(zero_hop, 8, "pipe streams ride shared memory");
        assert!(validate_design(&d).is_empty());
    }

    #[test]
    fn combiner_tree_spills_to_free_tiles() {
        let opts = DecomposeOptions { tree_combine: true, ..Default::default() };
        let d = design_for(&dot_src(4096), &opts);
        // 8 leaves + 7 combiners = 15 placed kernels, all distinct tiles
        let tiles: std::collections::BTreeSet<Coord> =
            d.places.values().copied().collect();
        assert_eq!(tiles.len(), 15);
        assert!(validate_design(&d).is_empty());
    }

    #[test]
    fn host_windows_flatten_to_coalesced_runs() {
        // full rows of a 2-D window coalesce into one run
        let w = [SliceDim::new(3, 4, 1), SliceDim::new(0, 10, 1)];
        assert_eq!(window_segs(&w, &[8, 10]), vec![(30, 40)]);
        // partial rows stay per-row
        let w = [SliceDim::new(1, 3, 1), SliceDim::new(2, 5, 1)];
        assert_eq!(window_segs(&w, &[8, 10]), vec![(12, 5), (22, 5), (32, 5)]);
        // 1-D shifted window
        let w = [SliceDim::new(2, 16, 1)];
        assert_eq!(window_segs(&w, &[130]), vec![(2, 16)]);
        // strided inner dimension degenerates to single words
        let w = [SliceDim::new(0, 3, 2)];
        assert_eq!(window_segs(&w, &[10]), vec![(0, 1), (2, 1), (4, 1)]);
    }

    #[test]
    fn dma_words_match_stream_words() {
        let d = design_for(&relu_src(97), &DecomposeOptions::default());
        for t in &d.dma {
            let s = d.graph.streams.iter().find(|s| s.id == t.stream).unwrap();
            let words: usize = t.segs.iter().map(|(_, w)| w).sum();
            assert_eq!(words, s.words);
        }
        // every host stream got a transfer
        let host_streams = d
            .graph
            .streams
            .iter()
            .filter(|s| {
                matches!(s.src, StreamSrc::Host { .. })
                    || matches!(s.dst, StreamDst::HostArray { .. } | StreamDst::HostPartial { .. })
            })
            .count();
        assert_eq!(d.dma.len(), host_streams);
    }

    #[test]
    fn oversubscribed_columns_are_rejected() {
        let src = relu_src(4096);
        let vp = validate(&parse(&src).unwrap()).unwrap().into_program();
        let tp = lift(&vp).unwrap();
        let topo = Topology::hawk_point();
        let opts = DecomposeOptions { replicas: Some(32), ..Default::default() };
        let g = decompose(&tp, topo.limits(), &opts).expect("decompose tolerates it");
        let err = place_route(&g, &topo).unwrap_err();
        assert!(matches!(err, PlaceError::ColumnOverflow { .. }), "got {err:?}");
    }

    #[test]
    fn designs_serialize_deterministically() {
        let a = design_for(&relu_src(128), &DecomposeOptions::default());
        let b = design_for(&relu_src(128), &DecomposeOptions::default());
        let ja = serde_json::to_string(&a).unwrap();
        let jb = serde_json::to_string(&b).unwrap();
        assert_eq!(ja, jb);
    }
}
