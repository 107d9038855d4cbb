//! Kernel-graph decomposition: cut a tensor program into stream kernels,
//! replicate them across array columns, and wire host/tile streams.

mod build;
mod graph;

pub use build::{decompose, DecomposeError, DecomposeOptions};
pub use graph::{
    check_fanio, ArrayMeta, ChunkRange, CombineInfo, GraphError, HostSlot, KNode, KernelBody,
    KernelGraph, KernelNode, KernelSpec, MemoryNode, MemoryRole, Node, NodeId, PortDecl, Strategy,
    Stream, StreamDst, StreamSrc, TopoLimits,
};

#[cfg(test)]
mod tests {
    use super::*;
    use crate::loopfront::{parse, validate};
    use crate::tensorlift::lift;

    fn lifted(src: &str) -> crate::tensorlift::TensorProgram {
        let vp = validate(&parse(src).expect("parse")).expect("validate").into_program();
        lift(&vp).expect("lift")
    }

    fn graph_for(src: &str, opts: &DecomposeOptions) -> KernelGraph {
        decompose(&lifted(src), TopoLimits::default_mesh(), opts).expect("decompose")
    }

    fn listing_one(n: usize) -> String {
        format!(
            "real :: a({n}), b({n}), c({n})\n\
             integer :: i\n\
             real :: t\n\
             !$omp target parallel do private(t) map(from: c)\n\
             do i = 1, {n}\n\
               t = a(i) + b(i)\n\
               c(i) = t * 100\n\
             end do\n\
             !$omp end target parallel do\n"
        )
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

    fn stencil2d_src(h: usize, w: usize) -> String {
        format!(
            "real :: u({h}, {w}), v({h}, {w})\n\
             integer :: i, j\n\
             !$omp target parallel do map(to: u) map(from: v)\n\
             do i = 2, {}\n\
               do j = 2, {}\n\
                 v(i, j) = (u(i - 1, j) + u(i + 1, j) + u(i, j - 1) + u(i, j + 1)) * 0.25\n\
               end do\n\
             end do\n\
             !$omp end target parallel do\n",
            h - 1,
            w - 1
        )
    }

    fn gemm_src(d: usize) -> String {
        format!(
            "real :: a({d}, {d}), b({d}, {d}), c({d}, {d})\n\
             real :: t\n\
             integer :: i, j, k\n\
             !$omp target parallel do private(t) map(to: a, b) map(from: c)\n\
             do i = 1, {d}\n\
               do j = 1, {d}\n\
                 t = 0.0\n\
                 do k = 1, {d}\n\
                   t = t + a(i, k) * b(k, j)\n\
                 end do\n\
                 c(i, j) = t\n\
               end do\n\
             end do\n\
             !$omp end target parallel do\n"
        )
    }

    fn chunks_partition(g: &KernelGraph) {
        let n0 = g.domain[0];
        let mut next = 0usize;
        for c in &g.chunks {
            assert_eq!(c.lo, next, "chunks must be contiguous");
            assert!(c.hi > c.lo);
            next = c.hi;
        }
        assert_eq!(next, n0, "chunks must cover the outer axis");
    }

    #[test]
    fn fused_pair_replicates_eight_ways() {
        let g = graph_for(&listing_one(128), &DecomposeOptions::default());
        assert_eq!(g.replicas, 8, "two streams in, one out: two rows per column");
        assert_eq!(g.kernels().count(), 8);
        chunks_partition(&g);
        let k = g.kernels().next().unwrap();
        assert_eq!(k.spec.ins.len(), 2);
        assert_eq!(k.spec.outs.len(), 1);
        assert_eq!(k.spec.points, 16);
        assert_eq!(k.spec.params.len(), 1, "the literal factor rides as a parameter");
        // columns round-robin over the four shim columns
        let cols: Vec<usize> = g.kernels().map(|k| k.col).collect();
        assert_eq!(cols, vec![0, 1, 2, 3, 0, 1, 2, 3]);
    }

    #[test]
    fn single_op_kernel_replicates_sixteen_ways() {
        let g = graph_for(&relu_src(1024), &DecomposeOptions::default());
        assert_eq!(g.replicas, 16, "one stream each way: four rows per column");
        assert_eq!(g.kernels().count(), 16);
        chunks_partition(&g);
    }

    #[test]
    fn uneven_extent_drops_empty_chunks() {
        let g = graph_for(&relu_src(97), &DecomposeOptions::default());
        // ceil(97/16) = 7 points per chunk; 14 chunks cover 97, the
        // last holds 6
        assert_eq!(g.chunks.len(), 14);
        assert_eq!(g.chunks.last().unwrap().len(), 6);
        chunks_partition(&g);
    }

    #[test]
    fn replica_override_wins() {
        let opts = DecomposeOptions { replicas: Some(5), ..Default::default() };
        let g = graph_for(&relu_src(1024), &opts);
        assert_eq!(g.replicas, 5);
        assert_eq!(g.kernels().count(), 5);
        chunks_partition(&g);
    }

    #[test]
    fn replicas_clamp_to_extent() {
        let g = graph_for(&relu_src(3), &DecomposeOptions::default());
        assert_eq!(g.replicas, 3);
        chunks_partition(&g);
    }

    #[test]
    fn reduction_fuses_and_emits_partials() {
        let g = graph_for(&dot_src(4096), &DecomposeOptions::default());
        assert_eq!(g.replicas, 8, "two inputs cap the per-column count at two");
        let combine = g.combine.as_ref().expect("reduction combine plan");
        assert_eq!(combine.partials, 8);
        assert_eq!(combine.name, "s");
        // each kernel fuses multiply and accumulate: one out port, one word
        for k in g.kernels() {
            assert_eq!(k.spec.outs.len(), 1);
            assert_eq!(k.spec.outs[0].words, 1);
            match &k.spec.body {
                KernelBody::Streaming { reduce, .. } => assert!(reduce.is_some()),
                other => panic!("expected streaming body, got {other:?}"),
            }
        }
        let partial_streams = g
            .streams
            .iter()
            .filter(|s| matches!(s.dst, StreamDst::HostPartial { .. }))
            .count();
        assert_eq!(partial_streams, 8);
    }

    #[test]
    fn combiner_tree_reduces_partials_on_the_array() {
        let opts = DecomposeOptions { tree_combine: true, ..Default::default() };
        let g = graph_for(&dot_src(4096), &opts);
        let combine = g.combine.as_ref().expect("reduction combine plan");
        assert_eq!(combine.partials, 1, "the tree leaves one partial for the host");
        // 8 leaves need 7 pairwise combiners
        let combiners = g.kernels().filter(|k| k.name.starts_with("cmb")).count();
        assert_eq!(combiners, 7);
        let partial_streams = g
            .streams
            .iter()
            .filter(|s| matches!(s.dst, StreamDst::HostPartial { .. }))
            .count();
        assert_eq!(partial_streams, 1);
    }

    #[test]
    fn strict_packing_spreads_stages_and_charges_pipes() {
        let src = stencil2d_src(66, 66);
        let relaxed = graph_for(&src, &DecomposeOptions::default());
        let strict = graph_for(
            &src,
            &DecomposeOptions { strict_columns: true, ..DecomposeOptions::default() },
        );
        // Relaxed packing keeps the three-stage pipeline in one column per
        // replica; strict packing charges the inter-stage pipes against
        // the link budget, so an instance spans more columns and is not
        // replicated.
        let cols = |g: &KernelGraph, r: usize| {
            g.kernels()
                .filter(|k| k.replica == r)
                .map(|k| k.col)
                .collect::<std::collections::BTreeSet<_>>()
                .len()
        };
        assert_eq!(cols(&relaxed, 0), 1);
        assert!(cols(&strict, 0) > 1, "strict packing uses more columns");
        assert_eq!(strict.replicas, 1);
        chunks_partition(&strict);
        check_fanio(&strict).expect("strict graph is well formed");
    }

    #[test]
    fn stencil_pipeline_stacks_in_columns() {
        let g = graph_for(&stencil2d_src(66, 66), &DecomposeOptions::default());
        // (a+b), (+c) stages overflow two input ports; greedy fusion
        // settles on three stages and the final stage absorbs the scale
        let groups: std::collections::BTreeSet<usize> =
            g.kernels().map(|k| k.group).collect();
        assert_eq!(groups.len(), 3);
        assert_eq!(g.replicas, 4, "one pipeline per shim column");
        assert_eq!(g.kernels().count(), 12);
        // all stages of one replica share a column
        for r in 0..4 {
            let cols: std::collections::BTreeSet<usize> =
                g.kernels().filter(|k| k.replica == r).map(|k| k.col).collect();
            assert_eq!(cols.len(), 1);
        }
        chunks_partition(&g);
    }

    #[test]
    fn whole_loop_fusion_refuses_wide_stencils() {
        let tp = lifted(&stencil2d_src(66, 66));
        let opts = DecomposeOptions { strategy: Strategy::Iter, ..Default::default() };
        let err = decompose(&tp, TopoLimits::default_mesh(), &opts).unwrap_err();
        assert!(matches!(err, DecomposeError::Infeasible(_)), "got {err:?}");
    }

    #[test]
    fn op_strategy_isolates_every_op() {
        let g = graph_for(
            &listing_one(128),
            &DecomposeOptions { strategy: Strategy::Op, ..Default::default() },
        );
        assert_eq!(g.replicas, 1);
        assert_eq!(g.kernels().count(), 2, "add and scale run as separate kernels");
        // the add result streams tile-to-tile
        let pipes = g
            .streams
            .iter()
            .filter(|s| {
                matches!(s.src, StreamSrc::Kernel { .. })
                    && matches!(s.dst, StreamDst::Kernel { .. })
            })
            .count();
        assert_eq!(pipes, 1);
    }

    #[test]
    fn matrix_product_stages_shared_factor_per_column() {
        let g = graph_for(&gemm_src(64), &DecomposeOptions::default());
        assert_eq!(g.replicas, 8);
        // the right factor is broadcast: one memory node per column
        let mems: Vec<&MemoryNode> = g.memories().collect();
        assert_eq!(mems.len(), 4);
        for m in &mems {
            assert_eq!(m.role, MemoryRole::Broadcast);
            assert_eq!(m.words, 64 * 64);
        }
        let cols: std::collections::BTreeSet<usize> = mems.iter().map(|m| m.col).collect();
        assert_eq!(cols.len(), 4);
        for k in g.kernels() {
            match k.spec.body {
                KernelBody::MatMul { m, k: kk, n, .. } => {
                    assert_eq!((m, kk, n), (8, 64, 64));
                }
                ref other => panic!("expected a matrix-product body, got {other:?}"),
            }
        }
        chunks_partition(&g);
    }

    #[test]
    fn shifted_windows_compose_with_chunks() {
        let src = "real :: a(130), c(130)\n\
                   integer :: i\n\
                   !$omp target parallel do map(to: a) map(from: c)\n\
                   do i = 2, 129\n\
                     c(i) = a(i - 1) + a(i + 1)\n\
                   end do\n\
                   !$omp end target parallel do\n";
        let g = graph_for(src, &DecomposeOptions::default());
        assert_eq!(g.replicas, 8);
        chunks_partition(&g);
        // replica 0 reads a[0..16) and a[2..18), writes c[1..17)
        let host_ins: Vec<&Stream> = g
            .streams
            .iter()
            .filter(|s| matches!(&s.src, StreamSrc::Host { .. }))
            .collect();
        let windows: Vec<(usize, usize, usize)> = host_ins
            .iter()
            .filter_map(|s| match &s.src {
                StreamSrc::Host { slot } => Some(slot.window[0].triple()),
                _ => None,
            })
            .collect();
        assert!(windows.contains(&(0, 16, 1)));
        assert!(windows.contains(&(2, 16, 1)));
        let host_outs: Vec<(usize, usize, usize)> = g
            .streams
            .iter()
            .filter_map(|s| match &s.dst {
                StreamDst::HostArray { slot } => Some(slot.window[0].triple()),
                _ => None,
            })
            .collect();
        assert!(host_outs.contains(&(1, 16, 1)));
        assert!(host_outs.contains(&(113, 16, 1)));
    }

    #[test]
    fn plain_copy_becomes_identity_kernel() {
        let src = "real :: a(64), c(64)\n\
                   integer :: i\n\
                   !$omp target parallel do map(to: a) map(from: c)\n\
                   do i = 1, 64\n\
                     c(i) = a(i)\n\
                   end do\n\
                   !$omp end target parallel do\n";
        let g = graph_for(src, &DecomposeOptions::default());
        for k in g.kernels() {
            assert_eq!(k.spec.ins.len(), 1);
            assert_eq!(k.spec.outs.len(), 1);
            match &k.spec.body {
                KernelBody::Streaming { nodes, outs, reduce } => {
                    assert_eq!(nodes.len(), 1);
                    assert!(matches!(nodes[0], KNode::In { port: 0 }));
                    assert_eq!(outs, &vec![0]);
                    assert!(reduce.is_none());
                }
                other => panic!("expected streaming body, got {other:?}"),
            }
        }
    }

    #[test]
    fn fused_stage_keeps_tensor_and_partial_outputs() {
        // exp feeds both an array yield and a sum: one kernel, two outs
        let src = "real :: x(256), es(256)\n\
                   real :: s\n\
                   integer :: i\n\
                   !$omp target parallel do reduction(+: s) map(to: x) map(from: es)\n\
                   do i = 1, 256\n\
                     es(i) = exp(x(i))\n\
                     s = s + es(i)\n\
                   end do\n\
                   !$omp end target parallel do\n";
        let g = graph_for(src, &DecomposeOptions::default());
        assert_eq!(g.replicas, 8, "two out ports cap the per-column count at two");
        for k in g.kernels() {
            assert_eq!(k.spec.ins.len(), 1);
            assert_eq!(k.spec.outs.len(), 2);
            assert_eq!(k.spec.outs[1].words, 1, "the partial rides the last port");
        }
        chunks_partition(&g);
    }

    #[test]
    fn graphs_pass_structural_checks() {
        for src in [
            listing_one(128),
            relu_src(97),
            dot_src(4096),
            stencil2d_src(66, 66),
            gemm_src(64),
        ] {
            let g = graph_for(&src, &DecomposeOptions::default());
            check_fanio(&g).expect("structural checks");
        }
    }

    #[test]
    fn dump_is_stable() {
        let g = graph_for(&listing_one(128), &DecomposeOptions::default());
        let d = g.dump();
        assert!(d.contains("g0r0"), "dump names kernels: {d}");
        assert!(d.contains("chunk"), "dump lists chunks: {d}");
    }
}
