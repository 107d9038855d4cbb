//! Drift detection for the compiler's intermediate representations.
//!
//! Every shipped corpus kernel has one committed dump per pass (parsed
//! loops, tensor IR, tile graph, tile assembly, placement).  Any change
//! to what the compiler emits fails here until the goldens are reviewed
//! and refreshed with `GOLDEN_REGEN=1 cargo test -p aielift-cli --test
//! golden`.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use aielift::corpus;
use aielift::decompose::Node;
use aielift::hlaie::materialize;
use aielift::loopfront::{parse_file, print_staged};
use aielift::pipeline::{compile_source, Compiled, CompileOptions};
use aielift::placeroute::PlacedDesign;

fn corpus_dir() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../corpus")
}

fn golden_dir() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/golden")
}

/// Compact, reviewable rendering of a placed design: where every node
/// landed, each route's path, and the host DMA plan.
fn placed_summary(d: &PlacedDesign) -> String {
    let mut s = String::new();
    for (name, c) in &d.places {
        let _ = writeln!(s, "place {name} @ c{}r{}", c.col, c.row);
    }
    for r in &d.routes {
        let path = r
            .path
            .iter()
            .map(|c| format!("c{}r{}", c.col, c.row))
            .collect::<Vec<_>>()
            .join(" -> ");
        let kind = if r.uses_channels { "channels" } else { "local" };
        let _ = writeln!(s, "route s{} [{} hops, {kind}]: {path}", r.stream, r.hops);
    }
    for t in &d.dma {
        let words: usize = t.segs.iter().map(|(_, w)| w).sum();
        let dir = if t.to_device { "to_device" } else { "from_device" };
        let _ = writeln!(
            s,
            "dma s{} col{} {dir} {} segs={} words={}",
            t.stream, t.col, t.array, t.segs.len(), words
        );
    }
    s
}

/// The per-pass dumps for one kernel, in pipeline order.
fn dumps_for(source: &str) -> Vec<(&'static str, String)> {
    let staged = parse_file(source).expect("corpus kernels parse");
    let opts = CompileOptions::default();
    let compiled = compile_source(source, &opts).expect("corpus kernels compile");
    let stages = match &compiled {
        Compiled::Device(stages) => stages,
        Compiled::CpuFallback { reason, .. } => panic!("corpus kernel fell back: {reason}"),
    };

    let multi = stages.len() > 1;
    let mut tensor = String::new();
    let mut tiles = String::new();
    let mut asm = String::new();
    let mut placed = String::new();
    for (i, s) in stages.iter().enumerate() {
        if multi {
            let hdr = format!("== stage {} ==\n", i + 1);
            tensor.push_str(&hdr);
            tiles.push_str(&hdr);
            asm.push_str(&hdr);
            placed.push_str(&hdr);
        }
        tensor.push_str(&s.tensor.dump());
        tiles.push_str(&s.design.graph.dump());
        for node in &s.design.graph.nodes {
            if let Node::Kernel(k) = node {
                if k.replica == 0 {
                    let tk = materialize(&k.name, &k.spec, opts.vw, opts.topology.tile_bytes)
                        .expect("corpus kernels lower");
                    asm.push_str(&tk.dump());
                }
            }
        }
        placed.push_str(&placed_summary(&s.design));
    }

    vec![
        ("ast.txt", print_staged(&staged)),
        ("tensor.txt", tensor),
        ("tiles.txt", tiles),
        ("hlaie.txt", asm),
        ("placed.txt", placed),
    ]
}

#[test]
fn corpus_dumps_match_the_committed_goldens() {
    let regen = std::env::var_os("GOLDEN_REGEN").is_some();
    for ck in corpus::CORPUS {
        let source = fs::read_to_string(corpus_dir().join(ck.file_name()))
            .expect("shipped corpus file exists");
        let dir = golden_dir().join(ck.name);
        for (file, text) in dumps_for(&source) {
            let path = dir.join(file);
            if regen {
                fs::create_dir_all(&dir).unwrap();
                fs::write(&path, &text).unwrap();
            }
            let committed = fs::read_to_string(&path).unwrap_or_else(|_| {
                panic!("missing golden {}; set GOLDEN_REGEN=1 to refresh", path.display())
            });
            assert_eq!(
                committed,
                text,
                "{}/{file} drifted; review the change and set GOLDEN_REGEN=1 to refresh",
                ck.name
            );
        }
    }
}
