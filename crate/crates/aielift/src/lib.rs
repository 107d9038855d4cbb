//! Compiler and simulator for offloading OpenMP-annotated loop nests onto a
//! small spatial array of AI-engine-style compute tiles.
//!
//! The pipeline runs in stages, each usable on its own:
//!
//! | module       | job                                                            |
//! |--------------|----------------------------------------------------------------|
//! | [`loopfront`]  | parse and validate the Fortran-flavoured `.f90omp` input     |
//! | [`refinterp`]  | scalar reference interpreter (the correctness oracle)        |
//! | [`tensorlift`] | lift loop bodies to a small SSA tensor IR                    |
//! | [`decompose`]  | split the tensor program into ≤2-in/≤2-out kernel graphs     |
//! | [`hlaie`]      | materialise per-tile programs and vectorise them             |
//! | [`placeroute`] | assign kernels to tiles, route streams, schedule DMA         |
//! | [`npusim`]     | event-driven functional + cycle/energy simulation            |
//! | [`hybridrt`]   | split iterations between the host CPU and the tile array     |
//! | [`pipeline`]   | end-to-end drivers tying the stages together                 |
//!
//! [`corpus`] ships a set of built-in kernels, [`fuzzgen`] generates random
//! supported programs for stress testing, and [`oracle`] judges device runs
//! against the interpreter.

pub mod corpus;
pub mod decompose;
pub mod diag;
pub mod fuzzgen;
pub mod hlaie;
pub mod hybridrt;
pub mod loopfront;
pub mod npusim;
pub mod oracle;
pub mod pipeline;
pub mod placeroute;
pub mod refinterp;
pub mod tensorlift;
pub mod value;

pub use diag::Diagnostic;
pub use value::{ElemType, Value};
