//! Tile-program materialisation: lower kernel specs to a small
//! register ISA with counted loops, vectorise by a configurable lane
//! width, and execute the result over stream ports.

mod exec;
mod isa;
mod lower;

pub use exec::{fold, run_kernel, CoreState, CostModel, ExecStats, PortIo, Step, VecIo};
pub use isa::{Addr, Instr, Opnd, Reg, TileKernel, VReg};
pub use lower::{materialize, HlaieError};
