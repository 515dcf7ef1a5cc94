//! Performance laboratory for a load-compute-store tensor accelerator.
pub mod analysis;
pub mod codegen;
pub mod config;
pub mod engine;
pub mod floorplan;
pub mod tps;
pub mod workload;

pub use codegen::{Instruction, InstructionStream, Uop};
pub use config::{load_config, AccelConfig, MemKind};
pub use engine::{run, Mode, SimReport};
pub use workload::{ConvLayer, LayerKind};
