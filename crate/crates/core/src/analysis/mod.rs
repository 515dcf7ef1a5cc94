//! Report artifacts built from simulation results: roofline charts,
//! per-process utilization timelines and design-space tables.
//!
//! Every chart is emitted as a CSV and an SVG. The CSV is authoritative and
//! the SVG is drawn by parsing it back, so both always carry the same data.

mod roofline;
mod space;
pub(crate) mod svg;
mod timeline;

pub use roofline::{bandwidth_roof, roofline_chart, roofline_csv, roofline_point, roofline_svg, RooflinePoint, Work};
pub use space::{area_proxy, design_space_table, run_workload, AreaCoeffs, DesignEntry, WorkloadRun};
pub use timeline::{idle_fraction, timeline_svg, utilization_timeline};

use thiserror::Error;

#[derive(Debug, Error)]
pub enum AnalysisError {
    #[error("degenerate run: {bytes} DRAM bytes over {cycles} cycles with {ops} ops")]
    Degenerate { ops: u64, bytes: u64, cycles: u64 },
    #[error("run did not complete")]
    Incomplete,
    #[error("area coefficients must be finite and non-negative (alpha={alpha}, beta={beta})")]
    Coefficients { alpha: f64, beta: f64 },
    #[error("nothing to report")]
    Empty,
    #[error("malformed chart data: {0}")]
    Csv(String),
    #[error("compiling layer {layer}")]
    Codegen {
        layer: String,
        #[source]
        source: crate::codegen::CodegenError,
    },
    #[error("simulating layer {layer}")]
    Sim {
        layer: String,
        #[source]
        source: crate::engine::SimError,
    },
    #[error("layer {layer}: {diagnosis}")]
    Deadlock { layer: String, diagnosis: String },
}

/// A chart as authoritative CSV plus the SVG rendered from it.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Chart {
    pub csv: String,
    pub svg: String,
}
