//! Design-space sweeps: whole-workload cycle counts against an area proxy.
//!
//! CSV schema: `batch,block_in,block_out,axi_data_bits,scratchpad_bits,area_proxy,total_cycles`,
//! sorted by `area_proxy`. The area column is a linear proxy, not a layout
//! area.

use super::AnalysisError;
use crate::codegen::{compile_layer, eliminate_redundant_loads, GenOptions};
use crate::config::AccelConfig;
use crate::engine::{run, Mode};
use crate::tps::TilingParams;
use crate::workload::ConvLayer;
use serde::{Deserialize, Serialize};
use std::fmt::Write as _;

/// Weights of the area proxy: `alpha` per MAC, `beta` per scratchpad bit.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AreaCoeffs {
    pub alpha: f64,
    pub beta: f64,
}

impl Default for AreaCoeffs {
    fn default() -> Self {
        AreaCoeffs { alpha: 1.0, beta: 0.05 }
    }
}

/// Scaled area units: `alpha * MACs + beta * scratchpad bits`.
pub fn area_proxy(cfg: &AccelConfig, coeffs: AreaCoeffs) -> Result<f64, AnalysisError> {
    let ok = |v: f64| v.is_finite() && v >= 0.0;
    if !ok(coeffs.alpha) || !ok(coeffs.beta) {
        return Err(AnalysisError::Coefficients { alpha: coeffs.alpha, beta: coeffs.beta });
    }
    Ok(coeffs.alpha * cfg.macs() as f64 + coeffs.beta * cfg.scratchpad_bits() as f64)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayerRun {
    pub name: String,
    pub tiling: Option<TilingParams>,
    pub cycles: u64,
    pub dram_bytes: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WorkloadRun {
    pub total_cycles: u64,
    pub dram_bytes: u64,
    pub layers: Vec<LayerRun>,
}

/// Compile every layer with its best schedule and sum the timed cycles.
pub fn run_workload(
    layers: &[ConvLayer],
    cfg: &AccelConfig,
    opts: GenOptions,
    seed: u64,
) -> Result<WorkloadRun, AnalysisError> {
    let mut out = WorkloadRun { total_cycles: 0, dram_bytes: 0, layers: Vec::new() };
    for (i, layer) in layers.iter().enumerate() {
        let name = if layer.name.is_empty() { format!("#{i}") } else { layer.name.clone() };
        let (stream, tiling) =
            compile_layer(layer, cfg, opts).map_err(|source| AnalysisError::Codegen { layer: name.clone(), source })?;
        let stream = eliminate_redundant_loads(&stream);
        let report = run(&stream, cfg, Mode::Timing, seed)
            .map_err(|source| AnalysisError::Sim { layer: name.clone(), source })?;
        if let Some(d) = &report.deadlock {
            return Err(AnalysisError::Deadlock { layer: name, diagnosis: d.to_string() });
        }
        out.total_cycles += report.total_cycles;
        out.dram_bytes += report.total_dram_bytes();
        out.layers.push(LayerRun { name, tiling, cycles: report.total_cycles, dram_bytes: report.total_dram_bytes() });
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DesignEntry {
    pub config: AccelConfig,
    pub total_cycles: u64,
    pub area: f64,
}

pub fn design_space_table(entries: &[DesignEntry]) -> String {
    let mut sorted: Vec<&DesignEntry> = entries.iter().collect();
    let key = |e: &DesignEntry| {
        let c = &e.config;
        (c.batch, c.block_in, c.block_out, c.axi_data_bits, c.scratchpad_bits(), e.total_cycles)
    };
    sorted.sort_by(|a, b| a.area.total_cmp(&b.area).then_with(|| key(a).cmp(&key(b))));
    let mut s = String::from("batch,block_in,block_out,axi_data_bits,scratchpad_bits,area_proxy,total_cycles\n");
    for e in sorted {
        let c = &e.config;
        let _ = writeln!(
            s,
            "{},{},{},{},{},{},{}",
            c.batch,
            c.block_in,
            c.block_out,
            c.axi_data_bits,
            c.scratchpad_bits(),
            e.area,
            e.total_cycles
        );
    }
    s
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn proxy_is_linear() {
        let cfg = AccelConfig::default();
        let bits = cfg.scratchpad_bits() as f64;
        assert_eq!(area_proxy(&cfg, AreaCoeffs { alpha: 1.0, beta: 0.0 }).unwrap(), 256.0);
        assert_eq!(area_proxy(&cfg, AreaCoeffs { alpha: 0.0, beta: 1.0 }).unwrap(), bits);
        assert_eq!(area_proxy(&cfg, AreaCoeffs::default()).unwrap(), 256.0 + 0.05 * bits);
        assert!(area_proxy(&cfg, AreaCoeffs { alpha: -1.0, beta: 0.0 }).is_err());
    }

    #[test]
    fn table_sorts_by_area() {
        let small = AccelConfig::default();
        let big = AccelConfig { c_wgt: small.c_wgt * 2, ..small };
        let entries = vec![
            DesignEntry { config: big, total_cycles: 10, area: 2.0 },
            DesignEntry { config: small, total_cycles: 20, area: 1.0 },
        ];
        let csv = design_space_table(&entries);
        let rows: Vec<&str> = csv.lines().collect();
        assert_eq!(rows.len(), 3);
        assert!(rows[1].ends_with(",1,20"));
        assert!(rows[2].ends_with(",2,10"));
    }
}
