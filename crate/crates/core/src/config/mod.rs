//! Machine parameters shared by every other module.
//!
//! A configuration is read from a JSON document, defaults are filled in and
//! every invariant is checked before an [`AccelConfig`] is handed out. After
//! that the value is immutable.

mod layout;

pub use layout::{
    derive_instruction_layout, Field, FieldClass, InstructionLayout, LayoutError, OpcodeLayout, ITER_WIDTH,
    MIN_EXTENT_WIDTH, MIN_STRIDE_WIDTH, SIZE_WIDTH,
};

use serde::{Deserialize, Serialize};
use std::fmt;
use thiserror::Error;

/// Fixed instruction width in bits.
pub const INS_BITS: u32 = 128;

/// Upper bound accepted for any scratchpad capacity, in bytes.
pub const MAX_CAPACITY: u64 = 1 << 30;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("config parse error: {0}")]
    Parse(#[from] serde_json::Error),
    #[error("invalid config field `{field}` = {value}: {constraint}")]
    Invalid { field: &'static str, value: u64, constraint: String },
}

/// Scratchpad / memory kinds addressed by load and store instructions.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum MemKind {
    Inp,
    Wgt,
    Acc,
    Uop,
    Out,
    Ins,
}

impl MemKind {
    pub const DATA: [MemKind; 5] = [MemKind::Inp, MemKind::Wgt, MemKind::Acc, MemKind::Uop, MemKind::Out];

    pub fn code(self) -> u64 {
        match self {
            MemKind::Uop => 0,
            MemKind::Wgt => 1,
            MemKind::Inp => 2,
            MemKind::Acc => 3,
            MemKind::Out => 4,
            MemKind::Ins => 5,
        }
    }

    pub fn from_code(code: u64) -> Option<MemKind> {
        Some(match code {
            0 => MemKind::Uop,
            1 => MemKind::Wgt,
            2 => MemKind::Inp,
            3 => MemKind::Acc,
            4 => MemKind::Out,
            5 => MemKind::Ins,
            _ => return None,
        })
    }
}

impl fmt::Display for MemKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            MemKind::Inp => "INP",
            MemKind::Wgt => "WGT",
            MemKind::Acc => "ACC",
            MemKind::Uop => "UOP",
            MemKind::Out => "OUT",
            MemKind::Ins => "INS",
        };
        f.write_str(s)
    }
}

fn d_one() -> u32 {
    1
}
fn d_sixteen() -> u32 {
    16
}
fn d_eight() -> u32 {
    8
}
fn d_acc_bits() -> u32 {
    32
}
fn d_ins_bits() -> u32 {
    INS_BITS
}
fn d_c_inp() -> u64 {
    32 * 1024
}
fn d_c_wgt() -> u64 {
    256 * 1024
}
fn d_c_acc() -> u64 {
    128 * 1024
}
fn d_c_uop() -> u64 {
    32 * 1024
}
fn d_axi() -> u32 {
    64
}
fn d_latency() -> u32 {
    32
}
fn d_inflight() -> u32 {
    16
}
fn d_alu_ii_two() -> u32 {
    2
}
fn d_depth() -> u32 {
    4
}
fn d_queue_depth() -> u32 {
    256
}

/// All machine parameters. Field order is the canonical JSON key order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AccelConfig {
    #[serde(default = "d_one")]
    pub batch: u32,
    #[serde(default = "d_sixteen")]
    pub block_in: u32,
    #[serde(default = "d_sixteen")]
    pub block_out: u32,
    #[serde(default = "d_eight")]
    pub inp_elem_bits: u32,
    #[serde(default = "d_eight")]
    pub wgt_elem_bits: u32,
    #[serde(default = "d_acc_bits")]
    pub acc_elem_bits: u32,
    #[serde(default = "d_eight")]
    pub out_elem_bits: u32,
    #[serde(default = "d_acc_bits")]
    pub uop_bits: u32,
    #[serde(default = "d_ins_bits")]
    pub ins_bits: u32,
    #[serde(default = "d_c_inp")]
    pub c_inp: u64,
    #[serde(default = "d_c_wgt")]
    pub c_wgt: u64,
    #[serde(default = "d_c_acc")]
    pub c_acc: u64,
    #[serde(default = "d_c_uop")]
    pub c_uop: u64,
    #[serde(default = "d_axi")]
    pub axi_data_bits: u32,
    #[serde(default = "d_latency")]
    pub dram_latency_cycles: u32,
    #[serde(default = "d_inflight")]
    pub vme_max_inflight: u32,
    #[serde(default = "d_one")]
    pub gemm_ii: u32,
    #[serde(default = "d_one")]
    pub alu_ii_imm: u32,
    #[serde(default = "d_alu_ii_two")]
    pub alu_ii_two: u32,
    #[serde(default = "d_depth")]
    pub gemm_pipeline_depth: u32,
    /// Depth of each of the four dependency token queues.
    #[serde(default = "d_queue_depth")]
    pub dep_queue_depth: u32,
}

impl Default for AccelConfig {
    fn default() -> Self {
        serde_json::from_str("{}").expect("defaults deserialize")
    }
}

fn invalid(field: &'static str, value: u64, constraint: impl Into<String>) -> ConfigError {
    ConfigError::Invalid { field, value, constraint: constraint.into() }
}

fn pow2(field: &'static str, value: u64) -> Result<(), ConfigError> {
    if value == 0 || !value.is_power_of_two() {
        return Err(invalid(field, value, "not a power of 2"));
    }
    Ok(())
}

fn at_least(field: &'static str, value: u64, min: u64) -> Result<(), ConfigError> {
    if value < min {
        return Err(invalid(field, value, format!("must be >= {min}")));
    }
    Ok(())
}

/// Parse a JSON config, apply defaults and validate.
pub fn load_config(text: &str) -> Result<AccelConfig, ConfigError> {
    let cfg: AccelConfig = serde_json::from_str(text)?;
    cfg.validate()?;
    Ok(cfg)
}

impl AccelConfig {
    /// Canonical JSON form (fixed key order, pretty printed).
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        pow2("batch", self.batch as u64)?;
        pow2("block_in", self.block_in as u64)?;
        pow2("block_out", self.block_out as u64)?;
        for (field, bits) in [
            ("inp_elem_bits", self.inp_elem_bits),
            ("wgt_elem_bits", self.wgt_elem_bits),
            ("out_elem_bits", self.out_elem_bits),
            ("acc_elem_bits", self.acc_elem_bits),
        ] {
            if ![8, 16, 32].contains(&bits) {
                return Err(invalid(field, bits as u64, "must be one of 8, 16, 32"));
            }
        }
        if self.acc_elem_bits < self.inp_elem_bits.max(self.wgt_elem_bits) {
            return Err(invalid(
                "acc_elem_bits",
                self.acc_elem_bits as u64,
                "must be at least as wide as inp/wgt elements",
            ));
        }
        if ![32, 64].contains(&self.uop_bits) {
            return Err(invalid("uop_bits", self.uop_bits as u64, "must be 32 or 64"));
        }
        if self.ins_bits != INS_BITS {
            return Err(invalid("ins_bits", self.ins_bits as u64, "must be 128"));
        }
        if ![64, 128, 256, 512].contains(&self.axi_data_bits) {
            return Err(invalid("axi_data_bits", self.axi_data_bits as u64, "must be one of 64, 128, 256, 512"));
        }
        for (field, cap, kind) in [
            ("c_inp", self.c_inp, MemKind::Inp),
            ("c_wgt", self.c_wgt, MemKind::Wgt),
            ("c_acc", self.c_acc, MemKind::Acc),
            ("c_uop", self.c_uop, MemKind::Uop),
        ] {
            pow2(field, cap)?;
            if cap > MAX_CAPACITY {
                return Err(invalid(field, cap, format!("must be <= {MAX_CAPACITY}")));
            }
            let tile = self.tile_bytes(kind);
            if cap <= tile {
                return Err(invalid(field, cap, format!("must exceed one {kind} tile ({tile} bytes)")));
            }
        }
        at_least("dram_latency_cycles", self.dram_latency_cycles as u64, 1)?;
        at_least("vme_max_inflight", self.vme_max_inflight as u64, 1)?;
        at_least("gemm_ii", self.gemm_ii as u64, 1)?;
        at_least("alu_ii_imm", self.alu_ii_imm as u64, 1)?;
        at_least("alu_ii_two", self.alu_ii_two as u64, 1)?;
        at_least("dep_queue_depth", self.dep_queue_depth as u64, 1)?;
        Ok(())
    }

    /// Bits in one scratchpad entry of the given kind.
    pub fn tensor_bits(&self, kind: MemKind) -> u64 {
        let (b, bi, bo) = (self.batch as u64, self.block_in as u64, self.block_out as u64);
        match kind {
            MemKind::Inp => b * bi * self.inp_elem_bits as u64,
            MemKind::Wgt => bo * bi * self.wgt_elem_bits as u64,
            MemKind::Acc => b * bo * self.acc_elem_bits as u64,
            MemKind::Out => b * bo * self.out_elem_bits as u64,
            MemKind::Uop => self.uop_bits as u64,
            MemKind::Ins => INS_BITS as u64,
        }
    }

    pub fn tile_bytes(&self, kind: MemKind) -> u64 {
        self.tensor_bits(kind) / 8
    }

    /// Elements in one tile (not meaningful for UOP/INS).
    pub fn tile_elems(&self, kind: MemKind) -> usize {
        let (b, bi, bo) = (self.batch as usize, self.block_in as usize, self.block_out as usize);
        match kind {
            MemKind::Inp => b * bi,
            MemKind::Wgt => bo * bi,
            MemKind::Acc | MemKind::Out => b * bo,
            MemKind::Uop | MemKind::Ins => 1,
        }
    }

    pub fn elem_bits(&self, kind: MemKind) -> u32 {
        match kind {
            MemKind::Inp => self.inp_elem_bits,
            MemKind::Wgt => self.wgt_elem_bits,
            MemKind::Acc => self.acc_elem_bits,
            MemKind::Out => self.out_elem_bits,
            MemKind::Uop => self.uop_bits,
            MemKind::Ins => INS_BITS,
        }
    }

    pub fn capacity_bytes(&self, kind: MemKind) -> u64 {
        match kind {
            MemKind::Inp => self.c_inp,
            MemKind::Wgt => self.c_wgt,
            // STORE reads the accumulator scratchpad and narrows on the way out.
            MemKind::Acc | MemKind::Out => self.c_acc,
            MemKind::Uop => self.c_uop,
            MemKind::Ins => 0,
        }
    }

    /// Number of scratchpad entries (tiles) of the given kind.
    pub fn entries(&self, kind: MemKind) -> u64 {
        match kind {
            MemKind::Out => self.entries(MemKind::Acc),
            MemKind::Ins => 0,
            _ => self.capacity_bytes(kind) / self.tile_bytes(kind),
        }
    }

    pub fn macs(&self) -> u64 {
        self.batch as u64 * self.block_in as u64 * self.block_out as u64
    }

    /// Two ops (multiply and add) per MAC per cycle.
    pub fn peak_ops_per_cycle(&self) -> u64 {
        2 * self.macs()
    }

    pub fn bus_bytes(&self) -> u64 {
        self.axi_data_bits as u64 / 8
    }

    /// Total scratchpad storage in bits.
    pub fn scratchpad_bits(&self) -> u64 {
        (self.c_inp + self.c_wgt + self.c_acc + self.c_uop) * 8
    }

    /// Smallest representable accumulator value, used as the `min_value` pad.
    pub fn acc_min(&self) -> i64 {
        -(1i64 << (self.acc_elem_bits - 1))
    }
}

/// Bits per scratchpad entry.
pub fn tensor_bits(cfg: &AccelConfig, kind: MemKind) -> u64 {
    cfg.tensor_bits(kind)
}

pub fn peak_ops_per_cycle(cfg: &AccelConfig) -> u64 {
    cfg.peak_ops_per_cycle()
}
