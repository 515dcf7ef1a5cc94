//! Lowering of layers to dependency-token instruction streams.

mod alu_layer;
mod conv;
mod dedup;
pub mod dram;
pub mod isa;
mod tokens;

pub use alu_layer::gen_alu_layer_stream;
pub use conv::gen_conv_stream;
pub use dedup::{eliminate_redundant_loads, eliminate_redundant_loads_with_report, DedupReport};
pub use dram::{sample_layer_data, DramImage, Tensor4};
pub use isa::{
    decode, decode_uop, encode, encode_uop, AluInsn, AluOp, DepFlags, EncodeError, GemmInsn, Instruction, MemInsn,
    Module, Op, PadKind, Queue, Uop,
};
pub use tokens::{validate_tokens, Blocked, HappensBefore, TokenCheck, TokenStatus};

use crate::config::{derive_instruction_layout, AccelConfig, InstructionLayout, LayoutError, MemKind};
use crate::tps::{TilingParams, TpsError};
use crate::workload::{ConvLayer, LayerKind};
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum CodegenError {
    #[error(transparent)]
    Layout(#[from] LayoutError),
    #[error(transparent)]
    Encode(#[from] EncodeError),
    #[error(transparent)]
    Tiling(#[from] TpsError),
    #[error("infeasible tiling: {kind} needs {need} entries per context x {contexts} contexts, scratchpad has {have}")]
    ScratchpadOverflow { kind: MemKind, need: u64, contexts: u64, have: u64 },
    #[error("unsupported layer kind {0:?} for this generator")]
    UnsupportedKind(LayerKind),
    #[error("layer is not channel-padded for this config")]
    NotPadded,
    #[error("{0}")]
    Unsupported(String),
    #[error("stream format error: {0}")]
    Format(String),
}

/// Requantization applied to accumulators before they are stored.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct GenOptions {
    /// Arithmetic right shift applied with an immediate SHR.
    #[serde(default)]
    pub shift: Option<u32>,
    /// Upper bound of a CLIP (lower bound is zero).
    #[serde(default)]
    pub clip: Option<i32>,
}

/// Per-context buffer slots of one scratchpad, used by the load optimizer.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SlotInfo {
    pub kind: MemKind,
    pub bases: Vec<u32>,
    pub size: u32,
}

/// What a stream computes and where its tensors live.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct StreamMeta {
    /// Channel-padded layer the stream evaluates.
    pub layer: Option<ConvLayer>,
    #[serde(default)]
    pub tiling: Option<TilingParams>,
    /// Tile offset of depthwise weights within the accumulator region.
    #[serde(default)]
    pub acc_weight_base: u32,
    #[serde(default)]
    pub slots: Vec<SlotInfo>,
}

/// Instructions, the micro-op image they index, and the machine they target.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct InstructionStream {
    pub config: AccelConfig,
    pub instructions: Vec<Instruction>,
    pub uops: Vec<Uop>,
    #[serde(default)]
    pub meta: StreamMeta,
}

/// DRAM bytes moved per memory kind.
pub type ByteCounts = BTreeMap<MemKind, u64>;

impl InstructionStream {
    pub fn new(config: AccelConfig) -> Self {
        InstructionStream { config, instructions: Vec::new(), uops: Vec::new(), meta: StreamMeta::default() }
    }

    pub fn layout(&self) -> Result<InstructionLayout, LayoutError> {
        derive_instruction_layout(&self.config)
    }

    /// Encode every instruction and micro-op, failing on the first field
    /// that does not fit.
    pub fn check_encoding(&self) -> Result<(), CodegenError> {
        let layout = self.layout()?;
        self.encode_with(&layout).map(|_| ())
    }

    fn encode_with(&self, layout: &InstructionLayout) -> Result<(Vec<u128>, Vec<u64>), CodegenError> {
        let ins = self.instructions.iter().map(|i| encode(i, layout)).collect::<Result<Vec<_>, _>>()?;
        let uops = self.uops.iter().map(|u| encode_uop(u, layout)).collect::<Result<Vec<_>, _>>()?;
        Ok((ins, uops))
    }

    /// Binary instruction image: 16 little-endian bytes per instruction.
    pub fn to_binary(&self) -> Result<Vec<u8>, CodegenError> {
        let layout = self.layout()?;
        let (ins, _) = self.encode_with(&layout)?;
        Ok(ins.iter().flat_map(|w| w.to_le_bytes()).collect())
    }

    /// Binary micro-op image: `uop_bits / 8` little-endian bytes per uop.
    pub fn uops_to_binary(&self) -> Result<Vec<u8>, CodegenError> {
        let layout = self.layout()?;
        let (_, uops) = self.encode_with(&layout)?;
        let n = self.config.uop_bits as usize / 8;
        Ok(uops.iter().flat_map(|w| w.to_le_bytes()[..n].to_vec()).collect())
    }

    pub fn instructions_from_binary(bytes: &[u8], cfg: &AccelConfig) -> Result<Vec<Instruction>, CodegenError> {
        if !bytes.len().is_multiple_of(16) {
            return Err(CodegenError::Format("binary length is not a multiple of 16".into()));
        }
        let layout = derive_instruction_layout(cfg)?;
        bytes.chunks_exact(16).map(|c| Ok(decode(u128::from_le_bytes(c.try_into().unwrap()), &layout)?)).collect()
    }

    pub fn uops_from_binary(bytes: &[u8], cfg: &AccelConfig) -> Result<Vec<Uop>, CodegenError> {
        let n = cfg.uop_bits as usize / 8;
        if !bytes.len().is_multiple_of(n) {
            return Err(CodegenError::Format("uop image length is not a multiple of the uop size".into()));
        }
        let layout = derive_instruction_layout(cfg)?;
        Ok(bytes
            .chunks_exact(n)
            .map(|c| {
                let mut w = [0u8; 8];
                w[..n].copy_from_slice(c);
                decode_uop(u64::from_le_bytes(w), &layout)
            })
            .collect())
    }

    /// One decoded instruction per line.
    pub fn to_jsonl(&self) -> String {
        let mut s = String::new();
        for ins in &self.instructions {
            s.push_str(&serde_json::to_string(ins).expect("instruction serializes"));
            s.push('\n');
        }
        s
    }

    pub fn instructions_from_jsonl(text: &str) -> Result<Vec<Instruction>, CodegenError> {
        text.lines()
            .filter(|l| !l.trim().is_empty())
            .enumerate()
            .map(|(i, l)| serde_json::from_str(l).map_err(|e| CodegenError::Format(format!("line {}: {e}", i + 1))))
            .collect()
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("stream serializes")
    }

    pub fn from_json(text: &str) -> Result<Self, CodegenError> {
        let s: InstructionStream = serde_json::from_str(text).map_err(|e| CodegenError::Format(e.to_string()))?;
        s.config.validate().map_err(|e| CodegenError::Format(e.to_string()))?;
        Ok(s)
    }

    /// DRAM image holding `input` (and `weights`, if the layer has any) in
    /// the layout this stream reads.
    pub fn prepare_dram(&self, input: &Tensor4, weights: Option<&Tensor4>) -> Result<DramImage, CodegenError> {
        let layer =
            self.meta.layer.as_ref().ok_or_else(|| CodegenError::Format("stream has no layer metadata".into()))?;
        let cfg = &self.config;
        let mut img = DramImage::default();
        match layer.kind {
            LayerKind::Conv | LayerKind::Dense => {
                img.inp = dram::pack_conv_input(layer, cfg, input);
                if let Some(w) = weights {
                    img.wgt = dram::pack_conv_weights(layer, cfg, w);
                }
            }
            LayerKind::Depthwise | LayerKind::Maxpool | LayerKind::Avgpool => {
                let mut acc = dram::pack_acc_input(layer, cfg, input);
                if let (LayerKind::Depthwise, Some(w)) = (layer.kind, weights) {
                    let elems = cfg.tile_elems(MemKind::Acc);
                    acc.resize(self.meta.acc_weight_base as usize * elems, 0);
                    acc.extend(dram::pack_acc_depthwise_weights(layer, cfg, w));
                }
                img.acc = acc;
            }
        }
        let (oh, ow) = layer.output_dims();
        let out_tiles = layer.b / cfg.batch as u64 * (layer.fo / cfg.block_out as u64) * oh * ow;
        img.out = vec![0; out_tiles as usize * cfg.tile_elems(MemKind::Out)];
        Ok(img)
    }

    /// Extract the `(b, c, oh, ow)` output tensor from a DRAM image.
    pub fn read_output(&self, img: &DramImage, b: usize, c: usize) -> Result<Tensor4, CodegenError> {
        let layer =
            self.meta.layer.as_ref().ok_or_else(|| CodegenError::Format("stream has no layer metadata".into()))?;
        Ok(dram::unpack_output(layer, &self.config, &img.out, b, c))
    }
}

/// DRAM bytes implied by the stream's LOAD and STORE instructions. Padding
/// moves no bytes.
pub fn static_dram_bytes(stream: &InstructionStream) -> ByteCounts {
    let mut counts: ByteCounts = MemKind::DATA.iter().map(|&k| (k, 0)).collect();
    for ins in &stream.instructions {
        if let Op::Load(m) | Op::Store(m) = &ins.op {
            *counts.entry(m.kind).or_default() += m.data_tiles() * stream.config.tile_bytes(m.kind);
        }
    }
    counts
}

/// Bytes loaded into the input and weight scratchpads.
pub fn input_weight_bytes(counts: &ByteCounts) -> u64 {
    counts.get(&MemKind::Inp).copied().unwrap_or(0) + counts.get(&MemKind::Wgt).copied().unwrap_or(0)
}

/// Lower one layer with its best schedule: channel-pad it, then emit the
/// first feasible search-ranked tiling that fits every scratchpad (ALU-only
/// layers use their fixed schedule). Returns the stream and chosen tiling.
pub fn compile_layer(
    layer: &ConvLayer,
    cfg: &AccelConfig,
    opts: GenOptions,
) -> Result<(InstructionStream, Option<TilingParams>), CodegenError> {
    let padded = layer.pad_channels(cfg);
    if padded.kind.is_alu_only() {
        return Ok((gen_alu_layer_stream(&padded, cfg, opts)?, None));
    }
    let ranked = crate::tps::rank(&padded, cfg)?;
    let mut last = None;
    for r in ranked.iter().filter(|r| r.feasible) {
        match gen_conv_stream(&padded, cfg, &r.params, opts) {
            Ok(s) => return Ok((s, Some(r.params))),
            Err(e @ CodegenError::ScratchpadOverflow { .. }) => last = Some(e),
            Err(e) => return Err(e),
        }
    }
    Err(last.unwrap_or_else(|| {
        crate::tps::search(&padded, cfg)
            .err()
            .map(CodegenError::from)
            .unwrap_or_else(|| CodegenError::Unsupported("no schedule lowers for this layer".into()))
    }))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn static_bytes_count_data_tiles_only() {
        let cfg = AccelConfig::default();
        let mut s = InstructionStream::new(cfg);
        s.instructions.push(Instruction::load(MemInsn::contiguous(MemKind::Wgt, 0, 0, 4)));
        let mut padded = MemInsn::contiguous(MemKind::Inp, 0, 0, 0);
        padded.y_size = 0;
        padded.y_pad_top = 3;
        padded.x_pad_left = 2;
        s.instructions.push(Instruction::load(padded));
        s.instructions.push(Instruction::finish());
        let b = static_dram_bytes(&s);
        assert_eq!(b[&MemKind::Wgt], 1024);
        assert_eq!(b[&MemKind::Inp], 0);
    }
}
