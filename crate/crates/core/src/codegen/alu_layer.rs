//! Depthwise and pooling layers lowered onto the vector ALU.
//!
//! Activations live in the accumulator scratchpad. Each step covers a band
//! of output rows for one batch block and one channel block:
//! depthwise accumulates `tmp = in[tap]; tmp *= w[tap]; out += tmp` over the
//! kernel taps, maxpool copies the first tap then takes MAX over the rest
//! (padding loads the minimum value), and avgpool sums every tap then shifts
//! right by `log2(kh * kw)`.

use super::conv::{slot_bases, to_u32};
use super::isa::{AluInsn, AluOp, Instruction, MemInsn, Op, PadKind, Uop};
use super::{CodegenError, GenOptions, InstructionStream, StreamMeta};
use crate::config::{AccelConfig, MemKind};
use crate::workload::{ConvLayer, LayerKind};

struct Footprint {
    in_tiles: u64,
    w_tiles: u64,
    tmp_tiles: u64,
    out_tiles: u64,
}

impl Footprint {
    fn of(layer: &ConvLayer, rows: u64, ow: u64) -> Self {
        let wp = layer.w + 2 * layer.pw;
        let depthwise = layer.kind == LayerKind::Depthwise;
        Footprint {
            in_tiles: ((rows - 1) * layer.sh + layer.kh) * wp,
            w_tiles: if depthwise { layer.kh * layer.kw } else { 0 },
            tmp_tiles: if depthwise { rows * ow } else { 0 },
            out_tiles: rows * ow,
        }
    }

    fn total(&self) -> u64 {
        self.in_tiles + self.w_tiles + self.tmp_tiles + self.out_tiles
    }
}

pub fn gen_alu_layer_stream(
    layer: &ConvLayer,
    cfg: &AccelConfig,
    opts: GenOptions,
) -> Result<InstructionStream, CodegenError> {
    if !layer.kind.is_alu_only() {
        return Err(CodegenError::UnsupportedKind(layer.kind));
    }
    if !layer.is_channel_padded(cfg) {
        return Err(CodegenError::NotPadded);
    }
    cfg.validate().map_err(|e| CodegenError::Unsupported(e.to_string()))?;
    let taps = layer.kh * layer.kw;
    if layer.kind == LayerKind::Avgpool && !taps.is_power_of_two() {
        return Err(CodegenError::Unsupported(format!(
            "avgpool window {}x{} is not a power of 2 (the ALU has no divide)",
            layer.kh, layer.kw
        )));
    }
    let (bv, bo) = (cfg.batch as u64, cfg.block_out as u64);
    let (nb, d) = (layer.b / bv, layer.fi / bo);
    let (oh, ow) = layer.output_dims();
    let wp = layer.w + 2 * layer.pw;
    let entries = cfg.entries(MemKind::Acc);
    let mut rows = oh;
    while rows > 0 && Footprint::of(layer, rows, ow).total() > entries {
        rows -= 1;
    }
    if rows == 0 {
        slot_bases(cfg, MemKind::Acc, Footprint::of(layer, 1, ow).total(), 1)?;
    }
    let fp = Footprint::of(layer, rows, ow);
    let w_base = fp.in_tiles as u32;
    let tmp_base = w_base + fp.w_tiles as u32;
    let out_base = tmp_base + fp.tmp_tiles as u32;
    let acc_weight_base = to_u32(nb * d * layer.h * layer.w, "weight base")?;

    let mut uops = Vec::new();
    let dst = if layer.kind == LayerKind::Depthwise { tmp_base } else { out_base };
    let tap_in = uops.len() as u32;
    for ky in 0..layer.kh {
        for kx in 0..layer.kw {
            uops.push(Uop { acc_idx: dst, inp_idx: (ky * wp + kx) as u32, wgt_idx: 0 });
        }
    }
    let tap_w = uops.len() as u32;
    if layer.kind == LayerKind::Depthwise {
        for k in 0..taps as u32 {
            uops.push(Uop { acc_idx: tmp_base, inp_idx: w_base + k, wgt_idx: 0 });
        }
    }
    let out_tmp = uops.len() as u32;
    uops.push(Uop { acc_idx: out_base, inp_idx: tmp_base, wgt_idx: 0 });
    let out_self = uops.len() as u32;
    uops.push(Uop { acc_idx: out_base, inp_idx: out_base, wgt_idx: 0 });
    let tmp_self = uops.len() as u32;
    uops.push(Uop { acc_idx: tmp_base, inp_idx: tmp_base, wgt_idx: 0 });
    let taps = taps as u32;

    let band_groups = oh.div_ceil(rows);
    let groups = nb * d * band_groups;
    let mut ins = vec![Instruction::load(MemInsn::contiguous(MemKind::Uop, 0, 0, uops.len() as u32))];
    let mut g = 0u64;
    for n in 0..nb {
        for cb in 0..d {
            for band in 0..band_groups {
                let oy0 = band * rows;
                let r = rows.min(oh - oy0) as u32;
                let ow32 = ow as u32;
                let alu = |begin: u32, end: u32, op: AluOp, src: (u32, u32)| AluInsn {
                    reset: false,
                    uop_begin: begin,
                    uop_end: end,
                    iter_out: r,
                    iter_in: ow32,
                    dst_factor_out: ow32,
                    dst_factor_in: 1,
                    src_factor_out: src.0,
                    src_factor_in: src.1,
                    op,
                    use_imm: false,
                    imm: 0,
                };
                let imm = |begin: u32, op: AluOp, v: i32| AluInsn {
                    use_imm: true,
                    imm: v,
                    ..alu(begin, begin + 1, op, (ow32, 1))
                };
                let tap_stride = ((layer.sh * wp) as u32, layer.sw as u32);
                let same = (ow32, 1);

                let in_rows = (r as u64 - 1) * layer.sh + layer.kh;
                let start = (oy0 * layer.sh) as i64 - layer.ph as i64;
                let lo = start.max(0);
                let hi = (start + in_rows as i64).min(layer.h as i64);
                let (y0, ys, pt, pb) = if hi > lo {
                    (lo as u64, (hi - lo) as u64, (lo - start) as u64, (start + in_rows as i64 - hi) as u64)
                } else {
                    (0, 0, in_rows, 0)
                };
                let data = ys > 0;
                ins.push(Instruction::load(MemInsn {
                    kind: MemKind::Acc,
                    sram_base: 0,
                    dram_base: to_u32(((n * d + cb) * layer.h + y0) * layer.w, "dram_base")?,
                    y_size: ys as u32,
                    x_size: if data { layer.w as u32 } else { 0 },
                    x_stride: layer.w as u32,
                    y_pad_top: pt as u32,
                    y_pad_bottom: pb as u32,
                    x_pad_left: if data { layer.pw as u32 } else { 0 },
                    x_pad_right: if data { layer.pw as u32 } else { wp as u32 },
                    pad_kind: if layer.kind == LayerKind::Maxpool { PadKind::MinValue } else { PadKind::Zero },
                }));
                if layer.kind == LayerKind::Depthwise {
                    ins.push(Instruction::load(MemInsn::contiguous(
                        MemKind::Acc,
                        w_base,
                        acc_weight_base + (cb as u32) * taps,
                        taps,
                    )));
                }
                let mut clear =
                    Instruction::new(Op::Alu(AluInsn { reset: true, ..alu(out_self, out_self + 1, AluOp::Add, same) }));
                clear.deps.pop_next = g > 0;
                ins.push(clear);
                match layer.kind {
                    LayerKind::Maxpool => {
                        ins.push(Instruction::new(Op::Alu(alu(tap_in, tap_in + 1, AluOp::Add, tap_stride))));
                        if taps > 1 {
                            ins.push(Instruction::new(Op::Alu(alu(tap_in + 1, tap_in + taps, AluOp::Max, tap_stride))));
                        }
                    }
                    LayerKind::Avgpool => {
                        ins.push(Instruction::new(Op::Alu(alu(tap_in, tap_in + taps, AluOp::Add, tap_stride))));
                        ins.push(Instruction::new(Op::Alu(imm(out_self, AluOp::Shr, taps.trailing_zeros() as i32))));
                    }
                    _ => {
                        for k in 0..taps {
                            ins.push(Instruction::new(Op::Alu(AluInsn {
                                reset: true,
                                ..alu(tmp_self, tmp_self + 1, AluOp::Add, same)
                            })));
                            ins.push(Instruction::new(Op::Alu(alu(
                                tap_in + k,
                                tap_in + k + 1,
                                AluOp::Add,
                                tap_stride,
                            ))));
                            ins.push(Instruction::new(Op::Alu(alu(tap_w + k, tap_w + k + 1, AluOp::Mul, (0, 0)))));
                            ins.push(Instruction::new(Op::Alu(alu(out_tmp, out_tmp + 1, AluOp::Add, same))));
                        }
                    }
                }
                if let Some(s) = opts.shift {
                    ins.push(Instruction::new(Op::Alu(imm(out_self, AluOp::Shr, s as i32))));
                }
                if let Some(c) = opts.clip {
                    ins.push(Instruction::new(Op::Alu(imm(out_self, AluOp::Clip, c))));
                }
                ins.last_mut().unwrap().deps.push_next = true;
                let mut st = Instruction::store(MemInsn {
                    kind: MemKind::Out,
                    sram_base: out_base,
                    dram_base: to_u32(((n * d + cb) * oh + oy0) * ow, "dram_base")?,
                    y_size: r,
                    x_size: ow32,
                    x_stride: ow32,
                    y_pad_top: 0,
                    y_pad_bottom: 0,
                    x_pad_left: 0,
                    x_pad_right: 0,
                    pad_kind: PadKind::Zero,
                });
                st.deps.pop_prev = true;
                st.deps.push_prev = true;
                ins.push(st);
                g += 1;
            }
        }
    }
    debug_assert_eq!(g, groups);
    let mut fin = Instruction::finish();
    fin.deps.pop_next = true;
    ins.push(fin);
    if uops.len() as u64 > cfg.entries(MemKind::Uop) {
        return Err(CodegenError::ScratchpadOverflow {
            kind: MemKind::Uop,
            need: uops.len() as u64,
            contexts: 1,
            have: cfg.entries(MemKind::Uop),
        });
    }
    let stream = InstructionStream {
        config: *cfg,
        instructions: ins,
        uops,
        meta: StreamMeta { layer: Some(layer.clone()), tiling: None, acc_weight_base, slots: Vec::new() },
    };
    stream.check_encoding()?;
    Ok(stream)
}
