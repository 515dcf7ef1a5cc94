//! GEMM-based convolution and dense layer lowering.

use super::isa::{AluInsn, AluOp, GemmInsn, Instruction, MemInsn, Op, PadKind, Uop};
use super::{CodegenError, GenOptions, InstructionStream, SlotInfo, StreamMeta};
use crate::config::{AccelConfig, MemKind};
use crate::tps::{self, InnerTiles, TileDims, TilingParams};
use crate::workload::{ConvLayer, LayerKind};

pub(super) fn to_u32(v: u64, what: &str) -> Result<u32, CodegenError> {
    u32::try_from(v).map_err(|_| CodegenError::Unsupported(format!("{what} = {v} exceeds 32 bits")))
}

/// Split `entries` into `contexts` equal slots and check `need` fits one.
pub(super) fn slot_bases(cfg: &AccelConfig, kind: MemKind, need: u64, contexts: u64) -> Result<Vec<u32>, CodegenError> {
    let have = cfg.entries(kind);
    if need == 0 || need * contexts > have {
        return Err(CodegenError::ScratchpadOverflow { kind, need, contexts, have });
    }
    let stride = have / contexts;
    (0..contexts).map(|t| to_u32(t * stride, "slot base")).collect()
}

/// Input window of one tile along one axis: `(valid_start, valid_len,
/// pad_before, pad_after)` for an output range starting at `o0`.
fn window(o0: u64, extent: u64, stride: u64, pad: u64, size: u64) -> (u64, u64, u64, u64) {
    let start = (o0 * stride) as i64 - pad as i64;
    let end = start + extent as i64;
    let lo = start.max(0);
    let hi = end.min(size as i64);
    if hi <= lo {
        return (0, 0, extent, 0);
    }
    (lo as u64, (hi - lo) as u64, (lo - start) as u64, (end - hi) as u64)
}

/// Lower a conv or dense layer under the given tiling.
///
/// The loop nest is `b_o, co, h, w_o` outside, `ci_o` inside. With two
/// virtual threads each context owns one half of every scratchpad and the
/// two alternate so the load of one overlaps the compute of the other.
pub fn gen_conv_stream(
    layer: &ConvLayer,
    cfg: &AccelConfig,
    p: &TilingParams,
    opts: GenOptions,
) -> Result<InstructionStream, CodegenError> {
    if !matches!(layer.kind, LayerKind::Conv | LayerKind::Dense) {
        return Err(CodegenError::UnsupportedKind(layer.kind));
    }
    if !layer.is_channel_padded(cfg) {
        return Err(CodegenError::NotPadded);
    }
    cfg.validate().map_err(|e| CodegenError::Unsupported(e.to_string()))?;
    let dims = TileDims::of(layer, cfg)?;
    tps::evaluate(layer, cfg, p)?;
    let it = InnerTiles::of(&dims, p);
    let threads = p.threads();
    let (kh, kw, sh, sw) = (layer.kh, layer.kw, layer.sh, layer.sw);
    let in_rows = (it.th_i - 1) * sh + kh;
    let in_cols = (it.tw_i - 1) * sw + kw;

    let inp_slot = it.tb_i * it.tci_i * in_rows * in_cols;
    let wgt_slot = it.tco_i * it.tci_i * kh * kw;
    let acc_slot = it.tb_i * it.tco_i * it.th_i * it.tw_i;
    let inp_base = slot_bases(cfg, MemKind::Inp, inp_slot, threads)?;
    let wgt_base = slot_bases(cfg, MemKind::Wgt, wgt_slot, threads)?;
    let acc_base = slot_bases(cfg, MemKind::Acc, acc_slot, threads)?;

    // micro-op table, per context: reset, accumulate, requantize
    let mut uops = Vec::new();
    let mut reset_uop = Vec::new();
    let mut gemm_uops = Vec::new();
    let mut alu_uop = Vec::new();
    for t in 0..threads as usize {
        reset_uop.push(uops.len() as u32);
        uops.push(Uop { acc_idx: acc_base[t], inp_idx: 0, wgt_idx: 0 });
        let begin = uops.len() as u32;
        for b_i in 0..it.tb_i {
            for co_i in 0..it.tco_i {
                for ci_i in 0..it.tci_i {
                    for ky in 0..kh {
                        for kx in 0..kw {
                            let acc = (b_i * it.tco_i + co_i) * it.th_i * it.tw_i;
                            let inp = ((b_i * it.tci_i + ci_i) * in_rows + ky) * in_cols + kx;
                            let wgt = ((co_i * it.tci_i + ci_i) * kh + ky) * kw + kx;
                            uops.push(Uop {
                                acc_idx: acc_base[t] + acc as u32,
                                inp_idx: inp_base[t] + inp as u32,
                                wgt_idx: wgt_base[t] + wgt as u32,
                            });
                        }
                    }
                }
            }
        }
        gemm_uops.push((begin, uops.len() as u32));
        alu_uop.push(uops.len() as u32);
        uops.push(Uop { acc_idx: acc_base[t], inp_idx: acc_base[t], wgt_idx: 0 });
    }
    if uops.len() as u64 > cfg.entries(MemKind::Uop) {
        return Err(CodegenError::ScratchpadOverflow {
            kind: MemKind::Uop,
            need: uops.len() as u64,
            contexts: 1,
            have: cfg.entries(MemKind::Uop),
        });
    }

    let acc_rows = to_u32(it.tb_i * it.tco_i * it.th_i, "accumulator rows")?;
    let tw_i = it.tw_i as u32;
    let reset = |t: usize| GemmInsn {
        reset: true,
        uop_begin: reset_uop[t],
        uop_end: reset_uop[t] + 1,
        iter_out: acc_rows,
        iter_in: tw_i,
        acc_factor_out: tw_i,
        acc_factor_in: 1,
        inp_factor_out: 0,
        inp_factor_in: 0,
        wgt_factor_out: 0,
        wgt_factor_in: 0,
    };
    let accumulate = |t: usize| GemmInsn {
        reset: false,
        uop_begin: gemm_uops[t].0,
        uop_end: gemm_uops[t].1,
        iter_out: it.th_i as u32,
        iter_in: tw_i,
        acc_factor_out: tw_i,
        acc_factor_in: 1,
        inp_factor_out: (sh * in_cols) as u32,
        inp_factor_in: sw as u32,
        wgt_factor_out: 0,
        wgt_factor_in: 0,
    };
    let requant = |t: usize, op: AluOp, imm: i32| AluInsn {
        reset: false,
        uop_begin: alu_uop[t],
        uop_end: alu_uop[t] + 1,
        iter_out: acc_rows,
        iter_in: tw_i,
        dst_factor_out: tw_i,
        dst_factor_in: 1,
        src_factor_out: tw_i,
        src_factor_in: 1,
        op,
        use_imm: true,
        imm,
    };

    let (oh, ow) = (dims.oh, dims.ow);
    let t_n = threads as usize;
    let outer = p.tb_o * (p.tco_o / p.oc_n) * (p.th_o / p.h_n) * p.tw_o;
    let load_groups = outer * p.tci_o * threads;
    let store_groups = outer * threads;
    let (mut load_g, mut gemm_g, mut slot_use, mut store_g) = (0u64, 0u64, 0u64, 0u64);

    let mut ins = vec![Instruction::load(MemInsn::contiguous(MemKind::Uop, 0, 0, uops.len() as u32))];
    for b_o in 0..p.tb_o {
        for co_g in 0..p.tco_o / p.oc_n {
            for h_g in 0..p.th_o / p.h_n {
                for w_o in 0..p.tw_o {
                    let ctx = |t: usize| {
                        let co_o = if p.oc_n == 2 { co_g * 2 + t as u64 } else { co_g };
                        let h_o = if p.h_n == 2 { h_g * 2 + t as u64 } else { h_g };
                        (co_o, h_o)
                    };
                    for t in 0..t_n {
                        let mut r = Instruction::new(Op::Gemm(reset(t)));
                        r.deps.pop_next = slot_use >= threads;
                        slot_use += 1;
                        ins.push(r);
                    }
                    let mut last_compute = vec![0usize; t_n];
                    for ci_o in 0..p.tci_o {
                        for t in 0..t_n {
                            let (co_o, h_o) = ctx(t);
                            let mut group = Vec::new();
                            for b_i in 0..it.tb_i {
                                for ci_i in 0..it.tci_i {
                                    let nb = b_o * it.tb_i + b_i;
                                    let c = ci_o * it.tci_i + ci_i;
                                    let (y0, ys, pt, pb) = window(h_o * it.th_i, in_rows, sh, layer.ph, layer.h);
                                    let (x0, xs, pl, pr) = window(w_o * it.tw_i, in_cols, sw, layer.pw, layer.w);
                                    let dram = ((nb * dims.d_in + c) * layer.h + y0) * layer.w + x0;
                                    let sram = inp_base[t] as u64 + (b_i * it.tci_i + ci_i) * in_rows * in_cols;
                                    group.push(MemInsn {
                                        kind: MemKind::Inp,
                                        sram_base: to_u32(sram, "sram_base")?,
                                        dram_base: to_u32(dram, "dram_base")?,
                                        y_size: ys as u32,
                                        x_size: if ys == 0 { 0 } else { xs as u32 },
                                        x_stride: layer.w as u32,
                                        y_pad_top: pt as u32,
                                        y_pad_bottom: pb as u32,
                                        x_pad_left: if ys == 0 { 0 } else { pl as u32 },
                                        x_pad_right: if ys == 0 { in_cols as u32 } else { pr as u32 },
                                        pad_kind: PadKind::Zero,
                                    });
                                }
                            }
                            let co0 = co_o * it.tco_i;
                            let ci0 = ci_o * it.tci_i;
                            group.push(MemInsn {
                                kind: MemKind::Wgt,
                                sram_base: wgt_base[t],
                                dram_base: to_u32((co0 * dims.d_in + ci0) * kh * kw, "dram_base")?,
                                y_size: it.tco_i as u32,
                                x_size: (it.tci_i * kh * kw) as u32,
                                x_stride: (dims.d_in * kh * kw) as u32,
                                y_pad_top: 0,
                                y_pad_bottom: 0,
                                x_pad_left: 0,
                                x_pad_right: 0,
                                pad_kind: PadKind::Zero,
                            });
                            let n = group.len();
                            for (k, m) in group.into_iter().enumerate() {
                                let mut l = Instruction::load(m);
                                l.deps.pop_next = k == 0 && load_g >= threads;
                                l.deps.push_next = k == n - 1;
                                ins.push(l);
                            }
                            load_g += 1;
                        }
                        for (t, last) in last_compute.iter_mut().enumerate() {
                            let mut g = Instruction::new(Op::Gemm(accumulate(t)));
                            g.deps.pop_prev = true;
                            g.deps.push_prev = gemm_g + threads < load_groups;
                            gemm_g += 1;
                            *last = ins.len();
                            ins.push(g);
                        }
                    }
                    for (t, last) in last_compute.iter_mut().enumerate() {
                        if let Some(s) = opts.shift {
                            *last = ins.len();
                            ins.push(Instruction::new(Op::Alu(requant(t, AluOp::Shr, s as i32))));
                        }
                        if let Some(c) = opts.clip {
                            *last = ins.len();
                            ins.push(Instruction::new(Op::Alu(requant(t, AluOp::Clip, c))));
                        }
                    }
                    for &i in &last_compute {
                        ins[i].deps.push_next = true;
                    }
                    for (t, &base) in acc_base.iter().enumerate().take(t_n) {
                        let (co_o, h_o) = ctx(t);
                        let n = it.tb_i * it.tco_i;
                        for k in 0..n {
                            let (b_i, co_i) = (k / it.tco_i, k % it.tco_i);
                            let nb = b_o * it.tb_i + b_i;
                            let co = co_o * it.tco_i + co_i;
                            let dram = ((nb * dims.d_out + co) * oh + h_o * it.th_i) * ow + w_o * it.tw_i;
                            let mut s = Instruction::store(MemInsn {
                                kind: MemKind::Out,
                                sram_base: base + (k * it.th_i * it.tw_i) as u32,
                                dram_base: to_u32(dram, "dram_base")?,
                                y_size: it.th_i as u32,
                                x_size: tw_i,
                                x_stride: ow as u32,
                                y_pad_top: 0,
                                y_pad_bottom: 0,
                                x_pad_left: 0,
                                x_pad_right: 0,
                                pad_kind: PadKind::Zero,
                            });
                            s.deps.pop_prev = k == 0;
                            s.deps.push_prev =
                                k == n - 1 && (store_g + threads < store_groups || store_g + 1 == store_groups);
                            ins.push(s);
                        }
                        store_g += 1;
                    }
                }
            }
        }
    }
    let mut fin = Instruction::finish();
    fin.deps.pop_next = true;
    ins.push(fin);

    let stream = InstructionStream {
        config: *cfg,
        instructions: ins,
        uops,
        meta: StreamMeta {
            layer: Some(layer.clone()),
            tiling: Some(*p),
            acc_weight_base: 0,
            slots: vec![
                SlotInfo { kind: MemKind::Inp, bases: inp_base, size: inp_slot as u32 },
                SlotInfo { kind: MemKind::Wgt, bases: wgt_base, size: wgt_slot as u32 },
            ],
        },
    };
    stream.check_encoding()?;
    Ok(stream)
}
