//! Functional semantics of each instruction and the scratchpad spans it
//! touches.

use crate::codegen::isa::{wrap_signed, AluInsn, GemmInsn, MemInsn, PadKind};
use crate::codegen::{DramImage, Uop};
use crate::config::{AccelConfig, MemKind};
use serde::{Deserialize, Serialize};

/// Final on-chip memory contents of a functional run.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Scratchpads {
    pub inp: Vec<i32>,
    pub wgt: Vec<i32>,
    pub acc: Vec<i32>,
    pub uop: Vec<Uop>,
}

impl Scratchpads {
    pub fn new(cfg: &AccelConfig) -> Self {
        let size = |k: MemKind| cfg.entries(k) as usize * cfg.tile_elems(k);
        Scratchpads {
            inp: vec![0; size(MemKind::Inp)],
            wgt: vec![0; size(MemKind::Wgt)],
            acc: vec![0; size(MemKind::Acc)],
            uop: vec![Uop::default(); cfg.entries(MemKind::Uop) as usize],
        }
    }

    fn data_mut(&mut self, kind: MemKind) -> &mut Vec<i32> {
        match kind {
            MemKind::Inp => &mut self.inp,
            MemKind::Wgt => &mut self.wgt,
            _ => &mut self.acc,
        }
    }
}

/// Scratchpad entries `[lo, hi)` touched by one instruction.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Span {
    pub mem: MemKind,
    pub write: bool,
    pub lo: u64,
    pub hi: u64,
}

fn merged(mem: MemKind, write: bool, mut v: Vec<(u64, u64)>) -> Vec<Span> {
    v.sort_unstable();
    let mut out: Vec<Span> = Vec::new();
    for (lo, hi) in v {
        match out.last_mut() {
            Some(s) if lo <= s.hi => s.hi = s.hi.max(hi),
            _ => out.push(Span { mem, write, lo, hi }),
        }
    }
    out
}

fn extent(base: u32, iters: (u32, u32), f: (u32, u32)) -> (u64, u64) {
    let hi = base as u64 + (iters.0 as u64 - 1) * f.0 as u64 + (iters.1 as u64 - 1) * f.1 as u64 + 1;
    (base as u64, hi)
}

pub fn gemm_spans(g: &GemmInsn, uops: &[Uop]) -> Vec<Span> {
    let mut spans = vec![Span { mem: MemKind::Uop, write: false, lo: g.uop_begin as u64, hi: g.uop_end as u64 }];
    if g.iter_out == 0 || g.iter_in == 0 {
        return spans;
    }
    let it = (g.iter_out, g.iter_in);
    let (mut acc, mut inp, mut wgt) = (Vec::new(), Vec::new(), Vec::new());
    for u in &uops[g.uop_begin as usize..g.uop_end as usize] {
        acc.push(extent(u.acc_idx, it, (g.acc_factor_out, g.acc_factor_in)));
        if !g.reset {
            inp.push(extent(u.inp_idx, it, (g.inp_factor_out, g.inp_factor_in)));
            wgt.push(extent(u.wgt_idx, it, (g.wgt_factor_out, g.wgt_factor_in)));
        }
    }
    spans.extend(merged(MemKind::Acc, true, acc));
    spans.extend(merged(MemKind::Inp, false, inp));
    spans.extend(merged(MemKind::Wgt, false, wgt));
    spans
}

pub fn alu_spans(a: &AluInsn, uops: &[Uop]) -> Vec<Span> {
    let mut spans = vec![Span { mem: MemKind::Uop, write: false, lo: a.uop_begin as u64, hi: a.uop_end as u64 }];
    if a.iter_out == 0 || a.iter_in == 0 {
        return spans;
    }
    let it = (a.iter_out, a.iter_in);
    let (mut dst, mut src) = (Vec::new(), Vec::new());
    for u in &uops[a.uop_begin as usize..a.uop_end as usize] {
        dst.push(extent(u.acc_idx, it, (a.dst_factor_out, a.dst_factor_in)));
        if !a.use_imm && !a.reset {
            src.push(extent(u.inp_idx, it, (a.src_factor_out, a.src_factor_in)));
        }
    }
    spans.extend(merged(MemKind::Acc, true, dst));
    spans.extend(merged(MemKind::Acc, false, src));
    spans
}

pub fn load_span(m: &MemInsn) -> Span {
    Span {
        mem: if m.kind == MemKind::Out { MemKind::Acc } else { m.kind },
        write: true,
        lo: m.sram_base as u64,
        hi: m.sram_base as u64 + m.footprint() as u64,
    }
}

pub fn store_span(m: &MemInsn) -> Span {
    Span { mem: MemKind::Acc, write: false, lo: m.sram_base as u64, hi: m.sram_base as u64 + m.data_tiles() }
}

fn check(kind: MemKind, hi: u64, cfg: &AccelConfig) -> Result<(), String> {
    let cap = cfg.entries(kind);
    if hi > cap {
        Err(format!("{kind} access up to entry {hi} exceeds {cap} entries"))
    } else {
        Ok(())
    }
}

/// Check that every span lies inside its scratchpad.
pub fn check_spans(spans: &[Span], cfg: &AccelConfig) -> Result<(), String> {
    spans.iter().try_for_each(|s| check(s.mem, s.hi, cfg))
}

pub fn gemm(sp: &mut Scratchpads, g: &GemmInsn, cfg: &AccelConfig) {
    let (bv, bi, bo) = (cfg.batch as usize, cfg.block_in as usize, cfg.block_out as usize);
    let acc_bits = cfg.acc_elem_bits;
    for i0 in 0..g.iter_out {
        for i1 in 0..g.iter_in {
            for u in g.uop_begin..g.uop_end {
                let uop = sp.uop[u as usize];
                let a = (uop.acc_idx + i0 * g.acc_factor_out + i1 * g.acc_factor_in) as usize * bv * bo;
                if g.reset {
                    sp.acc[a..a + bv * bo].fill(0);
                    continue;
                }
                let x = (uop.inp_idx + i0 * g.inp_factor_out + i1 * g.inp_factor_in) as usize * bv * bi;
                let w = (uop.wgt_idx + i0 * g.wgt_factor_out + i1 * g.wgt_factor_in) as usize * bo * bi;
                for b in 0..bv {
                    let row = &sp.inp[x + b * bi..x + (b + 1) * bi];
                    for o in 0..bo {
                        let col = &sp.wgt[w + o * bi..w + (o + 1) * bi];
                        let dot: i64 = row.iter().zip(col).map(|(&p, &q)| p as i64 * q as i64).sum();
                        let slot = &mut sp.acc[a + b * bo + o];
                        *slot = wrap_signed(*slot as i64 + dot, acc_bits) as i32;
                    }
                }
            }
        }
    }
}

pub fn alu(sp: &mut Scratchpads, a: &AluInsn, cfg: &AccelConfig) {
    let lanes = cfg.tile_elems(MemKind::Acc);
    let bits = cfg.acc_elem_bits;
    for i0 in 0..a.iter_out {
        for i1 in 0..a.iter_in {
            for u in a.uop_begin..a.uop_end {
                let uop = sp.uop[u as usize];
                let d = (uop.acc_idx + i0 * a.dst_factor_out + i1 * a.dst_factor_in) as usize * lanes;
                if a.reset {
                    sp.acc[d..d + lanes].fill(0);
                    continue;
                }
                let s = (uop.inp_idx + i0 * a.src_factor_out + i1 * a.src_factor_in) as usize * lanes;
                for l in 0..lanes {
                    let src = if a.use_imm { a.imm as i64 } else { sp.acc[s + l] as i64 };
                    sp.acc[d + l] = a.op.apply(sp.acc[d + l] as i64, src, bits) as i32;
                }
            }
        }
    }
}

/// Fill the destination of a LOAD from DRAM (and pad values).
pub fn load(sp: &mut Scratchpads, m: &MemInsn, cfg: &AccelConfig, dram: &DramImage, uops: &[Uop]) {
    let cols = m.cols();
    for r in 0..m.rows() {
        for c in 0..cols {
            let entry = (m.sram_base + r * cols + c) as usize;
            let data_row = r >= m.y_pad_top && r < m.y_pad_top + m.y_size;
            let data_col = c >= m.x_pad_left && c < m.x_pad_left + m.x_size;
            let src = (data_row && data_col)
                .then(|| (m.dram_base + (r - m.y_pad_top) * m.x_stride + (c - m.x_pad_left)) as usize);
            if m.kind == MemKind::Uop {
                sp.uop[entry] = src.and_then(|t| uops.get(t).copied()).unwrap_or_default();
                continue;
            }
            let n = cfg.tile_elems(m.kind);
            let pad = match m.pad_kind {
                PadKind::Zero => 0,
                PadKind::MinValue => -(1i64 << (cfg.elem_bits(m.kind) - 1)) as i32,
            };
            let region = dram.region(m.kind);
            let dst = &mut sp.data_mut(m.kind)[entry * n..(entry + 1) * n];
            match src {
                Some(t) => {
                    for (e, d) in dst.iter_mut().enumerate() {
                        *d = region.get(t * n + e).copied().unwrap_or(0);
                    }
                }
                None => dst.fill(pad),
            }
        }
    }
}

/// Read the accumulator tiles a STORE writes out, narrowed to the output
/// element width by truncation.
pub fn store_data(sp: &Scratchpads, m: &MemInsn, cfg: &AccelConfig) -> Vec<i32> {
    let n = cfg.tile_elems(MemKind::Acc);
    let lo = m.sram_base as usize * n;
    let hi = lo + m.data_tiles() as usize * n;
    sp.acc[lo..hi].iter().map(|&v| wrap_signed(v as i64, cfg.out_elem_bits) as i32).collect()
}

pub fn store_commit(dram: &mut DramImage, m: &MemInsn, cfg: &AccelConfig, data: &[i32]) {
    let n = cfg.tile_elems(MemKind::Out);
    let out = dram.region_mut(MemKind::Out);
    for r in 0..m.y_size {
        for c in 0..m.x_size {
            let t = (m.dram_base + r * m.x_stride + c) as usize;
            if out.len() < (t + 1) * n {
                out.resize((t + 1) * n, 0);
            }
            let s = ((r * m.x_size + c) as usize) * n;
            out[t * n..(t + 1) * n].copy_from_slice(&data[s..s + n]);
        }
    }
}
