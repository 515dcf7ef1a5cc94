//! DRAM images and the tiled tensor layouts the generated streams expect.
//!
//! Each memory kind has its own address space measured in tiles. Element
//! values are held unpacked (one `i32` per element, already wrapped to the
//! kind's element width) since only their count crosses the bus model.

use super::isa::wrap_signed;
use crate::config::{AccelConfig, MemKind};
use crate::workload::{ConvLayer, LayerKind};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

/// Dense NCHW (or OIHW) tensor of integers.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Tensor4 {
    pub dims: [usize; 4],
    pub data: Vec<i32>,
}

impl Tensor4 {
    pub fn zeros(dims: [usize; 4]) -> Self {
        Tensor4 { dims, data: vec![0; dims.iter().product()] }
    }

    pub fn from_fn(dims: [usize; 4], mut f: impl FnMut(usize, usize, usize, usize) -> i32) -> Self {
        let mut t = Self::zeros(dims);
        for a in 0..dims[0] {
            for b in 0..dims[1] {
                for c in 0..dims[2] {
                    for d in 0..dims[3] {
                        let i = t.offset(a, b, c, d);
                        t.data[i] = f(a, b, c, d);
                    }
                }
            }
        }
        t
    }

    fn offset(&self, a: usize, b: usize, c: usize, d: usize) -> usize {
        ((a * self.dims[1] + b) * self.dims[2] + c) * self.dims[3] + d
    }

    pub fn get(&self, a: usize, b: usize, c: usize, d: usize) -> i32 {
        self.data[self.offset(a, b, c, d)]
    }

    pub fn set(&mut self, a: usize, b: usize, c: usize, d: usize, v: i32) {
        let i = self.offset(a, b, c, d);
        self.data[i] = v;
    }
}

/// Seeded int8 input and weight tensors for a layer in its logical shapes:
/// NCHW input, OIHW weights (one input channel per filter for depthwise)
/// and no weights for pooling.
pub fn sample_layer_data(layer: &ConvLayer, seed: u64) -> (Tensor4, Option<Tensor4>) {
    let mut r = ChaCha8Rng::seed_from_u64(seed);
    let mut sample = |dims: [usize; 4]| Tensor4::from_fn(dims, |_, _, _, _| r.gen_range(-128..128));
    let (b, fi, fo) = (layer.b as usize, layer.fi as usize, layer.fo as usize);
    let (kh, kw) = (layer.kh as usize, layer.kw as usize);
    let input = sample([b, fi, layer.h as usize, layer.w as usize]);
    let weights = match layer.kind {
        LayerKind::Conv | LayerKind::Dense => Some(sample([fo, fi, kh, kw])),
        LayerKind::Depthwise => Some(sample([fi, 1, kh, kw])),
        LayerKind::Maxpool | LayerKind::Avgpool => None,
    };
    (input, weights)
}

/// Element storage for every DRAM region the data path touches.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct DramImage {
    pub inp: Vec<i32>,
    pub wgt: Vec<i32>,
    pub acc: Vec<i32>,
    pub out: Vec<i32>,
}

impl DramImage {
    pub fn region(&self, kind: MemKind) -> &[i32] {
        match kind {
            MemKind::Inp => &self.inp,
            MemKind::Wgt => &self.wgt,
            MemKind::Acc => &self.acc,
            MemKind::Out => &self.out,
            _ => &[],
        }
    }

    pub fn region_mut(&mut self, kind: MemKind) -> &mut Vec<i32> {
        match kind {
            MemKind::Inp => &mut self.inp,
            MemKind::Wgt => &mut self.wgt,
            MemKind::Acc => &mut self.acc,
            MemKind::Out => &mut self.out,
            other => panic!("no data region for {other}"),
        }
    }
}

fn u(n: u64) -> usize {
    n as usize
}

/// Conv/dense input: tiles `[b/batch][fi/BI][h][w]`, each `batch x BI`.
pub fn pack_conv_input(layer: &ConvLayer, cfg: &AccelConfig, x: &Tensor4) -> Vec<i32> {
    let (bv, bi) = (cfg.batch as usize, cfg.block_in as usize);
    let (nb, d_in, h, w) = (u(layer.b) / bv, u(layer.fi) / bi, u(layer.h), u(layer.w));
    let bits = cfg.inp_elem_bits;
    let mut out = vec![0; nb * d_in * h * w * bv * bi];
    for (n, c, y, xx) in iter4([x.dims[0], x.dims[1], x.dims[2], x.dims[3]]) {
        let tile = ((n / bv * d_in + c / bi) * h + y) * w + xx;
        out[tile * bv * bi + (n % bv) * bi + c % bi] = wrap_signed(x.get(n, c, y, xx) as i64, bits) as i32;
    }
    out
}

/// Conv/dense weights (OIHW): tiles `[fo/BO][fi/BI][kh][kw]`, each `BO x BI`.
pub fn pack_conv_weights(layer: &ConvLayer, cfg: &AccelConfig, wt: &Tensor4) -> Vec<i32> {
    let (bo, bi) = (cfg.block_out as usize, cfg.block_in as usize);
    let (d_out, d_in, kh, kw) = (u(layer.fo) / bo, u(layer.fi) / bi, u(layer.kh), u(layer.kw));
    let bits = cfg.wgt_elem_bits;
    let mut out = vec![0; d_out * d_in * kh * kw * bo * bi];
    for (o, i, y, x) in iter4(wt.dims) {
        let tile = ((o / bo * d_in + i / bi) * kh + y) * kw + x;
        out[tile * bo * bi + (o % bo) * bi + i % bi] = wrap_signed(wt.get(o, i, y, x) as i64, bits) as i32;
    }
    out
}

/// ALU-layer input held in the accumulator region: tiles
/// `[b/batch][c/BO][h][w]`, each `batch x BO`.
pub fn pack_acc_input(layer: &ConvLayer, cfg: &AccelConfig, x: &Tensor4) -> Vec<i32> {
    let (bv, bo) = (cfg.batch as usize, cfg.block_out as usize);
    let (nb, d, h, w) = (u(layer.b) / bv, u(layer.fi) / bo, u(layer.h), u(layer.w));
    let bits = cfg.acc_elem_bits;
    let mut out = vec![0; nb * d * h * w * bv * bo];
    for (n, c, y, xx) in iter4(x.dims) {
        let tile = ((n / bv * d + c / bo) * h + y) * w + xx;
        out[tile * bv * bo + (n % bv) * bo + c % bo] = wrap_signed(x.get(n, c, y, xx) as i64, bits) as i32;
    }
    out
}

/// Depthwise weights `(c, 1, kh, kw)` as accumulator tiles `[c/BO][kh][kw]`,
/// each row of the tile holding the same per-channel taps.
pub fn pack_acc_depthwise_weights(layer: &ConvLayer, cfg: &AccelConfig, wt: &Tensor4) -> Vec<i32> {
    let (bv, bo) = (cfg.batch as usize, cfg.block_out as usize);
    let (d, kh, kw) = (u(layer.fi) / bo, u(layer.kh), u(layer.kw));
    let bits = cfg.acc_elem_bits;
    let mut out = vec![0; d * kh * kw * bv * bo];
    for (c, _, y, x) in iter4(wt.dims) {
        let tile = (c / bo * kh + y) * kw + x;
        for r in 0..bv {
            out[tile * bv * bo + r * bo + c % bo] = wrap_signed(wt.get(c, 0, y, x) as i64, bits) as i32;
        }
    }
    out
}

/// Read `(b, c, oh, ow)` back from an output region laid out as tiles
/// `[b/batch][fo/BO][oh][ow]`, each `batch x BO`.
pub fn unpack_output(layer: &ConvLayer, cfg: &AccelConfig, region: &[i32], b: usize, c: usize) -> Tensor4 {
    let (bv, bo) = (cfg.batch as usize, cfg.block_out as usize);
    let (oh, ow) = layer.output_dims();
    let (oh, ow) = (u(oh), u(ow));
    let d_out = u(layer.fo) / bo;
    Tensor4::from_fn([b, c, oh, ow], |n, ch, y, x| {
        let tile = ((n / bv * d_out + ch / bo) * oh + y) * ow + x;
        region[tile * bv * bo + (n % bv) * bo + ch % bo]
    })
}

fn iter4(d: [usize; 4]) -> impl Iterator<Item = (usize, usize, usize, usize)> {
    (0..d[0]).flat_map(move |a| {
        (0..d[1]).flat_map(move |b| (0..d[2]).flat_map(move |c| (0..d[3]).map(move |e| (a, b, c, e))))
    })
}
