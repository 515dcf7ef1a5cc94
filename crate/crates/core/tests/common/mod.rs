//! Independent oracles and generators shared by the integration tests.
#![allow(dead_code)]

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use tilelab::codegen::isa::{AluInsn, AluOp, GemmInsn, MemInsn, Module, Op};
use tilelab::codegen::{compile_layer, eliminate_redundant_loads, static_dram_bytes, GenOptions, Tensor4};
use tilelab::engine::{run_functional, SimReport};
use tilelab::tps::TilingParams;
use tilelab::{AccelConfig, ConvLayer, Instruction, InstructionStream, LayerKind, MemKind, Uop};

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn random_tensor(r: &mut ChaCha8Rng, dims: [usize; 4]) -> Tensor4 {
    Tensor4::from_fn(dims, |_, _, _, _| r.gen_range(-128..128))
}

/// Two's-complement wrap to `bits`.
pub fn wrap(v: i64, bits: u32) -> i64 {
    let m = 1i128 << bits;
    let mut x = (v as i128).rem_euclid(m);
    if x >= m / 2 {
        x -= m;
    }
    x as i64
}

fn requant(acc: i64, opts: GenOptions, acc_bits: u32, out_bits: u32) -> i32 {
    let mut v = wrap(acc, acc_bits);
    if let Some(s) = opts.shift {
        v >>= s;
    }
    if let Some(c) = opts.clip {
        v = v.clamp(0, c as i64);
    }
    wrap(v, out_bits) as i32
}

/// Input value under kernel tap `(ky, kx)` of output `(n, c, y, xx)`, or
/// `None` in the padding.
fn input_at(l: &ConvLayer, x: &Tensor4, [n, c, y, xx]: [usize; 4], (ky, kx): (u64, u64)) -> Option<i64> {
    let iy = (y as u64 * l.sh + ky) as i64 - l.ph as i64;
    let ix = (xx as u64 * l.sw + kx) as i64 - l.pw as i64;
    let inside = iy >= 0 && ix >= 0 && iy < l.h as i64 && ix < l.w as i64;
    inside.then(|| x.get(n, c, iy as usize, ix as usize) as i64)
}

/// Direct convolution with zero padding, then requantization.
pub fn conv_oracle(l: &ConvLayer, x: &Tensor4, w: &Tensor4, opts: GenOptions, cfg: &AccelConfig) -> Tensor4 {
    let (oh, ow) = l.output_dims();
    Tensor4::from_fn([x.dims[0], w.dims[0], oh as usize, ow as usize], |n, o, y, xx| {
        let mut acc = 0i64;
        for c in 0..x.dims[1] {
            for ky in 0..l.kh {
                for kx in 0..l.kw {
                    if let Some(v) = input_at(l, x, [n, c, y, xx], (ky, kx)) {
                        acc += v * w.get(o, c, ky as usize, kx as usize) as i64;
                    }
                }
            }
        }
        requant(acc, opts, cfg.acc_elem_bits, cfg.out_elem_bits)
    })
}

/// Per-channel convolution with weights shaped `[c, 1, kh, kw]`.
pub fn depthwise_oracle(l: &ConvLayer, x: &Tensor4, w: &Tensor4, opts: GenOptions, cfg: &AccelConfig) -> Tensor4 {
    let (oh, ow) = l.output_dims();
    Tensor4::from_fn([x.dims[0], x.dims[1], oh as usize, ow as usize], |n, c, y, xx| {
        let mut acc = 0i64;
        for ky in 0..l.kh {
            for kx in 0..l.kw {
                if let Some(v) = input_at(l, x, [n, c, y, xx], (ky, kx)) {
                    acc = wrap(
                        acc + wrap(v * w.get(c, 0, ky as usize, kx as usize) as i64, cfg.acc_elem_bits),
                        cfg.acc_elem_bits,
                    );
                }
            }
        }
        requant(acc, opts, cfg.acc_elem_bits, cfg.out_elem_bits)
    })
}

/// Max over in-bounds taps, or the zero-padded window sum shifted by
/// log2 of the window size.
pub fn pool_oracle(l: &ConvLayer, x: &Tensor4, opts: GenOptions, cfg: &AccelConfig) -> Tensor4 {
    let (oh, ow) = l.output_dims();
    Tensor4::from_fn([x.dims[0], x.dims[1], oh as usize, ow as usize], |n, c, y, xx| {
        let mut taps = Vec::new();
        for ky in 0..l.kh {
            for kx in 0..l.kw {
                taps.push(input_at(l, x, [n, c, y, xx], (ky, kx)));
            }
        }
        let v = match l.kind {
            LayerKind::Maxpool => taps.iter().flatten().copied().max().expect("window has a valid tap"),
            LayerKind::Avgpool => {
                let sum: i64 = taps.iter().map(|t| t.unwrap_or(0)).sum();
                sum >> (l.kh * l.kw).trailing_zeros()
            }
            k => panic!("not a pooling layer: {k:?}"),
        };
        requant(v, opts, cfg.acc_elem_bits, cfg.out_elem_bits)
    })
}

/// Reference output for any supported layer kind.
pub fn layer_oracle(l: &ConvLayer, x: &Tensor4, w: Option<&Tensor4>, opts: GenOptions, cfg: &AccelConfig) -> Tensor4 {
    match l.kind {
        LayerKind::Conv | LayerKind::Dense => conv_oracle(l, x, w.expect("weights"), opts, cfg),
        LayerKind::Depthwise => depthwise_oracle(l, x, w.expect("weights"), opts, cfg),
        _ => pool_oracle(l, x, opts, cfg),
    }
}

/// Inputs and weights for a layer in logical (unpadded) shapes.
pub fn layer_tensors(r: &mut ChaCha8Rng, l: &ConvLayer) -> (Tensor4, Option<Tensor4>) {
    let (b, fi, fo) = (l.b as usize, l.fi as usize, l.fo as usize);
    let x = random_tensor(r, [b, fi, l.h as usize, l.w as usize]);
    let w = match l.kind {
        LayerKind::Conv | LayerKind::Dense => Some(random_tensor(r, [fo, fi, l.kh as usize, l.kw as usize])),
        LayerKind::Depthwise => Some(random_tensor(r, [fi, 1, l.kh as usize, l.kw as usize])),
        _ => None,
    };
    (x, w)
}

pub struct LayerRun {
    pub stream: InstructionStream,
    pub tiling: Option<TilingParams>,
    pub report: SimReport,
    pub got: Tensor4,
    pub want: Tensor4,
}

/// Search, lower, optionally deduplicate and execute one layer, returning
/// the machine output alongside the oracle's.
pub fn run_layer(
    l: &ConvLayer,
    cfg: &AccelConfig,
    opts: GenOptions,
    seed: u64,
    dedup: bool,
    data_seed: u64,
) -> Result<LayerRun, String> {
    let (stream, tiling) = compile_layer(l, cfg, opts).map_err(|e| e.to_string())?;
    let stream = if dedup { eliminate_redundant_loads(&stream) } else { stream };
    let mut r = rng(data_seed);
    let (x, w) = layer_tensors(&mut r, l);
    let dram = stream.prepare_dram(&x, w.as_ref()).map_err(|e| e.to_string())?;
    let report = run_functional(&stream, cfg, seed, dram).map_err(|e| e.to_string())?;
    if !report.completed {
        return Err(format!("{:?}", report.deadlock));
    }
    let out_c = if l.kind.is_alu_only() { l.fi } else { l.fo } as usize;
    let got = stream
        .read_output(report.dram.as_ref().expect("functional image"), l.b as usize, out_c)
        .map_err(|e| e.to_string())?;
    let want = layer_oracle(l, &x, w.as_ref(), opts, cfg);
    Ok(LayerRun { stream, tiling, report, got, want })
}

/// Whether a run moved exactly the bytes its instructions imply.
pub fn conserves(stream: &InstructionStream, report: &SimReport) -> bool {
    report.dram_bytes() == static_dram_bytes(stream)
}

/// Brute-force tiling search written straight from the cost model: nested
/// loops over every factor, exact integer arithmetic, first strictly
/// better candidate wins under (cost, s_acc, params) order.
pub fn brute_force_tps(l: &ConvLayer, cfg: &AccelConfig) -> Option<(TilingParams, u64)> {
    let (bv, bi, bo) = (cfg.batch as u64, cfg.block_in as u64, cfg.block_out as u64);
    let oh = (l.h + 2 * l.ph - l.kh) / l.sh + 1;
    let ow = (l.w + 2 * l.pw - l.kw) / l.sw + 1;
    let (nb, d_in, d_out) = (l.b / bv, l.fi / bi, l.fo / bo);
    let inp_b = cfg.inp_elem_bits as u64;
    let wgt_b = cfg.wgt_elem_bits as u64;
    let acc_b = cfg.acc_elem_bits as u64;
    let extent = |n: u64, t: u64, p: u64, k: u64, s: u64| -> Option<u64> {
        if !n.is_multiple_of(t) {
            return None;
        }
        let num = (n / t + 2 * p) as i64 - k as i64;
        let e = num.div_euclid(s as i64) * s as i64 + k as i64;
        if e > 0 {
            Some(e as u64)
        } else {
            None
        }
    };
    let mut best: Option<(u64, u64, [u64; 7])> = None;
    for tb_o in 1..=nb {
        for th_o in 1..=oh {
            for tw_o in 1..=ow {
                for tco_o in 1..=d_out {
                    for tci_o in 1..=d_in {
                        for (oc_n, h_n) in [(1u64, 1u64), (2, 1), (1, 2)] {
                            if nb % tb_o != 0
                                || !oh.is_multiple_of(th_o)
                                || !ow.is_multiple_of(tw_o)
                                || d_out % tco_o != 0
                                || d_in % tci_o != 0
                            {
                                continue;
                            }
                            if (oc_n == 2 && tco_o % 2 != 0) || (h_n == 2 && th_o % 2 != 0) {
                                continue;
                            }
                            let tb_i = nb / tb_o;
                            let (Some(rows), Some(cols)) =
                                (extent(l.h, th_o, l.ph, l.kh, l.sh), extent(l.w, tw_o, l.pw, l.kw, l.sw))
                            else {
                                continue;
                            };
                            let threads = oc_n * h_n;
                            let s_inp = tb_i * (d_in / tci_o) * rows * cols * bv * bi * threads * inp_b / 8;
                            let s_wgt = d_out * d_in * l.kh * l.kw * bo * bi / (tco_o * tci_o) * threads * wgt_b / 8;
                            let s_acc = (nb * d_out * oh * ow * bv * bo / (tb_o * tco_o * th_o * tw_o)
                                + l.fo * l.b / (tb_o * tco_o))
                                * threads
                                * acc_b
                                / 8;
                            if s_inp > cfg.c_inp || s_wgt > cfg.c_wgt || s_acc > cfg.c_acc {
                                continue;
                            }
                            let mult = tb_o * (th_o / h_n) * (tco_o / oc_n) * tw_o * tci_o;
                            let cost = mult * s_inp + mult * s_wgt + tb_o * th_o * tw_o * l.fo * acc_b / 8;
                            let key = [tb_o, th_o, tw_o, tco_o, tci_o, oc_n, h_n];
                            let better = match &best {
                                None => true,
                                Some((c, s, k)) => (cost, s_acc, key) < (*c, *s, *k),
                            };
                            if better {
                                best = Some((cost, s_acc, key));
                            }
                        }
                    }
                }
            }
        }
    }
    best.map(|(cost, _, k)| {
        (TilingParams { tb_o: k[0], th_o: k[1], tw_o: k[2], tco_o: k[3], tci_o: k[4], oc_n: k[5], h_n: k[6] }, cost)
    })
}

/// A random stream that is dependency-correct by construction: phases of
/// loads, compute and stores rotate through buffer slots, and a slot is
/// reused only after a token proves its last reader finished.
pub fn fuzz_stream(r: &mut ChaCha8Rng, cfg: &AccelConfig) -> InstructionStream {
    let phases = r.gen_range(1..=8usize);
    let s_in = r.gen_range(1..=3usize);
    let s_acc = r.gen_range(1..=3usize);
    let slot = |kind: MemKind, n: usize| (cfg.entries(kind) as usize / n).min(64) as u32;
    let (inp_slot, wgt_slot, acc_slot) =
        (slot(MemKind::Inp, s_in), slot(MemKind::Wgt, s_in), slot(MemKind::Acc, s_acc));

    let mut uops: Vec<Uop> = Vec::new();
    let mut lanes: [Vec<Instruction>; 3] = Default::default();
    let mut out_base = 0u32;
    for p in 0..phases {
        let (si, sa) = ((p % s_in) as u32, (p % s_acc) as u32);
        let n_inp = r.gen_range(1..=inp_slot.min(8));
        let n_wgt = r.gen_range(1..=wgt_slot.min(4));
        let n_acc = r.gen_range(1..=acc_slot.min(8));
        let (inp0, wgt0, acc0) = (si * inp_slot, si * wgt_slot, sa * acc_slot);

        let mut loads = vec![
            Instruction::load(MemInsn::contiguous(MemKind::Inp, inp0, r.gen_range(0..64), n_inp)),
            Instruction::load(MemInsn::contiguous(MemKind::Wgt, wgt0, r.gen_range(0..64), n_wgt)),
        ];
        if n_inp >= 2 && r.gen_bool(0.3) {
            let mut padded = MemInsn::contiguous(MemKind::Inp, inp0, r.gen_range(0..64), n_inp - 1);
            padded.x_pad_left = 1;
            loads.push(Instruction::load(padded));
        }
        loads.shuffle(r);
        if p >= s_in {
            loads[0].deps.pop_next = true;
        }
        loads.last_mut().unwrap().deps.push_next = true;
        lanes[0].extend(loads);

        let mut compute = Vec::new();
        if r.gen_bool(0.3) {
            compute.push(Instruction::load(MemInsn::contiguous(MemKind::Acc, acc0, r.gen_range(0..64), n_acc)));
        } else {
            let u = uops.len() as u32;
            uops.push(Uop { acc_idx: acc0, inp_idx: 0, wgt_idx: 0 });
            compute.push(Instruction::new(Op::Gemm(GemmInsn {
                reset: true,
                uop_begin: u,
                uop_end: u + 1,
                iter_out: 1,
                iter_in: n_acc,
                acc_factor_out: 0,
                acc_factor_in: 1,
                inp_factor_out: 0,
                inp_factor_in: 0,
                wgt_factor_out: 0,
                wgt_factor_in: 0,
            })));
        }
        for _ in 0..r.gen_range(1..=3) {
            let begin = uops.len() as u32;
            for _ in 0..r.gen_range(1..=3) {
                uops.push(Uop {
                    acc_idx: acc0 + r.gen_range(0..n_acc),
                    inp_idx: inp0 + r.gen_range(0..n_inp),
                    wgt_idx: wgt0 + r.gen_range(0..n_wgt),
                });
            }
            compute.push(Instruction::new(Op::Gemm(GemmInsn {
                reset: false,
                uop_begin: begin,
                uop_end: uops.len() as u32,
                iter_out: 1,
                iter_in: 1,
                acc_factor_out: 0,
                acc_factor_in: 0,
                inp_factor_out: 0,
                inp_factor_in: 0,
                wgt_factor_out: 0,
                wgt_factor_in: 0,
            })));
        }
        for _ in 0..r.gen_range(0..=2) {
            let u = uops.len() as u32;
            uops.push(Uop { acc_idx: acc0 + r.gen_range(0..n_acc), inp_idx: acc0 + r.gen_range(0..n_acc), wgt_idx: 0 });
            let op = *[AluOp::Add, AluOp::Max, AluOp::Min, AluOp::Shr, AluOp::Mul, AluOp::Clip].choose(r).unwrap();
            let use_imm = op == AluOp::Clip || r.gen_bool(0.5);
            compute.push(Instruction::new(Op::Alu(AluInsn {
                reset: false,
                uop_begin: u,
                uop_end: u + 1,
                iter_out: 1,
                iter_in: 1,
                dst_factor_out: 0,
                dst_factor_in: 0,
                src_factor_out: 0,
                src_factor_in: 0,
                op,
                use_imm,
                imm: r.gen_range(0..8),
            })));
        }
        compute[0].deps.pop_prev = true;
        if p >= s_acc {
            compute[0].deps.pop_next = true;
        }
        let last = compute.last_mut().unwrap();
        last.deps.push_prev = p + s_in < phases;
        last.deps.push_next = true;
        lanes[1].extend(compute);

        let mut store = Instruction::store(MemInsn::contiguous(MemKind::Out, acc0, out_base, n_acc));
        out_base += n_acc;
        store.deps.pop_prev = true;
        store.deps.push_prev = p + s_acc < phases || p + 1 == phases;
        lanes[2].push(store);
    }

    let mut s = InstructionStream::new(*cfg);
    s.instructions.push(Instruction::load(MemInsn::contiguous(MemKind::Uop, 0, 0, uops.len() as u32)));
    s.uops = uops;
    // Interleave the three lanes at random, keeping each lane's order.
    let mut next = [0usize; 3];
    loop {
        let open: Vec<usize> = (0..3).filter(|&m| next[m] < lanes[m].len()).collect();
        let Some(&m) = open.choose(r) else { break };
        s.instructions.push(lanes[m][next[m]]);
        next[m] += 1;
    }
    let mut finish = Instruction::finish();
    finish.deps.pop_next = true;
    s.instructions.push(finish);
    s
}

/// Add one pop that no push can ever satisfy.
pub fn with_extraneous_pop(r: &mut ChaCha8Rng, s: &InstructionStream) -> InstructionStream {
    let mut out = s.clone();
    loop {
        let i = r.gen_range(0..out.instructions.len());
        let ins = &mut out.instructions[i];
        let options: Vec<bool> = match ins.module() {
            Module::Load => vec![false],
            Module::Compute => vec![true, false],
            Module::Store => vec![true],
        };
        let prev = *options.choose(r).unwrap();
        let flag = if prev { &mut ins.deps.pop_prev } else { &mut ins.deps.pop_next };
        if !*flag {
            *flag = true;
            return out;
        }
    }
}

pub fn config(batch: u32, block_in: u32, block_out: u32) -> AccelConfig {
    AccelConfig { batch, block_in, block_out, ..AccelConfig::default() }
}

pub fn op_kind(ins: &Instruction) -> Option<MemKind> {
    match &ins.op {
        Op::Load(m) => Some(m.kind),
        _ => None,
    }
}

/// Compute-bound stream: one uop load, then `count` GEMMs of `iters`² iterations.
pub fn gemm_stream(cfg: &AccelConfig, iters: u32, count: usize) -> InstructionStream {
    let mut s = InstructionStream::new(*cfg);
    s.uops = vec![Uop::default()];
    s.instructions.push(Instruction::load(MemInsn::contiguous(MemKind::Uop, 0, 0, 1)));
    for _ in 0..count {
        s.instructions.push(Instruction::new(Op::Gemm(GemmInsn {
            reset: false,
            uop_begin: 0,
            uop_end: 1,
            iter_out: iters,
            iter_in: iters,
            acc_factor_out: 0,
            acc_factor_in: 0,
            inp_factor_out: 0,
            inp_factor_in: 0,
            wgt_factor_out: 0,
            wgt_factor_in: 0,
        })));
    }
    s.instructions.push(Instruction::finish());
    s
}
