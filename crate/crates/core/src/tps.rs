//! Tiling parameter search: exhaustive constrained minimization of DRAM
//! bytes over the five tiled dimensions and the two virtual-thread factors.
//!
//! Usage and cost expressions are evaluated exactly as the analytical model
//! states them, in element counts, then scaled by the configured element
//! widths. Two quirks are kept verbatim: the input-height term divides the
//! *input* height `h` (not `oh`) by `th_o`, and `l_acc` has no spatial inner
//! factor. Candidates where `h / th_o` or `w / tw_o` is not exact are
//! rejected rather than rounded.

use crate::config::{AccelConfig, MemKind};
use crate::workload::{ConvLayer, LayerKind};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::cmp::Ordering;
use std::fmt::Write as _;
use thiserror::Error;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum TpsError {
    #[error("layer kind {0:?} is not tiled by the search (ALU layers use their own schedule)")]
    UnsupportedKind(LayerKind),
    #[error("layer is not channel-padded for this config (fi % block_in, fo % block_out, b % batch must be 0)")]
    NotPadded,
    #[error("invalid tiling {params}: {reason}")]
    InvalidParams { params: String, reason: String },
    #[error("no feasible tiling: tightest constraint {tightest}")]
    NoFeasibleTiling { tightest: String },
}

/// Outer tiling factors and virtual-thread factors.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct TilingParams {
    pub tb_o: u64,
    pub th_o: u64,
    pub tw_o: u64,
    pub tco_o: u64,
    pub tci_o: u64,
    pub oc_n: u64,
    pub h_n: u64,
}

impl TilingParams {
    pub const IDENTITY: TilingParams = TilingParams { tb_o: 1, th_o: 1, tw_o: 1, tco_o: 1, tci_o: 1, oc_n: 1, h_n: 1 };

    pub fn threads(&self) -> u64 {
        self.oc_n * self.h_n
    }

    fn key(&self) -> (u64, u64, u64, u64, u64, u64, u64) {
        (self.tb_o, self.th_o, self.tw_o, self.tco_o, self.tci_o, self.oc_n, self.h_n)
    }
}

impl std::fmt::Display for TilingParams {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(
            f,
            "(tb_o={}, th_o={}, tw_o={}, tco_o={}, tci_o={}, oc_n={}, h_n={})",
            self.tb_o, self.th_o, self.tw_o, self.tco_o, self.tci_o, self.oc_n, self.h_n
        )
    }
}

/// The five tiled dimension sizes of a padded layer.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TileDims {
    /// b / batch
    pub nb: u64,
    pub oh: u64,
    pub ow: u64,
    /// fo / block_out
    pub d_out: u64,
    /// fi / block_in
    pub d_in: u64,
}

impl TileDims {
    pub fn of(layer: &ConvLayer, cfg: &AccelConfig) -> Result<TileDims, TpsError> {
        check_layer(layer, cfg)?;
        let (oh, ow) = layer.output_dims();
        Ok(TileDims {
            nb: layer.b / cfg.batch as u64,
            oh,
            ow,
            d_out: layer.fo / cfg.block_out as u64,
            d_in: layer.fi / cfg.block_in as u64,
        })
    }
}

/// Inner tile sizes implied by a parameter set.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct InnerTiles {
    pub tb_i: u64,
    pub th_i: u64,
    pub tw_i: u64,
    pub tco_i: u64,
    pub tci_i: u64,
}

impl InnerTiles {
    pub fn of(dims: &TileDims, p: &TilingParams) -> InnerTiles {
        InnerTiles {
            tb_i: dims.nb / p.tb_o,
            th_i: dims.oh / p.th_o,
            tw_i: dims.ow / p.tw_o,
            tco_i: dims.d_out / p.tco_o,
            tci_i: dims.d_in / p.tci_o,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct TpsResult {
    pub params: TilingParams,
    pub s_inp: u64,
    pub s_wgt: u64,
    pub s_acc: u64,
    pub l_inp: u64,
    pub l_wgt: u64,
    pub l_acc: u64,
    pub u_inp: i64,
    pub u_wgt: i64,
    pub u_acc: i64,
    pub feasible: bool,
    pub total_cost: u64,
}

impl TpsResult {
    /// Ordering used by the search: cost, then accumulator usage, then the
    /// parameter tuple.
    pub fn rank_cmp(&self, other: &TpsResult) -> Ordering {
        (self.total_cost, self.s_acc, self.params.key()).cmp(&(other.total_cost, other.s_acc, other.params.key()))
    }
}

fn check_layer(layer: &ConvLayer, cfg: &AccelConfig) -> Result<(), TpsError> {
    if !matches!(layer.kind, LayerKind::Conv | LayerKind::Dense) {
        return Err(TpsError::UnsupportedKind(layer.kind));
    }
    if !layer.fi.is_multiple_of(cfg.block_in as u64)
        || !layer.fo.is_multiple_of(cfg.block_out as u64)
        || !layer.b.is_multiple_of(cfg.batch as u64)
    {
        return Err(TpsError::NotPadded);
    }
    Ok(())
}

fn invalid(p: &TilingParams, reason: &str) -> TpsError {
    TpsError::InvalidParams { params: p.to_string(), reason: reason.to_string() }
}

/// One spatial extent of the input-usage expression:
/// `floor((n / t + 2p - k) / s) * s + k`, with `n / t` required exact.
fn input_extent(n: u64, t: u64, p: u64, k: u64, s: u64) -> Option<u64> {
    if !n.is_multiple_of(t) {
        return None;
    }
    let x = (n / t) as i64 + 2 * p as i64 - k as i64;
    let e = x.div_euclid(s as i64) * s as i64 + k as i64;
    (e > 0).then_some(e as u64)
}

fn check_params(dims: &TileDims, p: &TilingParams) -> Result<(), TpsError> {
    let pairs = [
        (p.tb_o, dims.nb, "tb_o must divide b/batch"),
        (p.th_o, dims.oh, "th_o must divide oh"),
        (p.tw_o, dims.ow, "tw_o must divide ow"),
        (p.tco_o, dims.d_out, "tco_o must divide fo/block_out"),
        (p.tci_o, dims.d_in, "tci_o must divide fi/block_in"),
    ];
    for (f, n, why) in pairs {
        if f == 0 || n % f != 0 {
            return Err(invalid(p, why));
        }
    }
    if !matches!(p.oc_n, 1 | 2) || !matches!(p.h_n, 1 | 2) {
        return Err(invalid(p, "thread factors must be 1 or 2"));
    }
    if p.oc_n == 2 && p.h_n == 2 {
        return Err(invalid(p, "oc_n and h_n cannot both be 2"));
    }
    if p.oc_n == 2 && !p.tco_o.is_multiple_of(2) {
        return Err(invalid(p, "oc_n = 2 needs an even tco_o"));
    }
    if p.h_n == 2 && !p.th_o.is_multiple_of(2) {
        return Err(invalid(p, "h_n = 2 needs an even th_o"));
    }
    Ok(())
}

/// Scratchpad usage in bytes: (s_inp, s_wgt, s_acc).
pub fn scratchpad_usage(layer: &ConvLayer, cfg: &AccelConfig, p: &TilingParams) -> Result<(u64, u64, u64), TpsError> {
    let dims = TileDims::of(layer, cfg)?;
    usage_with_dims(layer, cfg, &dims, p)
}

fn usage_with_dims(
    layer: &ConvLayer,
    cfg: &AccelConfig,
    dims: &TileDims,
    p: &TilingParams,
) -> Result<(u64, u64, u64), TpsError> {
    check_params(dims, p)?;
    let (bv, bi, bo) = (cfg.batch as u64, cfg.block_in as u64, cfg.block_out as u64);
    let threads = p.oc_n * p.h_n;
    let tb_i = dims.nb / p.tb_o;
    let rows = input_extent(layer.h, p.th_o, layer.ph, layer.kh, layer.sh)
        .ok_or_else(|| invalid(p, "h / th_o is not exact or gives an empty input tile"))?;
    let cols = input_extent(layer.w, p.tw_o, layer.pw, layer.kw, layer.sw)
        .ok_or_else(|| invalid(p, "w / tw_o is not exact or gives an empty input tile"))?;
    let s_inp = tb_i * (dims.d_in / p.tci_o) * rows * cols * bv * bi * threads;
    let s_wgt = dims.d_out * dims.d_in * layer.kh * layer.kw * bo * bi / (p.tco_o * p.tci_o) * threads;
    let s_acc = (dims.nb * dims.d_out * dims.oh * dims.ow * bv * bo / (p.tb_o * p.tco_o * p.th_o * p.tw_o)
        + layer.fo * layer.b / (p.tb_o * p.tco_o))
        * threads;
    Ok((
        s_inp * cfg.tile_bytes(MemKind::Inp) / cfg.tile_elems(MemKind::Inp) as u64,
        s_wgt * cfg.tile_bytes(MemKind::Wgt) / cfg.tile_elems(MemKind::Wgt) as u64,
        s_acc * cfg.tile_bytes(MemKind::Acc) / cfg.tile_elems(MemKind::Acc) as u64,
    ))
}

/// DRAM bytes moved into each scratchpad: (l_inp, l_wgt, l_acc).
pub fn dram_cost(layer: &ConvLayer, cfg: &AccelConfig, p: &TilingParams) -> Result<(u64, u64, u64), TpsError> {
    let r = evaluate(layer, cfg, p)?;
    Ok((r.l_inp, r.l_wgt, r.l_acc))
}

/// Full evaluation of one candidate.
pub fn evaluate(layer: &ConvLayer, cfg: &AccelConfig, p: &TilingParams) -> Result<TpsResult, TpsError> {
    let dims = TileDims::of(layer, cfg)?;
    evaluate_with_dims(layer, cfg, &dims, p)
}

fn evaluate_with_dims(
    layer: &ConvLayer,
    cfg: &AccelConfig,
    dims: &TileDims,
    p: &TilingParams,
) -> Result<TpsResult, TpsError> {
    let (s_inp, s_wgt, s_acc) = usage_with_dims(layer, cfg, dims, p)?;
    let reloads = p.tb_o * (p.th_o / p.h_n) * (p.tco_o / p.oc_n) * p.tw_o * p.tci_o;
    let acc_elem_bytes = cfg.acc_elem_bits as u64 / 8;
    let l_inp = reloads * s_inp;
    let l_wgt = reloads * s_wgt;
    let l_acc = p.tb_o * p.th_o * p.tw_o * layer.fo * acc_elem_bytes;
    let u_inp = cfg.c_inp as i64 - s_inp as i64;
    let u_wgt = cfg.c_wgt as i64 - s_wgt as i64;
    let u_acc = cfg.c_acc as i64 - s_acc as i64;
    Ok(TpsResult {
        params: *p,
        s_inp,
        s_wgt,
        s_acc,
        l_inp,
        l_wgt,
        l_acc,
        u_inp,
        u_wgt,
        u_acc,
        feasible: u_inp >= 0 && u_wgt >= 0 && u_acc >= 0,
        total_cost: l_inp + l_wgt + l_acc,
    })
}

pub fn divisors(n: u64) -> Vec<u64> {
    let mut small = Vec::new();
    let mut large = Vec::new();
    let mut d = 1;
    while d * d <= n {
        if n.is_multiple_of(d) {
            small.push(d);
            if d * d != n {
                large.push(n / d);
            }
        }
        d += 1;
    }
    small.extend(large.into_iter().rev());
    small
}

const THREAD_CHOICES: [(u64, u64); 3] = [(1, 1), (2, 1), (1, 2)];

/// Every candidate in the search space, valid or not:
/// `prod d(n)` over the five dimensions times three thread settings.
pub fn enumerate_candidates(dims: &TileDims) -> Vec<TilingParams> {
    let (db, dh, dw, dco, dci) =
        (divisors(dims.nb), divisors(dims.oh), divisors(dims.ow), divisors(dims.d_out), divisors(dims.d_in));
    let mut out = Vec::with_capacity(db.len() * dh.len() * dw.len() * dco.len() * dci.len() * 3);
    for &tb_o in &db {
        for &th_o in &dh {
            for &tw_o in &dw {
                for &tco_o in &dco {
                    for &tci_o in &dci {
                        for (oc_n, h_n) in THREAD_CHOICES {
                            out.push(TilingParams { tb_o, th_o, tw_o, tco_o, tci_o, oc_n, h_n });
                        }
                    }
                }
            }
        }
    }
    out
}

/// Evaluate every valid candidate (invalid combinations are skipped).
pub fn evaluate_all(layer: &ConvLayer, cfg: &AccelConfig) -> Result<Vec<TpsResult>, TpsError> {
    let dims = TileDims::of(layer, cfg)?;
    Ok(enumerate_candidates(&dims).par_iter().filter_map(|p| evaluate_with_dims(layer, cfg, &dims, p).ok()).collect())
}

/// Pick the best feasible result from any collection of evaluated
/// candidates. The outcome does not depend on iteration order.
pub fn select_best<'a>(results: impl IntoIterator<Item = &'a TpsResult>) -> Option<TpsResult> {
    results.into_iter().filter(|r| r.feasible).min_by(|a, b| a.rank_cmp(b)).copied()
}

fn tightest(results: &[TpsResult], cfg: &AccelConfig) -> String {
    // the candidate whose worst scratchpad overshoot is smallest
    let worst = |r: &TpsResult| {
        [("INP", r.s_inp, cfg.c_inp), ("WGT", r.s_wgt, cfg.c_wgt), ("ACC", r.s_acc, cfg.c_acc)]
            .into_iter()
            .max_by(|a, b| (a.1 as f64 / a.2 as f64).total_cmp(&(b.1 as f64 / b.2 as f64)))
            .unwrap()
    };
    match results.iter().min_by(|a, b| {
        let (wa, wb) = (worst(a), worst(b));
        (wa.1 as f64 / wa.2 as f64).total_cmp(&(wb.1 as f64 / wb.2 as f64))
    }) {
        Some(r) => {
            let (name, used, cap) = worst(r);
            format!("{name} needs {used} bytes > capacity {cap} (best case {})", r.params)
        }
        None => "no valid tiling candidates".to_string(),
    }
}

/// Minimum-DRAM-traffic feasible tiling.
pub fn search(layer: &ConvLayer, cfg: &AccelConfig) -> Result<TpsResult, TpsError> {
    let all = evaluate_all(layer, cfg)?;
    select_best(&all).ok_or_else(|| TpsError::NoFeasibleTiling { tightest: tightest(&all, cfg) })
}

/// All valid candidates, feasible ones first in search order, then the
/// infeasible ones by the same ordering.
pub fn rank(layer: &ConvLayer, cfg: &AccelConfig) -> Result<Vec<TpsResult>, TpsError> {
    let mut all = evaluate_all(layer, cfg)?;
    all.sort_by(|a, b| b.feasible.cmp(&a.feasible).then_with(|| a.rank_cmp(b)));
    Ok(all)
}

/// Minimal-scratchpad schedule with no virtual threads: smallest
/// `(s_inp, s_wgt, s_acc)`, ties going to larger outer factors.
pub fn fallback_schedule(layer: &ConvLayer, cfg: &AccelConfig) -> Result<TpsResult, TpsError> {
    let all = evaluate_all(layer, cfg)?;
    all.iter()
        .filter(|r| r.feasible && r.params.threads() == 1)
        .min_by(|a, b| {
            (a.s_inp, a.s_wgt, a.s_acc)
                .cmp(&(b.s_inp, b.s_wgt, b.s_acc))
                .then_with(|| b.params.key().cmp(&a.params.key()))
        })
        .copied()
        .ok_or_else(|| TpsError::NoFeasibleTiling { tightest: tightest(&all, cfg) })
}

pub const CSV_HEADER: &str =
    "tb_o,th_o,tw_o,tco_o,tci_o,oc_n,h_n,s_inp,s_wgt,s_acc,l_inp,l_wgt,l_acc,u_inp,u_wgt,u_acc,feasible,total_cost";

/// Ranking table as CSV (bytes throughout).
pub fn ranking_csv(results: &[TpsResult]) -> String {
    let mut s = String::from(CSV_HEADER);
    s.push('\n');
    for r in results {
        let p = &r.params;
        let _ = writeln!(
            s,
            "{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{}",
            p.tb_o,
            p.th_o,
            p.tw_o,
            p.tco_o,
            p.tci_o,
            p.oc_n,
            p.h_n,
            r.s_inp,
            r.s_wgt,
            r.s_acc,
            r.l_inp,
            r.l_wgt,
            r.l_acc,
            r.u_inp,
            r.u_wgt,
            r.u_acc,
            r.feasible,
            r.total_cost
        );
    }
    s
}
