//! Redundant-load elimination across virtual-thread buffer slots.
//!
//! A load is redundant when the chunk it brings in (same DRAM window, same
//! padding) is already resident in one of the slots that could hold it.
//! Such loads are dropped (or reduced to a zero-size load when they carry
//! dependency flags) and the micro-ops of their readers are redirected to
//! the resident copy. Loads that survive may move to another slot; a slot is
//! only overwritten once every earlier reader of it is ordered before the
//! load by the token protocol, and among safe slots the one whose chunk is
//! needed furthest in the future is evicted. Any condition the analysis does
//! not cover leaves the stream unchanged.

use super::isa::{Instruction, MemInsn, Op, PadKind, Uop};
use super::tokens::{validate_tokens, HappensBefore};
use super::{static_dram_bytes, InstructionStream, SlotInfo};
use crate::config::MemKind;
use serde::{Deserialize, Serialize};
use std::collections::{BTreeMap, HashMap, HashSet};

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct DedupReport {
    /// Loads whose chunk was already resident.
    pub removed: usize,
    /// Loads kept but moved to another slot.
    pub relocated: usize,
    /// Input plus weight DRAM bytes saved.
    pub saved_bytes: u64,
    /// Why the stream was left unchanged, if it was.
    pub skipped: Option<String>,
}

pub fn eliminate_redundant_loads(stream: &InstructionStream) -> InstructionStream {
    eliminate_redundant_loads_with_report(stream).0
}

pub fn eliminate_redundant_loads_with_report(stream: &InstructionStream) -> (InstructionStream, DedupReport) {
    match transform(stream) {
        Ok(Some((out, mut report))) => {
            let before = static_dram_bytes(stream);
            let after = static_dram_bytes(&out);
            report.saved_bytes = [MemKind::Inp, MemKind::Wgt].iter().map(|k| before[k] - after[k]).sum();
            (out, report)
        }
        Ok(None) => (stream.clone(), DedupReport::default()),
        Err(reason) => (stream.clone(), DedupReport { skipped: Some(reason), ..DedupReport::default() }),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
struct Chunk {
    dram_base: u32,
    y_size: u32,
    x_size: u32,
    x_stride: u32,
    pads: [u32; 4],
    pad_kind: PadKind,
}

impl Chunk {
    fn of(m: &MemInsn) -> Self {
        Chunk {
            dram_base: m.dram_base,
            y_size: m.y_size,
            x_size: m.x_size,
            x_stride: m.x_stride,
            pads: [m.y_pad_top, m.y_pad_bottom, m.x_pad_left, m.x_pad_right],
            pad_kind: m.pad_kind,
        }
    }
}

/// One data load of the kind being optimized.
struct LoadSite {
    index: usize,
    slot: usize,
    offset: u32,
    len: u32,
    chunk: Chunk,
}

/// Where each load's data ends up, and which loads become redundant.
struct Plan {
    slot_of: HashMap<usize, usize>,
    removed: HashSet<usize>,
    /// (gemm, uop position) -> load whose data that uop reads
    reads: HashMap<(usize, u32), usize>,
    sites: HashMap<usize, (usize, u32)>,
    bases: Vec<u32>,
}

fn mem_of(ins: &Instruction, kind: MemKind) -> Option<&MemInsn> {
    match &ins.op {
        Op::Load(m) if m.kind == kind => Some(m),
        _ => None,
    }
}

fn plan_kind(stream: &InstructionStream, hb: &HappensBefore, slots: &SlotInfo) -> Result<Plan, String> {
    let kind = slots.kind;
    let mut sites = Vec::new();
    for (i, ins) in stream.instructions.iter().enumerate() {
        let Some(m) = mem_of(ins, kind) else { continue };
        let len = m.footprint();
        if len == 0 {
            continue;
        }
        let slot = slots
            .bases
            .iter()
            .position(|&b| m.sram_base >= b && m.sram_base + len <= b + slots.size)
            .ok_or_else(|| format!("#{i} writes outside every {kind} slot"))?;
        sites.push(LoadSite { index: i, slot, offset: m.sram_base - slots.bases[slot], len, chunk: Chunk::of(m) });
    }

    // distinct regions must not partially overlap
    let mut regions: Vec<(u32, u32)> = sites.iter().map(|s| (slots.bases[s.slot] + s.offset, s.len)).collect();
    regions.sort_unstable();
    regions.dedup();
    if regions.windows(2).any(|w| w[0].0 + w[0].1 > w[1].0) {
        return Err(format!("{kind} loads write partially overlapping regions"));
    }
    let region_of = |addr: u32| -> Option<(u32, u32)> {
        let k = regions.partition_point(|r| r.0 <= addr);
        (k > 0).then(|| regions[k - 1]).filter(|r| addr < r.0 + r.1)
    };

    // record which load's data each GEMM uop reads
    let by_index: HashMap<usize, &LoadSite> = sites.iter().map(|s| (s.index, s)).collect();
    let mut current: HashMap<u32, usize> = HashMap::new();
    let mut readers: HashMap<usize, Vec<usize>> = HashMap::new();
    let mut reads = HashMap::new();
    for (j, ins) in stream.instructions.iter().enumerate() {
        if let Some(s) = by_index.get(&j) {
            current.insert(slots.bases[s.slot] + s.offset, j);
            continue;
        }
        let Op::Gemm(g) = &ins.op else { continue };
        if g.reset {
            continue;
        }
        let (fo, fi) = match kind {
            MemKind::Inp => (g.inp_factor_out, g.inp_factor_in),
            _ => (g.wgt_factor_out, g.wgt_factor_in),
        };
        for u in g.uop_begin..g.uop_end {
            let uop = stream.uops.get(u as usize).ok_or("GEMM uop out of range")?;
            let lo = match kind {
                MemKind::Inp => uop.inp_idx,
                _ => uop.wgt_idx,
            };
            let hi = lo + (g.iter_out - 1) * fo + (g.iter_in - 1) * fi;
            let r = region_of(lo).ok_or_else(|| format!("#{j} reads {kind} {lo} which no load writes"))?;
            if hi >= r.0 + r.1 {
                return Err(format!("#{j} reads across {kind} regions"));
            }
            let v = *current.get(&r.0).ok_or_else(|| format!("#{j} reads {kind} {lo} before it is loaded"))?;
            reads.insert((j, u), v);
            readers.entry(v).or_default().push(j);
        }
    }

    // future positions of each chunk within its pool, for eviction choice
    let mut uses: HashMap<(u32, u32, Chunk), Vec<usize>> = HashMap::new();
    for s in &sites {
        uses.entry((s.offset, s.len, s.chunk)).or_default().push(s.index);
    }
    let next_use = |key: (u32, u32, Chunk), after: usize| -> usize {
        let v = &uses[&key];
        v.get(v.partition_point(|&i| i <= after)).copied().unwrap_or(usize::MAX)
    };

    struct Resident {
        chunk: Chunk,
        readers: Vec<usize>,
    }
    let n_slots = slots.bases.len();
    let mut pools: BTreeMap<(u32, u32), Vec<Option<Resident>>> = BTreeMap::new();
    let mut slot_of = HashMap::new();
    let mut removed = HashSet::new();
    for s in &sites {
        let pool = pools.entry((s.offset, s.len)).or_insert_with(|| (0..n_slots).map(|_| None).collect());
        let mine = readers.get(&s.index).cloned().unwrap_or_default();
        if let Some(k) = pool.iter().position(|r| r.as_ref().is_some_and(|r| r.chunk == s.chunk)) {
            removed.insert(s.index);
            slot_of.insert(s.index, k);
            pool[k].as_mut().unwrap().readers.extend(mine);
            continue;
        }
        let safe: Vec<usize> = (0..n_slots)
            .filter(|&k| match &pool[k] {
                None => true,
                Some(r) => r.readers.iter().all(|&j| hb.ordered(j, s.index)),
            })
            .collect();
        if safe.is_empty() {
            return Err(format!("no slot can be safely overwritten by #{}", s.index));
        }
        let score = |k: usize| match &pool[k] {
            None => (1, usize::MAX, k == s.slot),
            Some(r) => (0, next_use((s.offset, s.len, r.chunk), s.index), k == s.slot),
        };
        let pick = *safe.iter().max_by_key(|&&k| (score(k), std::cmp::Reverse(k))).unwrap();
        slot_of.insert(s.index, pick);
        pool[pick] = Some(Resident { chunk: s.chunk, readers: mine });
    }
    Ok(Plan {
        slot_of,
        removed,
        reads,
        sites: sites.iter().map(|s| (s.index, (s.slot, s.offset))).collect(),
        bases: slots.bases.clone(),
    })
}

type Outcome = Result<Option<(InstructionStream, DedupReport)>, String>;

fn transform(stream: &InstructionStream) -> Outcome {
    let plans_for: Vec<&SlotInfo> = stream
        .meta
        .slots
        .iter()
        .filter(|s| matches!(s.kind, MemKind::Inp | MemKind::Wgt) && s.bases.len() >= 2)
        .collect();
    if plans_for.is_empty() {
        return Ok(None);
    }
    let uop_loads: Vec<usize> = stream
        .instructions
        .iter()
        .enumerate()
        .filter(|(_, i)| mem_of(i, MemKind::Uop).is_some())
        .map(|(k, _)| k)
        .collect();
    let [uop_load] = uop_loads[..] else {
        return Err("expected a single micro-op load".into());
    };
    let ul = mem_of(&stream.instructions[uop_load], MemKind::Uop).unwrap();
    if ul.sram_base != 0 || ul.dram_base != 0 || ul.y_size != 1 || ul.x_size as usize != stream.uops.len() {
        return Err("micro-op load does not cover the whole table".into());
    }
    let hb = HappensBefore::compute(stream).ok_or("token protocol does not complete")?;
    let plans =
        plans_for.iter().map(|s| plan_kind(stream, &hb, s).map(|p| (s.kind, p))).collect::<Result<Vec<_>, _>>()?;
    let removed: usize = plans.iter().map(|(_, p)| p.removed.len()).sum();
    let moved = |p: &Plan, i: usize| p.slot_of[&i] != p.sites[&i].0;
    let relocated: usize =
        plans.iter().map(|(_, p)| p.slot_of.keys().filter(|&&i| !p.removed.contains(&i) && moved(p, i)).count()).sum();
    if removed == 0 && relocated == 0 {
        return Ok(None);
    }

    let mut out = stream.clone();
    let mut uops = stream.uops.clone();
    let mut interned: HashMap<Vec<Uop>, u32> = HashMap::new();
    let mut keep = vec![true; stream.instructions.len()];
    for (i, ins) in out.instructions.iter_mut().enumerate() {
        match &mut ins.op {
            Op::Load(m) => {
                let Some((_, p)) = plans.iter().find(|(k, _)| *k == m.kind) else { continue };
                let Some(&slot) = p.slot_of.get(&i) else { continue };
                if p.removed.contains(&i) {
                    if ins.deps.any() {
                        *m = MemInsn {
                            y_size: 0,
                            x_size: 0,
                            x_stride: 0,
                            y_pad_top: 0,
                            y_pad_bottom: 0,
                            x_pad_left: 0,
                            x_pad_right: 0,
                            pad_kind: PadKind::Zero,
                            ..MemInsn::contiguous(m.kind, 0, 0, 0)
                        };
                    } else {
                        keep[i] = false;
                    }
                } else {
                    m.sram_base = p.bases[slot] + p.sites[&i].1;
                }
            }
            Op::Gemm(g) if !g.reset => {
                let mut seq: Vec<Uop> = stream.uops[g.uop_begin as usize..g.uop_end as usize].to_vec();
                for (u, uop) in (g.uop_begin..g.uop_end).zip(seq.iter_mut()) {
                    for (kind, p) in &plans {
                        let Some(&v) = p.reads.get(&(i, u)) else { continue };
                        let from = p.bases[p.sites[&v].0];
                        let to = p.bases[p.slot_of[&v]];
                        let idx = match kind {
                            MemKind::Inp => &mut uop.inp_idx,
                            _ => &mut uop.wgt_idx,
                        };
                        *idx = *idx - from + to;
                    }
                }
                if seq[..] != stream.uops[g.uop_begin as usize..g.uop_end as usize] {
                    let len = seq.len() as u32;
                    let begin = *interned.entry(seq).or_insert_with_key(|s| {
                        let b = uops.len() as u32;
                        uops.extend_from_slice(s);
                        b
                    });
                    g.uop_begin = begin;
                    g.uop_end = begin + len;
                }
            }
            _ => {}
        }
    }
    if uops.len() as u64 > stream.config.entries(MemKind::Uop) {
        return Err("rewritten micro-ops do not fit the micro-op buffer".into());
    }
    if let Op::Load(m) = &mut out.instructions[uop_load].op {
        m.x_size = uops.len() as u32;
        m.x_stride = uops.len() as u32;
    }
    out.uops = uops;
    let mut it = keep.iter();
    out.instructions.retain(|_| *it.next().unwrap());
    if !validate_tokens(&out).is_ok() {
        return Err("rewritten stream fails the token check".into());
    }
    out.check_encoding().map_err(|e| e.to_string())?;
    Ok(Some((out, DedupReport { removed, relocated, saved_bytes: 0, skipped: None })))
}
