//! Memory engine: tagged outstanding reads with out-of-order completion.
//!
//! Requests are issued one per cycle while a tag is free. Data for a request
//! becomes available `dram_latency_cycles` after issue; the reader then
//! streams one ready burst at a time at one bus pulse per cycle. With seed 0
//! the oldest ready burst goes first; any other seed picks uniformly among
//! ready bursts, which bounds reordering by the tag count.

use crate::config::{AccelConfig, MemKind};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

/// Longest burst, in pulses.
pub const MAX_BURST_PULSES: u64 = 256;

/// Bus pulses needed to move `len` bytes starting at byte `addr`.
pub fn pulses(addr: u64, len: u64, bus_bytes: u64) -> u64 {
    if len == 0 {
        return 0;
    }
    (addr + len).div_ceil(bus_bytes) - addr / bus_bytes
}

/// Per-pulse byte-enable masks (bit k = bus byte lane k).
pub fn pulse_masks(addr: u64, len: u64, bus_bytes: u64) -> Vec<u64> {
    let full = if bus_bytes >= 64 { u64::MAX } else { (1u64 << bus_bytes) - 1 };
    let (end, first) = (addr + len, addr / bus_bytes);
    (0..pulses(addr, len, bus_bytes))
        .map(|p| {
            let beat = (first + p) * bus_bytes;
            let lo = addr.max(beat) - beat;
            let hi = end.min(beat + bus_bytes) - beat;
            let span = if hi - lo >= 64 { u64::MAX } else { (1u64 << (hi - lo)) - 1 };
            (span << lo) & full
        })
        .collect()
}

/// Split a contiguous byte range into bursts that respect the burst limit.
pub fn split_bursts(addr: u64, len: u64, bus_bytes: u64) -> Vec<(u64, u64)> {
    let mut out = Vec::new();
    let (mut a, end) = (addr, addr + len);
    while a < end {
        let limit = (a / bus_bytes + MAX_BURST_PULSES) * bus_bytes;
        let b = end.min(limit);
        out.push((a, b - a));
        a = b;
    }
    out
}

/// One bus read request and the metadata kept under its tag.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct VmeRequest {
    /// Owner chosen by the caller (the engine uses the issuing module).
    pub owner: usize,
    pub kind: MemKind,
    pub addr: u64,
    pub len: u64,
    /// First scratchpad entry written.
    pub dest: u64,
}

#[derive(Debug, Clone)]
struct Inflight {
    req: VmeRequest,
    seq: u64,
    ready_at: u64,
    pulses: u64,
}

#[derive(Debug, Clone)]
pub struct Vme {
    bus_bytes: u64,
    latency: u64,
    table: Vec<Option<Inflight>>,
    free: Vec<usize>,
    seq: u64,
    streaming: Option<(usize, u64)>,
    /// Write pulses hold the shared data bus until this cycle.
    write_until: u64,
    rng: Option<ChaCha8Rng>,
    high_water: usize,
    pulses_streamed: u64,
}

impl Vme {
    pub fn new(cfg: &AccelConfig, seed: u64) -> Self {
        let n = cfg.vme_max_inflight as usize;
        Vme {
            bus_bytes: cfg.bus_bytes(),
            latency: cfg.dram_latency_cycles as u64,
            table: vec![None; n],
            free: (0..n).rev().collect(),
            seq: 0,
            streaming: None,
            write_until: 0,
            rng: (seed != 0).then(|| ChaCha8Rng::seed_from_u64(seed)),
            high_water: 0,
            pulses_streamed: 0,
        }
    }

    pub fn inflight(&self) -> usize {
        self.table.len() - self.free.len()
    }

    pub fn high_water(&self) -> usize {
        self.high_water
    }

    pub fn pulses_streamed(&self) -> u64 {
        self.pulses_streamed
    }

    pub fn has_free_tag(&self) -> bool {
        !self.free.is_empty()
    }

    /// Issue a request at `now`; `None` when every tag is taken.
    pub fn issue(&mut self, req: VmeRequest, now: u64) -> Option<usize> {
        let tag = self.free.pop()?;
        let p = pulses(req.addr, req.len, self.bus_bytes);
        self.table[tag] = Some(Inflight { req, seq: self.seq, ready_at: now + self.latency, pulses: p });
        self.seq += 1;
        self.high_water = self.high_water.max(self.inflight());
        Some(tag)
    }

    /// Whether the reader is streaming a burst at `now`.
    pub fn reader_busy(&self, now: u64) -> bool {
        self.streaming.is_some_and(|(_, end)| end > now)
    }

    /// First cycle at which the shared data bus is free.
    pub fn bus_free_at(&self) -> u64 {
        self.streaming.map_or(self.write_until, |(_, end)| end.max(self.write_until))
    }

    /// Stream `pulses` write pulses from `now` if the bus is free and
    /// return the cycle the last one leaves.
    pub fn stream_write(&mut self, pulses: u64, now: u64) -> Option<u64> {
        if self.bus_free_at() > now {
            return None;
        }
        self.write_until = now + pulses.max(1);
        Some(self.write_until)
    }

    /// Finish the burst ending at `now`, if any, and free its tag.
    pub fn complete(&mut self, now: u64) -> Option<(usize, VmeRequest)> {
        let (tag, end) = self.streaming?;
        if end != now {
            return None;
        }
        self.streaming = None;
        let entry = self.table[tag].take().expect("completing tag is in flight");
        self.free.push(tag);
        Some((tag, entry.req))
    }

    /// Start streaming a ready burst if the data bus is idle. Reads and
    /// writes share the bus, one pulse per cycle.
    pub fn start_burst(&mut self, now: u64) -> Option<usize> {
        if self.streaming.is_some() || self.write_until > now {
            return None;
        }
        let mut ready: Vec<(u64, usize)> = self
            .table
            .iter()
            .enumerate()
            .filter_map(|(t, e)| e.as_ref().filter(|e| e.ready_at <= now).map(|e| (e.seq, t)))
            .collect();
        if ready.is_empty() {
            return None;
        }
        ready.sort_unstable();
        let pick = match &mut self.rng {
            None => 0,
            Some(r) => r.gen_range(0..ready.len()),
        };
        let tag = ready[pick].1;
        let p = self.table[tag].as_ref().unwrap().pulses;
        self.streaming = Some((tag, now + p.max(1)));
        self.pulses_streamed += p;
        Some(tag)
    }

    /// Earliest future cycle at which the memory engine changes state.
    pub fn next_event(&self, now: u64) -> Option<u64> {
        if let Some((_, end)) = self.streaming {
            return Some(end);
        }
        self.table.iter().flatten().map(|e| e.ready_at.max(now + 1).max(self.write_until)).min()
    }
}
