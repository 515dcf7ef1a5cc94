//! Post-hoc scratchpad race detection over a traced run.

use super::exec::Span;
use super::SimReport;
use crate::config::MemKind;
use serde::{Deserialize, Serialize};

/// One scratchpad access by one instruction over `[start, end)` cycles.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Access {
    pub instruction: usize,
    pub span: Span,
    pub start: u64,
    pub end: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Violation {
    /// A read started while a covering write was in flight.
    ReadAfterWrite,
    /// A write started while a read of the region was pending.
    WriteAfterRead,
    /// Two writes to the region were in flight together.
    WriteAfterWrite,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Hazard {
    pub mem: MemKind,
    pub lo: u64,
    pub hi: u64,
    pub violation: Violation,
    /// Instruction indices, earlier-starting access first.
    pub instructions: (usize, usize),
}

/// Every pair of conflicting accesses to the same region whose lifetimes
/// overlap: a read while a covering write was in flight, or a write while
/// reads were pending. The pair is ordered by start cycle, then program
/// order.
pub fn hazard_log(report: &SimReport) -> Vec<Hazard> {
    let mut out = Vec::new();
    let mut log: Vec<&Access> = report.accesses.iter().collect();
    log.sort_by_key(|a| (a.span.mem, a.span.lo, a.instruction));
    for (k, a) in log.iter().enumerate() {
        for b in &log[k + 1..] {
            if b.span.mem != a.span.mem || b.span.lo >= a.span.hi {
                break;
            }
            if a.instruction == b.instruction || !(a.span.write || b.span.write) {
                continue;
            }
            if a.start >= b.end || b.start >= a.end {
                continue;
            }
            let (first, second) = if (a.start, a.instruction) < (b.start, b.instruction) { (a, b) } else { (b, a) };
            let violation = match (first.span.write, second.span.write) {
                (true, false) => Violation::ReadAfterWrite,
                (false, true) => Violation::WriteAfterRead,
                _ => Violation::WriteAfterWrite,
            };
            out.push(Hazard {
                mem: a.span.mem,
                lo: a.span.lo.max(b.span.lo),
                hi: a.span.hi.min(b.span.hi),
                violation,
                instructions: (first.instruction, second.instruction),
            });
        }
    }
    out.sort_by_key(|h| (h.instructions, h.mem, h.lo));
    out.dedup();
    out
}
