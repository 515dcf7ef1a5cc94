//! Transaction-level cycle model of the fetch/load/compute/store machine.
//!
//! Fetch dispatches one instruction per cycle into per-module command
//! queues. Each module runs its queue in order: dependency pops are checked
//! when an instruction starts and pushes happen when it finishes, blocking
//! on a full queue. GEMM and ALU instructions take
//! `pipeline_depth + ii * (uops * iter_out * iter_in)` cycles. Loads and
//! stores go through the memory engine. The loop jumps straight to the next
//! cycle where anything can change, and reports a deadlock when nothing can.
//! A run completes once every instruction, FINISH included, has retired.

mod exec;
pub mod hazard;
pub mod vme;

pub use exec::{Scratchpads, Span};
pub use hazard::{hazard_log, Access, Hazard, Violation};
pub use vme::{pulse_masks, pulses, split_bursts, Vme, VmeRequest};

use crate::codegen::isa::{AluOp, Instruction, MemInsn, Module, Op, Queue};
use crate::codegen::{Blocked, ByteCounts, DramImage, InstructionStream};
use crate::config::{AccelConfig, MemKind};
use serde::{Deserialize, Serialize};
use std::collections::{BTreeMap, VecDeque};
use std::fmt::Write as _;
use thiserror::Error;

/// Depth of each module's command queue.
pub const CMD_QUEUE_DEPTH: usize = 512;

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    #[default]
    Timing,
    Functional,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum Activity {
    Gemm,
    Alu,
    LoadInp,
    LoadWgt,
    LoadAcc,
    LoadUop,
    Store,
    Idle,
    Blocked,
}

impl Activity {
    pub fn name(self) -> &'static str {
        match self {
            Activity::Gemm => "GEMM",
            Activity::Alu => "ALU",
            Activity::LoadInp => "LOAD_INP",
            Activity::LoadWgt => "LOAD_WGT",
            Activity::LoadAcc => "LOAD_ACC",
            Activity::LoadUop => "LOAD_UOP",
            Activity::Store => "STORE",
            Activity::Idle => "IDLE",
            Activity::Blocked => "BLOCKED",
        }
    }

    fn of(ins: &Instruction) -> Activity {
        match &ins.op {
            Op::Gemm(_) | Op::Finish => Activity::Gemm,
            Op::Alu(_) => Activity::Alu,
            Op::Store(_) => Activity::Store,
            Op::Load(m) => match m.kind {
                MemKind::Inp => Activity::LoadInp,
                MemKind::Wgt => Activity::LoadWgt,
                MemKind::Uop => Activity::LoadUop,
                _ => Activity::LoadAcc,
            },
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Interval {
    pub start: u64,
    pub end: u64,
    pub process: Module,
    pub kind: Activity,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub instruction: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Deadlock {
    pub cycle: u64,
    pub blocked: Vec<Blocked>,
    /// Instructions never dispatched because a command queue stayed full.
    pub undispatched: usize,
}

impl std::fmt::Display for Deadlock {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "deadlock at cycle {}", self.cycle)?;
        for b in &self.blocked {
            write!(f, "\n  {b}")?;
        }
        if self.undispatched > 0 {
            write!(f, "\n  {} instructions never dispatched", self.undispatched)?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SimReport {
    pub total_cycles: u64,
    pub completed: bool,
    pub instructions: usize,
    pub intervals: Vec<Interval>,
    pub dram_read_bytes: ByteCounts,
    pub dram_write_bytes: ByteCounts,
    /// Instruction fetch traffic, kept apart from the data counters.
    pub fetch_bytes: u64,
    pub queue_high_water: BTreeMap<Queue, usize>,
    pub vme_inflight_high_water: usize,
    pub vme_read_pulses: u64,
    /// Multiply-accumulates executed by non-reset GEMM instructions.
    pub macs: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub deadlock: Option<Deadlock>,
    #[serde(skip)]
    pub dram: Option<DramImage>,
    #[serde(skip)]
    pub scratchpads: Option<Scratchpads>,
    #[serde(skip)]
    pub accesses: Vec<Access>,
}

impl SimReport {
    /// Bytes moved per memory kind, reads and writes combined.
    pub fn dram_bytes(&self) -> ByteCounts {
        let mut b = self.dram_read_bytes.clone();
        for (k, v) in &self.dram_write_bytes {
            *b.entry(*k).or_default() += v;
        }
        b
    }

    pub fn total_dram_bytes(&self) -> u64 {
        self.dram_bytes().values().sum()
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }

    /// Intervals as `cycle_start,cycle_end,process,kind`.
    pub fn intervals_csv(&self) -> String {
        let mut s = String::from("cycle_start,cycle_end,process,kind\n");
        for i in &self.intervals {
            let _ = writeln!(s, "{},{},{},{}", i.start, i.end, process_name(i.process), i.kind.name());
        }
        s
    }

    pub fn process_intervals(&self, m: Module) -> impl Iterator<Item = &Interval> {
        self.intervals.iter().filter(move |i| i.process == m)
    }

    /// Cycles a process spent in any of `kinds`.
    pub fn busy_cycles(&self, m: Module, kinds: &[Activity]) -> u64 {
        self.process_intervals(m).filter(|i| kinds.contains(&i.kind)).map(|i| i.end - i.start).sum()
    }
}

pub fn process_name(m: Module) -> &'static str {
    match m {
        Module::Load => "load",
        Module::Compute => "compute",
        Module::Store => "store",
    }
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum SimError {
    #[error("invalid stream: {0}")]
    Invalid(String),
    #[error("instruction #{instruction}: {message}")]
    Fault { instruction: usize, message: String },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SimOptions {
    pub mode: Mode,
    pub seed: u64,
    /// Record scratchpad accesses for `hazard_log`.
    pub trace: bool,
}

impl Default for SimOptions {
    fn default() -> Self {
        SimOptions { mode: Mode::Timing, seed: 0, trace: false }
    }
}

/// Simulate with no input data (functional mode computes on zeros).
pub fn run(stream: &InstructionStream, cfg: &AccelConfig, mode: Mode, seed: u64) -> Result<SimReport, SimError> {
    simulate(stream, cfg, &SimOptions { mode, seed, trace: false }, None)
}

/// Functional simulation over a prepared DRAM image; the final image is in
/// `report.dram`.
pub fn run_functional(
    stream: &InstructionStream,
    cfg: &AccelConfig,
    seed: u64,
    dram: DramImage,
) -> Result<SimReport, SimError> {
    simulate(stream, cfg, &SimOptions { mode: Mode::Functional, seed, trace: false }, Some(dram))
}

struct Job {
    reads: VecDeque<VmeRequest>,
    writes: VecDeque<(u64, u64)>,
    outstanding: usize,
    pads: u64,
    empty: bool,
    store_data: Vec<i32>,
}

impl Job {
    fn done(&self) -> bool {
        self.reads.is_empty() && self.writes.is_empty() && self.outstanding == 0 && self.pads == 0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum State {
    Idle,
    WaitPop,
    Exec { until: Option<u64> },
    WaitPush,
}

struct Unit {
    module: Module,
    state: State,
    since: u64,
    current: usize,
    exec_start: u64,
    job: Option<Job>,
    cmdq: VecDeque<(usize, u64)>,
    intervals: Vec<Interval>,
}

struct Sim<'a> {
    stream: &'a InstructionStream,
    cfg: &'a AccelConfig,
    opts: SimOptions,
    units: [Unit; 3],
    tokens: [usize; 4],
    high: [usize; 4],
    vme: Vme,
    write_end: Option<(u64, usize)>,
    responses: Vec<(u64, usize)>,
    write_inflight: usize,
    pc: usize,
    retired: usize,
    /// Cycle at which the last instruction retired.
    finished: Option<u64>,
    read: ByteCounts,
    written: ByteCounts,
    macs: u64,
    sp: Option<Scratchpads>,
    dram: DramImage,
    accesses: Vec<Access>,
    open_access: Vec<usize>,
}

fn pops_of(ins: &Instruction) -> Vec<Queue> {
    ins.pops()
}

impl<'a> Sim<'a> {
    fn ins(&self, i: usize) -> &'a Instruction {
        &self.stream.instructions[i]
    }

    fn latency(&self, ins: &Instruction) -> Option<u64> {
        let c = self.cfg;
        match &ins.op {
            Op::Gemm(g) => Some(c.gemm_pipeline_depth as u64 + c.gemm_ii as u64 * g.iterations()),
            Op::Alu(a) => {
                let two_operand = !a.use_imm && !a.reset && a.op != AluOp::Clip;
                let ii = if two_operand { c.alu_ii_two } else { c.alu_ii_imm };
                Some(c.gemm_pipeline_depth as u64 + ii as u64 * a.iterations())
            }
            Op::Finish => Some(1),
            _ => None,
        }
    }

    fn record(&mut self, u: usize, start: u64, end: u64, kind: Activity, ins: Option<usize>) {
        if end > start {
            let process = self.units[u].module;
            self.units[u].intervals.push(Interval { start, end, process, kind, instruction: ins });
        }
    }

    fn log(&mut self, i: usize, spans: Vec<Span>, start: u64, end: Option<u64>) {
        if !self.opts.trace {
            return;
        }
        for span in spans {
            if end.is_none() {
                self.open_access.push(self.accesses.len());
            }
            self.accesses.push(Access { instruction: i, span, start, end: end.unwrap_or(u64::MAX) });
        }
    }

    fn close_log(&mut self, i: usize, end: u64) {
        let accesses = &mut self.accesses;
        self.open_access.retain(|&k| {
            if accesses[k].instruction == i {
                accesses[k].end = end;
                false
            } else {
                true
            }
        });
    }

    fn fault(i: usize, message: String) -> SimError {
        SimError::Fault { instruction: i, message }
    }

    /// Begin executing instruction `i` on unit `u` at cycle `c`.
    fn start(&mut self, u: usize, i: usize, c: u64) -> Result<(), SimError> {
        let ins = self.ins(i);
        let cfg = self.cfg;
        let functional = self.opts.mode == Mode::Functional;
        let uops = &self.stream.uops;
        self.units[u].current = i;
        self.units[u].exec_start = c;
        let until = match &ins.op {
            Op::Gemm(g) => {
                let spans = exec::gemm_spans(g, uops_window(self.sp.as_ref(), uops, g.uop_end, i)?);
                exec::check_spans(&spans, cfg).map_err(|m| Self::fault(i, m))?;
                if !g.reset {
                    self.macs += g.iterations() * cfg.macs();
                }
                if let Some(sp) = self.sp.as_mut().filter(|_| functional) {
                    exec::gemm(sp, g, cfg);
                }
                let lat = self.latency(ins).unwrap();
                self.log(i, spans, c, Some(c + lat));
                Some(c + lat)
            }
            Op::Alu(a) => {
                let spans = exec::alu_spans(a, uops_window(self.sp.as_ref(), uops, a.uop_end, i)?);
                exec::check_spans(&spans, cfg).map_err(|m| Self::fault(i, m))?;
                if let Some(sp) = self.sp.as_mut().filter(|_| functional) {
                    exec::alu(sp, a, cfg);
                }
                let lat = self.latency(ins).unwrap();
                self.log(i, spans, c, Some(c + lat));
                Some(c + lat)
            }
            Op::Finish => Some(c + 1),
            Op::Load(m) => {
                let span = exec::load_span(m);
                exec::check_spans(&[span], cfg).map_err(|e| Self::fault(i, e))?;
                if m.kind == MemKind::Out {
                    return Err(Self::fault(i, "LOAD cannot target OUT".into()));
                }
                self.log(i, vec![span], c, None);
                let job = self.read_job(u, m);
                let empty = job.empty;
                self.units[u].job = Some(job);
                empty.then_some(c + 1)
            }
            Op::Store(m) => {
                let span = exec::store_span(m);
                exec::check_spans(&[span], cfg).map_err(|e| Self::fault(i, e))?;
                if m.kind != MemKind::Out {
                    return Err(Self::fault(i, format!("STORE of {} is not supported", m.kind)));
                }
                self.log(i, vec![span], c, None);
                let mut job = self.write_job(m);
                if let Some(sp) = self.sp.as_ref().filter(|_| functional) {
                    job.store_data = exec::store_data(sp, m, cfg);
                }
                let empty = job.empty;
                self.units[u].job = Some(job);
                empty.then_some(c + 1)
            }
        };
        self.units[u].state = State::Exec { until };
        Ok(())
    }

    fn rows(&self, m: &MemInsn) -> Vec<(u64, u64)> {
        let tb = self.cfg.tile_bytes(m.kind);
        let bus = self.cfg.bus_bytes();
        let mut out = Vec::new();
        if m.x_size == 0 {
            return out;
        }
        for y in 0..m.y_size as u64 {
            let addr = (m.dram_base as u64 + y * m.x_stride as u64) * tb;
            out.extend(split_bursts(addr, m.x_size as u64 * tb, bus));
        }
        out
    }

    fn read_job(&self, u: usize, m: &MemInsn) -> Job {
        let reads: VecDeque<VmeRequest> = self
            .rows(m)
            .into_iter()
            .map(|(addr, len)| VmeRequest { owner: u, kind: m.kind, addr, len, dest: m.sram_base as u64 })
            .collect();
        let pads = m.pad_tiles();
        Job {
            empty: reads.is_empty() && pads == 0,
            reads,
            writes: VecDeque::new(),
            outstanding: 0,
            pads,
            store_data: Vec::new(),
        }
    }

    fn write_job(&self, m: &MemInsn) -> Job {
        let writes: VecDeque<(u64, u64)> = self.rows(m).into_iter().collect();
        Job {
            empty: writes.is_empty(),
            reads: VecDeque::new(),
            writes,
            outstanding: 0,
            pads: 0,
            store_data: Vec::new(),
        }
    }

    /// Execution of the current instruction finished at `c`.
    fn finish_exec(&mut self, u: usize, c: u64) {
        let i = self.units[u].current;
        let ins = self.ins(i);
        let job = self.units[u].job.take();
        if let (Op::Load(m), Some(sp)) = (&ins.op, self.sp.as_mut()) {
            if self.opts.mode == Mode::Functional {
                exec::load(sp, m, self.cfg, &self.dram, &self.stream.uops);
            }
        }
        if let (Op::Store(m), Some(job)) = (&ins.op, &job) {
            if self.opts.mode == Mode::Functional {
                exec::store_commit(&mut self.dram, m, self.cfg, &job.store_data);
            }
        }
        self.close_log(i, c);
        let start = self.units[u].exec_start;
        self.record(u, start, c, Activity::of(ins), Some(i));
        self.units[u].state = State::WaitPush;
        self.units[u].since = c;
    }

    fn pushes_fit(&self, ins: &Instruction) -> bool {
        let depth = self.cfg.dep_queue_depth as usize;
        ins.pushes().iter().all(|q| self.tokens[q.index()] < depth)
    }

    fn pops_ready(&self, ins: &Instruction) -> bool {
        pops_of(ins).iter().all(|q| self.tokens[q.index()] > 0)
    }

    fn exec_done(&self, u: usize, c: u64) -> bool {
        match self.units[u].state {
            State::Exec { until: Some(t) } => t <= c,
            State::Exec { until: None } => self.units[u].job.as_ref().is_none_or(Job::done),
            _ => false,
        }
    }

    fn step_unit(&mut self, u: usize, c: u64) -> Result<(), SimError> {
        loop {
            match self.units[u].state {
                State::Exec { .. } => {
                    if !self.exec_done(u, c) {
                        return Ok(());
                    }
                    self.finish_exec(u, c);
                }
                State::WaitPush => {
                    let i = self.units[u].current;
                    let ins = self.ins(i);
                    if !self.pushes_fit(ins) {
                        return Ok(());
                    }
                    for q in ins.pushes() {
                        self.tokens[q.index()] += 1;
                        self.high[q.index()] = self.high[q.index()].max(self.tokens[q.index()]);
                    }
                    let since = self.units[u].since;
                    self.record(u, since, c, Activity::Blocked, Some(i));
                    self.units[u].state = State::Idle;
                    self.units[u].since = c;
                    self.retired += 1;
                    if self.retired == self.stream.instructions.len() {
                        self.finished = Some(c);
                        return Ok(());
                    }
                }
                State::Idle | State::WaitPop => {
                    let Some(&(i, at)) = self.units[u].cmdq.front() else {
                        return Ok(());
                    };
                    if at >= c {
                        return Ok(());
                    }
                    let ins = self.ins(i);
                    if !self.pops_ready(ins) {
                        if self.units[u].state == State::Idle {
                            self.units[u].state = State::WaitPop;
                            self.units[u].since = c;
                        }
                        return Ok(());
                    }
                    for q in ins.pops() {
                        self.tokens[q.index()] -= 1;
                    }
                    if self.units[u].state == State::WaitPop {
                        let since = self.units[u].since;
                        self.record(u, since, c, Activity::Blocked, Some(i));
                    }
                    self.units[u].cmdq.pop_front();
                    self.start(u, i, c)?;
                }
            }
        }
    }

    /// Pick the unit that may use the memory engine first: compute-side
    /// loads have priority over the load module.
    fn read_owner(&self, want: impl Fn(&Job) -> bool) -> Option<usize> {
        [Module::Compute.index(), Module::Load.index()]
            .into_iter()
            .find(|&u| self.units[u].job.as_ref().is_some_and(&want))
    }

    fn step(&mut self, c: u64) -> Result<(), SimError> {
        if let Some((_, req)) = self.vme.complete(c) {
            *self.read.entry(req.kind).or_default() += req.len;
            self.units[req.owner].job.as_mut().expect("owner has a job").outstanding -= 1;
        }
        if let Some((end, owner)) = self.write_end {
            if end == c {
                self.responses.push((c + self.cfg.dram_latency_cycles as u64, owner));
                self.write_end = None;
            }
        }
        let mut k = 0;
        while k < self.responses.len() {
            if self.responses[k].0 == c {
                let (_, owner) = self.responses.swap_remove(k);
                self.write_inflight -= 1;
                self.units[owner].job.as_mut().expect("owner has a job").outstanding -= 1;
            } else {
                k += 1;
            }
        }
        for u in 0..3 {
            self.step_unit(u, c)?;
        }
        if self.finished.is_some() {
            return Ok(());
        }
        if self.vme.has_free_tag() {
            if let Some(u) = self.read_owner(|j| !j.reads.is_empty()) {
                let job = self.units[u].job.as_mut().unwrap();
                let req = job.reads.pop_front().unwrap();
                job.outstanding += 1;
                self.vme.issue(req, c).expect("free tag");
            }
        }
        if self.vme.start_burst(c).is_none() && !self.vme.reader_busy(c) {
            if let Some(u) = self.read_owner(|j| j.pads > 0) {
                self.units[u].job.as_mut().unwrap().pads -= 1;
            }
        }
        let st = Module::Store.index();
        if self.write_end.is_none()
            && self.write_inflight < self.cfg.vme_max_inflight as usize
            && self.vme.bus_free_at() <= c
        {
            if let Some(job) = self.units[st].job.as_mut() {
                if let Some((addr, len)) = job.writes.pop_front() {
                    job.outstanding += 1;
                    self.write_inflight += 1;
                    *self.written.entry(MemKind::Out).or_default() += len;
                    let p = pulses(addr, len, self.cfg.bus_bytes());
                    let end = self.vme.stream_write(p, c).expect("bus checked free");
                    self.write_end = Some((end, st));
                }
            }
        }
        if self.pc < self.stream.instructions.len() {
            let m = self.ins(self.pc).module().index();
            if self.units[m].cmdq.len() < CMD_QUEUE_DEPTH {
                self.units[m].cmdq.push_back((self.pc, c));
                self.pc += 1;
            }
        }
        Ok(())
    }

    fn next_event(&self, c: u64) -> Option<u64> {
        let soon = c + 1;
        let mut next: Option<u64> = None;
        let mut at = |t: u64| next = Some(next.map_or(t, |n: u64| n.min(t)));
        if self.pc < self.stream.instructions.len() {
            let m = self.ins(self.pc).module().index();
            if self.units[m].cmdq.len() < CMD_QUEUE_DEPTH {
                at(soon);
            }
        }
        for unit in &self.units {
            match unit.state {
                State::Exec { until: Some(t) } => at(t.max(soon)),
                State::Exec { until: None } => {
                    let job = unit.job.as_ref().unwrap();
                    if job.done() {
                        at(soon);
                    }
                    if !job.reads.is_empty() && self.vme.has_free_tag() {
                        at(soon);
                    }
                    if job.pads > 0 && !self.vme.reader_busy(c) {
                        at(soon);
                    }
                }
                State::WaitPush => {
                    if self.pushes_fit(self.ins(unit.current)) {
                        at(soon);
                    }
                }
                State::Idle | State::WaitPop => {
                    if let Some(&(i, t)) = unit.cmdq.front() {
                        if t >= c || self.pops_ready(self.ins(i)) {
                            at(soon);
                        }
                    }
                }
            }
        }
        if let Some(t) = self.vme.next_event(c) {
            at(t);
        }
        if let Some((end, _)) = self.write_end {
            at(end);
        }
        for &(t, _) in &self.responses {
            at(t);
        }
        let st = &self.units[Module::Store.index()];
        if self.write_end.is_none()
            && self.write_inflight < self.cfg.vme_max_inflight as usize
            && st.job.as_ref().is_some_and(|j| !j.writes.is_empty())
        {
            at(self.vme.bus_free_at().max(soon));
        }
        next
    }

    fn deadlock(&self, c: u64) -> Deadlock {
        let mut blocked = Vec::new();
        for unit in &self.units {
            let (i, queue, full) = match unit.state {
                State::WaitPop => {
                    let i = unit.cmdq.front().unwrap().0;
                    let q = self.ins(i).pops().into_iter().find(|q| self.tokens[q.index()] == 0);
                    (i, q, false)
                }
                State::WaitPush => {
                    let i = unit.current;
                    let depth = self.cfg.dep_queue_depth as usize;
                    let q = self.ins(i).pushes().into_iter().find(|q| self.tokens[q.index()] >= depth);
                    (i, q, true)
                }
                _ => continue,
            };
            if let Some(queue) = queue {
                blocked.push(Blocked {
                    index: i,
                    module: unit.module,
                    instruction: self.ins(i).mnemonic(),
                    queue,
                    full,
                });
            }
        }
        Deadlock { cycle: c, blocked, undispatched: self.stream.instructions.len() - self.pc }
    }
}

fn uops_window<'u>(
    sp: Option<&'u Scratchpads>,
    stream_uops: &'u [Uop],
    end: u32,
    i: usize,
) -> Result<&'u [Uop], SimError> {
    // spans are computed from the on-chip uop image in functional mode and
    // from the stream's table otherwise
    let table = sp.map(|s| &s.uop[..]).unwrap_or(stream_uops);
    if end as usize > table.len() {
        return Err(SimError::Fault {
            instruction: i,
            message: format!("uop_end {end} exceeds the micro-op table ({})", table.len()),
        });
    }
    Ok(table)
}

use crate::codegen::Uop;

/// Simulate a stream. `dram` seeds functional mode (zeros when absent).
pub fn simulate(
    stream: &InstructionStream,
    cfg: &AccelConfig,
    opts: &SimOptions,
    dram: Option<DramImage>,
) -> Result<SimReport, SimError> {
    cfg.validate().map_err(|e| SimError::Invalid(e.to_string()))?;
    if let Some(i) = stream.instructions.iter().position(|i| i.has_invalid_flags()) {
        return Err(SimError::Invalid(format!(
            "#{i} {} sets a dependency flag its module does not have",
            stream.instructions[i].mnemonic()
        )));
    }
    let functional = opts.mode == Mode::Functional;
    let unit = |module| Unit {
        module,
        state: State::Idle,
        since: 0,
        current: 0,
        exec_start: 0,
        job: None,
        cmdq: VecDeque::new(),
        intervals: Vec::new(),
    };
    let zeros: ByteCounts = MemKind::DATA.iter().map(|&k| (k, 0)).collect();
    let mut sim = Sim {
        stream,
        cfg,
        opts: *opts,
        units: [unit(Module::Load), unit(Module::Compute), unit(Module::Store)],
        tokens: [0; 4],
        high: [0; 4],
        vme: Vme::new(cfg, opts.seed),
        write_end: None,
        responses: Vec::new(),
        write_inflight: 0,
        pc: 0,
        retired: 0,
        finished: None,
        read: zeros.clone(),
        written: zeros,
        macs: 0,
        sp: functional.then(|| Scratchpads::new(cfg)),
        dram: dram.unwrap_or_default(),
        accesses: Vec::new(),
        open_access: Vec::new(),
    };
    let mut c = 0u64;
    let mut deadlock = None;
    loop {
        sim.step(c)?;
        if sim.finished.is_some() {
            break;
        }
        match sim.next_event(c) {
            Some(t) => c = t,
            None => {
                deadlock = Some(sim.deadlock(c));
                break;
            }
        }
    }
    let total = sim.finished.unwrap_or(c);
    let mut intervals = Vec::new();
    for u in sim.units.iter_mut() {
        let open = match u.state {
            State::Exec { .. } => Some((u.exec_start, Activity::of(&stream.instructions[u.current]), Some(u.current))),
            State::WaitPop => Some((u.since, Activity::Blocked, u.cmdq.front().map(|f| f.0))),
            State::WaitPush => Some((u.since, Activity::Blocked, Some(u.current))),
            State::Idle => None,
        };
        if let Some((start, kind, ins)) = open {
            if total > start {
                u.intervals.push(Interval { start, end: total, process: u.module, kind, instruction: ins });
            }
        }
        u.intervals.sort_by_key(|i| i.start);
        let mut t = 0;
        for iv in std::mem::take(&mut u.intervals) {
            if iv.start > t {
                intervals.push(Interval {
                    start: t,
                    end: iv.start,
                    process: u.module,
                    kind: Activity::Idle,
                    instruction: None,
                });
            }
            t = iv.end;
            intervals.push(iv);
        }
        if total > t {
            intervals.push(Interval {
                start: t,
                end: total,
                process: u.module,
                kind: Activity::Idle,
                instruction: None,
            });
        }
    }
    Ok(SimReport {
        total_cycles: total,
        completed: sim.finished.is_some(),
        instructions: stream.instructions.len(),
        intervals,
        dram_read_bytes: sim.read,
        dram_write_bytes: sim.written,
        fetch_bytes: sim.pc as u64 * crate::config::INS_BITS as u64 / 8,
        queue_high_water: Queue::ALL.iter().map(|&q| (q, sim.high[q.index()])).collect(),
        vme_inflight_high_water: sim.vme.high_water(),
        vme_read_pulses: sim.vme.pulses_streamed(),
        macs: sim.macs,
        deadlock,
        dram: functional.then_some(sim.dram),
        scratchpads: sim.sp,
        accesses: sim.accesses,
    })
}

/// Byte address of instruction `i` in the fetch image; instructions are
/// 16 bytes, so every fetch honours 64-bit alignment.
pub fn fetch_address(i: usize) -> u64 {
    i as u64 * (crate::config::INS_BITS as u64 / 8)
}
