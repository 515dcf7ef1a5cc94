//! Static token checks, abstract execution, and the happens-before order
//! that dependency tokens impose.

use super::isa::{Module, Op, Queue};
use super::InstructionStream;
use serde::{Deserialize, Serialize};
use std::fmt;

/// An instruction at the head of its module that cannot start.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Blocked {
    pub index: usize,
    pub module: Module,
    pub instruction: String,
    pub queue: Queue,
    /// True when blocked on a full queue rather than an empty one.
    pub full: bool,
}

impl fmt::Display for Blocked {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let what = if self.full { "push to full" } else { "pop from empty" };
        write!(f, "#{} {} on {:?} blocked: {} {}", self.index, self.instruction, self.module, what, self.queue)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub enum TokenStatus {
    Ok,
    Deadlock(Vec<Blocked>),
    Malformed(String),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TokenCheck {
    pub status: TokenStatus,
    pub warnings: Vec<String>,
    /// A completion order consistent with every token edge (complete runs only).
    #[serde(skip)]
    pub order: Vec<usize>,
}

impl TokenCheck {
    pub fn is_ok(&self) -> bool {
        self.status == TokenStatus::Ok
    }
}

impl fmt::Display for TokenCheck {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match &self.status {
            TokenStatus::Ok => write!(f, "ok")?,
            TokenStatus::Malformed(m) => write!(f, "malformed stream: {m}")?,
            TokenStatus::Deadlock(b) => {
                write!(f, "deadlock:")?;
                for x in b {
                    write!(f, "\n  {x}")?;
                }
            }
        }
        for w in &self.warnings {
            write!(f, "\nwarning: {w}")?;
        }
        Ok(())
    }
}

fn structure_error(stream: &InstructionStream) -> Option<String> {
    let ins = &stream.instructions;
    let finishes = ins.iter().filter(|i| matches!(i.op, Op::Finish)).count();
    if finishes != 1 || !matches!(ins.last().map(|i| &i.op), Some(Op::Finish)) {
        return Some(format!("expected exactly one FINISH as the last instruction, found {finishes}"));
    }
    if let Some(i) = ins.iter().position(|i| i.has_invalid_flags()) {
        return Some(format!("#{i} {} sets a dependency flag its module does not have", ins[i].mnemonic()));
    }
    None
}

/// Per-queue balance check plus an abstract execution in which each module
/// runs its instructions in order and tokens are counted.
pub fn validate_tokens(stream: &InstructionStream) -> TokenCheck {
    let mut warnings = Vec::new();
    if let Some(m) = structure_error(stream) {
        return TokenCheck { status: TokenStatus::Malformed(m), warnings, order: Vec::new() };
    }
    let (mut pushes, mut pops) = ([0usize; 4], [0usize; 4]);
    for ins in &stream.instructions {
        for q in ins.pushes() {
            pushes[q.index()] += 1;
        }
        for q in ins.pops() {
            pops[q.index()] += 1;
        }
    }
    for q in Queue::ALL {
        let (pu, po) = (pushes[q.index()], pops[q.index()]);
        if pu > po {
            warnings.push(format!("unconsumed token on {q}: {pu} pushed, {po} popped"));
        } else if po > pu {
            warnings.push(format!("unbalanced queue {q}: {po} popped, only {pu} pushed"));
        }
    }
    let (order, blocked) = abstract_run(stream);
    let status = if blocked.is_empty() { TokenStatus::Ok } else { TokenStatus::Deadlock(blocked) };
    TokenCheck { status, warnings, order }
}

fn per_module(stream: &InstructionStream) -> [Vec<usize>; 3] {
    let mut lists: [Vec<usize>; 3] = Default::default();
    for (i, ins) in stream.instructions.iter().enumerate() {
        lists[ins.module().index()].push(i);
    }
    lists
}

fn abstract_run(stream: &InstructionStream) -> (Vec<usize>, Vec<Blocked>) {
    let depth = stream.config.dep_queue_depth as usize;
    let lists = per_module(stream);
    let mut head = [0usize; 3];
    let mut tokens = [0usize; 4];
    let mut order = Vec::with_capacity(stream.instructions.len());
    let blocker = |i: usize, tokens: &[usize; 4]| -> Option<(Queue, bool)> {
        let ins = &stream.instructions[i];
        if let Some(q) = ins.pops().into_iter().find(|q| tokens[q.index()] == 0) {
            return Some((q, false));
        }
        let mut after = *tokens;
        for q in ins.pops() {
            after[q.index()] -= 1;
        }
        ins.pushes().into_iter().find(|q| after[q.index()] + 1 > depth).map(|q| (q, true))
    };
    loop {
        let mut progressed = false;
        for m in 0..3 {
            while head[m] < lists[m].len() {
                let i = lists[m][head[m]];
                if blocker(i, &tokens).is_some() {
                    break;
                }
                let ins = &stream.instructions[i];
                for q in ins.pops() {
                    tokens[q.index()] -= 1;
                }
                for q in ins.pushes() {
                    tokens[q.index()] += 1;
                }
                order.push(i);
                head[m] += 1;
                progressed = true;
            }
        }
        if !progressed {
            break;
        }
    }
    let mut blocked = Vec::new();
    for m in Module::ALL {
        if let Some(&i) = lists[m.index()].get(head[m.index()]) {
            let (queue, full) = blocker(i, &tokens).expect("head is blocked");
            blocked.push(Blocked { index: i, module: m, instruction: stream.instructions[i].mnemonic(), queue, full });
        }
    }
    (order, blocked)
}

/// Vector clocks over the three modules. Program order within a module and
/// the k-th push to a queue before its k-th pop are the only edges.
#[derive(Debug, Clone)]
pub struct HappensBefore {
    module: Vec<Module>,
    pos: Vec<u32>,
    clock: Vec<[u32; 3]>,
}

impl HappensBefore {
    /// `None` when the token protocol cannot complete.
    pub fn compute(stream: &InstructionStream) -> Option<Self> {
        let check = validate_tokens(stream);
        if !check.is_ok() {
            return None;
        }
        let n = stream.instructions.len();
        let module: Vec<Module> = stream.instructions.iter().map(|i| i.module()).collect();
        let mut pos = vec![0u32; n];
        let mut count = [0u32; 3];
        for i in 0..n {
            count[module[i].index()] += 1;
            pos[i] = count[module[i].index()];
        }
        let mut pushers: [Vec<usize>; 4] = Default::default();
        for (i, ins) in stream.instructions.iter().enumerate() {
            for q in ins.pushes() {
                pushers[q.index()].push(i);
            }
        }
        let mut popped = [0usize; 4];
        let mut clock = vec![[0u32; 3]; n];
        let mut last: [Option<usize>; 3] = [None; 3];
        for &i in &check.order {
            let m = module[i].index();
            let mut c = [0u32; 3];
            if let Some(p) = last[m] {
                c = clock[p];
                c[m] = c[m].max(pos[p]);
            }
            for q in stream.instructions[i].pops() {
                let j = pushers[q.index()][popped[q.index()]];
                popped[q.index()] += 1;
                for k in 0..3 {
                    c[k] = c[k].max(clock[j][k]);
                }
                let mj = module[j].index();
                c[mj] = c[mj].max(pos[j]);
            }
            clock[i] = c;
            last[m] = Some(i);
        }
        Some(HappensBefore { module, pos, clock })
    }

    /// True when `a` is guaranteed to complete before `b` starts.
    pub fn ordered(&self, a: usize, b: usize) -> bool {
        a != b && self.pos[a] <= self.clock[b][self.module[a].index()]
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::codegen::isa::{GemmInsn, Instruction, MemInsn};
    use crate::codegen::{gen_conv_stream, GenOptions};
    use crate::config::{AccelConfig, MemKind};
    use crate::tps::TilingParams;
    use crate::workload::ConvLayer;

    fn identity_stream() -> InstructionStream {
        let layer = ConvLayer::conv(1, 4, 4, 16, 16, 1, 0, 1);
        gen_conv_stream(&layer, &AccelConfig::default(), &TilingParams::IDENTITY, GenOptions::default()).unwrap()
    }

    fn gemm() -> Instruction {
        Instruction::new(Op::Gemm(GemmInsn {
            reset: false,
            uop_begin: 0,
            uop_end: 1,
            iter_out: 1,
            iter_in: 1,
            acc_factor_out: 0,
            acc_factor_in: 0,
            inp_factor_out: 0,
            inp_factor_in: 0,
            wgt_factor_out: 0,
            wgt_factor_in: 0,
        }))
    }

    #[test]
    fn generated_stream_is_ok() {
        let c = validate_tokens(&identity_stream());
        assert!(c.is_ok(), "{c}");
        assert!(c.warnings.is_empty());
    }

    #[test]
    fn orphan_pop_deadlocks_at_gemm() {
        let mut s = InstructionStream::new(AccelConfig::default());
        let mut g = gemm();
        g.deps.pop_prev = true;
        s.instructions = vec![g, Instruction::finish()];
        let c = validate_tokens(&s);
        match c.status {
            TokenStatus::Deadlock(b) => {
                assert_eq!(b.len(), 1);
                assert_eq!(b[0].index, 0);
                assert_eq!(b[0].queue, Queue::LdToCmp);
            }
            other => panic!("expected deadlock, got {other:?}"),
        }
    }

    #[test]
    fn extra_push_warns() {
        let mut s = InstructionStream::new(AccelConfig::default());
        let mut l = Instruction::load(MemInsn::contiguous(MemKind::Inp, 0, 0, 1));
        l.deps.push_next = true;
        s.instructions = vec![l, Instruction::finish()];
        let c = validate_tokens(&s);
        assert!(c.is_ok());
        assert!(c.warnings[0].contains("unconsumed token"));
    }

    #[test]
    fn missing_finish_is_malformed() {
        let mut s = identity_stream();
        s.instructions.pop();
        assert!(matches!(validate_tokens(&s).status, TokenStatus::Malformed(_)));
    }

    #[test]
    fn happens_before_follows_tokens() {
        let s = identity_stream();
        let hb = HappensBefore::compute(&s).unwrap();
        // inp load (2) -> wgt load (3) -> GEMM (4) -> STORE (5) -> FINISH (6)
        assert!(hb.ordered(2, 4));
        assert!(hb.ordered(2, 5));
        assert!(hb.ordered(5, 6));
        assert!(!hb.ordered(4, 2));
        // the uop load and the input load are unordered
        assert!(!hb.ordered(0, 2) && !hb.ordered(2, 0));
    }
}
