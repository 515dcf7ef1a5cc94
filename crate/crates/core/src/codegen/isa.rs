//! Decoded instructions, micro-ops and their bit encodings.

use crate::config::{InstructionLayout, MemKind, OpcodeLayout};
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum EncodeError {
    #[error("field {opcode}.{field} = {value} does not fit in {width} bits")]
    FieldOverflow { opcode: &'static str, field: &'static str, value: i64, width: u32 },
    #[error("bad encoding: {0}")]
    Decode(String),
}

/// The four dependency flags carried by every instruction.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct DepFlags {
    #[serde(default, skip_serializing_if = "std::ops::Not::not")]
    pub pop_prev: bool,
    #[serde(default, skip_serializing_if = "std::ops::Not::not")]
    pub pop_next: bool,
    #[serde(default, skip_serializing_if = "std::ops::Not::not")]
    pub push_prev: bool,
    #[serde(default, skip_serializing_if = "std::ops::Not::not")]
    pub push_next: bool,
}

impl DepFlags {
    pub fn any(&self) -> bool {
        self.pop_prev || self.pop_next || self.push_prev || self.push_next
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PadKind {
    #[default]
    Zero,
    MinValue,
}

/// LOAD / STORE body. Sizes and addresses are in tiles of `kind`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct MemInsn {
    pub kind: MemKind,
    pub sram_base: u32,
    pub dram_base: u32,
    pub y_size: u32,
    pub x_size: u32,
    pub x_stride: u32,
    #[serde(default)]
    pub y_pad_top: u32,
    #[serde(default)]
    pub y_pad_bottom: u32,
    #[serde(default)]
    pub x_pad_left: u32,
    #[serde(default)]
    pub x_pad_right: u32,
    #[serde(default)]
    pub pad_kind: PadKind,
}

impl MemInsn {
    pub fn contiguous(kind: MemKind, sram_base: u32, dram_base: u32, len: u32) -> Self {
        MemInsn {
            kind,
            sram_base,
            dram_base,
            y_size: 1,
            x_size: len,
            x_stride: len,
            y_pad_top: 0,
            y_pad_bottom: 0,
            x_pad_left: 0,
            x_pad_right: 0,
            pad_kind: PadKind::Zero,
        }
    }

    pub fn rows(&self) -> u32 {
        self.y_pad_top + self.y_size + self.y_pad_bottom
    }

    pub fn cols(&self) -> u32 {
        self.x_pad_left + self.x_size + self.x_pad_right
    }

    /// Scratchpad entries written (load) or read (store), pads included.
    pub fn footprint(&self) -> u32 {
        self.rows() * self.cols()
    }

    /// Tiles that cross the memory bus.
    pub fn data_tiles(&self) -> u64 {
        self.y_size as u64 * self.x_size as u64
    }

    pub fn pad_tiles(&self) -> u64 {
        self.footprint() as u64 - self.data_tiles()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct GemmInsn {
    #[serde(default)]
    pub reset: bool,
    pub uop_begin: u32,
    pub uop_end: u32,
    pub iter_out: u32,
    pub iter_in: u32,
    pub acc_factor_out: u32,
    pub acc_factor_in: u32,
    pub inp_factor_out: u32,
    pub inp_factor_in: u32,
    pub wgt_factor_out: u32,
    pub wgt_factor_in: u32,
}

impl GemmInsn {
    pub fn iterations(&self) -> u64 {
        (self.uop_end - self.uop_begin) as u64 * self.iter_out as u64 * self.iter_in as u64
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum AluOp {
    Add,
    Max,
    Min,
    Shr,
    Mul,
    Clip,
}

impl AluOp {
    pub fn code(self) -> u64 {
        match self {
            AluOp::Min => 0,
            AluOp::Max => 1,
            AluOp::Add => 2,
            AluOp::Shr => 3,
            AluOp::Mul => 4,
            AluOp::Clip => 5,
        }
    }

    pub fn from_code(c: u64) -> Option<AluOp> {
        Some(match c {
            0 => AluOp::Min,
            1 => AluOp::Max,
            2 => AluOp::Add,
            3 => AluOp::Shr,
            4 => AluOp::Mul,
            5 => AluOp::Clip,
            _ => return None,
        })
    }

    /// Apply to one accumulator lane. Results wrap to `bits`.
    pub fn apply(self, dst: i64, src: i64, bits: u32) -> i64 {
        let v = match self {
            AluOp::Add => dst.wrapping_add(src),
            AluOp::Max => dst.max(src),
            AluOp::Min => dst.min(src),
            AluOp::Shr => {
                if src >= 0 {
                    dst >> src.min(63)
                } else {
                    dst.wrapping_shl((-src).min(63) as u32)
                }
            }
            AluOp::Mul => dst.wrapping_mul(src),
            AluOp::Clip => dst.max(0).min(src),
        };
        wrap_signed(v, bits)
    }
}

/// Sign-wrap a value to `bits` bits.
pub fn wrap_signed(v: i64, bits: u32) -> i64 {
    if bits >= 64 {
        return v;
    }
    let shift = 64 - bits;
    (v << shift) >> shift
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct AluInsn {
    #[serde(default)]
    pub reset: bool,
    pub uop_begin: u32,
    pub uop_end: u32,
    pub iter_out: u32,
    pub iter_in: u32,
    pub dst_factor_out: u32,
    pub dst_factor_in: u32,
    pub src_factor_out: u32,
    pub src_factor_in: u32,
    pub op: AluOp,
    #[serde(default)]
    pub use_imm: bool,
    #[serde(default)]
    pub imm: i32,
}

impl AluInsn {
    pub fn iterations(&self) -> u64 {
        (self.uop_end - self.uop_begin) as u64 * self.iter_out as u64 * self.iter_in as u64
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(tag = "opcode", rename_all = "UPPERCASE")]
pub enum Op {
    Load(MemInsn),
    Store(MemInsn),
    Gemm(GemmInsn),
    Alu(AluInsn),
    Finish,
}

/// The three decoupled execution modules.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Module {
    Load,
    Compute,
    Store,
}

impl Module {
    pub const ALL: [Module; 3] = [Module::Load, Module::Compute, Module::Store];

    pub fn index(self) -> usize {
        self as usize
    }
}

/// Dependency token queues between modules.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Queue {
    #[serde(rename = "LD->CMP")]
    LdToCmp,
    #[serde(rename = "CMP->LD")]
    CmpToLd,
    #[serde(rename = "CMP->ST")]
    CmpToSt,
    #[serde(rename = "ST->CMP")]
    StToCmp,
}

impl Queue {
    pub const ALL: [Queue; 4] = [Queue::LdToCmp, Queue::CmpToLd, Queue::CmpToSt, Queue::StToCmp];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn name(self) -> &'static str {
        match self {
            Queue::LdToCmp => "LD->CMP",
            Queue::CmpToLd => "CMP->LD",
            Queue::CmpToSt => "CMP->ST",
            Queue::StToCmp => "ST->CMP",
        }
    }
}

impl std::fmt::Display for Queue {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Instruction {
    #[serde(flatten)]
    pub op: Op,
    #[serde(flatten)]
    pub deps: DepFlags,
}

impl Instruction {
    pub fn new(op: Op) -> Self {
        Instruction { op, deps: DepFlags::default() }
    }

    pub fn load(m: MemInsn) -> Self {
        Self::new(Op::Load(m))
    }

    pub fn store(m: MemInsn) -> Self {
        Self::new(Op::Store(m))
    }

    pub fn finish() -> Self {
        Self::new(Op::Finish)
    }

    /// Module that executes this instruction.
    pub fn module(&self) -> Module {
        match &self.op {
            Op::Load(m) => match m.kind {
                MemKind::Inp | MemKind::Wgt => Module::Load,
                _ => Module::Compute,
            },
            Op::Store(_) => Module::Store,
            Op::Gemm(_) | Op::Alu(_) | Op::Finish => Module::Compute,
        }
    }

    /// Queues popped before execution, in the order they are checked.
    pub fn pops(&self) -> Vec<Queue> {
        let d = self.deps;
        let mut v = Vec::new();
        match self.module() {
            Module::Load => {
                if d.pop_next {
                    v.push(Queue::CmpToLd);
                }
            }
            Module::Compute => {
                if d.pop_prev {
                    v.push(Queue::LdToCmp);
                }
                if d.pop_next {
                    v.push(Queue::StToCmp);
                }
            }
            Module::Store => {
                if d.pop_prev {
                    v.push(Queue::CmpToSt);
                }
            }
        }
        v
    }

    /// Queues pushed at completion.
    pub fn pushes(&self) -> Vec<Queue> {
        let d = self.deps;
        let mut v = Vec::new();
        match self.module() {
            Module::Load => {
                if d.push_next {
                    v.push(Queue::LdToCmp);
                }
            }
            Module::Compute => {
                if d.push_prev {
                    v.push(Queue::CmpToLd);
                }
                if d.push_next {
                    v.push(Queue::CmpToSt);
                }
            }
            Module::Store => {
                if d.push_prev {
                    v.push(Queue::StToCmp);
                }
            }
        }
        v
    }

    /// Flags that name a queue the module does not have.
    pub fn has_invalid_flags(&self) -> bool {
        let d = self.deps;
        match self.module() {
            Module::Load => d.pop_prev || d.push_prev,
            Module::Store => d.pop_next || d.push_next,
            Module::Compute => false,
        }
    }

    pub fn mnemonic(&self) -> String {
        match &self.op {
            Op::Load(m) => format!("LOAD {}", m.kind),
            Op::Store(m) => format!("STORE {}", m.kind),
            Op::Gemm(g) if g.reset => "GEMM(reset)".to_string(),
            Op::Gemm(_) => "GEMM".to_string(),
            Op::Alu(a) => format!("ALU {:?}", a.op).to_uppercase(),
            Op::Finish => "FINISH".to_string(),
        }
    }
}

/// Scratchpad base indices for one GEMM/ALU inner iteration. For ALU
/// instructions `inp_idx` names the source accumulator entry.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Uop {
    pub acc_idx: u32,
    pub inp_idx: u32,
    pub wgt_idx: u32,
}

const OPC_LOAD: u64 = 0;
const OPC_STORE: u64 = 1;
const OPC_GEMM: u64 = 2;
const OPC_FINISH: u64 = 3;
const OPC_ALU: u64 = 4;

struct Packer<'a> {
    layout: &'a OpcodeLayout,
    word: u128,
}

impl Packer<'_> {
    fn put(&mut self, name: &'static str, value: u64) -> Result<(), EncodeError> {
        let field =
            self.layout.field(name).ok_or_else(|| EncodeError::Decode(format!("layout has no field {name}")))?;
        if field.width < 64 && value >> field.width != 0 {
            return Err(EncodeError::FieldOverflow {
                opcode: self.layout.name,
                field: field.name,
                value: value as i64,
                width: field.width,
            });
        }
        self.word |= (value as u128) << self.layout.offset(name);
        Ok(())
    }

    fn put_signed(&mut self, name: &'static str, value: i64) -> Result<(), EncodeError> {
        let w = self.layout.width(name);
        let lo = -(1i64 << (w - 1));
        let hi = (1i64 << (w - 1)) - 1;
        if value < lo || value > hi {
            return Err(EncodeError::FieldOverflow {
                opcode: self.layout.name,
                field: self.layout.field(name).unwrap().name,
                value,
                width: w,
            });
        }
        self.put(name, (value as u64) & ((1u64 << w) - 1))
    }
}

fn get(layout: &OpcodeLayout, word: u128, name: &str) -> u64 {
    let w = layout.width(name);
    ((word >> layout.offset(name)) & ((1u128 << w) - 1)) as u64
}

fn get_signed(layout: &OpcodeLayout, word: u128, name: &str) -> i64 {
    let w = layout.width(name);
    let v = get(layout, word, name) as i64;
    (v << (64 - w)) >> (64 - w)
}

fn put_deps(p: &mut Packer<'_>, opcode: u64, d: &DepFlags) -> Result<(), EncodeError> {
    p.put("opcode", opcode)?;
    p.put("pop_prev", d.pop_prev as u64)?;
    p.put("pop_next", d.pop_next as u64)?;
    p.put("push_prev", d.push_prev as u64)?;
    p.put("push_next", d.push_next as u64)
}

fn get_deps(layout: &OpcodeLayout, word: u128) -> DepFlags {
    DepFlags {
        pop_prev: get(layout, word, "pop_prev") != 0,
        pop_next: get(layout, word, "pop_next") != 0,
        push_prev: get(layout, word, "push_prev") != 0,
        push_next: get(layout, word, "push_next") != 0,
    }
}

/// Pack one instruction; every field is range-checked against its width.
pub fn encode(ins: &Instruction, layout: &InstructionLayout) -> Result<u128, EncodeError> {
    let (opcode_layout, opcode) = match &ins.op {
        Op::Load(_) => (&layout.mem, OPC_LOAD),
        Op::Store(_) => (&layout.mem, OPC_STORE),
        Op::Gemm(_) => (&layout.gemm, OPC_GEMM),
        Op::Alu(_) => (&layout.alu, OPC_ALU),
        Op::Finish => (&layout.finish, OPC_FINISH),
    };
    let mut p = Packer { layout: opcode_layout, word: 0 };
    put_deps(&mut p, opcode, &ins.deps)?;
    match &ins.op {
        Op::Load(m) | Op::Store(m) => {
            p.put("mem_kind", m.kind.code())?;
            p.put("pad_kind", matches!(m.pad_kind, PadKind::MinValue) as u64)?;
            p.put("sram_base", m.sram_base as u64)?;
            p.put("dram_base", m.dram_base as u64)?;
            p.put("y_size", m.y_size as u64)?;
            p.put("x_size", m.x_size as u64)?;
            p.put("x_stride", m.x_stride as u64)?;
            p.put("y_pad_top", m.y_pad_top as u64)?;
            p.put("y_pad_bottom", m.y_pad_bottom as u64)?;
            p.put("x_pad_left", m.x_pad_left as u64)?;
            p.put("x_pad_right", m.x_pad_right as u64)?;
        }
        Op::Gemm(g) => {
            p.put("reset", g.reset as u64)?;
            p.put("uop_begin", g.uop_begin as u64)?;
            p.put("uop_end", g.uop_end as u64)?;
            p.put("iter_out", g.iter_out as u64)?;
            p.put("iter_in", g.iter_in as u64)?;
            p.put("acc_factor_out", g.acc_factor_out as u64)?;
            p.put("acc_factor_in", g.acc_factor_in as u64)?;
            p.put("inp_factor_out", g.inp_factor_out as u64)?;
            p.put("inp_factor_in", g.inp_factor_in as u64)?;
            p.put("wgt_factor_out", g.wgt_factor_out as u64)?;
            p.put("wgt_factor_in", g.wgt_factor_in as u64)?;
        }
        Op::Alu(a) => {
            p.put("reset", a.reset as u64)?;
            p.put("uop_begin", a.uop_begin as u64)?;
            p.put("uop_end", a.uop_end as u64)?;
            p.put("iter_out", a.iter_out as u64)?;
            p.put("iter_in", a.iter_in as u64)?;
            p.put("dst_factor_out", a.dst_factor_out as u64)?;
            p.put("dst_factor_in", a.dst_factor_in as u64)?;
            p.put("src_factor_out", a.src_factor_out as u64)?;
            p.put("src_factor_in", a.src_factor_in as u64)?;
            p.put("alu_op", a.op.code())?;
            p.put("use_imm", a.use_imm as u64)?;
            p.put_signed("imm", a.imm as i64)?;
        }
        Op::Finish => {}
    }
    Ok(p.word)
}

pub fn decode(word: u128, layout: &InstructionLayout) -> Result<Instruction, EncodeError> {
    let opcode = (word & 0b111) as u64;
    let op = match opcode {
        OPC_LOAD | OPC_STORE => {
            let l = &layout.mem;
            let kind = MemKind::from_code(get(l, word, "mem_kind"))
                .ok_or_else(|| EncodeError::Decode("unknown mem_kind".into()))?;
            let m = MemInsn {
                kind,
                sram_base: get(l, word, "sram_base") as u32,
                dram_base: get(l, word, "dram_base") as u32,
                y_size: get(l, word, "y_size") as u32,
                x_size: get(l, word, "x_size") as u32,
                x_stride: get(l, word, "x_stride") as u32,
                y_pad_top: get(l, word, "y_pad_top") as u32,
                y_pad_bottom: get(l, word, "y_pad_bottom") as u32,
                x_pad_left: get(l, word, "x_pad_left") as u32,
                x_pad_right: get(l, word, "x_pad_right") as u32,
                pad_kind: if get(l, word, "pad_kind") != 0 { PadKind::MinValue } else { PadKind::Zero },
            };
            if opcode == OPC_LOAD {
                Op::Load(m)
            } else {
                Op::Store(m)
            }
        }
        OPC_GEMM => {
            let l = &layout.gemm;
            Op::Gemm(GemmInsn {
                reset: get(l, word, "reset") != 0,
                uop_begin: get(l, word, "uop_begin") as u32,
                uop_end: get(l, word, "uop_end") as u32,
                iter_out: get(l, word, "iter_out") as u32,
                iter_in: get(l, word, "iter_in") as u32,
                acc_factor_out: get(l, word, "acc_factor_out") as u32,
                acc_factor_in: get(l, word, "acc_factor_in") as u32,
                inp_factor_out: get(l, word, "inp_factor_out") as u32,
                inp_factor_in: get(l, word, "inp_factor_in") as u32,
                wgt_factor_out: get(l, word, "wgt_factor_out") as u32,
                wgt_factor_in: get(l, word, "wgt_factor_in") as u32,
            })
        }
        OPC_ALU => {
            let l = &layout.alu;
            Op::Alu(AluInsn {
                reset: get(l, word, "reset") != 0,
                uop_begin: get(l, word, "uop_begin") as u32,
                uop_end: get(l, word, "uop_end") as u32,
                iter_out: get(l, word, "iter_out") as u32,
                iter_in: get(l, word, "iter_in") as u32,
                dst_factor_out: get(l, word, "dst_factor_out") as u32,
                dst_factor_in: get(l, word, "dst_factor_in") as u32,
                src_factor_out: get(l, word, "src_factor_out") as u32,
                src_factor_in: get(l, word, "src_factor_in") as u32,
                op: AluOp::from_code(get(l, word, "alu_op"))
                    .ok_or_else(|| EncodeError::Decode("unknown alu_op".into()))?,
                use_imm: get(l, word, "use_imm") != 0,
                imm: get_signed(l, word, "imm") as i32,
            })
        }
        OPC_FINISH => Op::Finish,
        other => return Err(EncodeError::Decode(format!("unknown opcode {other}"))),
    };
    let l = match opcode {
        OPC_GEMM => &layout.gemm,
        OPC_ALU => &layout.alu,
        OPC_FINISH => &layout.finish,
        _ => &layout.mem,
    };
    Ok(Instruction { op, deps: get_deps(l, word) })
}

pub fn encode_uop(u: &Uop, layout: &InstructionLayout) -> Result<u64, EncodeError> {
    let mut p = Packer { layout: &layout.uop, word: 0 };
    p.put("acc_idx", u.acc_idx as u64)?;
    p.put("inp_idx", u.inp_idx as u64)?;
    p.put("wgt_idx", u.wgt_idx as u64)?;
    Ok(p.word as u64)
}

pub fn decode_uop(word: u64, layout: &InstructionLayout) -> Uop {
    let l = &layout.uop;
    let w = word as u128;
    Uop {
        acc_idx: get(l, w, "acc_idx") as u32,
        inp_idx: get(l, w, "inp_idx") as u32,
        wgt_idx: get(l, w, "wgt_idx") as u32,
    }
}
