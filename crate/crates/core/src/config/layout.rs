//! Instruction and micro-op field budgeting under the fixed 128-bit width.
//!
//! Default field table (widths in bits; `idx(K)` = ceil(log2(entries of K))):
//!
//! | opcode | fields |
//! |--------|--------|
//! | all    | opcode 3, pop_prev 1, pop_next 1, push_prev 1, push_next 1 |
//! | LOAD/STORE | mem_kind 3, pad_kind 1, sram_base max idx, dram_base 32, y_size 16, x_size 16, x_stride 16, y_pad_top 4, y_pad_bottom 4, x_pad_left 4, x_pad_right 4 |
//! | GEMM   | reset 1, uop_begin idx(UOP), uop_end idx(UOP)+1, iter_out 14, iter_in 14, acc/inp/wgt factor out+in idx(ACC)/idx(INP)/idx(WGT) |
//! | ALU    | reset 1, uop_begin, uop_end, iter_out 14, iter_in 14, dst factor out+in idx(ACC), src factor out+in idx(ACC), alu_op 3, use_imm 1, imm 16 |
//! | FINISH | (common fields only) |
//! | uop    | acc_idx idx(ACC), inp_idx max(idx(INP), idx(ACC)), wgt_idx idx(WGT); must fit `uop_bits` |
//!
//! When an opcode exceeds 128 bits, loop-extent fields (`iter_*`, `y_size`,
//! `x_size`) lose one bit at a time round-robin down to [`MIN_EXTENT_WIDTH`],
//! then stride fields (loop factors, `x_stride`) down to [`MIN_STRIDE_WIDTH`].
//! Index fields never shrink. This priority order is a local choice; the
//! hardware it models does not say which fields were given up.

use super::{AccelConfig, MemKind, INS_BITS};
use std::fmt::Write as _;
use thiserror::Error;

pub const ITER_WIDTH: u32 = 14;
pub const SIZE_WIDTH: u32 = 16;
pub const MIN_EXTENT_WIDTH: u32 = 8;
pub const MIN_STRIDE_WIDTH: u32 = 8;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum FieldClass {
    Fixed,
    Index,
    Extent,
    Stride,
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct Field {
    pub name: &'static str,
    pub width: u32,
    pub class: FieldClass,
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct OpcodeLayout {
    pub name: &'static str,
    pub fields: Vec<Field>,
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum LayoutError {
    #[error("instruction overflow in {opcode}: {total} bits > {limit} [{accounting}]")]
    InstructionOverflow { opcode: &'static str, total: u32, limit: u32, accounting: String },
    #[error("uop overflow: {total} bits > uop_bits {limit} [{accounting}]")]
    UopOverflow { total: u32, limit: u32, accounting: String },
}

impl OpcodeLayout {
    pub fn total_bits(&self) -> u32 {
        self.fields.iter().map(|f| f.width).sum()
    }

    pub fn field(&self, name: &str) -> Option<&Field> {
        self.fields.iter().find(|f| f.name == name)
    }

    /// Width of a named field; panics on a name the layout does not define.
    pub fn width(&self, name: &str) -> u32 {
        self.field(name).unwrap_or_else(|| panic!("{}: no field {name}", self.name)).width
    }

    /// Largest value a named field can hold.
    pub fn max_value(&self, name: &str) -> u64 {
        let w = self.width(name);
        if w >= 64 {
            u64::MAX
        } else {
            (1u64 << w) - 1
        }
    }

    /// Bit offset of a field counted from the least significant bit.
    pub fn offset(&self, name: &str) -> u32 {
        let mut off = 0;
        for f in &self.fields {
            if f.name == name {
                return off;
            }
            off += f.width;
        }
        panic!("{}: no field {name}", self.name)
    }

    fn accounting(&self) -> String {
        let mut s = String::new();
        for (i, f) in self.fields.iter().enumerate() {
            if i > 0 {
                s.push(' ');
            }
            let _ = write!(s, "{}={}", f.name, f.width);
        }
        s
    }

    fn fit(mut self, limit: u32) -> Result<Self, LayoutError> {
        if self.total_bits() > limit {
            self.shrink_round_robin(FieldClass::Extent, MIN_EXTENT_WIDTH, limit);
        }
        if self.total_bits() > limit {
            self.shrink_round_robin(FieldClass::Stride, MIN_STRIDE_WIDTH, limit);
        }
        if self.total_bits() > limit {
            return Err(LayoutError::InstructionOverflow {
                opcode: self.name,
                total: self.total_bits(),
                limit,
                accounting: self.accounting(),
            });
        }
        Ok(self)
    }

    /// Take one bit from each shrinkable field of `class` in declaration
    /// order, cycling until the layout fits or every field is at `min`.
    fn shrink_round_robin(&mut self, class: FieldClass, min: u32, limit: u32) {
        let idx: Vec<usize> =
            self.fields.iter().enumerate().filter(|(_, f)| f.class == class).map(|(i, _)| i).collect();
        loop {
            let mut any = false;
            for &i in &idx {
                if self.total_bits() <= limit {
                    return;
                }
                if self.fields[i].width > min {
                    self.fields[i].width -= 1;
                    any = true;
                }
            }
            if !any || self.total_bits() <= limit {
                return;
            }
        }
    }
}

/// Per-opcode layouts for one configuration.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct InstructionLayout {
    pub mem: OpcodeLayout,
    pub gemm: OpcodeLayout,
    pub alu: OpcodeLayout,
    pub finish: OpcodeLayout,
    pub uop: OpcodeLayout,
}

impl InstructionLayout {
    pub fn opcodes(&self) -> [&OpcodeLayout; 4] {
        [&self.mem, &self.gemm, &self.alu, &self.finish]
    }
}

/// Bits needed to address `entries` slots (at least 1).
pub fn index_width(entries: u64) -> u32 {
    if entries <= 1 {
        1
    } else {
        64 - (entries - 1).leading_zeros()
    }
}

fn f(name: &'static str, width: u32, class: FieldClass) -> Field {
    Field { name, width, class }
}

fn common() -> Vec<Field> {
    use FieldClass::Fixed;
    vec![
        f("opcode", 3, Fixed),
        f("pop_prev", 1, Fixed),
        f("pop_next", 1, Fixed),
        f("push_prev", 1, Fixed),
        f("push_next", 1, Fixed),
    ]
}

pub fn derive_instruction_layout(cfg: &AccelConfig) -> Result<InstructionLayout, LayoutError> {
    use FieldClass::*;
    let idx = |k: MemKind| index_width(cfg.entries(k));
    let (inp_w, wgt_w, acc_w, uop_w) = (idx(MemKind::Inp), idx(MemKind::Wgt), idx(MemKind::Acc), idx(MemKind::Uop));
    let sram_w = inp_w.max(wgt_w).max(acc_w).max(uop_w);

    let mut mem = common();
    mem.extend([
        f("mem_kind", 3, Fixed),
        f("pad_kind", 1, Fixed),
        f("sram_base", sram_w, Index),
        f("dram_base", 32, Fixed),
        f("y_size", SIZE_WIDTH, Extent),
        f("x_size", SIZE_WIDTH, Extent),
        f("x_stride", SIZE_WIDTH, Stride),
        f("y_pad_top", 4, Fixed),
        f("y_pad_bottom", 4, Fixed),
        f("x_pad_left", 4, Fixed),
        f("x_pad_right", 4, Fixed),
    ]);

    let mut gemm = common();
    gemm.extend([
        f("reset", 1, Fixed),
        f("uop_begin", uop_w, Index),
        f("uop_end", uop_w + 1, Index),
        f("iter_out", ITER_WIDTH, Extent),
        f("iter_in", ITER_WIDTH, Extent),
        f("acc_factor_out", acc_w, Stride),
        f("acc_factor_in", acc_w, Stride),
        f("inp_factor_out", inp_w, Stride),
        f("inp_factor_in", inp_w, Stride),
        f("wgt_factor_out", wgt_w, Stride),
        f("wgt_factor_in", wgt_w, Stride),
    ]);

    let mut alu = common();
    alu.extend([
        f("reset", 1, Fixed),
        f("uop_begin", uop_w, Index),
        f("uop_end", uop_w + 1, Index),
        f("iter_out", ITER_WIDTH, Extent),
        f("iter_in", ITER_WIDTH, Extent),
        f("dst_factor_out", acc_w, Stride),
        f("dst_factor_in", acc_w, Stride),
        f("src_factor_out", acc_w, Stride),
        f("src_factor_in", acc_w, Stride),
        f("alu_op", 3, Fixed),
        f("use_imm", 1, Fixed),
        f("imm", 16, Fixed),
    ]);

    let finish = common();

    let uop = OpcodeLayout {
        name: "uop",
        fields: vec![f("acc_idx", acc_w, Index), f("inp_idx", inp_w.max(acc_w), Index), f("wgt_idx", wgt_w, Index)],
    };
    let mem = OpcodeLayout { name: "LOAD/STORE", fields: mem }.fit(INS_BITS)?;
    let gemm = OpcodeLayout { name: "GEMM", fields: gemm }.fit(INS_BITS)?;
    let alu = OpcodeLayout { name: "ALU", fields: alu }.fit(INS_BITS)?;
    let finish = OpcodeLayout { name: "FINISH", fields: finish }.fit(INS_BITS)?;
    if uop.total_bits() > cfg.uop_bits {
        return Err(LayoutError::UopOverflow {
            total: uop.total_bits(),
            limit: cfg.uop_bits,
            accounting: uop.accounting(),
        });
    }
    Ok(InstructionLayout { mem, gemm, alu, finish, uop })
}
