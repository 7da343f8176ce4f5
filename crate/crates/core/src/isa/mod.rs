//! Minimal RISC-V-flavoured instruction set used to write every kernel.
//!
//! Only the instructions the sparse-dense kernels need exist. Stream
//! configuration (`scfgw`), the FREP hardware loop, and the FPU fence
//! (`fpsync`) are first-class opcodes rather than encoded CSR accesses.

mod asm;
mod builder;

use std::collections::BTreeMap;
use std::fmt;

use thiserror::Error;

pub use asm::{assemble, disassemble};
pub use builder::ProgramBuilder;

use crate::stream::config_reg;

pub const NUM_XREGS: usize = 32;
pub const NUM_FREGS: usize = 32;

/// Number of stream units addressable by `scfgw`.
pub const NUM_STREAM_UNITS: u8 = 2;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum IsaError {
    #[error("line {line}: unknown mnemonic `{mnemonic}`")]
    UnknownMnemonic { line: usize, mnemonic: String },
    #[error("line {line}: unresolved label `{label}`")]
    UnresolvedLabel { line: usize, label: String },
    #[error("line {line}: duplicate label `{label}`")]
    DuplicateLabel { line: usize, label: String },
    #[error("line {line}: register `{reg}` out of range")]
    RegisterOutOfRange { line: usize, reg: String },
    #[error("line {line}: {message}")]
    Syntax { line: usize, message: String },
    #[error("line {line}: invalid stream config target unit {unit} register {reg}")]
    InvalidConfigRegister { line: usize, unit: u8, reg: u8 },
    #[error("line {line}: {message}")]
    InvalidFrep { line: usize, message: String },
    #[error("line {line}: staggered register f{base}+{count} exceeds f31")]
    StaggerOutOfRange { line: usize, base: u8, count: u8 },
    #[error("line {line}: branch target {target} outside program of length {len}")]
    BadTarget { line: usize, target: usize, len: usize },
    #[error("program must have exactly one reachable halt, found {0}")]
    HaltCount(usize),
}

/// Integer register `x0`..`x31`; `x0` reads as zero.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct XReg(u8);

/// Floating-point register `f0`..`f31`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct FReg(u8);

impl XReg {
    pub const ZERO: XReg = XReg(0);

    pub fn new(id: u8) -> Option<Self> {
        (usize::from(id) < NUM_XREGS).then_some(Self(id))
    }

    pub(crate) const fn of(id: u8) -> Self {
        assert!(id < 32);
        Self(id)
    }

    pub fn index(self) -> usize {
        usize::from(self.0)
    }
}

impl FReg {
    pub fn new(id: u8) -> Option<Self> {
        (usize::from(id) < NUM_FREGS).then_some(Self(id))
    }

    pub(crate) const fn of(id: u8) -> Self {
        assert!(id < 32);
        Self(id)
    }

    pub fn index(self) -> usize {
        usize::from(self.0)
    }

    fn offset(self, by: u8) -> Self {
        Self(self.0 + by)
    }
}

impl fmt::Display for XReg {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "x{}", self.0)
    }
}

impl fmt::Display for FReg {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "f{}", self.0)
    }
}

/// Which register fields of a FREP body instruction are staggered.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default)]
pub struct StaggerMask(u8);

impl StaggerMask {
    pub const NONE: Self = Self(0);
    pub const RD: Self = Self(1);
    pub const RS1: Self = Self(2);
    pub const RS2: Self = Self(4);
    pub const RS3: Self = Self(8);

    pub const fn union(self, other: Self) -> Self {
        Self(self.0 | other.0)
    }

    pub const fn contains(self, other: Self) -> bool {
        self.0 & other.0 == other.0
    }

    pub fn is_empty(self) -> bool {
        self.0 == 0
    }

    pub fn bits(self) -> u8 {
        self.0
    }

    pub fn from_bits(bits: u8) -> Option<Self> {
        (bits < 16).then_some(Self(bits))
    }
}

impl std::ops::BitOr for StaggerMask {
    type Output = Self;
    fn bitor(self, rhs: Self) -> Self {
        self.union(rhs)
    }
}

impl fmt::Display for StaggerMask {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.is_empty() {
            return f.write_str("none");
        }
        let names = [(Self::RD, "rd"), (Self::RS1, "rs1"), (Self::RS2, "rs2"), (Self::RS3, "rs3")];
        let parts: Vec<&str> = names.iter().filter(|(m, _)| self.contains(*m)).map(|(_, n)| *n).collect();
        f.write_str(&parts.join("|"))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Opcode {
    Add,
    Sub,
    Addi,
    Slli,
    Lw,
    Lh,
    Sw,
    Bne,
    Blt,
    Jump,
    Fld,
    Fsd,
    FmaddD,
    FaddD,
    FmulD,
    FmvZero,
    Scfgw,
    SsrEnable,
    SsrDisable,
    Frep,
    FpSync,
    Halt,
}

/// One instruction. Branch targets are resolved instruction indices.
///
/// Loads zero-extend: `lw` and `lh` fetch unsigned row pointers and indices.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Instruction {
    Add {
        rd: XReg,
        rs1: XReg,
        rs2: XReg,
    },
    Sub {
        rd: XReg,
        rs1: XReg,
        rs2: XReg,
    },
    Addi {
        rd: XReg,
        rs1: XReg,
        imm: i32,
    },
    Slli {
        rd: XReg,
        rs1: XReg,
        shamt: u8,
    },
    Lw {
        rd: XReg,
        base: XReg,
        offset: i32,
    },
    Lh {
        rd: XReg,
        base: XReg,
        offset: i32,
    },
    Sw {
        src: XReg,
        base: XReg,
        offset: i32,
    },
    Bne {
        rs1: XReg,
        rs2: XReg,
        target: usize,
    },
    Blt {
        rs1: XReg,
        rs2: XReg,
        target: usize,
    },
    Jump {
        target: usize,
    },
    Fld {
        fd: FReg,
        base: XReg,
        offset: i32,
    },
    Fsd {
        fs: FReg,
        base: XReg,
        offset: i32,
    },
    FmaddD {
        fd: FReg,
        fs1: FReg,
        fs2: FReg,
        fs3: FReg,
    },
    FaddD {
        fd: FReg,
        fs1: FReg,
        fs2: FReg,
    },
    FmulD {
        fd: FReg,
        fs1: FReg,
        fs2: FReg,
    },
    FmvZero {
        fd: FReg,
    },
    /// Write the value of `value` into config register `reg` of stream `unit`.
    Scfgw {
        value: XReg,
        unit: u8,
        reg: u8,
    },
    SsrEnable,
    SsrDisable,
    /// Repeat the next `body_len` FP instructions `count` times.
    Frep {
        count: XReg,
        body_len: u8,
        stagger_count: u8,
        stagger_mask: StaggerMask,
    },
    FpSync,
    Halt,
}

impl Instruction {
    pub fn opcode(&self) -> Opcode {
        use Instruction::*;
        match self {
            Add { .. } => Opcode::Add,
            Sub { .. } => Opcode::Sub,
            Addi { .. } => Opcode::Addi,
            Slli { .. } => Opcode::Slli,
            Lw { .. } => Opcode::Lw,
            Lh { .. } => Opcode::Lh,
            Sw { .. } => Opcode::Sw,
            Bne { .. } => Opcode::Bne,
            Blt { .. } => Opcode::Blt,
            Jump { .. } => Opcode::Jump,
            Fld { .. } => Opcode::Fld,
            Fsd { .. } => Opcode::Fsd,
            FmaddD { .. } => Opcode::FmaddD,
            FaddD { .. } => Opcode::FaddD,
            FmulD { .. } => Opcode::FmulD,
            FmvZero { .. } => Opcode::FmvZero,
            Scfgw { .. } => Opcode::Scfgw,
            SsrEnable => Opcode::SsrEnable,
            SsrDisable => Opcode::SsrDisable,
            Frep { .. } => Opcode::Frep,
            FpSync => Opcode::FpSync,
            Halt => Opcode::Halt,
        }
    }

    /// Instructions executed by the FPU subsystem rather than the integer core.
    pub fn is_offloaded(&self) -> bool {
        use Instruction::*;
        matches!(
            self,
            Fld { .. }
                | Fsd { .. }
                | FmaddD { .. }
                | FaddD { .. }
                | FmulD { .. }
                | FmvZero { .. }
                | SsrEnable
                | SsrDisable
                | Frep { .. }
        )
    }

    /// Instructions allowed inside a FREP body.
    pub fn is_fp_compute(&self) -> bool {
        matches!(
            self,
            Instruction::FmaddD { .. }
                | Instruction::FaddD { .. }
                | Instruction::FmulD { .. }
                | Instruction::FmvZero { .. }
        )
    }

    pub fn branch_target(&self) -> Option<usize> {
        match *self {
            Instruction::Bne { target, .. } | Instruction::Blt { target, .. } | Instruction::Jump { target } => {
                Some(target)
            }
            _ => None,
        }
    }

    pub(crate) fn with_target(self, new: usize) -> Self {
        match self {
            Instruction::Bne { rs1, rs2, .. } => Instruction::Bne { rs1, rs2, target: new },
            Instruction::Blt { rs1, rs2, .. } => Instruction::Blt { rs1, rs2, target: new },
            Instruction::Jump { .. } => Instruction::Jump { target: new },
            other => other,
        }
    }

    /// Apply FREP register staggering for the given offset.
    pub fn staggered(self, mask: StaggerMask, by: u8) -> Self {
        if by == 0 || mask.is_empty() {
            return self;
        }
        let s = |r: FReg, m: StaggerMask| if mask.contains(m) { r.offset(by) } else { r };
        match self {
            Instruction::FmaddD { fd, fs1, fs2, fs3 } => Instruction::FmaddD {
                fd: s(fd, StaggerMask::RD),
                fs1: s(fs1, StaggerMask::RS1),
                fs2: s(fs2, StaggerMask::RS2),
                fs3: s(fs3, StaggerMask::RS3),
            },
            Instruction::FaddD { fd, fs1, fs2 } => Instruction::FaddD {
                fd: s(fd, StaggerMask::RD),
                fs1: s(fs1, StaggerMask::RS1),
                fs2: s(fs2, StaggerMask::RS2),
            },
            Instruction::FmulD { fd, fs1, fs2 } => Instruction::FmulD {
                fd: s(fd, StaggerMask::RD),
                fs1: s(fs1, StaggerMask::RS1),
                fs2: s(fs2, StaggerMask::RS2),
            },
            Instruction::FmvZero { fd } => Instruction::FmvZero { fd: s(fd, StaggerMask::RD) },
            other => other,
        }
    }

    /// Highest FP register touched by each masked field, used for stagger bound checks.
    fn max_staggered_reg(&self, mask: StaggerMask) -> Option<FReg> {
        let pick = |r: FReg, m: StaggerMask| mask.contains(m).then_some(r);
        let regs: Vec<Option<FReg>> = match *self {
            Instruction::FmaddD { fd, fs1, fs2, fs3 } => vec![
                pick(fd, StaggerMask::RD),
                pick(fs1, StaggerMask::RS1),
                pick(fs2, StaggerMask::RS2),
                pick(fs3, StaggerMask::RS3),
            ],
            Instruction::FaddD { fd, fs1, fs2 } | Instruction::FmulD { fd, fs1, fs2 } => {
                vec![pick(fd, StaggerMask::RD), pick(fs1, StaggerMask::RS1), pick(fs2, StaggerMask::RS2)]
            }
            Instruction::FmvZero { fd } => vec![pick(fd, StaggerMask::RD)],
            _ => vec![],
        };
        regs.into_iter().flatten().max()
    }
}

/// Check a single instruction's static operand constraints.
pub(crate) fn check_instruction(ins: &Instruction, line: usize) -> Result<(), IsaError> {
    match *ins {
        Instruction::Scfgw { unit, reg, .. } => {
            if unit >= NUM_STREAM_UNITS || !config_reg::is_writable(reg) {
                return Err(IsaError::InvalidConfigRegister { line, unit, reg });
            }
        }
        Instruction::Frep { body_len: 0, .. } => {
            return Err(IsaError::InvalidFrep { line, message: "body length must be at least 1".into() });
        }
        Instruction::Slli { shamt, .. } if shamt >= 64 => {
            return Err(IsaError::Syntax { line, message: format!("shift amount {shamt} out of range") });
        }
        _ => {}
    }
    Ok(())
}

/// Check that `body` instruction number `pos` of a FREP is legal.
pub(crate) fn check_frep_body(frep: &Instruction, body: &Instruction, line: usize) -> Result<(), IsaError> {
    let Instruction::Frep { stagger_count, stagger_mask, .. } = *frep else {
        unreachable!("check_frep_body called on non-frep");
    };
    if !body.is_fp_compute() {
        return Err(IsaError::InvalidFrep {
            line,
            message: format!("`{}` cannot appear in a frep body", asm::format_instruction(body, &|t| t.to_string())),
        });
    }
    if let Some(top) = body.max_staggered_reg(stagger_mask) {
        if top.index() + usize::from(stagger_count) >= NUM_FREGS {
            return Err(IsaError::StaggerOutOfRange { line, base: top.0, count: stagger_count });
        }
    }
    Ok(())
}

/// A validated, immutable kernel program.
#[derive(Debug, Clone)]
pub struct Program {
    instructions: Vec<Instruction>,
    labels: BTreeMap<String, usize>,
    entry: usize,
}

impl PartialEq for Program {
    fn eq(&self, other: &Self) -> bool {
        self.instructions == other.instructions && self.entry == other.entry
    }
}

impl Eq for Program {}

impl Program {
    /// Validate and wrap an instruction list. Line numbers in errors are 1-based
    /// instruction positions.
    pub fn new(instructions: Vec<Instruction>, labels: BTreeMap<String, usize>) -> Result<Self, IsaError> {
        let len = instructions.len();
        for (i, ins) in instructions.iter().enumerate() {
            check_instruction(ins, i + 1)?;
            if let Some(t) = ins.branch_target() {
                if t >= len {
                    return Err(IsaError::BadTarget { line: i + 1, target: t, len });
                }
            }
            if let Instruction::Frep { body_len, .. } = *ins {
                let end = i + 1 + usize::from(body_len);
                if end > len {
                    return Err(IsaError::InvalidFrep {
                        line: i + 1,
                        message: format!("body of {body_len} runs past end of program"),
                    });
                }
                for (j, body) in instructions[i + 1..end].iter().enumerate() {
                    check_frep_body(ins, body, i + 2 + j)?;
                }
            }
        }
        let program = Self { instructions, labels, entry: 0 };
        let halts = program.reachable_halts();
        if halts != 1 {
            return Err(IsaError::HaltCount(halts));
        }
        Ok(program)
    }

    fn reachable_halts(&self) -> usize {
        let len = self.instructions.len();
        if len == 0 {
            return 0;
        }
        let mut seen = vec![false; len];
        let mut stack = vec![self.entry];
        let mut halts = 0;
        while let Some(pc) = stack.pop() {
            if pc >= len || seen[pc] {
                continue;
            }
            seen[pc] = true;
            match self.instructions[pc] {
                Instruction::Halt => halts += 1,
                Instruction::Jump { target } => stack.push(target),
                Instruction::Bne { target, .. } | Instruction::Blt { target, .. } => {
                    stack.push(target);
                    stack.push(pc + 1);
                }
                _ => stack.push(pc + 1),
            }
        }
        halts
    }

    pub fn instructions(&self) -> &[Instruction] {
        &self.instructions
    }

    pub fn get(&self, pc: usize) -> Option<&Instruction> {
        self.instructions.get(pc)
    }

    pub fn len(&self) -> usize {
        self.instructions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.instructions.is_empty()
    }

    pub fn entry(&self) -> usize {
        self.entry
    }

    pub fn labels(&self) -> &BTreeMap<String, usize> {
        &self.labels
    }

    pub fn label(&self, name: &str) -> Option<usize> {
        self.labels.get(name).copied()
    }

    /// Debug listing with instruction indices.
    pub fn listing(&self) -> String {
        let mut by_index: BTreeMap<usize, Vec<&str>> = BTreeMap::new();
        for (name, &idx) in &self.labels {
            by_index.entry(idx).or_default().push(name);
        }
        let mut out = String::new();
        for (i, ins) in self.instructions.iter().enumerate() {
            if let Some(names) = by_index.get(&i) {
                for n in names {
                    out.push_str(&format!("      {n}:\n"));
                }
            }
            let text = asm::format_instruction(ins, &|t| format!("@{t}"));
            out.push_str(&format!("{i:5} {text}\n"));
        }
        out
    }
}

impl fmt::Display for Program {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&disassemble(self))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn stagger_rewrites_masked_fields_only() {
        let ins = Instruction::FmaddD { fd: FReg(2), fs1: FReg(0), fs2: FReg(1), fs3: FReg(2) };
        let st = ins.staggered(StaggerMask::RD | StaggerMask::RS3, 3);
        assert_eq!(st, Instruction::FmaddD { fd: FReg(5), fs1: FReg(0), fs2: FReg(1), fs3: FReg(5) });
        assert_eq!(ins.staggered(StaggerMask::RD, 0), ins);
    }

    #[test]
    fn halt_only_program() {
        let p = Program::new(vec![Instruction::Halt], BTreeMap::new()).unwrap();
        assert_eq!(p.len(), 1);
    }

    #[test]
    fn missing_halt_rejected() {
        let err = Program::new(vec![Instruction::FpSync], BTreeMap::new()).unwrap_err();
        assert_eq!(err, IsaError::HaltCount(0));
    }

    #[test]
    fn unreachable_second_halt_is_fine() {
        let p =
            Program::new(vec![Instruction::Jump { target: 2 }, Instruction::Halt, Instruction::Halt], BTreeMap::new());
        assert!(p.is_ok());
    }

    #[test]
    fn scfgw_status_register_is_not_writable() {
        let err = Program::new(
            vec![Instruction::Scfgw { value: XReg(1), unit: 0, reg: 0 }, Instruction::Halt],
            BTreeMap::new(),
        )
        .unwrap_err();
        assert!(matches!(err, IsaError::InvalidConfigRegister { unit: 0, reg: 0, .. }));
    }

    #[test]
    fn frep_body_must_be_fp_compute() {
        let err = Program::new(
            vec![
                Instruction::Frep { count: XReg(1), body_len: 1, stagger_count: 0, stagger_mask: StaggerMask::NONE },
                Instruction::Halt,
            ],
            BTreeMap::new(),
        )
        .unwrap_err();
        assert!(matches!(err, IsaError::InvalidFrep { .. }));
    }
}
