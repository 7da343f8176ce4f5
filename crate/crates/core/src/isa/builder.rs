use std::collections::BTreeMap;

use super::{check_frep_body, check_instruction, FReg, Instruction, IsaError, Program, StaggerMask, XReg};

/// Programmatic alternative to [`super::assemble`].
///
/// Every emitting call validates its instruction immediately, so errors
/// surface at the offending call; `line` in errors is the 1-based position
/// of the instruction being emitted.
#[derive(Debug, Default)]
pub struct ProgramBuilder {
    instructions: Vec<Instruction>,
    labels: BTreeMap<String, usize>,
    fixups: Vec<(usize, String)>,
    open_frep: Option<(Instruction, u8)>,
    fresh: usize,
}

type Res = Result<(), IsaError>;

impl ProgramBuilder {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.instructions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.instructions.is_empty()
    }

    /// A label name not used before in this builder.
    pub fn fresh_label(&mut self, prefix: &str) -> String {
        self.fresh += 1;
        format!("{prefix}.{}", self.fresh)
    }

    pub fn label(&mut self, name: impl Into<String>) -> Res {
        let name = name.into();
        let line = self.instructions.len() + 1;
        if self.labels.insert(name.clone(), self.instructions.len()).is_some() {
            return Err(IsaError::DuplicateLabel { line, label: name });
        }
        Ok(())
    }

    /// Append an instruction with already-resolved branch targets.
    pub fn emit(&mut self, ins: Instruction) -> Res {
        let line = self.instructions.len() + 1;
        check_instruction(&ins, line)?;
        if let Some((frep, remaining)) = self.open_frep.take() {
            check_frep_body(&frep, &ins, line)?;
            if remaining > 1 {
                self.open_frep = Some((frep, remaining - 1));
            }
        }
        if let Instruction::Frep { body_len, .. } = ins {
            self.open_frep = Some((ins, body_len));
        }
        self.instructions.push(ins);
        Ok(())
    }

    fn emit_to(&mut self, ins: Instruction, label: &str) -> Res {
        self.fixups.push((self.instructions.len(), label.to_string()));
        self.emit(ins)
    }

    pub fn add(&mut self, rd: XReg, rs1: XReg, rs2: XReg) -> Res {
        self.emit(Instruction::Add { rd, rs1, rs2 })
    }

    pub fn sub(&mut self, rd: XReg, rs1: XReg, rs2: XReg) -> Res {
        self.emit(Instruction::Sub { rd, rs1, rs2 })
    }

    pub fn addi(&mut self, rd: XReg, rs1: XReg, imm: i32) -> Res {
        self.emit(Instruction::Addi { rd, rs1, imm })
    }

    /// Load a small constant (`addi rd, x0, imm`).
    pub fn li(&mut self, rd: XReg, imm: i32) -> Res {
        self.addi(rd, XReg::ZERO, imm)
    }

    pub fn mv(&mut self, rd: XReg, rs: XReg) -> Res {
        self.addi(rd, rs, 0)
    }

    pub fn slli(&mut self, rd: XReg, rs1: XReg, shamt: u8) -> Res {
        self.emit(Instruction::Slli { rd, rs1, shamt })
    }

    pub fn lw(&mut self, rd: XReg, base: XReg, offset: i32) -> Res {
        self.emit(Instruction::Lw { rd, base, offset })
    }

    pub fn lh(&mut self, rd: XReg, base: XReg, offset: i32) -> Res {
        self.emit(Instruction::Lh { rd, base, offset })
    }

    pub fn sw(&mut self, src: XReg, base: XReg, offset: i32) -> Res {
        self.emit(Instruction::Sw { src, base, offset })
    }

    pub fn bne(&mut self, rs1: XReg, rs2: XReg, label: &str) -> Res {
        self.emit_to(Instruction::Bne { rs1, rs2, target: 0 }, label)
    }

    pub fn blt(&mut self, rs1: XReg, rs2: XReg, label: &str) -> Res {
        self.emit_to(Instruction::Blt { rs1, rs2, target: 0 }, label)
    }

    pub fn j(&mut self, label: &str) -> Res {
        self.emit_to(Instruction::Jump { target: 0 }, label)
    }

    pub fn fld(&mut self, fd: FReg, base: XReg, offset: i32) -> Res {
        self.emit(Instruction::Fld { fd, base, offset })
    }

    pub fn fsd(&mut self, fs: FReg, base: XReg, offset: i32) -> Res {
        self.emit(Instruction::Fsd { fs, base, offset })
    }

    pub fn fmadd(&mut self, fd: FReg, fs1: FReg, fs2: FReg, fs3: FReg) -> Res {
        self.emit(Instruction::FmaddD { fd, fs1, fs2, fs3 })
    }

    pub fn fadd(&mut self, fd: FReg, fs1: FReg, fs2: FReg) -> Res {
        self.emit(Instruction::FaddD { fd, fs1, fs2 })
    }

    pub fn fmul(&mut self, fd: FReg, fs1: FReg, fs2: FReg) -> Res {
        self.emit(Instruction::FmulD { fd, fs1, fs2 })
    }

    pub fn fmv_zero(&mut self, fd: FReg) -> Res {
        self.emit(Instruction::FmvZero { fd })
    }

    pub fn scfgw(&mut self, value: XReg, unit: u8, reg: u8) -> Res {
        self.emit(Instruction::Scfgw { value, unit, reg })
    }

    pub fn ssr_enable(&mut self) -> Res {
        self.emit(Instruction::SsrEnable)
    }

    pub fn ssr_disable(&mut self) -> Res {
        self.emit(Instruction::SsrDisable)
    }

    pub fn frep(&mut self, count: XReg, body_len: u8, stagger_count: u8, stagger_mask: StaggerMask) -> Res {
        self.emit(Instruction::Frep { count, body_len, stagger_count, stagger_mask })
    }

    pub fn fpsync(&mut self) -> Res {
        self.emit(Instruction::FpSync)
    }

    pub fn halt(&mut self) -> Res {
        self.emit(Instruction::Halt)
    }

    pub fn build(mut self) -> Result<Program, IsaError> {
        if let Some((_, remaining)) = self.open_frep {
            return Err(IsaError::InvalidFrep {
                line: self.instructions.len(),
                message: format!("frep body is missing {remaining} instruction(s)"),
            });
        }
        for (idx, label) in std::mem::take(&mut self.fixups) {
            let target = self
                .labels
                .get(&label)
                .copied()
                .ok_or_else(|| IsaError::UnresolvedLabel { line: idx + 1, label: label.clone() })?;
            self.instructions[idx] = self.instructions[idx].with_target(target);
        }
        Program::new(self.instructions, self.labels)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn f(n: u8) -> FReg {
        FReg::new(n).unwrap()
    }

    fn x(n: u8) -> XReg {
        XReg::new(n).unwrap()
    }

    #[test]
    fn halt_only() {
        let mut b = ProgramBuilder::new();
        b.halt().unwrap();
        assert_eq!(b.build().unwrap().len(), 1);
    }

    #[test]
    fn frep_with_stagger_is_legal() {
        let mut b = ProgramBuilder::new();
        b.frep(x(10), 1, 3, StaggerMask::RD | StaggerMask::RS3).unwrap();
        b.fmadd(f(2), f(0), f(1), f(2)).unwrap();
        b.halt().unwrap();
        let p = b.build().unwrap();
        assert!(matches!(p.instructions()[0], Instruction::Frep { stagger_count: 3, body_len: 1, .. }));
    }

    #[test]
    fn stagger_past_f31_rejected_eagerly() {
        let mut b = ProgramBuilder::new();
        b.frep(x(10), 1, 3, StaggerMask::RD | StaggerMask::RS3).unwrap();
        let err = b.fmadd(f(29), f(0), f(1), f(29)).unwrap_err();
        assert_eq!(err, IsaError::StaggerOutOfRange { line: 2, base: 29, count: 3 });
    }

    #[test]
    fn forward_labels_resolve() {
        let mut b = ProgramBuilder::new();
        b.j("end").unwrap();
        b.fpsync().unwrap();
        b.label("end").unwrap();
        b.halt().unwrap();
        let p = b.build().unwrap();
        assert_eq!(p.instructions()[0].branch_target(), Some(2));
    }

    #[test]
    fn unresolved_label_reported() {
        let mut b = ProgramBuilder::new();
        b.j("nowhere").unwrap();
        b.halt().unwrap();
        assert!(matches!(b.build().unwrap_err(), IsaError::UnresolvedLabel { line: 1, .. }));
    }

    #[test]
    fn bad_config_register_rejected_eagerly() {
        let mut b = ProgramBuilder::new();
        assert!(b.scfgw(x(5), 2, 12).is_err());
        assert!(b.scfgw(x(5), 0, 13).is_err());
    }
}
