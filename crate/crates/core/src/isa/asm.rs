//! Text assembler and disassembler.
//!
//! Grammar, one statement per line:
//!
//! ```text
//! line      := { label ":" } [ instruction ] [ "#" comment ]
//! label     := [A-Za-z_.][A-Za-z0-9_.]*
//! xreg      := "x0" .. "x31"          freg := "f0" .. "f31"
//! mem       := imm "(" xreg ")"       imm  := decimal | "0x" hex, optionally negative
//! ```
//!
//! Mnemonics: `add sub addi slli lw lh sw bne blt j fld fsd fmadd.d fadd.d
//! fmul.d fmv.zero scfgw ssr.enable ssr.disable frep fpsync halt`.
//! `scfgw xV, unit, reg` accepts a numeric or named config register
//! (`repeat`, `bounds0`..`bounds3`, `strides0`..`strides3`, `idxcfg`,
//! `idx_base`, `data_base`). `frep xN, body, stagger, mask` takes a mask of
//! `|`-joined fields from `rd rs1 rs2 rs3`, or `none`.

use std::collections::{BTreeMap, HashMap};

use super::{FReg, Instruction, IsaError, Program, StaggerMask, XReg};
use crate::stream::config_reg;

enum Target {
    Resolved(usize),
    Label(String),
}

struct Parsed {
    line: usize,
    ins: Instruction,
    target: Option<Target>,
}

pub fn assemble(text: &str) -> Result<Program, IsaError> {
    let mut labels: BTreeMap<String, usize> = BTreeMap::new();
    let mut parsed: Vec<Parsed> = Vec::new();

    for (i, raw) in text.lines().enumerate() {
        let line = i + 1;
        let mut rest = strip_comment(raw).trim();
        while let Some(colon) = rest.find(':') {
            let name = rest[..colon].trim();
            if !is_label(name) {
                break;
            }
            if labels.insert(name.to_string(), parsed.len()).is_some() {
                return Err(IsaError::DuplicateLabel { line, label: name.to_string() });
            }
            rest = rest[colon + 1..].trim();
        }
        if rest.is_empty() {
            continue;
        }
        let (ins, target) = parse_instruction(rest, line)?;
        super::check_instruction(&ins, line)?;
        parsed.push(Parsed { line, ins, target });
    }

    let mut instructions = Vec::with_capacity(parsed.len());
    for p in &parsed {
        let ins = match &p.target {
            None => p.ins,
            Some(Target::Resolved(t)) => p.ins.with_target(*t),
            Some(Target::Label(name)) => {
                let idx = labels
                    .get(name)
                    .copied()
                    .ok_or_else(|| IsaError::UnresolvedLabel { line: p.line, label: name.clone() })?;
                p.ins.with_target(idx)
            }
        };
        instructions.push(ins);
    }
    // Re-run structural validation so FREP body errors carry source lines.
    for (i, p) in parsed.iter().enumerate() {
        if let Instruction::Frep { body_len, .. } = p.ins {
            for j in 1..=usize::from(body_len) {
                match instructions.get(i + j) {
                    Some(body) => super::check_frep_body(&p.ins, body, parsed[i + j].line)?,
                    None => {
                        return Err(IsaError::InvalidFrep {
                            line: p.line,
                            message: format!("body of {body_len} runs past end of program"),
                        })
                    }
                }
            }
        }
    }
    Program::new(instructions, labels)
}

pub fn disassemble(program: &Program) -> String {
    let mut names: HashMap<usize, Vec<String>> = HashMap::new();
    for (name, &idx) in program.labels() {
        names.entry(idx).or_default().push(name.clone());
    }
    for ins in program.instructions() {
        if let Some(t) = ins.branch_target() {
            names.entry(t).or_insert_with(|| vec![format!(".L{t}")]);
        }
    }
    let target_name = |t: usize| names[&t][0].clone();
    let mut out = String::new();
    for (i, ins) in program.instructions().iter().enumerate() {
        if let Some(ns) = names.get(&i) {
            for n in ns {
                out.push_str(n);
                out.push_str(":\n");
            }
        }
        out.push_str("    ");
        out.push_str(&format_instruction(ins, &target_name));
        out.push('\n');
    }
    out
}

pub(crate) fn format_instruction(ins: &Instruction, target: &dyn Fn(usize) -> String) -> String {
    use Instruction::*;
    match *ins {
        Add { rd, rs1, rs2 } => format!("add {rd}, {rs1}, {rs2}"),
        Sub { rd, rs1, rs2 } => format!("sub {rd}, {rs1}, {rs2}"),
        Addi { rd, rs1, imm } => format!("addi {rd}, {rs1}, {imm}"),
        Slli { rd, rs1, shamt } => format!("slli {rd}, {rs1}, {shamt}"),
        Lw { rd, base, offset } => format!("lw {rd}, {offset}({base})"),
        Lh { rd, base, offset } => format!("lh {rd}, {offset}({base})"),
        Sw { src, base, offset } => format!("sw {src}, {offset}({base})"),
        Bne { rs1, rs2, target: t } => format!("bne {rs1}, {rs2}, {}", target(t)),
        Blt { rs1, rs2, target: t } => format!("blt {rs1}, {rs2}, {}", target(t)),
        Jump { target: t } => format!("j {}", target(t)),
        Fld { fd, base, offset } => format!("fld {fd}, {offset}({base})"),
        Fsd { fs, base, offset } => format!("fsd {fs}, {offset}({base})"),
        FmaddD { fd, fs1, fs2, fs3 } => format!("fmadd.d {fd}, {fs1}, {fs2}, {fs3}"),
        FaddD { fd, fs1, fs2 } => format!("fadd.d {fd}, {fs1}, {fs2}"),
        FmulD { fd, fs1, fs2 } => format!("fmul.d {fd}, {fs1}, {fs2}"),
        FmvZero { fd } => format!("fmv.zero {fd}"),
        Scfgw { value, unit, reg } => {
            format!("scfgw {value}, {unit}, {}", config_reg::name(reg).unwrap_or("?"))
        }
        SsrEnable => "ssr.enable".to_string(),
        SsrDisable => "ssr.disable".to_string(),
        Frep { count, body_len, stagger_count, stagger_mask } => {
            format!("frep {count}, {body_len}, {stagger_count}, {stagger_mask}")
        }
        FpSync => "fpsync".to_string(),
        Halt => "halt".to_string(),
    }
}

fn strip_comment(line: &str) -> &str {
    let cut = [line.find('#'), line.find("//")].into_iter().flatten().min();
    match cut {
        Some(i) => &line[..i],
        None => line,
    }
}

fn is_label(s: &str) -> bool {
    let mut chars = s.chars();
    match chars.next() {
        Some(c) if c.is_ascii_alphabetic() || c == '_' || c == '.' => {}
        _ => return false,
    }
    chars.all(|c| c.is_ascii_alphanumeric() || c == '_' || c == '.')
}

fn syntax(line: usize, message: impl Into<String>) -> IsaError {
    IsaError::Syntax { line, message: message.into() }
}

fn parse_instruction(text: &str, line: usize) -> Result<(Instruction, Option<Target>), IsaError> {
    let (mnemonic, rest) = match text.find(char::is_whitespace) {
        Some(i) => (&text[..i], text[i..].trim()),
        None => (text, ""),
    };
    let ops: Vec<&str> = if rest.is_empty() { Vec::new() } else { rest.split(',').map(str::trim).collect() };
    let want = |n: usize| -> Result<(), IsaError> {
        if ops.len() == n {
            Ok(())
        } else {
            Err(syntax(line, format!("`{mnemonic}` expects {n} operands, got {}", ops.len())))
        }
    };
    let x = |s: &str| xreg(s, line);
    let f = |s: &str| freg(s, line);

    use Instruction::*;
    let no_target = |ins| Ok((ins, None));
    match mnemonic {
        "add" | "sub" => {
            want(3)?;
            let (rd, rs1, rs2) = (x(ops[0])?, x(ops[1])?, x(ops[2])?);
            no_target(if mnemonic == "add" { Add { rd, rs1, rs2 } } else { Sub { rd, rs1, rs2 } })
        }
        "addi" => {
            want(3)?;
            no_target(Addi { rd: x(ops[0])?, rs1: x(ops[1])?, imm: imm32(ops[2], line)? })
        }
        "slli" => {
            want(3)?;
            let shamt = imm32(ops[2], line)?;
            let shamt = u8::try_from(shamt).map_err(|_| syntax(line, format!("bad shift amount {shamt}")))?;
            no_target(Slli { rd: x(ops[0])?, rs1: x(ops[1])?, shamt })
        }
        "lw" | "lh" | "sw" => {
            want(2)?;
            let r = x(ops[0])?;
            let (offset, base) = mem_operand(ops[1], line)?;
            no_target(match mnemonic {
                "lw" => Lw { rd: r, base, offset },
                "lh" => Lh { rd: r, base, offset },
                _ => Sw { src: r, base, offset },
            })
        }
        "bne" | "blt" => {
            want(3)?;
            let (rs1, rs2) = (x(ops[0])?, x(ops[1])?);
            let ins = if mnemonic == "bne" { Bne { rs1, rs2, target: 0 } } else { Blt { rs1, rs2, target: 0 } };
            Ok((ins, Some(target_operand(ops[2], line)?)))
        }
        "j" => {
            want(1)?;
            Ok((Jump { target: 0 }, Some(target_operand(ops[0], line)?)))
        }
        "fld" | "fsd" => {
            want(2)?;
            let r = f(ops[0])?;
            let (offset, base) = mem_operand(ops[1], line)?;
            no_target(if mnemonic == "fld" { Fld { fd: r, base, offset } } else { Fsd { fs: r, base, offset } })
        }
        "fmadd.d" => {
            want(4)?;
            no_target(FmaddD { fd: f(ops[0])?, fs1: f(ops[1])?, fs2: f(ops[2])?, fs3: f(ops[3])? })
        }
        "fadd.d" | "fmul.d" => {
            want(3)?;
            let (fd, fs1, fs2) = (f(ops[0])?, f(ops[1])?, f(ops[2])?);
            no_target(if mnemonic == "fadd.d" { FaddD { fd, fs1, fs2 } } else { FmulD { fd, fs1, fs2 } })
        }
        "fmv.zero" => {
            want(1)?;
            no_target(FmvZero { fd: f(ops[0])? })
        }
        "scfgw" => {
            want(3)?;
            let unit = imm32(ops[1], line)?;
            let unit = u8::try_from(unit).map_err(|_| syntax(line, format!("bad stream unit {unit}")))?;
            let reg = match config_reg::from_name(ops[2]) {
                Some(r) => r,
                None => {
                    let r = imm32(ops[2], line)?;
                    u8::try_from(r).map_err(|_| syntax(line, format!("bad config register {r}")))?
                }
            };
            no_target(Scfgw { value: x(ops[0])?, unit, reg })
        }
        "ssr.enable" => {
            want(0)?;
            no_target(SsrEnable)
        }
        "ssr.disable" => {
            want(0)?;
            no_target(SsrDisable)
        }
        "frep" => {
            want(4)?;
            let body = imm32(ops[1], line)?;
            let stagger = imm32(ops[2], line)?;
            let body_len = u8::try_from(body).map_err(|_| syntax(line, format!("bad frep body length {body}")))?;
            let stagger_count =
                u8::try_from(stagger).map_err(|_| syntax(line, format!("bad stagger count {stagger}")))?;
            no_target(Frep { count: x(ops[0])?, body_len, stagger_count, stagger_mask: stagger_mask(ops[3], line)? })
        }
        "fpsync" => {
            want(0)?;
            no_target(FpSync)
        }
        "halt" => {
            want(0)?;
            no_target(Halt)
        }
        other => Err(IsaError::UnknownMnemonic { line, mnemonic: other.to_string() }),
    }
}

fn reg_number(s: &str, prefix: char, line: usize) -> Result<u8, IsaError> {
    let out_of_range = || IsaError::RegisterOutOfRange { line, reg: s.to_string() };
    let digits =
        s.strip_prefix(prefix).ok_or_else(|| syntax(line, format!("expected {prefix}-register, got `{s}`")))?;
    if digits.is_empty() || !digits.chars().all(|c| c.is_ascii_digit()) {
        return Err(syntax(line, format!("expected {prefix}-register, got `{s}`")));
    }
    let n: u32 = digits.parse().map_err(|_| out_of_range())?;
    if n >= 32 {
        return Err(out_of_range());
    }
    Ok(n as u8)
}

fn xreg(s: &str, line: usize) -> Result<XReg, IsaError> {
    reg_number(s, 'x', line).map(XReg)
}

fn freg(s: &str, line: usize) -> Result<FReg, IsaError> {
    reg_number(s, 'f', line).map(FReg)
}

fn imm32(s: &str, line: usize) -> Result<i32, IsaError> {
    let bad = || syntax(line, format!("bad immediate `{s}`"));
    let (neg, body) = match s.strip_prefix('-') {
        Some(b) => (true, b),
        None => (false, s),
    };
    let magnitude: i64 = if let Some(hex) = body.strip_prefix("0x").or_else(|| body.strip_prefix("0X")) {
        i64::from_str_radix(&hex.replace('_', ""), 16).map_err(|_| bad())?
    } else {
        body.parse().map_err(|_| bad())?
    };
    let v = if neg { -magnitude } else { magnitude };
    i32::try_from(v).map_err(|_| bad())
}

fn mem_operand(s: &str, line: usize) -> Result<(i32, XReg), IsaError> {
    let open = s.find('(').ok_or_else(|| syntax(line, format!("expected offset(base), got `{s}`")))?;
    let close = s.rfind(')').filter(|&c| c > open).ok_or_else(|| syntax(line, format!("unclosed `(` in `{s}`")))?;
    let off = s[..open].trim();
    let offset = if off.is_empty() { 0 } else { imm32(off, line)? };
    Ok((offset, xreg(s[open + 1..close].trim(), line)?))
}

fn target_operand(s: &str, line: usize) -> Result<Target, IsaError> {
    if let Some(idx) = s.strip_prefix('@') {
        return idx.parse().map(Target::Resolved).map_err(|_| syntax(line, format!("bad target `{s}`")));
    }
    if is_label(s) {
        Ok(Target::Label(s.to_string()))
    } else {
        Err(syntax(line, format!("bad branch target `{s}`")))
    }
}

fn stagger_mask(s: &str, line: usize) -> Result<StaggerMask, IsaError> {
    if s == "none" {
        return Ok(StaggerMask::NONE);
    }
    let mut mask = StaggerMask::NONE;
    for part in s.split('|') {
        mask = mask
            | match part.trim() {
                "rd" => StaggerMask::RD,
                "rs1" => StaggerMask::RS1,
                "rs2" => StaggerMask::RS2,
                "rs3" => StaggerMask::RS3,
                other => return Err(syntax(line, format!("bad stagger field `{other}`"))),
            };
    }
    Ok(mask)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn smallest_program() {
        let p = assemble("halt").unwrap();
        assert_eq!(p.len(), 1);
        assert_eq!(p.instructions()[0], Instruction::Halt);
    }

    #[test]
    fn label_resolution() {
        let p = assemble("loop: addi x1,x1,-1\nbne x1,x0,loop\nhalt").unwrap();
        assert_eq!(p.len(), 3);
        assert_eq!(p.instructions()[1].branch_target(), Some(0));
        assert_eq!(p.label("loop"), Some(0));
    }

    #[test]
    fn errors_carry_line_numbers() {
        assert_eq!(
            assemble("halt\nfrobnicate x1").unwrap_err(),
            IsaError::UnknownMnemonic { line: 2, mnemonic: "frobnicate".into() }
        );
        assert_eq!(
            assemble("\n\nj nowhere\nhalt").unwrap_err(),
            IsaError::UnresolvedLabel { line: 3, label: "nowhere".into() }
        );
        assert_eq!(
            assemble("addi x32, x0, 1\nhalt").unwrap_err(),
            IsaError::RegisterOutOfRange { line: 1, reg: "x32".into() }
        );
        assert_eq!(
            assemble("fadd.d f1, f40, f2\nhalt").unwrap_err(),
            IsaError::RegisterOutOfRange { line: 1, reg: "f40".into() }
        );
    }

    #[test]
    fn comments_and_memory_operands() {
        let p = assemble("  # setup\nlw x5, -8(x10)  // trailing\nfsd f2, 0x10(x11)\nhalt").unwrap();
        assert_eq!(p.instructions()[0], Instruction::Lw { rd: XReg(5), base: XReg(10), offset: -8 });
        assert_eq!(p.instructions()[1], Instruction::Fsd { fs: FReg(2), base: XReg(11), offset: 16 });
    }

    #[test]
    fn frep_and_scfgw_syntax() {
        let p =
            assemble("scfgw x5, 1, data_base\nscfgw x6, 0, 2\nfrep x10, 1, 3, rd|rs3\nfmadd.d f2, f0, f1, f2\nhalt")
                .unwrap();
        assert_eq!(p.instructions()[0], Instruction::Scfgw { value: XReg(5), unit: 1, reg: config_reg::DATA_BASE });
        assert_eq!(
            p.instructions()[2],
            Instruction::Frep {
                count: XReg(10),
                body_len: 1,
                stagger_count: 3,
                stagger_mask: StaggerMask::RD | StaggerMask::RS3
            }
        );
    }

    #[test]
    fn stagger_past_f31_rejected_with_line() {
        let err = assemble("frep x1, 1, 3, rd|rs3\nfmadd.d f30, f0, f1, f30\nhalt").unwrap_err();
        assert_eq!(err, IsaError::StaggerOutOfRange { line: 2, base: 30, count: 3 });
    }

    #[test]
    fn disassembly_round_trips() {
        let src = "start:\n addi x1, x0, 4\nloop: addi x1, x1, -1\n bne x1, x0, loop\n blt x0, x1, done\n j start\ndone: halt\n";
        let p = assemble(src).unwrap();
        let again = assemble(&disassemble(&p)).unwrap();
        assert_eq!(p, again);
    }
}
