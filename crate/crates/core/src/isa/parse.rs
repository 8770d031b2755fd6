use std::collections::BTreeMap;
use std::fmt;

use super::{ArithOp, BranchCond, CodeletKind, ControlOp, Instruction, Op, Program, Reg};

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum ParseErrorKind {
    Syntax(String),
    UnknownOpcode(String),
    BadRegister(String),
    BadImmediate(String),
    DuplicateLabel(String),
    UnresolvedLabel(String),
}

impl fmt::Display for ParseErrorKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ParseErrorKind::Syntax(msg) => write!(f, "syntax error: {msg}"),
            ParseErrorKind::UnknownOpcode(op) => write!(f, "unknown opcode `{op}`"),
            ParseErrorKind::BadRegister(r) => write!(f, "malformed register name `{r}`"),
            ParseErrorKind::BadImmediate(v) => write!(f, "malformed immediate `{v}`"),
            ParseErrorKind::DuplicateLabel(l) => write!(f, "duplicate label `{l}`"),
            ParseErrorKind::UnresolvedLabel(l) => write!(f, "unresolved label `{l}`"),
        }
    }
}

/// A parse failure located at a 1-based line and column.
#[derive(Clone, Debug, PartialEq, Eq, thiserror::Error)]
#[error("{line}:{column}: {kind}")]
pub struct ParseError {
    pub line: usize,
    pub column: usize,
    pub kind: ParseErrorKind,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
struct Pos {
    line: usize,
    column: usize,
}

#[derive(Clone, Debug, PartialEq, Eq)]
enum Tok {
    Ident(String),
    Number(String),
    Comma,
    Semi,
    Colon,
}

impl Tok {
    fn describe(&self) -> String {
        match self {
            Tok::Ident(s) => format!("`{s}`"),
            Tok::Number(s) => format!("number `{s}`"),
            Tok::Comma => "`,`".into(),
            Tok::Semi => "`;`".into(),
            Tok::Colon => "`:`".into(),
        }
    }
}

fn err(pos: Pos, kind: ParseErrorKind) -> ParseError {
    ParseError { line: pos.line, column: pos.column, kind }
}

fn lex(text: &str) -> Result<Vec<(Tok, Pos)>, ParseError> {
    let mut toks = Vec::new();
    for (line_no, line) in text.lines().enumerate() {
        let chars: Vec<char> = line.chars().collect();
        let mut i = 0;
        while i < chars.len() {
            let c = chars[i];
            let pos = Pos { line: line_no + 1, column: i + 1 };
            if c.is_whitespace() {
                i += 1;
            } else if c == '/' && chars.get(i + 1) == Some(&'/') {
                break;
            } else if c == ',' {
                toks.push((Tok::Comma, pos));
                i += 1;
            } else if c == ';' {
                toks.push((Tok::Semi, pos));
                i += 1;
            } else if c == ':' {
                toks.push((Tok::Colon, pos));
                i += 1;
            } else if c.is_ascii_alphabetic() || c == '_' {
                let start = i;
                while i < chars.len() && (chars[i].is_ascii_alphanumeric() || chars[i] == '_') {
                    i += 1;
                }
                toks.push((Tok::Ident(chars[start..i].iter().collect()), pos));
            } else if c.is_ascii_digit() || c == '-' {
                let start = i;
                i += 1;
                while i < chars.len() && (chars[i].is_ascii_alphanumeric() || chars[i] == '_') {
                    i += 1;
                }
                toks.push((Tok::Number(chars[start..i].iter().collect()), pos));
            } else {
                return Err(err(pos, ParseErrorKind::Syntax(format!("unexpected character `{c}`"))));
            }
        }
    }
    Ok(toks)
}

fn parse_immediate(s: &str) -> Option<u64> {
    if let Some(hex) = s.strip_prefix("0x").or_else(|| s.strip_prefix("0X")) {
        if hex.is_empty() || !hex.bytes().all(|b| b.is_ascii_hexdigit()) {
            return None;
        }
        return u64::from_str_radix(hex, 16).ok();
    }
    if let Some(neg) = s.strip_prefix('-') {
        if neg.is_empty() || !neg.bytes().all(|b| b.is_ascii_digit()) {
            return None;
        }
        let magnitude: u64 = neg.parse().ok()?;
        if magnitude > 1u64 << 63 {
            return None;
        }
        return Some(magnitude.wrapping_neg());
    }
    if s.is_empty() || !s.bytes().all(|b| b.is_ascii_digit()) {
        return None;
    }
    s.parse().ok()
}

struct Parser {
    toks: Vec<(Tok, Pos)>,
    at: usize,
    end: Pos,
}

impl Parser {
    fn peek(&self) -> Option<&Tok> {
        self.toks.get(self.at).map(|(t, _)| t)
    }

    fn peek2(&self) -> Option<&Tok> {
        self.toks.get(self.at + 1).map(|(t, _)| t)
    }

    fn pos(&self) -> Pos {
        self.toks.get(self.at).map(|(_, p)| *p).unwrap_or(self.end)
    }

    fn unexpected(&self, wanted: &str) -> ParseError {
        let found = match self.peek() {
            Some(t) => t.describe(),
            None => "end of input".into(),
        };
        err(self.pos(), ParseErrorKind::Syntax(format!("expected {wanted}, found {found}")))
    }

    fn ident(&mut self, wanted: &str) -> Result<(String, Pos), ParseError> {
        match self.toks.get(self.at) {
            Some((Tok::Ident(s), p)) => {
                let out = (s.clone(), *p);
                self.at += 1;
                Ok(out)
            }
            _ => Err(self.unexpected(wanted)),
        }
    }

    fn punct(&mut self, tok: Tok) -> Result<(), ParseError> {
        if self.peek() == Some(&tok) {
            self.at += 1;
            Ok(())
        } else {
            Err(self.unexpected(&tok.describe()))
        }
    }

    fn reg(&mut self) -> Result<Reg, ParseError> {
        let (name, pos) = self.ident("register")?;
        name.parse().map_err(|_| err(pos, ParseErrorKind::BadRegister(name)))
    }

    fn imm(&mut self) -> Result<u64, ParseError> {
        match self.toks.get(self.at) {
            Some((Tok::Number(s), p)) => {
                let v = parse_immediate(s).ok_or_else(|| err(*p, ParseErrorKind::BadImmediate(s.clone())))?;
                self.at += 1;
                Ok(v)
            }
            _ => Err(self.unexpected("immediate")),
        }
    }

    fn regs<const N: usize>(&mut self) -> Result<[Reg; N], ParseError> {
        let mut out = [Reg::b(0); N];
        for (i, slot) in out.iter_mut().enumerate() {
            if i > 0 {
                self.punct(Tok::Comma)?;
            }
            *slot = self.reg()?;
        }
        Ok(out)
    }
}

/// Parses assembly source into a [`Program`].
pub fn parse_program(text: &str) -> Result<Program, ParseError> {
    parse_located(text).map(|(p, _)| p)
}

/// Like [`parse_program`], also returning the 1-based `(line, column)` where
/// each instruction's opcode starts.
pub fn parse_located(text: &str) -> Result<(Program, Vec<(usize, usize)>), ParseError> {
    let toks = lex(text)?;
    let end = Pos { line: text.lines().count().max(1), column: text.lines().last().map_or(0, |l| l.chars().count()) + 1 };
    let mut p = Parser { toks, at: 0, end };

    let mut instructions = Vec::new();
    let mut positions = Vec::new();
    let mut labels: BTreeMap<String, usize> = BTreeMap::new();
    let mut references: Vec<(String, Pos)> = Vec::new();
    let mut pending: Option<(String, Pos)> = None;

    while p.peek().is_some() {
        if let (Some(Tok::Ident(_)), Some(Tok::Colon)) = (p.peek(), p.peek2()) {
            let (label, pos) = p.ident("label")?;
            p.punct(Tok::Colon)?;
            if labels.contains_key(&label) || pending.as_ref().is_some_and(|(l, _)| *l == label) {
                return Err(err(pos, ParseErrorKind::DuplicateLabel(label)));
            }
            if pending.is_some() {
                return Err(err(pos, ParseErrorKind::Syntax("instruction already has a label".into())));
            }
            pending = Some((label, pos));
            continue;
        }

        let (mnemonic, pos) = p.ident("opcode")?;
        let op = match mnemonic.as_str() {
            "COD" | "MEMCOD" => {
                let kind = if mnemonic == "COD" { CodeletKind::Compute } else { CodeletKind::Memory };
                let (name, name_pos) = p.ident("codelet name")?;
                if name.parse::<Reg>().is_ok() {
                    return Err(err(name_pos, ParseErrorKind::Syntax("expected codelet name, found register".into())));
                }
                let mut operands = vec![p.reg()?];
                while p.peek() == Some(&Tok::Comma) {
                    p.at += 1;
                    operands.push(p.reg()?);
                }
                Op::Codelet { kind, name, operands }
            }
            "LDIMM" => {
                let dst = p.reg()?;
                p.punct(Tok::Comma)?;
                Op::Control(ControlOp::LoadImm { dst, imm: p.imm()? })
            }
            "ADD" | "SUB" | "MULT" => {
                let op = match mnemonic.as_str() {
                    "ADD" => ArithOp::Add,
                    "SUB" => ArithOp::Sub,
                    _ => ArithOp::Mult,
                };
                let [dst, lhs, rhs] = p.regs::<3>()?;
                Op::Control(ControlOp::Arith { op, dst, lhs, rhs })
            }
            "BREQ" | "BRNE" | "BRLT" => {
                let cond = match mnemonic.as_str() {
                    "BREQ" => BranchCond::Eq,
                    "BRNE" => BranchCond::Ne,
                    _ => BranchCond::Lt,
                };
                let [lhs, rhs] = p.regs::<2>()?;
                p.punct(Tok::Comma)?;
                let (target, tpos) = p.ident("label")?;
                references.push((target.clone(), tpos));
                Op::Control(ControlOp::Branch { cond, lhs, rhs, target })
            }
            "JMPLBL" => {
                let (target, tpos) = p.ident("label")?;
                references.push((target.clone(), tpos));
                Op::Control(ControlOp::Jump { target })
            }
            "COMMIT" => Op::Control(ControlOp::Commit),
            _ => return Err(err(pos, ParseErrorKind::UnknownOpcode(mnemonic))),
        };
        p.punct(Tok::Semi)?;

        let label = pending.take().map(|(l, _)| {
            labels.insert(l.clone(), instructions.len());
            l
        });
        instructions.push(Instruction { label, op });
        positions.push((pos.line, pos.column));
    }

    if let Some((label, pos)) = pending {
        return Err(err(pos, ParseErrorKind::Syntax(format!("label `{label}` is not followed by an instruction"))));
    }
    for (target, pos) in references {
        if !labels.contains_key(&target) {
            return Err(err(pos, ParseErrorKind::UnresolvedLabel(target)));
        }
    }
    Ok((Program { instructions, labels }, positions))
}
