//! Line-oriented parser for the IR text format.
//!
//! ```text
//! global @g : 16 = "0a0b"          ; optional hex initializer
//! extern @ext -> ptr
//! entry @main
//! func @f(%p: ptr, %n: i64) -> i64 [reset-tags] {
//! entry:
//!   %a = alloca 16
//!   %v = load.i32 [%p + 4]
//!   store.ptr [%a + 0] = %p
//!   %q = gep %p, %n, scale 4, off 0
//!   ret %v
//! }
//! ```

use super::*;
use std::collections::HashMap;

/// Parses and validates a program. The first error is returned.
pub fn parse_program(text: &str) -> Result<Program, Diagnostic> {
    let program = parse_unvalidated(text)?;
    if let Some(d) = validate(&program).into_iter().next() {
        return Err(d);
    }
    Ok(program)
}

/// Parses without running the validator.
pub(crate) fn parse_unvalidated(text: &str) -> Result<Program, Diagnostic> {
    let lines: Vec<Vec<Tok>> = text
        .lines()
        .enumerate()
        .map(|(i, l)| lex_line(l, i + 1))
        .collect::<Result<_, _>>()?;
    let ret_kinds = scan_signatures(&lines)?;
    let mut p = Parser {
        lines,
        line: 0,
        ret_kinds,
    };
    p.program()
}

#[derive(Clone, Debug, PartialEq)]
enum TokKind {
    Word(String),
    Local(String),
    Global(String),
    Int(i64),
    Str(String),
    Punct(char),
    Arrow,
}

#[derive(Clone, Debug)]
struct Tok {
    kind: TokKind,
    col: usize,
}

fn is_name_char(c: char) -> bool {
    c.is_ascii_alphanumeric() || c == '_' || c == '.'
}

fn lex_line(line: &str, lineno: usize) -> Result<Vec<Tok>, Diagnostic> {
    let chars: Vec<char> = line.chars().collect();
    let mut toks = Vec::new();
    let mut i = 0;
    let err = |col: usize, msg: String| Err(Diagnostic::error(msg).at_line(lineno, col));
    while i < chars.len() {
        let c = chars[i];
        let col = i + 1;
        if c == ';' {
            break;
        }
        if c.is_whitespace() {
            i += 1;
            continue;
        }
        let push = |toks: &mut Vec<Tok>, kind| toks.push(Tok { kind, col });
        match c {
            '%' | '@' => {
                let start = i + 1;
                let mut j = start;
                while j < chars.len() && is_name_char(chars[j]) {
                    j += 1;
                }
                if j == start {
                    return err(col, format!("expected a name after '{c}'"));
                }
                let name: String = chars[start..j].iter().collect();
                push(
                    &mut toks,
                    if c == '%' {
                        TokKind::Local(name)
                    } else {
                        TokKind::Global(name)
                    },
                );
                i = j;
            }
            '"' => {
                let start = i + 1;
                let mut j = start;
                while j < chars.len() && chars[j] != '"' {
                    j += 1;
                }
                if j == chars.len() {
                    return err(col, "unterminated string".into());
                }
                push(&mut toks, TokKind::Str(chars[start..j].iter().collect()));
                i = j + 1;
            }
            '-' if chars.get(i + 1) == Some(&'>') => {
                push(&mut toks, TokKind::Arrow);
                i += 2;
            }
            '0'..='9' => {
                let start = i;
                let mut j = i;
                while j < chars.len() && (chars[j].is_ascii_alphanumeric() || chars[j] == '_') {
                    j += 1;
                }
                let s: String = chars[start..j].iter().filter(|c| **c != '_').collect();
                let parsed = if let Some(h) = s.strip_prefix("0x") {
                    u64::from_str_radix(h, 16).map(|v| v as i64)
                } else if let Some(b) = s.strip_prefix("0b") {
                    u64::from_str_radix(b, 2).map(|v| v as i64)
                } else {
                    s.parse::<u64>().map(|v| v as i64)
                };
                match parsed {
                    Ok(v) => push(&mut toks, TokKind::Int(v)),
                    Err(_) => return err(col, format!("invalid integer literal '{s}'")),
                }
                i = j;
            }
            c if c.is_ascii_alphabetic() || c == '_' => {
                let start = i;
                let mut j = i;
                while j < chars.len() && (is_name_char(chars[j]) || chars[j] == '-') {
                    j += 1;
                }
                push(&mut toks, TokKind::Word(chars[start..j].iter().collect()));
                i = j;
            }
            '=' | ':' | ',' | '[' | ']' | '(' | ')' | '{' | '}' | '+' | '-' => {
                push(&mut toks, TokKind::Punct(c));
                i += 1;
            }
            _ => return err(col, format!("unexpected character '{c}'")),
        }
    }
    Ok(toks)
}

/// Collects return kinds of every function and extern so call results can be
/// typed before the callee's body is seen.
fn scan_signatures(lines: &[Vec<Tok>]) -> Result<HashMap<String, Kind>, Diagnostic> {
    let mut kinds = HashMap::new();
    for toks in lines {
        let Some(first) = toks.first() else { continue };
        let is_decl = matches!(&first.kind, TokKind::Word(w) if w == "func" || w == "extern");
        if !is_decl {
            continue;
        }
        let Some(Tok {
            kind: TokKind::Global(name),
            ..
        }) = toks.get(1)
        else {
            continue;
        };
        let mut kind = Kind::I64;
        if let Some(pos) = toks.iter().position(|t| t.kind == TokKind::Arrow) {
            if let Some(Tok {
                kind: TokKind::Word(w),
                ..
            }) = toks.get(pos + 1)
            {
                if w == "ptr" {
                    kind = Kind::Ptr;
                }
            }
        }
        kinds.entry(name.clone()).or_insert(kind);
    }
    Ok(kinds)
}

struct Parser {
    lines: Vec<Vec<Tok>>,
    line: usize,
    ret_kinds: HashMap<String, Kind>,
}

/// Cursor over the tokens of one line.
struct Cur<'a> {
    toks: &'a [Tok],
    pos: usize,
    line: usize,
}

impl<'a> Cur<'a> {
    fn new(toks: &'a [Tok], line: usize) -> Self {
        Cur { toks, pos: 0, line }
    }

    fn peek(&self) -> Option<&'a TokKind> {
        self.toks.get(self.pos).map(|t| &t.kind)
    }

    fn col(&self) -> usize {
        self.toks
            .get(self.pos)
            .map(|t| t.col)
            .or_else(|| self.toks.last().map(|t| t.col + 1))
            .unwrap_or(1)
    }

    fn err<T>(&self, msg: impl Into<String>) -> Result<T, Diagnostic> {
        Err(Diagnostic::error(msg).at_line(self.line, self.col()))
    }

    fn next(&mut self) -> Option<&'a TokKind> {
        let t = self.toks.get(self.pos).map(|t| &t.kind);
        if t.is_some() {
            self.pos += 1;
        }
        t
    }

    fn at_end(&self) -> bool {
        self.pos >= self.toks.len()
    }

    fn expect_end(&self) -> Result<(), Diagnostic> {
        if self.at_end() {
            Ok(())
        } else {
            self.err("unexpected trailing tokens")
        }
    }

    fn eat_punct(&mut self, c: char) -> bool {
        if self.peek() == Some(&TokKind::Punct(c)) {
            self.pos += 1;
            true
        } else {
            false
        }
    }

    fn punct(&mut self, c: char) -> Result<(), Diagnostic> {
        if self.eat_punct(c) {
            Ok(())
        } else {
            self.err(format!("expected '{c}'"))
        }
    }

    fn eat_word(&mut self, w: &str) -> bool {
        if matches!(self.peek(), Some(TokKind::Word(x)) if x == w) {
            self.pos += 1;
            true
        } else {
            false
        }
    }

    fn keyword(&mut self, w: &str) -> Result<(), Diagnostic> {
        if self.eat_word(w) {
            Ok(())
        } else {
            self.err(format!("expected '{w}'"))
        }
    }

    fn word(&mut self) -> Result<&'a str, Diagnostic> {
        match self.peek() {
            Some(TokKind::Word(w)) => {
                self.pos += 1;
                Ok(w)
            }
            _ => self.err("expected a word"),
        }
    }

    fn global(&mut self) -> Result<&'a str, Diagnostic> {
        match self.peek() {
            Some(TokKind::Global(g)) => {
                self.pos += 1;
                Ok(g)
            }
            _ => self.err("expected '@name'"),
        }
    }

    fn local(&mut self) -> Result<&'a str, Diagnostic> {
        match self.peek() {
            Some(TokKind::Local(l)) => {
                self.pos += 1;
                Ok(l)
            }
            _ => self.err("expected '%name'"),
        }
    }

    fn int(&mut self) -> Result<i64, Diagnostic> {
        let neg = self.eat_punct('-');
        match self.peek() {
            Some(TokKind::Int(v)) => {
                self.pos += 1;
                Ok(if neg { v.wrapping_neg() } else { *v })
            }
            _ => self.err("expected an integer"),
        }
    }

    fn uint(&mut self) -> Result<u64, Diagnostic> {
        let v = self.int()?;
        if v < 0 {
            return self.err("expected a non-negative integer");
        }
        Ok(v as u64)
    }

    fn kind(&mut self) -> Result<Kind, Diagnostic> {
        match self.word()? {
            "i64" => Ok(Kind::I64),
            "ptr" => Ok(Kind::Ptr),
            other => {
                self.pos -= 1;
                self.err(format!("unknown kind '{other}'"))
            }
        }
    }
}

/// Name tables for the function being parsed.
struct FnScope {
    func: Function,
    names: HashMap<String, ValueId>,
    defined: Vec<bool>,
    /// First use location of each value, for "unknown identifier" errors.
    first_use: Vec<(usize, usize)>,
    labels: HashMap<String, BlockId>,
}

impl FnScope {
    fn use_value(&mut self, name: &str, line: usize, col: usize) -> ValueId {
        if let Some(&id) = self.names.get(name) {
            return id;
        }
        let id = self.func.add_value(name, Kind::I64);
        self.names.insert(name.to_string(), id);
        self.defined.push(false);
        self.first_use.push((line, col));
        id
    }

    fn define(&mut self, name: &str, kind: Kind, line: usize, col: usize) -> Result<ValueId, Diagnostic> {
        let id = self.use_value(name, line, col);
        if self.defined[id.index()] {
            return Err(Diagnostic::error(format!("duplicate definition of %{name}"))
                .at(&self.func.name, None, None)
                .at_line(line, col));
        }
        self.defined[id.index()] = true;
        self.func.values[id.index()].kind = kind;
        Ok(id)
    }

    fn block(&self, cur: &Cur, name: &str) -> Result<BlockId, Diagnostic> {
        match self.labels.get(name) {
            Some(&b) => Ok(b),
            None => cur.err(format!("unknown label '{name}'")),
        }
    }
}

impl Parser {
    fn program(&mut self) -> Result<Program, Diagnostic> {
        let mut program = Program {
            globals: Vec::new(),
            externs: Vec::new(),
            functions: Vec::new(),
            entry: "main".to_string(),
        };
        while self.line < self.lines.len() {
            let lineno = self.line + 1;
            let toks = std::mem::take(&mut self.lines[self.line]);
            if toks.is_empty() {
                self.line += 1;
                continue;
            }
            let mut cur = Cur::new(&toks, lineno);
            match cur.word()? {
                "global" => {
                    let g = parse_global(&mut cur)?;
                    if program.global(&g.name).is_some() {
                        return Err(Diagnostic::error(format!("duplicate definition of @{}", g.name))
                            .at_line(lineno, 1));
                    }
                    program.globals.push(g);
                    self.line += 1;
                }
                "extern" => {
                    let name = cur.global()?.to_string();
                    let ret_kind = if cur.peek() == Some(&TokKind::Arrow) {
                        cur.next();
                        cur.kind()?
                    } else {
                        Kind::I64
                    };
                    cur.expect_end()?;
                    if program.extern_decl(&name).is_some() {
                        return Err(Diagnostic::error(format!("duplicate definition of @{name}"))
                            .at_line(lineno, 1));
                    }
                    program.externs.push(ExternDecl { name, ret_kind });
                    self.line += 1;
                }
                "entry" => {
                    program.entry = cur.global()?.to_string();
                    cur.expect_end()?;
                    self.line += 1;
                }
                "func" => {
                    let f = self.function(&mut cur)?;
                    if program.function(&f.name).is_some() {
                        return Err(Diagnostic::error(format!("duplicate definition of @{}", f.name))
                            .at_line(lineno, 1));
                    }
                    program.functions.push(f);
                }
                other => {
                    cur.pos -= 1;
                    return cur.err(format!("unexpected '{other}' at top level"));
                }
            }
        }
        Ok(program)
    }

    fn function(&mut self, header: &mut Cur) -> Result<Function, Diagnostic> {
        let name = header.global()?.to_string();
        let mut scope = FnScope {
            func: Function::new(name.clone()),
            names: HashMap::new(),
            defined: Vec::new(),
            first_use: Vec::new(),
            labels: HashMap::new(),
        };
        header.punct('(')?;
        if !header.eat_punct(')') {
            loop {
                let col = header.col();
                let pname = header.local()?;
                header.punct(':')?;
                let kind = header.kind()?;
                let id = scope.define(pname, kind, header.line, col)?;
                scope.func.params.push(id);
                if header.eat_punct(')') {
                    break;
                }
                header.punct(',')?;
            }
        }
        if header.peek() == Some(&TokKind::Arrow) {
            header.next();
            scope.func.ret_kind = header.kind()?;
        }
        if header.eat_punct('[') {
            loop {
                match header.word()? {
                    "reset-tags" => scope.func.attrs.reset_tags = true,
                    other => return header.err(format!("unknown function attribute '{other}'")),
                }
                if header.eat_punct(']') {
                    break;
                }
                header.punct(',')?;
            }
        }
        header.punct('{')?;
        header.expect_end()?;
        self.line += 1;

        // Body extent and labels first, so branches may refer forward.
        let body_start = self.line;
        let mut end = body_start;
        loop {
            let Some(toks) = self.lines.get(end) else {
                return Err(Diagnostic::error(format!("missing '}}' closing @{name}"))
                    .at_line(end, 1));
            };
            if toks.len() == 1 && toks[0].kind == TokKind::Punct('}') {
                break;
            }
            if let [Tok {
                kind: TokKind::Word(label),
                ..
            }, Tok {
                kind: TokKind::Punct(':'),
                ..
            }] = toks.as_slice()
            {
                let id = BlockId(scope.func.blocks.len() as u32);
                if scope.labels.insert(label.clone(), id).is_some() {
                    return Err(Diagnostic::error(format!("duplicate label '{label}'"))
                        .at(&name, Some(label), None)
                        .at_line(end + 1, 1));
                }
                scope.func.blocks.push(Block::new(label.clone()));
            }
            end += 1;
        }

        let mut current: Option<usize> = None;
        for ln in body_start..end {
            let toks = std::mem::take(&mut self.lines[ln]);
            if toks.is_empty() {
                continue;
            }
            let mut cur = Cur::new(&toks, ln + 1);
            if let [Tok {
                kind: TokKind::Word(label),
                ..
            }, Tok {
                kind: TokKind::Punct(':'),
                ..
            }] = toks.as_slice()
            {
                current = Some(scope.labels[label].index());
                continue;
            }
            let Some(bi) = current else {
                return cur.err("instruction outside of a block");
            };
            if scope.func.blocks[bi].term.is_some() {
                return cur.err("instruction after terminator");
            }
            self.line_item(&mut scope, bi, &mut cur)?;
        }
        self.line = end + 1;

        if let Some(i) = scope.defined.iter().position(|d| !d) {
            let (l, c) = scope.first_use[i];
            return Err(Diagnostic::error(format!(
                "unknown identifier %{}",
                scope.func.values[i].name
            ))
            .at(&name, None, None)
            .at_line(l, c));
        }
        Ok(scope.func)
    }

    fn operand(&self, scope: &mut FnScope, cur: &mut Cur) -> Result<Operand, Diagnostic> {
        let col = cur.col();
        match cur.peek() {
            Some(TokKind::Local(n)) => {
                cur.next();
                Ok(Operand::Value(scope.use_value(n, cur.line, col)))
            }
            Some(TokKind::Global(g)) => {
                cur.next();
                Ok(Operand::Global(g.clone()))
            }
            Some(TokKind::Word(w)) if w == "null" => {
                cur.next();
                Ok(Operand::Null)
            }
            Some(TokKind::Int(_)) | Some(TokKind::Punct('-')) => Ok(Operand::Imm(cur.int()?)),
            _ => cur.err("expected an operand"),
        }
    }

    /// `[base + off]` or `[base - off]`.
    fn address(&self, scope: &mut FnScope, cur: &mut Cur) -> Result<(Operand, i64), Diagnostic> {
        cur.punct('[')?;
        let base = self.operand(scope, cur)?;
        let off = if cur.eat_punct('+') {
            cur.int()?
        } else if cur.eat_punct('-') {
            cur.int()?.wrapping_neg()
        } else {
            0
        };
        cur.punct(']')?;
        Ok((base, off))
    }

    fn line_item(&self, scope: &mut FnScope, bi: usize, cur: &mut Cur) -> Result<(), Diagnostic> {
        // Optional `%x =` prefix.
        let mut result: Option<(&str, usize)> = None;
        if let (Some(TokKind::Local(n)), Some(Tok {
            kind: TokKind::Punct('='),
            ..
        })) = (cur.peek(), cur.toks.get(cur.pos + 1))
        {
            result = Some((n.as_str(), cur.col()));
            cur.pos += 2;
        }
        let op_col = cur.col();
        let opname = cur.word()?;
        // Short form `alloca %a : 16`.
        if opname == "alloca" && result.is_none() {
            if let (Some(TokKind::Local(n)), Some(Tok {
                kind: TokKind::Punct(':'),
                ..
            })) = (cur.peek(), cur.toks.get(cur.pos + 1))
            {
                result = Some((n.as_str(), cur.col()));
                cur.pos += 2;
            }
        }
        let line = cur.line;
        let need_result = |cur: &Cur| -> Result<(&str, usize), Diagnostic> {
            match result {
                Some(r) => Ok(r),
                None => cur.err(format!("'{opname}' needs a result")),
            }
        };
        let no_result = |cur: &Cur| -> Result<(), Diagnostic> {
            if result.is_some() {
                cur.err(format!("'{opname}' has no result"))
            } else {
                Ok(())
            }
        };

        // Terminators.
        match opname {
            "br" => {
                no_result(cur)?;
                let term = if let Some(TokKind::Word(label)) = cur.peek() {
                    cur.next();
                    Terminator::Br(scope.block(cur, label)?)
                } else {
                    let cond = self.operand(scope, cur)?;
                    cur.punct(',')?;
                    let t = cur.word()?;
                    let then_bb = scope.block(cur, t)?;
                    cur.punct(',')?;
                    let e = cur.word()?;
                    let else_bb = scope.block(cur, e)?;
                    Terminator::CondBr {
                        cond,
                        then_bb,
                        else_bb,
                    }
                };
                cur.expect_end()?;
                scope.func.blocks[bi].term = Some(term);
                return Ok(());
            }
            "ret" => {
                no_result(cur)?;
                let v = if cur.at_end() {
                    None
                } else {
                    Some(self.operand(scope, cur)?)
                };
                cur.expect_end()?;
                scope.func.blocks[bi].term = Some(Terminator::Ret(v));
                return Ok(());
            }
            "phi" => {
                let (name, col) = need_result(cur)?;
                if !scope.func.blocks[bi].insts.is_empty() {
                    return cur.err("phi after a non-phi instruction");
                }
                let kind = cur.kind()?;
                let mut incoming = Vec::new();
                loop {
                    cur.punct('[')?;
                    let v = self.operand(scope, cur)?;
                    cur.punct(',')?;
                    let l = cur.word()?;
                    let b = scope.block(cur, l)?;
                    cur.punct(']')?;
                    incoming.push((v, b));
                    if !cur.eat_punct(',') {
                        break;
                    }
                }
                cur.expect_end()?;
                let result = scope.define(name, kind, line, col)?;
                scope.func.blocks[bi].phis.push(Phi {
                    result,
                    kind,
                    incoming,
                });
                return Ok(());
            }
            _ => {}
        }

        let def = |scope: &mut FnScope, cur: &Cur, kind: Kind| -> Result<ValueId, Diagnostic> {
            let (name, col) = need_result(cur)?;
            scope.define(name, kind, line, col)
        };

        let inst = if let Some(ty) = opname.strip_prefix("load.") {
            let Some(ty) = MemTy::from_name(ty) else {
                return Err(Diagnostic::error(format!("unknown access type '{ty}'")).at_line(line, op_col));
            };
            let (addr, offset) = self.address(scope, cur)?;
            Inst::Load {
                result: def(scope, cur, ty.kind())?,
                ty,
                addr,
                offset,
            }
        } else if let Some(ty) = opname.strip_prefix("store.") {
            no_result(cur)?;
            let Some(ty) = MemTy::from_name(ty) else {
                return Err(Diagnostic::error(format!("unknown access type '{ty}'")).at_line(line, op_col));
            };
            let (addr, offset) = self.address(scope, cur)?;
            cur.punct('=')?;
            let value = self.operand(scope, cur)?;
            Inst::Store {
                ty,
                addr,
                offset,
                value,
            }
        } else if let Some(op) = BinOp::from_name(opname) {
            let lhs = self.operand(scope, cur)?;
            cur.punct(',')?;
            let rhs = self.operand(scope, cur)?;
            Inst::Bin {
                result: def(scope, cur, Kind::I64)?,
                op,
                lhs,
                rhs,
            }
        } else {
            match opname {
                "alloca" => {
                    let first = self.operand(scope, cur)?;
                    let size = if cur.eat_punct(',') {
                        cur.keyword("elem")?;
                        AllocaSize::Dynamic {
                            count: first,
                            elem: cur.uint()?,
                        }
                    } else {
                        match first {
                            Operand::Imm(n) if n >= 0 => AllocaSize::Static(n as u64),
                            Operand::Imm(_) => return cur.err("alloca size must be non-negative"),
                            count => AllocaSize::Dynamic { count, elem: 1 },
                        }
                    };
                    let attr = if cur.eat_word("tagged") {
                        SlotAttr::Tagged {
                            high_end: cur.eat_word("end"),
                        }
                    } else if cur.eat_word("implicit") {
                        SlotAttr::Implicit
                    } else {
                        SlotAttr::Plain
                    };
                    Inst::Alloca {
                        result: def(scope, cur, Kind::Ptr)?,
                        size,
                        attr,
                    }
                }
                "gep" => {
                    let base = self.operand(scope, cur)?;
                    cur.punct(',')?;
                    let index = self.operand(scope, cur)?;
                    cur.punct(',')?;
                    cur.keyword("scale")?;
                    let scale = cur.int()?;
                    cur.punct(',')?;
                    cur.keyword("off")?;
                    let offset = cur.int()?;
                    Inst::Gep {
                        result: def(scope, cur, Kind::Ptr)?,
                        base,
                        index,
                        scale,
                        offset,
                    }
                }
                "call" => {
                    let callee = cur.global()?.to_string();
                    cur.punct('(')?;
                    let mut args = Vec::new();
                    if !cur.eat_punct(')') {
                        loop {
                            args.push(self.operand(scope, cur)?);
                            if cur.eat_punct(')') {
                                break;
                            }
                            cur.punct(',')?;
                        }
                    }
                    let result = if result.is_some() {
                        let Some(&kind) = self.ret_kinds.get(&callee) else {
                            return Err(Diagnostic::error(format!("unknown identifier @{callee}"))
                                .at_line(line, op_col));
                        };
                        Some(def(scope, cur, kind)?)
                    } else {
                        None
                    };
                    Inst::Call {
                        result,
                        callee,
                        args,
                    }
                }
                "inttoptr" => {
                    let value = self.operand(scope, cur)?;
                    Inst::IntToPtr {
                        result: def(scope, cur, Kind::Ptr)?,
                        value,
                    }
                }
                "ptrtoint" => {
                    let value = self.operand(scope, cur)?;
                    Inst::PtrToInt {
                        result: def(scope, cur, Kind::I64)?,
                        value,
                    }
                }
                "cmp" => {
                    let p = cur.word()?;
                    let Some(pred) = CmpPred::from_name(p) else {
                        cur.pos -= 1;
                        return cur.err(format!("unknown comparison '{p}'"));
                    };
                    let lhs = self.operand(scope, cur)?;
                    cur.punct(',')?;
                    let rhs = self.operand(scope, cur)?;
                    Inst::Cmp {
                        result: def(scope, cur, Kind::I64)?,
                        pred,
                        lhs,
                        rhs,
                    }
                }
                "const" => {
                    let value = self.operand(scope, cur)?;
                    let kind = match value {
                        Operand::Imm(_) => Kind::I64,
                        Operand::Null => Kind::Ptr,
                        _ => return cur.err("const takes an integer or null"),
                    };
                    Inst::Const {
                        result: def(scope, cur, kind)?,
                        value,
                    }
                }
                "output" => {
                    no_result(cur)?;
                    Inst::Output {
                        value: self.operand(scope, cur)?,
                    }
                }
                "guard" => {
                    let size = cur.uint()?;
                    Inst::Guard {
                        result: def(scope, cur, Kind::Ptr)?,
                        size,
                    }
                }
                "settag" => {
                    no_result(cur)?;
                    let addr = self.operand(scope, cur)?;
                    cur.punct(',')?;
                    let size = self.operand(scope, cur)?;
                    Inst::SetTag { addr, size }
                }
                "tagptr" => {
                    let base = self.operand(scope, cur)?;
                    cur.punct(',')?;
                    let tag = cur.uint()?;
                    if tag > 15 {
                        return cur.err("tag must be in 0..=15");
                    }
                    Inst::TagPtr {
                        result: def(scope, cur, Kind::Ptr)?,
                        base,
                        tag: tag as u8,
                    }
                }
                "cleartag" => {
                    let ptr = self.operand(scope, cur)?;
                    Inst::ClearTopTagBit {
                        result: def(scope, cur, Kind::Ptr)?,
                        ptr,
                    }
                }
                "tfp" => {
                    let loaded = self.operand(scope, cur)?;
                    cur.punct(',')?;
                    let (addr, offset) = self.address(scope, cur)?;
                    Inst::TfpLoad {
                        result: def(scope, cur, Kind::Ptr)?,
                        loaded,
                        addr,
                        offset,
                    }
                }
                "keeptag" => {
                    let ptr = self.operand(scope, cur)?;
                    cur.punct(',')?;
                    let from = self.operand(scope, cur)?;
                    Inst::KeepTag {
                        result: def(scope, cur, Kind::Ptr)?,
                        ptr,
                        from,
                    }
                }
                "retagframe" => {
                    no_result(cur)?;
                    Inst::RetagFrame
                }
                other => {
                    return Err(Diagnostic::error(format!("unknown instruction '{other}'"))
                        .at_line(line, op_col))
                }
            }
        };
        cur.expect_end()?;
        scope.func.blocks[bi].insts.push(inst);
        Ok(())
    }
}

fn parse_global(cur: &mut Cur) -> Result<GlobalDef, Diagnostic> {
    let name = cur.global()?.to_string();
    cur.punct(':')?;
    let size = cur.uint()?;
    let mut init = None;
    if cur.eat_punct('=') {
        let Some(TokKind::Str(s)) = cur.next() else {
            return cur.err("expected a hex string initializer");
        };
        init = Some(decode_hex(s).ok_or_else(|| {
            Diagnostic::error("initializer must be an even-length hex string").at_line(cur.line, cur.col())
        })?);
    }
    let mut tag = None;
    if cur.eat_word("tag") {
        let t = cur.uint()?;
        if t > 15 {
            return cur.err("tag must be in 0..=15");
        }
        tag = Some(t as u8);
    }
    cur.expect_end()?;
    Ok(GlobalDef {
        name,
        size,
        init,
        tag,
    })
}

fn decode_hex(s: &str) -> Option<Vec<u8>> {
    if !s.len().is_multiple_of(2) {
        return None;
    }
    (0..s.len())
        .step_by(2)
        .map(|i| u8::from_str_radix(s.get(i..i + 2)?, 16).ok())
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn single_alloca() {
        let p = parse_program("func @main() {\nentry:\n  %a = alloca 4\n  ret\n}\n").unwrap();
        assert_eq!(p.functions.len(), 1);
        let f = &p.functions[0];
        assert_eq!(f.name, "main");
        assert!(matches!(
            f.blocks[0].insts[0],
            Inst::Alloca {
                size: AllocaSize::Static(4),
                attr: SlotAttr::Plain,
                ..
            }
        ));
    }

    #[test]
    fn short_alloca_form() {
        let p = parse_program("func @main() {\nentry:\n  alloca %a : 4\n  ret\n}\n").unwrap();
        assert_eq!(print_program(&p), "func @main() {\nentry:\n  %a = alloca 4\n  ret\n}\n");
    }

    #[test]
    fn use_before_def_is_rejected() {
        let err = parse_program(
            "func @main() {\nentry:\n  %b = add %a, 1\n  %a = const 2\n  ret %b\n}\n",
        )
        .unwrap_err();
        assert!(err.message.contains("use before def"), "{err}");
    }

    #[test]
    fn unknown_identifier_has_position() {
        let err = parse_program("func @main() {\nentry:\n  ret %nope\n}\n").unwrap_err();
        assert!(err.message.contains("unknown identifier"));
        assert_eq!(err.line_col, Some((3, 7)));
    }

    #[test]
    fn syntax_error_reports_line_and_column() {
        let err = parse_program("func @main() {\nentry:\n  %a = alloca\n  ret\n}\n").unwrap_err();
        assert_eq!(err.line_col.map(|(l, _)| l), Some(3));
    }

    #[test]
    fn duplicate_definitions() {
        let dup_value = "func @main() {\nentry:\n  %a = const 1\n  %a = const 2\n  ret\n}\n";
        assert!(parse_program(dup_value).unwrap_err().message.contains("duplicate"));
        let dup_fn = "func @f() {\nentry:\n  ret\n}\nfunc @f() {\nentry:\n  ret\n}\n";
        assert!(parse_program(dup_fn).unwrap_err().message.contains("duplicate"));
        let dup_global = "global @g : 8\nglobal @g : 8\nfunc @main() {\nentry:\n  ret\n}\n";
        assert!(parse_program(dup_global).unwrap_err().message.contains("duplicate"));
    }

    #[test]
    fn negative_offsets_and_hex() {
        let p = parse_program(
            "global @g : 4 = \"deadbeef\"\nfunc @main() {\nentry:\n  %v = load.i32 [@g - 0]\n  %w = load.i8 [@g + 0x3]\n  ret %v\n}\n",
        )
        .unwrap();
        assert_eq!(p.globals[0].init.as_deref(), Some(&[0xde, 0xad, 0xbe, 0xef][..]));
        assert!(matches!(p.functions[0].blocks[0].insts[1], Inst::Load { offset: 3, .. }));
    }

    #[test]
    fn instruction_after_terminator() {
        let err = parse_program("func @main() {\nentry:\n  ret\n  %a = const 1\n}\n").unwrap_err();
        assert!(err.message.contains("after terminator"));
    }
}
