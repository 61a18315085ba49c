//! A small SSA intermediate representation for a stack-oriented C-like
//! language.
//!
//! Compound objects are a single [`Inst::Alloca`] accessed at byte offsets.
//! Loads and stores carry an explicit [`MemTy`] so that the analysis can tell
//! where pointer values cross memory.

mod cfg;
mod parse;
mod print;
mod validate;

pub use cfg::{Cfg, DomTree};
pub use parse::parse_program;
pub use print::print_program;
pub use validate::validate;

use serde::Serialize;
use std::fmt;

/// Index of an SSA value inside its [`Function`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize)]
pub struct ValueId(pub u32);

impl ValueId {
    pub fn index(self) -> usize {
        self.0 as usize
    }
}

/// Index of a basic block inside its [`Function`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize)]
pub struct BlockId(pub u32);

impl BlockId {
    pub fn index(self) -> usize {
        self.0 as usize
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize)]
pub enum Kind {
    I64,
    Ptr,
}

impl fmt::Display for Kind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Kind::I64 => "i64",
            Kind::Ptr => "ptr",
        })
    }
}

/// Memory access type: width plus whether the bytes are a pointer.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize)]
pub enum MemTy {
    I8,
    I16,
    I32,
    I64,
    Ptr,
}

impl MemTy {
    pub fn width(self) -> u64 {
        match self {
            MemTy::I8 => 1,
            MemTy::I16 => 2,
            MemTy::I32 => 4,
            MemTy::I64 | MemTy::Ptr => 8,
        }
    }

    pub fn kind(self) -> Kind {
        match self {
            MemTy::Ptr => Kind::Ptr,
            _ => Kind::I64,
        }
    }

    pub fn is_ptr(self) -> bool {
        self == MemTy::Ptr
    }

    pub fn name(self) -> &'static str {
        match self {
            MemTy::I8 => "i8",
            MemTy::I16 => "i16",
            MemTy::I32 => "i32",
            MemTy::I64 => "i64",
            MemTy::Ptr => "ptr",
        }
    }

    pub fn from_name(s: &str) -> Option<MemTy> {
        Some(match s {
            "i8" => MemTy::I8,
            "i16" => MemTy::I16,
            "i32" => MemTy::I32,
            "i64" => MemTy::I64,
            "ptr" => MemTy::Ptr,
            _ => return None,
        })
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub enum Operand {
    Value(ValueId),
    Imm(i64),
    Null,
    Global(String),
}

impl Operand {
    pub fn as_value(&self) -> Option<ValueId> {
        match self {
            Operand::Value(v) => Some(*v),
            _ => None,
        }
    }

    pub fn as_imm(&self) -> Option<i64> {
        match self {
            Operand::Imm(i) => Some(*i),
            _ => None,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize)]
pub enum BinOp {
    Add,
    Sub,
    Mul,
    SDiv,
    SRem,
    And,
    Or,
    Xor,
    Shl,
    LShr,
    AShr,
}

impl BinOp {
    pub const ALL: [BinOp; 11] = [
        BinOp::Add,
        BinOp::Sub,
        BinOp::Mul,
        BinOp::SDiv,
        BinOp::SRem,
        BinOp::And,
        BinOp::Or,
        BinOp::Xor,
        BinOp::Shl,
        BinOp::LShr,
        BinOp::AShr,
    ];

    pub fn name(self) -> &'static str {
        match self {
            BinOp::Add => "add",
            BinOp::Sub => "sub",
            BinOp::Mul => "mul",
            BinOp::SDiv => "sdiv",
            BinOp::SRem => "srem",
            BinOp::And => "and",
            BinOp::Or => "or",
            BinOp::Xor => "xor",
            BinOp::Shl => "shl",
            BinOp::LShr => "lshr",
            BinOp::AShr => "ashr",
        }
    }

    pub fn from_name(s: &str) -> Option<BinOp> {
        BinOp::ALL.into_iter().find(|op| op.name() == s)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize)]
pub enum CmpPred {
    Eq,
    Ne,
    Slt,
    Sle,
    Sgt,
    Sge,
    Ult,
    Ule,
    Ugt,
    Uge,
}

impl CmpPred {
    pub const ALL: [CmpPred; 10] = [
        CmpPred::Eq,
        CmpPred::Ne,
        CmpPred::Slt,
        CmpPred::Sle,
        CmpPred::Sgt,
        CmpPred::Sge,
        CmpPred::Ult,
        CmpPred::Ule,
        CmpPred::Ugt,
        CmpPred::Uge,
    ];

    pub fn name(self) -> &'static str {
        match self {
            CmpPred::Eq => "eq",
            CmpPred::Ne => "ne",
            CmpPred::Slt => "slt",
            CmpPred::Sle => "sle",
            CmpPred::Sgt => "sgt",
            CmpPred::Sge => "sge",
            CmpPred::Ult => "ult",
            CmpPred::Ule => "ule",
            CmpPred::Ugt => "ugt",
            CmpPred::Uge => "uge",
        }
    }

    pub fn from_name(s: &str) -> Option<CmpPred> {
        CmpPred::ALL.into_iter().find(|p| p.name() == s)
    }

    pub fn eval(self, a: u64, b: u64) -> bool {
        let (sa, sb) = (a as i64, b as i64);
        match self {
            CmpPred::Eq => a == b,
            CmpPred::Ne => a != b,
            CmpPred::Slt => sa < sb,
            CmpPred::Sle => sa <= sb,
            CmpPred::Sgt => sa > sb,
            CmpPred::Sge => sa >= sb,
            CmpPred::Ult => a < b,
            CmpPred::Ule => a <= b,
            CmpPred::Ugt => a > b,
            CmpPred::Uge => a >= b,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub enum AllocaSize {
    Static(u64),
    /// `count * elem` bytes, known only at run time.
    Dynamic { count: Operand, elem: u64 },
}

impl AllocaSize {
    pub fn static_size(&self) -> Option<u64> {
        match self {
            AllocaSize::Static(n) => Some(*n),
            AllocaSize::Dynamic { .. } => None,
        }
    }
}

/// Frame placement attribute of an alloca. Only instrumented programs carry
/// anything other than `Plain`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize)]
pub enum SlotAttr {
    Plain,
    /// Compiler-visible slot; accesses through it are frame-base relative.
    Implicit,
    /// Granule aligned and padded. With `high_end` the object sits at the top
    /// of its padded region so that upward overflows leave the slot at once.
    Tagged { high_end: bool },
}

#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub enum Inst {
    Alloca {
        result: ValueId,
        size: AllocaSize,
        attr: SlotAttr,
    },
    Load {
        result: ValueId,
        ty: MemTy,
        addr: Operand,
        offset: i64,
    },
    Store {
        ty: MemTy,
        addr: Operand,
        offset: i64,
        value: Operand,
    },
    Gep {
        result: ValueId,
        base: Operand,
        index: Operand,
        scale: i64,
        offset: i64,
    },
    Call {
        result: Option<ValueId>,
        callee: String,
        args: Vec<Operand>,
    },
    IntToPtr {
        result: ValueId,
        value: Operand,
    },
    PtrToInt {
        result: ValueId,
        value: Operand,
    },
    Bin {
        result: ValueId,
        op: BinOp,
        lhs: Operand,
        rhs: Operand,
    },
    Cmp {
        result: ValueId,
        pred: CmpPred,
        lhs: Operand,
        rhs: Operand,
    },
    Const {
        result: ValueId,
        value: Operand,
    },
    Output {
        value: Operand,
    },
    // Instrumentation-only operations.
    /// Reserves a guard region in the frame.
    Guard {
        result: ValueId,
        size: u64,
    },
    /// Writes the address tag of `addr` to every granule overlapping
    /// `[addr, addr + size)`.
    SetTag {
        addr: Operand,
        size: Operand,
    },
    TagPtr {
        result: ValueId,
        base: Operand,
        tag: u8,
    },
    ClearTopTagBit {
        result: ValueId,
        ptr: Operand,
    },
    /// Passes `loaded` through if the granule at `addr + offset` carries a
    /// pointer-safe allocation tag, otherwise clears its top tag bit.
    TfpLoad {
        result: ValueId,
        loaded: Operand,
        addr: Operand,
        offset: i64,
    },
    /// `ptr` with the address tag of `from`.
    KeepTag {
        result: ValueId,
        ptr: Operand,
        from: Operand,
    },
    /// Restores the default tag over the whole current frame.
    RetagFrame,
}

impl Inst {
    pub fn result(&self) -> Option<ValueId> {
        match self {
            Inst::Alloca { result, .. }
            | Inst::Load { result, .. }
            | Inst::Gep { result, .. }
            | Inst::IntToPtr { result, .. }
            | Inst::PtrToInt { result, .. }
            | Inst::Bin { result, .. }
            | Inst::Cmp { result, .. }
            | Inst::Const { result, .. }
            | Inst::Guard { result, .. }
            | Inst::TagPtr { result, .. }
            | Inst::ClearTopTagBit { result, .. }
            | Inst::TfpLoad { result, .. }
            | Inst::KeepTag { result, .. } => Some(*result),
            Inst::Call { result, .. } => *result,
            Inst::Store { .. } | Inst::Output { .. } | Inst::SetTag { .. } | Inst::RetagFrame => None,
        }
    }

    pub fn operands(&self) -> Vec<&Operand> {
        match self {
            Inst::Alloca { size, .. } => match size {
                AllocaSize::Static(_) => vec![],
                AllocaSize::Dynamic { count, .. } => vec![count],
            },
            Inst::Load { addr, .. } => vec![addr],
            Inst::Store { addr, value, .. } => vec![addr, value],
            Inst::Gep { base, index, .. } => vec![base, index],
            Inst::Call { args, .. } => args.iter().collect(),
            Inst::IntToPtr { value, .. } | Inst::PtrToInt { value, .. } => vec![value],
            Inst::Bin { lhs, rhs, .. } | Inst::Cmp { lhs, rhs, .. } => vec![lhs, rhs],
            Inst::Const { value, .. } | Inst::Output { value } => vec![value],
            Inst::Guard { .. } | Inst::RetagFrame => vec![],
            Inst::SetTag { addr, size } => vec![addr, size],
            Inst::TagPtr { base, .. } => vec![base],
            Inst::ClearTopTagBit { ptr, .. } => vec![ptr],
            Inst::TfpLoad { loaded, addr, .. } => vec![loaded, addr],
            Inst::KeepTag { ptr, from, .. } => vec![ptr, from],
        }
    }

    pub fn operands_mut(&mut self) -> Vec<&mut Operand> {
        match self {
            Inst::Alloca { size, .. } => match size {
                AllocaSize::Static(_) => vec![],
                AllocaSize::Dynamic { count, .. } => vec![count],
            },
            Inst::Load { addr, .. } => vec![addr],
            Inst::Store { addr, value, .. } => vec![addr, value],
            Inst::Gep { base, index, .. } => vec![base, index],
            Inst::Call { args, .. } => args.iter_mut().collect(),
            Inst::IntToPtr { value, .. } | Inst::PtrToInt { value, .. } => vec![value],
            Inst::Bin { lhs, rhs, .. } | Inst::Cmp { lhs, rhs, .. } => vec![lhs, rhs],
            Inst::Const { value, .. } | Inst::Output { value } => vec![value],
            Inst::Guard { .. } | Inst::RetagFrame => vec![],
            Inst::SetTag { addr, size } => vec![addr, size],
            Inst::TagPtr { base, .. } => vec![base],
            Inst::ClearTopTagBit { ptr, .. } => vec![ptr],
            Inst::TfpLoad { loaded, addr, .. } => vec![loaded, addr],
            Inst::KeepTag { ptr, from, .. } => vec![ptr, from],
        }
    }

    /// True for operations that only the instrumentation pass emits.
    pub fn is_instrumentation(&self) -> bool {
        match self {
            Inst::Guard { .. }
            | Inst::SetTag { .. }
            | Inst::TagPtr { .. }
            | Inst::ClearTopTagBit { .. }
            | Inst::TfpLoad { .. }
            | Inst::KeepTag { .. }
            | Inst::RetagFrame => true,
            Inst::Alloca { attr, .. } => *attr != SlotAttr::Plain,
            _ => false,
        }
    }

    pub fn is_memory_access(&self) -> bool {
        matches!(self, Inst::Load { .. } | Inst::Store { .. })
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct Phi {
    pub result: ValueId,
    pub kind: Kind,
    pub incoming: Vec<(Operand, BlockId)>,
}

#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub enum Terminator {
    Br(BlockId),
    CondBr {
        cond: Operand,
        then_bb: BlockId,
        else_bb: BlockId,
    },
    Ret(Option<Operand>),
}

impl Terminator {
    pub fn successors(&self) -> Vec<BlockId> {
        match self {
            Terminator::Br(b) => vec![*b],
            Terminator::CondBr { then_bb, else_bb, .. } => vec![*then_bb, *else_bb],
            Terminator::Ret(_) => vec![],
        }
    }

    pub fn operands(&self) -> Vec<&Operand> {
        match self {
            Terminator::Br(_) | Terminator::Ret(None) => vec![],
            Terminator::CondBr { cond, .. } => vec![cond],
            Terminator::Ret(Some(v)) => vec![v],
        }
    }

    pub fn operands_mut(&mut self) -> Vec<&mut Operand> {
        match self {
            Terminator::Br(_) | Terminator::Ret(None) => vec![],
            Terminator::CondBr { cond, .. } => vec![cond],
            Terminator::Ret(Some(v)) => vec![v],
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct Block {
    pub label: String,
    pub phis: Vec<Phi>,
    pub insts: Vec<Inst>,
    /// `None` only for malformed programs built outside the parser.
    pub term: Option<Terminator>,
}

impl Block {
    pub fn new(label: impl Into<String>) -> Self {
        Block {
            label: label.into(),
            phis: Vec::new(),
            insts: Vec::new(),
            term: None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct ValueDef {
    pub name: String,
    pub kind: Kind,
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Hash)]
pub struct FnAttrs {
    pub reset_tags: bool,
}

#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct Function {
    pub name: String,
    pub params: Vec<ValueId>,
    pub ret_kind: Kind,
    pub attrs: FnAttrs,
    pub blocks: Vec<Block>,
    pub values: Vec<ValueDef>,
}

impl Function {
    pub fn new(name: impl Into<String>) -> Self {
        Function {
            name: name.into(),
            params: Vec::new(),
            ret_kind: Kind::I64,
            attrs: FnAttrs::default(),
            blocks: Vec::new(),
            values: Vec::new(),
        }
    }

    pub fn add_value(&mut self, name: impl Into<String>, kind: Kind) -> ValueId {
        let id = ValueId(self.values.len() as u32);
        self.values.push(ValueDef {
            name: name.into(),
            kind,
        });
        id
    }

    /// Adds a value whose name does not clash with any existing one.
    pub fn fresh_value(&mut self, hint: &str, kind: Kind) -> ValueId {
        let mut name = hint.to_string();
        let mut n = 1;
        while self.values.iter().any(|v| v.name == name) {
            name = format!("{hint}.{n}");
            n += 1;
        }
        self.add_value(name, kind)
    }

    pub fn add_param(&mut self, name: impl Into<String>, kind: Kind) -> ValueId {
        let id = self.add_value(name, kind);
        self.params.push(id);
        id
    }

    pub fn value(&self, id: ValueId) -> &ValueDef {
        &self.values[id.index()]
    }

    pub fn value_name(&self, id: ValueId) -> &str {
        &self.values[id.index()].name
    }

    pub fn block_by_label(&self, label: &str) -> Option<BlockId> {
        self.blocks
            .iter()
            .position(|b| b.label == label)
            .map(|i| BlockId(i as u32))
    }

    pub fn block(&self, id: BlockId) -> &Block {
        &self.blocks[id.index()]
    }

    /// True if any instrumentation operation or slot attribute is present.
    /// The reset-tags attribute alone does not count: source programs may
    /// request it.
    pub fn has_instrumentation(&self) -> bool {
        self.blocks
            .iter()
            .any(|b| b.insts.iter().any(Inst::is_instrumentation))
    }

    pub fn instruction_count(&self) -> usize {
        self.blocks
            .iter()
            .map(|b| b.phis.len() + b.insts.len() + usize::from(b.term.is_some()))
            .sum()
    }

    pub fn operand_kind(&self, op: &Operand) -> Kind {
        match op {
            Operand::Value(v) => self.values[v.index()].kind,
            Operand::Imm(_) => Kind::I64,
            Operand::Null | Operand::Global(_) => Kind::Ptr,
        }
    }

    /// Iterates every instruction with its location.
    pub fn insts(&self) -> impl Iterator<Item = (InstLoc, &Inst)> {
        self.blocks.iter().enumerate().flat_map(|(b, block)| {
            block.insts.iter().enumerate().map(move |(i, inst)| {
                (
                    InstLoc {
                        block: BlockId(b as u32),
                        index: i as u32,
                    },
                    inst,
                )
            })
        })
    }
}

/// Position of a body instruction inside a function.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize)]
pub struct InstLoc {
    pub block: BlockId,
    pub index: u32,
}

#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct GlobalDef {
    pub name: String,
    pub size: u64,
    pub init: Option<Vec<u8>>,
    /// Allocation tag for the global's granules in instrumented programs.
    pub tag: Option<u8>,
}

#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct Program {
    pub globals: Vec<GlobalDef>,
    /// Declared functions without a body; calls to them are opaque.
    pub externs: Vec<ExternDecl>,
    pub functions: Vec<Function>,
    pub entry: String,
}

#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct ExternDecl {
    pub name: String,
    pub ret_kind: Kind,
}

impl Program {
    pub fn function(&self, name: &str) -> Option<&Function> {
        self.functions.iter().find(|f| f.name == name)
    }

    pub fn function_index(&self, name: &str) -> Option<usize> {
        self.functions.iter().position(|f| f.name == name)
    }

    pub fn global(&self, name: &str) -> Option<&GlobalDef> {
        self.globals.iter().find(|g| g.name == name)
    }

    pub fn extern_decl(&self, name: &str) -> Option<&ExternDecl> {
        self.externs.iter().find(|e| e.name == name)
    }

    pub fn has_instrumentation(&self) -> bool {
        self.globals.iter().any(|g| g.tag.is_some())
            || self.functions.iter().any(Function::has_instrumentation)
    }

    pub fn instruction_count(&self) -> usize {
        self.functions.iter().map(Function::instruction_count).sum()
    }

    /// Return kind of a callee, defined or external.
    pub fn callee_ret_kind(&self, name: &str) -> Option<Kind> {
        self.function(name)
            .map(|f| f.ret_kind)
            .or_else(|| self.extern_decl(name).map(|e| e.ret_kind))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub enum Severity {
    Error,
    Warning,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct Location {
    pub function: String,
    pub block: Option<String>,
    pub index: Option<u32>,
}

/// A problem found while parsing or validating a program.
#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct Diagnostic {
    pub severity: Severity,
    pub message: String,
    pub location: Option<Location>,
    /// 1-based line and column in the source text, for parse errors.
    pub line_col: Option<(usize, usize)>,
}

impl Diagnostic {
    pub fn error(message: impl Into<String>) -> Self {
        Diagnostic {
            severity: Severity::Error,
            message: message.into(),
            location: None,
            line_col: None,
        }
    }

    pub fn at(mut self, function: &str, block: Option<&str>, index: Option<u32>) -> Self {
        self.location = Some(Location {
            function: function.to_string(),
            block: block.map(str::to_string),
            index,
        });
        self
    }

    pub fn at_line(mut self, line: usize, col: usize) -> Self {
        self.line_col = Some((line, col));
        self
    }
}

impl fmt::Display for Diagnostic {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let sev = match self.severity {
            Severity::Error => "error",
            Severity::Warning => "warning",
        };
        write!(f, "{sev}")?;
        if let Some((l, c)) = self.line_col {
            write!(f, " at {l}:{c}")?;
        }
        if let Some(loc) = &self.location {
            write!(f, " in @{}", loc.function)?;
            if let Some(b) = &loc.block {
                write!(f, " block {b}")?;
            }
            if let Some(i) = loc.index {
                write!(f, " inst {i}")?;
            }
        }
        write!(f, ": {}", self.message)
    }
}

impl std::error::Error for Diagnostic {}
