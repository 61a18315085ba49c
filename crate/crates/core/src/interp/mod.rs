//! Small-step interpreter running plain or instrumented programs on the
//! tagged-memory machine.
//!
//! The stack grows down from a fixed top; globals live in a low segment.
//! Every value carries a shadow provenance (the allocation it is based on)
//! that observers can use; execution itself never reads it.

mod memory;

pub use memory::Memory;

use crate::instrument::place_slot;
use crate::ir::*;
use crate::mte::{self, CheckEvent, MteConfig, PointerValue, TagMemory, Trap, TrapKind, Verdict, GRANULE, SAFE_DEFAULT};
use serde::Serialize;
use std::collections::HashMap;

pub const STACK_TOP: u64 = 1 << 40;
pub const STACK_SIZE: u64 = 1 << 20;
pub const GLOBAL_BASE: u64 = 0x1000_0000;
pub const DEFAULT_STEP_BUDGET: u64 = 10_000_000;
pub const DEFAULT_MAX_DEPTH: usize = 512;

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct RunConfig {
    /// Check tags on every access. Off means a tag-blind machine: only
    /// unmapped accesses fault and tagging operations are bookkeeping.
    pub mte: bool,
    pub wildcard: bool,
    pub step_budget: u64,
    pub max_depth: usize,
    pub trace: bool,
    /// On every return of an instrumented function, scan its frame for tags
    /// that were not restored.
    pub check_hygiene: bool,
    pub stack_top: u64,
    pub stack_size: u64,
    pub global_base: u64,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            mte: true,
            wildcard: false,
            step_budget: DEFAULT_STEP_BUDGET,
            max_depth: DEFAULT_MAX_DEPTH,
            trace: false,
            check_hygiene: true,
            stack_top: STACK_TOP,
            stack_size: STACK_SIZE,
            global_base: GLOBAL_BASE,
        }
    }
}

impl RunConfig {
    pub fn tag_blind() -> Self {
        RunConfig {
            mte: false,
            ..Default::default()
        }
    }
}

pub type AllocId = u32;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Val {
    pub bits: u64,
    pub prov: Option<AllocId>,
}

impl Val {
    fn int(bits: u64) -> Val {
        Val { bits, prov: None }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Owner {
    Global { name: String },
    Stack { function: String, func: u32, value: ValueId, name: String },
}

/// One allocation: a global, or one execution of an alloca.
#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct Allocation {
    pub owner: Owner,
    /// Object address, bits [55:0].
    pub addr: u64,
    pub size: u64,
    pub live: bool,
}

impl Allocation {
    pub fn contains(&self, addr: u64, width: u64) -> bool {
        addr >= self.addr && addr.checked_add(width).is_some_and(|e| e <= self.addr + self.size)
    }
}

/// A load or store about to be performed.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Access {
    pub func: u32,
    pub loc: InstLoc,
    pub ptr: u64,
    pub width: u64,
    pub store: bool,
    pub prov: Option<AllocId>,
    pub allowed: bool,
}

/// Receives allocation lifetimes and accesses during a run.
pub trait Observer {
    fn alloc(&mut self, _id: AllocId, _a: &Allocation) {}
    fn free(&mut self, _id: AllocId, _a: &Allocation) {}
    fn access(&mut self, _a: &Access) {}
}

pub struct NoObserver;

impl Observer for NoObserver {}

#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
#[serde(tag = "event", rename_all = "snake_case")]
pub enum TraceEvent {
    Step { function: String, block: String, index: u32 },
    Check(CheckEvent),
}

/// Position of the next instruction to execute; `index` equal to the block's
/// instruction count denotes the terminator.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub struct Pc {
    pub func: usize,
    pub block: BlockId,
    pub index: u32,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct TrapReport {
    pub trap: Trap,
    pub function: String,
    pub block: String,
    pub index: u32,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Limit {
    Steps,
    Depth,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
#[serde(tag = "status", rename_all = "snake_case")]
pub enum Status {
    Finished { value: Option<i64> },
    Trapped(TrapReport),
    Exhausted { limit: Limit },
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct HygieneViolation {
    pub function: String,
    pub address: u64,
    pub tag: u8,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct Outcome {
    pub status: Status,
    pub output: Vec<i64>,
    pub steps: u64,
    #[serde(skip_serializing_if = "Vec::is_empty")]
    pub trace: Vec<TraceEvent>,
    pub hygiene: Vec<HygieneViolation>,
}

impl Outcome {
    pub fn trapped(&self) -> bool {
        matches!(self.status, Status::Trapped(_))
    }

    pub fn finished(&self) -> Option<Option<i64>> {
        match self.status {
            Status::Finished { value } => Some(value),
            _ => None,
        }
    }
}

#[derive(Debug, thiserror::Error)]
pub enum RunError {
    #[error("entry function @{0} not found")]
    NoEntry(String),
    #[error("entry takes {expected} arguments, got {got}")]
    ArgCount { expected: usize, got: usize },
    #[error("invalid program: {0}")]
    Invalid(Diagnostic),
}

enum Halt {
    Trap(Trap),
    Limit(Limit),
}

impl From<Trap> for Halt {
    fn from(t: Trap) -> Self {
        Halt::Trap(t)
    }
}

struct Frame {
    func: usize,
    base: u64,
    saved_cursor: u64,
    vals: Vec<Option<Val>>,
    block: BlockId,
    index: usize,
    ret_to: Option<ValueId>,
    allocs: Vec<AllocId>,
}

pub struct Machine<'p> {
    p: &'p Program,
    cfg: RunConfig,
    mte: MteConfig,
    mem: Memory,
    tags: TagMemory,
    frames: Vec<Frame>,
    cursor: u64,
    globals: HashMap<&'p str, Val>,
    allocs: Vec<Allocation>,
    /// Per function and value: the value is an implicit-slot alloca.
    implicit: Vec<Vec<bool>>,
    output: Vec<i64>,
    steps: u64,
    trace: Vec<TraceEvent>,
    hygiene: Vec<HygieneViolation>,
    status: Option<Status>,
}

impl<'p> Machine<'p> {
    pub fn new(p: &'p Program, args: &[i64], cfg: RunConfig, obs: &mut dyn Observer) -> Result<Self, RunError> {
        if let Some(d) = validate(p).into_iter().next() {
            return Err(RunError::Invalid(d));
        }
        let entry = p
            .function_index(&p.entry)
            .ok_or_else(|| RunError::NoEntry(p.entry.clone()))?;
        let ef = &p.functions[entry];
        if ef.params.len() != args.len() {
            return Err(RunError::ArgCount {
                expected: ef.params.len(),
                got: args.len(),
            });
        }
        let implicit = p
            .functions
            .iter()
            .map(|f| {
                let mut v = vec![false; f.values.len()];
                for (_, inst) in f.insts() {
                    if let Inst::Alloca {
                        result,
                        attr: SlotAttr::Implicit,
                        ..
                    } = inst
                    {
                        v[result.index()] = true;
                    }
                }
                v
            })
            .collect();
        let mut m = Machine {
            p,
            mte: MteConfig {
                wildcard_enabled: cfg.wildcard,
                ..Default::default()
            },
            mem: Memory::default(),
            tags: TagMemory::new(),
            frames: Vec::new(),
            cursor: cfg.stack_top,
            globals: HashMap::new(),
            allocs: Vec::new(),
            implicit,
            output: Vec::new(),
            steps: 0,
            trace: Vec::new(),
            hygiene: Vec::new(),
            status: None,
            cfg,
        };
        m.tags.map(m.cfg.stack_top - m.cfg.stack_size, m.cfg.stack_size);
        let mut at = m.cfg.global_base;
        for g in &p.globals {
            let size = mte::round_up_granule(g.size.max(1));
            m.tags.map(at, size);
            let tag = g.tag.unwrap_or(SAFE_DEFAULT);
            m.tags
                .set_allocation_tags(at, size, tag)
                .expect("global segment is mapped");
            if let Some(init) = &g.init {
                m.mem.write(at, init);
            }
            let id = m.new_alloc(
                Allocation {
                    owner: Owner::Global { name: g.name.clone() },
                    addr: at,
                    size: g.size,
                    live: true,
                },
                obs,
            );
            m.globals.insert(
                &g.name,
                Val {
                    bits: PointerValue(at).with_tag(tag).0,
                    prov: Some(id),
                },
            );
            at += size;
        }
        let vals = args.iter().map(|&a| Val::int(a as u64)).collect();
        m.push_frame(entry, vals, None)
            .map_err(|_| RunError::NoEntry(p.entry.clone()))?;
        Ok(m)
    }

    fn new_alloc(&mut self, a: Allocation, obs: &mut dyn Observer) -> AllocId {
        let id = self.allocs.len() as AllocId;
        obs.alloc(id, &a);
        self.allocs.push(a);
        id
    }

    fn push_frame(&mut self, fi: usize, args: Vec<Val>, ret_to: Option<ValueId>) -> Result<(), Halt> {
        if self.frames.len() >= self.cfg.max_depth {
            return Err(Halt::Limit(Limit::Depth));
        }
        let f = &self.p.functions[fi];
        let mut vals = vec![None; f.values.len()];
        for (pv, a) in f.params.iter().zip(args) {
            vals[pv.index()] = Some(a);
        }
        let base = self.cursor & !(GRANULE - 1);
        self.frames.push(Frame {
            func: fi,
            base,
            saved_cursor: self.cursor,
            vals,
            block: BlockId(0),
            index: 0,
            ret_to,
            allocs: Vec::new(),
        });
        self.cursor = base;
        self.enter_block(BlockId(0), None);
        Ok(())
    }

    pub fn program(&self) -> &'p Program {
        self.p
    }

    pub fn status(&self) -> Option<&Status> {
        self.status.as_ref()
    }

    pub fn is_running(&self) -> bool {
        self.status.is_none()
    }

    pub fn pc(&self) -> Option<Pc> {
        if self.status.is_some() {
            return None;
        }
        self.frames.last().map(|fr| Pc {
            func: fr.func,
            block: fr.block,
            index: fr.index as u32,
        })
    }

    pub fn steps(&self) -> u64 {
        self.steps
    }

    pub fn output(&self) -> &[i64] {
        &self.output
    }

    pub fn allocations(&self) -> &[Allocation] {
        &self.allocs
    }

    /// The most recent live allocation made by alloca `name` of `function`.
    pub fn live_slot(&self, function: &str, name: &str) -> Option<&Allocation> {
        self.allocs.iter().rev().find(|a| {
            a.live
                && matches!(&a.owner, Owner::Stack { function: f, name: n, .. } if f == function && n == name)
        })
    }

    pub fn global_address(&self, name: &str) -> Option<u64> {
        self.globals.get(name).map(|v| PointerValue(v.bits).address())
    }

    /// Raw memory read, bypassing tag checks.
    pub fn read_bytes(&self, addr: u64, len: u64) -> Vec<u8> {
        self.mem.read(addr & mte::ADDR_MASK, len)
    }

    /// Raw memory write, bypassing tag checks.
    pub fn write_bytes(&mut self, addr: u64, bytes: &[u8]) {
        self.mem.write(addr & mte::ADDR_MASK, bytes);
    }

    pub fn tag_memory(&self) -> &TagMemory {
        &self.tags
    }

    pub fn tag_at(&self, addr: u64) -> Option<u8> {
        self.tags.tag_at(addr)
    }

    /// Runs until the program stops.
    pub fn run_to_end(&mut self, obs: &mut dyn Observer) {
        while self.step(obs) {}
    }

    pub fn finish(self) -> Outcome {
        Outcome {
            status: self.status.unwrap_or(Status::Exhausted { limit: Limit::Steps }),
            output: self.output,
            steps: self.steps,
            trace: self.trace,
            hygiene: self.hygiene,
        }
    }

    /// Executes one instruction or terminator. Returns whether the machine is
    /// still running.
    pub fn step(&mut self, obs: &mut dyn Observer) -> bool {
        if self.status.is_some() {
            return false;
        }
        if self.steps >= self.cfg.step_budget {
            self.status = Some(Status::Exhausted { limit: Limit::Steps });
            return false;
        }
        self.steps += 1;
        let pc = self.pc().expect("running machine has a frame");
        if let Err(h) = self.exec(pc, obs) {
            let f = &self.p.functions[pc.func];
            self.status = Some(match h {
                Halt::Trap(trap) => Status::Trapped(TrapReport {
                    trap,
                    function: f.name.clone(),
                    block: f.block(pc.block).label.clone(),
                    index: pc.index,
                }),
                Halt::Limit(limit) => Status::Exhausted { limit },
            });
        }
        self.status.is_none()
    }

    fn frame(&self) -> &Frame {
        self.frames.last().expect("frame")
    }

    fn frame_mut(&mut self) -> &mut Frame {
        self.frames.last_mut().expect("frame")
    }

    fn eval(&self, op: &Operand) -> Val {
        match op {
            Operand::Value(v) => self.frame().vals[v.index()].unwrap_or(Val::int(0)),
            Operand::Imm(i) => Val::int(*i as u64),
            Operand::Null => Val::int(0),
            Operand::Global(g) => self.globals.get(g.as_str()).copied().unwrap_or(Val::int(0)),
        }
    }

    fn set(&mut self, v: ValueId, val: Val) {
        self.frame_mut().vals[v.index()] = Some(val);
    }

    fn enter_block(&mut self, to: BlockId, from: Option<BlockId>) {
        let f = &self.p.functions[self.frame().func];
        let phis = &f.block(to).phis;
        let vals: Vec<(ValueId, Val)> = phis
            .iter()
            .map(|phi| {
                let v = phi
                    .incoming
                    .iter()
                    .find(|(_, b)| Some(*b) == from)
                    .map_or(Val::int(0), |(op, _)| self.eval(op));
                (phi.result, v)
            })
            .collect();
        let fr = self.frame_mut();
        fr.block = to;
        fr.index = 0;
        for (r, v) in vals {
            fr.vals[r.index()] = Some(v);
        }
    }

    fn exec(&mut self, pc: Pc, obs: &mut dyn Observer) -> Result<(), Halt> {
        let p = self.p;
        let f = &p.functions[pc.func];
        let block = f.block(pc.block);
        if self.cfg.trace {
            self.trace.push(TraceEvent::Step {
                function: f.name.clone(),
                block: block.label.clone(),
                index: pc.index,
            });
        }
        let Some(inst) = block.insts.get(pc.index as usize) else {
            let term = block.term.as_ref().expect("validated block has a terminator");
            return self.terminator(pc, term, obs);
        };
        self.frame_mut().index += 1;
        let loc = InstLoc {
            block: pc.block,
            index: pc.index,
        };
        match inst {
            Inst::Alloca { result, size, attr } => {
                let bytes = match size {
                    AllocaSize::Static(n) => Some(*n),
                    AllocaSize::Dynamic { count, elem } => u64::try_from(self.eval(count).bits as i64)
                        .ok()
                        .and_then(|c| c.checked_mul(*elem)),
                };
                let bytes = bytes.filter(|&b| b <= self.cfg.stack_size).ok_or(Trap {
                    kind: TrapKind::Unmapped,
                    address: self.cursor,
                    address_tag: SAFE_DEFAULT,
                    allocation_tag: None,
                })?;
                let obj = self.reserve(bytes, *attr)?;
                let id = self.new_alloc(
                    Allocation {
                        owner: Owner::Stack {
                            function: f.name.clone(),
                            func: pc.func as u32,
                            value: *result,
                            name: f.value_name(*result).to_string(),
                        },
                        addr: obj,
                        size: bytes,
                        live: true,
                    },
                    obs,
                );
                self.frame_mut().allocs.push(id);
                self.set(
                    *result,
                    Val {
                        bits: PointerValue(obj).with_tag(SAFE_DEFAULT).0,
                        prov: Some(id),
                    },
                );
            }
            Inst::Guard { result, size } => {
                let at = self.reserve(*size, SlotAttr::Tagged { high_end: false })?;
                self.set(*result, Val::int(PointerValue(at).with_tag(SAFE_DEFAULT).0));
            }
            Inst::Load {
                result,
                ty,
                addr,
                offset,
            } => {
                let base = self.eval(addr);
                let ea = base.bits.wrapping_add(*offset as u64);
                self.check(pc, loc, addr, ea, ty.width(), false, base.prov, obs)?;
                let a = PointerValue(ea).address();
                let raw = self.mem.read_uint(a, ty.width());
                let val = match ty {
                    MemTy::Ptr => Val {
                        bits: raw,
                        prov: self.mem.provenance(a),
                    },
                    MemTy::I64 => Val::int(raw),
                    MemTy::I32 => Val::int(raw as u32 as i32 as i64 as u64),
                    MemTy::I16 => Val::int(raw as u16 as i16 as i64 as u64),
                    MemTy::I8 => Val::int(raw as u8 as i8 as i64 as u64),
                };
                self.set(*result, val);
            }
            Inst::Store {
                ty,
                addr,
                offset,
                value,
            } => {
                let base = self.eval(addr);
                let v = self.eval(value);
                let ea = base.bits.wrapping_add(*offset as u64);
                self.check(pc, loc, addr, ea, ty.width(), true, base.prov, obs)?;
                let a = PointerValue(ea).address();
                self.mem.write_uint(a, ty.width(), v.bits);
                if ty.is_ptr() {
                    self.mem.set_provenance(a, v.prov);
                }
            }
            Inst::Gep {
                result,
                base,
                index,
                scale,
                offset,
            } => {
                let b = self.eval(base);
                let i = self.eval(index).bits;
                let bits = b
                    .bits
                    .wrapping_add(i.wrapping_mul(*scale as u64))
                    .wrapping_add(*offset as u64);
                self.set(*result, Val { bits, prov: b.prov });
            }
            Inst::Call { result, callee, args } => {
                let vals: Vec<Val> = args.iter().map(|a| self.eval(a)).collect();
                match p.function_index(callee) {
                    Some(ci) => self.push_frame(ci, vals, *result)?,
                    None => {
                        if let Some(r) = result {
                            self.set(*r, Val::int(0));
                        }
                    }
                }
            }
            Inst::IntToPtr { result, value } | Inst::PtrToInt { result, value } => {
                let v = self.eval(value);
                self.set(*result, Val::int(v.bits));
            }
            Inst::Bin { result, op, lhs, rhs } => {
                let (a, b) = (self.eval(lhs).bits, self.eval(rhs).bits);
                self.set(*result, Val::int(binop(*op, a, b)));
            }
            Inst::Cmp { result, pred, lhs, rhs } => {
                let (a, b) = (self.eval(lhs).bits, self.eval(rhs).bits);
                self.set(*result, Val::int(u64::from(pred.eval(a, b))));
            }
            Inst::Const { result, value } => {
                let v = self.eval(value);
                self.set(*result, v);
            }
            Inst::Output { value } => {
                let v = self.eval(value);
                self.output.push(v.bits as i64);
            }
            Inst::SetTag { addr, size } => {
                let ptr = PointerValue(self.eval(addr).bits);
                let n = (self.eval(size).bits as i64).max(0) as u64;
                if n > 0 {
                    let a = ptr.address();
                    let start = a & !(GRANULE - 1);
                    self.tags
                        .set_allocation_tags(start, a + n - start, ptr.address_tag())?;
                }
            }
            Inst::TagPtr { result, base, tag } => {
                let b = self.eval(base);
                self.set(
                    *result,
                    Val {
                        bits: PointerValue(b.bits).with_tag(*tag).0,
                        prov: b.prov,
                    },
                );
            }
            Inst::ClearTopTagBit { result, ptr } => {
                let v = self.eval(ptr);
                self.set(
                    *result,
                    Val {
                        bits: PointerValue(v.bits).clear_top_tag_bit().0,
                        prov: v.prov,
                    },
                );
            }
            Inst::TfpLoad {
                result,
                loaded,
                addr,
                offset,
            } => {
                let v = self.eval(loaded);
                let src = self.eval(addr).bits.wrapping_add(*offset as u64);
                let keep = self.tags.tag_at(src).is_some_and(mte::is_pointer_safe_tag);
                let bits = if keep {
                    v.bits
                } else {
                    PointerValue(v.bits).clear_top_tag_bit().0
                };
                self.set(*result, Val { bits, prov: v.prov });
            }
            Inst::KeepTag { result, ptr, from } => {
                let v = self.eval(ptr);
                let tag = PointerValue(self.eval(from).bits).address_tag();
                self.set(
                    *result,
                    Val {
                        bits: PointerValue(v.bits).with_tag(tag).0,
                        prov: v.prov,
                    },
                );
            }
            Inst::RetagFrame => {
                let start = self.cursor & !(GRANULE - 1);
                let base = self.frame().base;
                self.tags
                    .set_allocation_tags(start, base - start, SAFE_DEFAULT)?;
            }
        }
        Ok(())
    }

    /// Moves the cursor down for a new slot and returns the object address.
    fn reserve(&mut self, size: u64, attr: SlotAttr) -> Result<u64, Trap> {
        let (lo, obj) = place_slot(self.cursor, size, attr);
        let bottom = self.cfg.stack_top - self.cfg.stack_size;
        if lo < bottom || lo > self.cursor {
            return Err(Trap {
                kind: TrapKind::Unmapped,
                address: lo,
                address_tag: SAFE_DEFAULT,
                allocation_tag: None,
            });
        }
        self.cursor = lo;
        Ok(obj)
    }

    #[allow(clippy::too_many_arguments)]
    fn check(
        &mut self,
        pc: Pc,
        loc: InstLoc,
        addr: &Operand,
        ea: u64,
        width: u64,
        store: bool,
        prov: Option<AllocId>,
        obs: &mut dyn Observer,
    ) -> Result<(), Trap> {
        let via_frame_base = !self.cfg.mte
            || addr
                .as_value()
                .is_some_and(|v| self.implicit[pc.func][v.index()]);
        let ptr = PointerValue(ea);
        let verdict = self.tags.check_access(ptr, width, &self.mte, via_frame_base);
        let allowed = verdict == Verdict::Allowed;
        obs.access(&Access {
            func: pc.func as u32,
            loc,
            ptr: ea,
            width,
            store,
            prov,
            allowed,
        });
        if self.cfg.trace {
            self.trace.push(TraceEvent::Check(CheckEvent {
                op: if store { "store" } else { "load" },
                address: ptr.address(),
                width,
                addr_tag: ptr.address_tag(),
                alloc_tag: self.tags.tag_at(ptr.address()),
                allowed,
            }));
        }
        match verdict {
            Verdict::Allowed => Ok(()),
            Verdict::Trap(t) => Err(t),
        }
    }

    fn terminator(&mut self, pc: Pc, term: &Terminator, obs: &mut dyn Observer) -> Result<(), Halt> {
        match term {
            Terminator::Br(b) => self.enter_block(*b, Some(pc.block)),
            Terminator::CondBr { cond, then_bb, else_bb } => {
                let to = if self.eval(cond).bits != 0 { then_bb } else { else_bb };
                self.enter_block(*to, Some(pc.block));
            }
            Terminator::Ret(v) => {
                let val = v.as_ref().map(|o| self.eval(o));
                self.pop_frame(val, obs);
            }
        }
        Ok(())
    }

    fn pop_frame(&mut self, val: Option<Val>, obs: &mut dyn Observer) {
        let fr = self.frames.pop().expect("frame");
        let f = &self.p.functions[fr.func];
        if self.cfg.check_hygiene && f.has_instrumentation() {
            let start = self.cursor & !(GRANULE - 1);
            for (address, tag) in self.tags.non_default_in(start, fr.base - start) {
                self.hygiene.push(HygieneViolation {
                    function: f.name.clone(),
                    address,
                    tag,
                });
            }
        }
        for id in fr.allocs {
            let a = &mut self.allocs[id as usize];
            a.live = false;
            obs.free(id, a);
        }
        self.cursor = fr.saved_cursor;
        match self.frames.last_mut() {
            Some(caller) => {
                if let Some(r) = fr.ret_to {
                    caller.vals[r.index()] = Some(val.unwrap_or(Val::int(0)));
                }
            }
            None => {
                self.status = Some(Status::Finished {
                    value: val.map(|v| v.bits as i64),
                });
            }
        }
    }
}

/// Total integer semantics: wrapping arithmetic, division by zero yields 0,
/// shift amounts taken modulo 64.
pub fn binop(op: BinOp, a: u64, b: u64) -> u64 {
    let (sa, sb) = (a as i64, b as i64);
    match op {
        BinOp::Add => a.wrapping_add(b),
        BinOp::Sub => a.wrapping_sub(b),
        BinOp::Mul => a.wrapping_mul(b),
        BinOp::SDiv => {
            if sb == 0 {
                0
            } else {
                sa.wrapping_div(sb) as u64
            }
        }
        BinOp::SRem => {
            if sb == 0 {
                0
            } else {
                sa.wrapping_rem(sb) as u64
            }
        }
        BinOp::And => a & b,
        BinOp::Or => a | b,
        BinOp::Xor => a ^ b,
        BinOp::Shl => a.wrapping_shl(b as u32 & 63),
        BinOp::LShr => a.wrapping_shr(b as u32 & 63),
        BinOp::AShr => sa.wrapping_shr(b as u32 & 63) as u64,
    }
}

pub fn run(p: &Program, args: &[i64], cfg: RunConfig) -> Result<Outcome, RunError> {
    run_with(p, args, cfg, &mut NoObserver)
}

pub fn run_with(p: &Program, args: &[i64], cfg: RunConfig, obs: &mut dyn Observer) -> Result<Outcome, RunError> {
    let mut m = Machine::new(p, args, cfg, obs)?;
    m.run_to_end(obs);
    Ok(m.finish())
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
#[serde(tag = "verdict", rename_all = "snake_case")]
pub enum PairVerdict {
    Equal,
    /// The instrumented run trapped; expected when the plain program
    /// misbehaves.
    DivergedWithTrap { trap: TrapReport },
    Diverged { reason: String },
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct PairReport {
    pub verdict: PairVerdict,
    pub plain: Outcome,
    pub instrumented: Outcome,
}

/// Runs the plain program tag-blind and the instrumented one with checks on,
/// and compares their observable behaviour.
pub fn run_paired(plain: &Program, instr: &Program, args: &[i64], cfg: &RunConfig) -> Result<PairReport, RunError> {
    let a = run(
        plain,
        args,
        RunConfig {
            mte: false,
            ..cfg.clone()
        },
    )?;
    let b = run(
        instr,
        args,
        RunConfig {
            mte: true,
            ..cfg.clone()
        },
    )?;
    let verdict = match (&a.status, &b.status) {
        (_, Status::Trapped(t)) => PairVerdict::DivergedWithTrap { trap: t.clone() },
        (Status::Finished { value: x }, Status::Finished { value: y }) if x == y && a.output == b.output => {
            if b.hygiene.is_empty() {
                PairVerdict::Equal
            } else {
                PairVerdict::Diverged {
                    reason: format!("{} tags left behind on return", b.hygiene.len()),
                }
            }
        }
        (x, y) => PairVerdict::Diverged {
            reason: format!("plain {x:?}, instrumented {y:?}; outputs {:?} vs {:?}", a.output, b.output),
        },
    };
    Ok(PairReport {
        verdict,
        plain: a,
        instrumented: b,
    })
}
