use super::facts::{is_base_def, Facts, Offset, Root};
use super::use_info::*;
use super::{AnalysisConfig, FunctionTable};
use crate::ir::*;
use std::collections::BTreeMap;

/// Builds one UseInfo per alloca, pointer parameter and pointer load of `f`,
/// recording every use reached through the def-use chains.
pub fn run_function_pass(
    p: &Program,
    func: usize,
    facts: &Facts,
    cfg: &AnalysisConfig,
) -> FunctionTable {
    let f = &p.functions[func];
    let mut table = FunctionTable {
        function: f.name.clone(),
        uses: Vec::new(),
        index: BTreeMap::new(),
    };
    let key = |value| UseKey {
        func: func as u32,
        value,
    };
    let add = |table: &mut FunctionTable, v: ValueId, kind| {
        table.index.insert(v, table.uses.len());
        table
            .uses
            .push(UseInfo::new(key(v), kind, f.value_name(v)));
    };
    for &pv in &f.params {
        if f.value(pv).kind == Kind::Ptr {
            add(&mut table, pv, BaseKind::Argument);
        }
    }
    for (_, inst) in f.insts() {
        if is_base_def(inst) {
            let kind = if matches!(inst, Inst::Alloca { .. }) {
                BaseKind::Alloca
            } else {
                BaseKind::LoadSite
            };
            add(&mut table, inst.result().unwrap(), kind);
        }
    }

    let mut pass = Pass {
        p,
        f,
        func,
        facts,
        cfg,
        table,
    };
    for (bi, b) in f.blocks.iter().enumerate() {
        let bid = BlockId(bi as u32);
        if !facts.dom.is_reachable(bid) {
            continue;
        }
        for phi in &b.phis {
            for (v, _) in &phi.incoming {
                pass.derived(v);
            }
        }
        for inst in &b.insts {
            pass.inst(bid, inst);
        }
        if let Some(Terminator::Ret(Some(v))) = &b.term {
            pass.escape(v);
        }
    }
    pass.table
}

struct Pass<'a> {
    p: &'a Program,
    f: &'a Function,
    func: usize,
    facts: &'a Facts,
    cfg: &'a AnalysisConfig,
    table: FunctionTable,
}

impl Pass<'_> {
    fn bases(&self, o: &Operand) -> Vec<(ValueId, Offset)> {
        self.facts
            .pointer(o)
            .into_iter()
            .filter_map(|(r, off)| match r {
                Root::Base(b) => Some((b, off)),
                _ => None,
            })
            .collect()
    }

    fn use_mut(&mut self, b: ValueId) -> &mut UseInfo {
        let i = self.table.index[&b];
        &mut self.table.uses[i]
    }

    fn is_alloca(&self, v: ValueId) -> bool {
        self.table
            .index
            .get(&v)
            .is_some_and(|&i| self.table.uses[i].kind == BaseKind::Alloca)
    }

    /// The operand is used in a way other than as a direct load/store address.
    fn derived(&mut self, o: &Operand) {
        for (b, _) in self.bases(o) {
            self.use_mut(b).direct_only = false;
        }
    }

    fn escape(&mut self, o: &Operand) {
        for (b, _) in self.bases(o) {
            self.use_mut(b).set_unsafe();
        }
    }

    fn access(&mut self, at: BlockId, addr: &Operand, offset: i64, ty: MemTy, load: Option<ValueId>) {
        let direct = addr.as_value();
        for (b, off) in self.bases(addr) {
            let facts = self.facts;
            let func = self.func as u32;
            let u = self.use_mut(b);
            if direct != Some(b) {
                u.direct_only = false;
            }
            match off.shift(offset) {
                Offset::Known(k) => {
                    let r = ByteRange::access(k, ty.width());
                    u.range = u.range.union(r);
                    if ty.is_ptr() {
                        u.ptr_slots.insert(k);
                    } else {
                        u.data_range = u.data_range.union(r);
                    }
                    if let Some(l) = load {
                        u.derefed_by.insert(DerefEntry {
                            load: UseKey { func, value: l },
                            slot: k,
                        });
                    }
                }
                Offset::Linear { phi, start, step } => {
                    let header = facts.phi_block.get(&phi).copied();
                    let latch = facts.latch.get(&phi).copied();
                    let every_iteration = match (header, latch) {
                        (Some(h), Some(l)) => facts.dom.dominates(h, at) && facts.dom.dominates(at, l),
                        _ => false,
                    };
                    if every_iteration && load.is_none() {
                        u.add_linear(LinearAccessInfo::new(ByteRange::access(start, ty.width()), step));
                        if ty.is_ptr() {
                            u.pointer_unsafe = true;
                        }
                    } else {
                        u.set_unsafe();
                    }
                }
                Offset::Unknown => u.set_unsafe(),
            }
        }
    }

    fn stored_pointer(&mut self, addr: &Operand, offset: i64, value: &Operand) {
        let sites: Vec<(Root, Offset)> = self.facts.pointer(addr).into_iter().collect();
        for (x, xoff) in self.bases(value) {
            let mut entries = Vec::new();
            let mut ok = true;
            for (root, soff) in &sites {
                match (root, soff.shift(offset), xoff) {
                    (Root::Base(s), Offset::Known(slot), Offset::Known(px)) if self.is_alloca(*s) => {
                        entries.push(StoreEntry {
                            site: UseKey {
                                func: self.func as u32,
                                value: *s,
                            },
                            slot,
                            ptr_offset: px,
                        })
                    }
                    _ => ok = false,
                }
            }
            let u = self.use_mut(x);
            u.direct_only = false;
            if ok {
                u.stored_in.extend(entries);
            } else {
                u.set_unsafe();
            }
        }
    }

    fn call(&mut self, callee: &str, args: &[Operand]) {
        let defined = self.p.function(callee).is_some();
        let pure = self.cfg.pure_externs.contains(callee);
        for (i, a) in args.iter().enumerate() {
            for (b, off) in self.bases(a) {
                let u = self.use_mut(b);
                u.direct_only = false;
                match (defined, off) {
                    (true, Offset::Known(k)) => {
                        u.calls.insert(CallEntry {
                            callee: callee.to_string(),
                            param: i,
                            offset: k,
                        });
                    }
                    (false, _) if pure => {}
                    _ => u.set_unsafe(),
                }
            }
        }
    }

    fn inst(&mut self, at: BlockId, inst: &Inst) {
        match inst {
            Inst::Load {
                result,
                ty,
                addr,
                offset,
            } => {
                let load = ty.is_ptr().then_some(*result);
                self.access(at, addr, *offset, *ty, load);
            }
            Inst::Store {
                ty,
                addr,
                offset,
                value,
            } => {
                self.access(at, addr, *offset, *ty, None);
                if ty.is_ptr() {
                    self.stored_pointer(addr, *offset, value);
                }
            }
            Inst::Gep { base, .. } => self.derived(base),
            Inst::Const { value, .. } => self.derived(value),
            Inst::Call { callee, args, .. } => self.call(callee, args),
            Inst::Cmp { lhs, rhs, .. } => {
                self.derived(lhs);
                self.derived(rhs);
            }
            Inst::Output { value } => self.derived(value),
            Inst::PtrToInt { value, .. } => self.escape(value),
            Inst::Alloca { .. } | Inst::IntToPtr { .. } | Inst::Bin { .. } => {}
            other => {
                for o in other.operands() {
                    if self.f.operand_kind(o) == Kind::Ptr {
                        self.escape(o);
                    }
                }
            }
        }
    }
}
