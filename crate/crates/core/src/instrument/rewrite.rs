use super::layout::{FrameLayout, FrameSlot, SlotRef};
use crate::analysis::{TfpAction, TfpSite, TfpSiteKind};
use crate::ir::*;
use std::collections::HashMap;

#[derive(Default)]
struct Subst {
    /// Applies at every use.
    all: HashMap<ValueId, ValueId>,
    /// Loaded pointers: comparisons and output keep the unmodified value.
    enforced: HashMap<ValueId, ValueId>,
}

impl Subst {
    fn apply(&self, op: &mut Operand, keep_loaded: bool) {
        if let Operand::Value(v) = op {
            if let Some(n) = self.all.get(v) {
                *v = *n;
            } else if !keep_loaded {
                if let Some(n) = self.enforced.get(v) {
                    *v = *n;
                }
            }
        }
    }

    fn inst(&self, inst: &mut Inst) {
        let keep = matches!(inst, Inst::Cmp { .. } | Inst::Output { .. });
        for op in inst.operands_mut() {
            self.apply(op, keep);
        }
    }
}

/// Inserts tag-forgery prevention at the given sites of `f`. Site locations
/// refer to `f` as passed in.
pub fn insert_tfp(f: &Function, sites: &[&TfpSite]) -> Function {
    let mut out = f.clone();
    let mut subst = Subst::default();
    let mut fresh: HashMap<InstLoc, ValueId> = HashMap::new();
    for s in sites {
        if s.action == TfpAction::Elide {
            continue;
        }
        let hint = match s.kind {
            TfpSiteKind::PtrLoad => "tfp",
            TfpSiteKind::Gep => "kt",
            TfpSiteKind::IntToPtr => "clr",
        };
        let name = format!("{}.{hint}", f.value_name(s.value));
        let nv = out.fresh_value(&name, Kind::Ptr);
        fresh.insert(s.loc, nv);
        if s.kind == TfpSiteKind::PtrLoad {
            subst.enforced.insert(s.value, nv);
        } else {
            subst.all.insert(s.value, nv);
        }
    }
    let by_loc: HashMap<InstLoc, &TfpSite> = sites.iter().map(|s| (s.loc, *s)).collect();

    for (bi, block) in out.blocks.iter_mut().enumerate() {
        let old = std::mem::take(&mut block.insts);
        for (i, mut inst) in old.into_iter().enumerate() {
            let loc = InstLoc {
                block: BlockId(bi as u32),
                index: i as u32,
            };
            subst.inst(&mut inst);
            let extra = match (by_loc.get(&loc), fresh.get(&loc)) {
                (Some(site), Some(&nv)) => tfp_inst(site, nv, &inst),
                _ => None,
            };
            block.insts.push(inst);
            block.insts.extend(extra);
        }
        for phi in &mut block.phis {
            for (op, _) in &mut phi.incoming {
                subst.apply(op, false);
            }
        }
        if let Some(t) = &mut block.term {
            for op in t.operands_mut() {
                subst.apply(op, false);
            }
        }
    }
    out
}

fn tfp_inst(site: &TfpSite, nv: ValueId, rewritten: &Inst) -> Option<Inst> {
    let orig = Operand::Value(site.value);
    Some(match (site.action, rewritten) {
        (TfpAction::ClearTop, _) => Inst::ClearTopTagBit {
            result: nv,
            ptr: orig,
        },
        (TfpAction::Runtime, Inst::Load { addr, offset, .. }) => Inst::TfpLoad {
            result: nv,
            loaded: orig,
            addr: addr.clone(),
            offset: *offset,
        },
        (TfpAction::KeepTag, Inst::Gep { base, .. }) => Inst::KeepTag {
            result: nv,
            ptr: orig,
            from: base.clone(),
        },
        _ => return None,
    })
}

/// Inserts the frame tagging code described by `layout`: static slots and
/// guards hoisted to the top of the entry block and tagged there, run-time
/// slots tagged where they are allocated, and tag resets before every return.
pub fn insert_tagging(f: &Function, layout: &FrameLayout) -> Function {
    let mut out = f.clone();
    out.attrs.reset_tags = layout.reset_tags;
    let mut subst = Subst::default();

    let by_value: HashMap<ValueId, &FrameSlot> = layout
        .slots
        .iter()
        .filter_map(|s| match &s.slot {
            SlotRef::Alloca { value, .. } => Some((*value, s)),
            SlotRef::Guard { .. } => None,
        })
        .collect();
    let mut tagged_value = HashMap::new();
    for s in &layout.slots {
        if let SlotRef::Alloca { name, value } = &s.slot {
            if s.needs_tagging() {
                let nv = out.fresh_value(&format!("{name}.tag"), Kind::Ptr);
                tagged_value.insert(*value, nv);
                subst.all.insert(*value, nv);
            }
        }
    }

    // Static frame: slots and guards in layout order, then their tagging.
    let mut header = Vec::new();
    let mut tagging = Vec::new();
    let mut resets = Vec::new();
    let mut hoisted = Vec::new();
    for s in layout.slots.iter().filter(|s| s.offset.is_some()) {
        let size = s.size.unwrap_or(0);
        let raw = match &s.slot {
            SlotRef::Alloca { value, .. } => {
                hoisted.push(*value);
                header.push(Inst::Alloca {
                    result: *value,
                    size: AllocaSize::Static(size),
                    attr: s.attr,
                });
                *value
            }
            SlotRef::Guard { name } => {
                let g = out.fresh_value(name, Kind::Ptr);
                header.push(Inst::Guard { result: g, size });
                if s.needs_tagging() {
                    let t = out.fresh_value(&format!("{name}.tag"), Kind::Ptr);
                    tagged_value.insert(g, t);
                }
                g
            }
        };
        if s.needs_tagging() {
            let t = tagged_value[&raw];
            tagging.push(Inst::TagPtr {
                result: t,
                base: Operand::Value(raw),
                tag: s.tag,
            });
            tagging.push(Inst::SetTag {
                addr: Operand::Value(t),
                size: Operand::Imm(size as i64),
            });
            resets.push(Inst::SetTag {
                addr: Operand::Value(raw),
                size: Operand::Imm(size as i64),
            });
        }
    }
    if layout.reset_tags {
        resets = vec![Inst::RetagFrame];
    }

    // Byte counts of run-time sized slots that need tagging.
    let mut size_values = HashMap::new();
    for s in layout.slots.iter().filter(|s| s.offset.is_none() && s.needs_tagging()) {
        if let SlotRef::Alloca { name, value } = &s.slot {
            if s.size.is_none() {
                size_values.insert(*value, out.fresh_value(&format!("{name}.size"), Kind::I64));
            }
        }
    }

    for (bi, block) in out.blocks.iter_mut().enumerate() {
        let old = std::mem::take(&mut block.insts);
        for mut inst in old {
            if let Inst::Alloca { result, .. } = &inst {
                if bi == 0 && hoisted.contains(result) {
                    continue;
                }
            }
            subst.inst(&mut inst);
            let Inst::Alloca { result, size, attr } = &mut inst else {
                block.insts.push(inst);
                continue;
            };
            let Some(s) = by_value.get(result) else {
                block.insts.push(inst);
                continue;
            };
            *attr = s.attr;
            if !s.needs_tagging() {
                block.insts.push(inst);
                continue;
            }
            let raw = *result;
            let mut extra = Vec::new();
            let size_op = match size {
                AllocaSize::Static(n) => Operand::Imm(*n as i64),
                AllocaSize::Dynamic { count, elem: 1 } => count.clone(),
                AllocaSize::Dynamic { count, elem } => {
                    let sz = size_values[&raw];
                    extra.push(Inst::Bin {
                        result: sz,
                        op: BinOp::Mul,
                        lhs: count.clone(),
                        rhs: Operand::Imm(*elem as i64),
                    });
                    Operand::Value(sz)
                }
            };
            let t = tagged_value[&raw];
            block.insts.push(inst);
            block.insts.extend(extra);
            block.insts.push(Inst::TagPtr {
                result: t,
                base: Operand::Value(raw),
                tag: s.tag,
            });
            block.insts.push(Inst::SetTag {
                addr: Operand::Value(t),
                size: size_op,
            });
        }
        for phi in &mut block.phis {
            for (op, _) in &mut phi.incoming {
                subst.apply(op, false);
            }
        }
        if let Some(t) = &mut block.term {
            for op in t.operands_mut() {
                subst.apply(op, false);
            }
        }
        if matches!(block.term, Some(Terminator::Ret(_))) {
            block.insts.extend(resets.iter().cloned());
        }
    }
    let entry = &mut out.blocks[0];
    let rest = std::mem::take(&mut entry.insts);
    entry.insts = header;
    entry.insts.extend(tagging);
    entry.insts.extend(rest);
    out
}
