//! Per-value dataflow facts: affine forms of integers over a recognized
//! induction variable, and byte offsets of pointers from their roots.

use crate::ir::*;
use std::collections::BTreeMap;

/// Integer value as an affine function of at most one induction phi.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Affine {
    Bottom,
    Const(i64),
    /// `start + n * step` on the n-th iteration of the loop headed by `phi`.
    Ind { phi: ValueId, start: i64, step: i64 },
    Unknown,
}

impl Affine {
    fn join(self, other: Affine) -> Affine {
        match (self, other) {
            (Affine::Bottom, x) | (x, Affine::Bottom) => x,
            (a, b) if a == b => a,
            _ => Affine::Unknown,
        }
    }

    fn add(self, c: i64) -> Affine {
        match self {
            Affine::Const(a) => a.checked_add(c).map_or(Affine::Unknown, Affine::Const),
            Affine::Ind { phi, start, step } => start
                .checked_add(c)
                .map_or(Affine::Unknown, |start| Affine::Ind { phi, start, step }),
            x => x,
        }
    }

    fn mul(self, c: i64) -> Affine {
        match self {
            Affine::Const(a) => a.checked_mul(c).map_or(Affine::Unknown, Affine::Const),
            Affine::Ind { phi, start, step } => match (start.checked_mul(c), step.checked_mul(c)) {
                (Some(_), Some(0)) => Affine::Const(start * c),
                (Some(start), Some(step)) => Affine::Ind { phi, start, step },
                _ => Affine::Unknown,
            },
            x => x,
        }
    }
}

/// Root a pointer value derives from.
#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Root {
    /// An analyzed base of this function: alloca, pointer parameter, or
    /// `load.ptr` result.
    Base(ValueId),
    Global(String),
    /// Call results, integer casts and null: provenance not tracked.
    Wild,
}

/// Byte offset of a pointer from its root.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Offset {
    Known(i64),
    Linear { phi: ValueId, start: i64, step: i64 },
    Unknown,
}

impl Offset {
    fn join(self, other: Offset) -> Offset {
        if self == other {
            self
        } else {
            Offset::Unknown
        }
    }

    pub fn shift(self, c: i64) -> Offset {
        match self {
            Offset::Known(k) => k.checked_add(c).map_or(Offset::Unknown, Offset::Known),
            Offset::Linear { phi, start, step } => start
                .checked_add(c)
                .map_or(Offset::Unknown, |start| Offset::Linear { phi, start, step }),
            Offset::Unknown => Offset::Unknown,
        }
    }
}

pub type PtrFacts = BTreeMap<Root, Offset>;

/// All facts of one function.
pub struct Facts {
    pub affine: Vec<Affine>,
    pub ptr: Vec<PtrFacts>,
    /// For each recognized induction phi, the block of its back edge.
    pub latch: BTreeMap<ValueId, BlockId>,
    pub phi_block: BTreeMap<ValueId, BlockId>,
    pub cfg: Cfg,
    pub dom: DomTree,
}

/// Whether a value starts a new analyzed base.
pub fn is_base_def(inst: &Inst) -> bool {
    matches!(
        inst,
        Inst::Alloca { .. }
            | Inst::Load {
                ty: MemTy::Ptr,
                ..
            }
    )
}

impl Facts {
    pub fn compute(f: &Function) -> Facts {
        let cfg = Cfg::new(f);
        let dom = DomTree::new(&cfg);
        let rpo = cfg.reverse_postorder();
        let n = f.values.len();
        let mut phi_block = BTreeMap::new();
        for (bi, b) in f.blocks.iter().enumerate() {
            for phi in &b.phis {
                phi_block.insert(phi.result, BlockId(bi as u32));
            }
        }
        let mut facts = Facts {
            affine: vec![Affine::Bottom; n],
            ptr: vec![PtrFacts::new(); n],
            latch: BTreeMap::new(),
            phi_block,
            cfg,
            dom,
        };
        for &p in &f.params {
            match f.value(p).kind {
                Kind::I64 => facts.affine[p.index()] = Affine::Unknown,
                Kind::Ptr => {
                    facts.ptr[p.index()].insert(Root::Base(p), Offset::Known(0));
                }
            }
        }
        facts.affine_fixpoint(f, &rpo);
        facts.pointer_fixpoint(f, &rpo);
        facts
    }

    pub fn int(&self, o: &Operand) -> Affine {
        match o {
            Operand::Imm(c) => Affine::Const(*c),
            Operand::Value(v) => self.affine[v.index()],
            _ => Affine::Unknown,
        }
    }

    pub fn pointer(&self, o: &Operand) -> PtrFacts {
        match o {
            Operand::Value(v) => self.ptr[v.index()].clone(),
            Operand::Global(g) => PtrFacts::from([(Root::Global(g.clone()), Offset::Known(0))]),
            Operand::Null => PtrFacts::from([(Root::Wild, Offset::Unknown)]),
            Operand::Imm(_) => PtrFacts::new(),
        }
    }

    /// Recognizes `%i = phi [c, pre], [%i ± k, latch]` with a single back edge.
    fn induction(&self, f: &Function, bid: BlockId, phi: &Phi) -> Option<Affine> {
        if phi.kind != Kind::I64 || phi.incoming.len() != 2 {
            return None;
        }
        let (mut init, mut back) = (None, None);
        for (v, pb) in &phi.incoming {
            if self.dom.dominates(bid, *pb) {
                if back.replace((v, *pb)).is_some() {
                    return None;
                }
            } else if init.replace(v).is_some() {
                return None;
            }
        }
        let Affine::Const(init) = self.int(init?) else {
            return None;
        };
        let (bv, _) = back?;
        let bv = bv.as_value()?;
        let step = f.blocks.iter().flat_map(|b| &b.insts).find_map(|inst| match inst {
            Inst::Bin {
                result,
                op,
                lhs,
                rhs,
            } if *result == bv => match (op, lhs, rhs) {
                (BinOp::Add, Operand::Value(x), Operand::Imm(c))
                | (BinOp::Add, Operand::Imm(c), Operand::Value(x))
                    if *x == phi.result =>
                {
                    Some(*c)
                }
                (BinOp::Sub, Operand::Value(x), Operand::Imm(c)) if *x == phi.result => c.checked_neg(),
                _ => None,
            },
            _ => None,
        })?;
        if step == 0 {
            return Some(Affine::Const(init));
        }
        Some(Affine::Ind {
            phi: phi.result,
            start: init,
            step,
        })
    }

    fn affine_fixpoint(&mut self, f: &Function, rpo: &[BlockId]) {
        let mut latch = BTreeMap::new();
        for _round in 0..64 {
            let mut changed = false;
            for &bid in rpo {
                let b = f.block(bid);
                for phi in &b.phis {
                    if phi.kind != Kind::I64 {
                        continue;
                    }
                    let v = match self.induction(f, bid, phi) {
                        Some(a) => {
                            if let Some((_, pb)) =
                                phi.incoming.iter().find(|(_, pb)| self.dom.dominates(bid, *pb))
                            {
                                latch.insert(phi.result, *pb);
                            }
                            a
                        }
                        None => phi
                            .incoming
                            .iter()
                            .fold(Affine::Bottom, |acc, (v, _)| acc.join(self.int(v))),
                    };
                    changed |= self.set_affine(phi.result, v);
                }
                for inst in &b.insts {
                    let (r, v) = match inst {
                        Inst::Const {
                            result,
                            value: Operand::Imm(c),
                        } => (*result, Affine::Const(*c)),
                        Inst::Bin {
                            result,
                            op,
                            lhs,
                            rhs,
                        } => (*result, self.bin(*op, self.int(lhs), self.int(rhs))),
                        other => match other.result() {
                            Some(r) if f.value(r).kind == Kind::I64 => (r, Affine::Unknown),
                            _ => continue,
                        },
                    };
                    changed |= self.set_affine(r, v);
                }
            }
            if !changed {
                self.latch = latch;
                return;
            }
        }
        // Not expected for finite lattices; give up precisely.
        for a in &mut self.affine {
            *a = Affine::Unknown;
        }
        self.latch.clear();
    }

    fn set_affine(&mut self, v: ValueId, a: Affine) -> bool {
        let old = self.affine[v.index()];
        if old != a {
            self.affine[v.index()] = a;
            true
        } else {
            false
        }
    }

    fn bin(&self, op: BinOp, a: Affine, b: Affine) -> Affine {
        use Affine::*;
        if a == Bottom || b == Bottom {
            return Bottom;
        }
        match (op, a, b) {
            (_, Const(x), Const(y)) => fold(op, x, y).map_or(Unknown, Const),
            (BinOp::Add, x, Const(c)) | (BinOp::Add, Const(c), x) => x.add(c),
            (BinOp::Sub, x, Const(c)) => c.checked_neg().map_or(Unknown, |c| x.add(c)),
            (BinOp::Mul, x, Const(c)) | (BinOp::Mul, Const(c), x) => x.mul(c),
            (BinOp::Shl, x, Const(c)) if (0..62).contains(&c) => x.mul(1 << c),
            _ => Unknown,
        }
    }

    fn pointer_fixpoint(&mut self, f: &Function, rpo: &[BlockId]) {
        loop {
            let mut changed = false;
            for &bid in rpo {
                let b = f.block(bid);
                for phi in &b.phis {
                    if phi.kind != Kind::Ptr {
                        continue;
                    }
                    let mut acc = PtrFacts::new();
                    for (v, _) in &phi.incoming {
                        join_into(&mut acc, &self.pointer(v));
                    }
                    changed |= self.set_ptr(phi.result, acc);
                }
                for inst in &b.insts {
                    let Some(r) = inst.result() else { continue };
                    if f.value(r).kind != Kind::Ptr {
                        continue;
                    }
                    let v = if is_base_def(inst) {
                        PtrFacts::from([(Root::Base(r), Offset::Known(0))])
                    } else {
                        match inst {
                            Inst::Gep {
                                base,
                                index,
                                scale,
                                offset,
                                ..
                            } => self
                                .pointer(base)
                                .into_iter()
                                .map(|(root, o)| (root, gep_offset(o, self.int(index), *scale, *offset)))
                                .collect(),
                            Inst::Const { value, .. } => self.pointer(value),
                            _ => PtrFacts::from([(Root::Wild, Offset::Unknown)]),
                        }
                    };
                    changed |= self.set_ptr(r, v);
                }
            }
            if !changed {
                return;
            }
        }
    }

    fn set_ptr(&mut self, v: ValueId, facts: PtrFacts) -> bool {
        // Facts only grow: join with the previous state keeps the iteration
        // monotone.
        let old = &self.ptr[v.index()];
        let mut merged = old.clone();
        join_into(&mut merged, &facts);
        if &merged != old {
            self.ptr[v.index()] = merged;
            true
        } else {
            false
        }
    }
}

fn join_into(acc: &mut PtrFacts, other: &PtrFacts) {
    for (root, o) in other {
        acc.entry(root.clone())
            .and_modify(|cur| *cur = cur.join(*o))
            .or_insert(*o);
    }
}

fn gep_offset(base: Offset, index: Affine, scale: i64, off: i64) -> Offset {
    match (base, index) {
        (_, Affine::Bottom) => Offset::Unknown,
        (Offset::Known(k), Affine::Const(c)) => c
            .checked_mul(scale)
            .and_then(|x| x.checked_add(k))
            .and_then(|x| x.checked_add(off))
            .map_or(Offset::Unknown, Offset::Known),
        (Offset::Known(k), Affine::Ind { phi, start, step }) => {
            let s = start
                .checked_mul(scale)
                .and_then(|x| x.checked_add(k))
                .and_then(|x| x.checked_add(off));
            match (s, step.checked_mul(scale)) {
                (Some(s), Some(0)) => Offset::Known(s),
                (Some(start), Some(step)) => Offset::Linear { phi, start, step },
                _ => Offset::Unknown,
            }
        }
        (Offset::Linear { .. }, Affine::Const(c)) => c
            .checked_mul(scale)
            .and_then(|x| x.checked_add(off))
            .map_or(Offset::Unknown, |d| base.shift(d)),
        _ => Offset::Unknown,
    }
}

pub fn fold(op: BinOp, x: i64, y: i64) -> Option<i64> {
    Some(match op {
        BinOp::Add => x.wrapping_add(y),
        BinOp::Sub => x.wrapping_sub(y),
        BinOp::Mul => x.wrapping_mul(y),
        BinOp::SDiv => x.checked_div(y)?,
        BinOp::SRem => x.checked_rem(y)?,
        BinOp::And => x & y,
        BinOp::Or => x | y,
        BinOp::Xor => x ^ y,
        BinOp::Shl => x.wrapping_shl(y as u32 & 63),
        BinOp::LShr => ((x as u64) >> (y as u32 & 63)) as i64,
        BinOp::AShr => x >> (y as u32 & 63),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn facts_of(src: &str) -> (Function, Facts) {
        let p = parse_program(src).unwrap();
        let f = p.functions[0].clone();
        let facts = Facts::compute(&f);
        (f, facts)
    }

    fn val(f: &Function, name: &str) -> ValueId {
        ValueId(f.values.iter().position(|v| v.name == name).unwrap() as u32)
    }

    const LOOP: &str = "\
func @main() {
entry:
  %buf = alloca 40
  br loop
loop:
  %i = phi i64 [0, entry], [%i2, loop]
  %p = gep %buf, %i, scale 4, off 0
  store.i32 [%p + 0] = %i
  %i2 = add %i, 1
  %c = cmp slt %i2, 10
  br %c, loop, done
done:
  ret 0
}
";

    #[test]
    fn induction_gives_linear_offset() {
        let (f, facts) = facts_of(LOOP);
        let i = val(&f, "i");
        assert_eq!(
            facts.affine[i.index()],
            Affine::Ind {
                phi: i,
                start: 0,
                step: 1
            }
        );
        let p = val(&f, "p");
        let buf = val(&f, "buf");
        assert_eq!(
            facts.ptr[p.index()][&Root::Base(buf)],
            Offset::Linear {
                phi: i,
                start: 0,
                step: 4
            }
        );
        assert_eq!(facts.latch[&i], BlockId(1));
    }

    #[test]
    fn loaded_index_is_unknown() {
        let (f, facts) = facts_of(
            "func @main() {\nentry:\n  %buf = alloca 40\n  %n = load.i64 [%buf + 0]\n  %p = gep %buf, %n, scale 4, off 0\n  ret 0\n}\n",
        );
        let p = val(&f, "p");
        let buf = val(&f, "buf");
        assert_eq!(facts.ptr[p.index()][&Root::Base(buf)], Offset::Unknown);
    }

    #[test]
    fn pointer_phi_in_loop_widens() {
        let (f, facts) = facts_of(
            "func @main() {\nentry:\n  %buf = alloca 40\n  br loop\nloop:\n  %p = phi ptr [%buf, entry], [%q, loop]\n  %q = gep %p, 1, scale 4, off 0\n  %c = cmp eq %q, %buf\n  br %c, loop, done\ndone:\n  ret 0\n}\n",
        );
        let p = val(&f, "p");
        let buf = val(&f, "buf");
        assert_eq!(facts.ptr[p.index()][&Root::Base(buf)], Offset::Unknown);
    }

    #[test]
    fn affine_closure() {
        let (f, facts) = facts_of(
            "func @main() {\nentry:\n  br loop\nloop:\n  %i = phi i64 [2, entry], [%i2, loop]\n  %a = mul %i, 3\n  %b = sub %a, 1\n  %s = shl %b, 1\n  %i2 = sub %i, 1\n  %c = cmp sgt %i2, 0\n  br %c, loop, done\ndone:\n  ret 0\n}\n",
        );
        let i = val(&f, "i");
        assert_eq!(
            facts.affine[val(&f, "s").index()],
            Affine::Ind {
                phi: i,
                start: 10,
                step: -6
            }
        );
    }
}
