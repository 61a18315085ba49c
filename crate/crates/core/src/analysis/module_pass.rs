use super::use_info::*;
use super::{FunctionTable, PassStats};
use crate::ir::*;
use std::collections::{BTreeSet, VecDeque};

/// Worklist fixpoint over all functions' UseInfo tables.
pub struct ModulePass<'a> {
    p: &'a Program,
    limit: u32,
    callers: Vec<BTreeSet<usize>>,
    pops: Vec<u32>,
    pub stats: PassStats,
}

impl<'a> ModulePass<'a> {
    pub fn new(p: &'a Program, limit: u32) -> Self {
        let mut callers = vec![BTreeSet::new(); p.functions.len()];
        for (fi, f) in p.functions.iter().enumerate() {
            for (_, inst) in f.insts() {
                if let Inst::Call { callee, .. } = inst {
                    if let Some(ci) = p.function_index(callee) {
                        callers[ci].insert(fi);
                    }
                }
            }
        }
        ModulePass {
            p,
            limit,
            callers,
            pops: vec![0; p.functions.len()],
            stats: PassStats::default(),
        }
    }

    /// Runs the worklist seeded with `seed` until no table changes.
    pub fn run(&mut self, tables: &mut [FunctionTable], seed: impl IntoIterator<Item = usize>) {
        let mut work: VecDeque<usize> = seed.into_iter().collect();
        loop {
            while let Some(fi) = work.pop_front() {
                self.stats.iterations += 1;
                let changed = if self.pops[fi] >= self.limit {
                    self.set_all_to_unsafe(tables, fi)
                } else {
                    self.pops[fi] += 1;
                    self.process(tables, fi)
                };
                if changed {
                    let mut push = |g: usize| {
                        if !work.contains(&g) {
                            work.push_front(g);
                        }
                    };
                    push(fi);
                    for &c in &self.callers[fi] {
                        push(c);
                    }
                }
            }
            // Confirm the fixpoint with a sweep that does not count towards
            // the limit; anything that still moves goes back on the list.
            self.stats.sweeps += 1;
            for fi in 0..tables.len() {
                let mut probe = tables.to_vec();
                if self.process(&mut probe, fi) {
                    work.push_back(fi);
                }
            }
            if work.is_empty() {
                break;
            }
        }
        for (fi, t) in tables.iter_mut().enumerate() {
            for u in &mut t.uses {
                u.depth = self.pops[fi];
            }
        }
    }

    fn set_all_to_unsafe(&mut self, tables: &mut [FunctionTable], fi: usize) -> bool {
        let mut changed = false;
        for u in &mut tables[fi].uses {
            if !u.unsafe_ {
                u.set_unsafe();
                self.stats.marked_unsafe_by_limit += 1;
                changed = true;
            }
        }
        if changed {
            self.stats.limit_hits += 1;
        }
        changed
    }

    fn lookup(&self, tables: &[FunctionTable], key: UseKey) -> Option<UseInfo> {
        let t = tables.get(key.func as usize)?;
        t.index.get(&key.value).map(|&i| t.uses[i].clone())
    }

    fn process(&self, tables: &mut [FunctionTable], fi: usize) -> bool {
        let mut changed = false;
        for ui in 0..tables[fi].uses.len() {
            let orig = tables[fi].uses[ui].clone();
            if orig.unsafe_ {
                continue;
            }
            let mut u = orig.clone();
            for c in &orig.calls {
                let callee = self.p.function_index(&c.callee);
                let src = callee.and_then(|ci| {
                    let pv = *self.p.functions[ci].params.get(c.param)?;
                    self.lookup(tables, UseKey {
                        func: ci as u32,
                        value: pv,
                    })
                });
                match src {
                    Some(src) => u.merge(&src, c.offset),
                    None => u.set_unsafe(),
                }
            }
            for s in &orig.stored_in {
                let Some(site) = self.lookup(tables, s.site) else {
                    u.set_unsafe();
                    continue;
                };
                if site.kind != BaseKind::Alloca || !site.slots_are_pointer_safe() {
                    u.set_unsafe();
                    continue;
                }
                for d in &site.derefed_by {
                    if d.slot == s.slot {
                        match self.lookup(tables, d.load) {
                            Some(l) => u.merge(&l, s.ptr_offset),
                            None => u.set_unsafe(),
                        }
                    } else if (i128::from(d.slot) - i128::from(s.slot)).abs() < 8 {
                        u.set_unsafe();
                    }
                }
            }
            if u != orig {
                tables[fi].uses[ui] = u;
                changed = true;
            }
        }
        changed
    }
}
