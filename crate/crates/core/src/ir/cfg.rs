use super::{BlockId, Function};

/// Predecessor/successor lists of a function's blocks.
#[derive(Clone, Debug)]
pub struct Cfg {
    pub succs: Vec<Vec<BlockId>>,
    pub preds: Vec<Vec<BlockId>>,
}

impl Cfg {
    pub fn new(f: &Function) -> Self {
        let n = f.blocks.len();
        let mut succs = vec![Vec::new(); n];
        let mut preds = vec![Vec::new(); n];
        for (i, b) in f.blocks.iter().enumerate() {
            if let Some(t) = &b.term {
                for s in t.successors() {
                    if s.index() < n {
                        succs[i].push(s);
                        preds[s.index()].push(BlockId(i as u32));
                    }
                }
            }
        }
        Cfg { succs, preds }
    }

    /// Blocks reachable from the entry in reverse postorder.
    pub fn reverse_postorder(&self) -> Vec<BlockId> {
        let n = self.succs.len();
        if n == 0 {
            return Vec::new();
        }
        let mut seen = vec![false; n];
        let mut post = Vec::with_capacity(n);
        // Iterative DFS: (block, next successor index).
        let mut stack = vec![(0usize, 0usize)];
        seen[0] = true;
        while let Some(top) = stack.last_mut() {
            let b = top.0;
            if let Some(&s) = self.succs[b].get(top.1) {
                top.1 += 1;
                if !seen[s.index()] {
                    seen[s.index()] = true;
                    stack.push((s.index(), 0));
                }
            } else {
                post.push(BlockId(b as u32));
                stack.pop();
            }
        }
        post.reverse();
        post
    }
}

/// Immediate dominators, computed with the Cooper-Harvey-Kennedy iteration.
#[derive(Clone, Debug)]
pub struct DomTree {
    idom: Vec<Option<BlockId>>,
    rpo_index: Vec<usize>,
}

impl DomTree {
    pub fn new(cfg: &Cfg) -> Self {
        let n = cfg.succs.len();
        let rpo = cfg.reverse_postorder();
        let mut rpo_index = vec![usize::MAX; n];
        for (i, b) in rpo.iter().enumerate() {
            rpo_index[b.index()] = i;
        }
        let mut idom: Vec<Option<BlockId>> = vec![None; n];
        if n == 0 {
            return DomTree { idom, rpo_index };
        }
        idom[0] = Some(BlockId(0));
        let mut changed = true;
        while changed {
            changed = false;
            for &b in rpo.iter().skip(1) {
                let mut new_idom: Option<BlockId> = None;
                for &p in &cfg.preds[b.index()] {
                    if idom[p.index()].is_none() {
                        continue;
                    }
                    new_idom = Some(match new_idom {
                        None => p,
                        Some(cur) => intersect(&idom, &rpo_index, p, cur),
                    });
                }
                if new_idom.is_some() && idom[b.index()] != new_idom {
                    idom[b.index()] = new_idom;
                    changed = true;
                }
            }
        }
        DomTree { idom, rpo_index }
    }

    pub fn is_reachable(&self, b: BlockId) -> bool {
        self.idom[b.index()].is_some()
    }

    pub fn idom(&self, b: BlockId) -> Option<BlockId> {
        if b.index() == 0 {
            None
        } else {
            self.idom[b.index()]
        }
    }

    /// Whether `a` dominates `b` (reflexive). Unreachable blocks dominate
    /// nothing and are dominated by nothing.
    pub fn dominates(&self, a: BlockId, b: BlockId) -> bool {
        if !self.is_reachable(a) || !self.is_reachable(b) {
            return false;
        }
        let mut cur = b;
        loop {
            if cur == a {
                return true;
            }
            match self.idom(cur) {
                Some(p) => cur = p,
                None => return false,
            }
        }
    }

    pub fn rpo_position(&self, b: BlockId) -> Option<usize> {
        let i = self.rpo_index[b.index()];
        (i != usize::MAX).then_some(i)
    }
}

fn intersect(idom: &[Option<BlockId>], rpo_index: &[usize], a: BlockId, b: BlockId) -> BlockId {
    let (mut x, mut y) = (a, b);
    while x != y {
        while rpo_index[x.index()] > rpo_index[y.index()] {
            x = idom[x.index()].expect("processed block has idom");
        }
        while rpo_index[y.index()] > rpo_index[x.index()] {
            y = idom[y.index()].expect("processed block has idom");
        }
    }
    x
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ir::parse_program;

    #[test]
    fn diamond_dominators() {
        let p = parse_program(
            "func @main(%c: i64) {\n\
             entry:\n  br %c, l, r\n\
             l:\n  br join\n\
             r:\n  br join\n\
             join:\n  ret\n}\n",
        )
        .unwrap();
        let f = &p.functions[0];
        let cfg = Cfg::new(f);
        let dom = DomTree::new(&cfg);
        let (entry, l, r, join) = (BlockId(0), BlockId(1), BlockId(2), BlockId(3));
        assert!(dom.dominates(entry, join));
        assert!(!dom.dominates(l, join));
        assert!(!dom.dominates(r, join));
        assert_eq!(dom.idom(join), Some(entry));
        assert!(dom.dominates(l, l));
    }
}
