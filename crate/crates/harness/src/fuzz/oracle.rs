//! Shadow bounds oracle.
//!
//! Watches allocation lifetimes and every access made through a pointer
//! with known provenance, and records accesses that fall outside the
//! allocation the pointer is based on or happen after it died. It sees only
//! interpreter events: never tags, never the tag plan, never the analysis.

use serde::Serialize;
use tagguard_core::interp::{Access, AllocId, Allocation, Observer, Owner};
use tagguard_core::ir::{InstLoc, ValueId};
use tagguard_core::mte::ADDR_MASK;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum ViolationKind {
    OutOfBounds,
    AfterLifetime,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct Violation {
    pub kind: ViolationKind,
    /// Defining function index and alloca of the victim; `None` for globals.
    pub alloca: Option<(u32, ValueId)>,
    pub owner: String,
    pub func: u32,
    pub loc: InstLoc,
    pub offset: i64,
    pub width: u64,
    pub store: bool,
    /// False when the tagged machine refused the access.
    pub allowed: bool,
}

#[derive(Default)]
pub struct BoundsOracle {
    allocs: Vec<Option<(Allocation, bool)>>,
    pub violations: Vec<Violation>,
}

impl BoundsOracle {
    pub fn new() -> Self {
        Self::default()
    }

    fn slot(&mut self, id: AllocId) -> &mut Option<(Allocation, bool)> {
        let i = id as usize;
        if self.allocs.len() <= i {
            self.allocs.resize(i + 1, None);
        }
        &mut self.allocs[i]
    }
}

impl Observer for BoundsOracle {
    fn alloc(&mut self, id: AllocId, a: &Allocation) {
        *self.slot(id) = Some((a.clone(), true));
    }

    fn free(&mut self, id: AllocId, _a: &Allocation) {
        if let Some((_, live)) = self.slot(id) {
            *live = false;
        }
    }

    fn access(&mut self, acc: &Access) {
        let Some(id) = acc.prov else { return };
        let Some((a, live)) = self.slot(id).clone() else {
            return;
        };
        let addr = acc.ptr & ADDR_MASK;
        let kind = if !live {
            ViolationKind::AfterLifetime
        } else if !a.contains(addr, acc.width) {
            ViolationKind::OutOfBounds
        } else {
            return;
        };
        let (alloca, owner) = match &a.owner {
            Owner::Stack { function, func, value, name } => (Some((*func, *value)), format!("{function}/{name}")),
            Owner::Global { name } => (None, format!("@{name}")),
        };
        self.violations.push(Violation {
            kind,
            alloca,
            owner,
            func: acc.func,
            loc: acc.loc,
            offset: addr.wrapping_sub(a.addr) as i64,
            width: acc.width,
            store: acc.store,
            allowed: acc.allowed,
        });
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use tagguard_core::interp::{run_with, RunConfig};
    use tagguard_core::ir::parse_program;

    fn violations(src: &str, args: &[i64]) -> Vec<Violation> {
        let p = parse_program(src).unwrap();
        let mut o = BoundsOracle::new();
        run_with(&p, args, RunConfig::tag_blind(), &mut o).unwrap();
        o.violations
    }

    #[test]
    fn in_bounds_run_is_clean() {
        let v = violations(
            "func @main() {\nentry:\n  %a = alloca 8\n  store.i64 [%a + 0] = 1\n  %v = load.i32 [%a + 4]\n  ret %v\n}\n",
            &[],
        );
        assert!(v.is_empty());
    }

    #[test]
    fn off_by_one_and_straddle() {
        let v = violations(
            "func @main(%i: i64) {\nentry:\n  %pad = alloca 32\n  %a = alloca 8\n  %p = gep %a, %i, scale 1, off 0\n  store.i8 [%p + 0] = 1\n  store.i64 [%a + 1] = 2\n  ret 0\n}\n",
            &[8],
        );
        assert_eq!(v.len(), 2, "{v:?}");
        assert!(v.iter().all(|v| v.kind == ViolationKind::OutOfBounds && v.owner == "main/a"));
        assert_eq!((v[0].offset, v[1].offset), (8, 1));
    }

    #[test]
    fn use_after_return_through_memory() {
        let v = violations(
            "global @g : 8\n\nfunc @f() {\nentry:\n  %x = alloca 8\n  store.ptr [@g + 0] = %x\n  ret 0\n}\n\nfunc @main() {\nentry:\n  %r = call @f()\n  %p = load.ptr [@g + 0]\n  %v = load.i64 [%p + 0]\n  ret %v\n}\n",
            &[],
        );
        assert_eq!(v.len(), 1);
        assert_eq!(v[0].kind, ViolationKind::AfterLifetime);
        assert_eq!(v[0].owner, "f/x");
    }

    #[test]
    fn integer_round_trip_loses_provenance() {
        let v = violations(
            "func @main() {\nentry:\n  %a = alloca 8\n  %i = ptrtoint %a\n  %p = inttoptr %i\n  store.i64 [%p + 8] = 1\n  ret 0\n}\n",
            &[],
        );
        assert!(v.is_empty());
    }
}
