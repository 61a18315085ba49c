use crate::ir::ValueId;
use serde::Serialize;
use std::collections::BTreeSet;

/// Half-open byte range relative to a base pointer.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum ByteRange {
    Empty,
    Span { lo: i64, hi: i64 },
    Full,
}

impl ByteRange {
    pub fn span(lo: i64, hi: i64) -> ByteRange {
        if lo >= hi {
            ByteRange::Empty
        } else {
            ByteRange::Span { lo, hi }
        }
    }

    /// Range of an access of `width` bytes at offset `k`.
    pub fn access(k: i64, width: u64) -> ByteRange {
        match k.checked_add(width as i64) {
            Some(hi) => ByteRange::span(k, hi),
            None => ByteRange::Full,
        }
    }

    pub fn union(self, other: ByteRange) -> ByteRange {
        match (self, other) {
            (ByteRange::Empty, x) | (x, ByteRange::Empty) => x,
            (ByteRange::Full, _) | (_, ByteRange::Full) => ByteRange::Full,
            (ByteRange::Span { lo: a, hi: b }, ByteRange::Span { lo: c, hi: d }) => {
                ByteRange::Span {
                    lo: a.min(c),
                    hi: b.max(d),
                }
            }
        }
    }

    pub fn shift(self, off: i64) -> ByteRange {
        match self {
            ByteRange::Span { lo, hi } => match (lo.checked_add(off), hi.checked_add(off)) {
                (Some(lo), Some(hi)) => ByteRange::Span { lo, hi },
                _ => ByteRange::Full,
            },
            x => x,
        }
    }

    pub fn within(self, lo: i64, hi: i64) -> bool {
        match self {
            ByteRange::Empty => true,
            ByteRange::Span { lo: a, hi: b } => a >= lo && b <= hi,
            ByteRange::Full => false,
        }
    }

    pub fn overlaps(self, lo: i64, hi: i64) -> bool {
        match self {
            ByteRange::Empty => false,
            ByteRange::Span { lo: a, hi: b } => a < hi && lo < b,
            ByteRange::Full => true,
        }
    }

    pub fn is_full(self) -> bool {
        self == ByteRange::Full
    }
}

/// Facts about accesses at addresses advancing by a constant step each loop
/// iteration.
#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize)]
pub struct LinearAccessInfo {
    pub linear_range: ByteRange,
    pub start_range: ByteRange,
    /// Largest absolute step in bytes; `None` when unknown.
    pub max_step: Option<u64>,
    pub up: bool,
    pub down: bool,
}

impl LinearAccessInfo {
    pub fn new(start_range: ByteRange, step: i64) -> Self {
        LinearAccessInfo {
            linear_range: start_range,
            start_range,
            max_step: Some(step.unsigned_abs()),
            up: step > 0,
            down: step < 0,
        }
    }

    pub fn merge(&mut self, other: &LinearAccessInfo, off: i64) {
        self.linear_range = self.linear_range.union(other.linear_range.shift(off));
        self.start_range = self.start_range.union(other.start_range.shift(off));
        self.max_step = match (self.max_step, other.max_step) {
            (Some(a), Some(b)) => Some(a.max(b)),
            _ => None,
        };
        self.up |= other.up;
        self.down |= other.down;
    }
}

/// Global reference to an analyzed base: function index and defining value.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize)]
pub struct UseKey {
    pub func: u32,
    pub value: ValueId,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum BaseKind {
    Alloca,
    Argument,
    LoadSite,
}

#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize)]
pub struct CallEntry {
    pub callee: String,
    pub param: usize,
    pub offset: i64,
}

/// A pointer based on this base, at `ptr_offset` from it, was stored into
/// `site` at byte `slot` of that allocation.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize)]
pub struct StoreEntry {
    pub site: UseKey,
    pub slot: i64,
    pub ptr_offset: i64,
}

/// A pointer was loaded from byte `slot` of this base, producing load-site
/// base `load`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize)]
pub struct DerefEntry {
    pub load: UseKey,
    pub slot: i64,
}

/// Accumulated facts about every use of one base pointer.
#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct UseInfo {
    pub key: UseKey,
    pub kind: BaseKind,
    pub name: String,
    /// Arbitrary (non-linear) accesses.
    pub range: ByteRange,
    /// Arbitrary accesses at integer kind.
    pub data_range: ByteRange,
    /// Offsets of 8-byte pointer-kind accesses.
    pub ptr_slots: BTreeSet<i64>,
    pub linear: Option<LinearAccessInfo>,
    pub calls: BTreeSet<CallEntry>,
    pub stored_in: BTreeSet<StoreEntry>,
    pub derefed_by: BTreeSet<DerefEntry>,
    pub unsafe_: bool,
    pub pointer_unsafe: bool,
    pub depth: u32,
    /// Every use is a load or store directly through the base.
    #[serde(skip)]
    pub direct_only: bool,
}

impl UseInfo {
    pub fn new(key: UseKey, kind: BaseKind, name: impl Into<String>) -> Self {
        UseInfo {
            key,
            kind,
            name: name.into(),
            range: ByteRange::Empty,
            data_range: ByteRange::Empty,
            ptr_slots: BTreeSet::new(),
            linear: None,
            calls: BTreeSet::new(),
            stored_in: BTreeSet::new(),
            derefed_by: BTreeSet::new(),
            unsafe_: false,
            pointer_unsafe: false,
            depth: 0,
            direct_only: true,
        }
    }

    pub fn set_unsafe(&mut self) {
        self.unsafe_ = true;
        self.pointer_unsafe = true;
        self.range = ByteRange::Full;
    }

    pub fn add_linear(&mut self, info: LinearAccessInfo) {
        match &mut self.linear {
            Some(l) => l.merge(&info, 0),
            None => self.linear = Some(info),
        }
    }

    /// Folds `src`, describing the pointer `base + offset`, into `self`.
    pub fn merge(&mut self, src: &UseInfo, offset: i64) {
        self.range = self.range.union(src.range.shift(offset));
        self.data_range = self.data_range.union(src.data_range.shift(offset));
        for &s in &src.ptr_slots {
            match s.checked_add(offset) {
                Some(s) => {
                    self.ptr_slots.insert(s);
                }
                None => self.set_unsafe(),
            }
        }
        if let Some(l) = &src.linear {
            match &mut self.linear {
                Some(mine) => mine.merge(l, offset),
                None => {
                    let mut l2 = LinearAccessInfo {
                        linear_range: ByteRange::Empty,
                        start_range: ByteRange::Empty,
                        max_step: Some(0),
                        up: false,
                        down: false,
                    };
                    l2.merge(l, offset);
                    self.linear = Some(l2);
                }
            }
        }
        // Call and store entries stay with the function that owns them: the
        // callee's own fixpoint already folds their effect into `src`.
        for d in &src.derefed_by {
            match d.slot.checked_add(offset) {
                Some(slot) => {
                    self.derefed_by.insert(DerefEntry { load: d.load, slot });
                }
                None => self.set_unsafe(),
            }
        }
        if src.unsafe_ {
            self.unsafe_ = true;
        }
        if src.pointer_unsafe {
            self.pointer_unsafe = true;
        }
        if self.unsafe_ {
            self.range = ByteRange::Full;
        }
    }

    /// Pointer-safety of the memory this base describes: no pointer slot can
    /// be overwritten by anything but a whole, typed pointer store.
    pub fn slots_are_pointer_safe(&self) -> bool {
        if self.pointer_unsafe || self.unsafe_ {
            return false;
        }
        if self.ptr_slots.is_empty() {
            return true;
        }
        if self.linear.is_some() {
            return false;
        }
        let slots: Vec<i64> = self.ptr_slots.iter().copied().collect();
        if slots.windows(2).any(|w| w[1] - w[0] < 8) {
            return false;
        }
        !slots
            .iter()
            .any(|&s| self.data_range.overlaps(s, s.saturating_add(8)))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn key() -> UseKey {
        UseKey {
            func: 0,
            value: ValueId(0),
        }
    }

    #[test]
    fn merge_offsets_range() {
        let mut dst = UseInfo::new(key(), BaseKind::Alloca, "a");
        dst.range = ByteRange::span(0, 8);
        let mut src = UseInfo::new(key(), BaseKind::Argument, "p");
        src.range = ByteRange::span(0, 4);
        dst.merge(&src, 10);
        assert_eq!(dst.range, ByteRange::span(0, 14));
    }

    #[test]
    fn merge_unsafe_is_sticky() {
        let mut dst = UseInfo::new(key(), BaseKind::Alloca, "a");
        let mut src = UseInfo::new(key(), BaseKind::Argument, "p");
        src.set_unsafe();
        dst.merge(&src, 0);
        assert!(dst.unsafe_);
    }

    #[test]
    fn merge_is_idempotent() {
        let mut u = UseInfo::new(key(), BaseKind::Alloca, "a");
        u.range = ByteRange::span(2, 9);
        u.ptr_slots.insert(16);
        u.calls.insert(CallEntry {
            callee: "f".into(),
            param: 0,
            offset: 4,
        });
        let before = u.clone();
        let copy = u.clone();
        u.merge(&copy, 0);
        assert_eq!(u, before);
    }

    fn arb_range() -> impl Strategy<Value = ByteRange> {
        prop_oneof![
            Just(ByteRange::Empty),
            Just(ByteRange::Full),
            (-64i64..64, 0i64..64).prop_map(|(lo, len)| ByteRange::span(lo, lo + len)),
        ]
    }

    fn arb_use() -> impl Strategy<Value = UseInfo> {
        (
            arb_range(),
            arb_range(),
            proptest::collection::btree_set(-32i64..32, 0..3),
            any::<bool>(),
            proptest::collection::btree_set((0usize..2, -16i64..16), 0..3),
        )
            .prop_map(|(range, data, slots, unsafe_, calls)| {
                let mut u = UseInfo::new(key(), BaseKind::Alloca, "a");
                u.range = range;
                u.data_range = data;
                u.ptr_slots = slots;
                if unsafe_ {
                    u.set_unsafe();
                }
                u.calls = calls
                    .into_iter()
                    .map(|(param, offset)| CallEntry {
                        callee: "f".into(),
                        param,
                        offset,
                    })
                    .collect();
                u
            })
    }

    fn covers(big: ByteRange, small: ByteRange) -> bool {
        match (big, small) {
            (_, ByteRange::Empty) | (ByteRange::Full, _) => true,
            (ByteRange::Empty, _) | (ByteRange::Span { .. }, ByteRange::Full) => false,
            (ByteRange::Span { lo, hi }, s) => s.within(lo, hi),
        }
    }

    proptest! {
        #[test]
        fn merge_is_monotone(dst in arb_use(), src in arb_use(), off in -32i64..32) {
            let mut m = dst.clone();
            m.merge(&src, off);
            prop_assert!(covers(m.range, dst.range));
            prop_assert!(covers(m.range, src.range.shift(off)));
            prop_assert!(covers(m.data_range, dst.data_range));
            prop_assert!(m.ptr_slots.is_superset(&dst.ptr_slots));
            prop_assert!(m.calls.is_superset(&dst.calls));
            prop_assert!(m.unsafe_ >= dst.unsafe_ && m.unsafe_ >= src.unsafe_);
            prop_assert!(m.pointer_unsafe >= dst.pointer_unsafe);
            // Merging the same thing again changes nothing.
            let mut again = m.clone();
            again.merge(&src, off);
            prop_assert_eq!(again, m);
        }
    }
}
