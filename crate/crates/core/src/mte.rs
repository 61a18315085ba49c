//! Tagged-memory machine model: 4-bit tags on 16-byte granules, address tags
//! in pointer bits [59:56], and the synchronous access check.

use serde::Serialize;
use std::collections::HashMap;

pub const GRANULE: u64 = 16;

/// Tag of safe allocations and of all untouched mapped memory.
pub const SAFE_DEFAULT: u8 = 0b1100;
/// Tag of safe allocations that are not pointer-safe.
pub const PTR_UNSAFE: u8 = 0b1000;
/// Tags cycled through for adjacent unsafe allocations.
pub const UNSAFE_TAGS: [u8; 3] = [0b0001, 0b0010, 0b0011];
pub const GUARD_TAG: u8 = 0b0101;
/// Tag of dynamically sized and non-entry allocations.
pub const DYNAMIC_TAG: u8 = 0b0110;
/// Tag of global objects in instrumented programs.
pub const GLOBAL_TAG: u8 = 0b0111;
/// Address tag that bypasses checking when the wildcard is enabled.
pub const WILDCARD: u8 = 0b0000;

const TAG_SHIFT: u32 = 56;
pub const ADDR_MASK: u64 = (1 << TAG_SHIFT) - 1;

pub fn round_up_granule(n: u64) -> u64 {
    n.div_ceil(GRANULE) * GRANULE
}

/// Whether a granule tag marks memory whose stored pointers may be trusted.
pub fn is_pointer_safe_tag(tag: u8) -> bool {
    tag & 0b1100 == 0b1100
}

/// A raw 64-bit pointer. Bits [63:60] are ignored by translation.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize)]
pub struct PointerValue(pub u64);

impl PointerValue {
    pub const NULL: PointerValue = PointerValue(0);

    pub fn address(self) -> u64 {
        self.0 & ADDR_MASK
    }

    pub fn address_tag(self) -> u8 {
        ((self.0 >> TAG_SHIFT) & 0xf) as u8
    }

    pub fn with_tag(self, tag: u8) -> PointerValue {
        PointerValue((self.0 & !(0xf << TAG_SHIFT)) | (u64::from(tag & 0xf) << TAG_SHIFT))
    }

    pub fn clear_top_tag_bit(self) -> PointerValue {
        PointerValue(self.0 & !(1 << 59))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub enum CheckMode {
    Sync,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub struct MteConfig {
    pub wildcard_enabled: bool,
    pub check_mode: CheckMode,
}

impl Default for MteConfig {
    fn default() -> Self {
        MteConfig {
            wildcard_enabled: false,
            check_mode: CheckMode::Sync,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub enum TrapKind {
    TagMismatch,
    Unmapped,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub struct Trap {
    pub kind: TrapKind,
    /// Address (bits [55:0]) of the first offending granule's byte.
    pub address: u64,
    pub address_tag: u8,
    /// Tag of the offending granule; `None` if unmapped.
    pub allocation_tag: Option<u8>,
}

impl std::fmt::Display for Trap {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self.kind {
            TrapKind::Unmapped => write!(f, "unmapped access at {:#x}", self.address),
            TrapKind::TagMismatch => write!(
                f,
                "tag mismatch at {:#x}: address tag {:#06b}, allocation tag {:#06b}",
                self.address,
                self.address_tag,
                self.allocation_tag.unwrap_or(0)
            ),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub enum Verdict {
    Allowed,
    Trap(Trap),
}

/// A structured record of one access check.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub struct CheckEvent {
    pub op: &'static str,
    pub address: u64,
    pub width: u64,
    pub addr_tag: u8,
    pub alloc_tag: Option<u8>,
    pub allowed: bool,
}

/// Per-granule allocation tags over a set of mapped regions.
#[derive(Clone, Debug, Default)]
pub struct TagMemory {
    /// Mapped `[start, end)` granule index ranges.
    regions: Vec<(u64, u64)>,
    tags: HashMap<u64, u8>,
}

impl TagMemory {
    pub fn new() -> Self {
        Self::default()
    }

    /// Maps `[addr, addr + size)` rounded out to granules, tagged with the
    /// default tag.
    pub fn map(&mut self, addr: u64, size: u64) {
        let start = addr / GRANULE;
        let end = (addr + size).div_ceil(GRANULE);
        self.regions.push((start, end));
    }

    pub fn is_mapped_granule(&self, g: u64) -> bool {
        self.regions.iter().any(|&(s, e)| g >= s && g < e)
    }

    pub fn is_mapped(&self, addr: u64, len: u64) -> bool {
        if len == 0 {
            return self.is_mapped_granule(addr / GRANULE);
        }
        let first = addr / GRANULE;
        let last = (addr + len - 1) / GRANULE;
        (first..=last).all(|g| self.is_mapped_granule(g))
    }

    /// Allocation tag of the granule containing `addr`, or `None` if unmapped.
    pub fn tag_at(&self, addr: u64) -> Option<u8> {
        let g = (addr & ADDR_MASK) / GRANULE;
        if !self.is_mapped_granule(g) {
            return None;
        }
        Some(self.tags.get(&g).copied().unwrap_or(SAFE_DEFAULT))
    }

    /// Tags every granule overlapping `[addr, addr + roundup16(size))`.
    pub fn set_allocation_tags(&mut self, addr: u64, size: u64, tag: u8) -> Result<(), Trap> {
        let addr = addr & ADDR_MASK;
        if !addr.is_multiple_of(GRANULE) {
            return Err(Trap {
                kind: TrapKind::Unmapped,
                address: addr,
                address_tag: tag,
                allocation_tag: None,
            });
        }
        let first = addr / GRANULE;
        let n = round_up_granule(size) / GRANULE;
        if let Some(g) = (first..first + n).find(|&g| !self.is_mapped_granule(g)) {
            return Err(Trap {
                kind: TrapKind::Unmapped,
                address: g * GRANULE,
                address_tag: tag,
                allocation_tag: None,
            });
        }
        for g in first..first + n {
            if tag == SAFE_DEFAULT {
                self.tags.remove(&g);
            } else {
                self.tags.insert(g, tag);
            }
        }
        Ok(())
    }

    /// The access check. `via_frame_base` models unchecked stack-pointer
    /// relative accesses.
    pub fn check_access(
        &self,
        p: PointerValue,
        width: u64,
        cfg: &MteConfig,
        via_frame_base: bool,
    ) -> Verdict {
        let addr = p.address();
        let width = width.max(1);
        let first = addr / GRANULE;
        let last = (addr + width - 1) / GRANULE;
        for g in first..=last {
            if !self.is_mapped_granule(g) {
                return Verdict::Trap(Trap {
                    kind: TrapKind::Unmapped,
                    address: (g * GRANULE).max(addr),
                    address_tag: p.address_tag(),
                    allocation_tag: None,
                });
            }
        }
        if via_frame_base || (cfg.wildcard_enabled && p.address_tag() == WILDCARD) {
            return Verdict::Allowed;
        }
        for g in first..=last {
            let t = self.tags.get(&g).copied().unwrap_or(SAFE_DEFAULT);
            if t != p.address_tag() {
                return Verdict::Trap(Trap {
                    kind: TrapKind::TagMismatch,
                    address: (g * GRANULE).max(addr),
                    address_tag: p.address_tag(),
                    allocation_tag: Some(t),
                });
            }
        }
        Verdict::Allowed
    }

    /// Granules carrying a non-default tag inside `[addr, addr + len)`.
    pub fn non_default_in(&self, addr: u64, len: u64) -> Vec<(u64, u8)> {
        let first = addr / GRANULE;
        let last = (addr + len).div_ceil(GRANULE);
        let mut v: Vec<(u64, u8)> = self
            .tags
            .iter()
            .filter(|(g, _)| **g >= first && **g < last)
            .map(|(g, t)| (g * GRANULE, *t))
            .collect();
        v.sort_unstable();
        v
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const BASE: u64 = 0x1000;

    fn mem() -> TagMemory {
        let mut m = TagMemory::new();
        m.map(BASE, 0x100);
        m
    }

    #[test]
    fn with_tag_examples() {
        let p = PointerValue(0x1000).with_tag(0b1100);
        assert_eq!(p.address_tag(), 0b1100);
        assert_eq!(p.address(), 0x1000);
        assert_eq!(p.with_tag(3).with_tag(9), p.with_tag(9));
        assert_eq!(PointerValue::NULL.with_tag(0), PointerValue::NULL);
    }

    #[test]
    fn top_byte_ignored() {
        let p = PointerValue(0xf000_0000_0000_1000).with_tag(0b1100);
        assert_eq!(p.address(), 0x1000);
        assert_eq!(p.0 >> 60, 0xf);
    }

    #[test]
    fn clear_top_tag_bit_examples() {
        assert_eq!(PointerValue(0).with_tag(0b1100).clear_top_tag_bit().address_tag(), 0b0100);
        let p = PointerValue(0x20).with_tag(0b0011);
        assert_eq!(p.clear_top_tag_bit(), p);
        assert_eq!(PointerValue::NULL.clear_top_tag_bit(), PointerValue::NULL);
    }

    #[test]
    fn granule_rounding() {
        let mut m = mem();
        m.set_allocation_tags(BASE, 1, 3).unwrap();
        assert_eq!(m.non_default_in(BASE, 0x100), vec![(BASE, 3)]);
        m.set_allocation_tags(BASE + 0x20, 32, 5).unwrap();
        assert_eq!(m.non_default_in(BASE + 0x20, 0x40).len(), 2);
    }

    #[test]
    fn tagging_unmapped_faults() {
        let mut m = mem();
        let err = m.set_allocation_tags(BASE + 0xf0, 32, 3).unwrap_err();
        assert_eq!(err.kind, TrapKind::Unmapped);
        assert_eq!(err.address, BASE + 0x100);
    }

    #[test]
    fn unmapped_access_traps() {
        let m = mem();
        let v = m.check_access(PointerValue(BASE + 0x100).with_tag(SAFE_DEFAULT), 1, &MteConfig::default(), true);
        assert!(matches!(v, Verdict::Trap(Trap { kind: TrapKind::Unmapped, .. })));
    }

    #[test]
    fn every_tag_pair() {
        let cfg = MteConfig::default();
        for alloc in 0..16u8 {
            let mut m = mem();
            m.set_allocation_tags(BASE, 16, alloc).unwrap();
            for addr_tag in 0..16u8 {
                let v = m.check_access(PointerValue(BASE).with_tag(addr_tag), 8, &cfg, false);
                if addr_tag == alloc {
                    assert_eq!(v, Verdict::Allowed);
                } else {
                    assert_eq!(
                        v,
                        Verdict::Trap(Trap {
                            kind: TrapKind::TagMismatch,
                            address: BASE,
                            address_tag: addr_tag,
                            allocation_tag: Some(alloc),
                        })
                    );
                }
            }
        }
    }
}
