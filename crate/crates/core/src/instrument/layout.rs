use super::InstrumentConfig;
use crate::analysis::{AllocaReport, AnalysisResult, Class, SafetyClass};
use crate::ir::*;
use crate::mte::{self, GRANULE, GUARD_TAG, PTR_UNSAFE, SAFE_DEFAULT, UNSAFE_TAGS};
use serde::Serialize;

/// Where a slot of a given size and attribute goes when the stack cursor is
/// at `cursor`. Returns the slot's lowest address and the object address.
/// The interpreter uses the same rule, so computed layouts match run time.
pub fn place_slot(cursor: u64, size: u64, attr: SlotAttr) -> (u64, u64) {
    match attr {
        SlotAttr::Plain | SlotAttr::Implicit => {
            let base = cursor.wrapping_sub(size.max(1)) & !7;
            (base, base)
        }
        SlotAttr::Tagged { high_end } => {
            let padded = mte::round_up_granule(size.max(1));
            let base = cursor.wrapping_sub(padded) & !(GRANULE - 1);
            let obj = if high_end { base + padded - size } else { base };
            (base, obj)
        }
    }
}

/// Bytes a slot occupies once padded for its attribute.
pub fn padded_size(size: u64, attr: SlotAttr) -> u64 {
    match attr {
        SlotAttr::Tagged { .. } => mte::round_up_granule(size.max(1)),
        _ => size,
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum SlotRef {
    Alloca { name: String, value: ValueId },
    Guard { name: String },
}

impl SlotRef {
    pub fn name(&self) -> &str {
        match self {
            SlotRef::Alloca { name, .. } | SlotRef::Guard { name } => name,
        }
    }

    pub fn is_guard(&self) -> bool {
        matches!(self, SlotRef::Guard { .. })
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct FrameSlot {
    pub slot: SlotRef,
    /// Distance from the frame base down to the slot's lowest byte; `None`
    /// for slots allocated at run time (dynamic or outside the entry block).
    pub offset: Option<u64>,
    pub size: Option<u64>,
    pub padded_size: Option<u64>,
    pub tag: u8,
    pub attr: SlotAttr,
    pub class: Option<SafetyClass>,
}

impl FrameSlot {
    /// Whole granules carrying `tag`.
    pub fn is_tagged(&self) -> bool {
        matches!(self.attr, SlotAttr::Tagged { .. })
    }

    /// Needs explicit tagging code.
    pub fn needs_tagging(&self) -> bool {
        self.tag != SAFE_DEFAULT
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct FrameLayout {
    pub function: String,
    /// Static slots from the frame base downwards, then run-time slots.
    pub slots: Vec<FrameSlot>,
    /// Bytes spanned by the static slots including alignment gaps.
    pub extent: u64,
    /// Sum of slot footprints: padded sizes for tagged slots and guards,
    /// object sizes otherwise.
    pub frame_bytes: u64,
    pub reset_tags: bool,
}

impl FrameLayout {
    pub fn slot(&self, name: &str) -> Option<&FrameSlot> {
        self.slots.iter().find(|s| s.slot.name() == name)
    }

    pub fn guards(&self) -> impl Iterator<Item = &FrameSlot> {
        self.slots.iter().filter(|s| s.slot.is_guard())
    }
}

/// Tag implied by the class alone; `None` for unsafe slots, whose tag depends
/// on their neighbours.
pub fn class_tag(s: SafetyClass) -> Option<u8> {
    match s.class {
        Class::Implicit => Some(SAFE_DEFAULT),
        Class::Provable | Class::Guarded if s.pointer_safe => Some(SAFE_DEFAULT),
        Class::Provable | Class::Guarded => Some(PTR_UNSAFE),
        Class::Unsafe => None,
    }
}

fn attr_for(a: &AllocaReport, tag: u8) -> SlotAttr {
    match a.class {
        Class::Implicit => SlotAttr::Implicit,
        Class::Guarded => SlotAttr::Tagged {
            // Upward walks must leave the object straight into the guard,
            // not into padding.
            high_end: a.linear.as_ref().is_some_and(|l| l.up),
        },
        _ if tag != SAFE_DEFAULT => SlotAttr::Tagged { high_end: false },
        _ => SlotAttr::Plain,
    }
}

/// Lays out the frame of function `fi` and assigns every slot its tag.
pub fn layout_frame(p: &Program, fi: usize, result: &AnalysisResult, cfg: &InstrumentConfig) -> FrameLayout {
    let f = &p.functions[fi];
    let reports: Vec<&AllocaReport> = result
        .allocas
        .iter()
        .filter(|a| a.func as usize == fi)
        .collect();

    let guard_size = cfg.guard_width.max(1) * GRANULE;
    let mut guard_names = 0usize;
    let mut next_guard = |slots: &mut Vec<FrameSlot>| {
        let name = format!("guard{guard_names}");
        guard_names += 1;
        slots.push(FrameSlot {
            slot: SlotRef::Guard { name },
            offset: None,
            size: Some(guard_size),
            padded_size: Some(guard_size),
            tag: GUARD_TAG,
            attr: SlotAttr::Tagged { high_end: false },
            class: None,
        });
    };

    let mut slots: Vec<FrameSlot> = Vec::new();
    let mut dynamic = Vec::new();
    let mut reset_tags = f.attrs.reset_tags;
    // Tag of the previous static slot if it covers whole granules.
    let prev_tagged = |slots: &[FrameSlot]| slots.last().filter(|s| s.is_tagged()).map(|s| s.tag);

    for a in &reports {
        let static_slot = a.entry_block && a.size.is_some();
        let mut tag = class_tag(a.safety());
        if !static_slot {
            let tag = tag.unwrap_or(mte::DYNAMIC_TAG);
            let attr = match attr_for(a, tag) {
                SlotAttr::Implicit => SlotAttr::Plain,
                x => x,
            };
            if tag != SAFE_DEFAULT {
                reset_tags = true;
            }
            dynamic.push(FrameSlot {
                slot: SlotRef::Alloca {
                    name: a.name.clone(),
                    value: a.value,
                },
                offset: None,
                size: a.size,
                padded_size: a.size.map(|s| padded_size(s, attr)),
                tag,
                attr,
                class: Some(a.safety()),
            });
            continue;
        }
        let prev = prev_tagged(&slots);
        let t = *tag.get_or_insert_with(|| {
            UNSAFE_TAGS
                .into_iter()
                .find(|&t| Some(t) != prev)
                .expect("three candidate tags")
        });
        let attr = attr_for(a, t);
        let tagged = matches!(attr, SlotAttr::Tagged { .. });
        let prev_guarded = slots
            .last()
            .is_some_and(|s| s.class.is_some_and(|c| c.class == Class::Guarded));
        // Both neighbours of a guarded slot must carry a different tag; an
        // explicit guard is only needed where the neighbour does not.
        let need_guard = (prev_guarded && !(tagged && prev != Some(t)))
            || (a.class == Class::Guarded && (prev.is_none() || prev == Some(t)));
        if need_guard {
            next_guard(&mut slots);
        }
        let size = a.size.expect("static");
        slots.push(FrameSlot {
            slot: SlotRef::Alloca {
                name: a.name.clone(),
                value: a.value,
            },
            offset: None,
            size: Some(size),
            padded_size: Some(padded_size(size, attr)),
            tag: t,
            attr,
            class: Some(a.safety()),
        });
    }
    if slots
        .last()
        .is_some_and(|s| s.class.is_some_and(|c| c.class == Class::Guarded))
    {
        next_guard(&mut slots);
    }

    // Assign offsets by running the placement rule from an aligned base.
    const BASE: u64 = 1 << 40;
    let mut cursor = BASE;
    for s in &mut slots {
        let (lo, _) = place_slot(cursor, s.size.unwrap_or(0), s.attr);
        s.offset = Some(BASE - lo);
        cursor = lo;
    }
    let extent = BASE - cursor;
    slots.extend(dynamic);
    let frame_bytes = slots
        .iter()
        .map(|s| s.padded_size.or(s.size).unwrap_or(0))
        .sum();
    FrameLayout {
        function: f.name.clone(),
        slots,
        extent,
        frame_bytes,
        reset_tags,
    }
}

/// Footprint of `f`'s allocas without instrumentation.
pub fn plain_frame_bytes(f: &Function) -> u64 {
    f.insts()
        .filter_map(|(_, i)| match i {
            Inst::Alloca { size, .. } => size.static_size(),
            _ => None,
        })
        .sum()
}
