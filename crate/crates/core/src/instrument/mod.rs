//! Rewrites a classified program into an instrumented one.
//!
//! Each function gets a frame layout with granule-aligned tagged slots and
//! guard granules, a tag per slot, tagging code at allocation, tag resets
//! before return, and tag-forgery prevention on pointer loads, pointer
//! arithmetic and integer casts.

mod layout;
mod rewrite;

pub use layout::{class_tag, layout_frame, padded_size, place_slot, plain_frame_bytes, FrameLayout, FrameSlot, SlotRef};
pub use rewrite::{insert_tagging, insert_tfp};

use crate::analysis::{AnalysisResult, Class, TfpSite};
use crate::ir::{validate, Diagnostic, Program, SlotAttr};
use crate::mte::{is_pointer_safe_tag, GLOBAL_TAG, GRANULE, PTR_UNSAFE, SAFE_DEFAULT, WILDCARD};
use serde::Serialize;

pub const PLAN_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct InstrumentConfig {
    /// Guard width in granules.
    pub guard_width: u64,
}

impl Default for InstrumentConfig {
    fn default() -> Self {
        InstrumentConfig { guard_width: 1 }
    }
}

#[derive(Debug, thiserror::Error)]
pub enum InstrumentError {
    #[error("program already contains instrumentation")]
    AlreadyInstrumented,
    #[error("analysis result does not match the program")]
    StaleAnalysis,
    #[error("instrumented program is malformed: {0}")]
    Malformed(Diagnostic),
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct AllocaTag {
    pub function: String,
    pub alloca: String,
    pub tag: u8,
    pub class: Class,
    pub pointer_safe: bool,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct GuardRef {
    pub function: String,
    pub guard: String,
    pub offset: u64,
    pub size: u64,
    pub tag: u8,
}

/// Tags, frame layouts and rewrite sites of one instrumented program.
#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct TagPlan {
    pub version: u32,
    pub global_tag: u8,
    pub tags: Vec<AllocaTag>,
    pub frames: Vec<FrameLayout>,
    pub guards: Vec<GuardRef>,
    pub tfp: Vec<TfpSite>,
}

impl TagPlan {
    pub fn tag_of(&self, function: &str, alloca: &str) -> Option<&AllocaTag> {
        self.tags
            .iter()
            .find(|t| t.function == function && t.alloca == alloca)
    }

    pub fn frame(&self, function: &str) -> Option<&FrameLayout> {
        self.frames.iter().find(|f| f.function == function)
    }
}

#[derive(Clone, Debug)]
pub struct Instrumented {
    pub program: Program,
    pub plan: TagPlan,
}

/// Collects the per-slot tags of computed layouts into a plan.
pub fn assign_tags(result: &AnalysisResult, layouts: Vec<FrameLayout>) -> TagPlan {
    let mut tags = Vec::new();
    let mut guards = Vec::new();
    for l in &layouts {
        for s in &l.slots {
            match &s.slot {
                SlotRef::Alloca { name, .. } => {
                    let c = s.class.expect("alloca slots carry a class");
                    tags.push(AllocaTag {
                        function: l.function.clone(),
                        alloca: name.clone(),
                        tag: s.tag,
                        class: c.class,
                        pointer_safe: c.pointer_safe,
                    });
                }
                SlotRef::Guard { name } => guards.push(GuardRef {
                    function: l.function.clone(),
                    guard: name.clone(),
                    offset: s.offset.unwrap_or(0),
                    size: s.size.unwrap_or(0),
                    tag: s.tag,
                }),
            }
        }
    }
    TagPlan {
        version: PLAN_VERSION,
        global_tag: GLOBAL_TAG,
        tags,
        frames: layouts,
        guards,
        tfp: result.tfp.clone(),
    }
}

/// Instruments `p` according to `result`, which must come from analysing `p`.
pub fn instrument(p: &Program, result: &AnalysisResult, cfg: &InstrumentConfig) -> Result<Instrumented, InstrumentError> {
    if p.has_instrumentation() {
        return Err(InstrumentError::AlreadyInstrumented);
    }
    if result.tables.len() != p.functions.len() {
        return Err(InstrumentError::StaleAnalysis);
    }
    let layouts: Vec<FrameLayout> = (0..p.functions.len())
        .map(|fi| layout_frame(p, fi, result, cfg))
        .collect();
    let mut out = p.clone();
    for (fi, f) in out.functions.iter_mut().enumerate() {
        let sites: Vec<&TfpSite> = result
            .tfp
            .iter()
            .filter(|s| s.func as usize == fi)
            .collect();
        let with_tfp = insert_tfp(f, &sites);
        *f = insert_tagging(&with_tfp, &layouts[fi]);
    }
    for g in &mut out.globals {
        g.tag = Some(GLOBAL_TAG);
    }
    if let Some(d) = validate(&out).into_iter().next() {
        return Err(InstrumentError::Malformed(d));
    }
    Ok(Instrumented {
        program: out,
        plan: assign_tags(result, layouts),
    })
}

/// Checks the structural rules every plan must satisfy. Returns one message
/// per violation.
pub fn validate_plan(plan: &TagPlan) -> Vec<String> {
    let mut errs = Vec::new();
    for l in &plan.frames {
        let fname = &l.function;
        for s in &l.slots {
            let name = s.slot.name();
            if s.tag > 0xf {
                errs.push(format!("{fname}/{name}: tag {} is not a nibble", s.tag));
            }
            if s.tag == WILDCARD {
                errs.push(format!("{fname}/{name}: uses the wildcard tag"));
            }
            if let Some(c) = s.class {
                let ok = match c.class {
                    Class::Unsafe => s.tag & 0b1000 == 0,
                    Class::Implicit => s.tag == SAFE_DEFAULT && s.attr == SlotAttr::Implicit,
                    Class::Provable | Class::Guarded if c.pointer_safe => s.tag == SAFE_DEFAULT,
                    Class::Provable | Class::Guarded => s.tag & 0b1100 == PTR_UNSAFE,
                };
                if !ok {
                    errs.push(format!("{fname}/{name}: tag {:#06b} does not fit class {:?}", s.tag, c));
                }
            }
            if s.needs_tagging() && !s.is_tagged() {
                errs.push(format!("{fname}/{name}: tagged slot is not granule aligned"));
            }
            if s.is_tagged() {
                if let (Some(off), Some(padded)) = (s.offset, s.padded_size) {
                    if off % GRANULE != 0 || padded % GRANULE != 0 {
                        errs.push(format!("{fname}/{name}: tagged slot not granule aligned"));
                    }
                }
            }
        }
        let statics: Vec<&FrameSlot> = l.slots.iter().filter(|s| s.offset.is_some()).collect();
        for w in statics.windows(2) {
            let hi = w[0].offset.unwrap();
            let lo_top = w[1].offset.unwrap() - w[1].padded_size.or(w[1].size).unwrap_or(0);
            if lo_top < hi {
                errs.push(format!("{fname}: slots {} and {} overlap", w[0].slot.name(), w[1].slot.name()));
            }
        }
        for (i, s) in statics.iter().enumerate() {
            if !s.class.is_some_and(|c| c.class == Class::Guarded) {
                continue;
            }
            let neighbours = [i.checked_sub(1).map(|j| statics[j]), statics.get(i + 1).copied()];
            for n in neighbours {
                let differs = n.is_some_and(|n| n.is_tagged() && n.tag != s.tag);
                if !differs {
                    errs.push(format!("{fname}/{}: guarded slot has an unguarded neighbour", s.slot.name()));
                }
            }
        }
    }
    for t in &plan.tags {
        if t.class == Class::Unsafe && is_pointer_safe_tag(t.tag) {
            errs.push(format!("{}/{}: unsafe slot with a pointer-safe tag", t.function, t.alloca));
        }
    }
    errs
}

#[cfg(test)]
mod tests;
