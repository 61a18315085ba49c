//! Stack-allocation safety analysis.
//!
//! A per-function pass builds a [`UseInfo`] for every base pointer, a module
//! pass merges callee and load-site facts until nothing changes, and the
//! classifier assigns each alloca a [`SafetyClass`] plus the tag-forgery
//! prevention action of every pointer load, GEP and integer cast.

mod facts;
mod function_pass;
mod module_pass;
mod use_info;

pub use facts::{Affine, Facts, Offset, Root};
pub use function_pass::run_function_pass;
pub use module_pass::ModulePass;
pub use use_info::*;

use crate::ir::*;
use serde::Serialize;
use std::collections::{BTreeMap, BTreeSet};

pub const DEFAULT_LIMIT: u32 = 32;

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct AnalysisConfig {
    /// Per-function worklist visits before its UseInfos are given up on.
    pub limit: u32,
    /// Guard width in granules; linear steps must stay below it.
    pub guard_width: u64,
    /// Externals known not to access or capture pointer arguments.
    pub pure_externs: BTreeSet<String>,
    /// Skip runtime checks on pointer loads whose source is statically known.
    pub static_elision: bool,
    /// Run the interprocedural pass. Without it, any call or pointer store
    /// leaves the base unresolved and therefore unsafe.
    pub module_pass: bool,
    /// Mutation for oracle self-tests: ignore out-of-bounds arbitrary ranges.
    pub weaken_bounds: bool,
}

impl Default for AnalysisConfig {
    fn default() -> Self {
        AnalysisConfig {
            limit: DEFAULT_LIMIT,
            guard_width: 1,
            pure_externs: BTreeSet::new(),
            static_elision: true,
            module_pass: true,
            weaken_bounds: false,
        }
    }
}

/// UseInfos of one function, addressable by defining value.
#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct FunctionTable {
    pub function: String,
    pub uses: Vec<UseInfo>,
    #[serde(skip)]
    pub index: BTreeMap<ValueId, usize>,
}

impl FunctionTable {
    pub fn get(&self, v: ValueId) -> Option<&UseInfo> {
        self.index.get(&v).map(|&i| &self.uses[i])
    }
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize)]
pub struct PassStats {
    /// Worklist pops.
    pub iterations: u64,
    /// Confirmation sweeps over all functions.
    pub sweeps: u64,
    /// Functions whose visit count exceeded the limit.
    pub limit_hits: u64,
    pub marked_unsafe_by_limit: u64,
    /// Bases made unsafe because a pointer to them reached untrusted memory.
    pub poisoned: u64,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize)]
pub enum Class {
    Implicit,
    Provable,
    Guarded,
    Unsafe,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize)]
pub struct SafetyClass {
    pub class: Class,
    pub pointer_safe: bool,
}

impl SafetyClass {
    pub fn is_safe(self) -> bool {
        self.class != Class::Unsafe
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct AllocaReport {
    pub function: String,
    pub func: u32,
    pub value: ValueId,
    pub name: String,
    pub loc: InstLoc,
    /// `None` for dynamically sized allocas.
    pub size: Option<u64>,
    pub entry_block: bool,
    pub class: Class,
    pub pointer_safe: bool,
    pub range: ByteRange,
    pub linear: Option<LinearAccessInfo>,
}

impl AllocaReport {
    pub fn safety(&self) -> SafetyClass {
        SafetyClass {
            class: self.class,
            pointer_safe: self.pointer_safe,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum TfpSiteKind {
    PtrLoad,
    Gep,
    IntToPtr,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum TfpAction {
    /// Source statically pointer-safe: loaded value used as is.
    Elide,
    /// Unconditionally clear the top address-tag bit.
    ClearTop,
    /// Decide from the source granule's tag at run time.
    Runtime,
    /// Restore the base pointer's address tag after arithmetic.
    KeepTag,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct TfpSite {
    pub function: String,
    pub func: u32,
    pub loc: InstLoc,
    pub value: ValueId,
    pub kind: TfpSiteKind,
    pub action: TfpAction,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct AnalysisResult {
    pub allocas: Vec<AllocaReport>,
    pub tfp: Vec<TfpSite>,
    pub tables: Vec<FunctionTable>,
    pub stats: PassStats,
}

impl AnalysisResult {
    pub fn alloca(&self, func: usize, v: ValueId) -> Option<&AllocaReport> {
        self.allocas
            .iter()
            .find(|a| a.func as usize == func && a.value == v)
    }

    pub fn alloca_by_name(&self, function: &str, name: &str) -> Option<&AllocaReport> {
        self.allocas
            .iter()
            .find(|a| a.function == function && a.name == name)
    }

    pub fn tfp_at(&self, func: usize, loc: InstLoc) -> Option<&TfpSite> {
        self.tfp
            .iter()
            .find(|s| s.func as usize == func && s.loc == loc)
    }

    pub fn use_info(&self, key: UseKey) -> Option<&UseInfo> {
        self.tables.get(key.func as usize)?.get(key.value)
    }
}

/// Runs the whole analysis: function passes, module fixpoint,
/// pointer-safety propagation and classification.
pub fn analyze(p: &Program, cfg: &AnalysisConfig) -> AnalysisResult {
    let facts: Vec<Facts> = p.functions.iter().map(Facts::compute).collect();
    let mut tables: Vec<FunctionTable> = (0..p.functions.len())
        .map(|fi| run_function_pass(p, fi, &facts[fi], cfg))
        .collect();
    let mut mp = ModulePass::new(p, cfg.limit.max(1));
    if cfg.module_pass {
        mp.run(&mut tables, 0..p.functions.len());
    } else {
        for u in tables.iter_mut().flat_map(|t| t.uses.iter_mut()) {
            if !u.calls.is_empty() || !u.stored_in.is_empty() {
                u.set_unsafe();
            }
        }
    }

    // A pointer kept in memory that is unsafe or not pointer-safe can be
    // forged or leaked, so its base cannot be trusted either. Classification
    // and propagation alternate until both settle.
    let mut allocas;
    loop {
        allocas = classify(p, &tables, cfg);
        let bad: BTreeSet<UseKey> = allocas
            .iter()
            .filter(|a| a.class == Class::Unsafe || !a.pointer_safe)
            .map(|a| UseKey {
                func: a.func,
                value: a.value,
            })
            .collect();
        let mut dirty = BTreeSet::new();
        for (fi, t) in tables.iter_mut().enumerate() {
            for u in &mut t.uses {
                if !u.unsafe_ && u.stored_in.iter().any(|s| bad.contains(&s.site)) {
                    u.set_unsafe();
                    mp.stats.poisoned += 1;
                    dirty.insert(fi);
                }
            }
        }
        if dirty.is_empty() {
            break;
        }
        if cfg.module_pass {
            mp.run(&mut tables, dirty);
        }
    }

    let tfp = tfp_sites(p, &facts, &allocas, cfg);
    AnalysisResult {
        allocas,
        tfp,
        tables,
        stats: mp.stats,
    }
}

fn classify(p: &Program, tables: &[FunctionTable], cfg: &AnalysisConfig) -> Vec<AllocaReport> {
    let mut out = Vec::new();
    for (fi, f) in p.functions.iter().enumerate() {
        // An entry block that is also a loop body allocates afresh on every
        // pass, so its allocas get no static frame slot.
        let static_entry = Cfg::new(f).preds.first().is_some_and(Vec::is_empty);
        for (loc, inst) in f.insts() {
            let Inst::Alloca { result, size, .. } = inst else {
                continue;
            };
            let u = tables[fi].get(*result).expect("alloca has a UseInfo");
            let entry_block = static_entry && loc.block == BlockId(0);
            let size = size.static_size();
            let safety = classify_one(u, size, entry_block, cfg);
            out.push(AllocaReport {
                function: f.name.clone(),
                func: fi as u32,
                value: *result,
                name: f.value_name(*result).to_string(),
                loc,
                size,
                entry_block,
                class: safety.class,
                pointer_safe: safety.pointer_safe,
                range: u.range,
                linear: u.linear.clone(),
            });
        }
    }
    out
}

fn classify_one(u: &UseInfo, size: Option<u64>, entry_block: bool, cfg: &AnalysisConfig) -> SafetyClass {
    const UNSAFE: SafetyClass = SafetyClass {
        class: Class::Unsafe,
        pointer_safe: false,
    };
    let Some(size) = size else { return UNSAFE };
    let Ok(size) = i64::try_from(size) else {
        return UNSAFE;
    };
    if u.unsafe_ {
        return UNSAFE;
    }
    if !u.range.within(0, size) && !cfg.weaken_bounds {
        return UNSAFE;
    }
    let pointer_safe = u.slots_are_pointer_safe();
    let Some(lin) = &u.linear else {
        let class = if u.direct_only && pointer_safe && entry_block {
            Class::Implicit
        } else {
            Class::Provable
        };
        return SafetyClass { class, pointer_safe };
    };
    let guard_bytes = cfg.guard_width.saturating_mul(crate::mte::GRANULE);
    let step_ok = lin.max_step.is_some_and(|s| s > 0 && s < guard_bytes);
    let one_way = !(lin.up && lin.down) || size % crate::mte::GRANULE as i64 == 0;
    if entry_block && step_ok && one_way && lin.start_range.within(0, size) {
        SafetyClass {
            class: Class::Guarded,
            pointer_safe,
        }
    } else {
        UNSAFE
    }
}

fn tfp_sites(p: &Program, facts: &[Facts], allocas: &[AllocaReport], cfg: &AnalysisConfig) -> Vec<TfpSite> {
    let mut out = Vec::new();
    for (fi, f) in p.functions.iter().enumerate() {
        let fx = &facts[fi];
        let class_of = |v: ValueId| allocas.iter().find(|a| a.func as usize == fi && a.value == v);
        for (loc, inst) in f.insts() {
            let (kind, value, action) = match inst {
                Inst::Load {
                    result,
                    ty: MemTy::Ptr,
                    addr,
                    ..
                } => {
                    let roots = fx.pointer(addr);
                    let trusted = |r: &Root| matches!(r, Root::Base(b) if class_of(*b).is_some_and(|a| a.pointer_safe));
                    let untrusted = |r: &Root| match r {
                        Root::Base(b) => class_of(*b).is_some_and(|a| !a.pointer_safe),
                        Root::Global(_) => true,
                        Root::Wild => false,
                    };
                    let action = if !cfg.static_elision || roots.is_empty() {
                        TfpAction::Runtime
                    } else if roots.keys().all(trusted) {
                        TfpAction::Elide
                    } else if roots.keys().all(untrusted) {
                        TfpAction::ClearTop
                    } else {
                        TfpAction::Runtime
                    };
                    (TfpSiteKind::PtrLoad, *result, action)
                }
                Inst::Gep { result, .. } => {
                    let in_bounds = {
                        let roots = &fx.ptr[result.index()];
                        !roots.is_empty()
                            && roots.iter().all(|(r, o)| match (r, o) {
                                (Root::Base(b), Offset::Known(k)) => class_of(*b)
                                    .and_then(|a| a.size)
                                    .is_some_and(|s| *k >= 0 && (*k as u64) <= s),
                                _ => false,
                            })
                    };
                    if in_bounds {
                        continue;
                    }
                    (TfpSiteKind::Gep, *result, TfpAction::KeepTag)
                }
                Inst::IntToPtr { result, .. } => (TfpSiteKind::IntToPtr, *result, TfpAction::ClearTop),
                _ => continue,
            };
            out.push(TfpSite {
                function: f.name.clone(),
                func: fi as u32,
                loc,
                value,
                kind,
                action,
            });
        }
    }
    out
}

#[cfg(test)]
mod tests;
