//! Adversary scripts and the fixed scenario suite.
//!
//! The adversary reads anything, data and tags alike. Its writes are limited
//! to what a tag-checked program write could reach anyway: granules whose
//! allocation tag has the top bit clear, plus pointer fields inside
//! allocations that are not pointer-safe. `run_scenario` enforces both
//! limits before touching memory.

use crate::corpus;
use crate::pipeline::{prepare, PipelineConfig, PipelineError, Prepared};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::collections::HashMap;
use tagguard_core::analysis::Class;
use tagguard_core::instrument::TagPlan;
use tagguard_core::interp::{
    run, Access, AllocId, Allocation, Machine, NoObserver, Observer, Owner, RunConfig, RunError, Status,
};
use tagguard_core::ir::{BlockId, Program};
use tagguard_core::mte::{is_pointer_safe_tag, PointerValue, GRANULE, GUARD_TAG, SAFE_DEFAULT};

pub const SCRIPT_VERSION: u32 = 1;

/// Where in memory an action applies, resolved when the breakpoint hits.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Location {
    /// The live instance of an alloca.
    Slot {
        function: String,
        alloca: String,
        #[serde(default)]
        offset: i64,
    },
    Global {
        name: String,
        #[serde(default)]
        offset: i64,
    },
    Raw {
        address: u64,
    },
}

impl Location {
    pub fn slot(function: &str, alloca: &str, offset: i64) -> Location {
        Location::Slot {
            function: function.into(),
            alloca: alloca.into(),
            offset,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TagSource {
    Fixed(u8),
    /// The tag an earlier `Disclose` saw on the target granule.
    Disclosed,
}

/// A 64-bit value computed at the breakpoint.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Word {
    Int(i64),
    AddressOf { at: Location, tag: TagSource },
    /// `(target - base) / scale`, an index that reaches `target` from `base`.
    IndexBetween { base: Location, target: Location, scale: i64 },
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Data {
    Bytes(Vec<u8>),
    Fill { byte: u8, len: u64 },
    Word(Word),
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Action {
    Disclose { at: Location, len: u64 },
    CorruptUnsafe { at: Location, data: Data },
    InjectPointer { target: Location, value: Word },
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Point {
    Index { block: String, index: u32 },
    /// The instruction defining this value.
    Before { value: String },
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Breakpoint {
    pub function: String,
    pub at: Point,
    /// Stop on this visit, counting from 1.
    #[serde(default = "one")]
    pub hit: u32,
}

fn one() -> u32 {
    1
}

fn yes() -> bool {
    true
}

impl Breakpoint {
    pub fn before(function: &str, value: &str) -> Breakpoint {
        Breakpoint {
            function: function.into(),
            at: Point::Before { value: value.into() },
            hit: 1,
        }
    }

    fn resolve(&self, p: &Program) -> Result<(usize, BlockId, u32), ScenarioError> {
        let missing = || ScenarioError::Breakpoint(format!("no such point in @{}: {:?}", self.function, self.at));
        let fi = p.function_index(&self.function).ok_or_else(missing)?;
        let f = &p.functions[fi];
        match &self.at {
            Point::Index { block, index } => {
                let b = f.block_by_label(block).ok_or_else(missing)?;
                if *index as usize > f.blocks[b.index()].insts.len() {
                    return Err(missing());
                }
                Ok((fi, b, *index))
            }
            Point::Before { value } => f
                .insts()
                .find(|(_, i)| i.result().is_some_and(|r| f.value_name(r) == value))
                .map(|(loc, _)| (fi, loc.block, loc.index))
                .ok_or_else(missing),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct AdversaryScript {
    #[serde(default = "script_version")]
    pub version: u32,
    /// Without a breakpoint the actions run before the first instruction.
    #[serde(default)]
    pub breakpoint: Option<Breakpoint>,
    #[serde(default)]
    pub actions: Vec<Action>,
    /// Continue after the actions; otherwise stop the run there.
    #[serde(default = "yes")]
    pub resume: bool,
}

fn script_version() -> u32 {
    SCRIPT_VERSION
}

impl Default for AdversaryScript {
    fn default() -> Self {
        AdversaryScript {
            version: SCRIPT_VERSION,
            breakpoint: None,
            actions: Vec::new(),
            resume: true,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SlotName {
    pub function: String,
    pub alloca: String,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Expectation {
    /// The run must trap, optionally on a granule with this tag.
    MustTrap {
        #[serde(default)]
        alloc_tag: Option<u8>,
    },
    /// Watched safe slots keep their bytes except through based-on writes.
    /// An empty list watches every safe slot live at the breakpoint.
    MustPreserve {
        #[serde(default)]
        slots: Vec<SlotName>,
    },
    /// Finishes exactly like the plain program run tag-blind.
    MustFinishEqual,
}

#[derive(Debug, thiserror::Error)]
pub enum ScenarioError {
    #[error("capability violation: {0}")]
    Capability(String),
    #[error("breakpoint: {0}")]
    Breakpoint(String),
    #[error("cannot resolve {0}")]
    Resolve(String),
    #[error("unsupported script version {0}")]
    Version(u32),
    #[error(transparent)]
    Run(#[from] RunError),
    #[error(transparent)]
    Pipeline(#[from] PipelineError),
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct Disclosure {
    pub address: u64,
    pub bytes: Vec<u8>,
    /// Allocation tag of each granule from the one containing `address`.
    pub tags: Vec<Option<u8>>,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct Mismatch {
    pub function: String,
    pub alloca: String,
    pub offset: u64,
    pub before: u8,
    pub after: u8,
    pub step: u64,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct Observed {
    pub status: Status,
    pub output: Vec<i64>,
    pub steps: u64,
    pub breakpoint_hit: bool,
    pub disclosures: Vec<Disclosure>,
    /// Slots watched for preservation.
    pub watched: Vec<SlotName>,
    pub mismatches: Vec<Mismatch>,
    /// Tag-blind run of the plain program, for `MustFinishEqual`.
    pub reference: Option<(Status, Vec<i64>)>,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct ScenarioReport {
    pub id: String,
    pub title: String,
    pub expectation: Expectation,
    pub observed: Observed,
    pub pass: bool,
}

/// Whether the adversary's write limits are checked. Only the unprotected
/// baseline turns them off, to show what an attack does without tags.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ScenarioOptions {
    pub mte: bool,
    pub wildcard: bool,
}

impl Default for ScenarioOptions {
    fn default() -> Self {
        ScenarioOptions {
            mte: true,
            wildcard: false,
        }
    }
}

/// Tracks based-on stores to watched allocations and compares the rest of
/// their bytes after every step.
struct Watch {
    /// Allocation id, owner, snapshot.
    slots: Vec<(AllocId, SlotName, Vec<u8>)>,
    written: Vec<AllocId>,
}

impl Observer for Watch {
    fn access(&mut self, a: &Access) {
        if a.store && a.allowed {
            if let Some(p) = a.prov {
                self.written.push(p);
            }
        }
    }

    fn free(&mut self, id: AllocId, _a: &Allocation) {
        self.slots.retain(|(s, _, _)| *s != id);
    }
}

struct Ctx<'a> {
    plan: &'a TagPlan,
    opts: ScenarioOptions,
    disclosures: Vec<Disclosure>,
}

fn resolve(m: &Machine<'_>, at: &Location) -> Result<u64, ScenarioError> {
    let base = match at {
        Location::Slot { function, alloca, .. } => m
            .live_slot(function, alloca)
            .map(|a| a.addr)
            .ok_or_else(|| ScenarioError::Resolve(format!("no live %{alloca} in @{function}")))?,
        Location::Global { name, .. } => m
            .global_address(name)
            .ok_or_else(|| ScenarioError::Resolve(format!("no global @{name}")))?,
        Location::Raw { address } => *address,
    };
    let off = match at {
        Location::Slot { offset, .. } | Location::Global { offset, .. } => *offset,
        Location::Raw { .. } => 0,
    };
    Ok(base.wrapping_add(off as u64))
}

impl Ctx<'_> {
    fn word(&self, m: &Machine<'_>, w: &Word) -> Result<u64, ScenarioError> {
        Ok(match w {
            Word::Int(v) => *v as u64,
            Word::AddressOf { at, tag } => {
                let a = resolve(m, at)?;
                let t = match tag {
                    TagSource::Fixed(t) => *t & 0xf,
                    TagSource::Disclosed => self.disclosed_tag(a)?,
                };
                PointerValue(a).with_tag(t).0
            }
            Word::IndexBetween { base, target, scale } => {
                let (b, t) = (resolve(m, base)?, resolve(m, target)?);
                if *scale == 0 {
                    return Err(ScenarioError::Resolve("zero scale".into()));
                }
                (t.wrapping_sub(b) as i64 / scale) as u64
            }
        })
    }

    fn disclosed_tag(&self, addr: u64) -> Result<u8, ScenarioError> {
        let g = addr / GRANULE;
        self.disclosures
            .iter()
            .rev()
            .find_map(|d| {
                let first = d.address / GRANULE;
                let i = g.checked_sub(first)? as usize;
                d.tags.get(i).copied().flatten()
            })
            .ok_or_else(|| ScenarioError::Resolve(format!("tag at {addr:#x} was never disclosed")))
    }

    fn apply(&mut self, m: &mut Machine<'_>, a: &Action) -> Result<(), ScenarioError> {
        match a {
            Action::Disclose { at, len } => {
                let addr = resolve(m, at)?;
                let first = addr / GRANULE;
                let last = (addr + len.max(&1) - 1) / GRANULE;
                self.disclosures.push(Disclosure {
                    address: addr,
                    bytes: m.read_bytes(addr, *len),
                    tags: (first..=last).map(|g| m.tag_at(g * GRANULE)).collect(),
                });
            }
            Action::CorruptUnsafe { at, data } => {
                let addr = resolve(m, at)?;
                let bytes = match data {
                    Data::Bytes(b) => b.clone(),
                    Data::Fill { byte, len } => vec![*byte; *len as usize],
                    Data::Word(w) => self.word(m, w)?.to_le_bytes().to_vec(),
                };
                self.check_unsafe_write(m, addr, bytes.len() as u64)?;
                m.write_bytes(addr, &bytes);
            }
            Action::InjectPointer { target, value } => {
                let addr = resolve(m, target)?;
                let v = self.word(m, value)?;
                self.check_pointer_slot(m, addr)?;
                m.write_bytes(addr, &v.to_le_bytes());
            }
        }
        Ok(())
    }

    fn check_unsafe_write(&self, m: &Machine<'_>, addr: u64, len: u64) -> Result<(), ScenarioError> {
        if !self.opts.mte || len == 0 {
            return Ok(());
        }
        for g in addr / GRANULE..=(addr + len - 1) / GRANULE {
            match m.tag_at(g * GRANULE) {
                Some(t) if t & 0b1000 == 0 => {}
                t => {
                    return Err(ScenarioError::Capability(format!(
                        "write to granule {:#x} tagged {t:?}",
                        g * GRANULE
                    )))
                }
            }
        }
        Ok(())
    }

    fn check_pointer_slot(&self, m: &Machine<'_>, addr: u64) -> Result<(), ScenarioError> {
        if !self.opts.mte {
            return Ok(());
        }
        let deny = |why: &str| Err(ScenarioError::Capability(format!("pointer injection at {addr:#x}: {why}")));
        let Some(a) = m.allocations().iter().find(|a| a.live && a.contains(addr, 8)) else {
            return deny("not inside a live allocation");
        };
        if !(addr - a.addr).is_multiple_of(8) {
            return deny("not an aligned pointer field");
        }
        if let Owner::Stack { function, name, .. } = &a.owner {
            match self.plan.tag_of(function, name) {
                Some(t) if t.class == Class::Unsafe || !t.pointer_safe => {}
                _ => return deny("allocation is pointer-safe"),
            }
        }
        for g in [addr / GRANULE, (addr + 7) / GRANULE] {
            if m.tag_at(g * GRANULE).is_none_or(is_pointer_safe_tag) {
                return deny("granule carries a pointer-safe tag");
            }
        }
        Ok(())
    }
}

fn safe_slots(m: &Machine<'_>, plan: &TagPlan, slots: &[SlotName]) -> Vec<(AllocId, SlotName)> {
    m.allocations()
        .iter()
        .enumerate()
        .filter(|(_, a)| a.live)
        .filter_map(|(id, a)| match &a.owner {
            Owner::Stack { function, name, .. } => {
                let n = SlotName {
                    function: function.clone(),
                    alloca: name.clone(),
                };
                let wanted = if slots.is_empty() {
                    plan.tag_of(function, name).is_some_and(|t| t.class != Class::Unsafe)
                } else {
                    slots.contains(&n)
                };
                wanted.then_some((id as AllocId, n))
            }
            Owner::Global { .. } => None,
        })
        .collect()
}

/// Runs `prep.instrumented` under `script` and judges the result.
pub fn run_scenario(
    id: &str,
    title: &str,
    prep: &Prepared,
    args: &[i64],
    script: &AdversaryScript,
    expectation: &Expectation,
    opts: ScenarioOptions,
) -> Result<ScenarioReport, ScenarioError> {
    if script.version != SCRIPT_VERSION {
        return Err(ScenarioError::Version(script.version));
    }
    let cfg = RunConfig {
        mte: opts.mte,
        wildcard: opts.wildcard,
        ..RunConfig::default()
    };
    let p = &prep.instrumented;
    let mut m = Machine::new(p, args, cfg.clone(), &mut NoObserver)?;
    let mut breakpoint_hit = script.breakpoint.is_none();
    if let Some(bp) = &script.breakpoint {
        let (fi, block, index) = bp.resolve(p)?;
        let mut hits = 0;
        while let Some(pc) = m.pc() {
            if pc.func == fi && pc.block == block && pc.index == index {
                hits += 1;
                if hits == bp.hit {
                    breakpoint_hit = true;
                    break;
                }
            }
            m.step(&mut NoObserver);
        }
        if !breakpoint_hit {
            return Err(ScenarioError::Breakpoint(format!(
                "@{} finished after {hits} of {} visits",
                bp.function, bp.hit
            )));
        }
    }
    let mut ctx = Ctx {
        plan: &prep.plan,
        opts,
        disclosures: Vec::new(),
    };
    for a in &script.actions {
        ctx.apply(&mut m, a)?;
    }

    let slots = match expectation {
        Expectation::MustPreserve { slots } => safe_slots(&m, &prep.plan, slots),
        _ => Vec::new(),
    };
    let watched: Vec<SlotName> = slots.iter().map(|(_, n)| n.clone()).collect();
    let snapshot = |m: &Machine<'_>, id: AllocId| {
        let a = &m.allocations()[id as usize];
        m.read_bytes(a.addr, a.size)
    };
    let mut watch = Watch {
        slots: slots
            .into_iter()
            .map(|(id, n)| {
                let s = snapshot(&m, id);
                (id, n, s)
            })
            .collect(),
        written: Vec::new(),
    };
    let mut mismatches = Vec::new();
    if script.resume {
        while m.is_running() {
            m.step(&mut watch);
            let written = std::mem::take(&mut watch.written);
            for (id, name, snap) in &mut watch.slots {
                let now = snapshot(&m, *id);
                if written.contains(id) {
                    *snap = now;
                    continue;
                }
                if let Some(off) = (0..now.len()).find(|&i| now[i] != snap[i]) {
                    mismatches.push(Mismatch {
                        function: name.function.clone(),
                        alloca: name.alloca.clone(),
                        offset: off as u64,
                        before: snap[off],
                        after: now[off],
                        step: m.steps(),
                    });
                    *snap = now;
                }
            }
        }
    }
    let steps = m.steps();
    let outcome = m.finish();
    let reference = match expectation {
        Expectation::MustFinishEqual => {
            let r = run(&prep.plain, args, RunConfig::tag_blind())?;
            Some((r.status, r.output))
        }
        _ => None,
    };
    let pass = match expectation {
        Expectation::MustTrap { alloc_tag } => match &outcome.status {
            Status::Trapped(t) => alloc_tag.is_none_or(|want| t.trap.allocation_tag == Some(want)),
            _ => false,
        },
        Expectation::MustPreserve { .. } => mismatches.is_empty() && !watched.is_empty(),
        Expectation::MustFinishEqual => {
            matches!(outcome.status, Status::Finished { .. })
                && reference.as_ref() == Some(&(outcome.status.clone(), outcome.output.clone()))
        }
    };
    Ok(ScenarioReport {
        id: id.into(),
        title: title.into(),
        expectation: expectation.clone(),
        observed: Observed {
            status: outcome.status,
            output: outcome.output,
            steps,
            breakpoint_hit,
            disclosures: ctx.disclosures,
            watched,
            mismatches,
            reference,
        },
        pass,
    })
}

/// One entry of the fixed suite.
#[derive(Clone, Debug, Serialize)]
pub struct Scenario {
    pub id: &'static str,
    pub title: &'static str,
    /// The security property the scenario exercises.
    pub property: &'static str,
    pub program: &'static str,
    pub args: Vec<i64>,
    pub script: AdversaryScript,
    pub expectation: Expectation,
}

pub const SUITE_VERSION: u32 = 1;

pub fn suite() -> Vec<Scenario> {
    let secret = |f: &str| Location::slot(f, "secret", 0);
    vec![
        Scenario {
            id: "s1",
            title: "disclose the tag of a safe slot, inject a pointer carrying it",
            property: "resist address tag forgery and memory disclosure",
            program: "s1_forged_injection",
            args: vec![0],
            script: AdversaryScript {
                breakpoint: Some(Breakpoint::before("main", "q")),
                actions: vec![
                    Action::Disclose {
                        at: secret("main"),
                        len: 16,
                    },
                    Action::InjectPointer {
                        target: Location::slot("main", "rec", 24),
                        value: Word::AddressOf {
                            at: secret("main"),
                            tag: TagSource::Disclosed,
                        },
                    },
                ],
                ..Default::default()
            },
            expectation: Expectation::MustTrap { alloc_tag: None },
        },
        Scenario {
            id: "s2",
            title: "overwrite an unsafe buffer, steering its own index at a safe slot",
            property: "isolate unsafe allocations from safe ones",
            program: "s2_unsafe_corruption",
            args: vec![1],
            script: AdversaryScript {
                breakpoint: Some(Breakpoint::before("main", "j")),
                actions: vec![
                    Action::CorruptUnsafe {
                        at: Location::slot("main", "buf", 0),
                        data: Data::Fill { byte: 0x41, len: 32 },
                    },
                    Action::CorruptUnsafe {
                        at: Location::slot("main", "buf", 0),
                        data: Data::Word(Word::IndexBetween {
                            base: Location::slot("main", "buf", 0),
                            target: secret("main"),
                            scale: 8,
                        }),
                    },
                ],
                ..Default::default()
            },
            expectation: Expectation::MustPreserve { slots: Vec::new() },
        },
        Scenario {
            id: "s3",
            title: "unit-stride loop runs one element past a guarded buffer",
            property: "resist buffer overflow",
            program: "s3_linear_overflow",
            args: vec![11],
            script: AdversaryScript::default(),
            expectation: Expectation::MustTrap {
                alloc_tag: Some(GUARD_TAG),
            },
        },
        Scenario {
            id: "s4",
            title: "dereference a stack address leaked through a global after return",
            property: "isolate allocations across frames",
            program: "s4_use_after_return",
            args: vec![],
            script: AdversaryScript::default(),
            expectation: Expectation::MustTrap { alloc_tag: None },
        },
        Scenario {
            id: "s5",
            title: "plant a default-tagged address where an integer becomes a pointer",
            property: "resist address tag forgery",
            program: "s5_inttoptr_forgery",
            args: vec![0],
            script: AdversaryScript {
                breakpoint: Some(Breakpoint::before("main", "a")),
                actions: vec![Action::CorruptUnsafe {
                    at: Location::slot("main", "cell", 0),
                    data: Data::Word(Word::AddressOf {
                        at: Location::slot("main", "secret", -16),
                        tag: TagSource::Fixed(SAFE_DEFAULT),
                    }),
                }],
                ..Default::default()
            },
            expectation: Expectation::MustTrap { alloc_tag: None },
        },
        Scenario {
            id: "s6",
            title: "pointer loaded from a global is compared against NULL",
            property: "transparency for sentinel comparisons",
            program: "s6_null_sentinel",
            args: vec![1],
            script: AdversaryScript::default(),
            expectation: Expectation::MustFinishEqual,
        },
    ]
}

impl Scenario {
    pub fn prepare(&self, cfg: &PipelineConfig) -> Result<Prepared, ScenarioError> {
        let e = corpus::get(self.program).expect("scenario program is bundled");
        Ok(prepare(e.program().map_err(PipelineError::from)?, cfg)?)
    }

    pub fn run(&self, cfg: &PipelineConfig, opts: ScenarioOptions) -> Result<ScenarioReport, ScenarioError> {
        let prep = self.prepare(cfg)?;
        run_scenario(self.id, self.title, &prep, &self.args, &self.script, &self.expectation, opts)
    }
}

/// Runs the whole suite in parallel; reports come back in suite order.
pub fn run_suite(cfg: &PipelineConfig, opts: ScenarioOptions) -> Vec<Result<ScenarioReport, ScenarioError>> {
    suite().par_iter().map(|s| s.run(cfg, opts)).collect()
}

/// Merged suite result keyed by scenario id.
pub fn summary(reports: &[Result<ScenarioReport, ScenarioError>]) -> HashMap<String, bool> {
    suite()
        .iter()
        .zip(reports)
        .map(|(s, r)| (s.id.to_string(), r.as_ref().is_ok_and(|r| r.pass)))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn unprotected() -> ScenarioOptions {
        ScenarioOptions {
            mte: false,
            wildcard: false,
        }
    }

    #[test]
    fn suite_passes() {
        for (s, r) in suite().iter().zip(run_suite(&PipelineConfig::default(), ScenarioOptions::default())) {
            let r = r.unwrap_or_else(|e| panic!("{}: {e}", s.id));
            assert!(r.pass, "{}: {:#?}", s.id, r.observed);
        }
    }

    #[test]
    fn attacks_succeed_without_tags() {
        // The same scripts against the unprotected machine: the safe data
        // is reached.
        let cfg = PipelineConfig::default();
        let by_id = |id: &str| suite().into_iter().find(|s| s.id == id).unwrap();
        let s1 = by_id("s1").run(&cfg, unprotected()).unwrap();
        assert!(!s1.pass);
        assert_eq!(s1.observed.status, Status::Finished { value: Some(666) });
        let s2 = by_id("s2").run(&cfg, unprotected()).unwrap();
        assert!(!s2.pass);
        assert_eq!(s2.observed.mismatches[0].alloca, "secret");
        let s5 = by_id("s5").run(&cfg, unprotected()).unwrap();
        assert_eq!(s5.observed.status, Status::Finished { value: Some(666) });
    }

    #[test]
    fn disclosure_reveals_the_default_tag() {
        let r = by_id_run("s1");
        assert_eq!(r.observed.disclosures[0].tags, [Some(SAFE_DEFAULT)]);
        assert_eq!(&r.observed.disclosures[0].bytes[..8], &1234u64.to_le_bytes());
    }

    fn by_id_run(id: &str) -> ScenarioReport {
        let s = suite().into_iter().find(|s| s.id == id).unwrap();
        s.run(&PipelineConfig::default(), ScenarioOptions::default()).unwrap()
    }

    #[test]
    fn corrupting_a_safe_granule_is_refused() {
        let s = suite().into_iter().find(|s| s.id == "s2").unwrap();
        let prep = s.prepare(&PipelineConfig::default()).unwrap();
        let script = AdversaryScript {
            breakpoint: s.script.breakpoint.clone(),
            actions: vec![Action::CorruptUnsafe {
                at: Location::slot("main", "secret", 0),
                data: Data::Bytes(vec![0]),
            }],
            ..Default::default()
        };
        let err = run_scenario("x", "", &prep, &s.args, &script, &s.expectation, ScenarioOptions::default());
        assert!(matches!(err, Err(ScenarioError::Capability(_))), "{err:?}");
    }

    #[test]
    fn injecting_into_a_pointer_safe_slot_is_refused() {
        let s = suite().into_iter().find(|s| s.id == "s1").unwrap();
        let prep = s.prepare(&PipelineConfig::default()).unwrap();
        let script = AdversaryScript {
            breakpoint: s.script.breakpoint.clone(),
            actions: vec![Action::InjectPointer {
                target: Location::slot("main", "secret", 0),
                value: Word::Int(0),
            }],
            ..Default::default()
        };
        let err = run_scenario("x", "", &prep, &s.args, &script, &s.expectation, ScenarioOptions::default());
        assert!(matches!(err, Err(ScenarioError::Capability(_))), "{err:?}");
    }

    #[test]
    fn guessed_tag_injection_also_traps() {
        let s = suite().into_iter().find(|s| s.id == "s1").unwrap();
        let prep = s.prepare(&PipelineConfig::default()).unwrap();
        for tag in 0..16u8 {
            let script = AdversaryScript {
                breakpoint: s.script.breakpoint.clone(),
                actions: vec![Action::InjectPointer {
                    target: Location::slot("main", "rec", 24),
                    value: Word::AddressOf {
                        at: Location::slot("main", "secret", 0),
                        tag: TagSource::Fixed(tag),
                    },
                }],
                ..Default::default()
            };
            let r = run_scenario("x", "", &prep, &s.args, &script, &s.expectation, ScenarioOptions::default()).unwrap();
            assert!(r.pass, "tag {tag:#06b}: {:?}", r.observed.status);
        }
    }

    #[test]
    fn script_json_round_trip() {
        for s in suite() {
            let j = serde_json::to_string(&s.script).unwrap();
            let back: AdversaryScript = serde_json::from_str(&j).unwrap();
            assert_eq!(back, s.script);
        }
        let minimal: AdversaryScript = serde_json::from_str(r#"{"actions": []}"#).unwrap();
        assert_eq!(minimal, AdversaryScript::default());
    }

    #[test]
    fn unreached_breakpoint_is_an_error() {
        let s = suite().into_iter().find(|s| s.id == "s1").unwrap();
        let prep = s.prepare(&PipelineConfig::default()).unwrap();
        let script = AdversaryScript {
            breakpoint: Some(Breakpoint {
                hit: 2,
                ..Breakpoint::before("main", "q")
            }),
            ..Default::default()
        };
        let err = run_scenario("x", "", &prep, &s.args, &script, &s.expectation, ScenarioOptions::default());
        assert!(matches!(err, Err(ScenarioError::Breakpoint(_))));
    }
}
