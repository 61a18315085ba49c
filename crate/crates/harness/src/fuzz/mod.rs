//! Conservativeness fuzzing: random programs, random inputs, and a shadow
//! bounds oracle that judges the classifier.
//!
//! A finding is one of
//! - an out-of-bounds or post-lifetime access to an Implicit or Provable
//!   allocation, in either run;
//! - an out-of-bounds access to a Guarded allocation in the plain run while
//!   the tagged run does not trap, or one the tagged machine let through;
//! - a clean plain run whose instrumented twin behaves differently.

pub mod gen;
pub mod oracle;

pub use gen::{generate, GenConfig};
pub use oracle::{BoundsOracle, Violation, ViolationKind};

use crate::pipeline::{prepare_source, PipelineConfig};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;
use tagguard_core::analysis::{AnalysisResult, Class};
use tagguard_core::interp::{run_with, Outcome, RunConfig, Status};

#[derive(Clone, Debug)]
pub struct FuzzConfig {
    pub seed: u64,
    pub count: usize,
    pub inputs: usize,
    pub gen: GenConfig,
    pub pipeline: PipelineConfig,
    pub step_budget: u64,
}

impl Default for FuzzConfig {
    fn default() -> Self {
        FuzzConfig {
            seed: 0,
            count: 1000,
            inputs: 4,
            gen: GenConfig::default(),
            pipeline: PipelineConfig::default(),
            step_budget: 200_000,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum FindingKind {
    /// An Implicit or Provable allocation was accessed out of bounds or
    /// after its lifetime.
    SafeViolated,
    /// A Guarded allocation was overrun without a trap.
    GuardedEscape,
    /// No memory error, yet the instrumented run differs.
    Divergence,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct Finding {
    pub kind: FindingKind,
    pub program: usize,
    pub program_seed: u64,
    pub args: Vec<i64>,
    pub detail: String,
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize)]
pub struct ClassCounts {
    pub implicit: usize,
    pub provable: usize,
    pub guarded: usize,
    pub unsafe_: usize,
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize)]
pub struct FuzzReport {
    pub seed: u64,
    pub programs: usize,
    pub runs: usize,
    /// Runs skipped because the plain run hit the step budget.
    pub exhausted: usize,
    /// Plain runs with at least one oracle violation.
    pub runs_with_violations: usize,
    /// Plain runs overrunning a Guarded allocation, and how many of those
    /// trapped under tags.
    pub guarded_oob_runs: usize,
    pub guarded_oob_trapped: usize,
    pub classes: ClassCounts,
    pub findings: Vec<Finding>,
}

impl FuzzReport {
    pub fn count(&self, k: FindingKind) -> usize {
        self.findings.iter().filter(|f| f.kind == k).count()
    }

    /// Findings that break the safety claims, as opposed to divergences.
    pub fn oracle_violations(&self) -> usize {
        self.count(FindingKind::SafeViolated) + self.count(FindingKind::GuardedEscape)
    }
}

fn program_seed(seed: u64, i: usize) -> u64 {
    seed ^ (i as u64).wrapping_mul(0x9e37_79b9_7f4a_7c15)
}

fn class_of(r: &AnalysisResult, v: &Violation) -> Option<Class> {
    let (f, val) = v.alloca?;
    r.alloca(f as usize, val).map(|a| a.class)
}

/// The generated source of program `i`.
pub fn program_source(cfg: &FuzzConfig, i: usize) -> String {
    generate(&mut ChaCha8Rng::seed_from_u64(program_seed(cfg.seed, i)), &cfg.gen)
}

fn random_args(rng: &mut ChaCha8Rng) -> Vec<i64> {
    (0..2)
        .map(|_| match rng.gen_range(0..10) {
            0 => rng.gen_range(-1000..1000),
            _ => rng.gen_range(-4..40),
        })
        .collect()
}

fn check_program(cfg: &FuzzConfig, i: usize) -> FuzzReport {
    let pseed = program_seed(cfg.seed, i);
    let mut rng = ChaCha8Rng::seed_from_u64(pseed);
    let src = generate(&mut rng, &cfg.gen);
    let inputs: Vec<Vec<i64>> = (0..cfg.inputs).map(|_| random_args(&mut rng)).collect();
    judge(cfg, &src, &inputs, i, pseed)
}

/// Judges a hand-written program on the given inputs with the oracle and
/// pipeline settings of `cfg`.
pub fn judge_source(cfg: &FuzzConfig, src: &str, inputs: &[Vec<i64>]) -> FuzzReport {
    judge(cfg, src, inputs, 0, 0)
}

fn judge(cfg: &FuzzConfig, src: &str, inputs: &[Vec<i64>], i: usize, pseed: u64) -> FuzzReport {
    let mut rep = FuzzReport {
        programs: 1,
        ..Default::default()
    };
    let finding = |kind, args: &[i64], detail: String| Finding {
        kind,
        program: i,
        program_seed: pseed,
        args: args.to_vec(),
        detail,
    };
    let prep = match prepare_source(src, &cfg.pipeline) {
        Ok(p) => p,
        Err(e) => {
            rep.findings.push(finding(FindingKind::Divergence, &[], format!("pipeline: {e}")));
            return rep;
        }
    };
    for a in &prep.analysis.allocas {
        let c = &mut rep.classes;
        *match a.class {
            Class::Implicit => &mut c.implicit,
            Class::Provable => &mut c.provable,
            Class::Guarded => &mut c.guarded,
            Class::Unsafe => &mut c.unsafe_,
        } += 1;
    }
    let run_cfg = RunConfig {
        step_budget: cfg.step_budget,
        ..RunConfig::default()
    };
    let observe = |p, args: &[i64], mte| -> (Outcome, Vec<Violation>) {
        let mut o = BoundsOracle::new();
        let out = run_with(p, args, RunConfig { mte, ..run_cfg.clone() }, &mut o).expect("generated programs validate");
        (out, o.violations)
    };
    for args in inputs {
        let (plain, pv) = observe(&prep.plain, args, false);
        if matches!(plain.status, Status::Exhausted { .. }) {
            rep.exhausted += 1;
            continue;
        }
        rep.runs += 1;
        let (tagged, tv) = observe(&prep.instrumented, args, true);
        if !pv.is_empty() {
            rep.runs_with_violations += 1;
        }
        let mut guarded_oob = false;
        for v in &pv {
            match class_of(&prep.analysis, v) {
                Some(Class::Implicit | Class::Provable) => rep.findings.push(finding(
                    FindingKind::SafeViolated,
                    args,
                    format!("plain run: {v:?}"),
                )),
                Some(Class::Guarded) => guarded_oob = true,
                _ => {}
            }
        }
        if guarded_oob {
            rep.guarded_oob_runs += 1;
            if tagged.trapped() {
                rep.guarded_oob_trapped += 1;
            } else {
                rep.findings.push(finding(
                    FindingKind::GuardedEscape,
                    args,
                    format!("tagged run did not trap: {:?}", tagged.status),
                ));
            }
        }
        for v in tv.iter().filter(|v| v.allowed) {
            match class_of(&prep.analysis, v) {
                Some(Class::Implicit | Class::Provable) => rep.findings.push(finding(
                    FindingKind::SafeViolated,
                    args,
                    format!("tagged run: {v:?}"),
                )),
                Some(Class::Guarded) => rep.findings.push(finding(
                    FindingKind::GuardedEscape,
                    args,
                    format!("tagged run let through {v:?}"),
                )),
                _ => {}
            }
        }
        let clean = pv.is_empty() && matches!(plain.status, Status::Finished { .. });
        let same = plain.status == tagged.status && plain.output == tagged.output && tagged.hygiene.is_empty();
        if clean && !same && !matches!(tagged.status, Status::Exhausted { .. }) {
            rep.findings.push(finding(
                FindingKind::Divergence,
                args,
                format!(
                    "plain {:?} {:?}, tagged {:?} {:?}, hygiene {}",
                    plain.status,
                    plain.output,
                    tagged.status,
                    tagged.output,
                    tagged.hygiene.len()
                ),
            ));
        }
    }
    rep
}

fn merge(mut a: FuzzReport, b: FuzzReport) -> FuzzReport {
    a.programs += b.programs;
    a.runs += b.runs;
    a.exhausted += b.exhausted;
    a.runs_with_violations += b.runs_with_violations;
    a.guarded_oob_runs += b.guarded_oob_runs;
    a.guarded_oob_trapped += b.guarded_oob_trapped;
    a.classes.implicit += b.classes.implicit;
    a.classes.provable += b.classes.provable;
    a.classes.guarded += b.classes.guarded;
    a.classes.unsafe_ += b.classes.unsafe_;
    a.findings.extend(b.findings);
    a
}

/// Generates, instruments and judges `cfg.count` programs in parallel. The
/// report is identical for identical configurations.
pub fn fuzz_conservativeness(cfg: &FuzzConfig) -> FuzzReport {
    let parts: Vec<FuzzReport> = (0..cfg.count).into_par_iter().map(|i| check_program(cfg, i)).collect();
    let mut rep = parts.into_iter().fold(FuzzReport::default(), merge);
    rep.seed = cfg.seed;
    rep
}
