//! Static overhead metrics: instruction counts and stack-frame bytes before
//! and after instrumentation, and the share of slot bytes that stay safe.

use crate::corpus;
use crate::pipeline::{prepare, PipelineConfig, PipelineError};
use serde::Serialize;
use std::fmt::{self, Write as _};
use tagguard_core::analysis::{AnalysisResult, Class};
use tagguard_core::instrument::{plain_frame_bytes, TagPlan};
use tagguard_core::ir::Program;

pub const OVERHEAD_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct FunctionOverhead {
    pub function: String,
    pub insts_before: u64,
    pub insts_after: u64,
    pub frame_before: u64,
    pub frame_after: u64,
    /// Statically sized slot bytes in Implicit, Provable or Guarded allocas.
    pub safe_bytes: u64,
    pub slot_bytes: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct OverheadReport {
    pub version: u32,
    pub functions: Vec<FunctionOverhead>,
    pub insts_before: u64,
    pub insts_after: u64,
    pub insts_delta_pct: f64,
    pub frame_before: u64,
    pub frame_after: u64,
    pub frame_delta_pct: f64,
    pub safe_bytes: u64,
    pub slot_bytes: u64,
    /// `safe_bytes / slot_bytes`, 1 when there are no slots.
    pub safe_proportion: f64,
}

fn delta_pct(before: u64, after: u64) -> f64 {
    if before == 0 {
        0.0
    } else {
        (after as f64 - before as f64) * 100.0 / before as f64
    }
}

impl OverheadReport {
    fn from_rows(functions: Vec<FunctionOverhead>) -> Self {
        let sum = |f: fn(&FunctionOverhead) -> u64| functions.iter().map(f).sum::<u64>();
        let (ib, ia) = (sum(|r| r.insts_before), sum(|r| r.insts_after));
        let (fb, fa) = (sum(|r| r.frame_before), sum(|r| r.frame_after));
        let (sb, tb) = (sum(|r| r.safe_bytes), sum(|r| r.slot_bytes));
        OverheadReport {
            version: OVERHEAD_VERSION,
            insts_before: ib,
            insts_after: ia,
            insts_delta_pct: delta_pct(ib, ia),
            frame_before: fb,
            frame_after: fa,
            frame_delta_pct: delta_pct(fb, fa),
            safe_bytes: sb,
            slot_bytes: tb,
            safe_proportion: if tb == 0 { 1.0 } else { sb as f64 / tb as f64 },
            functions,
        }
    }

    /// Concatenates reports, prefixing each function with `label/`.
    pub fn combine<'a>(parts: impl IntoIterator<Item = (&'a str, OverheadReport)>) -> Self {
        let rows = parts
            .into_iter()
            .flat_map(|(label, r)| {
                r.functions.into_iter().map(move |mut f| {
                    f.function = format!("{label}/{}", f.function);
                    f
                })
            })
            .collect();
        Self::from_rows(rows)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }
}

impl fmt::Display for OverheadReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let w = self.functions.iter().map(|r| r.function.len()).max().unwrap_or(0).max(8);
        let mut s = String::new();
        let _ = writeln!(
            s,
            "{:<w$}  {:>7} {:>7} {:>8}  {:>7} {:>7} {:>8}  {:>6}",
            "function", "insts", "insts'", "delta", "frame", "frame'", "delta", "safe"
        );
        let row = |s: &mut String, name: &str, ib, ia, fb, fa, sb, tb| {
            let safe = if tb == 0 { 100.0 } else { sb as f64 * 100.0 / tb as f64 };
            let _ = writeln!(
                s,
                "{:<w$}  {:>7} {:>7} {:>7.1}%  {:>7} {:>7} {:>7.1}%  {:>5.1}%",
                name,
                ib,
                ia,
                delta_pct(ib, ia),
                fb,
                fa,
                delta_pct(fb, fa),
                safe
            );
        };
        for r in &self.functions {
            row(&mut s, &r.function, r.insts_before, r.insts_after, r.frame_before, r.frame_after, r.safe_bytes, r.slot_bytes);
        }
        row(
            &mut s,
            "total",
            self.insts_before,
            self.insts_after,
            self.frame_before,
            self.frame_after,
            self.safe_bytes,
            self.slot_bytes,
        );
        f.write_str(&s)
    }
}

/// Compares a program with its instrumented form. Frame bytes are the sum
/// of static slot footprints: object sizes before, padded sizes and guard
/// granules after.
pub fn measure_overhead(plain: &Program, instrumented: &Program, plan: &TagPlan, result: &AnalysisResult) -> OverheadReport {
    let rows = plain
        .functions
        .iter()
        .enumerate()
        .map(|(i, f)| {
            let after = instrumented.function(&f.name).expect("instrumentation keeps functions");
            let (mut safe_bytes, mut slot_bytes) = (0, 0);
            for a in result.allocas.iter().filter(|a| a.func as usize == i) {
                let Some(size) = a.size else { continue };
                slot_bytes += size;
                if a.class != Class::Unsafe {
                    safe_bytes += size;
                }
            }
            let frame_before = plain_frame_bytes(f);
            FunctionOverhead {
                function: f.name.clone(),
                insts_before: f.insts().count() as u64,
                insts_after: after.insts().count() as u64,
                frame_before,
                frame_after: plan.frame(&f.name).map_or(frame_before, |l| l.frame_bytes),
                safe_bytes,
                slot_bytes,
            }
        })
        .collect();
    OverheadReport::from_rows(rows)
}

/// Overhead of every corpus program, functions labelled by entry name.
pub fn corpus_overhead(cfg: &PipelineConfig) -> Result<OverheadReport, PipelineError> {
    let parts = corpus::all()
        .iter()
        .map(|e| {
            let p = e.program().map_err(PipelineError::Parse)?;
            let prep = prepare(p, cfg)?;
            Ok((e.name, measure_overhead(&prep.plain, &prep.instrumented, &prep.plan, &prep.analysis)))
        })
        .collect::<Result<Vec<_>, PipelineError>>()?;
    Ok(OverheadReport::combine(parts))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::pipeline::prepare_source;

    fn report(name: &str) -> OverheadReport {
        let prep = prepare_source(corpus::get(name).unwrap().source, &PipelineConfig::default()).unwrap();
        measure_overhead(&prep.plain, &prep.instrumented, &prep.plan, &prep.analysis)
    }

    #[test]
    fn fully_safe_program_costs_no_frame_bytes() {
        let r = report("all_safe");
        assert_eq!(r.frame_before, r.frame_after);
        assert_eq!(r.frame_delta_pct, 0.0);
        assert_eq!(r.safe_proportion, 1.0);
        assert!(r.insts_after >= r.insts_before);
    }

    #[test]
    fn one_byte_unsafe_slot_pads_to_a_granule() {
        let r = report("one_byte_unsafe");
        let main = r.functions.iter().find(|f| f.function == "main").unwrap();
        assert_eq!((main.frame_before, main.frame_after), (1, 16));
        assert_eq!(main.safe_bytes, 0);
        assert!(main.insts_after > main.insts_before);
    }

    #[test]
    fn corpus_deltas_are_non_negative_and_reproducible() {
        let a = corpus_overhead(&PipelineConfig::default()).unwrap();
        for f in &a.functions {
            assert!(f.insts_after >= f.insts_before, "{}", f.function);
            assert!(f.frame_after >= f.frame_before, "{}", f.function);
        }
        assert!(a.insts_delta_pct >= 0.0 && a.frame_delta_pct >= 0.0);
        let b = corpus_overhead(&PipelineConfig::default()).unwrap();
        assert_eq!(a.to_json(), b.to_json());
        assert_eq!(a.to_string(), b.to_string());
        assert!(a.to_string().lines().last().unwrap().starts_with("total"));
    }
}
