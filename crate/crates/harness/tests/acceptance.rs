//! Acceptance suite: one PASS/FAIL line per criterion, each with a wall-clock
//! limit. Exits nonzero if any criterion fails.

use std::process::ExitCode;
use std::time::{Duration, Instant};

use tagguard_core::analysis::{analyze, AnalysisConfig, AnalysisResult, Class};
use tagguard_core::interp::{run_paired, PairVerdict, RunConfig};
use tagguard_core::ir::{parse_program, print_program};
use tagguard_core::mte::*;
use tagguard_harness::fuzz::{fuzz_conservativeness, program_source, FindingKind, FuzzConfig};
use tagguard_harness::scenario::{run_suite, ScenarioOptions};
use tagguard_harness::{corpus, corpus_overhead, measure_overhead, prepare, prepare_source, PipelineConfig};

type Check = Result<String, String>;
type Criterion = (&'static str, Duration, fn() -> Check);

fn ensure(ok: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if ok {
        Ok(())
    } else {
        Err(msg())
    }
}

fn class_of(r: &AnalysisResult, f: &str, a: &str) -> Result<Class, String> {
    r.alloca_by_name(f, a).map(|x| x.class).ok_or_else(|| format!("no alloca {f}/{a}"))
}

fn program(name: &str) -> Result<tagguard_core::ir::Program, String> {
    corpus::get(name)
        .ok_or_else(|| format!("missing corpus entry {name}"))?
        .program()
        .map_err(|d| d.to_string())
}

fn golden_classification() -> Check {
    let full = AnalysisConfig::default();
    let local = AnalysisConfig {
        module_pass: false,
        ..Default::default()
    };
    let f12 = program("func12")?;
    let (r, l) = (analyze(&f12, &full), analyze(&f12, &local));
    let l1 = analyze(&program("listing1")?, &full);
    let got = [
        ("func_1/A", class_of(&r, "func_1", "A")?, Class::Provable),
        ("func_1/B", class_of(&r, "func_1", "B")?, Class::Provable),
        ("func_1/B without module pass", class_of(&l, "func_1", "B")?, Class::Unsafe),
        ("buf_lin", class_of(&l1, "listing1", "buf_lin")?, Class::Guarded),
        ("buf_bad", class_of(&l1, "listing1", "buf_bad")?, Class::Unsafe),
        ("leaked", class_of(&l1, "listing1", "leaked")?, Class::Unsafe),
    ];
    for (what, have, want) in got {
        ensure(have == want, || format!("{what}: {have:?}, expected {want:?}"))?;
    }
    let step = l1.alloca_by_name("listing1", "buf_lin").and_then(|a| a.linear.as_ref()).and_then(|l| l.max_step);
    ensure(step == Some(4), || format!("buf_lin step {step:?}"))?;
    Ok("6 goldens, buf_lin step 4 < 16".into())
}

fn scenarios() -> Check {
    let reports = run_suite(&PipelineConfig::default(), ScenarioOptions::default());
    let mut ids = Vec::new();
    for r in reports {
        let r = r.map_err(|e| e.to_string())?;
        ensure(r.pass, || format!("{} failed: {:?}", r.id, r.observed.status))?;
        ids.push(r.id);
    }
    ensure(ids.len() == 6, || format!("{} scenarios", ids.len()))?;
    Ok(format!("{} pass", ids.join(" ")))
}

fn conservativeness() -> Check {
    let cfg = FuzzConfig {
        seed: 0,
        count: 1000,
        inputs: 4,
        ..Default::default()
    };
    let r = fuzz_conservativeness(&cfg);
    ensure(r.programs == 1000, || format!("{} programs", r.programs))?;
    ensure(r.oracle_violations() == 0, || format!("{} oracle violations: {:?}", r.oracle_violations(), r.findings.first()))?;
    ensure(r.guarded_oob_trapped == r.guarded_oob_runs, || {
        format!("{} of {} guarded overruns trapped", r.guarded_oob_trapped, r.guarded_oob_runs)
    })?;
    ensure(r.guarded_oob_runs > 0, || "no guarded overruns exercised".into())?;
    let mut weak = FuzzConfig { count: 200, ..cfg.clone() };
    weak.pipeline.analysis.weaken_bounds = true;
    let w = fuzz_conservativeness(&weak);
    ensure(w.count(FindingKind::SafeViolated) >= 1, || "weakened analysis went unnoticed".into())?;
    Ok(format!(
        "{} runs ({} exhausted), 0 violations, {}/{} guarded overruns trapped, self-test flagged {}",
        r.runs,
        r.exhausted,
        r.guarded_oob_trapped,
        r.guarded_oob_runs,
        w.count(FindingKind::SafeViolated)
    ))
}

fn transparency() -> Check {
    let benign = corpus::group(corpus::Group::Benign).count();
    ensure(benign >= 20, || format!("only {benign} benign programs"))?;
    let mut runs = 0;
    for elision in [true, false] {
        let mut cfg = PipelineConfig::default();
        cfg.analysis.static_elision = elision;
        for e in corpus::transparency_set() {
            let prep = prepare(e.program().map_err(|d| d.to_string())?, &cfg).map_err(|e| e.to_string())?;
            for c in e.cases() {
                let r = run_paired(&prep.plain, &prep.instrumented, &c.args, &RunConfig::default()).map_err(|e| e.to_string())?;
                ensure(r.verdict == PairVerdict::Equal && !r.instrumented.trapped(), || {
                    format!("{} {:?} (elision {elision}): {:?}", e.name, c.args, r.verdict)
                })?;
                runs += 1;
            }
        }
    }
    Ok(format!("{runs} paired runs equal, {benign} benign programs, elision on and off"))
}

fn machine_model() -> Check {
    const BASE: u64 = 0x4000;
    let fresh = || {
        let mut m = TagMemory::new();
        m.map(BASE, 4 * GRANULE);
        m
    };
    let off = MteConfig::default();
    let on = MteConfig {
        wildcard_enabled: true,
        ..off
    };
    ensure(!off.wildcard_enabled, || "wildcard on by default".into())?;
    let mut checks = 0;
    for alloc in 0..16u8 {
        let mut m = fresh();
        m.set_allocation_tags(BASE, GRANULE, alloc).map_err(|t| t.to_string())?;
        for tag in 0..16u8 {
            let p = PointerValue(BASE + 4).with_tag(tag);
            ensure(p.address_tag() == tag && p.address() == BASE + 4, || "tag round trip".into())?;
            let strict = m.check_access(p, 8, &off, false) == Verdict::Allowed;
            let wild = m.check_access(p, 8, &on, false) == Verdict::Allowed;
            let frame = m.check_access(p, 8, &off, true) == Verdict::Allowed;
            ensure(strict == (tag == alloc), || format!("pair {tag}/{alloc}"))?;
            ensure(wild == (tag == alloc || tag == WILDCARD), || format!("wildcard pair {tag}/{alloc}"))?;
            ensure(frame, || format!("frame base {tag}/{alloc}"))?;
            checks += 3;
            // Straddle: the second granule keeps the default tag.
            let s = m.check_access(PointerValue(BASE + 12).with_tag(tag), 8, &off, false) == Verdict::Allowed;
            ensure(s == (tag == alloc && alloc == SAFE_DEFAULT), || format!("straddle {tag}/{alloc}"))?;
            checks += 1;
        }
    }
    for size in 0..=48 {
        let mut m = fresh();
        m.set_allocation_tags(BASE, size, 1).map_err(|t| t.to_string())?;
        let tagged = (0..4).filter(|g| m.tag_at(BASE + g * GRANULE) == Some(1)).count() as u64;
        ensure(tagged == size.div_ceil(GRANULE), || format!("rounding of {size}"))?;
        checks += 1;
    }
    Ok(format!("{checks} enumerated checks"))
}

fn static_overhead() -> Check {
    let cfg = PipelineConfig::default();
    let a = corpus_overhead(&cfg).map_err(|e| e.to_string())?;
    let b = corpus_overhead(&cfg).map_err(|e| e.to_string())?;
    ensure(a.to_json() == b.to_json() && a.to_string() == b.to_string(), || "reports differ between runs".into())?;
    for f in &a.functions {
        ensure(f.insts_after >= f.insts_before && f.frame_after >= f.frame_before, || {
            format!("negative delta in {}", f.function)
        })?;
    }
    let one = |name: &str| -> Result<_, String> {
        let prep = prepare_source(corpus::get(name).unwrap().source, &cfg).map_err(|e| e.to_string())?;
        Ok(measure_overhead(&prep.plain, &prep.instrumented, &prep.plan, &prep.analysis))
    };
    let safe = one("all_safe")?;
    ensure(safe.frame_before == safe.frame_after, || format!("all_safe frame {} -> {}", safe.frame_before, safe.frame_after))?;
    let byte = one("one_byte_unsafe")?;
    ensure((byte.frame_before, byte.frame_after) == (1, 16), || {
        format!("one_byte_unsafe frame {} -> {}", byte.frame_before, byte.frame_after)
    })?;
    Ok(format!(
        "corpus insts +{:.1}%, frame +{:.1}%, safe {:.1}%; 1-byte unsafe 1 -> 16; all-safe frame delta 0",
        a.insts_delta_pct,
        a.frame_delta_pct,
        a.safe_proportion * 100.0
    ))
}

fn fixpoint() -> Check {
    let p = program("recursive")?;
    let n = p.functions.len() as u64;
    let mut line = Vec::new();
    for limit in [1u32, 4, 32] {
        let r = analyze(&p, &AnalysisConfig { limit, ..Default::default() });
        let bound = 2 * (limit as u64 + 2) * n;
        ensure(r.stats.iterations <= bound, || format!("limit {limit}: {} iterations > {bound}", r.stats.iterations))?;
        ensure(r.stats.limit_hits >= 1 && r.stats.marked_unsafe_by_limit >= 1, || format!("limit {limit}: {:?}", r.stats))?;
        for f in ["f", "g"] {
            let t = &r.tables[p.function_index(f).unwrap()];
            ensure(t.uses.iter().all(|u| u.unsafe_), || format!("{f} has a safe use at limit {limit}"))?;
        }
        ensure(class_of(&r, "main", "buf")? == Class::Unsafe, || "buf not unsafe".into())?;
        line.push(format!("limit {limit}: {} iterations", r.stats.iterations));
    }
    Ok(line.join(", "))
}

fn round_trip() -> Check {
    let check = |src: &str, what: &str| -> Result<(), String> {
        let p = parse_program(src).map_err(|d| format!("{what}: {d}"))?;
        let q = parse_program(&print_program(&p)).map_err(|d| format!("{what} reprinted: {d}"))?;
        ensure(p == q, || format!("{what} changed"))
    };
    for e in corpus::all() {
        check(e.source, e.name)?;
    }
    let cfg = FuzzConfig {
        seed: 8,
        ..Default::default()
    };
    for i in 0..500 {
        check(&program_source(&cfg, i), &format!("generated #{i}"))?;
    }
    Ok(format!("{} corpus + 500 generated programs", corpus::all().len()))
}

fn main() -> ExitCode {
    let criteria: [Criterion; 8] = [
        ("golden classification", Duration::from_secs(1), golden_classification),
        ("security scenarios", Duration::from_secs(5), scenarios),
        ("conservativeness fuzzing", Duration::from_secs(120), conservativeness),
        ("transparency", Duration::from_secs(10), transparency),
        ("machine model", Duration::from_secs(1), machine_model),
        ("static overhead", Duration::from_secs(10), static_overhead),
        ("fixpoint termination", Duration::from_secs(1), fixpoint),
        ("parser round trip", Duration::from_secs(30), round_trip),
    ];
    let mut failed = 0;
    for (i, (name, limit, f)) in criteria.into_iter().enumerate() {
        let t = Instant::now();
        let res = f();
        let took = t.elapsed();
        let res = match res {
            Ok(d) if took > limit => Err(format!("took {took:.2?}, limit {limit:?}; {d}")),
            r => r,
        };
        match res {
            Ok(d) => println!("PASS {} {name} ({took:.2?} / {limit:?}): {d}", i + 1),
            Err(e) => {
                failed += 1;
                println!("FAIL {} {name} ({took:.2?} / {limit:?}): {e}", i + 1);
            }
        }
    }
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
