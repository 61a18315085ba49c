use crate::config::{Config, Format};
use crate::{CliError, Command};
use serde::Serialize;
use serde_json::{json, Value};
use std::fmt::Write as _;
use std::io::Write as _;
use std::path::{Path, PathBuf};
use tagguard_core::analysis::analyze;
use tagguard_core::interp::{run, RunConfig, RunError, Status};
use tagguard_core::ir::{parse_program, print_program, Program};
use tagguard_harness::fuzz::{fuzz_conservativeness, FuzzConfig};
use tagguard_harness::scenario::{self, run_scenario, AdversaryScript, Expectation, ScenarioError, ScenarioOptions, ScenarioReport};
use tagguard_harness::{corpus_overhead, measure_overhead, prepare, prepare_source, OverheadReport, PipelineError, Prepared};

/// Version of every JSON document the CLI emits.
pub const SCHEMA_VERSION: u32 = 1;

pub fn dispatch(cmd: Command, cfg: &Config) -> Result<u8, CliError> {
    match cmd {
        Command::Analyze { file } => analyze_cmd(&file, cfg),
        Command::Instrument { file, out, plan } => instrument_cmd(&file, out.as_deref(), plan, cfg),
        Command::Run {
            file,
            args,
            instrument,
            trace,
        } => run_cmd(&file, &args, instrument, trace.as_deref(), cfg),
        Command::Attack {
            file,
            scenario,
            script,
            args,
            plan,
        } => attack_cmd(file.as_deref(), scenario.as_deref(), script.as_deref(), args, plan, cfg),
        Command::Fuzz { inputs, weaken } => fuzz_cmd(inputs, weaken, cfg),
        Command::Report { files, json } => report_cmd(&files, json.as_deref(), cfg),
    }
}

fn envelope(kind: &str, data: impl Serialize) -> Value {
    json!({
        "schema": format!("tagguard.{kind}"),
        "version": SCHEMA_VERSION,
        "data": data,
    })
}

fn emit(cfg: &Config, kind: &str, data: impl Serialize, table: impl FnOnce() -> String) {
    match cfg.output {
        Format::Json => println!("{}", serde_json::to_string_pretty(&envelope(kind, data)).expect("serializable")),
        Format::Table => print!("{}", table()),
    }
}

fn read(path: &Path) -> Result<String, CliError> {
    std::fs::read_to_string(path).map_err(|source| CliError::Io {
        path: path.to_path_buf(),
        source,
    })
}

fn write(path: &Path, text: &str) -> Result<(), CliError> {
    std::fs::write(path, text).map_err(|source| CliError::Io {
        path: path.to_path_buf(),
        source,
    })
}

fn read_program(path: &Path) -> Result<(String, Program), CliError> {
    let src = read(path)?;
    let p = parse_program(&src).map_err(|diag| CliError::Parse {
        path: path.to_path_buf(),
        diag: Box::new(diag),
    })?;
    Ok((src, p))
}

fn pipeline_err(path: &Path, e: PipelineError) -> CliError {
    match e {
        PipelineError::Parse(diag) => CliError::Parse {
            path: path.to_path_buf(),
            diag: Box::new(diag),
        },
        e => CliError::Invalid(format!("{}: {e}", path.display())),
    }
}

fn with_suffix(p: &Path, suffix: &str) -> PathBuf {
    let mut s = p.as_os_str().to_owned();
    s.push(suffix);
    PathBuf::from(s)
}

fn analyze_cmd(file: &Path, cfg: &Config) -> Result<u8, CliError> {
    let (_, p) = read_program(file)?;
    let r = analyze(&p, &cfg.pipeline().analysis);
    emit(
        cfg,
        "analysis",
        json!({ "file": file, "allocas": r.allocas, "tfp": r.tfp, "stats": r.stats }),
        || {
            let mut s = format!("{:<16} {:<16} {:>6}  {:<9} {}\n", "function", "alloca", "size", "class", "pointer-safe");
            for a in &r.allocas {
                let size = a.size.map_or("dyn".to_string(), |n| n.to_string());
                let class = format!("{:?}", a.class);
                let _ = writeln!(s, "{:<16} {:<16} {:>6}  {:<9} {}", a.function, a.name, size, class, a.pointer_safe);
            }
            let _ = writeln!(
                s,
                "{} iterations, {} limit hits, {} tfp sites",
                r.stats.iterations,
                r.stats.limit_hits,
                r.tfp.len()
            );
            s
        },
    );
    Ok(0)
}

/// Sidecar written next to an instrumented program: the plan plus what is
/// needed to rebuild it.
fn sidecar(src: &str, prep: &Prepared, cfg: &Config) -> String {
    let doc = envelope(
        "plan",
        json!({
            "config": {
                "limit": cfg.limit,
                "guard_width": cfg.guard_width,
                "static_elision": cfg.static_elision,
            },
            "source": src,
            "plan": prep.plan,
        }),
    );
    serde_json::to_string_pretty(&doc).expect("serializable") + "\n"
}

fn instrument_cmd(file: &Path, out: Option<&Path>, plan: Option<PathBuf>, cfg: &Config) -> Result<u8, CliError> {
    let (src, p) = read_program(file)?;
    let prep = prepare(p, &cfg.pipeline()).map_err(|e| pipeline_err(file, e))?;
    let text = print_program(&prep.instrumented);
    let plan_path = plan.or_else(|| out.map(|o| with_suffix(o, ".plan.json")));
    if let Some(pp) = &plan_path {
        write(pp, &sidecar(&src, &prep, cfg))?;
    }
    let Some(out) = out else {
        print!("{text}");
        return Ok(0);
    };
    write(out, &text)?;
    let summary = json!({
        "file": file,
        "out": out,
        "plan": plan_path,
        "tagged_allocas": prep.plan.tags.iter().filter(|t| t.tag != tagguard_core::mte::SAFE_DEFAULT).count(),
        "allocas": prep.plan.tags.len(),
        "guards": prep.plan.guards.len(),
        "tfp_sites": prep.plan.tfp.len(),
    });
    emit(cfg, "instrument", &summary, || {
        format!(
            "wrote {} ({} allocas, {} guards), plan {}\n",
            out.display(),
            prep.plan.tags.len(),
            prep.plan.guards.len(),
            plan_path.as_deref().map_or("-".into(), |p| p.display().to_string())
        )
    });
    Ok(0)
}

fn run_error(e: RunError) -> CliError {
    match e {
        RunError::ArgCount { .. } => CliError::Usage(e.to_string()),
        e => CliError::Invalid(e.to_string()),
    }
}

fn status_code(s: &Status) -> u8 {
    match s {
        Status::Finished { .. } => 0,
        Status::Trapped(_) => 2,
        Status::Exhausted { .. } => 3,
    }
}

fn describe(s: &Status) -> String {
    match s {
        Status::Finished { value: Some(v) } => format!("finished: ret {v}"),
        Status::Finished { value: None } => "finished: ret void".into(),
        Status::Trapped(t) => format!("trapped in @{} {}:{}: {}", t.function, t.block, t.index, t.trap),
        Status::Exhausted { limit } => format!("exhausted: {limit:?} limit"),
    }
}

fn run_cmd(file: &Path, args: &[i64], instrument: bool, trace: Option<&Path>, cfg: &Config) -> Result<u8, CliError> {
    let (_, p) = read_program(file)?;
    let p = if instrument {
        prepare(p, &cfg.pipeline()).map_err(|e| pipeline_err(file, e))?.instrumented
    } else {
        p
    };
    let rc = RunConfig {
        mte: cfg.mte,
        wildcard: cfg.wildcard,
        step_budget: cfg.step_budget,
        trace: trace.is_some(),
        ..RunConfig::default()
    };
    let out = run(&p, args, rc).map_err(run_error)?;
    if let Some(t) = trace {
        let f = std::fs::File::create(t).map_err(|source| CliError::Io {
            path: t.to_path_buf(),
            source,
        })?;
        let mut w = std::io::BufWriter::new(f);
        for ev in &out.trace {
            let line = serde_json::to_string(ev).expect("serializable");
            writeln!(w, "{line}").map_err(|source| CliError::Io {
                path: t.to_path_buf(),
                source,
            })?;
        }
    }
    emit(
        cfg,
        "run",
        json!({
            "file": file,
            "args": args,
            "mte": cfg.mte,
            "status": out.status,
            "output": out.output,
            "steps": out.steps,
            "hygiene": out.hygiene,
        }),
        || {
            let mut s = describe(&out.status) + "\n";
            if !out.output.is_empty() {
                let o: Vec<String> = out.output.iter().map(i64::to_string).collect();
                let _ = writeln!(s, "output: {}", o.join(" "));
            }
            let _ = writeln!(s, "steps: {}", out.steps);
            for h in &out.hygiene {
                let _ = writeln!(s, "stale tag {:#06b} at {:#x} after @{}", h.tag, h.address, h.function);
            }
            s
        },
    );
    Ok(status_code(&out.status))
}

/// Prepares an attack target. An instrumented file is rebuilt from its plan
/// sidecar and must match it exactly.
fn load_target(file: &Path, plan: Option<PathBuf>, cfg: &Config) -> Result<Prepared, CliError> {
    let (_, p) = read_program(file)?;
    if !p.has_instrumentation() {
        return prepare(p, &cfg.pipeline()).map_err(|e| pipeline_err(file, e));
    }
    let plan = plan.unwrap_or_else(|| with_suffix(file, ".plan.json"));
    let doc: Value = serde_json::from_str(&read(&plan)?).map_err(|e| CliError::Invalid(format!("{}: {e}", plan.display())))?;
    let bad = |what: &str| CliError::Invalid(format!("{}: {what}", plan.display()));
    if doc["schema"] != "tagguard.plan" || doc["version"] != SCHEMA_VERSION {
        return Err(bad("not a version 1 plan sidecar"));
    }
    let data = &doc["data"];
    let source = data["source"].as_str().ok_or_else(|| bad("missing source"))?;
    let c = &data["config"];
    let mut built = cfg.clone();
    built.limit = c["limit"].as_u64().ok_or_else(|| bad("missing config.limit"))? as u32;
    built.guard_width = c["guard_width"].as_u64().ok_or_else(|| bad("missing config.guard_width"))?;
    built.static_elision = c["static_elision"].as_bool().ok_or_else(|| bad("missing config.static_elision"))?;
    let prep = prepare_source(source, &built.pipeline()).map_err(|e| pipeline_err(&plan, e))?;
    if print_program(&prep.instrumented) != print_program(&p) {
        return Err(CliError::Invalid(format!(
            "{} does not match the program rebuilt from {}",
            file.display(),
            plan.display()
        )));
    }
    Ok(prep)
}

fn scenario_err(e: ScenarioError) -> CliError {
    CliError::Invalid(e.to_string())
}

/// A script file is an adversary script, optionally with `expectation`
/// and `args` keys next to the script fields.
fn read_script(path: &Path) -> Result<(AdversaryScript, Expectation, Option<Vec<i64>>), CliError> {
    let bad = |e: serde_json::Error| CliError::Invalid(format!("{}: {e}", path.display()));
    let mut v: Value = serde_json::from_str(&read(path)?).map_err(bad)?;
    let obj = v
        .as_object_mut()
        .ok_or_else(|| CliError::Invalid(format!("{}: expected a JSON object", path.display())))?;
    let expectation = match obj.remove("expectation") {
        Some(e) => serde_json::from_value(e).map_err(bad)?,
        None => Expectation::MustTrap { alloc_tag: None },
    };
    let args = obj.remove("args").map(serde_json::from_value).transpose().map_err(bad)?;
    Ok((serde_json::from_value(v).map_err(bad)?, expectation, args))
}

fn attack_cmd(
    file: Option<&Path>,
    scenario: Option<&str>,
    script: Option<&Path>,
    args: Option<Vec<i64>>,
    plan: Option<PathBuf>,
    cfg: &Config,
) -> Result<u8, CliError> {
    let opts = ScenarioOptions {
        mte: cfg.mte,
        wildcard: cfg.wildcard,
    };
    let mut reports: Vec<ScenarioReport> = Vec::new();
    if let Some(path) = script {
        let file = file.ok_or_else(|| CliError::Usage("--script needs a target file".into()))?;
        let prep = load_target(file, plan, cfg)?;
        let (s, expectation, script_args) = read_script(path)?;
        let args = args.or(script_args).unwrap_or_default();
        let id = path.file_stem().map_or("script".into(), |s| s.to_string_lossy().into_owned());
        reports.push(run_scenario(&id, "adversary script", &prep, &args, &s, &expectation, opts).map_err(scenario_err)?);
    } else {
        let id = scenario.ok_or_else(|| CliError::Usage("give --scenario or --script".into()))?;
        let suite = scenario::suite();
        let chosen: Vec<_> = if id == "all" {
            if file.is_some() {
                return Err(CliError::Usage("--scenario all runs the bundled targets; drop the file".into()));
            }
            suite.iter().collect()
        } else {
            let ids: Vec<&str> = suite.iter().map(|s| s.id).collect();
            vec![suite
                .iter()
                .find(|s| s.id == id)
                .ok_or_else(|| CliError::Usage(format!("unknown scenario {id:?} (known: {}, all)", ids.join(", "))))?]
        };
        for s in chosen {
            let prep = match file {
                Some(f) => load_target(f, plan.clone(), cfg)?,
                None => s.prepare(&cfg.pipeline()).map_err(scenario_err)?,
            };
            let args = args.clone().unwrap_or_else(|| s.args.clone());
            reports.push(run_scenario(s.id, s.title, &prep, &args, &s.script, &s.expectation, opts).map_err(scenario_err)?);
        }
    }
    let all_pass = reports.iter().all(|r| r.pass);
    emit(cfg, "attack", &reports, || {
        let mut s = String::new();
        for r in &reports {
            let verdict = if r.pass { "PASS" } else { "FAIL" };
            let _ = writeln!(s, "{:<4} {verdict}  {}: {}", r.id, r.title, describe(&r.observed.status));
            for m in &r.observed.mismatches {
                let _ = writeln!(s, "       corrupted {m:?}");
            }
        }
        s
    });
    Ok(if all_pass { 0 } else { 1 })
}

fn fuzz_cmd(inputs: usize, weaken: bool, cfg: &Config) -> Result<u8, CliError> {
    let mut fc = FuzzConfig {
        seed: cfg.seed,
        count: cfg.count,
        inputs,
        pipeline: cfg.pipeline(),
        ..FuzzConfig::default()
    };
    fc.step_budget = fc.step_budget.min(cfg.step_budget);
    fc.pipeline.analysis.weaken_bounds = weaken;
    let r = fuzz_conservativeness(&fc);
    emit(cfg, "fuzz", &r, || {
        let mut s = String::new();
        let _ = writeln!(s, "seed {} programs {} runs {} exhausted {}", r.seed, r.programs, r.runs, r.exhausted);
        let c = &r.classes;
        let _ = writeln!(
            s,
            "allocas: {} implicit, {} provable, {} guarded, {} unsafe",
            c.implicit, c.provable, c.guarded, c.unsafe_
        );
        let _ = writeln!(
            s,
            "runs with out-of-bounds accesses {}, guarded overruns trapped {}/{}",
            r.runs_with_violations, r.guarded_oob_trapped, r.guarded_oob_runs
        );
        let _ = writeln!(s, "findings {}", r.findings.len());
        for f in r.findings.iter().take(20) {
            let _ = writeln!(s, "  #{} {:?} args {:?}: {}", f.program, f.kind, f.args, f.detail);
        }
        s
    });
    Ok(if r.findings.is_empty() { 0 } else { 1 })
}

fn report_cmd(files: &[PathBuf], json_out: Option<&Path>, cfg: &Config) -> Result<u8, CliError> {
    let pipeline = cfg.pipeline();
    let report = if files.is_empty() {
        corpus_overhead(&pipeline).map_err(|e| CliError::Invalid(e.to_string()))?
    } else {
        let mut parts = Vec::new();
        for f in files {
            let (_, p) = read_program(f)?;
            let prep = prepare(p, &pipeline).map_err(|e| pipeline_err(f, e))?;
            let label = f.file_stem().map_or("?".into(), |s| s.to_string_lossy().into_owned());
            parts.push((label, measure_overhead(&prep.plain, &prep.instrumented, &prep.plan, &prep.analysis)));
        }
        if parts.len() == 1 {
            parts.pop().unwrap().1
        } else {
            OverheadReport::combine(parts.iter().map(|(l, r)| (l.as_str(), r.clone())))
        }
    };
    if let Some(path) = json_out {
        let doc = serde_json::to_string_pretty(&envelope("overhead", &report)).expect("serializable");
        write(path, &(doc + "\n"))?;
    }
    emit(cfg, "overhead", &report, || report.to_string());
    Ok(0)
}
