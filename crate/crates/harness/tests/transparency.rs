use tagguard_core::analysis::AnalysisConfig;
use tagguard_core::interp::{run_paired, PairVerdict, RunConfig};
use tagguard_harness::corpus;
use tagguard_harness::{prepare, PipelineConfig};

fn check(static_elision: bool) {
    let cfg = PipelineConfig {
        analysis: AnalysisConfig {
            static_elision,
            ..Default::default()
        },
        ..Default::default()
    };
    let mut failures = Vec::new();
    for e in corpus::transparency_set() {
        let prep = prepare(e.program().unwrap(), &cfg).unwrap();
        for c in e.cases() {
            let r = run_paired(&prep.plain, &prep.instrumented, &c.args, &RunConfig::default()).unwrap();
            if r.verdict != PairVerdict::Equal || r.instrumented.trapped() {
                failures.push(format!("{} {:?}: {:?}", e.name, c.args, r.verdict));
            }
        }
    }
    assert!(failures.is_empty(), "{failures:#?}");
}

#[test]
fn corpus_is_transparent_with_elision() {
    check(true);
}

#[test]
fn corpus_is_transparent_without_elision() {
    check(false);
}
