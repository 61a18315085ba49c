use tagguard_core::ir::{parse_program, print_program};
use tagguard_harness::fuzz::{program_source, FuzzConfig};
use tagguard_harness::{corpus, prepare_source, PipelineConfig};

fn round_trip(src: &str, what: &str) {
    let p = parse_program(src).unwrap_or_else(|d| panic!("{what}: {d}"));
    let text = print_program(&p);
    let q = parse_program(&text).unwrap_or_else(|d| panic!("{what} reprinted: {d}\n{text}"));
    assert_eq!(p, q, "{what}");
    assert_eq!(print_program(&q), text, "{what}");
}

#[test]
fn corpus_round_trips() {
    for e in corpus::all() {
        round_trip(e.source, e.name);
    }
}

#[test]
fn instrumented_corpus_round_trips() {
    for e in corpus::all() {
        let prep = prepare_source(e.source, &PipelineConfig::default()).unwrap();
        round_trip(&print_program(&prep.instrumented), e.name);
    }
}

#[test]
fn five_hundred_generated_programs_round_trip() {
    let cfg = FuzzConfig {
        seed: 8,
        ..Default::default()
    };
    for i in 0..500 {
        round_trip(&program_source(&cfg, i), &format!("generated #{i}"));
    }
}
