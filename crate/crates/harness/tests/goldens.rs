//! Frozen tag-blind results of the corpus. Set `TAGGUARD_BLESS=1` to
//! regenerate pending (`?`) entries in place.

use tagguard_core::interp::{run, RunConfig};
use tagguard_harness::corpus::{self, with_cases, Case, Expected};

#[test]
fn corpus_goldens() {
    let bless = std::env::var_os("TAGGUARD_BLESS").is_some();
    let mut pending = Vec::new();
    for e in corpus::all() {
        let p = e.program().unwrap();
        let mut cases = e.cases();
        for c in &mut cases {
            let o = run(&p, &c.args, RunConfig::tag_blind()).unwrap();
            match &c.expected {
                Expected::Pending => {
                    pending.push(format!("{} {:?}", e.name, c.args));
                    c.expected = Expected::of(&o);
                }
                exp => assert!(exp.matches(&o), "{} {:?}: expected {exp:?}, got {o:?}", e.name, c.args),
            }
        }
        if bless && cases.iter().any(|c: &Case| c.expected != Expected::Pending) {
            let dir = match e.group {
                corpus::Group::Benign => "benign",
                corpus::Group::Listings => "listings",
                corpus::Group::Metrics => "metrics",
                corpus::Group::Scenarios => "scenarios",
            };
            let path = format!("{}/corpus/{dir}/{}.ir", env!("CARGO_MANIFEST_DIR"), e.name);
            std::fs::write(path, with_cases(e.source, &cases)).unwrap();
        }
    }
    assert!(bless || pending.is_empty(), "unfrozen goldens: {pending:?}");
}
