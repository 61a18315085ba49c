//! The bundled IR corpus.
//!
//! Each file may carry `; run: <args> -> <result>` header lines. The result
//! is `ret N [out...]`, `ret void [out...]`, `trap` or `?` (not yet frozen);
//! goldens are produced by the tag-blind interpreter and checked in. A
//! `; hostile` line marks programs that misbehave without any adversary.

use serde::Serialize;
use tagguard_core::interp::{Outcome, Status};
use tagguard_core::ir::{parse_program, Diagnostic, Program};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Group {
    /// Well-behaved programs for the transparency suite.
    Benign,
    /// Transliterations of the reference listings.
    Listings,
    /// Programs with a known overhead profile.
    Metrics,
    /// Targets of the adversary scenarios.
    Scenarios,
}

#[derive(Clone, Copy, Debug)]
pub struct Entry {
    pub group: Group,
    pub name: &'static str,
    pub source: &'static str,
}

macro_rules! corpus {
    ($($group:ident / $name:literal),* $(,)?) => {
        &[$(Entry {
            group: Group::$group,
            name: $name,
            source: include_str!(concat!("../corpus/", corpus!(@dir $group), "/", $name, ".ir")),
        }),*]
    };
    (@dir Benign) => { "benign" };
    (@dir Listings) => { "listings" };
    (@dir Metrics) => { "metrics" };
    (@dir Scenarios) => { "scenarios" };
}

pub static ENTRIES: &[Entry] = corpus![
    Benign / "arith_mix",
    Benign / "binary_search",
    Benign / "bubble_sort",
    Benign / "byte_ops",
    Benign / "collatz",
    Benign / "countdown",
    Benign / "extern_sink",
    Benign / "factorial_rec",
    Benign / "fib_memo",
    Benign / "gcd_loop",
    Benign / "global_counter",
    Benign / "late_alloca",
    Benign / "linked_list",
    Benign / "matrix",
    Benign / "memcpy_loop",
    Benign / "nested_calls",
    Benign / "null_list",
    Benign / "ptr_array",
    Benign / "ptr_roundtrip",
    Benign / "sentinel_minus1",
    Benign / "strlen_global",
    Benign / "struct_ptr_field",
    Benign / "sum_array",
    Benign / "swap_callee",
    Benign / "vla_sum",
    Listings / "func12",
    Listings / "listing1",
    Listings / "recursive",
    Metrics / "all_safe",
    Metrics / "one_byte_unsafe",
    Scenarios / "s1_forged_injection",
    Scenarios / "s2_unsafe_corruption",
    Scenarios / "s3_linear_overflow",
    Scenarios / "s4_use_after_return",
    Scenarios / "s5_inttoptr_forgery",
    Scenarios / "s6_null_sentinel",
];

pub fn all() -> &'static [Entry] {
    ENTRIES
}

pub fn group(g: Group) -> impl Iterator<Item = &'static Entry> {
    ENTRIES.iter().filter(move |e| e.group == g)
}

pub fn get(name: &str) -> Option<&'static Entry> {
    ENTRIES.iter().find(|e| e.name == name)
}

/// Everything whose recorded runs must be reproduced by the instrumented
/// program. Scenario targets are included unless they misbehave on their
/// own inputs.
pub fn transparency_set() -> impl Iterator<Item = &'static Entry> {
    ENTRIES.iter().filter(|e| !e.is_hostile())
}

impl Entry {
    pub fn program(&self) -> Result<Program, Diagnostic> {
        parse_program(self.source)
    }

    pub fn cases(&self) -> Vec<Case> {
        parse_cases(self.source)
    }

    /// Marked with a `; hostile` line: commits a memory error by itself.
    pub fn is_hostile(&self) -> bool {
        self.source.lines().any(|l| l.trim() == "; hostile")
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Expected {
    Pending,
    Trap,
    Finished { value: Option<i64>, output: Vec<i64> },
}

impl Expected {
    pub fn of(o: &Outcome) -> Expected {
        match o.status {
            Status::Finished { value } => Expected::Finished {
                value,
                output: o.output.clone(),
            },
            _ => Expected::Trap,
        }
    }

    pub fn matches(&self, o: &Outcome) -> bool {
        *self == Expected::of(o)
    }

    fn render(&self) -> String {
        match self {
            Expected::Pending => "?".into(),
            Expected::Trap => "trap".into(),
            Expected::Finished { value, output } => {
                let mut s = match value {
                    Some(v) => format!("ret {v}"),
                    None => "ret void".into(),
                };
                for o in output {
                    s += &format!(" {o}");
                }
                s
            }
        }
    }

    fn parse(s: &str) -> Option<Expected> {
        let mut words = s.split_whitespace();
        match words.next()? {
            "?" => Some(Expected::Pending),
            "trap" => Some(Expected::Trap),
            "ret" => {
                let value = match words.next()? {
                    "void" => None,
                    v => Some(v.parse().ok()?),
                };
                let output = words.map(str::parse).collect::<Result<_, _>>().ok()?;
                Some(Expected::Finished { value, output })
            }
            _ => None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct Case {
    pub args: Vec<i64>,
    pub expected: Expected,
}

impl Case {
    pub fn render(&self) -> String {
        let args: Vec<String> = self.args.iter().map(i64::to_string).collect();
        format!("; run: {} -> {}", args.join(" "), self.expected.render())
    }
}

/// Reads the `; run:` header lines of a corpus source. Malformed lines are
/// skipped.
pub fn parse_cases(source: &str) -> Vec<Case> {
    source
        .lines()
        .filter_map(|l| l.trim().strip_prefix("; run:"))
        .filter_map(|rest| {
            let (args, exp) = rest.split_once("->")?;
            let args = args
                .split_whitespace()
                .map(str::parse)
                .collect::<Result<Vec<i64>, _>>()
                .ok()?;
            Some(Case {
                args,
                expected: Expected::parse(exp)?,
            })
        })
        .collect()
}

/// Rewrites the `; run:` lines of `source` with `cases`, in order.
pub fn with_cases(source: &str, cases: &[Case]) -> String {
    let mut it = cases.iter();
    let mut out = String::new();
    for l in source.lines() {
        if l.trim().starts_with("; run:") {
            if let Some(c) = it.next() {
                out += &c.render();
                out.push('\n');
            }
        } else {
            out += l;
            out.push('\n');
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn case_lines_round_trip() {
        let src = "; run: 1 -2 -> ret 5 7 8\n; run:  -> ret void\n; run: 3 -> trap\n; run: x -> ?\nfunc @main() {\nentry:\n  ret\n}\n";
        let cases = parse_cases(src);
        assert_eq!(cases.len(), 3);
        assert_eq!(cases[0].args, [1, -2]);
        assert_eq!(
            cases[0].expected,
            Expected::Finished {
                value: Some(5),
                output: vec![7, 8]
            }
        );
        assert_eq!(parse_cases(&with_cases(src, &cases)), cases);
    }

    #[test]
    fn every_entry_parses_and_has_a_case() {
        for e in all() {
            e.program().unwrap_or_else(|d| panic!("{}: {d}", e.name));
            assert!(!e.cases().is_empty(), "{} has no run lines", e.name);
        }
        assert!(group(Group::Benign).count() >= 20);
    }
}
