//! `key = value` configuration files. Command-line flags override file
//! values, which override the defaults below.

use std::fmt;
use std::str::FromStr;
use tagguard_core::analysis::DEFAULT_LIMIT;
use tagguard_core::interp::DEFAULT_STEP_BUDGET;
use tagguard_harness::PipelineConfig;

#[derive(Clone, Copy, Debug, PartialEq, Eq, clap::ValueEnum)]
pub enum Format {
    Json,
    Table,
}

impl FromStr for Format {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "json" => Ok(Format::Json),
            "table" => Ok(Format::Table),
            _ => Err(format!("expected json or table, got {s:?}")),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Config {
    /// Worklist visits per function before giving up (default 32).
    pub limit: u32,
    /// Guard width in granules (default 1).
    pub guard_width: u64,
    /// Let tag-0 pointers through (default off).
    pub wildcard: bool,
    /// Skip checks on statically resolved pointer loads (default on).
    pub static_elision: bool,
    /// Check tags at run time (default on).
    pub mte: bool,
    pub step_budget: u64,
    /// Fuzzing seed and program count (0 and 1000).
    pub seed: u64,
    pub count: usize,
    /// Default json.
    pub output: Format,
}

impl Default for Config {
    fn default() -> Self {
        Config {
            limit: DEFAULT_LIMIT,
            guard_width: 1,
            wildcard: false,
            static_elision: true,
            mte: true,
            step_budget: DEFAULT_STEP_BUDGET,
            seed: 0,
            count: 1000,
            output: Format::Json,
        }
    }
}

#[derive(Debug, thiserror::Error, PartialEq, Eq)]
#[error("line {line}: {message}")]
pub struct ConfigError {
    pub line: usize,
    pub message: String,
}

pub const KEYS: &[&str] = &[
    "limit",
    "guard_width",
    "wildcard",
    "static_elision",
    "mte",
    "step_budget",
    "seed",
    "count",
    "output",
];

fn value<T: FromStr>(v: &str) -> Result<T, String>
where
    T::Err: fmt::Display,
{
    v.parse::<T>().map_err(|e| format!("bad value {v:?}: {e}"))
}

impl Config {
    /// Applies a configuration file on top of `self`. Blank lines and lines
    /// starting with `#` are ignored; unknown keys are errors.
    pub fn merge_file(&mut self, text: &str) -> Result<(), ConfigError> {
        for (i, raw) in text.lines().enumerate() {
            let l = raw.trim();
            if l.is_empty() || l.starts_with('#') {
                continue;
            }
            let err = |message: String| ConfigError { line: i + 1, message };
            let (k, v) = l.split_once('=').ok_or_else(|| err("expected key = value".into()))?;
            self.set(k.trim(), v.trim()).map_err(err)?;
        }
        Ok(())
    }

    pub fn set(&mut self, key: &str, v: &str) -> Result<(), String> {
        match key {
            "limit" => self.limit = value(v)?,
            "guard_width" => self.guard_width = value(v)?,
            "wildcard" => self.wildcard = value(v)?,
            "static_elision" => self.static_elision = value(v)?,
            "mte" => self.mte = value(v)?,
            "step_budget" => self.step_budget = value(v)?,
            "seed" => self.seed = value(v)?,
            "count" => self.count = value(v)?,
            "output" => self.output = v.parse()?,
            _ => return Err(format!("unknown key {key:?} (known: {})", KEYS.join(", "))),
        }
        Ok(())
    }

    pub fn pipeline(&self) -> PipelineConfig {
        let mut p = PipelineConfig::default().with_guard_width(self.guard_width);
        p.analysis.limit = self.limit;
        p.analysis.static_elision = self.static_elision;
        p
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn file_overrides_defaults() {
        let mut c = Config::default();
        c.merge_file("# comment\nlimit = 4\n\nwildcard=true\noutput = table\nseed = 9\n").unwrap();
        assert_eq!(c.limit, 4);
        assert!(c.wildcard);
        assert_eq!(c.output, Format::Table);
        assert_eq!(c.seed, 9);
        assert_eq!(c.guard_width, 1);
    }

    #[test]
    fn unknown_keys_and_bad_values_are_rejected() {
        let mut c = Config::default();
        let e = c.merge_file("limit = 3\nlimt = 4\n").unwrap_err();
        assert_eq!(e.line, 2);
        assert!(e.message.contains("unknown key"));
        assert_eq!(c.merge_file("mte = maybe").unwrap_err().line, 1);
        assert!(c.merge_file("just words").is_err());
        assert!(c.merge_file("output = xml").is_err());
    }

    #[test]
    fn pipeline_follows_the_config() {
        let c = Config {
            limit: 5,
            guard_width: 2,
            static_elision: false,
            ..Default::default()
        };
        let p = c.pipeline();
        assert_eq!(p.analysis.limit, 5);
        assert_eq!((p.analysis.guard_width, p.instrument.guard_width), (2, 2));
        assert!(!p.analysis.static_elision);
    }
}
