use tagguard_core::analysis::{analyze, AnalysisConfig, AnalysisResult};
use tagguard_core::instrument::{instrument, InstrumentConfig, InstrumentError, TagPlan};
use tagguard_core::ir::{parse_program, Diagnostic, Program};

#[derive(Debug, thiserror::Error)]
pub enum PipelineError {
    #[error("{0}")]
    Parse(#[from] Diagnostic),
    #[error(transparent)]
    Instrument(#[from] InstrumentError),
}

/// A program together with its analysis and instrumented form.
#[derive(Clone, Debug)]
pub struct Prepared {
    pub plain: Program,
    pub analysis: AnalysisResult,
    pub instrumented: Program,
    pub plan: TagPlan,
}

#[derive(Clone, Debug, Default)]
pub struct PipelineConfig {
    pub analysis: AnalysisConfig,
    pub instrument: InstrumentConfig,
}

impl PipelineConfig {
    /// Keeps the classifier's step rule in line with the guard width.
    pub fn with_guard_width(mut self, g: u64) -> Self {
        self.analysis.guard_width = g;
        self.instrument.guard_width = g;
        self
    }
}

pub fn prepare(p: Program, cfg: &PipelineConfig) -> Result<Prepared, PipelineError> {
    let analysis = analyze(&p, &cfg.analysis);
    let out = instrument(&p, &analysis, &cfg.instrument)?;
    Ok(Prepared {
        plain: p,
        analysis,
        instrumented: out.program,
        plan: out.plan,
    })
}

pub fn prepare_source(src: &str, cfg: &PipelineConfig) -> Result<Prepared, PipelineError> {
    prepare(parse_program(src)?, cfg)
}
