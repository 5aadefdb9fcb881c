//! Error taxonomy shared by every module.
//!
//! Solver failures carry enough diagnostics (residual, iteration count,
//! context string) that a batch run can report them without re-running the
//! failing solve.

use thiserror::Error;

pub type Result<T> = std::result::Result<T, HcError>;

#[derive(Debug, Error)]
pub enum HcError {
    #[error("config error: {0}")]
    Config(String),

    #[error("spectrum ordering violated: {0}")]
    SpectrumOrdering(String),

    #[error("structural form violated: {0}")]
    StructuralForm(String),

    #[error("local nonlinearity identity violated in {which}: monomial {monomial} {reason}")]
    IdentityViolation {
        which: String,
        monomial: String,
        reason: String,
    },

    #[error("point left {stage} domain: {detail}")]
    OutOfDomain { stage: String, detail: String },

    #[error("iterate escaped the local box at step {step} of {total}: {detail}")]
    IterateEscapedChart {
        step: usize,
        total: usize,
        detail: String,
    },

    #[error("no convergence in {context}: residual {residual:.3e} after {iterations} iterations")]
    NoConvergence {
        context: String,
        residual: f64,
        iterations: usize,
    },

    #[error("singular Jacobian in {0}")]
    SingularJacobian(String),

    #[error("central multiplier pair ambiguous: {0}")]
    CentralPairAmbiguous(String),

    #[error("rotation coefficient alpha* degenerate: |alpha*| = {value:.3e} at k*omega = {phase:.6}")]
    AlphaStarDegenerate { value: f64, phase: f64 },

    #[error("eta phase undefined: {0}")]
    EtaUndefined(String),

    #[error("sign condition failed: {0}")]
    SignConditionFailed(String),

    #[error("operation requires an exactly linear local map: {0}")]
    UnsupportedNonlinearLocal(String),

    #[error("spectral split failure: {0}")]
    SpectralSplitFailure(String),

    #[error("zero vector given where a direction is required")]
    ZeroVector,

    #[error("wrong index: expected {expected}, found {found} ({context})")]
    WrongIndex {
        expected: usize,
        found: usize,
        context: String,
    },

    #[error("homoclinic branch missing: {found} of {expected} converged ({context})")]
    BranchMissing {
        found: usize,
        expected: usize,
        context: String,
    },

    #[error("degenerate tangency: {0}")]
    DegenerateTangency(String),

    #[error("no crossing found: {0}")]
    NoCrossing(String),

    #[error("insufficient samples: {0}")]
    InsufficientSamples(String),

    #[error("mesh collapse: {0}")]
    MeshCollapse(String),

    #[error("k filtered out: {0}")]
    KFiltered(String),

    #[error("genericity failed: {0}")]
    GenericityFailed(String),

    #[error("pipeline stage '{stage}' failed: {source}")]
    Stage {
        stage: String,
        #[source]
        source: Box<HcError>,
    },

    #[error("usage error: {0}")]
    Usage(String),

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    #[error("config parse error: {0}")]
    TomlParse(#[from] toml::de::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),

    #[error("schema violation: {0}")]
    Schema(String),
}

impl HcError {
    /// Wrap an error with the pipeline stage that produced it.
    pub fn at_stage(self, stage: &str) -> HcError {
        HcError::Stage {
            stage: stage.to_string(),
            source: Box::new(self),
        }
    }

    /// Exit code policy: usage/config errors are 1, solver failures 2.
    pub fn exit_code(&self) -> i32 {
        match self {
            HcError::Config(_)
            | HcError::Usage(_)
            | HcError::Io(_)
            | HcError::TomlParse(_)
            | HcError::Json(_)
            | HcError::Schema(_)
            | HcError::SpectrumOrdering(_)
            | HcError::StructuralForm(_)
            | HcError::IdentityViolation { .. } => 1,
            HcError::Stage { source, .. } => source.exit_code(),
            _ => 2,
        }
    }
}
