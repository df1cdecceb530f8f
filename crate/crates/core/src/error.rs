use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("unknown preset `{0}` (expected optical_sme, agarwal, caldeira_leggett or dekker_custom)")]
    UnknownPreset(String),

    #[error("integration diverged at step {step} (t = {t})")]
    IntegrationDiverged { step: usize, t: f64 },

    #[error("no steady state: drift matrix is not Hurwitz (trace = {trace}, det = {det})")]
    NoSteadyState { trace: f64, det: f64 },

    #[error("canonical frame requires mu == lambda (mu = {mu}, lambda = {lambda} at t = {t})")]
    UnsupportedFrame { mu: f64, lambda: f64, t: f64 },

    #[error("degenerate covariance matrix (det = {det})")]
    DegenerateCovariance { det: f64 },

    #[error("truncation insufficient at t = {t}: top-level population {leakage:e} exceeds {threshold:e}")]
    TruncationInsufficient { t: f64, leakage: f64, threshold: f64 },

    #[error("not Lindblad-reducible at t = {t}: margin = {margin:e}, D_x = {dx}, D_p = {dp}")]
    NotLindbladReducible { t: f64, margin: f64, dx: f64, dp: f64 },

    #[error("grid too coarse: normalization {mass} deviates from {expected} by more than {tol:e}")]
    GridResolution { mass: f64, expected: f64, tol: f64 },

    #[error("unstable step: dt = {dt} exceeds the stability limit, use dt <= {suggested}")]
    UnstableStep { dt: f64, suggested: f64 },

    #[error("noise covariance not positive semidefinite at t = {t}: AB - C^2 = {det:e}")]
    UnsamplableNoise { t: f64, det: f64 },

    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("config error: {0}")]
    Config(String),

    #[error("{engine} engine failed: {source}")]
    Engine {
        engine: String,
        #[source]
        source: Box<Error>,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    pub(crate) fn in_engine(self, engine: &str) -> Self {
        Error::Engine {
            engine: engine.to_string(),
            source: Box::new(self),
        }
    }
}
