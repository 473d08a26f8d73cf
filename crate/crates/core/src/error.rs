use thiserror::Error;

/// Errors reported by the simulation and estimation routines.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("invalid model: {0}")]
    InvalidModel(String),

    #[error("eigenvalue {value} at index {index} violates lambda <= -beta = {neg_beta}")]
    EigenvalueAboveBound {
        index: usize,
        value: f64,
        neg_beta: f64,
    },

    #[error("sigma entry {value} at index {index} must be finite and positive")]
    InvalidSigma { index: usize, value: f64 },

    #[error("{what}: expected length {expected}, got {got}")]
    DimensionMismatch {
        what: &'static str,
        expected: usize,
        got: usize,
    },

    #[error("negative time {0}")]
    NegativeTime(f64),

    #[error("time {t} outside [0, {horizon}]")]
    TimeOutOfRange { t: f64, horizon: f64 },

    #[error("Yosida parameter lambda = {0} must be >= 1")]
    YosidaParameter(f64),

    #[error("alpha = {0} must be finite and positive")]
    InvalidAlpha(f64),

    #[error("resolvent root-finder did not converge (|x| = {radius}, alpha = {alpha})")]
    ResolventDiverged { radius: f64, alpha: f64 },

    #[error("time step {dt} exceeds alpha/8 for alpha = {alpha}; need dt <= {required}")]
    StepTooLarge { dt: f64, alpha: f64, required: f64 },

    #[error("non-finite state at step {step}")]
    NonFinite { step: usize },

    #[error("grid mismatch: {0}")]
    GridMismatch(String),

    #[error("invalid drift: {0}")]
    InvalidDrift(String),

    #[error("B = {b} must lie in (0, beta * L_phi = {limit})")]
    ConstantHypothesis { b: f64, limit: f64 },

    #[error("point of norm {norm} lies outside the open ball of radius {radius}")]
    OutsideBall { norm: f64, radius: f64 },

    #[error("every entry of the Cesaro mean was clamped; the sequence diverges")]
    CesaroDiverged,

    #[error("y with ln y = {ln_y} is not above the admissible start ln y = {threshold}")]
    BelowAdmissible { ln_y: f64, threshold: f64 },

    #[error("empty input: {0}")]
    Empty(&'static str),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),
}

pub type Result<T> = std::result::Result<T, Error>;
