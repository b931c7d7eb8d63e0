use thiserror::Error;

/// Errors produced by the design and simulation routines.
#[derive(Debug, Error)]
pub enum CoreError {
    #[error("invalid parameter: {0}")]
    InvalidParam(String),

    #[error("denominator vanishes at omega = {omega} rad/s")]
    SingularFrequency { omega: f64 },

    #[error("closed loop is on the stability boundary at omega = {omega} rad/s (|1+L| = {distance:e})")]
    NearSingularLoop { omega: f64, distance: f64 },

    #[error("orifice square-root argument non-positive at z = {z}, p_load = {p_load} (cavitation domain)")]
    Cavitation { z: f64, p_load: f64 },

    #[error("operating point (z = {z}, p_load = {p_load}) outside the linearization domain")]
    OperatingPoint { z: f64, p_load: f64 },

    #[error("integration blew up at t = {t} s")]
    IntegrationBlowup { t: f64 },

    #[error("insufficient data: {got} samples, need at least {need}")]
    InsufficientData { got: usize, need: usize },

    #[error("degenerate fit: {0}")]
    DegenerateFit(String),

    #[error("weight fit failed: {0}")]
    FitFailure(String),

    #[error("no feasible gains in the search box (best constraint value {best_f:.6} < {required:.6})")]
    Infeasible { best_f: f64, required: f64 },

    #[error("loop is nominally unstable: Nyquist locus crosses (-inf,-1) at omega = {omega} rad/s")]
    NominallyUnstable { omega: f64 },

    #[error("network failure: {0}")]
    Network(String),

    #[error("I/O error: {0}")]
    Io(#[from] std::io::Error),

    #[error("JSON error: {0}")]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, CoreError>;
