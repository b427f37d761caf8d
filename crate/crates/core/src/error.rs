use thiserror::Error;

/// Failures raised by the solver pipeline.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("cavitation: half speed squared {half_q2:e} reaches the Bernoulli bound {bound:e}")]
    Cavitation { half_q2: f64, bound: f64 },

    #[error("sonic singularity at r = {r:e} (u^2 = {u2:e}, K0 = {k0:e})")]
    SonicSingularity { r: f64, u2: f64, k0: f64 },

    #[error("upstream state is not supersonic (u^2 = {u2:e}, K0 = {k0:e})")]
    NotSupersonic { u2: f64, k0: f64 },

    #[error("exit pressure {p:e} outside the admissible interval ({p_min:e}, {p_max:e})")]
    PressureOutOfRange { p: f64, p_min: f64, p_max: f64 },

    #[error("no root: {0}")]
    NoRoot(String),

    #[error("argument outside the admissible domain: {0}")]
    Domain(String),

    #[error("degenerate shock: upstream and downstream gradients coincide")]
    DegenerateShock,

    #[error("ellipticity lost at r = {r:e}: smallest eigenvalue {lambda_min:e} below floor {floor:e}")]
    EllipticityLoss { r: f64, lambda_min: f64, floor: f64 },

    #[error("obliqueness violated at shock node {node}: b1.nu = {value:e}")]
    Obliqueness { node: usize, value: f64 },

    #[error("linear solver failed: {0}")]
    SolverDivergence(String),

    #[error("iterate left the trust region: |psi| = {norm:e} > {radius:e}")]
    TrustRegion { norm: f64, radius: f64 },

    #[error("shock front escaped: |f - r_s| = {offset:e} exceeds {limit:e}")]
    FrontEscape { offset: f64, limit: f64 },

    #[error("{stage}: no convergence after {iterations} iterations (residual {residual:e})")]
    NoConvergence { stage: &'static str, iterations: usize, residual: f64 },

    #[error("mode multiplier {value:e} of mode {mode} below kernel floor {floor:e}")]
    NearSingular { mode: usize, value: f64, floor: f64 },

    #[error("mode solve failed: {0}")]
    ModeSolve(String),

    #[error("radial velocity floor violated: V.r = {value:e} < {floor:e}")]
    RadialFloor { value: f64, floor: f64 },

    #[error("characteristic step failed: {0}")]
    StepFailure(String),
}

pub type Result<T> = std::result::Result<T, Error>;
