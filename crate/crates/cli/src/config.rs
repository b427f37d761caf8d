//! Run configuration: parsing and validation.

use serde::{Deserialize, Serialize};
use std::path::Path;
use transonic::elliptic_fbp::{FbpOptions, PsiMap};
use transonic::gas::{mach_class, FlowState, GasModel, MachClass, TOL_SONIC};
use transonic::inversion::NewtonOptions;
use transonic::transport::TransportOptions;

#[derive(Debug, thiserror::Error)]
pub enum ConfigError {
    #[error("cannot read {path}: {source}")]
    Io { path: String, source: std::io::Error },
    #[error("parse error in {path}: {message}")]
    Parse { path: String, message: String },
    #[error("invalid value for `{field}`: {message}")]
    Validation { field: String, message: String },
}

fn invalid(field: &str, message: impl Into<String>) -> ConfigError {
    ConfigError::Validation { field: field.to_string(), message: message.into() }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum Mode {
    Background,
    LocateShock,
    Solve,
    Sweep,
    Check,
    DemoIsentropic,
}

impl Mode {
    pub fn label(&self) -> &'static str {
        match self {
            Mode::Background => "background",
            Mode::LocateShock => "locate-shock",
            Mode::Solve => "solve",
            Mode::Sweep => "sweep",
            Mode::Check => "check",
            Mode::DemoIsentropic => "demo-isentropic",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GasConfig {
    pub gamma: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NozzleConfig {
    pub r0: f64,
    pub r1: f64,
    pub n: u32,
    /// Full opening angle of the cross-section arc.
    pub theta: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InflowConfig {
    pub rho: f64,
    pub u: f64,
    pub p: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct UpstreamConfig {
    pub amplitude: f64,
    #[serde(default = "one")]
    pub mode: u32,
}

fn one() -> u32 {
    1
}

/// Exit pressure target.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum TargetConfig {
    /// `p_c` everywhere.
    Constant { p_c: f64 },
    /// `p_c (1 + amplitude cos(mode))`.
    Cosine { p_c: f64, amplitude: f64, mode: u32 },
    /// Values on the uniform exit grid from `-Θ/2` to `Θ/2`, resampled linearly.
    Sampled { samples: Vec<f64> },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PerturbationConfig {
    #[serde(default = "identity")]
    pub psi: PsiMap,
    #[serde(default)]
    pub upstream: UpstreamConfig,
}

fn identity() -> PsiMap {
    PsiMap::Identity
}

impl Default for PerturbationConfig {
    fn default() -> Self {
        Self { psi: PsiMap::Identity, upstream: UpstreamConfig::default() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SweepConfig {
    /// Factors applied to every perturbation amplitude and to the target deviation.
    pub factors: Vec<f64>,
}

impl Default for SweepConfig {
    fn default() -> Self {
        Self { factors: vec![1.0, 0.5, 0.25] }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Numerics {
    pub nr: usize,
    pub ntheta: usize,
    /// Cosine modes kept in the exit basis.
    pub modes: usize,
    pub seed: u64,
    pub tol_r: f64,
    /// Largest admissible `‖p_ex - p_c‖_∞ / p_c` for a solve.
    pub sigma: f64,
    pub fbp: FbpOptions,
    pub newton: NewtonOptions,
    pub transport: TransportOptions,
}

impl Default for Numerics {
    fn default() -> Self {
        Self {
            nr: 64,
            ntheta: 32,
            modes: 32,
            seed: 0,
            tol_r: 1e-11,
            sigma: 0.05,
            fbp: FbpOptions::default(),
            newton: NewtonOptions::default(),
            transport: TransportOptions::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    #[serde(default)]
    pub mode: Option<Mode>,
    pub gas: GasConfig,
    pub nozzle: NozzleConfig,
    pub inflow: InflowConfig,
    /// Background shock radius; located from the target when absent.
    #[serde(default)]
    pub r_s: Option<f64>,
    #[serde(default)]
    pub target: Option<TargetConfig>,
    #[serde(default)]
    pub perturbation: PerturbationConfig,
    #[serde(default)]
    pub sweep: SweepConfig,
    #[serde(default)]
    pub numerics: Numerics,
}

impl RunConfig {
    /// Standard geometry with the shock at 1.5.
    pub fn standard() -> Self {
        Self {
            mode: None,
            gas: GasConfig { gamma: 1.4 },
            nozzle: NozzleConfig { r0: 1.0, r1: 2.0, n: 2, theta: std::f64::consts::PI / 6.0 },
            inflow: InflowConfig { rho: 1.0, u: 2.0, p: 1.0 },
            r_s: Some(1.5),
            target: None,
            perturbation: PerturbationConfig::default(),
            sweep: SweepConfig::default(),
            numerics: Numerics::default(),
        }
    }

    pub fn inflow_state(&self) -> FlowState {
        FlowState { rho: self.inflow.rho, u: self.inflow.u, p: self.inflow.p }
    }

    pub fn theta_half(&self) -> f64 {
        0.5 * self.nozzle.theta
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let g = self.gas.gamma;
        if !(g > 1.0 && g.is_finite()) {
            return Err(invalid("gas.gamma", format!("must exceed 1, got {g}")));
        }
        let z = &self.nozzle;
        if !(z.r0 > 0.0 && z.r1 > z.r0 && z.r1.is_finite()) {
            return Err(invalid("nozzle.r1", format!("need 0 < r0 < r1, got r0 = {}, r1 = {}", z.r0, z.r1)));
        }
        if z.n < 2 {
            return Err(invalid("nozzle.n", format!("dimension must be at least 2, got {}", z.n)));
        }
        if !(z.theta > 0.0 && z.theta < std::f64::consts::PI) {
            return Err(invalid("nozzle.theta", format!("opening angle must lie in (0, π), got {}", z.theta)));
        }
        for (field, v) in [("inflow.rho", self.inflow.rho), ("inflow.p", self.inflow.p)] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(invalid(field, format!("must be positive, got {v}")));
            }
        }
        let state = self.inflow_state();
        let gas = GasModel::from_state(g, &state).map_err(|e| invalid("inflow", e.to_string()))?;
        if !(self.inflow.u > 0.0) || mach_class(&gas, &state, TOL_SONIC) != MachClass::Supersonic {
            return Err(invalid("inflow.u", format!("inflow must be supersonic, got u = {}", self.inflow.u)));
        }
        if let Some(rs) = self.r_s {
            if !(rs > z.r0 && rs < z.r1) {
                return Err(invalid("r_s", format!("must lie in ({}, {}), got {rs}", z.r0, z.r1)));
            }
        }
        match &self.target {
            Some(TargetConfig::Constant { p_c }) | Some(TargetConfig::Cosine { p_c, .. }) if !(*p_c > 0.0) => {
                return Err(invalid("target.p_c", format!("must be positive, got {p_c}")));
            }
            Some(TargetConfig::Sampled { samples }) if samples.len() < 2 || samples.iter().any(|v| !(*v > 0.0)) => {
                return Err(invalid("target.samples", "need at least two positive values"));
            }
            _ => {}
        }
        if let PsiMap::RadialStretch { amplitude, .. } = self.perturbation.psi {
            if !(amplitude.abs() < 0.25) {
                return Err(invalid("perturbation.psi.amplitude", format!("must satisfy |a| < 0.25, got {amplitude}")));
            }
        }
        if !self.perturbation.upstream.amplitude.is_finite() {
            return Err(invalid("perturbation.upstream.amplitude", "must be finite"));
        }
        if self.sweep.factors.is_empty() || self.sweep.factors.iter().any(|f| !(*f > 0.0)) {
            return Err(invalid("sweep.factors", "need at least one positive factor"));
        }
        let n = &self.numerics;
        if n.nr < 8 {
            return Err(invalid("numerics.nr", format!("must be at least 8, got {}", n.nr)));
        }
        if n.ntheta < 8 {
            return Err(invalid("numerics.ntheta", format!("must be at least 8, got {}", n.ntheta)));
        }
        if n.modes < 1 || n.modes > n.ntheta {
            return Err(invalid("numerics.modes", format!("must lie in [1, ntheta], got {}", n.modes)));
        }
        let tols = [
            ("numerics.tol_r", n.tol_r),
            ("numerics.sigma", n.sigma),
            ("numerics.fbp.tol_lin", n.fbp.tol_lin),
            ("numerics.fbp.tol_outer", n.fbp.tol_outer),
            ("numerics.fbp.trust_radius", n.fbp.trust_radius),
            ("numerics.newton.tol_newton", n.newton.tol_newton),
            ("numerics.newton.tol_basis", n.newton.tol_basis),
            ("numerics.transport.blowup_guard", n.transport.blowup_guard),
        ];
        for (field, v) in tols {
            if !(v > 0.0 && v.is_finite()) {
                return Err(invalid(field, format!("must be positive, got {v}")));
            }
        }
        if n.transport.steps < 8 {
            return Err(invalid("numerics.transport.steps", "must be at least 8"));
        }
        Ok(())
    }
}

/// Parses TOML or JSON by extension, then validates.
pub fn load_config(path: &Path) -> Result<RunConfig, ConfigError> {
    let shown = path.display().to_string();
    let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io { path: shown.clone(), source })?;
    let cfg: RunConfig = match path.extension().and_then(|e| e.to_str()) {
        Some("json") => serde_json::from_str(&text).map_err(|e| ConfigError::Parse { path: shown, message: e.to_string() })?,
        Some("toml") => toml::from_str(&text).map_err(|e| ConfigError::Parse { path: shown, message: e.to_string() })?,
        other => {
            return Err(ConfigError::Parse {
                path: shown,
                message: format!("unsupported extension {other:?}, expected .toml or .json"),
            })
        }
    };
    cfg.validate()?;
    Ok(cfg)
}
