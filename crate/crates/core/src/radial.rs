//! Radial background flows: ODE branches, transonic shock solutions, and
//! shock location from the exit pressure.

use crate::error::{Error, Result};
use crate::gas::{bernoulli, density_from_bernoulli, isentropic_density, FlowState, GasModel, TOL_SONIC};
use crate::jump::{rh_jump_radial, JumpResult};
use serde::{Deserialize, Serialize};
use std::fmt::Write as _;

/// Number of RK4 steps across `[r0, r1]` at the default step.
pub const DEFAULT_STEPS: usize = 2000;

/// Relative offset of the endpoint shocks used for `p_min` and `p_max`.
pub const ENDPOINT_OFFSET: f64 = 1e-6;

/// Annular nozzle `r0 < |x| < r1` in dimension `n`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NozzleRadial {
    pub r0: f64,
    pub r1: f64,
    pub n: u32,
    /// Extension length for branch continuation past the shock.
    pub delta: f64,
}

impl NozzleRadial {
    pub fn new(r0: f64, r1: f64, n: u32) -> Result<Self> {
        Self::with_delta(r0, r1, n, 0.05 * (r1 - r0))
    }

    pub fn with_delta(r0: f64, r1: f64, n: u32, delta: f64) -> Result<Self> {
        if !(r0 > 0.0 && r1 > r0) {
            return Err(Error::Domain(format!("need 0 < r0 < r1, got r0 = {r0}, r1 = {r1}")));
        }
        if n < 2 {
            return Err(Error::Domain(format!("dimension must be at least 2, got {n}")));
        }
        if !(delta >= 0.0) || r0 - 2.0 * delta <= 0.0 {
            return Err(Error::Domain(format!("extension margin {delta} incompatible with r0 = {r0}")));
        }
        Ok(Self { r0, r1, n, delta })
    }

    pub fn default_step(&self) -> f64 {
        (self.r1 - self.r0) / DEFAULT_STEPS as f64
    }

    pub fn width(&self) -> f64 {
        self.r1 - self.r0
    }
}

/// Right-hand sides `(du/dr, dp/dr)` of the radial background system.
pub fn rhs_ode(gas: &GasModel, n: u32, r: f64, u: f64, p: f64) -> Result<(f64, f64)> {
    let k0 = gas.k0();
    let g = gas.gamma();
    let d = u * u - k0;
    if d.abs() <= TOL_SONIC * k0 {
        return Err(Error::SonicSingularity { r, u2: u * u, k0 });
    }
    let nm1 = (n - 1) as f64;
    let den = (g + 1.0) * r * d;
    let du = 2.0 * nm1 * (g - 1.0) * u * (gas.b0() - 0.5 * u * u) / den;
    let dp = -2.0 * nm1 * g * u * u * p / den;
    Ok((du, dp))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum BranchKind {
    Supersonic,
    Subsonic,
}

impl BranchKind {
    fn of(gas: &GasModel, r: f64, u: f64) -> Result<Self> {
        let k0 = gas.k0();
        let d = u * u - k0;
        if d > TOL_SONIC * k0 {
            Ok(BranchKind::Supersonic)
        } else if d < -TOL_SONIC * k0 {
            Ok(BranchKind::Subsonic)
        } else {
            Err(Error::SonicSingularity { r, u2: u * u, k0 })
        }
    }

    pub fn label(&self) -> &'static str {
        match self {
            BranchKind::Supersonic => "supersonic",
            BranchKind::Subsonic => "subsonic",
        }
    }
}

fn rk4_step(gas: &GasModel, n: u32, r: f64, u: f64, p: f64, h: f64) -> Result<(f64, f64)> {
    let (k1u, k1p) = rhs_ode(gas, n, r, u, p)?;
    let (k2u, k2p) = rhs_ode(gas, n, r + 0.5 * h, u + 0.5 * h * k1u, p + 0.5 * h * k1p)?;
    let (k3u, k3p) = rhs_ode(gas, n, r + 0.5 * h, u + 0.5 * h * k2u, p + 0.5 * h * k2p)?;
    let (k4u, k4p) = rhs_ode(gas, n, r + h, u + h * k3u, p + h * k3p)?;
    Ok((
        u + h / 6.0 * (k1u + 2.0 * k2u + 2.0 * k3u + k4u),
        p + h / 6.0 * (k1p + 2.0 * k2p + 2.0 * k3p + k4p),
    ))
}

fn step_count(a: f64, b: f64, h: f64) -> usize {
    if a == b {
        0
    } else {
        ((b - a).abs() / h).ceil().max(1.0) as usize
    }
}

/// State at `b` from `(u, p)` at `a` without storing samples.
fn rk4_endpoint(gas: &GasModel, n: u32, a: f64, b: f64, u: f64, p: f64, h: f64) -> Result<(f64, f64)> {
    let m = step_count(a, b, h);
    let kind = BranchKind::of(gas, a, u)?;
    let (mut u, mut p) = (u, p);
    for k in 0..m {
        let r = a + (b - a) * k as f64 / m as f64;
        let hh = (b - a) / m as f64;
        let (un, pn) = rk4_step(gas, n, r, u, p, hh)?;
        if BranchKind::of(gas, r + hh, un)? != kind {
            return Err(Error::SonicSingularity { r: r + hh, u2: un * un, k0: gas.k0() });
        }
        density_from_bernoulli(gas, un, pn)?;
        u = un;
        p = pn;
    }
    Ok((u, p))
}

/// Sampled ODE branch with cubic Hermite evaluation between samples.
#[derive(Debug, Clone)]
pub struct RadialBranch {
    pub grid: Vec<f64>,
    pub u: Vec<f64>,
    pub p: Vec<f64>,
    pub rho: Vec<f64>,
    pub kind: BranchKind,
    du: Vec<f64>,
    dp: Vec<f64>,
    /// `∫_{grid[0]}^{grid[i]} u dr`.
    cum: Vec<f64>,
    gas: GasModel,
    n: u32,
}

/// Integrates one branch from `start_r` to `end_r`; samples are stored in increasing `r`.
pub fn integrate_branch(
    gas: &GasModel,
    noz: &NozzleRadial,
    start_r: f64,
    end_r: f64,
    u0: f64,
    p0: f64,
    h: f64,
) -> Result<RadialBranch> {
    if !(h > 0.0) {
        return Err(Error::Domain(format!("step must be positive, got {h}")));
    }
    let kind = BranchKind::of(gas, start_r, u0)?;
    let rho0 = density_from_bernoulli(gas, u0, p0)?;
    let m = step_count(start_r, end_r, h);
    let mut grid = Vec::with_capacity(m + 1);
    let mut u = Vec::with_capacity(m + 1);
    let mut p = Vec::with_capacity(m + 1);
    let mut rho = Vec::with_capacity(m + 1);
    grid.push(start_r);
    u.push(u0);
    p.push(p0);
    rho.push(rho0);
    let hh = if m > 0 { (end_r - start_r) / m as f64 } else { 0.0 };
    for k in 0..m {
        let r = start_r + hh * k as f64;
        let (un, pn) = rk4_step(gas, noz.n, r, u[k], p[k], hh)?;
        let rn = if k + 1 == m { end_r } else { start_r + hh * (k + 1) as f64 };
        if BranchKind::of(gas, rn, un)? != kind {
            return Err(Error::SonicSingularity { r: rn, u2: un * un, k0: gas.k0() });
        }
        rho.push(density_from_bernoulli(gas, un, pn)?);
        grid.push(rn);
        u.push(un);
        p.push(pn);
    }
    if end_r < start_r {
        grid.reverse();
        u.reverse();
        p.reverse();
        rho.reverse();
    }
    let mut du = Vec::with_capacity(grid.len());
    let mut dp = Vec::with_capacity(grid.len());
    for i in 0..grid.len() {
        let (a, b) = rhs_ode(gas, noz.n, grid[i], u[i], p[i])?;
        du.push(a);
        dp.push(b);
    }
    let mut cum = vec![0.0; grid.len()];
    for i in 1..grid.len() {
        let h = grid[i] - grid[i - 1];
        cum[i] = cum[i - 1] + 0.5 * h * (u[i - 1] + u[i]) + h * h / 12.0 * (du[i - 1] - du[i]);
    }
    Ok(RadialBranch { grid, u, p, rho, kind, du, dp, cum, gas: *gas, n: noz.n })
}

impl RadialBranch {
    pub fn start(&self) -> f64 {
        self.grid[0]
    }

    pub fn end(&self) -> f64 {
        *self.grid.last().unwrap()
    }

    pub fn contains(&self, r: f64) -> bool {
        r >= self.start() && r <= self.end()
    }

    fn locate(&self, r: f64) -> (usize, f64, f64) {
        let m = self.grid.len();
        if m == 1 {
            return (0, 0.0, 0.0);
        }
        let i = self.grid.partition_point(|&x| x <= r).clamp(1, m - 1) - 1;
        let h = self.grid[i + 1] - self.grid[i];
        (i, (r - self.grid[i]) / h, h)
    }

    fn hermite(y0: f64, m0: f64, y1: f64, m1: f64, t: f64, h: f64) -> f64 {
        let t2 = t * t;
        let t3 = t2 * t;
        (2.0 * t3 - 3.0 * t2 + 1.0) * y0
            + (t3 - 2.0 * t2 + t) * h * m0
            + (-2.0 * t3 + 3.0 * t2) * y1
            + (t3 - t2) * h * m1
    }

    /// Speed and pressure at `r` (Hermite interpolation; extrapolates outside the grid).
    pub fn eval(&self, r: f64) -> (f64, f64) {
        if self.grid.len() == 1 {
            return (self.u[0], self.p[0]);
        }
        let (i, t, h) = self.locate(r);
        (
            Self::hermite(self.u[i], self.du[i], self.u[i + 1], self.du[i + 1], t, h),
            Self::hermite(self.p[i], self.dp[i], self.p[i + 1], self.dp[i + 1], t, h),
        )
    }

    pub fn u_at(&self, r: f64) -> f64 {
        self.eval(r).0
    }

    pub fn p_at(&self, r: f64) -> f64 {
        self.eval(r).1
    }

    pub fn rho_at(&self, r: f64) -> f64 {
        let (u, p) = self.eval(r);
        self.gas.gamma() * p / ((self.gas.gamma() - 1.0) * (self.gas.b0() - 0.5 * u * u))
    }

    /// `(du/dr, dp/dr)` from the ODE at the interpolated state.
    pub fn slopes_at(&self, r: f64) -> (f64, f64) {
        let (u, p) = self.eval(r);
        rhs_ode(&self.gas, self.n, r, u, p).unwrap_or((f64::NAN, f64::NAN))
    }

    /// `∫_{start}^{r} u dr`, exact for the Hermite interpolant.
    pub fn integral_from_start(&self, r: f64) -> f64 {
        if self.grid.len() == 1 {
            return self.u[0] * (r - self.grid[0]);
        }
        let (i, t, h) = self.locate(r);
        let t2 = t * t;
        let t3 = t2 * t;
        let t4 = t3 * t;
        let part = h
            * ((0.5 * t4 - t3 + t) * self.u[i]
                + (0.25 * t4 - 2.0 / 3.0 * t3 + 0.5 * t2) * h * self.du[i]
                + (-0.5 * t4 + t3) * self.u[i + 1]
                + (0.25 * t4 - t3 / 3.0) * h * self.du[i + 1]);
        self.cum[i] + part
    }

    /// Largest relative deviation of sampled Bernoulli values from `B0`.
    pub fn bernoulli_drift(&self) -> f64 {
        (0..self.grid.len())
            .map(|i| {
                let s = FlowState { rho: self.rho[i], u: self.u[i], p: self.p[i] };
                (bernoulli(&self.gas, &s) - self.gas.b0()).abs() / self.gas.b0()
            })
            .fold(0.0, f64::max)
    }

    /// Largest relative deviation of `r^{n-1} ρ u` from its first sample.
    pub fn mass_flux_drift(&self) -> f64 {
        let flux = |i: usize| self.grid[i].powi(self.n as i32 - 1) * self.rho[i] * self.u[i];
        let f0 = flux(0);
        (0..self.grid.len()).map(|i| (flux(i) - f0).abs() / f0.abs()).fold(0.0, f64::max)
    }

    /// Checks the sample-wise monotonicity expected of the branch kind.
    pub fn is_monotone(&self) -> bool {
        let inc = |v: &[f64]| v.windows(2).all(|w| w[1] > w[0]);
        let dec = |v: &[f64]| v.windows(2).all(|w| w[1] < w[0]);
        match self.kind {
            BranchKind::Supersonic => inc(&self.u) && dec(&self.p) && dec(&self.rho),
            BranchKind::Subsonic => dec(&self.u) && inc(&self.p) && inc(&self.rho),
        }
    }
}

/// Radial transonic background with a shock at `r_s`.
///
/// The supersonic branch is continued up to `r1` and the subsonic branch
/// down to `r_s - 2δ` so that shock-fitted solvers may evaluate both past
/// the shock.
#[derive(Debug, Clone)]
pub struct RadialSolution {
    pub gas: GasModel,
    pub noz: NozzleRadial,
    pub inflow: FlowState,
    pub r_s: f64,
    pub supersonic: RadialBranch,
    pub subsonic: RadialBranch,
    pub jump: JumpResult,
    pub phi_minus_at_rs: f64,
    sub_cum_rs: f64,
}

/// Rejects inflow states whose Bernoulli value disagrees with the gas.
fn check_inflow(gas: &GasModel, noz: &NozzleRadial, inflow: &FlowState) -> Result<()> {
    let b = bernoulli(gas, inflow);
    if (b - gas.b0()).abs() > 1e-12 * gas.b0() {
        return Err(Error::Domain(format!(
            "inflow Bernoulli value {b} differs from B0 = {}",
            gas.b0()
        )));
    }
    if BranchKind::of(gas, noz.r0, inflow.u)? != BranchKind::Supersonic {
        return Err(Error::NotSupersonic { u2: inflow.u * inflow.u, k0: gas.k0() });
    }
    Ok(())
}

fn check_shock_radius(noz: &NozzleRadial, r_s: f64) -> Result<()> {
    if !(r_s > noz.r0 && r_s < noz.r1) {
        return Err(Error::Domain(format!(
            "shock radius {r_s} outside ({}, {})",
            noz.r0, noz.r1
        )));
    }
    Ok(())
}

pub fn background_solution(gas: &GasModel, noz: &NozzleRadial, inflow: &FlowState, r_s: f64) -> Result<RadialSolution> {
    background_solution_with_step(gas, noz, inflow, r_s, noz.default_step())
}

pub fn background_solution_with_step(
    gas: &GasModel,
    noz: &NozzleRadial,
    inflow: &FlowState,
    r_s: f64,
    h: f64,
) -> Result<RadialSolution> {
    check_inflow(gas, noz, inflow)?;
    check_shock_radius(noz, r_s)?;
    let to_shock = integrate_branch(gas, noz, noz.r0, r_s, inflow.u, inflow.p, h)?;
    let (um, pm) = (*to_shock.u.last().unwrap(), *to_shock.p.last().unwrap());
    let rhom = *to_shock.rho.last().unwrap();
    let up = FlowState { rho: rhom, u: um, p: pm };
    let jump = rh_jump_radial(gas, &up)?;
    let supersonic = join_branches(
        gas,
        noz,
        &to_shock,
        integrate_branch(gas, noz, r_s, noz.r1, um, pm, h)?,
    );

    let down = jump.downstream;
    let forward = integrate_branch(gas, noz, r_s, noz.r1, down.u, down.p, h)?;
    let mut ext = 2.0 * noz.delta;
    let mut backward = None;
    for _ in 0..12 {
        if ext <= 0.0 {
            break;
        }
        match integrate_branch(gas, noz, r_s, r_s - ext, down.u, down.p, h) {
            Ok(b) => {
                backward = Some(b);
                break;
            }
            Err(Error::SonicSingularity { .. }) | Err(Error::Cavitation { .. }) => ext *= 0.5,
            Err(e) => return Err(e),
        }
    }
    let subsonic = match backward {
        Some(b) => join_branches(gas, noz, &b, forward),
        None => forward,
    };
    let phi_minus_at_rs = supersonic.integral_from_start(r_s);
    let sub_cum_rs = subsonic.integral_from_start(r_s);
    Ok(RadialSolution {
        gas: *gas,
        noz: *noz,
        inflow: *inflow,
        r_s,
        supersonic,
        subsonic,
        jump,
        phi_minus_at_rs,
        sub_cum_rs,
    })
}

/// Concatenates two branches sharing an endpoint (`a.end() == b.start()`).
fn join_branches(gas: &GasModel, noz: &NozzleRadial, a: &RadialBranch, b: RadialBranch) -> RadialBranch {
    if b.grid.len() <= 1 {
        return a.clone();
    }
    let mut grid = a.grid.clone();
    let mut u = a.u.clone();
    let mut p = a.p.clone();
    let mut rho = a.rho.clone();
    let mut du = a.du.clone();
    let mut dp = a.dp.clone();
    let mut cum = a.cum.clone();
    let base = *cum.last().unwrap();
    for i in 1..b.grid.len() {
        grid.push(b.grid[i]);
        u.push(b.u[i]);
        p.push(b.p[i]);
        rho.push(b.rho[i]);
        du.push(b.du[i]);
        dp.push(b.dp[i]);
        cum.push(base + b.cum[i]);
    }
    RadialBranch { grid, u, p, rho, kind: a.kind, du, dp, cum, gas: *gas, n: noz.n }
}

impl RadialSolution {
    pub fn u_minus(&self, r: f64) -> f64 {
        self.supersonic.u_at(r)
    }

    pub fn p_minus(&self, r: f64) -> f64 {
        self.supersonic.p_at(r)
    }

    pub fn rho_minus(&self, r: f64) -> f64 {
        self.supersonic.rho_at(r)
    }

    pub fn du_minus(&self, r: f64) -> f64 {
        self.supersonic.slopes_at(r).0
    }

    /// `φ₀⁻(r) = ∫_{r0}^{r} u⁻`.
    pub fn phi_minus(&self, r: f64) -> f64 {
        self.supersonic.integral_from_start(r)
    }

    pub fn u_plus(&self, r: f64) -> f64 {
        self.subsonic.u_at(r)
    }

    pub fn p_plus(&self, r: f64) -> f64 {
        self.subsonic.p_at(r)
    }

    pub fn rho_plus(&self, r: f64) -> f64 {
        self.subsonic.rho_at(r)
    }

    pub fn du_plus(&self, r: f64) -> f64 {
        self.subsonic.slopes_at(r).0
    }

    pub fn dp_plus(&self, r: f64) -> f64 {
        self.subsonic.slopes_at(r).1
    }

    /// `φ₀⁺(r) = φ₀⁻(r_s) + ∫_{r_s}^{r} u⁺`.
    pub fn phi_plus(&self, r: f64) -> f64 {
        self.phi_minus_at_rs + self.subsonic.integral_from_start(r) - self.sub_cum_rs
    }

    /// Radii on which both branches are available.
    pub fn overlap(&self) -> (f64, f64) {
        (self.subsonic.start().max(self.supersonic.start()), self.noz.r1)
    }

    /// Downstream pressure given by the normal shock relation at `r`.
    pub fn p_s0(&self, r: f64) -> f64 {
        let u = self.u_minus(r);
        let rho = self.rho_minus(r);
        rho * u * u + self.p_minus(r) - rho * self.gas.k0()
    }

    pub fn exit_pressure(&self) -> f64 {
        *self.subsonic.p.last().unwrap()
    }

    /// `(B0 - u²/2)^{γ/(γ-1)}` on the subsonic branch.
    pub fn u0_factor(&self, r: f64) -> f64 {
        let u = self.u_plus(r);
        (self.gas.b0() - 0.5 * u * u).powf(self.gas.pressure_exponent())
    }

    /// Transported quantity of the background, constant downstream.
    pub fn e0_plus(&self) -> f64 {
        self.jump.downstream.p / self.u0_factor(self.r_s)
    }

    /// Branch samples as CSV with columns `r,u,p,rho,branch`, ordered by `r`.
    pub fn branches_csv(&self) -> String {
        let mut rows: Vec<(f64, f64, f64, f64, &str)> = Vec::new();
        let b = &self.supersonic;
        for i in 0..b.grid.len() {
            if b.grid[i] <= self.r_s {
                rows.push((b.grid[i], b.u[i], b.p[i], b.rho[i], "supersonic"));
            }
        }
        let b = &self.subsonic;
        for i in 0..b.grid.len() {
            if b.grid[i] >= self.r_s {
                rows.push((b.grid[i], b.u[i], b.p[i], b.rho[i], "subsonic"));
            }
        }
        rows.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.4.cmp(b.4)));
        let mut s = String::from("r,u,p,rho,branch\n");
        for r in rows {
            let _ = writeln!(s, "{:.17e},{:.17e},{:.17e},{:.17e},{}", r.0, r.1, r.2, r.3, r.4);
        }
        s
    }
}

/// Exit pressure `p₀⁺(r1; r_s)` of the background with shock at `r_s`.
pub fn exit_pressure(gas: &GasModel, noz: &NozzleRadial, inflow: &FlowState, r_s: f64) -> Result<f64> {
    exit_pressure_with_step(gas, noz, inflow, r_s, noz.default_step())
}

pub fn exit_pressure_with_step(gas: &GasModel, noz: &NozzleRadial, inflow: &FlowState, r_s: f64, h: f64) -> Result<f64> {
    check_inflow(gas, noz, inflow)?;
    check_shock_radius(noz, r_s)?;
    let (um, pm) = rk4_endpoint(gas, noz.n, noz.r0, r_s, inflow.u, inflow.p, h)?;
    let rhom = density_from_bernoulli(gas, um, pm)?;
    let jump = rh_jump_radial(gas, &FlowState { rho: rhom, u: um, p: pm })?;
    let d = jump.downstream;
    Ok(rk4_endpoint(gas, noz.n, r_s, noz.r1, d.u, d.p, h)?.1)
}

/// `(p_min, p_max)` from shocks placed just inside the two ends.
pub fn pressure_bounds(gas: &GasModel, noz: &NozzleRadial, inflow: &FlowState) -> Result<(f64, f64)> {
    let off = ENDPOINT_OFFSET * noz.width();
    let p_min = exit_pressure(gas, noz, inflow, noz.r1 - off)?;
    let p_max = exit_pressure(gas, noz, inflow, noz.r0 + off)?;
    Ok((p_min, p_max))
}

/// Shock radius whose background exit pressure equals `p_c`, by bisection.
pub fn locate_shock(gas: &GasModel, noz: &NozzleRadial, inflow: &FlowState, p_c: f64, tol_r: f64) -> Result<f64> {
    let off = ENDPOINT_OFFSET * noz.width();
    let (p_min, p_max) = pressure_bounds(gas, noz, inflow)?;
    if !(p_c > p_min && p_c < p_max) {
        return Err(Error::PressureOutOfRange { p: p_c, p_min, p_max });
    }
    let (mut lo, mut hi) = (noz.r0 + off, noz.r1 - off);
    while hi - lo > tol_r {
        let mid = 0.5 * (lo + hi);
        if exit_pressure(gas, noz, inflow, mid)? > p_c {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(0.5 * (lo + hi))
}

/// Zeroth-order coefficient `μ₀` of the linearized shock condition.
pub fn mu0(sol: &RadialSolution) -> f64 {
    let g = sol.gas.gamma();
    let k0 = sol.gas.k0();
    let um = sol.jump.upstream.u;
    let up = sol.jump.downstream.u;
    let nm1 = (sol.noz.n - 1) as f64;
    2.0 * nm1 * g * k0 / ((g + 1.0) * sol.r_s * um) / (um - up)
}

/// `d/dr(p_{s,0} - p₀⁺)` at `r_s` in closed form.
pub fn shock_pressure_slope_gap(sol: &RadialSolution) -> f64 {
    let g = sol.gas.gamma();
    let k0 = sol.gas.k0();
    let um = sol.jump.upstream.u;
    let pm = sol.jump.upstream.p;
    let nm1 = (sol.noz.n - 1) as f64;
    -nm1 * g * pm * (um * um + (g - 1.0) / (g + 1.0) * k0)
        / ((g - 1.0) * sol.r_s * (sol.gas.b0() - 0.5 * um * um))
}

/// Observed convergence order of RK4 from endpoint values at steps `h`, `h/2`, `h/4`.
pub fn richardson_order(gas: &GasModel, noz: &NozzleRadial, r_a: f64, r_b: f64, u0: f64, p0: f64, h: f64) -> Result<f64> {
    let y1 = rk4_endpoint(gas, noz.n, r_a, r_b, u0, p0, h)?;
    let y2 = rk4_endpoint(gas, noz.n, r_a, r_b, u0, p0, h / 2.0)?;
    let y3 = rk4_endpoint(gas, noz.n, r_a, r_b, u0, p0, h / 4.0)?;
    let d1 = (y1.0 - y2.0).abs().max((y1.1 - y2.1).abs());
    let d2 = (y2.0 - y3.0).abs().max((y2.1 - y3.1).abs());
    Ok((d1 / d2).log2())
}

/// Mass flux `r^{n-1} ρ(q²) q` of the isentropic radial model.
fn isentropic_flux(gas: &GasModel, n: u32, r: f64, q: f64) -> f64 {
    r.powi(n as i32 - 1) * isentropic_density(gas, q * q).unwrap_or(0.0) * q
}

/// Sonic speed of the isentropic model.
pub fn isentropic_sonic_speed(gas: &GasModel) -> f64 {
    (2.0 / (gas.gamma() + 1.0)).sqrt()
}

/// Root of `r^{n-1} ρ(q²) q = flux` on the requested side of the sonic speed.
pub fn isentropic_root(gas: &GasModel, n: u32, r: f64, flux: f64, kind: BranchKind) -> Result<f64> {
    let qs = isentropic_sonic_speed(gas);
    let qmax = (2.0 / (gas.gamma() - 1.0)).sqrt();
    if flux == 0.0 {
        return Ok(match kind {
            BranchKind::Subsonic => 0.0,
            BranchKind::Supersonic => qmax,
        });
    }
    let fmax = isentropic_flux(gas, n, r, qs);
    if flux > fmax {
        return Err(Error::NoRoot(format!("mass flux {flux} exceeds the choking flux {fmax} at r = {r}")));
    }
    let (mut lo, mut hi) = match kind {
        BranchKind::Subsonic => (0.0, qs),
        BranchKind::Supersonic => (qs, qmax),
    };
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        let below = isentropic_flux(gas, n, r, mid) < flux;
        let go_right = match kind {
            BranchKind::Subsonic => below,
            BranchKind::Supersonic => !below,
        };
        if go_right {
            lo = mid;
        } else {
            hi = mid;
        }
        if hi - lo <= 1e-16 * qmax {
            break;
        }
    }
    Ok(0.5 * (lo + hi))
}

/// Isentropic radial transonic family with a shock at `r_s`.
///
/// Returns the exit speed and the isentropic exit pressure `ρ^γ/γ`.
pub fn isentropic_radial_family(gas: &GasModel, noz: &NozzleRadial, flux_const: f64, r_s: f64) -> Result<(f64, f64)> {
    if !(flux_const >= 0.0) {
        return Err(Error::Domain(format!("mass flux must be nonnegative, got {flux_const}")));
    }
    check_shock_radius(noz, r_s)?;
    let n = noz.n;
    let sup = |r: f64| isentropic_root(gas, n, r, flux_const, BranchKind::Supersonic);
    let sub = |r: f64| isentropic_root(gas, n, r, flux_const, BranchKind::Subsonic);
    let simpson = |f: &dyn Fn(f64) -> Result<f64>, a: f64, b: f64| -> Result<f64> {
        let m = 200;
        let h = (b - a) / m as f64;
        let mut s = f(a)? + f(b)?;
        for k in 1..m {
            s += if k % 2 == 1 { 4.0 } else { 2.0 } * f(a + k as f64 * h)?;
        }
        Ok(s * h / 3.0)
    };
    let phi_minus = |r: f64| simpson(&sup, noz.r0, r);
    let phi_plus = |r: f64| simpson(&sub, noz.r0, r);
    let c = phi_plus(r_s)? - phi_minus(r_s)?;
    let at_exit_plus = phi_plus(noz.r1)?;
    let at_exit_minus = phi_minus(noz.r1)? + c;
    let q = if at_exit_plus <= at_exit_minus { sub(noz.r1)? } else { sup(noz.r1)? };
    let rho = isentropic_density(gas, q * q)?;
    Ok((q, rho.powf(gas.gamma()) / gas.gamma()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn setup() -> (GasModel, NozzleRadial, FlowState) {
        let inflow = FlowState::new(1.0, 2.0, 1.0).unwrap();
        let gas = GasModel::from_state(1.4, &inflow).unwrap();
        (gas, NozzleRadial::new(1.0, 2.0, 2).unwrap(), inflow)
    }

    #[test]
    fn rhs_hand_values() {
        let (gas, _, _) = setup();
        let (du, dp) = rhs_ode(&gas, 2, 1.0, 2.0, 1.0).unwrap();
        // du = 2·0.4·2·3.5 / (2.4·(4 − 11/6)), dp = −2·1.4·4 / (2.4·(4 − 11/6))
        let den = 2.4 * (4.0 - 11.0 / 6.0);
        assert_relative_eq!(du, 5.6 / den, max_relative = 1e-14);
        assert_relative_eq!(dp, -11.2 / den, max_relative = 1e-14);
        assert_relative_eq!(du, 5.6 / 5.2, max_relative = 1e-14);
        assert_relative_eq!(dp, -11.2 / 5.2, max_relative = 1e-14);
        let uv = (2.0 * gas.b0()).sqrt();
        assert_eq!(rhs_ode(&gas, 2, 1.0, uv, 1.0).unwrap().0.abs() < 1e-15, true);
        assert!(matches!(rhs_ode(&gas, 2, 1.0, gas.k0().sqrt(), 1.0), Err(Error::SonicSingularity { .. })));
    }

    #[test]
    fn nozzle_rejects_bad_dimension() {
        assert!(NozzleRadial::new(1.0, 2.0, 1).is_err());
        assert!(NozzleRadial::new(2.0, 1.0, 2).is_err());
        assert!(NozzleRadial::with_delta(1.0, 2.0, 2, 0.6).is_err());
    }

    #[test]
    fn single_sample_branch() {
        let (gas, noz, _) = setup();
        let b = integrate_branch(&gas, &noz, 1.3, 1.3, 2.0, 1.0, 0.01).unwrap();
        assert_eq!(b.grid, vec![1.3]);
        assert_eq!(b.u, vec![2.0]);
    }

    #[test]
    fn branch_against_quarter_step_oracle() {
        let (gas, noz, _) = setup();
        let h = noz.default_step();
        let b = integrate_branch(&gas, &noz, 1.0, 2.0, 2.0, 1.0, h).unwrap();
        assert!(b.is_monotone());
        let oracle = integrate_branch(&gas, &noz, 1.0, 2.0, 2.0, 1.0, h / 16.0).unwrap();
        assert_relative_eq!(b.u.last().unwrap(), oracle.u.last().unwrap(), max_relative = 1e-12);
        assert_relative_eq!(b.p.last().unwrap(), oracle.p.last().unwrap(), max_relative = 1e-12);
        let order = richardson_order(&gas, &noz, 1.0, 2.0, 2.0, 1.0, 0.1).unwrap();
        assert!(order > 3.9, "order {order}");
    }

    #[test]
    fn hermite_interpolant_is_accurate() {
        let (gas, noz, _) = setup();
        let b = integrate_branch(&gas, &noz, 1.0, 2.0, 2.0, 1.0, noz.default_step()).unwrap();
        let fine = integrate_branch(&gas, &noz, 1.0, 1.2345, 2.0, 1.0, noz.default_step() / 8.0).unwrap();
        assert_relative_eq!(b.u_at(1.2345), *fine.u.last().unwrap(), max_relative = 1e-11);
        // ∫ u against composite Simpson on the interpolant
        let m = 2000;
        let (a, c) = (1.0, 1.7);
        let h = (c - a) / m as f64;
        let mut s = b.u_at(a) + b.u_at(c);
        for k in 1..m {
            s += if k % 2 == 1 { 4.0 } else { 2.0 } * b.u_at(a + k as f64 * h);
        }
        assert_relative_eq!(b.integral_from_start(c), s * h / 3.0, max_relative = 1e-12);
    }

    #[test]
    fn background_invariants() {
        let (gas, noz, inflow) = setup();
        let sol = background_solution(&gas, &noz, &inflow, 1.5).unwrap();
        let up = sol.jump.upstream;
        let dn = sol.jump.downstream;
        assert_relative_eq!(up.u * dn.u, gas.k0(), max_relative = 1e-12);
        assert_relative_eq!(dn.p, up.rho * up.u * up.u + up.p - up.rho * gas.k0(), max_relative = 1e-12);
        assert_relative_eq!(up.rho * up.u, dn.rho * dn.u, max_relative = 1e-12);
        assert!(sol.supersonic.is_monotone() && sol.subsonic.is_monotone());
        assert!(sol.subsonic.start() < 1.5 - 0.09);
        assert!(sol.supersonic.end() >= 2.0);
        assert_relative_eq!(sol.phi_plus(1.5), sol.phi_minus(1.5), epsilon = 1e-15);
        assert_relative_eq!(sol.u_plus(1.5), dn.u, max_relative = 1e-13);
        assert_relative_eq!(sol.exit_pressure(), exit_pressure(&gas, &noz, &inflow, 1.5).unwrap(), max_relative = 1e-13);
        assert!(sol.supersonic.mass_flux_drift() < 1e-11);
        assert!(sol.subsonic.mass_flux_drift() < 1e-11);
        assert!(sol.supersonic.bernoulli_drift() < 1e-14);
    }

    #[test]
    fn exit_pressure_regression() {
        let (gas, noz, inflow) = setup();
        let p = exit_pressure(&gas, &noz, &inflow, 1.5).unwrap();
        let fine = exit_pressure_with_step(&gas, &noz, &inflow, 1.5, noz.default_step() / 8.0).unwrap();
        assert_relative_eq!(p, fine, max_relative = 1e-12);
        assert_relative_eq!(p, 2.786_740_034_246_391, max_relative = 1e-10);
        let (p_min, p_max) = pressure_bounds(&gas, &noz, &inflow).unwrap();
        assert!(p_min < p_max);
        let ps: Vec<f64> = (1..=20)
            .map(|k| exit_pressure(&gas, &noz, &inflow, 1.0 + k as f64 / 21.0).unwrap())
            .collect();
        assert!(ps.windows(2).all(|w| w[1] < w[0]));
    }

    #[test]
    fn locate_shock_round_trip() {
        let (gas, noz, inflow) = setup();
        let p = exit_pressure(&gas, &noz, &inflow, 1.5).unwrap();
        let rs = locate_shock(&gas, &noz, &inflow, p, 1e-10).unwrap();
        assert!((rs - 1.5).abs() < 1e-9);
        let (p_min, p_max) = pressure_bounds(&gas, &noz, &inflow).unwrap();
        assert!(matches!(
            locate_shock(&gas, &noz, &inflow, p_max + 1.0, 1e-10),
            Err(Error::PressureOutOfRange { .. })
        ));
        let mid = 0.5 * (p_min + p_max);
        let rs = locate_shock(&gas, &noz, &inflow, mid, 1e-10).unwrap();
        assert!((exit_pressure(&gas, &noz, &inflow, rs).unwrap() - mid).abs() < 1e-8);
    }

    #[test]
    fn mu0_matches_definition_form() {
        let (gas, noz, inflow) = setup();
        for &rs in &[1.2, 1.5, 1.8] {
            let sol = background_solution(&gas, &noz, &inflow, rs).unwrap();
            let m = mu0(&sol);
            assert!(m > 0.0);
            let e = 1e-4;
            let q = |r: f64| gas.k0() / sol.u_minus(r) - sol.u_plus(r);
            let num = (q(rs + e) - q(rs - e)) / (2.0 * e);
            let den = sol.u_minus(rs) - sol.u_plus(rs);
            assert_relative_eq!(m, num / den, max_relative = 1e-6);
        }
    }

    #[test]
    fn slope_gap_matches_finite_differences() {
        let (gas, noz, inflow) = setup();
        for &rs in &[1.2, 1.5, 1.8] {
            let sol = background_solution(&gas, &noz, &inflow, rs).unwrap();
            let g = shock_pressure_slope_gap(&sol);
            assert!(g < 0.0);
            let e = 1e-4;
            let d = |r: f64| sol.p_s0(r) - sol.p_plus(r);
            assert_relative_eq!(g, (d(rs + e) - d(rs - e)) / (2.0 * e), max_relative = 1e-5);
        }
    }

    #[test]
    fn isentropic_family_is_degenerate() {
        let (gas, noz, _) = setup();
        let flux = 0.5 * isentropic_flux(&gas, 2, 1.0, isentropic_sonic_speed(&gas));
        let a = isentropic_radial_family(&gas, &noz, flux, 1.3).unwrap();
        let b = isentropic_radial_family(&gas, &noz, flux, 1.7).unwrap();
        assert!((a.0 - b.0).abs() <= 1e-12);
        assert!(a.0 < isentropic_sonic_speed(&gas));
        // bisection oracle on the flux relation at r1
        let (mut lo, mut hi) = (0.0, isentropic_sonic_speed(&gas));
        for _ in 0..100 {
            let m = 0.5 * (lo + hi);
            let f = 2.0 * (1.0 - 0.2 * m * m).powf(2.5) * m;
            if f < flux { lo = m } else { hi = m }
        }
        assert_relative_eq!(a.0, lo, max_relative = 1e-12);
        assert_eq!(isentropic_radial_family(&gas, &noz, 0.0, 1.5).unwrap().0, 0.0);
        assert!(matches!(isentropic_radial_family(&gas, &noz, 10.0, 1.5), Err(Error::NoRoot(_))));
    }

    #[test]
    fn csv_is_sorted() {
        let (gas, noz, inflow) = setup();
        let sol = background_solution(&gas, &noz, &inflow, 1.5).unwrap();
        let csv = sol.branches_csv();
        let rs: Vec<f64> = csv.lines().skip(1).map(|l| l.split(',').next().unwrap().parse().unwrap()).collect();
        assert!(rs.windows(2).all(|w| w[1] >= w[0]));
        assert!(csv.starts_with("r,u,p,rho,branch\n"));
    }
}
