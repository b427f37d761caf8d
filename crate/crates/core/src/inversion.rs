//! Exit-pressure map `𝒫: v_ex ↦ p_ex`, its background derivative in the
//! Neumann cosine basis, and a frozen-derivative Newton inversion.

use crate::elliptic_fbp::{
    assemble_linear_system, potential_gradients, solve_fbp_from, solve_linear, FbpOptions, FbpSolution,
    FbpState, Field2D, PerturbationData, SectorGrid, background_k1, background_k2,
};
use crate::error::{Error, Result};
use crate::radial::{mu0, RadialSolution};
use crate::transport::{
    build_char_field, exit_e, reconstruct_pressure, shock_e_init, transport_e, CharField, TransportOptions,
};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::f64::consts::PI;
use std::fmt::Write as _;

/// Samples on the θ nodes of `[-Θ/2, Θ/2]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExitProfile {
    pub samples: Vec<f64>,
    pub theta_half: f64,
}

impl ExitProfile {
    pub fn new(samples: Vec<f64>, theta_half: f64) -> Self {
        Self { samples, theta_half }
    }

    fn n(&self) -> usize {
        self.samples.len() - 1
    }

    pub fn theta(&self, k: usize) -> f64 {
        -self.theta_half + 2.0 * self.theta_half * k as f64 / self.n() as f64
    }

    /// Cosine coefficients `c_0..=c_N` (discrete cosine transform of type I).
    pub fn coefficients(&self, n_modes: usize) -> Vec<f64> {
        let n = self.n();
        (0..=n_modes.min(n))
            .map(|j| {
                let s: f64 = self
                    .samples
                    .iter()
                    .enumerate()
                    .map(|(k, v)| {
                        let w = if k == 0 || k == n { 0.5 } else { 1.0 };
                        w * v * (PI * (j * k) as f64 / n as f64).cos()
                    })
                    .sum();
                let norm = if j == 0 || j == n { 1.0 } else { 2.0 };
                norm * s / n as f64
            })
            .collect()
    }

    pub fn from_coefficients(c: &[f64], n_samples: usize, theta_half: f64) -> Self {
        let n = n_samples - 1;
        let samples = (0..=n)
            .map(|k| c.iter().enumerate().map(|(j, cj)| cj * (PI * (j * k) as f64 / n as f64).cos()).sum())
            .collect();
        Self { samples, theta_half }
    }

    /// `‖s - synth(coeff_N(s))‖_∞`.
    pub fn spectral_tail(&self, n_modes: usize) -> f64 {
        let back = Self::from_coefficients(&self.coefficients(n_modes), self.samples.len(), self.theta_half);
        max_abs_diff(&self.samples, &back.samples)
    }

    pub fn max_abs(&self) -> f64 {
        self.samples.iter().map(|v| v.abs()).fold(0.0, f64::max)
    }

    /// CSV with columns `theta,value`.
    pub fn to_csv(&self) -> String {
        let mut s = String::from("theta,value\n");
        for (k, v) in self.samples.iter().enumerate() {
            let _ = writeln!(s, "{:.17e},{:.17e}", self.theta(k), v);
        }
        s
    }
}

fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

/// Exit and shock coefficients of the background derivative.
pub fn a1_a2(sol: &RadialSolution) -> (f64, f64) {
    let gas = &sol.gas;
    let g = gas.gamma();
    let (b0, k0) = (gas.b0(), gas.k0());
    let u = sol.u_plus(sol.noz.r1);
    let a1 = -2.0 * g * u * (b0 - 0.5 * u * u) / ((g + 1.0) * (k0 - u * u));
    let um = sol.jump.upstream.u;
    let d = um - sol.jump.downstream.u;
    let nm1 = (sol.noz.n - 1) as f64;
    let a2 = nm1 * sol.jump.upstream.rho * (k0 - um * um) / (sol.r_s * sol.u0_factor(sol.r_s) * d);
    (a1, a2)
}

/// Radial mode on `[r_s, r1]`: samples of `q` and of the flux `k₁q'`.
#[derive(Debug, Clone)]
pub struct ModeSolution {
    pub r: Vec<f64>,
    pub q: Vec<f64>,
    pub flux: Vec<f64>,
}

impl ModeSolution {
    pub fn at_shock(&self) -> f64 {
        self.q[0]
    }
}

fn shoot(sol: &RadialSolution, lambda: f64, steps: usize) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
    let (a, b) = (sol.r_s, sol.noz.r1);
    let h = (b - a) / steps as f64;
    let rhs = |r: f64, q: f64, y: f64| (y / background_k1(sol, r), lambda * background_k2(sol, r) * q);
    let mut r = vec![a];
    let mut q = vec![1.0];
    let mut y = vec![background_k1(sol, a) * mu0(sol)];
    for k in 0..steps {
        let x = a + k as f64 * h;
        let (q0, y0) = (q[k], y[k]);
        let (k1q, k1y) = rhs(x, q0, y0);
        let (k2q, k2y) = rhs(x + 0.5 * h, q0 + 0.5 * h * k1q, y0 + 0.5 * h * k1y);
        let (k3q, k3y) = rhs(x + 0.5 * h, q0 + 0.5 * h * k2q, y0 + 0.5 * h * k2y);
        let (k4q, k4y) = rhs(x + h, q0 + h * k3q, y0 + h * k3y);
        q.push(q0 + h / 6.0 * (k1q + 2.0 * k2q + 2.0 * k3q + k4q));
        y.push(y0 + h / 6.0 * (k1y + 2.0 * k2y + 2.0 * k3y + k4y));
        r.push(if k + 1 == steps { b } else { x + h });
    }
    (r, q, y)
}

fn mode_steps(sol: &RadialSolution, lambda: f64) -> usize {
    let (a, b) = (sol.r_s, sol.noz.r1);
    let rate = (0..=20)
        .map(|k| {
            let r = a + (b - a) * k as f64 / 20.0;
            (lambda * background_k2(sol, r) / background_k1(sol, r)).sqrt()
        })
        .fold(0.0, f64::max);
    2000.max((200.0 * rate * (b - a)).ceil() as usize)
}

/// Solves `(k₁q')' = λk₂q`, `q'(r_s) = μ₀q(r_s)`, `k₁q'(r1) = exit_flux` by shooting.
pub fn solve_mode(sol: &RadialSolution, lambda: f64, exit_flux: f64) -> Result<ModeSolution> {
    if !(lambda >= 0.0) {
        return Err(Error::ModeSolve(format!("negative eigenvalue {lambda}")));
    }
    let steps = mode_steps(sol, lambda);
    let (r, q, y) = shoot(sol, lambda, steps);
    let (_, q2, y2) = shoot(sol, lambda, 2 * steps);
    let end = *y.last().unwrap();
    if !(end > 0.0) || !end.is_finite() {
        return Err(Error::ModeSolve(format!("shooting flux {end:e} for lambda = {lambda:e}")));
    }
    let alpha = exit_flux / end;
    let alpha2 = exit_flux / y2.last().unwrap();
    let err = (alpha - alpha2).abs() / alpha.abs().max(f64::MIN_POSITIVE);
    if exit_flux != 0.0 && !(err <= 1e-8) || !q2[0].is_finite() {
        return Err(Error::ModeSolve(format!("step-halving discrepancy {err:e} for lambda = {lambda:e}")));
    }
    Ok(ModeSolution {
        r,
        q: q.iter().map(|v| alpha * v).collect(),
        flux: y.iter().map(|v| alpha * v).collect(),
    })
}

/// Neumann eigenvalue `(jπ/Θ)²`.
pub fn eigenvalue(j: usize, theta_half: f64) -> f64 {
    let w = j as f64 * PI / (2.0 * theta_half);
    w * w
}

/// Background derivative of `𝒫` diagonalized in the cosine basis.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ModeSystem {
    pub theta_half: f64,
    pub lambda: Vec<f64>,
    /// Unit-flux mode values `q̂_j(r_s)`.
    pub q_shock: Vec<f64>,
    pub d: Vec<f64>,
    pub a1: f64,
    pub a2: f64,
    pub q0: f64,
    pub r0: f64,
    pub mu0: f64,
    pub kernel_floor: f64,
}

impl ModeSystem {
    pub fn new(sol: &RadialSolution, theta_half: f64, n_modes: usize) -> Result<Self> {
        let (a1, a2) = a1_a2(sol);
        let q0 = sol.e0_plus();
        let r0 = sol.u0_factor(sol.noz.r1);
        let flux = sol.noz.r1.powi(sol.noz.n as i32 - 1);
        let lambda: Vec<f64> = (0..=n_modes).map(|j| eigenvalue(j, theta_half)).collect();
        let q_shock: Result<Vec<f64>> =
            lambda.par_iter().map(|&l| solve_mode(sol, l, flux).map(|m| m.at_shock())).collect();
        let q_shock = q_shock?;
        let d: Vec<f64> = q_shock.iter().map(|q| q0 * a1 + r0 * a2 * q).collect();
        let kernel_floor = 1e-8 * (q0 * a1).abs();
        for (j, v) in d.iter().enumerate() {
            if !(v.abs() >= kernel_floor) {
                return Err(Error::NearSingular { mode: j, value: *v, floor: kernel_floor });
            }
        }
        Ok(Self { theta_half, lambda, q_shock, d, a1, a2, q0, r0, mu0: mu0(sol), kernel_floor })
    }

    pub fn n_modes(&self) -> usize {
        self.d.len() - 1
    }

    /// Multiplier applied above the cutoff.
    pub fn tail_multiplier(&self) -> f64 {
        self.q0 * self.a1
    }

    pub fn min_abs_multiplier(&self) -> f64 {
        self.d.iter().map(|v| v.abs()).fold(f64::INFINITY, f64::min)
    }

    fn diagonal(&self, w: &ExitProfile, op: impl Fn(f64, f64) -> f64) -> ExitProfile {
        let c = w.coefficients(self.n_modes());
        let n = w.samples.len();
        let low = ExitProfile::from_coefficients(&c, n, w.theta_half);
        let scaled: Vec<f64> = c.iter().zip(&self.d).map(|(cj, dj)| op(*cj, *dj)).collect();
        let out = ExitProfile::from_coefficients(&scaled, n, w.theta_half);
        let t = self.tail_multiplier();
        let samples = out
            .samples
            .iter()
            .zip(w.samples.iter().zip(&low.samples))
            .map(|(o, (s, l))| o + op(s - l, t))
            .collect();
        ExitProfile { samples, theta_half: w.theta_half }
    }

    /// CSV with columns `j,lambda,q_shock,d`.
    pub fn to_csv(&self) -> String {
        let mut s = String::from("j,lambda,q_shock,d\n");
        for j in 0..self.d.len() {
            let _ = writeln!(s, "{j},{:.17e},{:.17e},{:.17e}", self.lambda[j], self.q_shock[j], self.d[j]);
        }
        s
    }
}

/// `D_v𝒫 w`, mode by mode.
pub fn dvp_apply(modes: &ModeSystem, w: &ExitProfile) -> ExitProfile {
    modes.diagonal(w, |c, d| c * d)
}

/// `(D_v𝒫)⁻¹ rhs`, mode by mode.
pub fn dvp_invert(modes: &ModeSystem, rhs: &ExitProfile) -> Result<ExitProfile> {
    if let Some((j, v)) = modes.d.iter().enumerate().find(|(_, v)| !(v.abs() >= modes.kernel_floor)) {
        return Err(Error::NearSingular { mode: j, value: *v, floor: modes.kernel_floor });
    }
    Ok(modes.diagonal(rhs, |c, d| c / d))
}

/// `D_v𝒫 w` through a 2D linear solve on the background coefficients.
pub fn dvp_apply_2d(
    sol: &RadialSolution,
    grid: &SectorGrid,
    modes: &ModeSystem,
    w: &ExitProfile,
) -> Result<ExitProfile> {
    let base = PerturbationData::background(sol, grid);
    let v: Vec<f64> = base.v_ex.iter().zip(&w.samples).map(|(vc, wk)| vc + wk).collect();
    let data = base.with_exit_flux(v);
    let (sys, _) = assemble_linear_system(sol, grid, &FbpState::background(grid), &data)?;
    let psi = solve_linear(&sys, 1e-10)?;
    let samples = (0..=grid.ntheta)
        .map(|j| modes.q0 * modes.a1 * w.samples[j] + modes.r0 * modes.a2 * psi.get(0, j))
        .collect();
    Ok(ExitProfile { samples, theta_half: w.theta_half })
}

/// Everything needed to evaluate `𝒫` repeatedly.
#[derive(Debug, Clone)]
pub struct Pipeline {
    pub sol: RadialSolution,
    pub grid: SectorGrid,
    /// Geometry and upstream data; its exit flux is replaced per evaluation.
    pub base: PerturbationData,
    pub fbp: FbpOptions,
    pub transport: TransportOptions,
}

/// Output of one forward evaluation.
#[derive(Debug, Clone)]
pub struct Forward {
    pub p_ex: ExitProfile,
    pub fbp: FbpSolution,
    /// Step-halving discrepancy of the exit foot points.
    pub trace_error: f64,
}

impl Pipeline {
    pub fn v_critical(&self) -> Vec<f64> {
        PerturbationData::background(&self.sol, &self.grid).v_ex
    }

    /// `𝒫(v_ex)`, warm-started from `start` when given.
    pub fn forward(&self, v_ex: &[f64], start: Option<FbpState>) -> Result<Forward> {
        let data = self.base.with_exit_flux(v_ex.to_vec());
        let start = start.unwrap_or_else(|| FbpState::background(&self.grid));
        let fbp = solve_fbp_from(&self.sol, &self.grid, &data, &self.fbp, start)?;
        let field = build_char_field(&self.sol, &self.grid, &fbp, &data, &self.transport)?;
        let e0 = shock_e_init(&self.sol, &self.grid, &fbp, &data)?;
        let (e_ex, trace_error) = exit_e(&field, &e0)?;
        let grads = potential_gradients(&self.sol, &self.grid, &fbp.state, &data)?;
        let gas = &self.sol.gas;
        let r1 = self.grid.r1;
        let samples: Result<Vec<f64>> = (0..=self.grid.ntheta)
            .map(|j| {
                let minv = data
                    .jacobian(r1, self.grid.theta(j))
                    .try_inverse()
                    .ok_or_else(|| Error::Domain("singular Jacobian".into()))?;
                let q2 = (minv * grads[self.grid.idx(self.grid.nr, j)]).norm_squared();
                Ok((gas.b0() - 0.5 * q2).powf(gas.pressure_exponent()) * e_ex[j])
            })
            .collect();
        Ok(Forward { p_ex: ExitProfile::new(samples?, self.grid.theta_half), fbp, trace_error })
    }

    /// Full fields `(W, E on the remapped grid, p on the physical grid)` of a solution.
    pub fn fields(&self, v_ex: &[f64], fbp: &FbpSolution) -> Result<(CharField, Field2D, Field2D)> {
        let data = self.base.with_exit_flux(v_ex.to_vec());
        let field = build_char_field(&self.sol, &self.grid, fbp, &data, &self.transport)?;
        let e0 = shock_e_init(&self.sol, &self.grid, fbp, &data)?;
        let e = transport_e(&field, &e0)?;
        let p = reconstruct_pressure(&self.sol, &self.grid, fbp, &data, &field, &e)?;
        Ok((field, e, p))
    }
}

/// `𝒫(v_ex)` from a cold start.
pub fn forward_p(pipe: &Pipeline, v_ex: &[f64]) -> Result<ExitProfile> {
    pipe.forward(v_ex, None).map(|f| f.p_ex)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct NewtonOptions {
    pub tol_newton: f64,
    pub max_newton: usize,
    /// Admissible spectral tail of the target, relative to its size.
    pub tol_basis: f64,
}

impl Default for NewtonOptions {
    fn default() -> Self {
        Self { tol_newton: 1e-9, max_newton: 12, tol_basis: 1e-8 }
    }
}

/// Converged inversion with its residual history.
#[derive(Debug, Clone)]
pub struct Inversion {
    pub v_ex: Vec<f64>,
    pub forward: Forward,
    /// `‖𝒫(v) - p_ex‖_∞` before each update.
    pub history: Vec<f64>,
}

impl Inversion {
    pub fn iterations(&self) -> usize {
        self.history.len() - 1
    }
}

/// Frozen-derivative Newton iteration for `𝒫(v) = target`.
pub fn invert_p(
    pipe: &Pipeline,
    modes: &ModeSystem,
    target: &ExitProfile,
    v_init: &[f64],
    opts: &NewtonOptions,
) -> Result<Inversion> {
    let tail = target.spectral_tail(modes.n_modes());
    if !(tail <= opts.tol_basis * target.max_abs().max(1.0)) {
        return Err(Error::Domain(format!("target spectral tail {tail:e} above tolerance")));
    }
    let mut v = v_init.to_vec();
    let mut history = Vec::new();
    let mut state: Option<FbpState> = None;
    loop {
        let fw = pipe.forward(&v, state.take())?;
        let res: Vec<f64> = fw.p_ex.samples.iter().zip(&target.samples).map(|(p, t)| p - t).collect();
        let norm = res.iter().map(|x| x.abs()).fold(0.0, f64::max);
        log::debug!("newton {}: residual {norm:e}", history.len());
        let prev = history.last().copied();
        history.push(norm);
        if norm <= opts.tol_newton {
            return Ok(Inversion { v_ex: v, forward: fw, history });
        }
        if history.len() > opts.max_newton || prev.is_some_and(|p| norm >= p) {
            return Err(Error::NoConvergence { stage: "invert_p", iterations: history.len() - 1, residual: norm });
        }
        let dv = dvp_invert(modes, &ExitProfile::new(res, target.theta_half))?;
        v.iter_mut().zip(&dv.samples).for_each(|(x, d)| *x -= d);
        state = Some(fw.fbp.state);
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gas::{FlowState, GasModel};
    use crate::radial::{background_solution, NozzleRadial};
    use approx::assert_relative_eq;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn background() -> RadialSolution {
        let gas = GasModel::new(1.4, 5.5).unwrap();
        let noz = NozzleRadial::new(1.0, 2.0, 2).unwrap();
        background_solution(&gas, &noz, &FlowState::new(1.0, 2.0, 1.0).unwrap(), 1.5).unwrap()
    }

    #[test]
    fn coefficients_round_trip() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let c: Vec<f64> = (0..=10).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let p = ExitProfile::from_coefficients(&c, 33, 0.4);
        let back = p.coefficients(10);
        assert!(max_abs_diff(&c, &back) < 1e-13);
        assert!(p.spectral_tail(10) < 1e-13);
        assert!(p.spectral_tail(5) > 1e-3);
    }

    #[test]
    fn a1_a2_signs_and_long_form() {
        let sol = background();
        let (a1, a2) = a1_a2(&sol);
        assert!(a1 < 0.0 && a2 < 0.0);
        // E behind a normal shock at radius r, differentiated numerically
        let gas = sol.gas;
        let e_s = |r: f64| {
            let um = sol.u_minus(r);
            let up = gas.k0() / um;
            sol.p_s0(r) / (gas.b0() - 0.5 * up * up).powf(gas.pressure_exponent())
        };
        let h = 1e-4;
        let de = (e_s(sol.r_s + h) - e_s(sol.r_s - h)) / (2.0 * h);
        let d = sol.jump.upstream.u - sol.jump.downstream.u;
        assert_relative_eq!(a2, de / d, max_relative = 1e-6);
        // R(∇φ) at the exit, perturbed through the exit flux
        let u = sol.u_plus(2.0);
        let rho_hat = |x: f64| (gas.b0() - 0.5 * x * x).powf(gas.density_exponent());
        let r_of = |x: f64| (gas.b0() - 0.5 * x * x).powf(gas.pressure_exponent());
        let dflux = rho_hat(u + h) * (u + h) - rho_hat(u - h) * (u - h);
        let dr = r_of(u + h) - r_of(u - h);
        assert_relative_eq!(a1, dr / dflux, max_relative = 1e-6);
    }

    #[test]
    fn zero_eigenvalue_mode_is_a_quadrature() {
        let sol = background();
        let m = solve_mode(&sol, 0.0, 2.0).unwrap();
        let k1s = background_k1(&sol, sol.r_s);
        let m0 = k1s * mu0(&sol) * m.q[0];
        assert_relative_eq!(m0, 2.0, max_relative = 1e-12);
        // q(r) = q(r_s) + m0 ∫ 1/k1 by Simpson
        let n = 2000;
        let (a, b) = (sol.r_s, 2.0);
        let h = (b - a) / n as f64;
        let s: f64 = (0..=n)
            .map(|k| {
                let w = if k == 0 || k == n { 1.0 } else if k % 2 == 1 { 4.0 } else { 2.0 };
                w / background_k1(&sol, a + k as f64 * h)
            })
            .sum::<f64>()
            * h
            / 3.0;
        assert_relative_eq!(*m.q.last().unwrap(), m.q[0] + m0 * s, max_relative = 1e-9);
    }

    #[test]
    fn zero_flux_mode_vanishes() {
        let sol = background();
        let m = solve_mode(&sol, 3.0, 0.0).unwrap();
        assert!(m.q.iter().all(|v| *v == 0.0));
    }

    #[test]
    fn mode_shock_value_decreases_with_lambda() {
        let sol = background();
        let q: Vec<f64> = (1..=20).map(|j| solve_mode(&sol, eigenvalue(j, 0.3), 2.0).unwrap().at_shock()).collect();
        assert!(q.windows(2).all(|w| w[1] < w[0]));
        assert!(q.iter().all(|v| *v > 0.0));
    }

    #[test]
    fn multipliers_are_bounded_away_from_zero() {
        let sol = background();
        let m = ModeSystem::new(&sol, PI / 12.0, 32).unwrap();
        assert!(m.min_abs_multiplier() > m.kernel_floor);
        assert!(m.d.iter().all(|v| *v < 0.0));
        let t = m.tail_multiplier();
        assert!(((m.d[16] - t) / t).abs() < 0.05);
    }

    #[test]
    fn derivative_is_linear_and_invertible() {
        let sol = background();
        let m = ModeSystem::new(&sol, 0.3, 16).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let w1 = ExitProfile::new((0..=24).map(|_| rng.gen_range(-1.0..1.0)).collect(), 0.3);
        let w2 = ExitProfile::new((0..=24).map(|_| rng.gen_range(-1.0..1.0)).collect(), 0.3);
        let comb = ExitProfile::new(w1.samples.iter().zip(&w2.samples).map(|(a, b)| 2.5 * a + b).collect(), 0.3);
        let lhs = dvp_apply(&m, &comb);
        let (a, b) = (dvp_apply(&m, &w1), dvp_apply(&m, &w2));
        let rhs: Vec<f64> = a.samples.iter().zip(&b.samples).map(|(x, y)| 2.5 * x + y).collect();
        assert!(max_abs_diff(&lhs.samples, &rhs) < 1e-12);
        let back = dvp_apply(&m, &dvp_invert(&m, &w1).unwrap());
        assert!(max_abs_diff(&back.samples, &w1.samples) < 1e-10);
        let zero = ExitProfile::new(vec![0.0; 25], 0.3);
        assert_eq!(dvp_apply(&m, &zero).max_abs(), 0.0);
    }

    #[test]
    fn modal_derivative_matches_2d_solve() {
        let sol = background();
        let grid = SectorGrid::new(&sol, 64, 32, 0.3).unwrap();
        let m = ModeSystem::new(&sol, 0.3, 32).unwrap();
        let w = ExitProfile::from_coefficients(&[0.01, 0.02, -0.01, 0.0, 0.005], 33, 0.3);
        let a = dvp_apply(&m, &w);
        let b = dvp_apply_2d(&sol, &grid, &m, &w).unwrap();
        let gap = max_abs_diff(&a.samples, &b.samples) / a.max_abs();
        assert!(gap < 1e-3, "gap {gap:e}");
    }

    #[test]
    fn background_exit_pressure_is_reproduced() {
        let sol = background();
        let grid = SectorGrid::new(&sol, 24, 12, 0.3).unwrap();
        let pipe = Pipeline {
            base: PerturbationData::background(&sol, &grid),
            sol: sol.clone(),
            grid,
            fbp: FbpOptions::default(),
            transport: TransportOptions::default(),
        };
        let p = forward_p(&pipe, &pipe.v_critical()).unwrap();
        let pc = sol.exit_pressure();
        assert!(p.samples.iter().all(|v| (v - pc).abs() < 1e-10 * pc));
    }
}
