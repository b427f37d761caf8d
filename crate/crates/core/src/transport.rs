//! Transport of `E = p/(B0 - q²/2)^{γ/(γ-1)}` along streamlines and pressure
//! reconstruction.
//!
//! The downstream domain is remapped by `r̃ = G(r, θ)`, which sends the shock
//! to `r̃ = r_s` and leaves a neighbourhood of the exit fixed. Streamlines
//! become graphs `θ(r̃)` solving `dθ/dr̃ = W(r̃, θ)`.

use crate::elliptic_fbp::{potential_gradients, FbpSolution, Field2D, PerturbationData, Quantity, SectorGrid};
use crate::error::{Error, Result};
use crate::gas::{density_from_bernoulli, GasModel};
use crate::jump::{e_init, UpstreamAtShock};
use crate::radial::RadialSolution;
use nalgebra::Vector2;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::fmt::Write as _;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TransportOptions {
    /// RK4 steps across `[r_s, r1]`.
    pub steps: usize,
    /// Largest admissible `|W|` before a step is refused.
    pub blowup_guard: f64,
}

impl Default for TransportOptions {
    fn default() -> Self {
        Self { steps: 4000, blowup_guard: 1e3 }
    }
}

/// Quintic step: 0 below `a`, 1 above `b`.
fn smooth_step(a: f64, b: f64, r: f64) -> (f64, f64) {
    let s = ((r - a) / (b - a)).clamp(0.0, 1.0);
    let v = s * s * s * (10.0 - 15.0 * s + 6.0 * s * s);
    let d = 30.0 * s * s * (1.0 - s) * (1.0 - s) / (b - a);
    (v, d)
}

/// The remapping `G` with its cut-off and scaling constant.
#[derive(Debug, Clone, Copy)]
struct Remap {
    k: f64,
    r_s: f64,
    a: f64,
    b: f64,
}

impl Remap {
    fn new(sol: &RadialSolution) -> Self {
        let (r_s, r1) = (sol.r_s, sol.noz.r1);
        let gap = sol.phi_minus(r1) - sol.phi_plus(r1);
        let l = r1 - r_s;
        Self { k: l / (8.0 * gap), r_s, a: r_s + 0.1 * l, b: r1 - 0.5 * l }
    }

    /// `(r̃, ∂_r r̃, ∂_θ r̃)` from the potential gap `d = φ₋ - φ` and its derivatives.
    fn eval(&self, r: f64, d: f64, d_r: f64, d_th: f64) -> (f64, f64, f64) {
        let (chi, dchi) = smooth_step(self.a, self.b, r);
        let inner = self.k * d + self.r_s;
        let rt = inner * (1.0 - chi) + r * chi;
        let rt_r = self.k * d_r * (1.0 - chi) - dchi * inner + chi + r * dchi;
        let rt_th = self.k * d_th * (1.0 - chi);
        (rt, rt_r, rt_th)
    }
}

/// Streamline slope `W = dθ/dr̃` sampled on a uniform `(r̃, θ)` grid.
#[derive(Debug, Clone)]
pub struct CharField {
    pub nr: usize,
    pub ntheta: usize,
    pub r_s: f64,
    pub r1: f64,
    pub theta_half: f64,
    /// Row-major samples, θ fastest.
    pub w: Vec<f64>,
    /// `r̃` at every physical node of the elliptic grid.
    pub mapped_radius: Vec<f64>,
    /// Smallest `dr̃/dt` along the flow.
    pub radial_speed_min: f64,
    /// Floor `ω₀` the radial speed was checked against.
    pub omega0: f64,
    /// Smallest `∂_r r̃` over the grid.
    pub map_slope_min: f64,
    /// Largest `|W|` on the walls before the slip condition is imposed.
    pub wall_slip: f64,
    pub options: TransportOptions,
}

impl CharField {
    fn d_r(&self) -> f64 {
        (self.r1 - self.r_s) / self.nr as f64
    }

    fn d_theta(&self) -> f64 {
        2.0 * self.theta_half / self.ntheta as f64
    }

    pub fn radius(&self, i: usize) -> f64 {
        self.r_s + i as f64 * self.d_r()
    }

    pub fn theta(&self, j: usize) -> f64 {
        -self.theta_half + j as f64 * self.d_theta()
    }

    /// Bilinear interpolation of `W`.
    pub fn slope(&self, r: f64, theta: f64) -> f64 {
        let x = ((r - self.r_s) / self.d_r()).clamp(0.0, self.nr as f64);
        let y = ((theta + self.theta_half) / self.d_theta()).clamp(0.0, self.ntheta as f64);
        let i = (x.floor() as usize).min(self.nr - 1);
        let j = (y.floor() as usize).min(self.ntheta - 1);
        let (s, t) = (x - i as f64, y - j as f64);
        let w = |i: usize, j: usize| self.w[i * (self.ntheta + 1) + j];
        (1.0 - s) * ((1.0 - t) * w(i, j) + t * w(i, j + 1)) + s * ((1.0 - t) * w(i + 1, j) + t * w(i + 1, j + 1))
    }

    pub fn max_abs_slope(&self) -> f64 {
        self.w.iter().map(|v| v.abs()).fold(0.0, f64::max)
    }
}

/// Builds `W` from the converged potential.
pub fn build_char_field(
    sol: &RadialSolution,
    grid: &SectorGrid,
    fbp: &FbpSolution,
    data: &PerturbationData,
    options: &TransportOptions,
) -> Result<CharField> {
    let (nr, nt) = (grid.nr, grid.ntheta);
    let remap = Remap::new(sol);
    let grads = potential_gradients(sol, grid, &fbp.state, data)?;
    let front = &fbp.state.front;
    let psi = &fbp.state.psi;
    struct Node {
        rt: f64,
        w: f64,
        speed: f64,
        floor: f64,
        slope: f64,
    }
    let nodes: Result<Vec<Node>> = (0..grid.n_nodes())
        .into_par_iter()
        .map(|k| {
            let (i, j) = (k / (nt + 1), k % (nt + 1));
            let r = grid.radius_at(front, i, j);
            let th = grid.theta(j);
            let g = grads[k];
            let gm = data.grad_phi_minus(sol, r, th);
            let d = sol.phi_minus(r) + data.psi_minus(r, th) - sol.phi_plus(r) - psi.get(i, j);
            let (rt, rt_r, rt_th) = remap.eval(r, d, gm[0] - g[0], r * (gm[1] - g[1]));
            let minv = data
                .jacobian(r, th)
                .try_inverse()
                .ok_or_else(|| Error::Domain("singular Jacobian".into()))?;
            let v = minv.transpose() * (minv * g);
            let th_dot = v[1] / r;
            let speed = rt_r * v[0] + rt_th * th_dot;
            let d0 = sol.phi_minus(r) - sol.phi_plus(r);
            let (_, slope0, _) = remap.eval(r, d0, sol.u_minus(r) - sol.u_plus(r), 0.0);
            Ok(Node { rt, w: th_dot / speed, speed, floor: 0.5 * slope0 * sol.u_plus(r), slope: rt_r })
        })
        .collect();
    let nodes = nodes?;
    let omega0 = nodes.iter().map(|n| n.floor).fold(f64::INFINITY, f64::min);
    let radial_speed_min = nodes.iter().map(|n| n.speed).fold(f64::INFINITY, f64::min);
    if !(radial_speed_min >= omega0) {
        return Err(Error::RadialFloor { value: radial_speed_min, floor: omega0 });
    }
    let map_slope_min = nodes.iter().map(|n| n.slope).fold(f64::INFINITY, f64::min);

    let dr = (grid.r1 - sol.r_s) / nr as f64;
    let mut w = vec![0.0; grid.n_nodes()];
    for j in 0..=nt {
        let col_r: Vec<f64> = (0..=nr).map(|i| nodes[grid.idx(i, j)].rt).collect();
        let col_w: Vec<f64> = (0..=nr).map(|i| nodes[grid.idx(i, j)].w).collect();
        if col_r.windows(2).any(|p| !(p[1] > p[0])) {
            return Err(Error::Domain(format!("remapped radius not monotone in column {j}")));
        }
        for i in 0..=nr {
            let target = sol.r_s + i as f64 * dr;
            let m = col_r.partition_point(|&x| x <= target).clamp(1, nr);
            let (x0, x1) = (col_r[m - 1], col_r[m]);
            let t = ((target - x0) / (x1 - x0)).clamp(0.0, 1.0);
            w[i * (nt + 1) + j] = (1.0 - t) * col_w[m - 1] + t * col_w[m];
        }
    }
    let wall_slip = (0..=nr)
        .map(|i| w[i * (nt + 1)].abs().max(w[i * (nt + 1) + nt].abs()))
        .fold(0.0, f64::max);
    for i in 0..=nr {
        w[i * (nt + 1)] = 0.0;
        w[i * (nt + 1) + nt] = 0.0;
    }
    Ok(CharField {
        nr,
        ntheta: nt,
        r_s: sol.r_s,
        r1: grid.r1,
        theta_half: grid.theta_half,
        w,
        mapped_radius: nodes.iter().map(|n| n.rt).collect(),
        radial_speed_min,
        omega0,
        map_slope_min,
        wall_slip,
        options: *options,
    })
}

/// Backward trace with samples `t`, positions `(X₁, θ)`, and its source.
#[derive(Debug, Clone)]
pub struct Characteristic {
    pub t: Vec<f64>,
    pub x: Vec<(f64, f64)>,
    pub source: (f64, f64),
}

impl Characteristic {
    pub fn foot(&self) -> f64 {
        self.x.last().unwrap().1
    }

    /// Largest `max(d/d₀, d₀/d)` of the angular wall distance along the trace.
    pub fn wall_distance_ratio(&self, theta_half: f64) -> f64 {
        let dist = |th: f64| (theta_half - th.abs()).max(0.0);
        let d0 = dist(self.source.1);
        let mut worst: f64 = 1.0;
        for &(_, th) in &self.x {
            let d = dist(th);
            if d0 == 0.0 && d == 0.0 {
                continue;
            }
            if d == 0.0 || d0 == 0.0 {
                return f64::INFINITY;
            }
            worst = worst.max(d / d0).max(d0 / d);
        }
        worst
    }

    /// CSV with columns `t,r,theta`.
    pub fn to_csv(&self) -> String {
        let mut s = String::from("t,r,theta\n");
        for (t, (r, th)) in self.t.iter().zip(&self.x) {
            let _ = writeln!(s, "{t:.17e},{r:.17e},{th:.17e}");
        }
        s
    }
}

fn rk4_trace<F: FnMut(f64, f64)>(field: &CharField, r: f64, theta: f64, steps: usize, mut visit: F) -> Result<f64> {
    let h_t = (field.r1 - field.r_s) / steps as f64;
    let m = ((r - field.r_s) / h_t).ceil().max(0.0) as usize;
    let mut th = theta.clamp(-field.theta_half, field.theta_half);
    visit(r, th);
    if m == 0 {
        return Ok(th);
    }
    let h = -(r - field.r_s) / m as f64;
    let guard = field.options.blowup_guard;
    let lim = field.theta_half;
    for k in 0..m {
        let x = r + k as f64 * h;
        let k1 = field.slope(x, th);
        let k2 = field.slope(x + 0.5 * h, (th + 0.5 * h * k1).clamp(-lim, lim));
        let k3 = field.slope(x + 0.5 * h, (th + 0.5 * h * k2).clamp(-lim, lim));
        let k4 = field.slope(x + h, (th + h * k3).clamp(-lim, lim));
        if [k1, k2, k3, k4].iter().any(|v| !(v.abs() <= guard)) {
            return Err(Error::StepFailure(format!("slope exceeds guard at r = {x:e}, theta = {th:e}")));
        }
        th = (th + h / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4)).clamp(-lim, lim);
        let xn = if k + 1 == m { field.r_s } else { r + (k + 1) as f64 * h };
        visit(xn, th);
    }
    Ok(th)
}

/// Foot `θ` on the shock of the streamline through `(r̃, θ)`.
pub fn foot_point(field: &CharField, r: f64, theta: f64) -> Result<f64> {
    rk4_trace(field, r, theta, field.options.steps, |_, _| {})
}

/// Backward trace from `(r̃, θ)` to the shock, parametrized by `t` with `X₁ = 2r̃ - t`.
pub fn trace_characteristic(field: &CharField, r: f64, theta: f64) -> Result<Characteristic> {
    if !(r >= field.r_s && r <= field.r1) || theta.abs() > field.theta_half {
        return Err(Error::Domain(format!("start ({r}, {theta}) outside the domain")));
    }
    let mut x = Vec::new();
    rk4_trace(field, r, theta, field.options.steps, |a, b| x.push((a, b)))?;
    let t = x.iter().map(|&(a, _)| 2.0 * r - a).collect();
    Ok(Characteristic { t, x, source: (r, theta) })
}

fn interp_theta(values: &[f64], theta_half: f64, theta: f64) -> f64 {
    let n = values.len() - 1;
    let y = ((theta + theta_half) / (2.0 * theta_half) * n as f64).clamp(0.0, n as f64);
    let j = (y.floor() as usize).min(n - 1);
    let t = y - j as f64;
    (1.0 - t) * values[j] + t * values[j + 1]
}

/// `E` on the uniform `(r̃, θ)` grid of `field`, constant along traces.
pub fn transport_e(field: &CharField, e_init: &[f64]) -> Result<Field2D> {
    let nt = field.ntheta;
    let values: Result<Vec<f64>> = (0..(field.nr + 1) * (nt + 1))
        .into_par_iter()
        .map(|k| {
            let foot = foot_point(field, field.radius(k / (nt + 1)), field.theta(k % (nt + 1)))?;
            Ok(interp_theta(e_init, field.theta_half, foot))
        })
        .collect();
    Ok(Field2D { nr: field.nr, ntheta: nt, values: values?, quantity: Quantity::E })
}

/// `E` on the exit row only, with the step-halving discrepancy.
pub fn exit_e(field: &CharField, e_init: &[f64]) -> Result<(Vec<f64>, f64)> {
    let steps = field.options.steps;
    let rows: Result<Vec<(f64, f64)>> = (0..=field.ntheta)
        .into_par_iter()
        .map(|j| {
            let th = field.theta(j);
            let a = rk4_trace(field, field.r1, th, steps, |_, _| {})?;
            let b = rk4_trace(field, field.r1, th, 2 * steps, |_, _| {})?;
            Ok((interp_theta(e_init, field.theta_half, a), (a - b).abs()))
        })
        .collect();
    let rows = rows?;
    let err = rows.iter().map(|r| r.1).fold(0.0, f64::max);
    Ok((rows.into_iter().map(|r| r.0).collect(), err))
}

/// First-order upwind march of `∂_r̃ E + W ∂_θ E = 0` on a grid refined by `refine`,
/// returned at the nodes of `field`.
pub fn eulerian_upwind(field: &CharField, e_init: &[f64], refine: usize) -> Field2D {
    let (nr, nt) = (field.nr * refine, field.ntheta * refine);
    let dr = (field.r1 - field.r_s) / nr as f64;
    let dth = 2.0 * field.theta_half / nt as f64;
    let theta = |j: usize| -field.theta_half + j as f64 * dth;
    let mut e: Vec<f64> = (0..=nt).map(|j| interp_theta(e_init, field.theta_half, theta(j))).collect();
    let mut out = vec![0.0; (field.nr + 1) * (field.ntheta + 1)];
    let store = |out: &mut Vec<f64>, i: usize, e: &[f64]| {
        if i % refine == 0 {
            let ic = i / refine;
            for jc in 0..=field.ntheta {
                out[ic * (field.ntheta + 1) + jc] = e[jc * refine];
            }
        }
    };
    store(&mut out, 0, &e);
    for i in 0..nr {
        let r0 = field.r_s + i as f64 * dr;
        let wmax = (0..=nt)
            .map(|j| field.slope(r0, theta(j)).abs().max(field.slope(r0 + dr, theta(j)).abs()))
            .fold(0.0, f64::max);
        let sub = ((wmax * dr / dth).ceil() as usize).max(1);
        let h = dr / sub as f64;
        for s in 0..sub {
            let r = r0 + (s as f64 + 0.5) * h;
            let prev = e.clone();
            for j in 0..=nt {
                let w = field.slope(r, theta(j));
                let grad = if w > 0.0 {
                    if j == 0 { 0.0 } else { (prev[j] - prev[j - 1]) / dth }
                } else if j == nt {
                    0.0
                } else {
                    (prev[j + 1] - prev[j]) / dth
                };
                e[j] = prev[j] - h * w * grad;
            }
        }
        store(&mut out, i + 1, &e);
    }
    Field2D { nr: field.nr, ntheta: field.ntheta, values: out, quantity: Quantity::E }
}

/// Upstream state on the shock node `j` of the converged front.
pub fn upstream_at_shock(sol: &RadialSolution, grid: &SectorGrid, fbp: &FbpSolution, data: &PerturbationData, j: usize) -> Result<UpstreamAtShock> {
    let f = fbp.state.front.f[j];
    let th = grid.theta(j);
    let gm = data.grad_phi_minus(sol, f, th);
    let p = data.p_minus(sol, f, th);
    let minv = data.jacobian(f, th).try_inverse().ok_or_else(|| Error::Domain("singular Jacobian".into()))?;
    let rho = density_from_bernoulli(&sol.gas, (minv * gm).norm(), p)?;
    Ok(UpstreamAtShock { grad_phi: gm, p, rho })
}

/// `E` just behind the shock on each θ node.
pub fn shock_e_init(sol: &RadialSolution, grid: &SectorGrid, fbp: &FbpSolution, data: &PerturbationData) -> Result<Vec<f64>> {
    let grads = potential_gradients(sol, grid, &fbp.state, data)?;
    (0..=grid.ntheta)
        .map(|j| {
            let up = upstream_at_shock(sol, grid, fbp, data, j)?;
            let m = data.jacobian(fbp.state.front.f[j], grid.theta(j));
            e_init(&sol.gas, &up, &grads[grid.idx(0, j)], &m)
        })
        .collect()
}

/// `p/ρ^γ` of a state with transported quantity `E`.
pub fn entropy_from_e(gas: &GasModel, e: f64) -> f64 {
    let g = gas.gamma();
    ((g - 1.0) / g).powf(g) * e.powf(1.0 - g)
}

/// Pressure on the physical nodes, `(B0 - |m⁻¹∇φ|²/2)^{γ/(γ-1)} · E∘G`.
pub fn reconstruct_pressure(
    sol: &RadialSolution,
    grid: &SectorGrid,
    fbp: &FbpSolution,
    data: &PerturbationData,
    field: &CharField,
    e: &Field2D,
) -> Result<Field2D> {
    let gas = &sol.gas;
    let nt = grid.ntheta;
    let grads = potential_gradients(sol, grid, &fbp.state, data)?;
    let dr = (field.r1 - field.r_s) / field.nr as f64;
    let values: Result<Vec<f64>> = (0..grid.n_nodes())
        .into_par_iter()
        .map(|k| {
            let (i, j) = (k / (nt + 1), k % (nt + 1));
            let r = grid.radius_at(&fbp.state.front, i, j);
            let minv = data
                .jacobian(r, grid.theta(j))
                .try_inverse()
                .ok_or_else(|| Error::Domain("singular Jacobian".into()))?;
            let q2 = (minv * grads[k]).norm_squared();
            let base = gas.b0() - 0.5 * q2;
            if base <= 0.0 {
                return Err(Error::Cavitation { half_q2: 0.5 * q2, bound: gas.b0() });
            }
            let x = ((field.mapped_radius[k] - field.r_s) / dr).clamp(0.0, field.nr as f64);
            let ii = (x.floor() as usize).min(field.nr - 1);
            let s = x - ii as f64;
            let ev = (1.0 - s) * e.get(ii, j) + s * e.get(ii + 1, j);
            Ok(base.powf(gas.pressure_exponent()) * ev)
        })
        .collect();
    Ok(Field2D { nr: grid.nr, ntheta: nt, values: values?, quantity: Quantity::P })
}

/// `v ↦ (v_r, v_θ)` helper for tests and diagnostics.
pub fn velocity(data: &PerturbationData, r: f64, theta: f64, grad: &Vector2<f64>) -> Option<Vector2<f64>> {
    data.jacobian(r, theta).try_inverse().map(|m| m * grad)
}
