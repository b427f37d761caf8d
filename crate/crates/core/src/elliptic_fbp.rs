//! Shock free boundary problem for the downstream potential on a 2D sector.
//!
//! The unknown is `ψ = φ - φ₀⁺` on the domain `{f(θ) < r < r1, |θ| < Θ/2}`,
//! flattened by `r = f(θ) + ξ (r1 - f(θ))`. Each Picard pass freezes the
//! secant coefficient `a` and the right-hand side at the current iterate and
//! solves a linear oblique-derivative problem with a vertex-centred finite
//! volume scheme. Fluxes are written in the orthonormal polar frame `(r̂, θ̂)`.

use crate::banded::BandMatrix;
use crate::error::{Error, Result};
use crate::gas::{density_from_bernoulli, GasModel};
use crate::jump::{k_s_from_normal, mu_f, ShockNormal};
use crate::quad::gauss8;
use crate::radial::{mu0, RadialSolution};
use nalgebra::{Matrix2, Vector2};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::fmt::Write as _;

/// Fraction of the background ellipticity bound below which a frozen
/// coefficient is rejected.
pub const ELLIPTICITY_FACTOR: f64 = 0.5;

/// Uniform grid on the logical rectangle `[0,1] × [-Θ/2, Θ/2]`.
#[derive(Debug, Clone)]
pub struct SectorGrid {
    pub nr: usize,
    pub ntheta: usize,
    pub theta_half: f64,
    pub r_s: f64,
    pub r1: f64,
    /// `r_s + ξ_i (r1 - r_s)`.
    pub radius: Vec<f64>,
    pub k1: Vec<f64>,
    pub k2: Vec<f64>,
}

impl SectorGrid {
    pub fn new(sol: &RadialSolution, nr: usize, ntheta: usize, theta_half: f64) -> Result<Self> {
        if nr < 4 || ntheta < 4 {
            return Err(Error::Domain(format!("grid {nr}x{ntheta} too coarse")));
        }
        if sol.noz.n != 2 {
            return Err(Error::Domain(format!("the sector solver needs n = 2, got {}", sol.noz.n)));
        }
        if !(theta_half > 0.0 && theta_half < std::f64::consts::PI) {
            return Err(Error::Domain(format!("half-angle {theta_half} outside (0, pi)")));
        }
        let r1 = sol.noz.r1;
        let radius: Vec<f64> = (0..=nr).map(|i| sol.r_s + (r1 - sol.r_s) * i as f64 / nr as f64).collect();
        let k1: Vec<f64> = radius.iter().map(|&r| background_k1(sol, r)).collect();
        let k2: Vec<f64> = radius.iter().map(|&r| background_k2(sol, r)).collect();
        if k1.iter().chain(&k2).any(|&k| !(k > 0.0)) {
            return Err(Error::EllipticityLoss { r: sol.r_s, lambda_min: 0.0, floor: 0.0 });
        }
        Ok(Self { nr, ntheta, theta_half, r_s: sol.r_s, r1, radius, k1, k2 })
    }

    pub fn n_nodes(&self) -> usize {
        (self.nr + 1) * (self.ntheta + 1)
    }

    #[inline]
    pub fn idx(&self, i: usize, j: usize) -> usize {
        i * (self.ntheta + 1) + j
    }

    pub fn d_xi(&self) -> f64 {
        1.0 / self.nr as f64
    }

    pub fn d_theta(&self) -> f64 {
        2.0 * self.theta_half / self.ntheta as f64
    }

    pub fn xi(&self, i: usize) -> f64 {
        i as f64 / self.nr as f64
    }

    pub fn theta(&self, j: usize) -> f64 {
        -self.theta_half + j as f64 * self.d_theta()
    }

    pub fn thetas(&self) -> Vec<f64> {
        (0..=self.ntheta).map(|j| self.theta(j)).collect()
    }

    /// Trapezoid weights on the θ nodes.
    pub fn theta_weights(&self) -> Vec<f64> {
        let h = self.d_theta();
        (0..=self.ntheta)
            .map(|j| if j == 0 || j == self.ntheta { 0.5 * h } else { h })
            .collect()
    }

    /// Physical radius of node `(i, j)` for the given front.
    pub fn radius_at(&self, front: &ShockFront, i: usize, j: usize) -> f64 {
        let f = front.f[j];
        f + self.xi(i) * (self.r1 - f)
    }
}

/// `k₁(r) = r^{n-1} a_rr(r, 0)`.
pub fn background_k1(sol: &RadialSolution, r: f64) -> f64 {
    let nm1 = sol.noz.n as i32 - 1;
    r.powi(nm1) * ellipticity_bound(sol, r)
}

/// `k₂(r) = r^{n-3} (B0 - u⁺²/2)^{1/(γ-1)}`.
pub fn background_k2(sol: &RadialSolution, r: f64) -> f64 {
    let u = sol.u_plus(r);
    let gas = &sol.gas;
    r.powi(sol.noz.n as i32 - 3) * (gas.b0() - 0.5 * u * u).powf(gas.density_exponent())
}

/// Lower eigenvalue bound of `a(r, 0)`, equal to its radial entry.
pub fn ellipticity_bound(sol: &RadialSolution, r: f64) -> f64 {
    let g = sol.gas.gamma();
    let u = sol.u_plus(r);
    (g + 1.0) / (2.0 * (g - 1.0))
        * (sol.gas.b0() - 0.5 * u * u).powf((2.0 - g) / (g - 1.0))
        * (sol.gas.k0() - u * u)
}

/// Sampled shock position `θ ↦ f(θ)` on the grid's θ nodes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ShockFront {
    pub f: Vec<f64>,
    pub theta_half: f64,
}

impl ShockFront {
    pub fn flat(r_s: f64, grid: &SectorGrid) -> Self {
        Self { f: vec![r_s; grid.ntheta + 1], theta_half: grid.theta_half }
    }

    fn d_theta(&self) -> f64 {
        2.0 * self.theta_half / (self.f.len() - 1) as f64
    }

    /// `f'(θ_j)`, central inside and second-order one-sided at the walls.
    pub fn derivative(&self, j: usize) -> f64 {
        let f = &self.f;
        let n = f.len() - 1;
        let h = self.d_theta();
        if j == 0 {
            (-3.0 * f[0] + 4.0 * f[1] - f[2]) / (2.0 * h)
        } else if j == n {
            (3.0 * f[n] - 4.0 * f[n - 1] + f[n - 2]) / (2.0 * h)
        } else {
            (f[j + 1] - f[j - 1]) / (2.0 * h)
        }
    }

    pub fn max_offset(&self, r_s: f64) -> f64 {
        self.f.iter().map(|v| (v - r_s).abs()).fold(0.0, f64::max)
    }

    /// CSV with columns `theta,f`.
    pub fn to_csv(&self) -> String {
        let mut s = String::from("theta,f\n");
        let h = self.d_theta();
        for (j, v) in self.f.iter().enumerate() {
            let _ = writeln!(s, "{:.17e},{:.17e}", -self.theta_half + j as f64 * h, v);
        }
        s
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Quantity {
    Psi,
    E,
    P,
    Aux,
}

impl Quantity {
    pub fn label(&self) -> &'static str {
        match self {
            Quantity::Psi => "psi",
            Quantity::E => "E",
            Quantity::P => "p",
            Quantity::Aux => "aux",
        }
    }
}

/// Nodal values on a [`SectorGrid`], stored with θ varying fastest.
#[derive(Debug, Clone, PartialEq)]
pub struct Field2D {
    pub nr: usize,
    pub ntheta: usize,
    pub values: Vec<f64>,
    pub quantity: Quantity,
}

impl Field2D {
    pub fn zeros(grid: &SectorGrid, quantity: Quantity) -> Self {
        Self { nr: grid.nr, ntheta: grid.ntheta, values: vec![0.0; grid.n_nodes()], quantity }
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.values[i * (self.ntheta + 1) + j]
    }

    pub fn row(&self, i: usize) -> &[f64] {
        let w = self.ntheta + 1;
        &self.values[i * w..(i + 1) * w]
    }

    pub fn max_abs(&self) -> f64 {
        self.values.iter().map(|v| v.abs()).fold(0.0, f64::max)
    }

    pub fn is_finite(&self) -> bool {
        self.values.iter().all(|v| v.is_finite())
    }

    /// Snapshot CSV; `radius(i, j)` supplies the physical radius of a node.
    pub fn to_csv(&self, grid: &SectorGrid, radius: impl Fn(usize, usize) -> f64) -> String {
        let mut s = format!(
            "# quantity={} nr={} ntheta={} theta_half={:.17e} r_s={:.17e}\nr,theta,value\n",
            self.quantity.label(),
            self.nr,
            self.ntheta,
            grid.theta_half,
            grid.r_s
        );
        for i in 0..=self.nr {
            for j in 0..=self.ntheta {
                let _ = writeln!(s, "{:.17e},{:.17e},{:.17e}", radius(i, j), grid.theta(j), self.get(i, j));
            }
        }
        s
    }
}

/// Neumann cosine `cos(kπ(θ+Θ/2)/Θ)` and its θ-derivative.
pub fn cosine_mode(k: u32, theta_half: f64, theta: f64) -> (f64, f64) {
    let w = k as f64 * std::f64::consts::PI / (2.0 * theta_half);
    let arg = w * (theta + theta_half);
    (arg.cos(), -w * arg.sin())
}

/// Reference-to-physical diffeomorphism `Ψ`, given analytically.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "snake_case")]
pub enum PsiMap {
    Identity,
    /// `R = r (1 + ε s(r) c(θ))`, `Θ = θ`, with `s = ((r-r0)/(r1-r0))²`.
    RadialStretch { amplitude: f64, mode: u32 },
}

/// Upstream perturbation `ψ₋ = a_φ (r - r0) c(θ)`, `p₋ = p₀⁻ (1 + a_p c(θ))`.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct UpstreamPerturbation {
    pub phi_amplitude: f64,
    pub p_amplitude: f64,
    pub mode: u32,
}

/// Geometry, upstream, and exit data of one problem instance.
#[derive(Debug, Clone, PartialEq)]
pub struct PerturbationData {
    pub psi_map: PsiMap,
    pub upstream: UpstreamPerturbation,
    /// Exit normal mass flux on the θ nodes.
    pub v_ex: Vec<f64>,
    r0: f64,
    r1: f64,
    theta_half: f64,
}

impl PerturbationData {
    pub fn new(
        sol: &RadialSolution,
        grid: &SectorGrid,
        psi_map: PsiMap,
        upstream: UpstreamPerturbation,
        v_ex: Vec<f64>,
    ) -> Result<Self> {
        if v_ex.len() != grid.ntheta + 1 {
            return Err(Error::Domain(format!(
                "exit data has {} samples, grid needs {}",
                v_ex.len(),
                grid.ntheta + 1
            )));
        }
        let d = Self { psi_map, upstream, v_ex, r0: sol.noz.r0, r1: sol.noz.r1, theta_half: grid.theta_half };
        if let PsiMap::RadialStretch { amplitude, .. } = psi_map {
            if !(amplitude.abs() < 0.25) {
                return Err(Error::Domain(format!("map amplitude {amplitude} too far from identity")));
            }
        }
        Ok(d)
    }

    /// Identity map, radial upstream, `v_ex = v_c`.
    pub fn background(sol: &RadialSolution, grid: &SectorGrid) -> Self {
        let vc = critical_exit_flux(sol);
        Self::new(sol, grid, PsiMap::Identity, UpstreamPerturbation::default(), vec![vc; grid.ntheta + 1])
            .expect("background data is valid")
    }

    pub fn with_exit_flux(&self, v_ex: Vec<f64>) -> Self {
        Self { v_ex, ..self.clone() }
    }

    /// `m = DΨ` in the orthonormal polar frames, mapping physical to reference gradients.
    pub fn jacobian(&self, r: f64, theta: f64) -> Matrix2<f64> {
        match self.psi_map {
            PsiMap::Identity => Matrix2::identity(),
            PsiMap::RadialStretch { amplitude, mode } => {
                let (c, dc) = cosine_mode(mode, self.theta_half, theta);
                let l = self.r1 - self.r0;
                let x = (r - self.r0) / l;
                let s = x * x;
                let ds = 2.0 * x / l;
                let rr = 1.0 + amplitude * (s + r * ds) * c;
                let rt = amplitude * s * dc;
                let ro = 1.0 + amplitude * s * c;
                Matrix2::new(rr, 0.0, rt, ro)
            }
        }
    }

    pub fn psi_minus(&self, r: f64, theta: f64) -> f64 {
        let up = &self.upstream;
        if up.phi_amplitude == 0.0 {
            return 0.0;
        }
        up.phi_amplitude * (r - self.r0) * cosine_mode(up.mode, self.theta_half, theta).0
    }

    pub fn grad_phi_minus(&self, sol: &RadialSolution, r: f64, theta: f64) -> Vector2<f64> {
        let up = &self.upstream;
        let base = Vector2::new(sol.u_minus(r), 0.0);
        if up.phi_amplitude == 0.0 {
            return base;
        }
        let (c, dc) = cosine_mode(up.mode, self.theta_half, theta);
        base + up.phi_amplitude * Vector2::new(c, (r - self.r0) * dc / r)
    }

    pub fn p_minus(&self, sol: &RadialSolution, r: f64, theta: f64) -> f64 {
        let up = &self.upstream;
        let p = sol.p_minus(r);
        if up.p_amplitude == 0.0 {
            return p;
        }
        p * (1.0 + up.p_amplitude * cosine_mode(up.mode, self.theta_half, theta).0)
    }

    /// Size of the geometric and upstream perturbation.
    pub fn size(&self) -> f64 {
        let m = match self.psi_map {
            PsiMap::Identity => 0.0,
            PsiMap::RadialStretch { amplitude, .. } => amplitude.abs(),
        };
        m + self.upstream.phi_amplitude.abs() + self.upstream.p_amplitude.abs()
    }
}

/// `v_c = ρ̂(u⁺(r1)) u⁺(r1)`, the background exit flux.
pub fn critical_exit_flux(sol: &RadialSolution) -> f64 {
    let u = sol.u_plus(sol.noz.r1);
    (sol.gas.b0() - 0.5 * u * u).powf(sol.gas.density_exponent()) * u
}

fn rho_hat(gas: &GasModel, q2: f64) -> Result<f64> {
    let base = gas.b0() - 0.5 * q2;
    if base <= 0.0 {
        return Err(Error::Cavitation { half_q2: 0.5 * q2, bound: gas.b0() });
    }
    Ok(base.powf(gas.density_exponent()))
}

/// Mass flux `A(m, η) = det m · ρ̂(|m⁻¹η|²) · m⁻ᵀ m⁻¹ η`.
pub fn flux_a(gas: &GasModel, m: &Matrix2<f64>, eta: &Vector2<f64>) -> Result<Vector2<f64>> {
    let minv = m.try_inverse().ok_or_else(|| Error::Domain("singular Jacobian".into()))?;
    let w = minv * eta;
    Ok(m.determinant() * rho_hat(gas, w.norm_squared())? * (minv.transpose() * w))
}

/// `∂A/∂η` at `m = I`.
fn flux_jacobian(gas: &GasModel, eta: &Vector2<f64>) -> Result<Matrix2<f64>> {
    let s = eta.norm_squared();
    let base = gas.b0() - 0.5 * s;
    if base <= 0.0 {
        return Err(Error::Cavitation { half_q2: 0.5 * s, bound: gas.b0() });
    }
    let g = gas.gamma();
    let rho = base.powf(1.0 / (g - 1.0));
    let c = base.powf((2.0 - g) / (g - 1.0)) / (g - 1.0);
    Ok(Matrix2::identity() * rho - c * eta * eta.transpose())
}

/// Secant coefficient `∫₀¹ ∂A/∂η(η0 + t η) dt`.
fn secant_coefficient(gas: &GasModel, eta0: &Vector2<f64>, eta: &Vector2<f64>) -> Result<Matrix2<f64>> {
    if eta.norm_squared() == 0.0 {
        return flux_jacobian(gas, eta0);
    }
    let mut a = Matrix2::zeros();
    for (t, w) in gauss8() {
        a += w * flux_jacobian(gas, &(eta0 + t * eta))?;
    }
    Ok(a)
}

fn min_eigenvalue(a: &Matrix2<f64>) -> f64 {
    let tr = a[(0, 0)] + a[(1, 1)];
    let det = a[(0, 0)] * a[(1, 1)] - a[(0, 1)] * a[(1, 0)];
    let disc = (0.25 * tr * tr - det).max(0.0).sqrt();
    0.5 * tr - disc
}

/// Frozen diffusion matrix at radius `r` for the increment gradient `eta`.
pub fn coeff_a(gas: &GasModel, sol: &RadialSolution, r: f64, eta: &Vector2<f64>) -> Result<Matrix2<f64>> {
    let eta0 = Vector2::new(sol.u_plus(r), 0.0);
    let a = secant_coefficient(gas, &eta0, eta)?;
    let floor = ELLIPTICITY_FACTOR * ellipticity_bound(sol, r);
    let lambda_min = min_eigenvalue(&a);
    if !(lambda_min > floor) {
        return Err(Error::EllipticityLoss { r, lambda_min, floor });
    }
    Ok(a)
}

/// Closed form of `a(r, 0)`: `diag(a_rr, ρ̂)`.
pub fn coeff_a_background(sol: &RadialSolution, r: f64) -> Matrix2<f64> {
    let u = sol.u_plus(r);
    let rho = (sol.gas.b0() - 0.5 * u * u).powf(sol.gas.density_exponent());
    Matrix2::new(ellipticity_bound(sol, r), 0.0, 0.0, rho)
}

/// Exit radial derivative `x` with `A(m, (x, t))·r̂ = v`, found near `guess`.
pub fn exit_radial_speed(gas: &GasModel, m: &Matrix2<f64>, v: f64, t: f64, guess: f64) -> Result<f64> {
    let h = |x: f64| flux_a(gas, m, &Vector2::new(x, t)).map(|a| a[0] - v);
    let mut x = guess;
    for _ in 0..50 {
        let fx = h(x)?;
        let e = 1e-7 * x.abs().max(1e-3);
        let d = (h(x + e)? - h(x - e)?) / (2.0 * e);
        if !(d > 0.0) {
            return Err(Error::NoRoot(format!("exit flux {v} not attained on the subsonic branch")));
        }
        let step = fx / d;
        x -= step;
        if step.abs() <= 1e-15 * x.abs().max(1.0) {
            return Ok(x);
        }
    }
    Err(Error::NoRoot(format!("exit speed iteration stalled for flux {v}")))
}

/// Frozen coefficients and boundary data of one linear problem.
#[derive(Debug, Clone)]
pub struct Coefficients {
    /// Diffusion matrix per node.
    pub a: Vec<Matrix2<f64>>,
    /// Right-hand side flux `F` per node.
    pub flux: Vec<Vector2<f64>>,
    /// Robin coefficient on the shock nodes.
    pub mu: Vec<f64>,
    /// Shock data `g` in `∂_r u - μ u = g`.
    pub g_shock: Vec<f64>,
    /// Exit data `g3` in `(a∇u - F)·r̂ = g3`.
    pub g_exit: Vec<f64>,
}

/// Assembled banded system; rows are finite-volume balances.
#[derive(Debug, Clone)]
pub struct LinearSystem {
    pub matrix: BandMatrix,
    pub rhs: Vec<f64>,
    nr: usize,
    ntheta: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RowKind {
    Interior,
    Shock,
    Wall,
    Exit,
}

impl LinearSystem {
    pub fn row_kind(&self, k: usize) -> RowKind {
        let w = self.ntheta + 1;
        let (i, j) = (k / w, k % w);
        if i == 0 {
            RowKind::Shock
        } else if i == self.nr {
            RowKind::Exit
        } else if j == 0 || j == self.ntheta {
            RowKind::Wall
        } else {
            RowKind::Interior
        }
    }

    /// Row residuals `(A u - b)_k / A_kk`, maxed per row kind.
    pub fn residuals(&self, u: &[f64]) -> Residuals {
        let au = self.matrix.mul(u);
        let mut r = Residuals::default();
        for k in 0..u.len() {
            let v = ((au[k] - self.rhs[k]) / self.matrix.diag(k)).abs();
            let slot = match self.row_kind(k) {
                RowKind::Interior => &mut r.interior,
                RowKind::Shock => &mut r.shock,
                RowKind::Wall => &mut r.wall,
                RowKind::Exit => &mut r.exit,
            };
            *slot = slot.max(v);
        }
        r
    }
}

/// Maximum residuals by category, in units of `ψ`.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct Residuals {
    pub interior: f64,
    pub shock: f64,
    pub wall: f64,
    pub exit: f64,
    /// Potential continuity `|𝔍|` across the front.
    pub jump: f64,
}

impl Residuals {
    pub fn max(&self) -> f64 {
        self.interior.max(self.shock).max(self.wall).max(self.exit).max(self.jump)
    }
}

#[derive(Clone, Copy)]
struct Geo {
    r: f64,
    rxi: f64,
    xi: f64,
    fp: f64,
}

impl Geo {
    fn at(f: f64, fp: f64, xi: f64, r1: f64) -> Self {
        Self { r: f + xi * (r1 - f), rxi: r1 - f, xi, fp }
    }

    fn jac(&self) -> f64 {
        self.r * self.rxi
    }

    fn grad_xi(&self) -> Vector2<f64> {
        Vector2::new(1.0 / self.rxi, -(1.0 - self.xi) * self.fp / (self.r * self.rxi))
    }

    fn grad_th(&self) -> Vector2<f64> {
        Vector2::new(0.0, 1.0 / self.r)
    }

    /// `(G11, G12, G22)` with `G_ab = J ∇a · (a ∇b)`.
    fn metric(&self, a: &Matrix2<f64>) -> (f64, f64, f64) {
        let j = self.jac();
        let gx = self.grad_xi();
        let gt = self.grad_th();
        (j * gx.dot(&(a * gx)), j * gx.dot(&(a * gt)), j * gt.dot(&(a * gt)))
    }
}

/// Sparse linear form `Σ c_k u_k + c`.
#[derive(Debug, Clone, Default)]
struct Lin {
    t: Vec<(usize, f64)>,
    c: f64,
}

impl Lin {
    fn term(mut self, k: usize, v: f64) -> Self {
        self.t.push((k, v));
        self
    }

    fn konst(c: f64) -> Self {
        Self { t: Vec::new(), c }
    }

    fn axpy(&mut self, s: f64, o: &Lin) {
        self.t.extend(o.t.iter().map(|&(k, v)| (k, s * v)));
        self.c += s * o.c;
    }
}

/// Assembles the finite-volume system for the given front and coefficients.
pub fn assemble_operator(grid: &SectorGrid, front: &ShockFront, coef: &Coefficients) -> LinearSystem {
    let (nr, nt) = (grid.nr, grid.ntheta);
    let (dxi, dth) = (grid.d_xi(), grid.d_theta());
    let r1 = grid.r1;
    let idx = |i: usize, j: usize| grid.idx(i, j);
    let fp: Vec<f64> = (0..=nt).map(|j| front.derivative(j)).collect();

    let d_theta = |i: usize, j: usize| -> Lin {
        let h2 = 2.0 * dth;
        if j == 0 {
            Lin::default().term(idx(i, 0), -3.0 / h2).term(idx(i, 1), 4.0 / h2).term(idx(i, 2), -1.0 / h2)
        } else if j == nt {
            Lin::default()
                .term(idx(i, nt), 3.0 / h2)
                .term(idx(i, nt - 1), -4.0 / h2)
                .term(idx(i, nt - 2), 1.0 / h2)
        } else {
            Lin::default().term(idx(i, j + 1), 1.0 / h2).term(idx(i, j - 1), -1.0 / h2)
        }
    };
    let node_geo = |i: usize, j: usize| Geo::at(front.f[j], fp[j], grid.xi(i), r1);
    let d_xi = |i: usize, j: usize| -> Lin {
        if i == 0 {
            let rxi = r1 - front.f[j];
            let mut l = Lin::konst(rxi * coef.g_shock[j]);
            l.t.push((idx(0, j), rxi * coef.mu[j]));
            l
        } else if i == nr {
            let (g11, g12, _) = node_geo(i, j).metric(&coef.a[idx(i, j)]);
            let mut l = Lin::konst(r1 * coef.g_exit[j] / g11);
            l.axpy(-g12 / g11, &d_theta(i, j));
            l
        } else {
            Lin::default().term(idx(i + 1, j), 0.5 / dxi).term(idx(i - 1, j), -0.5 / dxi)
        }
    };
    // flux through the ξ-face between (i, j) and (i+1, j)
    let xi_face = |i: usize, j: usize| -> Lin {
        let geo = Geo::at(front.f[j], fp[j], (i as f64 + 0.5) * dxi, r1);
        let (k0, k1) = (idx(i, j), idx(i + 1, j));
        let a = 0.5 * (coef.a[k0] + coef.a[k1]);
        let fl = 0.5 * (coef.flux[k0] + coef.flux[k1]);
        let (g11, g12, _) = geo.metric(&a);
        let mut l = Lin::konst(-geo.jac() * geo.grad_xi().dot(&fl)).term(k1, g11 / dxi).term(k0, -g11 / dxi);
        l.axpy(0.5 * g12, &d_theta(i, j));
        l.axpy(0.5 * g12, &d_theta(i + 1, j));
        l
    };
    // flux through the θ-face between (i, j) and (i, j+1)
    let th_face = |i: usize, j: usize| -> Lin {
        let f = 0.5 * (front.f[j] + front.f[j + 1]);
        let geo = Geo::at(f, (front.f[j + 1] - front.f[j]) / dth, grid.xi(i), r1);
        let (k0, k1) = (idx(i, j), idx(i, j + 1));
        let a = 0.5 * (coef.a[k0] + coef.a[k1]);
        let fl = 0.5 * (coef.flux[k0] + coef.flux[k1]);
        let (_, g12, g22) = geo.metric(&a);
        let mut l = Lin::konst(-geo.jac() * geo.grad_th().dot(&fl)).term(k1, g22 / dth).term(k0, -g22 / dth);
        l.axpy(0.5 * g12, &d_xi(i, j));
        l.axpy(0.5 * g12, &d_xi(i, j + 1));
        l
    };
    let shock_face = |j: usize| -> Lin {
        let geo = node_geo(0, j);
        let k = idx(0, j);
        let (g11, g12, _) = geo.metric(&coef.a[k]);
        let mut l = Lin::konst(-geo.jac() * geo.grad_xi().dot(&coef.flux[k]));
        l.axpy(g11, &d_xi(0, j));
        l.axpy(g12, &d_theta(0, j));
        l
    };

    let rows: Vec<Lin> = (0..grid.n_nodes())
        .into_par_iter()
        .map(|k| {
            let (i, j) = (k / (nt + 1), k % (nt + 1));
            let wth = if j == 0 || j == nt { 0.5 * dth } else { dth };
            let wxi = if i == 0 || i == nr { 0.5 * dxi } else { dxi };
            let mut row = Lin::default();
            if i < nr {
                row.axpy(wth, &xi_face(i, j));
            } else {
                let fr = coef.flux[k][0];
                row.axpy(wth, &Lin::konst(r1 * (coef.g_exit[j] - fr)));
            }
            if i > 0 {
                row.axpy(-wth, &xi_face(i - 1, j));
            } else {
                row.axpy(-wth, &shock_face(j));
            }
            if j < nt {
                row.axpy(wxi, &th_face(i, j));
            }
            if j > 0 {
                row.axpy(-wxi, &th_face(i, j - 1));
            }
            row
        })
        .collect();

    let band = nt + 3;
    let mut matrix = BandMatrix::zeros(grid.n_nodes(), band, band);
    let mut rhs = vec![0.0; grid.n_nodes()];
    for (k, row) in rows.into_iter().enumerate() {
        for (c, v) in row.t {
            matrix.add(k, c, -v);
        }
        rhs[k] = row.c;
    }
    LinearSystem { matrix, rhs, nr, ntheta: nt }
}

/// Solver tolerances and safeguards.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FbpOptions {
    pub tol_lin: f64,
    pub tol_outer: f64,
    pub max_outer: usize,
    /// Bound on `‖ψ‖_∞` for accepted iterates.
    pub trust_radius: f64,
}

impl Default for FbpOptions {
    fn default() -> Self {
        Self { tol_lin: 1e-10, tol_outer: 1e-11, max_outer: 40, trust_radius: 0.5 }
    }
}

/// Current iterate of the outer loop.
#[derive(Debug, Clone)]
pub struct FbpState {
    pub front: ShockFront,
    pub psi: Field2D,
    /// `∂_r ψ` on the shock nodes implied by the last shock condition.
    pub shock_dr: Vec<f64>,
}

impl FbpState {
    pub fn background(grid: &SectorGrid) -> Self {
        Self {
            front: ShockFront::flat(grid.r_s, grid),
            psi: Field2D::zeros(grid, Quantity::Psi),
            shock_dr: vec![0.0; grid.ntheta + 1],
        }
    }
}

fn theta_derivative(grid: &SectorGrid, psi: &Field2D, i: usize, j: usize) -> f64 {
    let nt = grid.ntheta;
    let h2 = 2.0 * grid.d_theta();
    if j == 0 {
        (-3.0 * psi.get(i, 0) + 4.0 * psi.get(i, 1) - psi.get(i, 2)) / h2
    } else if j == nt {
        (3.0 * psi.get(i, nt) - 4.0 * psi.get(i, nt - 1) + psi.get(i, nt - 2)) / h2
    } else {
        (psi.get(i, j + 1) - psi.get(i, j - 1)) / h2
    }
}

/// `∇ψ` in the polar frame at every node; shock rows use `shock_dr`, exit
/// rows a one-sided difference.
pub fn increment_gradients(grid: &SectorGrid, state: &FbpState) -> Vec<Vector2<f64>> {
    let (nr, nt) = (grid.nr, grid.ntheta);
    let dxi = grid.d_xi();
    let psi = &state.psi;
    (0..grid.n_nodes())
        .into_par_iter()
        .map(|k| {
            let (i, j) = (k / (nt + 1), k % (nt + 1));
            let f = state.front.f[j];
            let geo = Geo::at(f, state.front.derivative(j), grid.xi(i), grid.r1);
            let p_xi = if i == 0 {
                geo.rxi * state.shock_dr[j]
            } else if i == nr {
                (3.0 * psi.get(nr, j) - 4.0 * psi.get(nr - 1, j) + psi.get(nr - 2, j)) / (2.0 * dxi)
            } else {
                (psi.get(i + 1, j) - psi.get(i - 1, j)) / (2.0 * dxi)
            };
            let p_th = theta_derivative(grid, psi, i, j);
            p_xi * geo.grad_xi() + p_th * geo.grad_th()
        })
        .collect()
}

/// Full reference gradient `∇φ` at every node. Exit rows solve the exit
/// flux condition for the radial component.
pub fn potential_gradients(
    sol: &RadialSolution,
    grid: &SectorGrid,
    state: &FbpState,
    data: &PerturbationData,
) -> Result<Vec<Vector2<f64>>> {
    let nt = grid.ntheta;
    let mut g = increment_gradients(grid, state);
    for (k, v) in g.iter_mut().enumerate() {
        let (i, j) = (k / (nt + 1), k % (nt + 1));
        v[0] += sol.u_plus(grid.radius_at(&state.front, i, j));
    }
    for j in 0..=nt {
        let k = grid.idx(grid.nr, j);
        let m = data.jacobian(grid.r1, grid.theta(j));
        g[k][0] = exit_radial_speed(&sol.gas, &m, data.v_ex[j], g[k][1], g[k][0])?;
    }
    Ok(g)
}

/// Shock-row data: `(μ_f, g)` per node.
fn shock_data(
    sol: &RadialSolution,
    grid: &SectorGrid,
    state: &FbpState,
    data: &PerturbationData,
) -> Result<(Vec<f64>, Vec<f64>)> {
    let gas = &sol.gas;
    let k0 = gas.k0();
    let m0 = mu0(sol);
    let limit = 2.0 * sol.noz.delta;
    let rows: Result<Vec<(f64, f64)>> = (0..=grid.ntheta)
        .into_par_iter()
        .map(|j| {
            let f = state.front.f[j];
            let th = grid.theta(j);
            let fp = state.front.derivative(j);
            let oblique = 1.0 / (1.0 + (fp / f).powi(2)).sqrt();
            if oblique < 0.5 {
                return Err(Error::Obliqueness { node: j, value: oblique });
            }
            let mu = mu_f(sol, f).map_err(|_| Error::FrontEscape { offset: (f - sol.r_s).abs(), limit })?;
            if mu < 0.5 * m0 {
                return Err(Error::FrontEscape { offset: (f - sol.r_s).abs(), limit });
            }
            let m = data.jacobian(f, th);
            let minv = m.try_inverse().ok_or_else(|| Error::Domain("singular Jacobian".into()))?;
            let gm = data.grad_phi_minus(sol, f, th);
            let pm = data.p_minus(sol, f, th);
            let rhom = density_from_bernoulli(gas, (minv * gm).norm(), pm)?;
            let dr = state.shock_dr[j];
            let dth = theta_derivative(grid, &state.psi, 0, j);
            let gp = Vector2::new(sol.u_plus(f) + dr, (dth - fp * dr) / f);
            let sn = ShockNormal::new(&gm, &gp, &m)?;
            let ks = k_s_from_normal(gas, &sn, pm, rhom);
            let g = (gp[0] - sn.normal_speed_plus()) + ks / sn.normal_speed_minus() - k0 / sol.u_minus(f)
                - mu * data.psi_minus(f, th);
            Ok((mu, g))
        })
        .collect();
    Ok(rows?.into_iter().unzip())
}

/// Frozen coefficients for the current iterate.
pub fn frozen_coefficients(
    sol: &RadialSolution,
    grid: &SectorGrid,
    state: &FbpState,
    data: &PerturbationData,
) -> Result<Coefficients> {
    let gas = &sol.gas;
    let nt = grid.ntheta;
    let grads = increment_gradients(grid, state);
    let nodes: Result<Vec<(Matrix2<f64>, Vector2<f64>)>> = (0..grid.n_nodes())
        .into_par_iter()
        .map(|k| {
            let (i, j) = (k / (nt + 1), k % (nt + 1));
            let r = grid.radius_at(&state.front, i, j);
            let dpsi = grads[k];
            let a = coeff_a(gas, sol, r, &dpsi)?;
            let eta = Vector2::new(sol.u_plus(r), 0.0) + dpsi;
            let flux = match data.psi_map {
                PsiMap::Identity => Vector2::zeros(),
                _ => {
                    let m = data.jacobian(r, grid.theta(j));
                    flux_a(gas, &Matrix2::identity(), &eta)? - flux_a(gas, &m, &eta)?
                }
            };
            Ok((a, flux))
        })
        .collect();
    let (a, flux): (Vec<_>, Vec<_>) = nodes?.into_iter().unzip();
    let (mu, g_shock) = shock_data(sol, grid, state, data)?;
    let vc = critical_exit_flux(sol);
    let g_exit = data.v_ex.iter().map(|v| v - vc).collect();
    Ok(Coefficients { a, flux, mu, g_shock, g_exit })
}

/// Linear system of one Picard pass, frozen at `state`.
pub fn assemble_linear_system(
    sol: &RadialSolution,
    grid: &SectorGrid,
    state: &FbpState,
    data: &PerturbationData,
) -> Result<(LinearSystem, Coefficients)> {
    let coef = frozen_coefficients(sol, grid, state, data)?;
    Ok((assemble_operator(grid, &state.front, &coef), coef))
}

/// Direct banded solve with a residual check.
pub fn solve_linear(system: &LinearSystem, tol_lin: f64) -> Result<Field2D> {
    let lu = system.matrix.clone().factor()?;
    let mut u = lu.solve(&system.rhs);
    let res = system.residuals(&u);
    if !(res.max() <= tol_lin) {
        // one step of iterative refinement
        let au = system.matrix.mul(&u);
        let r: Vec<f64> = system.rhs.iter().zip(&au).map(|(b, a)| b - a).collect();
        let du = lu.solve(&r);
        u.iter_mut().zip(&du).for_each(|(x, d)| *x += d);
        let res = system.residuals(&u);
        if !(res.max() <= tol_lin) {
            return Err(Error::SolverDivergence(format!("linear residual {:e}", res.max())));
        }
    }
    if u.iter().any(|v| !v.is_finite()) {
        return Err(Error::SolverDivergence("non-finite solution".into()));
    }
    Ok(Field2D { nr: system.nr, ntheta: system.ntheta, values: u, quantity: Quantity::Psi })
}

/// `∂_r ψ` on the shock implied by the shock condition of `coef`.
fn implied_shock_dr(grid: &SectorGrid, psi: &Field2D, coef: &Coefficients) -> Vec<f64> {
    (0..=grid.ntheta).map(|j| coef.mu[j] * psi.get(0, j) + coef.g_shock[j]).collect()
}

/// One frozen-coefficient pass: returns the new `ψ` and its shock derivative.
pub fn picard_step(
    sol: &RadialSolution,
    grid: &SectorGrid,
    state: &FbpState,
    data: &PerturbationData,
    opts: &FbpOptions,
) -> Result<(Field2D, Vec<f64>)> {
    let (sys, coef) = assemble_linear_system(sol, grid, state, data)?;
    let psi = solve_linear(&sys, opts.tol_lin)?;
    let norm = psi.max_abs();
    if !(norm <= opts.trust_radius) {
        return Err(Error::TrustRegion { norm, radius: opts.trust_radius });
    }
    let dr = implied_shock_dr(grid, &psi, &coef);
    Ok((psi, dr))
}

/// Potential jump `𝔍 = (φ₋ - φ₀⁺ - ψ)(f)` on the shock nodes.
pub fn potential_jump(sol: &RadialSolution, grid: &SectorGrid, front: &ShockFront, psi: &Field2D, data: &PerturbationData) -> Vec<f64> {
    (0..=grid.ntheta)
        .map(|j| {
            let f = front.f[j];
            data.psi_minus(f, grid.theta(j)) + sol.phi_minus(f) - sol.phi_plus(f) - psi.get(0, j)
        })
        .collect()
}

/// Newton step `f ← f - 𝔍/(u⁻ - u⁺)(r_s)` on every shock node.
pub fn front_update(
    sol: &RadialSolution,
    grid: &SectorGrid,
    front: &ShockFront,
    psi: &Field2D,
    data: &PerturbationData,
) -> Result<ShockFront> {
    let d = sol.jump.upstream.u - sol.jump.downstream.u;
    let jump = potential_jump(sol, grid, front, psi, data);
    let f: Vec<f64> = front.f.iter().zip(&jump).map(|(f, j)| f - j / d).collect();
    let new = ShockFront { f, theta_half: front.theta_half };
    let limit = 2.0 * sol.noz.delta;
    let offset = new.max_offset(sol.r_s);
    if !(offset <= limit) {
        return Err(Error::FrontEscape { offset, limit });
    }
    let m0 = mu0(sol);
    for &fj in &new.f {
        let mu = mu_f(sol, fj).map_err(|_| Error::FrontEscape { offset, limit })?;
        if mu < 0.5 * m0 {
            return Err(Error::FrontEscape { offset, limit });
        }
    }
    if new.f.iter().any(|&v| !(v > sol.noz.r0 && v < sol.noz.r1)) {
        return Err(Error::FrontEscape { offset, limit });
    }
    Ok(new)
}

/// One outer iteration record.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OuterRecord {
    pub iteration: usize,
    pub residuals: Residuals,
    /// `‖ψ_new - ψ‖_∞`.
    pub step_psi: f64,
    /// `‖f_new - f‖_∞`.
    pub step_front: f64,
    /// Ratio of successive `ψ` steps, once two are available.
    pub contraction: Option<f64>,
}

/// Converged free boundary solution.
#[derive(Debug, Clone)]
pub struct FbpSolution {
    pub state: FbpState,
    pub history: Vec<OuterRecord>,
    pub residuals: Residuals,
}

impl FbpSolution {
    pub fn front(&self) -> &ShockFront {
        &self.state.front
    }

    pub fn psi(&self) -> &Field2D {
        &self.state.psi
    }
}

/// Nonlinear residuals of `state`, including consistency of the shock derivative.
pub fn fbp_residuals(
    sol: &RadialSolution,
    grid: &SectorGrid,
    state: &FbpState,
    data: &PerturbationData,
) -> Result<(Residuals, LinearSystem, Coefficients)> {
    let (sys, coef) = assemble_linear_system(sol, grid, state, data)?;
    let mut res = sys.residuals(&state.psi.values);
    let implied = implied_shock_dr(grid, &state.psi, &coef);
    for j in 0..=grid.ntheta {
        let rxi = grid.r1 - state.front.f[j];
        res.shock = res.shock.max((implied[j] - state.shock_dr[j]).abs() * rxi * grid.d_xi());
    }
    res.jump = potential_jump(sol, grid, &state.front, &state.psi, data)
        .iter()
        .map(|v| v.abs())
        .fold(0.0, f64::max);
    Ok((res, sys, coef))
}

/// Outer loop alternating one Picard pass with one front Newton step.
pub fn solve_fbp(
    sol: &RadialSolution,
    grid: &SectorGrid,
    data: &PerturbationData,
    opts: &FbpOptions,
) -> Result<FbpSolution> {
    solve_fbp_from(sol, grid, data, opts, FbpState::background(grid))
}

pub fn solve_fbp_from(
    sol: &RadialSolution,
    grid: &SectorGrid,
    data: &PerturbationData,
    opts: &FbpOptions,
    start: FbpState,
) -> Result<FbpSolution> {
    let mut state = start;
    let mut history: Vec<OuterRecord> = Vec::new();
    let mut last = f64::INFINITY;
    for it in 0..=opts.max_outer {
        let (res, sys, coef) = fbp_residuals(sol, grid, &state, data)?;
        log::debug!("outer {it}: residual {:e}", res.max());
        if it > 0 && res.max() <= opts.tol_outer {
            if let Some(r) = history.last_mut() {
                r.residuals = res;
            }
            return Ok(FbpSolution { state, history, residuals: res });
        }
        if it == opts.max_outer {
            return Err(Error::NoConvergence { stage: "solve_fbp", iterations: it, residual: res.max() });
        }
        let psi = solve_linear(&sys, opts.tol_lin)?;
        let norm = psi.max_abs();
        if !(norm <= opts.trust_radius) {
            return Err(Error::TrustRegion { norm, radius: opts.trust_radius });
        }
        let shock_dr = implied_shock_dr(grid, &psi, &coef);
        let front = front_update(sol, grid, &state.front, &psi, data)?;
        let step_psi = psi.values.iter().zip(&state.psi.values).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        let step_front = front.f.iter().zip(&state.front.f).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        let contraction = (it > 0 && last > 0.0).then(|| step_psi / last);
        last = step_psi;
        history.push(OuterRecord { iteration: it, residuals: res, step_psi, step_front, contraction });
        state = FbpState { front, psi, shock_dr };
    }
    unreachable!()
}

/// Net conormal flux `(exit, shock)` through the two curved boundaries.
pub fn boundary_fluxes(grid: &SectorGrid, front: &ShockFront, coef: &Coefficients, psi: &Field2D) -> (f64, f64) {
    let w = grid.theta_weights();
    let mut exit = 0.0;
    let mut shock = 0.0;
    for j in 0..=grid.ntheta {
        let kx = grid.idx(grid.nr, j);
        exit += w[j] * grid.r1 * (coef.g_exit[j] - coef.flux[kx][0]);
        let k = grid.idx(0, j);
        let geo = Geo::at(front.f[j], front.derivative(j), 0.0, grid.r1);
        let (g11, g12, _) = geo.metric(&coef.a[k]);
        let u_xi = geo.rxi * (coef.mu[j] * psi.get(0, j) + coef.g_shock[j]);
        let u_th = theta_derivative(grid, psi, 0, j);
        shock += w[j] * (g11 * u_xi + g12 * u_th - geo.jac() * geo.grad_xi().dot(&coef.flux[k]));
    }
    (exit, shock)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gas::FlowState;
    use crate::radial::{background_solution, NozzleRadial};
    use approx::assert_relative_eq;

    fn background() -> RadialSolution {
        let gas = GasModel::new(1.4, 5.5).unwrap();
        let noz = NozzleRadial::new(1.0, 2.0, 2).unwrap();
        background_solution(&gas, &noz, &FlowState::new(1.0, 2.0, 1.0).unwrap(), 1.5).unwrap()
    }

    #[test]
    fn coefficient_at_zero_matches_closed_form() {
        let sol = background();
        for &r in &[1.5, 1.7, 2.0] {
            let a = coeff_a(&sol.gas, &sol, r, &Vector2::zeros()).unwrap();
            let b = coeff_a_background(&sol, r);
            assert!((a - b).abs().max() < 1e-12);
            assert!(min_eigenvalue(&a) >= ellipticity_bound(&sol, r) * (1.0 - 1e-12));
        }
    }

    #[test]
    fn secant_coefficient_matches_dense_trapezoid() {
        let sol = background();
        let eta = Vector2::new(0.03, -0.02);
        let r = 1.6;
        let a = coeff_a(&sol.gas, &sol, r, &eta).unwrap();
        let eta0 = Vector2::new(sol.u_plus(r), 0.0);
        let n = 10_000;
        let mut b = Matrix2::zeros();
        for k in 0..=n {
            let t = k as f64 / n as f64;
            let w = if k == 0 || k == n { 0.5 } else { 1.0 } / n as f64;
            b += w * flux_jacobian(&sol.gas, &(eta0 + t * eta)).unwrap();
        }
        assert!((a - b).abs().max() < 1e-8);
        // secant property
        let da = flux_a(&sol.gas, &Matrix2::identity(), &(eta0 + eta)).unwrap()
            - flux_a(&sol.gas, &Matrix2::identity(), &eta0).unwrap();
        assert!((a * eta - da).norm() < 1e-13);
    }

    #[test]
    fn ellipticity_loss_is_reported() {
        let sol = background();
        let eta = Vector2::new(0.9, 0.0);
        assert!(matches!(coeff_a(&sol.gas, &sol, 1.6, &eta), Err(Error::EllipticityLoss { .. })));
    }

    /// Harmonic `r^ν cos(ν(θ+Θ/2))`, `ν = π/Θ`, with value, `∂_r`.
    fn harmonic(th_half: f64, r: f64, th: f64) -> (f64, f64) {
        let nu = std::f64::consts::PI / (2.0 * th_half);
        let c = (nu * (th + th_half)).cos();
        (r.powf(nu) * c, nu * r.powf(nu - 1.0) * c)
    }

    fn laplace_problem(grid: &SectorGrid, front: &ShockFront, mu: f64) -> Coefficients {
        let n = grid.n_nodes();
        let g_shock = (0..=grid.ntheta)
            .map(|j| {
                let (u, ur) = harmonic(grid.theta_half, front.f[j], grid.theta(j));
                ur - mu * u
            })
            .collect();
        let g_exit = (0..=grid.ntheta).map(|j| harmonic(grid.theta_half, grid.r1, grid.theta(j)).1).collect();
        Coefficients {
            a: vec![Matrix2::identity(); n],
            flux: vec![Vector2::zeros(); n],
            mu: vec![mu; grid.ntheta + 1],
            g_shock,
            g_exit,
        }
    }

    fn wavy_front(grid: &SectorGrid) -> ShockFront {
        let f = (0..=grid.ntheta).map(|j| grid.r_s + 0.04 * cosine_mode(1, grid.theta_half, grid.theta(j)).0).collect();
        ShockFront { f, theta_half: grid.theta_half }
    }

    fn laplace_error(nr: usize, nt: usize) -> (f64, f64) {
        let sol = background();
        let grid = SectorGrid::new(&sol, nr, nt, std::f64::consts::PI / 12.0).unwrap();
        let front = wavy_front(&grid);
        let coef = laplace_problem(&grid, &front, 1.3);
        let sys = assemble_operator(&grid, &front, &coef);
        let exact: Vec<f64> = (0..grid.n_nodes())
            .map(|k| {
                let (i, j) = (k / (nt + 1), k % (nt + 1));
                harmonic(grid.theta_half, grid.radius_at(&front, i, j), grid.theta(j)).0
            })
            .collect();
        let u = solve_linear(&sys, 1e-10).unwrap();
        let err = u.values.iter().zip(&exact).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        // truncation: residual per unit cell area
        let res = sys.residuals(&exact);
        (err, res.interior)
    }

    #[test]
    fn separable_laplace_solution_converges_second_order() {
        let (e1, _) = laplace_error(16, 16);
        let (e2, _) = laplace_error(32, 32);
        let (e3, _) = laplace_error(64, 64);
        let p1 = (e1 / e2).log2();
        let p2 = (e2 / e3).log2();
        assert!(p1 > 1.8 && p2 > 1.8, "orders {p1} {p2} ({e1:e} {e2:e} {e3:e})");
    }

    #[test]
    fn manufactured_residual_is_second_order() {
        let (_, r1) = laplace_error(16, 16);
        let (_, r2) = laplace_error(32, 32);
        // row residual divided by the diagonal scales like h² times the truncation
        let p = (r1 / r2).log2();
        assert!(p > 1.8, "order {p}");
    }

    #[test]
    fn zero_data_gives_zero_field() {
        let sol = background();
        let grid = SectorGrid::new(&sol, 12, 8, 0.3).unwrap();
        let state = FbpState::background(&grid);
        let data = PerturbationData::background(&sol, &grid);
        let (sys, coef) = assemble_linear_system(&sol, &grid, &state, &data).unwrap();
        assert!(coef.g_shock.iter().all(|g| g.abs() < 1e-13));
        assert!(sys.rhs.iter().all(|v| v.abs() < 1e-13));
        let u = solve_linear(&sys, 1e-12).unwrap();
        assert!(u.max_abs() < 1e-12);
    }

    #[test]
    fn comparison_principle() {
        let sol = background();
        let grid = SectorGrid::new(&sol, 16, 12, 0.3).unwrap();
        let front = ShockFront::flat(grid.r_s, &grid);
        let n = grid.n_nodes();
        let coef = Coefficients {
            a: (0..n).map(|k| coeff_a_background(&sol, grid.radius_at(&front, k / 13, k % 13))).collect(),
            flux: vec![Vector2::zeros(); n],
            mu: vec![mu0(&sol); 13],
            g_shock: (0..13).map(|j| 0.1 * (j as f64 * 0.7).sin().abs()).collect(),
            g_exit: (0..13).map(|j| -0.2 * (j as f64 * 0.3).cos().abs()).collect(),
        };
        let u = solve_linear(&assemble_operator(&grid, &front, &coef), 1e-12).unwrap();
        assert!(u.values.iter().all(|&v| v <= 1e-14));
    }

    #[test]
    fn zero_perturbation_is_a_fixed_point() {
        let sol = background();
        let grid = SectorGrid::new(&sol, 16, 8, 0.3).unwrap();
        let data = PerturbationData::background(&sol, &grid);
        let out = solve_fbp(&sol, &grid, &data, &FbpOptions::default()).unwrap();
        assert!(out.psi().max_abs() <= 1e-14);
        assert!(out.front().max_offset(sol.r_s) <= 1e-14);
        assert_eq!(out.history.len(), 1);
    }

    fn perturbed(sol: &RadialSolution, grid: &SectorGrid, eps: f64) -> PerturbationData {
        let vc = critical_exit_flux(sol);
        let v = grid.thetas().iter().map(|&t| vc * (1.0 + eps * cosine_mode(1, grid.theta_half, t).0)).collect();
        PerturbationData::new(
            sol,
            grid,
            PsiMap::RadialStretch { amplitude: eps, mode: 2 },
            UpstreamPerturbation { phi_amplitude: eps, p_amplitude: eps, mode: 1 },
            v,
        )
        .unwrap()
    }

    #[test]
    fn perturbed_solve_converges_and_conserves_flux() {
        let sol = background();
        let grid = SectorGrid::new(&sol, 24, 12, 0.3).unwrap();
        let data = perturbed(&sol, &grid, 1e-2);
        let out = solve_fbp(&sol, &grid, &data, &FbpOptions::default()).unwrap();
        assert!(out.residuals.max() <= 1e-11);
        let offset = out.front().max_offset(sol.r_s);
        assert!(offset > 1e-5 && offset < 0.05, "offset {offset}");
        let ratios: Vec<f64> = out.history.iter().filter_map(|r| r.contraction).collect();
        assert!(ratios.iter().all(|&q| q < 0.5), "{ratios:?}");
        let (_, sys, coef) = fbp_residuals(&sol, &grid, &out.state, &data).unwrap();
        let u = solve_linear(&sys, 1e-12).unwrap();
        let (ex, sh) = boundary_fluxes(&grid, out.front(), &coef, &u);
        assert_relative_eq!(ex, sh, epsilon = 1e-12);
    }

    #[test]
    fn linear_front_response() {
        let sol = background();
        let grid = SectorGrid::new(&sol, 8, 8, 0.3).unwrap();
        let front = ShockFront::flat(sol.r_s, &grid);
        let mut psi = Field2D::zeros(&grid, Quantity::Psi);
        for j in 0..=8 {
            psi.values[grid.idx(0, j)] = 1e-6 * (j as f64).cos();
        }
        let data = PerturbationData::background(&sol, &grid);
        let new = front_update(&sol, &grid, &front, &psi, &data).unwrap();
        let d = sol.jump.upstream.u - sol.jump.downstream.u;
        for j in 0..=8 {
            assert_relative_eq!(new.f[j] - sol.r_s, psi.get(0, j) / d, max_relative = 1e-9);
        }
    }

    #[test]
    fn symmetric_data_gives_symmetric_solution() {
        let sol = background();
        let grid = SectorGrid::new(&sol, 16, 12, 0.3).unwrap();
        let vc = critical_exit_flux(&sol);
        let v = grid.thetas().iter().map(|&t| vc * (1.0 + 1e-3 * cosine_mode(2, grid.theta_half, t).0)).collect();
        let data = PerturbationData::new(
            &sol,
            &grid,
            PsiMap::RadialStretch { amplitude: 1e-2, mode: 2 },
            UpstreamPerturbation { phi_amplitude: 0.0, p_amplitude: 1e-2, mode: 2 },
            v,
        )
        .unwrap();
        let out = solve_fbp(&sol, &grid, &data, &FbpOptions::default()).unwrap();
        let nt = grid.ntheta;
        for j in 0..=nt {
            assert!((out.front().f[j] - out.front().f[nt - j]).abs() < 1e-12);
            for i in 0..=grid.nr {
                assert!((out.psi().get(i, j) - out.psi().get(i, nt - j)).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn obliqueness_violation_is_reported() {
        let sol = background();
        let grid = SectorGrid::new(&sol, 8, 64, 0.3).unwrap();
        let mut state = FbpState::background(&grid);
        state.front.f = (0..=64).map(|j| if j < 32 { sol.r_s } else { sol.r_s + 0.09 }).collect();
        let data = PerturbationData::background(&sol, &grid);
        let r = assemble_linear_system(&sol, &grid, &state, &data);
        assert!(matches!(r, Err(Error::Obliqueness { .. })), "{r:?}");
    }
}
