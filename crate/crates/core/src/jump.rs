//! Rankine–Hugoniot relations for potential shocks.
//!
//! Gradients are given in reference coordinates. A Jacobian `m` converts them
//! to physical velocities by `m⁻¹∇φ`; the identity recovers the flat case.

use crate::error::{Error, Result};
use crate::gas::{density_from_bernoulli, mach_class, FlowState, GasModel, MachClass, TOL_SONIC};
use crate::quad::integrate01;
use crate::radial::{mu0, RadialSolution};
use nalgebra::{Matrix2, Vector2};
use serde::{Deserialize, Serialize};

/// States on both sides of a normal shock.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct JumpResult {
    pub upstream: FlowState,
    pub downstream: FlowState,
    pub normal_speed_up: f64,
    pub normal_speed_down: f64,
}

/// Radial shock: Prandtl relation for the speed, normal momentum for the pressure.
pub fn rh_jump_radial(gas: &GasModel, up: &FlowState) -> Result<JumpResult> {
    let k0 = gas.k0();
    let u2 = up.u * up.u;
    if u2 < k0 * (1.0 - TOL_SONIC) || up.u <= 0.0 {
        return Err(Error::NotSupersonic { u2, k0 });
    }
    let u = k0 / up.u;
    let p = up.rho * u2 + up.p - up.rho * k0;
    let rho = density_from_bernoulli(gas, u, p)?;
    let downstream = FlowState::new(rho, u, p)?;
    Ok(JumpResult { upstream: *up, downstream, normal_speed_up: up.u, normal_speed_down: u })
}

/// Mass, normal momentum and total enthalpy differences (upstream minus downstream).
pub fn rh_residuals(gas: &GasModel, up: &FlowState, down: &FlowState, normal_speed_up: f64, normal_speed_down: f64) -> (f64, f64, f64) {
    let g = gas.gamma();
    let mass = up.rho * normal_speed_up - down.rho * normal_speed_down;
    let momentum = up.rho * normal_speed_up * normal_speed_up + up.p
        - (down.rho * normal_speed_down * normal_speed_down + down.p);
    let h = |un: f64, s: &FlowState| 0.5 * un * un + g * s.p / ((g - 1.0) * s.rho);
    let energy = h(normal_speed_up, up) - h(normal_speed_down, down);
    (mass, momentum, energy)
}

/// Shock geometry from the two reference gradients.
#[derive(Debug, Clone, Copy)]
pub struct ShockNormal {
    /// Unit normal in physical coordinates, pointing downstream.
    pub normal: Vector2<f64>,
    /// Unit normal `∇(φ⁻-φ⁺)/|∇(φ⁻-φ⁺)|` in reference coordinates.
    pub normal_ref: Vector2<f64>,
    /// Physical upstream velocity.
    pub w_minus: Vector2<f64>,
    /// Physical downstream velocity.
    pub w_plus: Vector2<f64>,
}

impl ShockNormal {
    pub fn new(grad_minus: &Vector2<f64>, grad_plus: &Vector2<f64>, jac: &Matrix2<f64>) -> Result<Self> {
        let d = grad_minus - grad_plus;
        let scale = grad_minus.norm().max(grad_plus.norm());
        if d.norm() <= 1e-14 * scale || d.norm() == 0.0 {
            return Err(Error::DegenerateShock);
        }
        let minv = jac
            .try_inverse()
            .ok_or_else(|| Error::Domain("singular Jacobian".into()))?;
        let md = minv * d;
        Ok(Self {
            normal: md / md.norm(),
            normal_ref: d / d.norm(),
            w_minus: minv * grad_minus,
            w_plus: minv * grad_plus,
        })
    }

    pub fn normal_speed_minus(&self) -> f64 {
        self.w_minus.dot(&self.normal)
    }

    pub fn normal_speed_plus(&self) -> f64 {
        self.w_plus.dot(&self.normal)
    }
}

/// Critical speed squared for the generalized normal jump `w⁺_n w⁻_n = K_s`.
pub fn k_s(
    gas: &GasModel,
    grad_phi_minus: &Vector2<f64>,
    grad_phi_plus: &Vector2<f64>,
    p_minus: f64,
    rho_minus: f64,
    jac_psi: &Matrix2<f64>,
) -> Result<f64> {
    let sn = ShockNormal::new(grad_phi_minus, grad_phi_plus, jac_psi)?;
    Ok(k_s_from_normal(gas, &sn, p_minus, rho_minus))
}

pub(crate) fn k_s_from_normal(gas: &GasModel, sn: &ShockNormal, p_minus: f64, rho_minus: f64) -> f64 {
    let g = gas.gamma();
    let wn = sn.normal_speed_minus();
    2.0 * (g - 1.0) / (g + 1.0) * (0.5 * wn * wn + g * p_minus / ((g - 1.0) * rho_minus))
}

/// Line-averaged shock coefficient `μ_f` at front position `f_theta`.
pub fn mu_f(sol: &RadialSolution, f_theta: f64) -> Result<f64> {
    let rs = sol.r_s;
    let lim = 2.0 * sol.noz.delta;
    if !((f_theta - rs).abs() <= lim) {
        return Err(Error::Domain(format!(
            "front position {f_theta} outside [{}, {}]",
            rs - lim,
            rs + lim
        )));
    }
    if f_theta == rs {
        return Ok(mu0(sol));
    }
    let k0 = sol.gas.k0();
    let at = |t: f64| rs + t * (f_theta - rs);
    let num = integrate01(|t| {
        let r = at(t);
        let um = sol.u_minus(r);
        -k0 * sol.du_minus(r) / (um * um) - sol.du_plus(r)
    });
    let den = integrate01(|t| {
        let r = at(t);
        sol.u_minus(r) - sol.u_plus(r)
    });
    Ok(num / den)
}

/// Upstream data evaluated on the shock.
#[derive(Debug, Clone, Copy)]
pub struct UpstreamAtShock {
    pub grad_phi: Vector2<f64>,
    pub p: f64,
    pub rho: f64,
}

/// Initial value of the transported quantity just behind the shock.
pub fn e_init(gas: &GasModel, up: &UpstreamAtShock, grad_phi_plus: &Vector2<f64>, jac_psi: &Matrix2<f64>) -> Result<f64> {
    let sn = ShockNormal::new(&up.grad_phi, grad_phi_plus, jac_psi)?;
    let ks = k_s_from_normal(gas, &sn, up.p, up.rho);
    let wn = sn.normal_speed_minus();
    let p_plus = up.rho * wn * wn + up.p - up.rho * ks;
    let q2 = sn.w_plus.norm_squared();
    let base = gas.b0() - 0.5 * q2;
    if base <= 0.0 {
        return Err(Error::Cavitation { half_q2: 0.5 * q2, bound: gas.b0() });
    }
    Ok(p_plus / base.powf(gas.pressure_exponent()))
}

/// True when the downstream state of a radial jump is subsonic.
pub fn downstream_is_subsonic(gas: &GasModel, j: &JumpResult) -> bool {
    mach_class(gas, &j.downstream, TOL_SONIC) == MachClass::Subsonic
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gas::entropy_measure;
    use crate::radial::{background_solution, NozzleRadial};
    use approx::assert_relative_eq;

    fn gas() -> GasModel {
        GasModel::new(1.4, 5.5).unwrap()
    }

    #[test]
    fn jump_hand_example() {
        let g = gas();
        let j = rh_jump_radial(&g, &FlowState::new(1.0, 2.0, 1.0).unwrap()).unwrap();
        assert_relative_eq!(j.downstream.u, 11.0 / 12.0, max_relative = 1e-15);
        assert_relative_eq!(j.downstream.p, 19.0 / 6.0, max_relative = 1e-15);
        assert_relative_eq!(j.downstream.rho, 24.0 / 11.0, max_relative = 1e-15);
        // mass 2, momentum 5, enthalpy 5.5 on both sides
        let d = j.downstream;
        assert_relative_eq!(d.rho * d.u, 2.0, max_relative = 1e-15);
        assert_relative_eq!(d.rho * d.u * d.u + d.p, 5.0, max_relative = 1e-15);
        assert_relative_eq!(0.5 * d.u * d.u + 3.5 * d.p / d.rho, 5.5, max_relative = 1e-15);
        assert!(downstream_is_subsonic(&g, &j));
        let e = entropy_measure(&g, &d);
        assert_relative_eq!(e, (19.0 / 6.0) / (24.0f64 / 11.0).powf(1.4), max_relative = 1e-14);
        assert!((e - 1.0622).abs() < 2e-4, "entropy {e}");
    }

    #[test]
    fn sonic_fixed_point_and_subsonic_error() {
        let g = gas();
        let u = g.k0().sqrt();
        let p = 1.3;
        let rho = density_from_bernoulli(&g, u, p).unwrap();
        let s = FlowState::new(rho, u, p).unwrap();
        let j = rh_jump_radial(&g, &s).unwrap();
        assert_relative_eq!(j.downstream.u, u, max_relative = 1e-15);
        assert_relative_eq!(j.downstream.p, p, max_relative = 1e-14);
        assert_relative_eq!(j.downstream.rho, rho, max_relative = 1e-14);
        let sub = FlowState::new(density_from_bernoulli(&g, 0.5, 1.0).unwrap(), 0.5, 1.0).unwrap();
        assert!(matches!(rh_jump_radial(&g, &sub), Err(Error::NotSupersonic { .. })));
    }

    #[test]
    fn residual_examples() {
        let g = gas();
        let s = FlowState::new(1.0, 2.0, 1.0).unwrap();
        assert_eq!(rh_residuals(&g, &s, &s, 2.0, 2.0), (0.0, 0.0, 0.0));
        let j = rh_jump_radial(&g, &s).unwrap();
        let mut d = j.downstream;
        d.p *= 1.01;
        let (_, m, _) = rh_residuals(&g, &s, &d, 2.0, j.normal_speed_down);
        assert_relative_eq!(m, -0.01 * j.downstream.p, max_relative = 1e-12);
    }

    #[test]
    fn k_s_reduces_to_k0() {
        let g = gas();
        let gm = Vector2::new(2.0, 0.0);
        let gp = Vector2::new(11.0 / 12.0, 0.0);
        let v = k_s(&g, &gm, &gp, 1.0, 1.0, &Matrix2::identity()).unwrap();
        assert_relative_eq!(v, g.k0(), max_relative = 1e-15);
        assert!(matches!(k_s(&g, &gm, &gm, 1.0, 1.0, &Matrix2::identity()), Err(Error::DegenerateShock)));
    }

    #[test]
    fn k_s_tangential_perturbation_is_quadratic() {
        let g = gas();
        let gm = Vector2::new(2.0, 0.0);
        let dev = |e: f64| {
            let gp = Vector2::new(11.0 / 12.0, e);
            (k_s(&g, &gm, &gp, 1.0, 1.0, &Matrix2::identity()).unwrap() - g.k0()).abs()
        };
        let r1 = dev(1e-2) / dev(5e-3);
        let r2 = dev(5e-3) / dev(2.5e-3);
        assert!((r1 - 4.0).abs() < 0.05 && (r2 - 4.0).abs() < 0.05, "{r1} {r2}");
    }

    #[test]
    fn k_s_scaled_jacobian_direct_evaluation() {
        let g = gas();
        let e = 0.03;
        let m = Matrix2::identity() * (1.0 + e);
        let gm = Vector2::new(2.0, 0.1);
        let gp = Vector2::new(0.9, -0.05);
        let v = k_s(&g, &gm, &gp, 0.8, 1.1, &m).unwrap();
        // independent transcription of the defining expression
        let d = gm - gp;
        let nd = (d[0] * d[0] + d[1] * d[1]).sqrt();
        let minv = 1.0 / (1.0 + e);
        let q2gm = [minv * minv * gm[0], minv * minv * gm[1]];
        let dot = (q2gm[0] * d[0] + q2gm[1] * d[1]) / nd;
        let md = minv * nd;
        let t = nd * dot / md;
        let oracle = 2.0 * 0.4 / 2.4 * (0.5 * t * t + 1.4 * 0.8 / (0.4 * 1.1));
        assert_relative_eq!(v, oracle, max_relative = 1e-14);
    }

    fn background() -> RadialSolution {
        let inflow = FlowState::new(1.0, 2.0, 1.0).unwrap();
        let g = GasModel::from_state(1.4, &inflow).unwrap();
        background_solution(&g, &NozzleRadial::new(1.0, 2.0, 2).unwrap(), &inflow, 1.5).unwrap()
    }

    #[test]
    fn mu_f_limits() {
        let sol = background();
        let m0 = mu0(&sol);
        assert_eq!(mu_f(&sol, sol.r_s).unwrap(), m0);
        assert_relative_eq!(mu_f(&sol, sol.r_s + 1e-9).unwrap(), m0, max_relative = 1e-7);
        let mut ratios = Vec::new();
        for &d in &[0.02, 0.01, 0.005] {
            let v = mu_f(&sol, sol.r_s + d).unwrap();
            assert!(v >= 0.5 * m0);
            ratios.push((v - m0).abs() / d);
        }
        assert!(ratios.iter().all(|&c| c < 10.0 * m0));
        assert!(mu_f(&sol, sol.r_s - 0.099).unwrap() >= 0.5 * m0);
        assert!(matches!(mu_f(&sol, sol.r_s + 0.2), Err(Error::Domain(_))));
    }

    #[test]
    fn e_init_background_constant() {
        let sol = background();
        let g = sol.gas;
        let up = UpstreamAtShock {
            grad_phi: Vector2::new(sol.jump.upstream.u, 0.0),
            p: sol.jump.upstream.p,
            rho: sol.jump.upstream.rho,
        };
        let e = e_init(&g, &up, &Vector2::new(sol.jump.downstream.u, 0.0), &Matrix2::identity()).unwrap();
        assert_relative_eq!(e, sol.e0_plus(), max_relative = 1e-14);
        let mut prev = 0.0;
        for &eps in &[1e-2, 1e-3] {
            let upp = UpstreamAtShock { grad_phi: up.grad_phi + Vector2::new(0.0, eps), ..up };
            let dev = (e_init(&g, &upp, &Vector2::new(sol.jump.downstream.u, eps), &Matrix2::identity()).unwrap() - e).abs();
            assert!(dev <= 10.0 * eps * e);
            prev = dev;
        }
        assert!(prev >= 0.0);
    }
}
