//! Polytropic gas relations for potential flow with a Bernoulli invariant.
//!
//! The radial speed `u` stands for the radial derivative of the potential.
//! Multidimensional velocities are handled in [`crate::elliptic_fbp`].

use crate::error::{Error, Result};
use serde::{Deserialize, Serialize};

/// Default relative width of the sonic band.
pub const TOL_SONIC: f64 = 1e-9;

/// Adiabatic exponent and Bernoulli constant.
///
/// `K0` is always derived from `b0`, never stored.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GasModel {
    gamma: f64,
    b0: f64,
}

impl GasModel {
    pub fn new(gamma: f64, b0: f64) -> Result<Self> {
        if !(gamma > 1.0) || !gamma.is_finite() {
            return Err(Error::Domain(format!("gamma must exceed 1, got {gamma}")));
        }
        if !(b0 > 0.0) || !b0.is_finite() {
            return Err(Error::Domain(format!("Bernoulli constant must be positive, got {b0}")));
        }
        Ok(Self { gamma, b0 })
    }

    /// Gas whose Bernoulli constant is fixed by the given state.
    pub fn from_state(gamma: f64, s: &FlowState) -> Result<Self> {
        let b0 = 0.5 * s.u * s.u + gamma * s.p / ((gamma - 1.0) * s.rho);
        Self::new(gamma, b0)
    }

    pub fn gamma(&self) -> f64 {
        self.gamma
    }

    pub fn b0(&self) -> f64 {
        self.b0
    }

    /// Critical speed squared `2(γ-1)B0/(γ+1)`.
    pub fn k0(&self) -> f64 {
        2.0 * (self.gamma - 1.0) * self.b0 / (self.gamma + 1.0)
    }

    /// `γ/(γ-1)`, the exponent linking pressure to `B0 - q²/2` along a streamline.
    pub fn pressure_exponent(&self) -> f64 {
        self.gamma / (self.gamma - 1.0)
    }

    /// `1/(γ-1)`.
    pub fn density_exponent(&self) -> f64 {
        1.0 / (self.gamma - 1.0)
    }
}

/// Point state with radial speed.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FlowState {
    pub rho: f64,
    pub u: f64,
    pub p: f64,
}

impl FlowState {
    pub fn new(rho: f64, u: f64, p: f64) -> Result<Self> {
        if !(rho > 0.0) || !(p > 0.0) || !u.is_finite() || !rho.is_finite() || !p.is_finite() {
            return Err(Error::Domain(format!(
                "invalid state rho = {rho}, u = {u}, p = {p}"
            )));
        }
        Ok(Self { rho, u, p })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum MachClass {
    Supersonic,
    Sonic,
    Subsonic,
}

pub fn sound_speed(gas: &GasModel, s: &FlowState) -> f64 {
    (gas.gamma * s.p / s.rho).sqrt()
}

pub fn bernoulli(gas: &GasModel, s: &FlowState) -> f64 {
    0.5 * s.u * s.u + gas.gamma * s.p / ((gas.gamma - 1.0) * s.rho)
}

/// Density closing the Bernoulli relation at speed `u` and pressure `p`.
pub fn density_from_bernoulli(gas: &GasModel, u: f64, p: f64) -> Result<f64> {
    let half_q2 = 0.5 * u * u;
    if half_q2 >= gas.b0 {
        return Err(Error::Cavitation { half_q2, bound: gas.b0 });
    }
    Ok(gas.gamma * p / ((gas.gamma - 1.0) * (gas.b0 - half_q2)))
}

pub fn mach_class(gas: &GasModel, s: &FlowState, tol_sonic: f64) -> MachClass {
    let c2 = gas.gamma * s.p / s.rho;
    let d = s.u * s.u - c2;
    if d > tol_sonic * c2 {
        MachClass::Supersonic
    } else if d < -tol_sonic * c2 {
        MachClass::Subsonic
    } else {
        MachClass::Sonic
    }
}

/// Isentropic density `(1 - (γ-1)q²/2)^{1/(γ-1)}`.
pub fn isentropic_density(gas: &GasModel, q2: f64) -> Result<f64> {
    let base = 1.0 - 0.5 * (gas.gamma - 1.0) * q2;
    if base <= 0.0 || q2 >= 2.0 / (gas.gamma - 1.0) {
        return Err(Error::Cavitation {
            half_q2: 0.5 * q2,
            bound: 1.0 / (gas.gamma - 1.0),
        });
    }
    Ok(base.powf(gas.density_exponent()))
}

/// `p/ρ^γ`, a monotone image of the specific entropy.
pub fn entropy_measure(gas: &GasModel, s: &FlowState) -> f64 {
    s.p / s.rho.powf(gas.gamma)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn gas14() -> GasModel {
        GasModel::new(1.4, 5.5).unwrap()
    }

    #[test]
    fn sound_speed_examples() {
        let g = gas14();
        assert_relative_eq!(sound_speed(&g, &FlowState::new(1.4, 0.0, 1.0).unwrap()), 1.0, epsilon = 1e-15);
        assert_relative_eq!(sound_speed(&g, &FlowState::new(1.0, 0.0, 1.0).unwrap()), 1.4f64.sqrt(), epsilon = 1e-15);
        let g2 = GasModel::new(2.0, 1.0).unwrap();
        assert_relative_eq!(sound_speed(&g2, &FlowState::new(2.0, 0.0, 1.0).unwrap()), 1.0, epsilon = 1e-15);
    }

    #[test]
    fn bernoulli_examples() {
        let g = gas14();
        assert_relative_eq!(bernoulli(&g, &FlowState::new(1.0, 0.0, 1.0).unwrap()), 3.5, epsilon = 1e-14);
        assert_relative_eq!(bernoulli(&g, &FlowState::new(1.0, 2.0, 1.0).unwrap()), 5.5, epsilon = 1e-14);
        let u = g.k0().sqrt();
        let rho = density_from_bernoulli(&g, u, 0.7).unwrap();
        let s = FlowState::new(rho, u, 0.7).unwrap();
        assert_relative_eq!(bernoulli(&g, &s), 5.5, max_relative = 1e-14);
        assert_eq!(mach_class(&g, &s, TOL_SONIC), MachClass::Sonic);
    }

    #[test]
    fn density_examples() {
        let g = gas14();
        assert_relative_eq!(density_from_bernoulli(&g, 2.0, 1.0).unwrap(), 1.0, epsilon = 1e-14);
        let rho = density_from_bernoulli(&g, 11.0 / 12.0, 19.0 / 6.0).unwrap();
        assert_relative_eq!(rho, 24.0 / 11.0, max_relative = 1e-14);
        assert!(matches!(
            density_from_bernoulli(&g, (2.0 * 5.5f64).sqrt(), 1.0),
            Err(Error::Cavitation { .. })
        ));
    }

    #[test]
    fn mach_examples() {
        let g = gas14();
        assert_eq!(mach_class(&g, &FlowState::new(1.0, 2.0, 1.0).unwrap(), TOL_SONIC), MachClass::Supersonic);
        assert_eq!(mach_class(&g, &FlowState::new(1.0, 0.0, 1.0).unwrap(), TOL_SONIC), MachClass::Subsonic);
    }

    #[test]
    fn isentropic_examples() {
        let g = gas14();
        assert_eq!(isentropic_density(&g, 0.0).unwrap(), 1.0);
        let g2 = GasModel::new(2.0, 1.0).unwrap();
        assert_relative_eq!(isentropic_density(&g2, 1.0).unwrap(), 0.5, epsilon = 1e-15);
        assert!(isentropic_density(&g, 2.0 / (1.4 - 1.0)).is_err());
    }

    #[test]
    fn entropy_examples() {
        let g = gas14();
        assert_eq!(entropy_measure(&g, &FlowState::new(1.0, 0.0, 1.0).unwrap()), 1.0);
        let s = FlowState::new(2.0, 0.0, 2f64.powf(1.4)).unwrap();
        assert_relative_eq!(entropy_measure(&g, &s), 1.0, epsilon = 1e-15);
    }

    #[test]
    fn constructor_rejects_bad_input() {
        assert!(GasModel::new(1.0, 1.0).is_err());
        assert!(GasModel::new(1.4, -1.0).is_err());
        assert!(FlowState::new(0.0, 1.0, 1.0).is_err());
    }
}
