//! Three-state pore kinetics driven by the local field magnitude.
//!
//! Each state relaxes toward a target with its own time constant:
//! prepores `P0` toward `beta0(|E|)`, initial pores `P1` toward
//! `beta1(|E|)` and expanded pores `P2` toward the current `P1`. The
//! time constants of `P1` and `P2` switch between growth and decay values
//! depending on the sign of the drive term. Updates use the exact
//! exponential solution for a step with frozen target and time constant.

use serde::{Deserialize, Serialize};

use crate::material::EpParams;

/// Pore-state concentrations at one location. All values lie in `[0, 1]`.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct PoreState {
    pub p0: f64,
    pub p1: f64,
    pub p2: f64,
}

/// Pore states for every degree of freedom of a discretisation.
#[derive(Debug, Clone, PartialEq)]
pub struct PoreConcentrations {
    states: Vec<PoreState>,
}

impl PoreConcentrations {
    /// Unstimulated tissue: every concentration zero.
    pub fn at_rest(dofs: usize) -> Self {
        Self {
            states: vec![PoreState::default(); dofs],
        }
    }

    pub fn len(&self) -> usize {
        self.states.len()
    }

    pub fn is_empty(&self) -> bool {
        self.states.is_empty()
    }

    pub fn as_slice(&self) -> &[PoreState] {
        &self.states
    }

    pub fn as_mut_slice(&mut self) -> &mut [PoreState] {
        &mut self.states
    }

    /// Advances every DOF with its own field magnitude.
    pub fn step_all(&mut self, field_magnitudes: &[f64], dt: f64, ep: &EpParams) {
        debug_assert_eq!(field_magnitudes.len(), self.states.len());
        for (p, &e) in self.states.iter_mut().zip(field_magnitudes) {
            *p = state_step(p, e, dt, ep);
        }
    }
}

#[inline]
fn logistic(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// Prepore saturation level for a field magnitude.
#[inline]
pub fn beta0(e_mag: f64, ep: &EpParams) -> f64 {
    logistic((e_mag.abs() - ep.e0) / ep.de0)
}

/// Initial-pore saturation level for a field magnitude.
#[inline]
pub fn beta1(e_mag: f64, ep: &EpParams) -> f64 {
    logistic((e_mag.abs() - ep.e1) / ep.de1)
}

/// Effective initial-pore time constant. Growth accelerates with the
/// prepore concentration.
#[inline]
pub fn tau1_effective(p0: f64, growing: bool, ep: &EpParams) -> f64 {
    if growing {
        ep.tau1_grow * (1.0 - 0.5 * p0)
    } else {
        ep.tau1_decay
    }
}

#[inline]
pub fn tau2_effective(growing: bool, ep: &EpParams) -> f64 {
    if growing {
        ep.tau2_grow
    } else {
        ep.tau2_decay
    }
}

#[inline]
fn relax(current: f64, target: f64, dt: f64, tau: f64) -> f64 {
    target + (current - target) * (-dt / tau).exp()
}

/// Advances one location's pore states by `dt` under a constant field
/// magnitude.
///
/// Growth/decay branches and the prepore factor of `tau1` are taken from the
/// pre-step values. Results are clamped to `[0, 1]`.
pub fn state_step(p: &PoreState, e_mag: f64, dt: f64, ep: &EpParams) -> PoreState {
    let target0 = beta0(e_mag, ep);
    let target1 = beta1(e_mag, ep);
    let tau1 = tau1_effective(p.p0, target1 - p.p1 >= 0.0, ep);
    let tau2 = tau2_effective(p.p1 - p.p2 >= 0.0, ep);
    PoreState {
        p0: relax(p.p0, target0, dt, ep.tau0).clamp(0.0, 1.0),
        p1: relax(p.p1, target1, dt, tau1).clamp(0.0, 1.0),
        p2: relax(p.p2, p.p1, dt, tau2).clamp(0.0, 1.0),
    }
}

/// Right-hand side of the pore ODE system with branch selection evaluated
/// at `p`. Used by explicit integrators.
pub fn state_derivative(p: &PoreState, e_mag: f64, ep: &EpParams) -> PoreState {
    let d1 = beta1(e_mag, ep) - p.p1;
    let d2 = p.p1 - p.p2;
    PoreState {
        p0: (beta0(e_mag, ep) - p.p0) / ep.tau0,
        p1: d1 / tau1_effective(p.p0, d1 >= 0.0, ep),
        p2: d2 / tau2_effective(d2 >= 0.0, ep),
    }
}
