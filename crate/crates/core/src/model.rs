//! Mass constants, the shape angle double cover and the shape potentials.

use std::f64::consts::{FRAC_1_SQRT_2, FRAC_PI_2};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Below this |cos θ| the unregularized potential V is treated as singular.
pub const DEFAULT_V_SINGULARITY: f64 = 1e-8;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MassParams {
    pub m3: f64,
    pub mu: f64,
    /// Lagrange shape in the covering angle u; the other one is -l_plus.
    pub l_plus: f64,
    pub v_lagrange: f64,
    pub v_euler: f64,
}

impl MassParams {
    pub fn new(m3: f64) -> Result<Self> {
        if !(m3 > 0.0) || !m3.is_finite() {
            return Err(Error::Domain(format!("m3 must be positive, got {m3}")));
        }
        let mu = 2.0 * m3 / (2.0 + m3);
        let cos4 = (2.0 + m3) / (2.0 * (1.0 + 2.0 * m3));
        let l_plus = cos4.sqrt().sqrt().acos();
        let mut p = MassParams { m3, mu, l_plus, v_lagrange: 0.0, v_euler: 0.0 };
        p.v_lagrange = (2.0 * p.potential_at_u(l_plus)).sqrt();
        p.v_euler = (2.0 * p.potential_at_u(0.0)).sqrt();
        Ok(p)
    }

    /// V(θ(u)) for u away from binary collision, computed through W / cos²u.
    fn potential_at_u(&self, u: f64) -> f64 {
        let c2 = u.cos().powi(2);
        regularized_potential_w(u, self).0 / c2
    }

    /// Critical points of V in the fundamental domain: -l₊, 0, l₊.
    pub fn central_shapes(&self) -> [f64; 3] {
        [-self.l_plus, 0.0, self.l_plus]
    }
}

pub fn derive_mass_params(m3: f64) -> Result<MassParams> {
    MassParams::new(m3)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EnergyLevel {
    pub h: f64,
}

impl EnergyLevel {
    pub fn new(h: f64) -> Result<Self> {
        if !(h > 0.0) || !h.is_finite() {
            return Err(Error::Domain(format!("energy must be positive, got {h}")));
        }
        Ok(EnergyLevel { h })
    }

    /// Zero energy is allowed for Lyapunov experiments only.
    pub fn nonnegative(h: f64) -> Result<Self> {
        if !(h >= 0.0) || !h.is_finite() {
            return Err(Error::Domain(format!("energy must be nonnegative, got {h}")));
        }
        Ok(EnergyLevel { h })
    }

    /// Asymptotic speed √(2h).
    pub fn speed(&self) -> f64 {
        (2.0 * self.h).sqrt()
    }
}

/// Shape angle θ(u) of the double cover and dθ/du.
///
/// θ is read off from cos θ = cos²u, sin θ = sin u √(1+cos²u); since cos θ ≥ 0 the
/// two-argument arctangent already lands continuously in [-π/2, π/2].
pub fn theta_of_u(u: f64) -> (f64, f64) {
    let (su, cu) = u.sin_cos();
    let c2 = cu * cu;
    let root = (1.0 + c2).sqrt();
    let theta = (su * root).atan2(c2);
    (theta, 2.0 * cu / root)
}

/// Inverse of `theta_of_u` on the branch u ∈ [-π/2, π/2].
pub fn u_of_theta(theta: f64) -> f64 {
    let (st, ct) = theta.sin_cos();
    let ct = ct.max(0.0);
    (st / (1.0 + ct).sqrt()).atan2(ct.sqrt())
}

pub fn shape_potential_v(theta: f64, params: &MassParams) -> Result<(f64, f64)> {
    shape_potential_v_with_threshold(theta, params, DEFAULT_V_SINGULARITY)
}

pub fn shape_potential_v_with_threshold(theta: f64, params: &MassParams, threshold: f64) -> Result<(f64, f64)> {
    let (st, ct) = theta.sin_cos();
    if ct.abs() < threshold {
        return Err(Error::Singularity { theta, cos_theta: ct.abs() });
    }
    let r12 = std::f64::consts::SQRT_2 * ct.abs();
    let q = ct * ct / 2.0 + st * st / params.mu;
    let r13 = q.sqrt();
    let v = 1.0 / r12 + 2.0 * params.m3 / r13;
    let dr12 = -std::f64::consts::SQRT_2 * st * ct.signum();
    let dq = st * ct * (2.0 / params.mu - 1.0);
    let dv = -dr12 / (r12 * r12) - params.m3 * dq / (q * r13);
    Ok((v, dv))
}

/// Regularized potential W(u) = cos²u·V(θ(u)) and W_u. Smooth through binary collision.
pub fn regularized_potential_w(u: f64, params: &MassParams) -> (f64, f64) {
    let (w, wu, _) = w_derivatives(u, params);
    (w, wu)
}

/// W, W_u and W_uu.
///
/// Written in q = cos²u: D(q) = 1/μ + k q² with k = 1/2 − 1/μ, W = 1/√2 + 2m₃ q D^{-1/2}.
pub fn w_derivatives(u: f64, params: &MassParams) -> (f64, f64, f64) {
    let (su, cu) = u.sin_cos();
    let q = cu * cu;
    let k = 0.5 - 1.0 / params.mu;
    let d = 1.0 / params.mu + k * q * q;
    let rd = d.sqrt();
    let w = FRAC_1_SQRT_2 + 2.0 * params.m3 * q / rd;
    let wq = 2.0 * params.m3 / (params.mu * d * rd);
    let wqq = -6.0 * params.m3 * k * q / (params.mu * d * d * rd);
    let qu = -2.0 * su * cu;
    let quu = -2.0 * (cu * cu - su * su);
    (w, wq * qu, wqq * qu * qu + wq * quu)
}

/// V(θ(u)) and d/du of it, for cos u away from zero.
pub fn shape_potential_of_u(u: f64, params: &MassParams) -> Result<(f64, f64)> {
    let (theta, dtheta) = theta_of_u(u);
    let (v, vt) = shape_potential_v(theta, params)?;
    Ok((v, vt * dtheta))
}

/// Representative of u modulo π in (-π/2, π/2].
pub fn reduce_mod_pi(u: f64) -> f64 {
    let r = u - std::f64::consts::PI * ((u + FRAC_PI_2) / std::f64::consts::PI).floor();
    if r <= -FRAC_PI_2 {
        r + std::f64::consts::PI
    } else {
        r
    }
}
