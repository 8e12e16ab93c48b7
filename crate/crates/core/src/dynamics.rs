//! Vector fields of the blown-up, regularized isosceles problem in the r- and s-charts.
//!
//! The collision manifold {s=0} and the infinity manifold {s=1} are invariant; their flows
//! are just this field evaluated there.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{regularized_potential_w, theta_of_u, EnergyLevel, MassParams};

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct CompactState {
    pub s: f64,
    pub v: f64,
    pub u: f64,
    pub w: f64,
}

impl CompactState {
    pub const fn new(s: f64, v: f64, u: f64, w: f64) -> Self {
        CompactState { s, v, u, w }
    }

    pub fn to_array(self) -> [f64; 4] {
        [self.s, self.v, self.u, self.w]
    }

    pub fn from_array(a: [f64; 4]) -> Self {
        CompactState { s: a[0], v: a[1], u: a[2], w: a[3] }
    }

    pub fn from_slice(a: &[f64]) -> Self {
        CompactState { s: a[0], v: a[1], u: a[2], w: a[3] }
    }

    pub fn theta(&self) -> f64 {
        theta_of_u(self.u).0
    }

    /// (s, v, u, w) -> (s, v, -u, -w)
    pub fn reflected(self) -> Self {
        CompactState { u: -self.u, w: -self.w, ..self }
    }

    /// (s, v, u, w) -> (s, -v, u, -w)
    pub fn time_reversed(self) -> Self {
        CompactState { v: -self.v, w: -self.w, ..self }
    }

    pub fn to_radial(self) -> Result<RadialState> {
        if !(self.s < 1.0) {
            return Err(Error::Domain("s = 1 has no radial representative".into()));
        }
        Ok(RadialState { r: self.s / (1.0 - self.s), v: self.v, u: self.u, w: self.w })
    }

    pub fn is_finite(&self) -> bool {
        self.s.is_finite() && self.v.is_finite() && self.u.is_finite() && self.w.is_finite()
    }

    pub fn dist(&self, other: &CompactState) -> f64 {
        let d = [self.s - other.s, self.v - other.v, self.u - other.u, self.w - other.w];
        d.iter().map(|x| x * x).sum::<f64>().sqrt()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct RadialState {
    pub r: f64,
    pub v: f64,
    pub u: f64,
    pub w: f64,
}

impl RadialState {
    pub fn to_compact(self) -> CompactState {
        CompactState { s: self.r / (1.0 + self.r), v: self.v, u: self.u, w: self.w }
    }
}

pub fn vector_field_compact(x: &CompactState, params: &MassParams, h: &EnergyLevel) -> CompactState {
    let CompactState { s, v, u, w } = *x;
    let (su, cu) = u.sin_cos();
    let c2 = cu * cu;
    let root = (1.0 + c2).sqrt();
    let (wp, wpu) = regularized_potential_w(u, params);
    let one_s = 1.0 - s;
    CompactState {
        s: v * s * one_s * c2,
        v: 0.5 * one_s * v * v * c2 + w * w - one_s * wp,
        u: 0.5 * root * w,
        w: -0.5 * (1.0 + s) * v * w * c2 + 0.5 * root * one_s * wpu + 0.5 * (v * v - 2.0 * h.h * s) * root * su * cu,
    }
}

pub fn vector_field_radial(x: &RadialState, params: &MassParams, h: &EnergyLevel) -> RadialState {
    let RadialState { r, v, u, w } = *x;
    let (su, cu) = u.sin_cos();
    let c2 = cu * cu;
    let root = (1.0 + c2).sqrt();
    let (wp, wpu) = regularized_potential_w(u, params);
    let k = 1.0 / (1.0 + r);
    RadialState {
        r: v * r * c2,
        v: 0.5 * k * v * v * c2 + w * w - k * wp,
        u: 0.5 * root * w,
        w: -0.5 * (1.0 + 2.0 * r) * k * v * w * c2
            + 0.5 * root * k * wpu
            + 0.5 * (v * v - 2.0 * h.h * r * k) * root * su * cu,
    }
}

/// ½(v²cos²u + w²) − (1−s)W(u) − h s cos²u
pub fn energy_residual(x: &CompactState, params: &MassParams, h: &EnergyLevel) -> f64 {
    let c2 = x.u.cos().powi(2);
    let (wp, _) = regularized_potential_w(x.u, params);
    0.5 * (x.v * x.v * c2 + x.w * x.w) - (1.0 - x.s) * wp - h.h * x.s * c2
}

pub fn energy_residual_radial(x: &RadialState, params: &MassParams, h: &EnergyLevel) -> f64 {
    let c2 = x.u.cos().powi(2);
    let (wp, _) = regularized_potential_w(x.u, params);
    let k = 1.0 / (1.0 + x.r);
    0.5 * (x.v * x.v * c2 + x.w * x.w) - k * wp - h.h * x.r * k * c2
}

/// Gradient of the energy function in (s, v, u, w).
pub fn energy_gradient(x: &CompactState, params: &MassParams, h: &EnergyLevel) -> [f64; 4] {
    let (su, cu) = x.u.sin_cos();
    let c2 = cu * cu;
    let (wp, wpu) = regularized_potential_w(x.u, params);
    let dc2 = -2.0 * su * cu;
    [wp - h.h * c2, x.v * c2, 0.5 * x.v * x.v * dc2 - (1.0 - x.s) * wpu - h.h * x.s * dc2, x.w]
}

/// φ = v/√(1−s) and √(1−s)·φ' = ½w² + h s cos²u.
pub fn lyapunov(x: &CompactState, h: &EnergyLevel) -> Result<(f64, f64)> {
    let rate = 0.5 * x.w * x.w + h.h * x.s * x.u.cos().powi(2);
    if !(x.s < 1.0) {
        return Err(Error::Domain("lyapunov function undefined at s = 1; use v".into()));
    }
    Ok((x.v / (1.0 - x.s).sqrt(), rate))
}

/// dt/dτ = s^{3/2}/(1−s)·cos²u.
pub fn classical_time_rate(x: &CompactState) -> Result<f64> {
    if !(x.s < 1.0) {
        return Err(Error::InfiniteRate);
    }
    Ok(classical_time_rate_unchecked(x))
}

pub(crate) fn classical_time_rate_unchecked(x: &CompactState) -> f64 {
    let s = x.s.max(0.0);
    s * s.sqrt() / (1.0 - s) * x.u.cos().powi(2)
}

/// Jacobi-coordinate view of a state with 0 < s < 1, used to read off the binary and the
/// escaping body. Derivatives are with respect to classical time.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct JacobiView {
    pub r: f64,
    /// Distance of m₃ from the binary's centre of mass (signed).
    pub x2: f64,
    pub x2_dot: f64,
    /// Binary separation |q1 - q2| = r12 (nonnegative).
    pub x1: f64,
    pub r13: f64,
    /// Kepler energy of the binary, ½·½ẋ₁² − 1/x₁.
    pub h12: f64,
}

pub fn jacobi_view(x: &CompactState, params: &MassParams, h: &EnergyLevel) -> Option<JacobiView> {
    if !(x.s > 0.0 && x.s < 1.0) {
        return None;
    }
    let r = x.s / (1.0 - x.s);
    let psi = x.s.sqrt();
    let (su, cu) = x.u.sin_cos();
    let c2 = cu * cu;
    let root = (1.0 + c2).sqrt();
    let rmu = params.mu.sqrt();
    let x2 = r * su * root / rmu;
    // d/dt of r·sin u·√(1+c²)/√μ, with dt/dτ = ψ r cos²u; the cos²u cancels.
    let x2_dot = (x.v * su * root + x.w * cu) / (psi * rmu);
    let x1 = std::f64::consts::SQRT_2 * r * c2;
    let r13 = r * (c2 * c2 / 2.0 + (1.0 - c2 * c2) / params.mu).sqrt();
    let h12 = h.h - 0.5 * params.mu * x2_dot * x2_dot + 2.0 * params.m3 / r13;
    Some(JacobiView { r, x2, x2_dot, x1, r13, h12 })
}
