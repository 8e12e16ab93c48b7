//! Restpoints on the collision manifold (s=0) and the infinity manifold (s=1), with their
//! linearizations restricted to the energy manifold.

use nalgebra::{Complex, DMatrix, Matrix4};
use serde::{Deserialize, Serialize};

use crate::dynamics::{energy_gradient, vector_field_compact, CompactState};
use crate::error::{Error, Result};
use crate::model::{shape_potential_v, theta_of_u, w_derivatives, EnergyLevel, MassParams};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CentralShape {
    LagrangePlus,
    LagrangeMinus,
    Euler,
}

impl CentralShape {
    pub fn u(&self, params: &MassParams) -> f64 {
        match self {
            CentralShape::LagrangePlus => params.l_plus,
            CentralShape::LagrangeMinus => -params.l_plus,
            CentralShape::Euler => 0.0,
        }
    }

    fn label(&self) -> &'static str {
        match self {
            CentralShape::LagrangePlus => "L+",
            CentralShape::LagrangeMinus => "L-",
            CentralShape::Euler => "E",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Family {
    /// Starred restpoints have v < 0.
    Collision {
        shape: CentralShape,
        starred: bool,
    },
    /// Member of ℰ₊ (sign = +1) or ℰ₋ (sign = -1).
    HyperbolicInfinity {
        sign: i8,
        u0: f64,
    },
    BinaryInfinity {
        v0: f64,
    },
}

impl Family {
    pub fn label(&self) -> String {
        match self {
            Family::Collision { shape, starred } => {
                let l = shape.label();
                if *starred {
                    format!("{}*{}", &l[..1], &l[1..])
                } else {
                    l.to_string()
                }
            }
            Family::HyperbolicInfinity { sign, .. } => {
                if *sign > 0 {
                    "infinity+".into()
                } else {
                    "infinity-".into()
                }
            }
            Family::BinaryInfinity { .. } => "binary-infinity".into(),
        }
    }
}

/// Counts of (stable, unstable) directions.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Dims {
    pub stable: usize,
    pub unstable: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Restpoint {
    pub family: Family,
    pub location: CompactState,
    /// (re, im) pairs, sorted by real part.
    pub eigenvalues: Vec<(f64, f64)>,
    /// Real tangent vectors. For the hyperbolic infinity points this is (e₁, e₂, e₃) where e₃
    /// may be a generalized eigenvector; for complex pairs the real and imaginary parts.
    pub eigenbasis: Vec<[f64; 4]>,
    /// A e₃ = λ e₃ + coupling·e₂ at the hyperbolic infinity restpoints; 0 elsewhere.
    pub jordan_coupling: f64,
    pub dims_energy: Dims,
    pub dims_boundary: Dims,
    /// Eigenvalues of the boundary-manifold linearization.
    pub boundary_eigenvalues: Vec<(f64, f64)>,
}

/// Exact Jacobian of the compact-chart field.
pub fn jacobian(x: &CompactState, params: &MassParams, h: &EnergyLevel) -> Matrix4<f64> {
    let CompactState { s, v, u, w } = *x;
    let (su, cu) = u.sin_cos();
    let c2 = cu * cu;
    let s2u = 2.0 * su * cu;
    let c2u = cu * cu - su * su;
    let r = (1.0 + c2).sqrt();
    let ru = -s2u / (2.0 * r);
    let (wp, wu, wuu) = w_derivatives(u, params);
    let hh = h.h;
    let one_s = 1.0 - s;
    Matrix4::new(
        v * (1.0 - 2.0 * s) * c2,
        s * one_s * c2,
        -v * s * one_s * s2u,
        0.0,
        //
        -0.5 * v * v * c2 + wp,
        one_s * v * c2,
        -0.5 * one_s * v * v * s2u - one_s * wu,
        2.0 * w,
        //
        0.0,
        0.0,
        0.5 * ru * w,
        0.5 * r,
        //
        -0.5 * v * w * c2 - 0.5 * r * wu - hh * r * su * cu,
        -0.5 * (1.0 + s) * w * c2 + v * r * su * cu,
        0.5 * (1.0 + s) * v * w * s2u
            + 0.5 * one_s * (ru * wu + r * wuu)
            + 0.5 * (v * v - 2.0 * hh * s) * (ru * su * cu + r * c2u),
        -0.5 * (1.0 + s) * v * c2,
    )
}

/// Central differences with steps δ and δ/2 combined by Richardson extrapolation.
pub fn numerical_jacobian(x: &CompactState, params: &MassParams, h: &EnergyLevel, delta: f64) -> Matrix4<f64> {
    let central = |d: f64| {
        let mut m = Matrix4::zeros();
        for j in 0..4 {
            let mut xp = x.to_array();
            let mut xm = x.to_array();
            xp[j] += d;
            xm[j] -= d;
            let fp = vector_field_compact(&CompactState::from_array(xp), params, h).to_array();
            let fm = vector_field_compact(&CompactState::from_array(xm), params, h).to_array();
            for i in 0..4 {
                m[(i, j)] = (fp[i] - fm[i]) / (2.0 * d);
            }
        }
        m
    };
    (central(0.5 * delta) * 4.0 - central(delta)) / 3.0
}

/// Orthonormal basis (as columns) of the orthogonal complement of the given constraint rows.
///
/// Gram–Schmidt over the constraints, then greedily over the coordinate axes, always taking
/// the axis with the largest remaining component.
pub fn kernel_basis(constraints: &[[f64; 4]]) -> DMatrix<f64> {
    fn residual(v: [f64; 4], basis: &[[f64; 4]]) -> [f64; 4] {
        let mut v = v;
        for _ in 0..2 {
            for b in basis {
                let d: f64 = (0..4).map(|k| v[k] * b[k]).sum();
                for k in 0..4 {
                    v[k] -= d * b[k];
                }
            }
        }
        v
    }
    let norm = |v: &[f64; 4]| v.iter().map(|x| x * x).sum::<f64>().sqrt();
    let mut span: Vec<[f64; 4]> = Vec::new();
    for c in constraints {
        let r = residual(*c, &span);
        let n = norm(&r);
        if n > 1e-12 * norm(c).max(1e-300) {
            span.push(r.map(|x| x / n));
        }
    }
    let mut free = Vec::new();
    while span.len() < 4 {
        let best = (0..4)
            .map(|i| {
                let mut e = [0.0; 4];
                e[i] = 1.0;
                residual(e, &span)
            })
            .max_by(|a, b| norm(a).total_cmp(&norm(b)))
            .expect("four axes");
        let n = norm(&best);
        let v = best.map(|x| x / n);
        span.push(v);
        free.push(v);
    }
    DMatrix::from_fn(4, free.len(), |i, j| free[j][i])
}

fn restrict(j: &Matrix4<f64>, p: &DMatrix<f64>) -> DMatrix<f64> {
    let jd = DMatrix::from_fn(4, 4, |r, c| j[(r, c)]);
    p.transpose() * jd * p
}

fn sorted_eigenvalues(b: &DMatrix<f64>) -> Vec<(f64, f64)> {
    let mut ev: Vec<(f64, f64)> = b.complex_eigenvalues().iter().map(|c| (c.re, c.im)).collect();
    // symmetric treatment of the conjugate pair
    for e in ev.iter_mut() {
        if e.1.abs() < 1e-12 * (1.0 + e.0.abs()) {
            e.1 = 0.0;
        }
    }
    ev.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.total_cmp(&b.1)));
    ev
}

/// Null vector of (B − λI) via the smallest singular value.
fn null_vector(b: &DMatrix<f64>, lambda: Complex<f64>) -> nalgebra::DVector<Complex<f64>> {
    let n = b.nrows();
    let m = DMatrix::from_fn(n, n, |r, c| {
        Complex::new(b[(r, c)], 0.0) - if r == c { lambda } else { Complex::new(0.0, 0.0) }
    });
    let svd = m.svd(false, true);
    let vt = svd.v_t.expect("requested v_t");
    let (imin, _) =
        svd.singular_values
            .iter()
            .enumerate()
            .fold((0, f64::INFINITY), |acc, (i, &s)| if s < acc.1 { (i, s) } else { acc });
    vt.row(imin).transpose().map(|c| c.conj())
}

fn count_dims(ev: &[(f64, f64)], zero_tol: f64) -> Dims {
    Dims {
        stable: ev.iter().filter(|e| e.0 < -zero_tol).count(),
        unstable: ev.iter().filter(|e| e.0 > zero_tol).count(),
    }
}

/// Eigen-decomposition of the linearization restricted to the energy tangent space.
pub struct Linearization {
    pub basis: DMatrix<f64>,
    pub matrix: DMatrix<f64>,
    pub eigenvalues: Vec<(f64, f64)>,
}

impl Linearization {
    pub fn new(j: &Matrix4<f64>, constraints: &[[f64; 4]]) -> Self {
        let basis = kernel_basis(constraints);
        let matrix = restrict(j, &basis);
        let eigenvalues = sorted_eigenvalues(&matrix);
        Linearization { basis, matrix, eigenvalues }
    }

    /// Real (or real and imaginary part) eigenvector in the ambient coordinates, unit length.
    pub fn eigenvector(&self, lambda: (f64, f64)) -> ([f64; 4], [f64; 4]) {
        let x = null_vector(&self.matrix, Complex::new(lambda.0, lambda.1));
        // rotate the complex phase so the largest component is real
        let (imax, _) =
            x.iter().enumerate().fold((0, 0.0), |acc, (i, c)| if c.norm() > acc.1 { (i, c.norm()) } else { acc });
        let phase = x[imax] / x[imax].norm();
        let x = x.map(|c| c / phase);
        let mut re = [0.0; 4];
        let mut im = [0.0; 4];
        for i in 0..4 {
            for k in 0..x.len() {
                re[i] += self.basis[(i, k)] * x[k].re;
                im[i] += self.basis[(i, k)] * x[k].im;
            }
        }
        let n = (re.iter().chain(im.iter()).map(|a| a * a).sum::<f64>()).sqrt();
        (re.map(|a| a / n), im.map(|a| a / n))
    }
}

fn collision_restpoint(shape: CentralShape, starred: bool, params: &MassParams, h: &EnergyLevel) -> Restpoint {
    let u = shape.u(params);
    let c2 = u.cos().powi(2);
    let (w, _, _) = w_derivatives(u, params);
    let speed = (2.0 * w / c2).sqrt();
    let location = CompactState::new(0.0, if starred { -speed } else { speed }, u, 0.0);
    let j = jacobian(&location, params, h);
    let grad = energy_gradient(&location, params, h);
    let lin = Linearization::new(&j, &[grad]);
    let bnd = Linearization::new(&j, &[grad, [1.0, 0.0, 0.0, 0.0]]);
    let mut eigenbasis = Vec::new();
    let mut k = 0;
    while k < lin.eigenvalues.len() {
        let l = lin.eigenvalues[k];
        let (re, im) = lin.eigenvector(l);
        eigenbasis.push(re);
        if l.1 != 0.0 {
            eigenbasis.push(im);
            k += 2;
        } else {
            k += 1;
        }
    }
    let tol = 1e-9;
    Restpoint {
        family: Family::Collision { shape, starred },
        location,
        dims_energy: count_dims(&lin.eigenvalues, tol),
        dims_boundary: count_dims(&bnd.eigenvalues, tol),
        boundary_eigenvalues: bnd.eigenvalues,
        eigenvalues: lin.eigenvalues,
        eigenbasis,
        jordan_coupling: 0.0,
    }
}

/// The six restpoints on the collision manifold, unstarred (v>0) first, ordered -l₊, 0, l₊.
pub fn collision_restpoints(params: &MassParams, h: &EnergyLevel) -> Vec<Restpoint> {
    let shapes = [CentralShape::LagrangeMinus, CentralShape::Euler, CentralShape::LagrangePlus];
    let mut out = Vec::with_capacity(6);
    for starred in [false, true] {
        for shape in shapes {
            out.push(collision_restpoint(shape, starred, params, h));
        }
    }
    out
}

pub fn collision_restpoint_for(shape: CentralShape, starred: bool, params: &MassParams, h: &EnergyLevel) -> Restpoint {
    collision_restpoint(shape, starred, params, h)
}

/// Restpoint (1, ±√(2h), u0, 0) with the eigenstructure of the infinity linearization.
///
/// For sign = +: eigenvalues 0, α, α with α = −√(2h)·cos θ(u0),
/// e₁ = (0,0,1,0), e₂ = (0,0,½√(1+cos²u0), α), e₃ = (α, (V−h)cos²u0, 0, a₄₁),
/// a₄₁ = −cos³u0·V_θ(θ0), and A e₃ = α e₃ + a₄₁ e₂. Sign = − is the time reversal.
pub fn infinity_restpoint_hyperbolic(u0: f64, params: &MassParams, h: &EnergyLevel, sign: i8) -> Result<Restpoint> {
    let cu = u0.cos();
    if cu.abs() < 1e-8 {
        return Err(Error::Domain("cos u0 = 0: use the binary infinity restpoint instead".into()));
    }
    let sgn = if sign >= 0 { 1.0 } else { -1.0 };
    let c2 = cu * cu;
    let (theta0, _) = theta_of_u(u0);
    let (v, vt) = shape_potential_v(theta0, params)?;
    let speed = h.speed();
    let alpha = -speed * theta0.cos();
    let lam = sgn * alpha;
    let r = (1.0 + c2).sqrt();
    let a41 = -cu * c2 * vt;
    let e1 = [0.0, 0.0, 1.0, 0.0];
    let e2 = [0.0, 0.0, 0.5 * r, lam];
    let e3 = [lam, (v - h.h) * c2, 0.0, a41];
    let location = CompactState::new(1.0, sgn * speed, u0, 0.0);
    let (stable, unstable) = if lam < 0.0 { (2, 0) } else { (0, 2) };
    Ok(Restpoint {
        family: Family::HyperbolicInfinity { sign: sgn as i8, u0 },
        location,
        eigenvalues: vec![(0.0, 0.0), (lam, 0.0), (lam, 0.0)],
        eigenbasis: vec![e1, e2, e3],
        jordan_coupling: a41,
        dims_energy: Dims { stable, unstable },
        dims_boundary: Dims { stable: stable / 2, unstable: unstable / 2 },
        boundary_eigenvalues: vec![(0.0, 0.0), (lam, 0.0)],
    })
}

/// Restpoint (1, v0, π/2, 0) on the binary-collision segment at infinity.
///
/// Eigenvalues 0, −β/2, β/2 with β = −√(2h − v0²); e₁ = (0,1,0,0),
/// e₂ = (0,0,1,−β) for −β/2 and e₃ = (0,0,1,β) for β/2.
pub fn infinity_restpoint_binary(v0: f64, h: &EnergyLevel) -> Result<Restpoint> {
    let speed = h.speed();
    if !(v0.abs() < speed) {
        return Err(Error::Domain(format!("|v0| must be below √(2h) = {speed}, got {v0}")));
    }
    let beta = -(2.0 * h.h - v0 * v0).sqrt();
    Ok(Restpoint {
        family: Family::BinaryInfinity { v0 },
        location: CompactState::new(1.0, v0, std::f64::consts::FRAC_PI_2, 0.0),
        eigenvalues: vec![(beta / 2.0, 0.0), (0.0, 0.0), (-beta / 2.0, 0.0)],
        eigenbasis: vec![[0.0, 1.0, 0.0, 0.0], [0.0, 0.0, 1.0, -beta], [0.0, 0.0, 1.0, beta]],
        jordan_coupling: 0.0,
        dims_energy: Dims { stable: 1, unstable: 1 },
        dims_boundary: Dims { stable: 1, unstable: 1 },
        boundary_eigenvalues: vec![(beta / 2.0, 0.0), (-beta / 2.0, 0.0)],
    })
}

/// Eigenvalues of the Richardson finite-difference Jacobian restricted to ker ∇E.
pub fn numerical_eigenvalues(x: &CompactState, params: &MassParams, h: &EnergyLevel) -> Vec<(f64, f64)> {
    let j = numerical_jacobian(x, params, h, 1e-6);
    let grad = energy_gradient(x, params, h);
    Linearization::new(&j, &[grad]).eigenvalues
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CatalogEntry {
    pub family: String,
    pub parameters: Family,
    pub location: CompactState,
    pub eigenvalues: Vec<(f64, f64)>,
    pub dims_energy: Dims,
    pub dims_boundary: Dims,
}

impl From<&Restpoint> for CatalogEntry {
    fn from(r: &Restpoint) -> Self {
        CatalogEntry {
            family: r.family.label(),
            parameters: r.family,
            location: r.location,
            eigenvalues: r.eigenvalues.clone(),
            dims_energy: r.dims_energy,
            dims_boundary: r.dims_boundary,
        }
    }
}
