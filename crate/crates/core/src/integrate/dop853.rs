//! Dormand–Prince 8(5,3) stepper with 7th order continuous extension.
//!
//! Follows Hairer's DOP853: the 5th and 3rd order error estimates are blended into one
//! norm, and three extra stages per accepted step give the dense output.

use super::tableau::{A, B, C, D, E3, E5, N_STAGES, N_STAGES_EXTENDED};

const SAFETY: f64 = 0.9;
const MIN_FACTOR: f64 = 0.2;
const MAX_FACTOR: f64 = 10.0;
const ERROR_EXPONENT: f64 = -1.0 / 8.0;

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum StepFailure {
    /// Step size fell below the floor while trying to satisfy the tolerance.
    Underflow { t: f64, h: f64 },
    /// The right-hand side returned a non-finite value that step rejection cannot cure.
    NonFinite { t: f64 },
}

/// One accepted step with its interpolant.
#[derive(Debug, Clone, PartialEq)]
pub struct DenseStep<const N: usize> {
    pub t0: f64,
    pub h: f64,
    pub y0: [f64; N],
    pub coeffs: [[f64; N]; 7],
}

impl<const N: usize> DenseStep<N> {
    pub fn t1(&self) -> f64 {
        self.t0 + self.h
    }

    pub fn eval(&self, t: f64) -> [f64; N] {
        let x = (t - self.t0) / self.h;
        let mut y = [0.0; N];
        for (i, f) in self.coeffs.iter().rev().enumerate() {
            let m = if i % 2 == 0 { x } else { 1.0 - x };
            for k in 0..N {
                y[k] = (y[k] + f[k]) * m;
            }
        }
        for k in 0..N {
            y[k] += self.y0[k];
        }
        y
    }
}

impl<const N: usize> DenseStep<N> {
    /// The same step traversed backwards in time, with `map` applied to the states.
    /// The degree-7 interpolant is refitted exactly on seven nodes.
    pub fn reversed_with<M: Fn([f64; N]) -> [f64; N]>(&self, map: M) -> Self {
        let y0 = map(self.eval(self.t1()));
        let basis = |x: f64| {
            let m = 1.0 - x;
            [x, x * m, x * x * m, x * x * m * m, x.powi(3) * m * m, x.powi(3) * m.powi(3), x.powi(4) * m.powi(3)]
        };
        let a = nalgebra::SMatrix::<f64, 7, 7>::from_fn(|j, k| basis((j + 1) as f64 / 7.0)[k]);
        let lu = a.lu();
        let mut coeffs = [[0.0; N]; 7];
        let samples: Vec<[f64; N]> = (1..=7).map(|j| map(self.eval(self.t1() - self.h * j as f64 / 7.0))).collect();
        for c in 0..N {
            let rhs = nalgebra::SVector::<f64, 7>::from_fn(|j, _| samples[j][c] - y0[c]);
            let sol = lu.solve(&rhs).expect("interpolation basis is nonsingular");
            for k in 0..7 {
                coeffs[k][c] = sol[k];
            }
        }
        DenseStep { t0: -self.t1(), h: self.h, y0, coeffs }
    }
}

pub struct Dop853<F, const N: usize>
where
    F: Fn(f64, &[f64; N]) -> [f64; N],
{
    f: F,
    pub atol: f64,
    pub rtol: f64,
    /// Components that take part in error control.
    pub mask: [bool; N],
    pub h_max: f64,
    pub t: f64,
    pub y: [f64; N],
    fy: [f64; N],
    h_abs: f64,
    pub n_eval: usize,
}

fn rms<const N: usize>(v: &[f64; N], mask: &[bool; N]) -> f64 {
    let mut acc = 0.0;
    let mut n = 0usize;
    for k in 0..N {
        if mask[k] {
            acc += v[k] * v[k];
            n += 1;
        }
    }
    (acc / n.max(1) as f64).sqrt()
}

impl<F, const N: usize> Dop853<F, N>
where
    F: Fn(f64, &[f64; N]) -> [f64; N],
{
    pub fn new(f: F, t0: f64, y0: [f64; N], atol: f64, rtol: f64, mask: [bool; N]) -> Self {
        let fy = f(t0, &y0);
        let mut s = Dop853 { f, atol, rtol, mask, h_max: f64::INFINITY, t: t0, y: y0, fy, h_abs: 0.0, n_eval: 1 };
        s.h_abs = s.initial_step();
        s
    }

    fn scale(&self, a: &[f64; N], b: &[f64; N]) -> [f64; N] {
        let mut sc = [0.0; N];
        for k in 0..N {
            sc[k] = self.atol + self.rtol * a[k].abs().max(b[k].abs());
        }
        sc
    }

    fn initial_step(&mut self) -> f64 {
        let sc = self.scale(&self.y, &self.y);
        let mut a = [0.0; N];
        let mut b = [0.0; N];
        for k in 0..N {
            a[k] = self.y[k] / sc[k];
            b[k] = self.fy[k] / sc[k];
        }
        let d0 = rms(&a, &self.mask);
        let d1 = rms(&b, &self.mask);
        let h0 = if d0 < 1e-5 || d1 < 1e-5 { 1e-6 } else { 0.01 * d0 / d1 };
        let mut y1 = [0.0; N];
        for k in 0..N {
            y1[k] = self.y[k] + h0 * self.fy[k];
        }
        let f1 = (self.f)(self.t + h0, &y1);
        self.n_eval += 1;
        let mut c = [0.0; N];
        for k in 0..N {
            c[k] = (f1[k] - self.fy[k]) / sc[k];
        }
        let d2 = rms(&c, &self.mask) / h0;
        let h1 = if d1.max(d2) <= 1e-15 { (h0 * 1e-3).max(1e-6) } else { (0.01 / d1.max(d2)).powf(1.0 / 8.0) };
        (100.0 * h0).min(h1).min(self.h_max)
    }

    pub fn set_state(&mut self, y: [f64; N]) {
        self.y = y;
        self.fy = (self.f)(self.t, &y);
        self.n_eval += 1;
    }

    /// Advance by one accepted step, not past `t_bound`.
    pub fn step(&mut self, t_bound: f64) -> Result<DenseStep<N>, StepFailure> {
        let floor = 1e-14_f64.max(10.0 * f64::EPSILON * self.t.abs());
        let mut h_abs = self.h_abs.min(self.h_max);
        let mut rejected = false;
        let mut nonfinite = 0;
        loop {
            if h_abs < floor {
                return Err(StepFailure::Underflow { t: self.t, h: h_abs });
            }
            let mut h = h_abs;
            let mut t_new = self.t + h;
            if t_new >= t_bound {
                t_new = t_bound;
                h = t_new - self.t;
                h_abs = h;
            }
            let (y_new, k) = self.rk_stages(h);
            let err = self.error_norm(&k, &y_new, h);
            if !err.is_finite() {
                nonfinite += 1;
                if nonfinite > 60 {
                    return Err(StepFailure::NonFinite { t: self.t });
                }
                h_abs *= MIN_FACTOR;
                rejected = true;
                continue;
            }
            if err < 1.0 {
                let mut factor =
                    if err == 0.0 { MAX_FACTOR } else { MAX_FACTOR.min(SAFETY * err.powf(ERROR_EXPONENT)) };
                if rejected {
                    factor = factor.min(1.0);
                }
                let dense = self.dense(h, &y_new, k);
                self.t = t_new;
                self.y = y_new;
                self.fy = dense.1;
                self.h_abs = (h_abs * factor).min(self.h_max);
                return Ok(dense.0);
            }
            h_abs *= MIN_FACTOR.max(SAFETY * err.powf(ERROR_EXPONENT));
            rejected = true;
        }
    }

    fn rk_stages(&mut self, h: f64) -> ([f64; N], Box<[[f64; N]; N_STAGES_EXTENDED]>) {
        let mut k = Box::new([[0.0; N]; N_STAGES_EXTENDED]);
        k[0] = self.fy;
        for s in 1..N_STAGES {
            let mut y = self.y;
            for j in 0..s {
                let a = A[s][j];
                if a != 0.0 {
                    for c in 0..N {
                        y[c] += h * a * k[j][c];
                    }
                }
            }
            k[s] = (self.f)(self.t + C[s] * h, &y);
        }
        let mut y_new = self.y;
        for j in 0..N_STAGES {
            let b = B[j];
            if b != 0.0 {
                for c in 0..N {
                    y_new[c] += h * b * k[j][c];
                }
            }
        }
        k[N_STAGES] = (self.f)(self.t + h, &y_new);
        self.n_eval += N_STAGES;
        (y_new, k)
    }

    fn error_norm(&self, k: &[[f64; N]; N_STAGES_EXTENDED], y_new: &[f64; N], h: f64) -> f64 {
        let sc = self.scale(&self.y, y_new);
        let mut e5 = [0.0; N];
        let mut e3 = [0.0; N];
        for j in 0..=N_STAGES {
            for c in 0..N {
                e5[c] += k[j][c] * E5[j];
                e3[c] += k[j][c] * E3[j];
            }
        }
        let mut n5 = 0.0;
        let mut n3 = 0.0;
        let mut n = 0usize;
        for c in 0..N {
            if self.mask[c] {
                n5 += (e5[c] / sc[c]).powi(2);
                n3 += (e3[c] / sc[c]).powi(2);
                n += 1;
            }
        }
        if n5 == 0.0 && n3 == 0.0 {
            return 0.0;
        }
        let denom = n5 + 0.01 * n3;
        h.abs() * n5 / (denom * n as f64).sqrt()
    }

    fn dense(
        &mut self,
        h: f64,
        y_new: &[f64; N],
        mut k: Box<[[f64; N]; N_STAGES_EXTENDED]>,
    ) -> (DenseStep<N>, [f64; N]) {
        let f_new = k[N_STAGES];
        for s in N_STAGES + 1..N_STAGES_EXTENDED {
            let mut y = self.y;
            for j in 0..s {
                let a = A[s][j];
                if a != 0.0 {
                    for c in 0..N {
                        y[c] += h * a * k[j][c];
                    }
                }
            }
            k[s] = (self.f)(self.t + C[s] * h, &y);
        }
        self.n_eval += N_STAGES_EXTENDED - N_STAGES - 1;
        let mut coeffs = [[0.0; N]; 7];
        for c in 0..N {
            let dy = y_new[c] - self.y[c];
            coeffs[0][c] = dy;
            coeffs[1][c] = h * self.fy[c] - dy;
            coeffs[2][c] = 2.0 * dy - h * (f_new[c] + self.fy[c]);
        }
        for (i, drow) in D.iter().enumerate() {
            for c in 0..N {
                let mut acc = 0.0;
                for j in 0..N_STAGES_EXTENDED {
                    acc += drow[j] * k[j][c];
                }
                coeffs[3 + i][c] = h * acc;
            }
        }
        (DenseStep { t0: self.t, h, y0: self.y, coeffs }, f_new)
    }
}
