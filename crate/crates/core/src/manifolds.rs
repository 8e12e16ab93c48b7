//! Unstable branches on the collision manifold, the Simo bifurcation masses, restpoint chains
//! at infinity and homothetic orbits.

use std::f64::consts::{FRAC_PI_2, PI};

use serde::{Deserialize, Serialize};

use crate::dynamics::{energy_gradient, CompactState};
use crate::equilibria::{collision_restpoint_for, jacobian, CentralShape, Linearization};
use crate::error::{Error, Result};
use crate::integrate::{
    energy_project, energy_project_v, integrate, integrate_observed, Control, Direction, EventSpec, Functional,
    IntegrateOptions, Trajectory,
};
use crate::model::{reduce_mod_pi, theta_of_u, u_of_theta, w_derivatives, EnergyLevel, MassParams};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum FateKind {
    SpiralArmNegative,
    SpiralArmPositive,
    ConvergesToEuler,
    Undetermined,
}

impl FateKind {
    /// Image under (u, w) -> (-u, -w).
    pub fn reflected(self) -> Self {
        match self {
            FateKind::SpiralArmNegative => FateKind::SpiralArmPositive,
            FateKind::SpiralArmPositive => FateKind::SpiralArmNegative,
            k => k,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BranchFate {
    pub kind: FateKind,
    pub terminal: CompactState,
    pub tau_end: f64,
    /// Distance to the unstarred Euler restpoint at the end of the trace.
    pub euler_distance: f64,
    pub max_v: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum StarredLagrange {
    LStarPlus,
    LStarMinus,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FateCriteria {
    /// Multiple of max(v_euler, v_lagrange) above which the spiral test starts.
    pub spiral_factor: f64,
    pub spiral_cos2: f64,
    pub spiral_theta: f64,
    pub spiral_dv: f64,
    pub euler_radius: f64,
}

impl Default for FateCriteria {
    fn default() -> Self {
        FateCriteria { spiral_factor: 3.0, spiral_cos2: 0.05, spiral_theta: 0.1, spiral_dv: 1.0, euler_radius: 1e-4 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TraceOptions {
    pub tau_max: f64,
    pub integrate: IntegrateOptions,
    pub criteria: FateCriteria,
}

impl Default for TraceOptions {
    fn default() -> Self {
        TraceOptions {
            tau_max: 2000.0,
            // the Euler sink in M0 is a saddle transverse to the energy shell
            integrate: IntegrateOptions { projection: true, classical_time: false, ..IntegrateOptions::default() },
            criteria: FateCriteria::default(),
        }
    }
}

fn euler_distance(x: &CompactState, params: &MassParams) -> f64 {
    let du = reduce_mod_pi(x.u);
    ((x.v - params.v_euler).powi(2) + du * du + x.w * x.w).sqrt()
}

/// Incremental fate classifier fed with successive states along a trace.
struct FateTracker {
    v_spiral: f64,
    crit: FateCriteria,
    arm: Option<(f64, f64)>,
    kind: FateKind,
    max_v: f64,
}

impl FateTracker {
    fn new(params: &MassParams, crit: FateCriteria) -> Self {
        FateTracker {
            v_spiral: crit.spiral_factor * params.v_euler.max(params.v_lagrange),
            crit,
            arm: None,
            kind: FateKind::Undetermined,
            max_v: f64::NEG_INFINITY,
        }
    }

    fn feed(&mut self, x: &CompactState, params: &MassParams) -> FateKind {
        self.max_v = self.max_v.max(x.v);
        if self.kind != FateKind::Undetermined {
            return self.kind;
        }
        if euler_distance(x, params) < self.crit.euler_radius {
            self.kind = FateKind::ConvergesToEuler;
            return self.kind;
        }
        let theta = x.theta();
        let side = if (theta - FRAC_PI_2).abs() < self.crit.spiral_theta {
            1.0
        } else if (theta + FRAC_PI_2).abs() < self.crit.spiral_theta {
            -1.0
        } else {
            0.0
        };
        let on_arm = x.v > self.v_spiral && x.u.cos().powi(2) < self.crit.spiral_cos2 && side != 0.0;
        match (self.arm, on_arm) {
            (Some((v0, sd)), true) if sd == side => {
                if x.v >= v0 + self.crit.spiral_dv {
                    self.kind = if side > 0.0 { FateKind::SpiralArmPositive } else { FateKind::SpiralArmNegative };
                }
            }
            (_, true) => self.arm = Some((x.v, side)),
            (_, false) => self.arm = None,
        }
        self.kind
    }
}

pub fn classify_branch_fate(traj: &Trajectory, params: &MassParams) -> BranchFate {
    classify_with(traj, params, FateCriteria::default())
}

pub fn classify_with(traj: &Trajectory, params: &MassParams, crit: FateCriteria) -> BranchFate {
    let mut tr = FateTracker::new(params, crit);
    let mut end = traj.first();
    for n in &traj.nodes {
        end = n;
        if tr.feed(&n.state, params) != FateKind::Undetermined {
            break;
        }
    }
    BranchFate {
        kind: tr.kind,
        terminal: end.state,
        tau_end: end.tau,
        euler_distance: euler_distance(&end.state, params),
        max_v: tr.max_v,
    }
}

/// Unit unstable eigenvector of L*± inside the collision manifold, with w-component of the given sign.
pub fn collision_unstable_direction(
    which: StarredLagrange,
    sign_w: f64,
    params: &MassParams,
    h: &EnergyLevel,
) -> Result<(CompactState, [f64; 4])> {
    let shape = match which {
        StarredLagrange::LStarPlus => CentralShape::LagrangePlus,
        StarredLagrange::LStarMinus => CentralShape::LagrangeMinus,
    };
    let rp = collision_restpoint_for(shape, true, params, h);
    let j = jacobian(&rp.location, params, h);
    let grad = energy_gradient(&rp.location, params, h);
    let lin = Linearization::new(&j, &[grad, [1.0, 0.0, 0.0, 0.0]]);
    let lam = lin
        .eigenvalues
        .iter()
        .copied()
        .find(|l| l.0 > 1e-9 && l.1 == 0.0)
        .ok_or_else(|| Error::Domain("no real unstable direction in the collision manifold".into()))?;
    let (mut e, _) = lin.eigenvector(lam);
    if e[3].abs() < 1e-12 {
        return Err(Error::Domain("unstable eigenvector has no w component".into()));
    }
    if e[3].signum() != sign_w.signum() {
        e = e.map(|x| -x);
    }
    Ok((rp.location, e))
}

pub fn trace_unstable_branch_m0(
    which: StarredLagrange,
    sign_w: f64,
    params: &MassParams,
    h: &EnergyLevel,
    rho: f64,
    opts: &TraceOptions,
) -> Result<(Trajectory, BranchFate)> {
    if !(1e-8..=1e-4).contains(&rho) {
        return Err(Error::Domain(format!("rho must lie in [1e-8, 1e-4], got {rho}")));
    }
    let (loc, e) = collision_unstable_direction(which, sign_w, params, h)?;
    let x0 = CompactState::new(0.0, loc.v + rho * e[1], loc.u + rho * e[2], loc.w + rho * e[3]);
    let x0 = energy_project(x0, params, h)?;
    let mut tracker = FateTracker::new(params, opts.criteria);
    let traj = integrate_observed(x0, params, h, (0.0, opts.tau_max), &[], &opts.integrate, |view| {
        if tracker.feed(&view.end.state, params) != FateKind::Undetermined {
            Control::Stop
        } else {
            Control::Continue
        }
    })?;
    let fate = classify_with(&traj, params, opts.criteria);
    Ok((traj, fate))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Epsilon {
    Eps1,
    Eps2,
}

impl Epsilon {
    /// The branch of Wᵘ₀(L*₊) whose fate changes at this mass.
    pub fn branch_sign(&self) -> f64 {
        match self {
            Epsilon::Eps1 => -1.0,
            Epsilon::Eps2 => 1.0,
        }
    }
}

pub fn branch_fate_at(m3: f64, sign_w: f64, rho: f64, opts: &TraceOptions) -> Result<FateKind> {
    let params = MassParams::new(m3)?;
    let h = EnergyLevel::new(0.5)?;
    let (_, fate) = trace_unstable_branch_m0(StarredLagrange::LStarPlus, sign_w, &params, &h, rho, opts)?;
    Ok(fate.kind)
}

/// Bisection on m₃ for the mass where the bifurcating branch of Wᵘ₀(L*₊) changes fate.
pub fn find_epsilon(which: Epsilon, bracket: (f64, f64), tol_m: f64, opts: &TraceOptions) -> Result<f64> {
    let rho = 1e-6;
    let sign = which.branch_sign();
    let (mut lo, mut hi) = bracket;
    if !(lo < hi && lo > 0.0) {
        return Err(Error::Domain(format!("bad bracket ({lo}, {hi})")));
    }
    let (f_lo, f_hi) = rayon::join(|| branch_fate_at(lo, sign, rho, opts), || branch_fate_at(hi, sign, rho, opts));
    let (f_lo, f_hi) = (f_lo?, f_hi?);
    if f_lo == f_hi || f_lo == FateKind::Undetermined || f_hi == FateKind::Undetermined {
        return Err(Error::Bracket(format!(
            "fates at m3={lo} ({f_lo:?}) and m3={hi} ({f_hi:?}) do not bracket a change"
        )));
    }
    while hi - lo >= tol_m {
        let mid = 0.5 * (lo + hi);
        let f = branch_fate_at(mid, sign, rho, opts)?;
        if f == f_lo {
            lo = mid;
        } else if f == f_hi {
            hi = mid;
        } else {
            return Err(Error::Bracket(format!("undetermined fate at m3={mid}")));
        }
    }
    Ok(0.5 * (lo + hi))
}

/// Closed-form restpoint chain inside the infinity manifold.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct InfinityChain {
    pub h: f64,
    pub sign_w: f64,
    pub u_start: f64,
    pub u_end: f64,
    pub theta_start: f64,
    pub theta_end: f64,
    /// v at the single binary collision and the u value there.
    pub v_collision: f64,
    pub u_collision: f64,
    pub n_binary_collisions: u32,
    pub total_variation_theta: f64,
    /// +1 when θ first increases towards π/2, -1 when it decreases towards -π/2.
    direction: f64,
    k_before: f64,
}

pub fn infinity_chain(u0: f64, h: &EnergyLevel, sign_w: f64) -> Result<InfinityChain> {
    let cu = u0.cos();
    if cu.abs() < 1e-8 {
        return Err(Error::Domain("cos u0 = 0 lies on the binary segment".into()));
    }
    let sgn = if sign_w >= 0.0 { 1.0 } else { -1.0 };
    let d = sgn * cu.signum();
    let (theta0, _) = theta_of_u(u0);
    let speed = h.speed();
    let v_col = -d * speed * theta0.sin();
    let theta_col = d * FRAC_PI_2;
    let k = (u0 / PI).round();
    let u_col = k * PI + sgn * FRAC_PI_2;
    let theta_end = -theta0;
    let tv = (theta_col - theta0).abs() + (theta_end - theta_col).abs();
    Ok(InfinityChain {
        h: h.h,
        sign_w: sgn,
        u_start: u0,
        u_end: u0 + sgn * PI,
        theta_start: theta0,
        theta_end,
        v_collision: v_col,
        u_collision: u_col,
        n_binary_collisions: 1,
        total_variation_theta: tv,
        direction: d,
        k_before: k,
    })
}

impl InfinityChain {
    pub fn speed(&self) -> f64 {
        (2.0 * self.h).sqrt()
    }

    fn asin_v(&self, v: f64) -> f64 {
        (v / self.speed()).clamp(-1.0, 1.0).asin()
    }

    pub fn theta_at(&self, v: f64) -> f64 {
        let d = self.direction;
        if v == self.v_collision {
            d * FRAC_PI_2
        } else if v < self.v_collision {
            self.theta_start + d * (self.asin_v(v) + FRAC_PI_2)
        } else {
            // asin(v_collision/√(2h)) = −d·θ₀; evaluating it loses √ε near θ₀ = ±π/2
            d * FRAC_PI_2 - d * self.asin_v(v) - self.theta_start
        }
    }

    /// Covering angle along the chain; the branch switches at the binary collision.
    pub fn u_at(&self, v: f64) -> f64 {
        let theta = self.theta_at(v);
        let k = if v <= self.v_collision { self.k_before } else { self.k_before + self.sign_w };
        let parity = if (k as i64).rem_euclid(2) == 0 { 1.0 } else { -1.0 };
        k * PI + u_of_theta(parity * theta)
    }

    /// State on the infinity manifold at parameter v, w from the energy relation.
    pub fn state_at(&self, v: f64) -> CompactState {
        let u = self.u_at(v);
        let c = u.cos();
        let w2 = (c * c * (2.0 * self.h - v * v)).max(0.0);
        CompactState::new(1.0, v, u, self.sign_w * w2.sqrt())
    }

    /// n+1 samples in v including both ends.
    pub fn samples(&self, n: usize) -> Vec<CompactState> {
        let sp = self.speed();
        (0..=n).map(|i| self.state_at(-sp + 2.0 * sp * i as f64 / n as f64)).collect()
    }

    /// Chain in the trajectory CSV layout, with the tau column carrying v.
    pub fn write_csv<W: std::io::Write>(&self, params: &MassParams, n: usize, out: W) -> Result<()> {
        let h = EnergyLevel { h: self.h };
        let mut wtr = csv::Writer::from_writer(out);
        wtr.write_record(["tau", "s", "v", "u", "w", "t_classical", "energy_residual"])?;
        for x in self.samples(n) {
            let r = crate::dynamics::energy_residual(&x, params, &h);
            wtr.write_record([x.v, x.s, x.v, x.u, x.w, f64::NAN, r].iter().map(|a| a.to_string()))?;
        }
        wtr.flush()?;
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ChainCheck {
    pub max_deviation: f64,
    pub compared: usize,
}

/// Largest |θ_numeric(v) − θ_chain(v)| over an integration of the infinity-manifold flow, on
/// nodes farther than `margin` (in θ) from the binary collision.
pub fn chain_cross_check(
    u0: f64,
    params: &MassParams,
    h: &EnergyLevel,
    sign_w: f64,
    margin: f64,
) -> Result<ChainCheck> {
    let chain = infinity_chain(u0, h, sign_w)?;
    let sp = h.speed();
    let opts = IntegrateOptions { classical_time: false, ..IntegrateOptions::default() };
    let mut worst: f64 = 0.0;
    let mut compared = 0;
    let mut check = |traj: &Trajectory| {
        for n in &traj.nodes {
            let th = n.state.theta();
            if (th.abs() - FRAC_PI_2).abs() > margin && n.state.v < sp - 1e-9 {
                worst = worst.max((th - chain.theta_at(n.state.v)).abs());
                compared += 1;
            }
        }
    };
    // approach to the binary collision restpoint
    let x1 = chain.state_at(-sp + 1e-6);
    let stop_u = chain.u_collision - chain.sign_w * 0.3 * margin;
    let ev = [EventSpec::terminate(Functional::UMinus(stop_u), Direction::Any)];
    let t1 = integrate(x1, params, h, (0.0, 500.0), &ev, &opts)?;
    check(&t1);
    // departure along the other sheet to ℰ₊
    let x2 = chain.state_at(chain.v_collision + 1e-6);
    let mut tr2 = integrate_observed(x2, params, h, (0.0, 500.0), &[], &opts, |view| {
        if view.end.state.v > sp - 1e-8 {
            Control::Stop
        } else {
            Control::Continue
        }
    })?;
    tr2.nodes.retain(|n| (n.state.u - chain.u_collision).abs() > 1e-9);
    check(&tr2);
    Ok(ChainCheck { max_deviation: worst, compared })
}

/// The homothetic orbit from the collision restpoint with shape u_c (v>0) up to infinity.
///
/// Integrated with the full four-dimensional field from a point just off the collision
/// manifold on s = (v_c² − v²)/(v_c² − 2h). The line u = u_c, w = 0 is invariant only on the
/// energy shell and is repelling near the collision end, so each step is projected back.
pub fn homothetic_orbit(params: &MassParams, h: &EnergyLevel, which: CentralShape) -> Result<Trajectory> {
    let u_c = which.u(params);
    let vc = homothetic_speed(u_c, params);
    let v0 = vc * (1.0 - 1e-7);
    let x0 = CompactState::new(homothetic_s(v0, vc, h), v0, u_c, 0.0);
    let x0 = energy_project_v(x0, params, h)?;
    let opts = IntegrateOptions { projection: true, ..IntegrateOptions::default() };
    let ev = [EventSpec::terminate(Functional::SMinus(1.0 - 1e-9), Direction::Rising)];
    integrate(x0, params, h, (0.0, 1e4), &ev, &opts)
}

/// v at the collision restpoint with shape u_c, √(2V(u_c)).
pub fn homothetic_speed(u_c: f64, params: &MassParams) -> f64 {
    let (w, _, _) = w_derivatives(u_c, params);
    (2.0 * w / u_c.cos().powi(2)).sqrt()
}

pub fn homothetic_s(v: f64, vc: f64, h: &EnergyLevel) -> f64 {
    (vc * vc - v * v) / (vc * vc - 2.0 * h.h)
}
