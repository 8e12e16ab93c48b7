//! Scattering experiments: arcs in two-dimensional unstable manifolds, fate of each orbit,
//! final shapes and collision brackets.

use std::f64::consts::{FRAC_PI_2, PI};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dynamics::{energy_gradient, jacobi_view, CompactState};
use crate::equilibria::{collision_restpoint_for, jacobian, CentralShape, Family, Linearization, Restpoint};
use crate::error::{Error, Result};
use crate::integrate::{
    energy_project_v, integrate_observed, Control, EventSpec, Functional, IntegrateOptions, Tolerance, Trajectory,
};
use crate::manifolds::infinity_chain;
use crate::model::{theta_of_u, EnergyLevel, MassParams};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScatterConfig {
    pub rho: f64,
    pub z_grid: Vec<f64>,
    pub s_escape: f64,
    pub s_collision: f64,
    /// Defaults to −½√(2h) when unset.
    pub v_collision: Option<f64>,
    pub w_settle: f64,
    pub tau_max: f64,
    pub tol: Tolerance,
    /// Per-step projection onto the energy shell. Needed for arcs leaving the collision
    /// manifold, where E/s is what the flow conserves and roundoff at small s grows like 1/s.
    pub projection: bool,
    /// Stop at the Jacobi-coordinate certificate of a bound binary and a receding third body.
    pub binary_certificate: bool,
    /// Bisect until adjacent entries with different fate are this close in z.
    pub refine_width: f64,
    /// Bisect neighbouring escapes whose θ₊ or u₊ differ by more than this.
    pub coverage_step: f64,
    /// Neighbouring escapes whose u₊ differ by more than this hide a collision.
    pub u_jump: f64,
    /// Cap on the number of orbits added by refinement.
    pub max_refine: usize,
}

pub fn linspace(a: f64, b: f64, n: usize) -> Vec<f64> {
    match n {
        0 => vec![],
        1 => vec![0.5 * (a + b)],
        _ => (0..n).map(|i| a + (b - a) * i as f64 / (n - 1) as f64).collect(),
    }
}

impl Default for ScatterConfig {
    fn default() -> Self {
        ScatterConfig {
            rho: 1e-6,
            z_grid: linspace(-1.0, 1.0, 400),
            s_escape: 1.0 - 1e-6,
            s_collision: 1e-6,
            v_collision: None,
            w_settle: 1e-7,
            tau_max: 200.0,
            tol: Tolerance::default(),
            projection: false,
            binary_certificate: true,
            refine_width: 1e-10,
            coverage_step: 0.01,
            u_jump: 1.0,
            max_refine: 20_000,
        }
    }
}

fn parse_f64(key: &str, value: &str) -> Result<f64> {
    value.trim().parse::<f64>().map_err(|_| Error::Domain(format!("{key}: not a number: {value:?}")))
}

fn parse_bool(key: &str, value: &str) -> Result<bool> {
    match value.trim() {
        "true" | "1" | "yes" => Ok(true),
        "false" | "0" | "no" => Ok(false),
        v => Err(Error::Domain(format!("{key}: not a boolean: {v:?}"))),
    }
}

impl ScatterConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Domain(m));
        if !(0.0 < self.s_collision && self.s_collision < self.s_escape && self.s_escape < 1.0) {
            return bad(format!("need 0 < s_collision < s_escape < 1, got {} and {}", self.s_collision, self.s_escape));
        }
        if !(1e-8..=1e-3).contains(&self.rho) {
            return bad(format!("rho must lie in [1e-8, 1e-3], got {}", self.rho));
        }
        if self.z_grid.iter().any(|z| !(-1.0..=1.0).contains(z)) {
            return bad("z_grid values must lie in [-1, 1]".into());
        }
        if self.z_grid.windows(2).any(|w| w[1] <= w[0]) {
            return bad("z_grid must be strictly increasing".into());
        }
        if let Some(v) = self.v_collision {
            if !(v < 0.0) {
                return bad(format!("v_collision must be negative, got {v}"));
            }
        }
        if !(self.tau_max > 0.0 && self.w_settle > 0.0 && self.tol.abs > 0.0 && self.tol.rel > 0.0) {
            return bad("tau_max, w_settle and tolerances must be positive".into());
        }
        if !(self.refine_width > 0.0 && self.coverage_step > 0.0 && self.u_jump > 0.0) {
            return bad("refinement thresholds must be positive".into());
        }
        Ok(())
    }

    pub fn v_collision_for(&self, h: &EnergyLevel) -> f64 {
        self.v_collision.unwrap_or(-0.5 * h.speed())
    }

    /// Set one field from its textual key. `z_grid` takes `lo:hi:n` or a comma list.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let key = key.trim().replace('-', "_");
        match key.as_str() {
            "rho" => self.rho = parse_f64(&key, value)?,
            "s_escape" => self.s_escape = parse_f64(&key, value)?,
            "s_collision" => self.s_collision = parse_f64(&key, value)?,
            "v_collision" => self.v_collision = Some(parse_f64(&key, value)?),
            "w_settle" => self.w_settle = parse_f64(&key, value)?,
            "tau_max" => self.tau_max = parse_f64(&key, value)?,
            "atol" => self.tol.abs = parse_f64(&key, value)?,
            "rtol" => self.tol.rel = parse_f64(&key, value)?,
            "refine_width" => self.refine_width = parse_f64(&key, value)?,
            "coverage_step" => self.coverage_step = parse_f64(&key, value)?,
            "u_jump" => self.u_jump = parse_f64(&key, value)?,
            "max_refine" => {
                self.max_refine =
                    value.trim().parse().map_err(|_| Error::Domain(format!("max_refine: not an integer: {value:?}")))?
            }
            "binary_certificate" => self.binary_certificate = parse_bool(&key, value)?,
            "projection" => self.projection = parse_bool(&key, value)?,
            "z_grid" => self.z_grid = parse_grid(value)?,
            _ => return Err(Error::Domain(format!("unknown config key {key:?}"))),
        }
        Ok(())
    }

    /// Apply `key = value` lines; `#` starts a comment.
    pub fn apply_kv(&mut self, text: &str) -> Result<()> {
        for (i, line) in text.lines().enumerate() {
            let line = line.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) =
                line.split_once('=').ok_or_else(|| Error::Domain(format!("line {}: expected key = value", i + 1)))?;
            self.set(k, v)?;
        }
        Ok(())
    }
}

pub fn parse_grid(value: &str) -> Result<Vec<f64>> {
    let v = value.trim();
    let parts: Vec<&str> = v.split(':').collect();
    if parts.len() == 3 {
        let n: usize = parts[2].trim().parse().map_err(|_| Error::Domain(format!("z_grid: bad count in {v:?}")))?;
        return Ok(linspace(parse_f64("z_grid", parts[0])?, parse_f64("z_grid", parts[1])?, n));
    }
    v.split(',').map(|p| parse_f64("z_grid", p)).collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum OutcomeKind {
    Escape,
    TripleCollision,
    Budget,
    /// The integrator gave up; the entry carries the message.
    Failed,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum EscapeType {
    Hyperbolic,
    /// A bound binary with the third mass receding: final shape is a binary collision shape.
    HyperbolicElliptic,
    /// Orbit inside the infinity manifold, evaluated along the analytic chain.
    Chain,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScatterOutcome {
    pub kind: OutcomeKind,
    pub escape_type: Option<EscapeType>,
    pub theta_plus: Option<f64>,
    /// Unwrapped final u for escapes, last u otherwise.
    pub u_plus: f64,
    pub v_limit: Option<f64>,
    pub n_binary_collisions: u32,
    /// Infinite for chain endpoints; written as null in JSON.
    #[serde(deserialize_with = "null_as_infinity")]
    pub tau_end: f64,
    pub terminal: CompactState,
    pub message: Option<String>,
}

fn null_as_infinity<'de, D: serde::Deserializer<'de>>(d: D) -> std::result::Result<f64, D::Error> {
    Ok(Option::<f64>::deserialize(d)?.unwrap_or(f64::INFINITY))
}

impl ScatterOutcome {
    pub fn is_escape(&self) -> bool {
        self.kind == OutcomeKind::Escape
    }
}

/// Unit boundary and interior directions spanning the unstable half-disc at p.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ArcBasis {
    pub location: CompactState,
    pub boundary: [f64; 4],
    pub interior: [f64; 4],
}

fn unit(e: [f64; 4]) -> [f64; 4] {
    let n = e.iter().map(|x| x * x).sum::<f64>().sqrt();
    e.map(|x| x / n)
}

pub fn arc_basis(p: &Restpoint, params: &MassParams, h: &EnergyLevel) -> Result<ArcBasis> {
    match p.family {
        Family::HyperbolicInfinity { sign, .. } if sign < 0 => {
            // e₂ lies in M∞ with w-component λ > 0, e₃ leaves it with δs = λ
            let boundary = unit(p.eigenbasis[1]);
            let interior = unit(p.eigenbasis[2]).map(|x| -x);
            Ok(ArcBasis { location: p.location, boundary, interior })
        }
        Family::Collision { shape, starred: false } if shape != CentralShape::Euler => {
            let x = p.location;
            let j = jacobian(&x, params, h);
            let grad = energy_gradient(&x, params, h);
            let bnd = Linearization::new(&j, &[grad, [1.0, 0.0, 0.0, 0.0]]);
            let full = Linearization::new(&j, &[grad]);
            let lb = bnd
                .eigenvalues
                .iter()
                .copied()
                .find(|l| l.0 > 0.0 && l.1 == 0.0)
                .ok_or_else(|| Error::Domain("no unstable direction inside M0".into()))?;
            let mut boundary = bnd.eigenvector(lb).0;
            if boundary[3] < 0.0 {
                boundary = boundary.map(|a| -a);
            }
            let li = full
                .eigenvalues
                .iter()
                .copied()
                .filter(|l| l.0 > 0.0 && l.1 == 0.0)
                .map(|l| full.eigenvector(l).0)
                .find(|e| e[0].abs() > 1e-8)
                .ok_or_else(|| Error::Domain("no transverse unstable direction".into()))?;
            let interior = if li[0] < 0.0 { li.map(|a| -a) } else { li };
            Ok(ArcBasis { location: x, boundary, interior })
        }
        _ => Err(Error::Domain(format!("restpoint {} has no two-dimensional unstable half-disc", p.family.label()))),
    }
}

pub fn unstable_disc_init(
    p: &Restpoint,
    params: &MassParams,
    h: &EnergyLevel,
    rho: f64,
    z: f64,
) -> Result<CompactState> {
    if !(-1.0..=1.0).contains(&z) {
        return Err(Error::Domain(format!("z must lie in [-1, 1], got {z}")));
    }
    let b = arc_basis(p, params, h)?;
    let (sb, ci) = if z.abs() == 1.0 { (z, 0.0) } else { ((PI * z / 2.0).sin(), (PI * z / 2.0).cos()) };
    let mut y = b.location.to_array();
    for k in 0..4 {
        y[k] += rho * (sb * b.boundary[k] + ci * b.interior[k]);
    }
    // the boundary manifolds are invariant: keep s exactly there at the ends of the arc
    if ci == 0.0 {
        y[0] = b.location.s;
    }
    energy_project_v(CompactState::from_array(y), params, h)
}

/// Sufficient condition for a hyperbolic-elliptic escape, from Jacobi coordinates: m₃ is
/// receding with positive two-body energy relative to the binary, the binary is bound, and the
/// tidal work done on it over the rest of the motion cannot unbind it. Returns H₁₂.
pub fn binary_escape_certificate(x: &CompactState, params: &MassParams, h: &EnergyLevel) -> Option<f64> {
    let j = jacobi_view(x, params, h)?;
    if j.x2 * j.x2_dot <= 0.0 || j.h12 >= 0.0 {
        return None;
    }
    let e3 = 0.5 * params.mu * j.x2_dot * j.x2_dot - 2.0 * params.m3 / j.x2.abs();
    if e3 <= 0.0 {
        return None;
    }
    let c0 = (2.0 * e3 / params.mu).sqrt();
    let apo = 2.0 / j.h12.abs();
    let tidal = params.m3 * apo.sqrt() / (2.0 * c0 * j.x2 * j.x2);
    (tidal < 0.5 * j.h12.abs()).then_some(j.h12)
}

fn nearest_binary_u(u: f64) -> f64 {
    FRAC_PI_2 + ((u - FRAC_PI_2) / PI).round() * PI
}

#[derive(Debug, Clone, Copy)]
enum Stop {
    Hyperbolic,
    Binary(f64),
    Collision,
}

/// Integrate one orbit to its fate, keeping the trajectory.
pub fn scatter_traced(
    x0: CompactState,
    params: &MassParams,
    h: &EnergyLevel,
    cfg: &ScatterConfig,
) -> Result<(Trajectory, ScatterOutcome)> {
    scatter_traced_with(x0, params, h, cfg, cfg.projection)
}

pub fn scatter_traced_with(
    x0: CompactState,
    params: &MassParams,
    h: &EnergyLevel,
    cfg: &ScatterConfig,
    projection: bool,
) -> Result<(Trajectory, ScatterOutcome)> {
    let opts = IntegrateOptions { tol: cfg.tol, projection, classical_time: false, ..IntegrateOptions::default() };
    let v_col = cfg.v_collision_for(h);
    let events = [EventSpec::record(Functional::CosU)];
    let mut stop = None;
    let traj = integrate_observed(x0, params, h, (0.0, cfg.tau_max), &events, &opts, |view| {
        let x = view.end.state;
        stop = if x.s > cfg.s_escape && x.v > 0.0 && x.w.abs() < cfg.w_settle {
            Some(Stop::Hyperbolic)
        } else if x.s < cfg.s_collision && x.v < v_col {
            Some(Stop::Collision)
        } else if cfg.binary_certificate {
            binary_escape_certificate(&x, params, h).map(Stop::Binary)
        } else {
            None
        };
        if stop.is_some() {
            Control::Stop
        } else {
            Control::Continue
        }
    })?;
    let end = traj.last();
    let x = end.state;
    let n_bc = traj.events.iter().filter(|e| e.spec == 0 && e.tau > traj.first().tau).count() as u32;
    let mut out = ScatterOutcome {
        kind: OutcomeKind::Budget,
        escape_type: None,
        theta_plus: None,
        u_plus: x.u,
        v_limit: None,
        n_binary_collisions: n_bc,
        tau_end: end.tau,
        terminal: x,
        message: None,
    };
    match stop {
        Some(Stop::Hyperbolic) => {
            out.kind = OutcomeKind::Escape;
            out.escape_type = Some(EscapeType::Hyperbolic);
            out.theta_plus = Some(x.theta());
            out.v_limit = Some(x.v);
        }
        Some(Stop::Binary(h12)) => {
            let u = nearest_binary_u(x.u);
            out.kind = OutcomeKind::Escape;
            out.escape_type = Some(EscapeType::HyperbolicElliptic);
            out.theta_plus = Some(theta_of_u(u).0.signum() * FRAC_PI_2);
            out.u_plus = u;
            out.v_limit = Some((2.0 * (h.h - h12)).sqrt());
        }
        Some(Stop::Collision) => out.kind = OutcomeKind::TripleCollision,
        None => {}
    }
    Ok((traj, out))
}

pub fn scatter_one(x0: CompactState, params: &MassParams, h: &EnergyLevel, cfg: &ScatterConfig) -> ScatterOutcome {
    match scatter_traced(x0, params, h, cfg) {
        Ok((_, o)) => o,
        Err(e) => failed(x0, &e),
    }
}

fn failed(x0: CompactState, e: &Error) -> ScatterOutcome {
    let (terminal, tau_end) = match e {
        Error::StepUnderflow { tau, state, .. } | Error::StepLimit { tau, state, .. } => (*state, *tau),
        _ => (x0, 0.0),
    };
    ScatterOutcome {
        kind: OutcomeKind::Failed,
        escape_type: None,
        theta_plus: None,
        u_plus: terminal.u,
        v_limit: None,
        n_binary_collisions: 0,
        tau_end,
        terminal,
        message: Some(e.to_string()),
    }
}

/// Fate of the arc point at z, using the analytic chain at the ends of an arc from ℰ₋.
pub fn scatter_at(p: &Restpoint, params: &MassParams, h: &EnergyLevel, cfg: &ScatterConfig, z: f64) -> ScatterOutcome {
    let x0 = match unstable_disc_init(p, params, h, cfg.rho, z) {
        Ok(x) => x,
        Err(e) => return failed(p.location, &e),
    };
    if let Family::HyperbolicInfinity { u0, .. } = p.family {
        if z.abs() == 1.0 {
            return match infinity_chain(u0, h, z) {
                Ok(c) => ScatterOutcome {
                    kind: OutcomeKind::Escape,
                    escape_type: Some(EscapeType::Chain),
                    theta_plus: Some(c.theta_end),
                    u_plus: c.u_end,
                    v_limit: Some(h.speed()),
                    n_binary_collisions: c.n_binary_collisions,
                    tau_end: f64::INFINITY,
                    terminal: CompactState::new(1.0, h.speed(), c.u_end, 0.0),
                    message: None,
                },
                Err(e) => failed(x0, &e),
            };
        }
    }
    scatter_one(x0, params, h, cfg)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MapEntry {
    pub z: f64,
    pub outcome: ScatterOutcome,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScatterMap {
    pub params: MassParams,
    pub energy: EnergyLevel,
    pub p_minus: Restpoint,
    pub rho: f64,
    pub entries: Vec<MapEntry>,
    /// z-intervals containing a triple-collision orbit.
    pub collision_brackets: Vec<(f64, f64)>,
    pub n_refined: usize,
}

fn evaluate(zs: &[f64], p: &Restpoint, params: &MassParams, h: &EnergyLevel, cfg: &ScatterConfig) -> Vec<MapEntry> {
    zs.par_iter().map(|&z| MapEntry { z, outcome: scatter_at(p, params, h, cfg, z) }).collect()
}

fn u_jump(a: &ScatterOutcome, b: &ScatterOutcome, cfg: &ScatterConfig) -> bool {
    a.is_escape() && b.is_escape() && (a.u_plus - b.u_plus).abs() > cfg.u_jump
}

fn needs_split(a: &MapEntry, b: &MapEntry, cfg: &ScatterConfig) -> bool {
    if b.z - a.z <= cfg.refine_width {
        return false;
    }
    let (oa, ob) = (&a.outcome, &b.outcome);
    if oa.kind != ob.kind || u_jump(oa, ob, cfg) {
        return true;
    }
    match (oa.theta_plus, ob.theta_plus) {
        (Some(ta), Some(tb)) => {
            (ta - tb).abs() > cfg.coverage_step || (oa.u_plus - ob.u_plus).abs() > cfg.coverage_step
        }
        _ => false,
    }
}

pub fn scatter_map(p: &Restpoint, params: &MassParams, h: &EnergyLevel, cfg: &ScatterConfig) -> Result<ScatterMap> {
    cfg.validate()?;
    arc_basis(p, params, h)?;
    let mut entries = evaluate(&cfg.z_grid, p, params, h, cfg);
    let mut n_refined = 0;
    loop {
        let mids: Vec<f64> = entries
            .windows(2)
            .filter(|w| needs_split(&w[0], &w[1], cfg))
            .map(|w| 0.5 * (w[0].z + w[1].z))
            .take(cfg.max_refine - n_refined)
            .collect();
        if mids.is_empty() {
            break;
        }
        n_refined += mids.len();
        let new = evaluate(&mids, p, params, h, cfg);
        entries.extend(new);
        entries.sort_by(|a, b| a.z.total_cmp(&b.z));
        if n_refined >= cfg.max_refine {
            break;
        }
    }
    let collision_brackets = collision_brackets(&entries, cfg);
    Ok(ScatterMap {
        params: *params,
        energy: *h,
        p_minus: p.clone(),
        rho: cfg.rho,
        entries,
        collision_brackets,
        n_refined,
    })
}

/// Maximal triple-collision runs, widened to their neighbours, and escape pairs whose u₊ jump
/// survived refinement.
fn collision_brackets(entries: &[MapEntry], cfg: &ScatterConfig) -> Vec<(f64, f64)> {
    let mut out: Vec<(f64, f64)> = Vec::new();
    let n = entries.len();
    let mut i = 0;
    while i < n {
        if entries[i].outcome.kind == OutcomeKind::TripleCollision {
            let start = i;
            while i + 1 < n && entries[i + 1].outcome.kind == OutcomeKind::TripleCollision {
                i += 1;
            }
            let lo = entries[start.saturating_sub(1)].z;
            let hi = entries[(i + 1).min(n - 1)].z;
            out.push((lo, hi));
        } else if i + 1 < n && u_jump(&entries[i].outcome, &entries[i + 1].outcome, cfg) {
            out.push((entries[i].z, entries[i + 1].z));
        }
        i += 1;
    }
    out
}

/// Grid for arcs from a collision restpoint: the open interval, densified geometrically towards
/// z = −1 where orbits shadow the branch into the Euler sink.
pub fn collision_arc_grid(base: &[f64]) -> Vec<f64> {
    let mut g: Vec<f64> = base.iter().copied().filter(|z| z.abs() < 1.0).collect();
    g.extend((2..=12).map(|k| -1.0 + 10f64.powi(-k)));
    g.sort_by(f64::total_cmp);
    g.dedup();
    g
}

/// Final shapes u₊ along the arc from the collision restpoint L± (v > 0). Near z = −1
/// orbits shadow the branch into the Euler sink; (z + 1)/2 is the arc parametrized on (0, 1).
pub fn u_plus_profile_from_l(
    which: CentralShape,
    params: &MassParams,
    h: &EnergyLevel,
    cfg: &ScatterConfig,
) -> Result<ScatterMap> {
    if which == CentralShape::Euler {
        return Err(Error::Domain("the Euler restpoint has a one-dimensional unstable manifold".into()));
    }
    let p = collision_restpoint_for(which, false, params, h);
    let cfg = ScatterConfig { z_grid: collision_arc_grid(&cfg.z_grid), projection: true, ..cfg.clone() };
    scatter_map(&p, params, h, &cfg)
}

fn opt(x: Option<f64>) -> String {
    x.map(|v| v.to_string()).unwrap_or_default()
}

impl ScatterMap {
    pub fn escapes(&self) -> impl Iterator<Item = &MapEntry> {
        self.entries.iter().filter(|e| e.outcome.is_escape())
    }

    pub fn count(&self, kind: OutcomeKind) -> usize {
        self.entries.iter().filter(|e| e.outcome.kind == kind).count()
    }

    pub fn write_csv<W: std::io::Write>(&self, out: W) -> Result<()> {
        let mut wtr = csv::Writer::from_writer(out);
        wtr.write_record([
            "z",
            "kind",
            "escape_type",
            "theta_plus",
            "u_plus",
            "v_limit",
            "n_binary_collisions",
            "tau_end",
        ])?;
        for e in &self.entries {
            let o = &e.outcome;
            wtr.write_record([
                e.z.to_string(),
                format!("{:?}", o.kind),
                o.escape_type.map(|t| format!("{t:?}")).unwrap_or_default(),
                opt(o.theta_plus),
                o.u_plus.to_string(),
                opt(o.v_limit),
                o.n_binary_collisions.to_string(),
                o.tau_end.to_string(),
            ])?;
        }
        wtr.flush()?;
        Ok(())
    }
}

/// Largest gap between attained values on [lo, hi], counting the ends. The one gap that
/// straddles `exclude` (if given) is not counted.
pub fn max_coverage_gap(values: &[f64], lo: f64, hi: f64, exclude: Option<f64>) -> f64 {
    let mut v: Vec<f64> = values.iter().copied().filter(|x| *x >= lo && *x <= hi).collect();
    v.push(lo);
    v.push(hi);
    v.sort_by(f64::total_cmp);
    v.windows(2).filter(|w| !exclude.is_some_and(|x| w[0] < x && x < w[1])).map(|w| w[1] - w[0]).fold(0.0, f64::max)
}
