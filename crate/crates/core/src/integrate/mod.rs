//! Adaptive integration of the compact-chart flow with dense output, event location and
//! classical-time quadrature.

pub mod dop853;
#[rustfmt::skip]
mod tableau;

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::dynamics::{
    classical_time_rate_unchecked, energy_gradient, energy_residual, vector_field_compact, CompactState,
};
use crate::error::{Error, Result};
use crate::model::{regularized_potential_w, EnergyLevel, MassParams};
use dop853::{DenseStep, Dop853, StepFailure};

/// Phase state plus classical time.
pub const DIM: usize = 5;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Tolerance {
    pub abs: f64,
    pub rel: f64,
}

impl Default for Tolerance {
    fn default() -> Self {
        Tolerance { abs: 1e-12, rel: 1e-12 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum Functional {
    CosU,
    V,
    SMinus(f64),
    UMinus(f64),
    W,
}

impl Functional {
    pub fn eval(&self, x: &CompactState) -> f64 {
        match *self {
            Functional::CosU => x.u.cos(),
            Functional::V => x.v,
            Functional::SMinus(c) => x.s - c,
            Functional::UMinus(c) => x.u - c,
            Functional::W => x.w,
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            Functional::CosU => "cos_u",
            Functional::V => "v",
            Functional::SMinus(_) => "s_minus_c",
            Functional::UMinus(_) => "u_minus_c",
            Functional::W => "w",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Direction {
    Rising,
    Falling,
    Any,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Action {
    Record,
    Terminate,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EventSpec {
    pub functional: Functional,
    pub direction: Direction,
    pub action: Action,
}

impl EventSpec {
    pub fn record(functional: Functional) -> Self {
        EventSpec { functional, direction: Direction::Any, action: Action::Record }
    }

    pub fn terminate(functional: Functional, direction: Direction) -> Self {
        EventSpec { functional, direction, action: Action::Terminate }
    }

    fn accepts(&self, before: f64, after: f64) -> bool {
        match self.direction {
            Direction::Rising => before < 0.0 && after >= 0.0,
            Direction::Falling => before > 0.0 && after <= 0.0,
            Direction::Any => (before < 0.0 && after >= 0.0) || (before > 0.0 && after <= 0.0),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Node {
    pub tau: f64,
    pub state: CompactState,
    pub t_classical: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Event {
    pub tau: f64,
    pub kind: String,
    pub state: CompactState,
    /// Index into the `events` list passed to `integrate`.
    pub spec: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub params: MassParams,
    pub energy: EnergyLevel,
    pub nodes: Vec<Node>,
    pub events: Vec<Event>,
    /// Interpolant of the step ending at `nodes[i + 1]`.
    pub steps: Vec<DenseStep<DIM>>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct IntegrateOptions {
    pub tol: Tolerance,
    pub projection: bool,
    pub max_steps: usize,
    pub h_max: f64,
    /// Accumulate classical time. Ignored (NaN) for orbits starting on the infinity manifold.
    pub classical_time: bool,
}

impl Default for IntegrateOptions {
    fn default() -> Self {
        IntegrateOptions {
            tol: Tolerance::default(),
            projection: false,
            max_steps: 5_000_000,
            h_max: f64::INFINITY,
            classical_time: true,
        }
    }
}

/// What an observer sees after each accepted step.
pub struct StepView<'a> {
    pub step: &'a DenseStep<DIM>,
    pub start: &'a Node,
    pub end: &'a Node,
}

impl StepView<'_> {
    pub fn state_at(&self, tau: f64) -> CompactState {
        CompactState::from_slice(&self.step.eval(tau))
    }
}

pub enum Control {
    Continue,
    Stop,
    /// Truncate the trajectory at this τ inside the current step and stop.
    StopAt(f64),
}

const ROOT_TOL: f64 = 1e-12;
const ROOT_MAX_ITER: usize = 200;
const EVENT_SAMPLES: usize = 4;

fn node_from(y: &[f64; DIM], tau: f64) -> Node {
    Node { tau, state: CompactState::from_slice(y), t_classical: y[4] }
}

impl Trajectory {
    pub fn first(&self) -> &Node {
        &self.nodes[0]
    }

    pub fn last(&self) -> &Node {
        self.nodes.last().expect("trajectory has at least one node")
    }

    pub fn tau_span(&self) -> (f64, f64) {
        (self.first().tau, self.last().tau)
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn events_of(&self, kind: &str) -> impl Iterator<Item = &Event> {
        let kind = kind.to_string();
        self.events.iter().filter(move |e| e.kind == kind)
    }

    pub fn max_energy_residual(&self) -> f64 {
        self.nodes.iter().map(|n| energy_residual(&n.state, &self.params, &self.energy).abs()).fold(0.0, f64::max)
    }

    /// Dense output, including classical time as the fifth component.
    pub fn evaluate_full(&self, tau: f64) -> Result<[f64; DIM]> {
        let (lo, hi) = self.tau_span();
        if !(tau >= lo && tau <= hi) {
            return Err(Error::Range { tau, lo, hi });
        }
        let i = self.nodes.partition_point(|n| n.tau < tau);
        if i < self.nodes.len() && self.nodes[i].tau == tau {
            let n = &self.nodes[i];
            let s = n.state;
            return Ok([s.s, s.v, s.u, s.w, n.t_classical]);
        }
        Ok(self.steps[i - 1].eval(tau))
    }

    /// The orbit under (v, w, τ, t) -> (-v, -w, -τ, -t), traversed in increasing τ.
    pub fn time_reversed(&self) -> Trajectory {
        let flip = |y: [f64; DIM]| [y[0], -y[1], y[2], -y[3], -y[4]];
        let node = |n: &Node| Node { tau: -n.tau, state: n.state.time_reversed(), t_classical: -n.t_classical };
        Trajectory {
            params: self.params,
            energy: self.energy,
            nodes: self.nodes.iter().rev().map(node).collect(),
            events: self
                .events
                .iter()
                .rev()
                .map(|e| Event { tau: -e.tau, state: e.state.time_reversed(), ..e.clone() })
                .collect(),
            steps: self.steps.iter().rev().map(|st| st.reversed_with(flip)).collect(),
        }
    }

    /// Concatenate a continuation that starts where this trajectory ends.
    pub fn append(&mut self, next: Trajectory) -> Result<()> {
        let (a, b) = (self.last(), next.first());
        if a.tau != b.tau || a.state.dist(&b.state) > 1e-12 {
            return Err(Error::Domain("trajectories do not join".into()));
        }
        self.nodes.extend(next.nodes.into_iter().skip(1));
        self.events.extend(next.events);
        self.steps.extend(next.steps);
        Ok(())
    }

    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut wtr = csv::Writer::from_writer(out);
        wtr.write_record(["tau", "s", "v", "u", "w", "t_classical", "energy_residual"])?;
        for n in &self.nodes {
            let r = energy_residual(&n.state, &self.params, &self.energy);
            let s = n.state;
            wtr.write_record([n.tau, s.s, s.v, s.u, s.w, n.t_classical, r].iter().map(|x| x.to_string()))?;
        }
        wtr.flush()?;
        Ok(())
    }

    pub fn write_events_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut wtr = csv::Writer::from_writer(out);
        wtr.write_record(["tau", "kind", "s", "v", "u", "w"])?;
        for e in &self.events {
            let s = e.state;
            wtr.write_record([
                e.tau.to_string(),
                e.kind.clone(),
                s.s.to_string(),
                s.v.to_string(),
                s.u.to_string(),
                s.w.to_string(),
            ])?;
        }
        wtr.flush()?;
        Ok(())
    }
}

pub fn evaluate_dense(traj: &Trajectory, tau: f64) -> Result<CompactState> {
    Ok(CompactState::from_slice(&traj.evaluate_full(tau)?))
}

pub fn integrate(
    x0: CompactState,
    params: &MassParams,
    h: &EnergyLevel,
    tau_span: (f64, f64),
    events: &[EventSpec],
    opts: &IntegrateOptions,
) -> Result<Trajectory> {
    integrate_observed(x0, params, h, tau_span, events, opts, |_| Control::Continue)
}

/// Bracketed root of g on [a, b] with g(a)·g(b) < 0: secant steps safeguarded by bisection.
fn locate_root<G: Fn(f64) -> f64>(g: &G, mut a: f64, mut ga: f64, mut b: f64, mut gb: f64) -> Option<f64> {
    if gb == 0.0 {
        return Some(b);
    }
    let mut side = 0i8;
    for _ in 0..ROOT_MAX_ITER {
        // Illinois-weighted secant; fall back to bisection when it leaves the bracket
        let mut x = (a * gb - b * ga) / (gb - ga);
        if !(x > a && x < b) {
            x = 0.5 * (a + b);
        }
        let gx = g(x);
        if gx.abs() < ROOT_TOL || (b - a) <= 4.0 * f64::EPSILON * b.abs().max(1.0) {
            return Some(x);
        }
        if (gx < 0.0) == (ga < 0.0) {
            a = x;
            ga = gx;
            if side == -1 {
                gb *= 0.5;
            }
            side = -1;
        } else {
            b = x;
            gb = gx;
            if side == 1 {
                ga *= 0.5;
            }
            side = 1;
        }
    }
    None
}

pub fn integrate_observed<O>(
    x0: CompactState,
    params: &MassParams,
    h: &EnergyLevel,
    tau_span: (f64, f64),
    events: &[EventSpec],
    opts: &IntegrateOptions,
    mut observer: O,
) -> Result<Trajectory>
where
    O: FnMut(&StepView) -> Control,
{
    let (tau0, tau1) = tau_span;
    if !(tau0.is_finite() && tau1.is_finite() && tau1 >= tau0) {
        return Err(Error::Domain(format!("bad tau span ({tau0}, {tau1})")));
    }
    if !x0.is_finite() || !(0.0..=1.0).contains(&x0.s) {
        return Err(Error::Domain(format!("initial state out of range: {x0:?}")));
    }
    let res0 = energy_residual(&x0, params, h);
    let on_shell = 10.0 * opts.tol.abs.max(1e-13);
    if res0.abs() > on_shell {
        return Err(Error::Domain(format!("initial state is off the energy surface (residual {res0:e})")));
    }

    let with_time = opts.classical_time && x0.s < 1.0;
    let (pp, hh) = (*params, *h);
    let rhs = move |_t: f64, y: &[f64; DIM]| -> [f64; DIM] {
        let x = CompactState::from_slice(y);
        let f = vector_field_compact(&x, &pp, &hh);
        let rate = if with_time {
            let mut xs = x;
            xs.s = xs.s.min(1.0 - f64::EPSILON);
            classical_time_rate_unchecked(&xs)
        } else {
            0.0
        };
        [f.s, f.v, f.u, f.w, rate]
    };
    let t_init = if with_time { 0.0 } else { f64::NAN };
    let y0 = [x0.s, x0.v, x0.u, x0.w, 0.0];
    let mut stepper = Dop853::new(rhs, tau0, y0, opts.tol.abs, opts.tol.rel, [true, true, true, true, false]);
    stepper.h_max = opts.h_max;

    let fix_time = |mut n: Node| {
        if !with_time {
            n.t_classical = t_init;
        }
        n
    };
    let mut traj = Trajectory {
        params: *params,
        energy: *h,
        nodes: vec![fix_time(node_from(&y0, tau0))],
        events: Vec::new(),
        steps: Vec::new(),
    };

    let mut last_root: Vec<f64> = vec![f64::NEG_INFINITY; events.len()];
    let mut g_prev: Vec<f64> = events.iter().map(|e| e.functional.eval(&x0)).collect();

    // events sitting exactly at the initial point
    let mut initial_stop = false;
    for (i, e) in events.iter().enumerate() {
        if g_prev[i].abs() < ROOT_TOL {
            traj.events.push(Event { tau: tau0, kind: e.functional.name().into(), state: x0, spec: i });
            last_root[i] = tau0;
            if e.action == Action::Terminate {
                initial_stop = true;
            }
        }
    }
    if initial_stop || tau1 == tau0 {
        return Ok(traj);
    }

    loop {
        if traj.steps.len() >= opts.max_steps {
            let last = *traj.last();
            return Err(Error::StepLimit {
                tau: last.tau,
                limit: opts.max_steps,
                state: last.state,
                partial: Box::new(traj),
            });
        }
        let step = match stepper.step(tau1) {
            Ok(s) => s,
            Err(StepFailure::Underflow { t, h: hs }) => {
                let state = traj.last().state;
                return Err(Error::StepUnderflow { tau: t, step: hs, state, partial: Box::new(traj) });
            }
            Err(StepFailure::NonFinite { t }) => {
                let state = traj.last().state;
                return Err(Error::StepUnderflow { tau: t, step: 0.0, state, partial: Box::new(traj) });
            }
        };
        let t_end = step.t1();
        let mut y_end = stepper.y;
        if opts.projection {
            let x = CompactState::from_slice(&y_end);
            if let Ok(p) = energy_project_normal(x, params, h) {
                y_end[..4].copy_from_slice(&p.to_array());
                stepper.set_state(y_end);
            }
        }
        let end_node = fix_time(node_from(&y_end, t_end));

        // events inside this step, in τ order
        let mut found: Vec<(f64, usize)> = Vec::new();
        for (i, e) in events.iter().enumerate() {
            let g = |t: f64| e.functional.eval(&CompactState::from_slice(&step.eval(t)));
            let mut ta = step.t0;
            let mut ga = g_prev[i];
            for j in 1..=EVENT_SAMPLES {
                let tb = if j == EVENT_SAMPLES { t_end } else { step.t0 + step.h * j as f64 / EVENT_SAMPLES as f64 };
                let gb = if j == EVENT_SAMPLES { e.functional.eval(&end_node.state) } else { g(tb) };
                if e.accepts(ga, gb) || (e.direction == Direction::Any && ga != 0.0 && gb == 0.0) {
                    let root = locate_root(&g, ta, ga, tb, gb)
                        .ok_or_else(|| Error::Bracketing { kind: e.functional.name().into(), tau: ta })?;
                    if root - last_root[i] > 1e-12 * (1.0 + root.abs()) {
                        found.push((root, i));
                        last_root[i] = root;
                    }
                }
                ta = tb;
                ga = gb;
            }
            g_prev[i] = e.functional.eval(&end_node.state);
        }
        found.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));

        let mut stop_at: Option<f64> = None;
        for (tau, i) in found {
            let state = CompactState::from_slice(&step.eval(tau));
            traj.events.push(Event { tau, kind: events[i].functional.name().into(), state, spec: i });
            if events[i].action == Action::Terminate {
                stop_at = Some(tau);
                break;
            }
        }

        let start_node = *traj.last();
        if stop_at.is_none() {
            let view = StepView { step: &step, start: &start_node, end: &end_node };
            match observer(&view) {
                Control::Continue => {}
                Control::Stop => {
                    traj.steps.push(step);
                    traj.nodes.push(end_node);
                    return Ok(traj);
                }
                Control::StopAt(t) => {
                    let t = t.clamp(step.t0, t_end);
                    stop_at = Some(t);
                }
            }
        }

        if let Some(t) = stop_at {
            if t > start_node.tau {
                let y = step.eval(t);
                traj.nodes.push(fix_time(node_from(&y, t)));
                traj.steps.push(step);
            }
            return Ok(traj);
        }

        traj.steps.push(step);
        traj.nodes.push(end_node);
        if t_end >= tau1 {
            return Ok(traj);
        }
    }
}

/// Put x back on the energy surface by rescaling |w|; adjust v when that is impossible.
pub fn energy_project(x: CompactState, params: &MassParams, h: &EnergyLevel) -> Result<CompactState> {
    project_w(x, params, h).or_else(|_| energy_project_v(x, params, h))
}

fn project_w(x: CompactState, params: &MassParams, h: &EnergyLevel) -> Result<CompactState> {
    let c2 = x.u.cos().powi(2);
    let (wp, _) = regularized_potential_w(x.u, params);
    let w2 = 2.0 * ((1.0 - x.s) * wp + h.h * x.s * c2) - x.v * x.v * c2;
    let residual = energy_residual(&x, params, h);
    if w2 < 0.0 || (x.w == 0.0 && w2 > 0.0) {
        return Err(Error::Projection { residual });
    }
    Ok(CompactState { w: x.w.signum() * w2.sqrt(), ..x })
}

/// Newton steps along the energy gradient with s held fixed, so the invariant boundaries
/// stay invariant. Well behaved at w = 0, unlike the w rescaling.
pub fn energy_project_normal(x: CompactState, params: &MassParams, h: &EnergyLevel) -> Result<CompactState> {
    let mut y = x;
    for _ in 0..8 {
        let r = energy_residual(&y, params, h);
        if r.abs() < 1e-15 {
            return Ok(y);
        }
        let g = energy_gradient(&y, params, h);
        let n2 = g[1] * g[1] + g[2] * g[2] + g[3] * g[3];
        if n2 < 1e-24 {
            return Err(Error::Projection { residual: r });
        }
        let k = r / n2;
        y = CompactState { v: y.v - k * g[1], u: y.u - k * g[2], w: y.w - k * g[3], ..y };
    }
    let r = energy_residual(&y, params, h);
    if r.abs() < 1e-12 {
        Ok(y)
    } else {
        Err(Error::Projection { residual: r })
    }
}

/// Projection along v only, keeping w. Used where w is tiny and its sign carries meaning.
pub fn energy_project_v(x: CompactState, params: &MassParams, h: &EnergyLevel) -> Result<CompactState> {
    let c2 = x.u.cos().powi(2);
    let (wp, _) = regularized_potential_w(x.u, params);
    let residual = energy_residual(&x, params, h);
    let v2c2 = 2.0 * ((1.0 - x.s) * wp + h.h * x.s * c2) - x.w * x.w;
    if c2 < 1e-12 || v2c2 < 0.0 {
        return Err(Error::Projection { residual });
    }
    let sign = if x.v < 0.0 { -1.0 } else { 1.0 };
    Ok(CompactState { v: sign * (v2c2 / c2).sqrt(), ..x })
}
