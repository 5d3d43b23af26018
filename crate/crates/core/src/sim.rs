//! Fixed-step RK4 integration of a scenario, sampling and summaries.
//!
//! Step `k` covers `[k·dt, (k+1)·dt]` with the formation piece frozen at
//! the step midpoint. Switch times must be multiples of `dt`, so no step
//! straddles a jump in `h`.

use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::formation::FormationSpec;
use crate::graph::{Directedness, GraphError, Topology};
use crate::linalg::{lambda_max_sym, DenseMatrix};
use crate::protocols::{
    metrics, LeaderInput, MetricSample, NoLog, Protocol, ProtocolError, Regime, RegimeOptions, Workspace,
};
use crate::synthesis::{verify_gainset, GainSet, LtiModel};
use crate::vehicle::{feedback_linearize, hand_state, pose_from_hand, vehicle_derivative, VehicleParams, VehiclePose};

pub const DEFAULT_DT: f64 = 1e-3;
pub const DEFAULT_RECORD_STRIDE: usize = 100;
/// Any state entry above this magnitude aborts the run.
pub const DIVERGENCE_LIMIT: f64 = 1e9;
/// Per-step decrease of an adaptive weight that counts as a violation.
pub const C_DECREASE_TOL: f64 = 1e-9;
/// Seconds at the end of each window examined by [`summarize`].
pub const DEFAULT_TAIL: f64 = 5.0;

#[derive(Debug, Error)]
pub enum SimError {
    #[error("invalid simulation settings: {0}")]
    Config(String),
    #[error("gain certificates failed:\n{0}")]
    Certificate(String),
    #[error(transparent)]
    Protocol(#[from] ProtocolError),
    #[error(transparent)]
    Graph(#[from] GraphError),
    #[error("state diverged at t = {t}")]
    Diverged { t: f64, result: Box<SimResult> },
    #[error("diagnostic needs regime {expected}, result is {found}")]
    RegimeMismatch { expected: Regime, found: Regime },
}

/// Initial conditions: explicit values or seeded uniform draws.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum InitSpec {
    /// Agent states in `x`, adaptive weights in `c`, headings in `theta`;
    /// observer states start at zero.
    Uniform {
        #[serde(default = "default_x_range")]
        x: [f64; 2],
        #[serde(default = "default_c_range")]
        c: [f64; 2],
        #[serde(default = "default_theta_range")]
        theta: [f64; 2],
    },
    Explicit {
        /// `N+1` rows, leader first.
        x: Vec<Vec<f64>>,
        #[serde(default)]
        c: Option<Vec<f64>>,
        #[serde(default)]
        c_edge: Option<f64>,
        #[serde(default)]
        v: Option<Vec<Vec<f64>>>,
        #[serde(default)]
        w: Option<Vec<Vec<f64>>>,
        #[serde(default)]
        w0: Option<Vec<f64>>,
        #[serde(default)]
        theta: Option<Vec<f64>>,
    },
}

fn default_x_range() -> [f64; 2] {
    [-5.0, 5.0]
}

fn default_c_range() -> [f64; 2] {
    [1.0, 3.0]
}

fn default_theta_range() -> [f64; 2] {
    [-std::f64::consts::PI, std::f64::consts::PI]
}

impl Default for InitSpec {
    fn default() -> Self {
        InitSpec::Uniform { x: default_x_range(), c: default_c_range(), theta: default_theta_range() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimConfig {
    pub t_final: f64,
    #[serde(default = "default_dt")]
    pub dt: f64,
    #[serde(default = "default_stride")]
    pub record_stride: usize,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub init: InitSpec,
}

fn default_dt() -> f64 {
    DEFAULT_DT
}

fn default_stride() -> usize {
    DEFAULT_RECORD_STRIDE
}

/// Everything needed to integrate one run.
#[derive(Debug, Clone)]
pub struct Scenario {
    pub name: String,
    pub model: LtiModel,
    pub topology: Topology,
    pub gains: GainSet,
    pub spec: FormationSpec,
    pub regime: Regime,
    pub options: RegimeOptions,
    pub leader_input: LeaderInput,
    pub sim: SimConfig,
    pub vehicle: Option<VehicleParams>,
}

impl Scenario {
    pub fn protocol(&self) -> Result<Protocol, ProtocolError> {
        Protocol::new(
            &self.model,
            &self.gains,
            &self.topology,
            &self.spec,
            self.regime,
            &self.options,
            &self.leader_input,
        )
    }

    pub fn steps(&self) -> usize {
        (self.sim.t_final / self.sim.dt).round() as usize
    }
}

/// Something RK4 can advance.
pub trait Dynamics {
    fn dim(&self) -> usize;
    fn deriv(&mut self, t: f64, piece: usize, y: &[f64], dy: &mut [f64]);
}

/// Stage buffers for classical RK4.
#[derive(Debug, Clone)]
pub struct Rk4 {
    k: [Vec<f64>; 4],
    tmp: Vec<f64>,
}

impl Rk4 {
    pub fn new(dim: usize) -> Self {
        Rk4 { k: std::array::from_fn(|_| vec![0.0; dim]), tmp: vec![0.0; dim] }
    }

    /// One classical RK4 step, in place.
    pub fn step<D: Dynamics>(&mut self, sys: &mut D, t: f64, dt: f64, piece: usize, y: &mut [f64]) {
        let n = y.len();
        let [k1, k2, k3, k4] = &mut self.k;
        sys.deriv(t, piece, y, k1);
        for i in 0..n {
            self.tmp[i] = y[i] + 0.5 * dt * k1[i];
        }
        sys.deriv(t + 0.5 * dt, piece, &self.tmp, k2);
        for i in 0..n {
            self.tmp[i] = y[i] + 0.5 * dt * k2[i];
        }
        sys.deriv(t + 0.5 * dt, piece, &self.tmp, k3);
        for i in 0..n {
            self.tmp[i] = y[i] + dt * k3[i];
        }
        sys.deriv(t + dt, piece, &self.tmp, k4);
        for i in 0..n {
            y[i] += dt / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]);
        }
    }
}

/// Wraps a closure `f(t, y, dy)` as time-only dynamics.
pub struct FnDynamics<F> {
    pub dim: usize,
    pub f: F,
}

impl<F: FnMut(f64, &[f64], &mut [f64])> Dynamics for FnDynamics<F> {
    fn dim(&self) -> usize {
        self.dim
    }

    fn deriv(&mut self, t: f64, _piece: usize, y: &[f64], dy: &mut [f64]) {
        (self.f)(t, y, dy)
    }
}

/// Integrates `ẏ = f(t, y)` from `t = 0` for `steps` steps of `dt`.
pub fn rk4_integrate<F: FnMut(f64, &[f64], &mut [f64])>(f: F, y0: &[f64], dt: f64, steps: usize) -> Vec<f64> {
    let mut sys = FnDynamics { dim: y0.len(), f };
    let mut rk = Rk4::new(y0.len());
    let mut y = y0.to_vec();
    for k in 0..steps {
        rk.step(&mut sys, k as f64 * dt, dt, 0, &mut y);
    }
    y
}

struct LinearLoop<'a> {
    protocol: &'a Protocol,
    ws: Workspace,
    dim: usize,
}

impl Dynamics for LinearLoop<'_> {
    fn dim(&self) -> usize {
        self.dim
    }

    fn deriv(&mut self, t: f64, piece: usize, y: &[f64], dy: &mut [f64]) {
        self.protocol.rhs(t, piece, y, dy, &mut self.ws);
    }
}

/// Linear leader, unicycle followers. State: `[x₀; poses; ctrl]`.
struct VehicleLoop<'a> {
    protocol: &'a Protocol,
    params: VehicleParams,
    ws: Workspace,
    x: Vec<f64>,
    nf: usize,
    n: usize,
    dim: usize,
}

impl VehicleLoop<'_> {
    fn hand_states(&mut self, y: &[f64]) {
        for i in 0..self.nf {
            let pose = VehiclePose::from_slice(&y[self.n + 5 * i..self.n + 5 * i + 5]);
            let s = hand_state(&pose, self.params.hand);
            self.x[self.n * (i + 1)..self.n * (i + 2)].copy_from_slice(&s);
        }
        self.x[..self.n].copy_from_slice(&y[..self.n]);
    }
}

impl Dynamics for VehicleLoop<'_> {
    fn dim(&self) -> usize {
        self.dim
    }

    fn deriv(&mut self, t: f64, piece: usize, y: &[f64], dy: &mut [f64]) {
        let (n, nf) = (self.n, self.nf);
        let split = n + 5 * nf;
        self.hand_states(y);
        self.protocol.evaluate(t, piece, &self.x, &y[split..], &mut self.ws, &NoLog);
        self.protocol.leader_derivative(&y[..n], &self.ws.u0, &mut dy[..n]);
        for i in 0..nf {
            let r = n + 5 * i..n + 5 * i + 5;
            let pose = VehiclePose::from_slice(&y[r.clone()]);
            let u = [self.ws.u[2 * i], self.ws.u[2 * i + 1]];
            let (f, tau) = feedback_linearize(&pose, u, &self.params);
            dy[r].copy_from_slice(&vehicle_derivative(&pose, f, tau, &self.params));
        }
        dy[split..].copy_from_slice(&self.ws.dctrl);
    }
}

/// Recorded trajectory plus its summary.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimResult {
    pub name: String,
    pub regime: Regime,
    pub n: usize,
    pub q: usize,
    pub n_followers: usize,
    pub dt: f64,
    pub t_final: f64,
    pub switch_times: Vec<f64>,
    /// Edges `(i, j)` with `a_ij > 0`, follower indices from 1.
    pub edges: Vec<(usize, usize)>,
    pub times: Vec<f64>,
    /// `(N+1)·n` agent states per sample; hand states for vehicles.
    pub states: Vec<Vec<f64>>,
    /// Controller state per sample in [`crate::protocols::ControlLayout`] order.
    pub controls: Vec<Vec<f64>>,
    /// `N·5` vehicle poses per sample, empty without a vehicle layer.
    pub poses: Vec<Vec<f64>>,
    pub metrics: Vec<MetricSample>,
    pub steps_taken: usize,
    pub c_decrease_violations: usize,
    pub max_c_decrease: f64,
    pub aborted_at: Option<f64>,
    pub wall_clock: f64,
    pub summary: Summary,
}

impl SimResult {
    /// `‖p_i − p₀ − h_i^p‖` over the first `dims` state coordinates.
    pub fn coordinate_errors(&self, spec: &FormationSpec, k: usize, dims: usize) -> Vec<f64> {
        let h = spec.offsets(self.times[k]);
        let x = &self.states[k];
        let n = self.n;
        (0..self.n_followers)
            .map(|i| {
                (0..dims)
                    .map(|d| (x[(i + 1) * n + d] - x[d] - h[i * n + d]).powi(2))
                    .sum::<f64>()
                    .sqrt()
            })
            .collect()
    }

    /// Index of the last sample at or before `t`.
    pub fn sample_at(&self, t: f64) -> usize {
        match self.times.iter().rposition(|&s| s <= t + 1e-9) {
            Some(k) => k,
            None => 0,
        }
    }
}

/// Error statistics of one constant-shape window `[start, end)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WindowSummary {
    pub start: f64,
    pub end: f64,
    /// True when the window holds no samples; the other fields are then `None`.
    pub empty: bool,
    /// Largest follower error at the first sample of the window.
    pub initial_error: Option<f64>,
    /// Per-follower maximum over the last `tail` seconds of the window.
    pub tail_max: Option<Vec<f64>>,
    pub tail_max_error: Option<f64>,
    /// `tail_max_error / initial_error`.
    pub ratio: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub name: String,
    pub regime: Regime,
    pub samples: usize,
    pub steps: usize,
    pub dt: f64,
    pub t_final: f64,
    pub tail: f64,
    pub final_errors: Vec<f64>,
    pub final_max_error: f64,
    pub windows: Vec<WindowSummary>,
    /// Max follower error over `[t_end − tail, t_end]`.
    pub tail_max_error: f64,
    pub c_decrease_violations: usize,
    pub max_c_decrease: f64,
    /// Largest weight growth over the final 10% of samples.
    pub delta_c_final: f64,
    pub final_c: Vec<f64>,
    pub final_leader_observer_error: Option<f64>,
    pub final_local_observer_error: Option<f64>,
    pub aborted_at: Option<f64>,
    pub wall_clock: f64,
}

fn window_summary(r: &SimResult, start: f64, end: f64, tail: f64, last: bool) -> WindowSummary {
    let inside = |t: f64| t >= start - 1e-9 && (if last { t <= end + 1e-9 } else { t < end - 1e-9 });
    let ks: Vec<usize> = (0..r.times.len()).filter(|&k| inside(r.times[k])).collect();
    let Some(&first) = ks.first() else {
        return WindowSummary { start, end, empty: true, initial_error: None, tail_max: None, tail_max_error: None, ratio: None };
    };
    let initial = r.metrics[first].max_formation_error;
    let tail_ks: Vec<usize> = ks.iter().copied().filter(|&k| r.times[k] >= end - tail - 1e-9).collect();
    if tail_ks.is_empty() {
        return WindowSummary {
            start,
            end,
            empty: true,
            initial_error: Some(initial),
            tail_max: None,
            tail_max_error: None,
            ratio: None,
        };
    }
    let mut tail_max = vec![0.0f64; r.n_followers];
    for &k in &tail_ks {
        for (m, e) in tail_max.iter_mut().zip(&r.metrics[k].formation_error) {
            *m = m.max(*e);
        }
    }
    let worst = tail_max.iter().copied().fold(0.0, f64::max);
    WindowSummary {
        start,
        end,
        empty: false,
        initial_error: Some(initial),
        tail_max: Some(tail_max),
        tail_max_error: Some(worst),
        ratio: if initial > 0.0 { Some(worst / initial) } else { None },
    }
}

/// Per-window and end-of-run statistics.
pub fn summarize(r: &SimResult, tail: f64) -> Summary {
    let t_end = r.times.last().copied().unwrap_or(0.0);
    let mut bounds = vec![0.0];
    bounds.extend(r.switch_times.iter().copied().filter(|&s| s > 0.0 && s < r.t_final));
    bounds.push(r.t_final);
    let windows = bounds
        .windows(2)
        .enumerate()
        .map(|(i, w)| window_summary(r, w[0], w[1], tail, i + 2 == bounds.len()))
        .collect();

    let last = r.metrics.last();
    let final_errors = last.map(|m| m.formation_error.clone()).unwrap_or_default();
    let final_max_error = last.map(|m| m.max_formation_error).unwrap_or(f64::NAN);
    let tail_max_error = r
        .metrics
        .iter()
        .filter(|m| m.t >= t_end - tail - 1e-9)
        .map(|m| m.max_formation_error)
        .fold(0.0, f64::max);

    // weights: node weights then edge weights on actual edges
    let weights = |k: usize| -> Vec<f64> {
        let c = &r.controls[k];
        let nf = r.n_followers;
        let lay = crate::protocols::ControlLayout { nf, n: r.n };
        let mut out = c[lay.c_node()].to_vec();
        out.extend(r.edges.iter().map(|&(i, j)| c[lay.c_edge().start + (i - 1) * nf + (j - 1)]));
        out
    };
    let delta_c_final = if r.times.len() >= 2 {
        let k0 = ((r.times.len() - 1) as f64 * 0.9).floor() as usize;
        let (a, b) = (weights(k0), weights(r.times.len() - 1));
        a.iter().zip(&b).map(|(x, y)| (y - x).abs()).fold(0.0, f64::max)
    } else {
        0.0
    };

    Summary {
        name: r.name.clone(),
        regime: r.regime,
        samples: r.times.len(),
        steps: r.steps_taken,
        dt: r.dt,
        t_final: r.t_final,
        tail,
        final_errors,
        final_max_error,
        windows,
        tail_max_error,
        c_decrease_violations: r.c_decrease_violations,
        max_c_decrease: r.max_c_decrease,
        delta_c_final,
        final_c: last.map(|m| m.c_node.clone()).unwrap_or_default(),
        final_leader_observer_error: last.and_then(|m| m.leader_observer_error),
        final_local_observer_error: last
            .filter(|m| !m.local_observer_error.is_empty())
            .map(|m| m.local_observer_error.iter().copied().fold(0.0, f64::max)),
        aborted_at: r.aborted_at,
        wall_clock: r.wall_clock,
    }
}

/// Step size, horizon, schedule alignment and vehicle layer checks.
pub fn check_settings(s: &Scenario) -> Result<(), SimError> {
    let c = &s.sim;
    if !(c.dt > 0.0 && c.dt.is_finite()) {
        return Err(SimError::Config(format!("dt must be positive, got {}", c.dt)));
    }
    if !(c.t_final > 0.0 && c.t_final.is_finite()) {
        return Err(SimError::Config(format!("t_final must be positive, got {}", c.t_final)));
    }
    if c.record_stride == 0 {
        return Err(SimError::Config("record_stride must be at least 1".into()));
    }
    let steps = c.t_final / c.dt;
    if (steps - steps.round()).abs() > 1e-6 * steps.max(1.0) {
        return Err(SimError::Config(format!("t_final = {} is not a multiple of dt = {}", c.t_final, c.dt)));
    }
    for t in s.spec.switch_times() {
        let k = t / c.dt;
        if (k - k.round()).abs() > 1e-6 * k.max(1.0) {
            return Err(SimError::Config(format!("switch time {t} is not a multiple of dt = {}", c.dt)));
        }
    }
    if let Some(v) = &s.vehicle {
        v.validate().map_err(|e| SimError::Config(e.to_string()))?;
        if !is_planar_double_integrator(&s.model) {
            return Err(SimError::Config("vehicle layer needs the planar double integrator (n = 4, p = 2)".into()));
        }
    }
    Ok(())
}

fn is_planar_double_integrator(m: &LtiModel) -> bool {
    if m.n() != 4 || m.p() != 2 {
        return false;
    }
    let a = DenseMatrix::from_fn(4, 4, |i, j| if j == i + 2 { 1.0 } else { 0.0 });
    let b = DenseMatrix::from_fn(4, 2, |i, j| if i == j + 2 { 1.0 } else { 0.0 });
    m.a == a && m.b == b
}

fn check_config(s: &Scenario) -> Result<(), SimError> {
    check_settings(s)?;
    let report = verify_gainset(&s.model, &s.gains, s.regime, Some(s.leader_input.certified_bound()));
    if !report.passed() {
        return Err(SimError::Certificate(report.to_table()));
    }
    Ok(())
}

fn rows_exact(name: &str, rows: &[Vec<f64>], count: usize, len: usize) -> Result<(), SimError> {
    if rows.len() != count || rows.iter().any(|r| r.len() != len) {
        return Err(SimError::Config(format!("initial {name} must be {count} rows of length {len}")));
    }
    Ok(())
}

/// Initial `[x; ctrl]` and vehicle headings.
pub fn initial_state(s: &Scenario, protocol: &Protocol) -> Result<(Vec<f64>, Vec<f64>), SimError> {
    let lay = protocol.state_layout();
    let cl = lay.control;
    let (nf, n) = (cl.nf, cl.n);
    let mut y = vec![0.0; lay.len()];
    let o = lay.ctrl().start;
    let theta;
    match &s.sim.init {
        InitSpec::Uniform { x, c, theta: th } => {
            let mut rng = ChaCha8Rng::seed_from_u64(s.sim.seed);
            let mut draw = |r: [f64; 2]| r[0] + (r[1] - r[0]) * rng.gen::<f64>();
            for v in y[lay.x()].iter_mut() {
                *v = draw(*x);
            }
            for i in 0..nf {
                y[o + cl.c_node().start + i] = draw(*c);
            }
            for i in 0..nf {
                for j in 0..nf {
                    let k = o + cl.c_edge().start + i * nf + j;
                    y[k] = if j < i && s.topology.directedness() == Directedness::Undirected {
                        y[o + cl.c_edge().start + j * nf + i]
                    } else {
                        draw(*c)
                    };
                }
            }
            theta = (0..nf).map(|_| draw(*th)).collect();
        }
        InitSpec::Explicit { x, c, c_edge, v, w, w0, theta: th } => {
            rows_exact("x", x, nf + 1, n)?;
            for (j, row) in x.iter().enumerate() {
                y[j * n..(j + 1) * n].copy_from_slice(row);
            }
            let c = c.clone().unwrap_or_else(|| vec![1.0; nf]);
            if c.len() != nf {
                return Err(SimError::Config(format!("initial c must have {nf} entries")));
            }
            y[o + cl.c_node().start..o + cl.c_node().end].copy_from_slice(&c);
            y[o + cl.c_edge().start..o + cl.c_edge().end].fill(c_edge.unwrap_or(1.0));
            for (name, src, range) in [("v", v, cl.v()), ("w", w, cl.w())] {
                if let Some(rows) = src {
                    rows_exact(name, rows, nf, n)?;
                    let flat: Vec<f64> = rows.concat();
                    y[o + range.start..o + range.end].copy_from_slice(&flat);
                }
            }
            if let Some(w0) = w0 {
                rows_exact("w0", std::slice::from_ref(w0), 1, n)?;
                y[o + cl.w0().start..o + cl.w0().end].copy_from_slice(w0);
            }
            theta = th.clone().unwrap_or_else(|| vec![0.0; nf]);
            if theta.len() != nf {
                return Err(SimError::Config(format!("initial theta must have {nf} entries")));
            }
        }
    }
    if s.regime == Regime::DirectedTrackingBoundedInput {
        for (i, &c) in y[o + cl.c_node().start..o + cl.c_node().end].iter().enumerate() {
            if c < 1.0 {
                return Err(ProtocolError::InitialWeight { follower: i + 1, value: c }.into());
            }
        }
    }
    Ok((y, theta))
}

struct Recorder<'a> {
    s: &'a Scenario,
    times: Vec<f64>,
    states: Vec<Vec<f64>>,
    controls: Vec<Vec<f64>>,
    poses: Vec<Vec<f64>>,
    metrics: Vec<MetricSample>,
}

impl Recorder<'_> {
    fn push(&mut self, t: f64, x: &[f64], ctrl: &[f64], poses: Option<&[f64]>) {
        self.times.push(t);
        self.states.push(x.to_vec());
        self.controls.push(ctrl.to_vec());
        if let Some(p) = poses {
            self.poses.push(p.to_vec());
        }
        self.metrics.push(metrics(&self.s.model, &self.s.topology, &self.s.spec, self.s.regime, t, x, ctrl));
    }
}

fn edges(topo: &Topology) -> Vec<(usize, usize)> {
    let nf = topo.n_followers();
    let mut out = Vec::new();
    for i in 0..nf {
        for j in 0..nf {
            if topo.weight(i, j) > 0.0 {
                out.push((i + 1, j + 1));
            }
        }
    }
    out
}

/// Integrates the scenario and summarizes it.
pub fn integrate(s: &Scenario) -> Result<SimResult, SimError> {
    check_config(s)?;
    let protocol = s.protocol()?;
    let (y_lin, theta) = initial_state(s, &protocol)?;
    let lay = protocol.state_layout();
    let (nf, n) = (lay.control.nf, lay.control.n);
    let clock = Instant::now();

    let (mut y, split, mut sys) = match s.vehicle {
        None => (
            y_lin.clone(),
            lay.x().end,
            ClosedLoop::Linear(LinearLoop { protocol: &protocol, ws: protocol.workspace(), dim: lay.len() }),
        ),
        Some(params) => {
            let split = n + 5 * nf;
            let mut y = vec![0.0; split + lay.control.len()];
            y[..n].copy_from_slice(&y_lin[..n]);
            for i in 0..nf {
                let pose = pose_from_hand(&y_lin[(i + 1) * n..(i + 2) * n], theta[i], params.hand);
                y[n + 5 * i..n + 5 * i + 5].copy_from_slice(&pose.to_array());
            }
            y[split..].copy_from_slice(&y_lin[lay.ctrl()]);
            let dim = y.len();
            let sys = VehicleLoop {
                protocol: &protocol,
                params,
                ws: protocol.workspace(),
                x: vec![0.0; (nf + 1) * n],
                nf,
                n,
                dim,
            };
            (y, split, ClosedLoop::Vehicle(sys))
        }
    };

    let mut rec = Recorder { s, times: vec![], states: vec![], controls: vec![], poses: vec![], metrics: vec![] };
    let mut xbuf = vec![0.0; (nf + 1) * n];
    let linear_x = |y: &[f64], out: &mut [f64]| match s.vehicle {
        None => out.copy_from_slice(&y[..(nf + 1) * n]),
        Some(p) => {
            out[..n].copy_from_slice(&y[..n]);
            for i in 0..nf {
                let pose = VehiclePose::from_slice(&y[n + 5 * i..n + 5 * i + 5]);
                out[(i + 1) * n..(i + 2) * n].copy_from_slice(&hand_state(&pose, p.hand));
            }
        }
    };
    let record = |rec: &mut Recorder, t: f64, y: &[f64], xbuf: &mut Vec<f64>| {
        linear_x(y, xbuf);
        let poses = s.vehicle.map(|_| &y[n..split]);
        rec.push(t, xbuf, &y[split..], poses);
    };
    record(&mut rec, 0.0, &y, &mut xbuf);

    let cl = lay.control;
    let weight_idx: Vec<usize> = cl
        .c_node()
        .map(|k| split + k)
        .chain(edges(&s.topology).iter().map(|&(i, j)| split + cl.c_edge().start + (i - 1) * nf + (j - 1)))
        .collect();
    let mut before = vec![0.0; weight_idx.len()];
    let (mut violations, mut max_dec) = (0usize, 0.0f64);

    let steps = s.steps();
    let dt = s.sim.dt;
    let mut rk = Rk4::new(y.len());
    let mut aborted = None;
    let mut taken = 0;
    for k in 0..steps {
        let t = k as f64 * dt;
        let piece = s.spec.piece_at(t + 0.5 * dt);
        for (b, &i) in before.iter_mut().zip(&weight_idx) {
            *b = y[i];
        }
        rk.step(&mut sys, t, dt, piece, &mut y);
        taken = k + 1;
        for (b, &i) in before.iter().zip(&weight_idx) {
            let dec = b - y[i];
            if dec > C_DECREASE_TOL {
                violations += 1;
            }
            max_dec = max_dec.max(dec);
        }
        let t_next = (k + 1) as f64 * dt;
        if y.iter().any(|v| !v.is_finite() || v.abs() > DIVERGENCE_LIMIT) {
            aborted = Some(t_next);
            break;
        }
        if (k + 1) % s.sim.record_stride == 0 || k + 1 == steps {
            record(&mut rec, t_next, &y, &mut xbuf);
        }
    }

    let mut result = SimResult {
        name: s.name.clone(),
        regime: s.regime,
        n,
        q: s.model.q(),
        n_followers: nf,
        dt,
        t_final: s.sim.t_final,
        switch_times: s.spec.switch_times(),
        edges: edges(&s.topology),
        times: rec.times,
        states: rec.states,
        controls: rec.controls,
        poses: rec.poses,
        metrics: rec.metrics,
        steps_taken: taken,
        c_decrease_violations: violations,
        max_c_decrease: max_dec,
        aborted_at: aborted,
        wall_clock: clock.elapsed().as_secs_f64(),
        summary: empty_summary(s),
    };
    result.summary = summarize(&result, DEFAULT_TAIL);
    match aborted {
        Some(t) => Err(SimError::Diverged { t, result: Box::new(result) }),
        None => Ok(result),
    }
}

fn empty_summary(s: &Scenario) -> Summary {
    Summary {
        name: s.name.clone(),
        regime: s.regime,
        samples: 0,
        steps: 0,
        dt: s.sim.dt,
        t_final: s.sim.t_final,
        tail: DEFAULT_TAIL,
        final_errors: vec![],
        final_max_error: f64::NAN,
        windows: vec![],
        tail_max_error: f64::NAN,
        c_decrease_violations: 0,
        max_c_decrease: 0.0,
        delta_c_final: 0.0,
        final_c: vec![],
        final_leader_observer_error: None,
        final_local_observer_error: None,
        aborted_at: None,
        wall_clock: 0.0,
    }
}

enum ClosedLoop<'a> {
    Linear(LinearLoop<'a>),
    Vehicle(VehicleLoop<'a>),
}

impl Dynamics for ClosedLoop<'_> {
    fn dim(&self) -> usize {
        match self {
            ClosedLoop::Linear(l) => l.dim(),
            ClosedLoop::Vehicle(v) => v.dim(),
        }
    }

    fn deriv(&mut self, t: f64, piece: usize, y: &[f64], dy: &mut [f64]) {
        match self {
            ClosedLoop::Linear(l) => l.deriv(t, piece, y, dy),
            ClosedLoop::Vehicle(v) => v.deriv(t, piece, y, dy),
        }
    }
}

/// Integrates the leader alone under its own input.
pub fn integrate_leader(model: &LtiModel, input: &LeaderInput, x0: &[f64], dt: f64, steps: usize, stride: usize) -> Vec<Vec<f64>> {
    let p = model.p();
    let mut u = vec![0.0; p];
    let mut sys = FnDynamics {
        dim: x0.len(),
        f: |t: f64, y: &[f64], dy: &mut [f64]| {
            input.eval_into(t, &mut u);
            let x = nalgebra::DVector::from_column_slice(y);
            let d = &model.a * x + &model.b * nalgebra::DVector::from_column_slice(&u);
            dy.copy_from_slice(d.as_slice());
        },
    };
    let mut rk = Rk4::new(x0.len());
    let mut y = x0.to_vec();
    let mut out = vec![y.clone()];
    for k in 0..steps {
        rk.step(&mut sys, k as f64 * dt, dt, 0, &mut y);
        if (k + 1) % stride == 0 || k + 1 == steps {
            out.push(y.clone());
        }
    }
    out
}

/// `V₂` along a directed-stabilization trajectory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LyapunovReport {
    pub values: Vec<f64>,
    pub alpha: f64,
    /// `5Nλ_max(R) / (2λ₂(RL + LᵀR))`.
    pub alpha_bound: f64,
    pub alpha_meets_bound: bool,
    pub slack: f64,
    /// Consecutive samples where `V₂` grew by more than `slack`.
    pub increases: usize,
    pub increase_fraction: f64,
}

/// Evaluates `V₂ = ½Σ r_i(2c_i+ρ_i)ρ_i + ½Σ r_i(c_i−α)²` on every sample.
/// `alpha` defaults to the bound.
pub fn lyapunov_diagnostic(r: &SimResult, s: &Scenario, alpha: Option<f64>, slack: f64) -> Result<LyapunovReport, SimError> {
    if r.regime != Regime::DirectedStabilization {
        return Err(SimError::RegimeMismatch { expected: Regime::DirectedStabilization, found: r.regime });
    }
    let protocol = s.protocol()?;
    let rv = s.topology.left_null_vector()?;
    let lambda2 = s.topology.lambda2_symmetrized(&rv)?;
    let rmat = DenseMatrix::from_diagonal(&rv);
    let nf = r.n_followers;
    let alpha_bound = 5.0 * nf as f64 * lambda_max_sym(&rmat) / (2.0 * lambda2);
    let alpha = alpha.unwrap_or(alpha_bound);
    let lay = protocol.control_layout();
    let mut ws = protocol.workspace();
    let values: Vec<f64> = (0..r.times.len())
        .map(|k| {
            let t = r.times[k];
            let ctrl = &r.controls[k];
            let rho = protocol.rho_values(t, s.spec.piece_at(t), &r.states[k], ctrl, &mut ws);
            let c = &ctrl[lay.c_node()];
            (0..nf)
                .map(|i| 0.5 * rv[i] * ((2.0 * c[i] + rho[i]) * rho[i] + (c[i] - alpha).powi(2)))
                .sum()
        })
        .collect();
    let increases = values.windows(2).filter(|w| w[1] - w[0] > slack).count();
    let pairs = values.len().saturating_sub(1).max(1);
    Ok(LyapunovReport {
        alpha,
        alpha_bound,
        alpha_meets_bound: alpha >= alpha_bound,
        slack,
        increases,
        increase_fraction: increases as f64 / pairs as f64,
        values,
    })
}
