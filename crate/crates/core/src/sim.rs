//! Fixed-step simulation of the closed-loop network.
//!
//! Every agent runs `ẋᵢ = A xᵢ + B uᵢ + E wᵢ(t)` with the adaptive deadzone
//! protocol. The stacked system `(x, ρ)` is integrated with the classical
//! fourth-order Runge–Kutta scheme; the deadzone switch is re-evaluated at
//! every stage, without event location.

use std::fmt;
use std::io::Write;

use nalgebra::DVector;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use thiserror::Error;

use crate::graph::{has_directed_spanning_tree, laplacian, WeightedDigraph};
use crate::linalg::{image_containment, is_stabilizable, AgentModel, LinalgError};
use crate::protocol::{control_into, quad_form, zeta_into, ProtocolParams};
use crate::signals::{DisturbanceSignal, SignalError};

/// Entries beyond this magnitude are treated as divergence.
pub const DIVERGENCE_LIMIT: f64 = 1e12;

/// The standing assumptions under which the protocol is guaranteed to work.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AssumptionClause {
    Stabilizable,
    InputAdditiveDisturbance,
    BoundedDisturbance,
    SpanningTree,
}

impl fmt::Display for AssumptionClause {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::Stabilizable => "(A, B) must be stabilizable",
            Self::InputAdditiveDisturbance => {
                "the disturbance must be input-additive (im E ⊂ im B)"
            }
            Self::BoundedDisturbance => "the disturbances must be bounded",
            Self::SpanningTree => "the communication graph must contain a directed spanning tree",
        })
    }
}

#[derive(Debug, Error)]
pub enum SimError {
    #[error("invalid simulation config: {0}")]
    Config(String),
    #[error("assumption violated: {clause}: {detail}")]
    Assumption {
        clause: AssumptionClause,
        detail: String,
    },
    #[error("state diverged at t = {time}: agent {agent} has a non-finite or huge entry")]
    Diverged {
        /// 1-based agent index
        agent: usize,
        time: f64,
        partial: Box<Trajectory>,
    },
    #[error(transparent)]
    Signal(#[from] SignalError),
}

/// Stacked agent states and adaptive gains at time `t`.
#[derive(Debug, Clone, PartialEq)]
pub struct NetworkState {
    pub t: f64,
    pub x: DVector<f64>,
    pub rho: DVector<f64>,
}

/// Time derivative of a [`NetworkState`].
#[derive(Debug, Clone, PartialEq)]
pub struct Derivative {
    pub x: DVector<f64>,
    pub rho: DVector<f64>,
}

#[derive(Debug, Clone)]
pub struct SimConfig {
    pub model: AgentModel,
    pub graph: WeightedDigraph,
    pub params: ProtocolParams,
    pub disturbance: DisturbanceSignal,
    pub x0: DVector<f64>,
    pub rho0: DVector<f64>,
    pub t0: f64,
    pub t_end: f64,
    pub dt: f64,
    pub record_every: usize,
    /// 1-based index passed to the disturbance for each agent; `None` means `i + 1`.
    pub agent_labels: Option<Vec<usize>>,
}

impl SimConfig {
    pub fn n_agents(&self) -> usize {
        self.graph.n_nodes()
    }

    pub fn n_steps(&self) -> usize {
        ((self.t_end - self.t0) / self.dt).round() as usize
    }

    fn label(&self, agent: usize) -> usize {
        self.agent_labels.as_ref().map_or(agent + 1, |l| l[agent])
    }

    /// Structural checks plus the standing assumptions.
    pub fn validate(&self) -> Result<(), SimError> {
        let n = self.model.state_dim();
        let agents = self.n_agents();
        let cfg = |m: String| Err(SimError::Config(m));
        if !(self.dt > 0.0 && self.dt.is_finite()) {
            return cfg(format!("dt = {} must be positive", self.dt));
        }
        if !(self.t_end - self.t0 >= self.dt) {
            return cfg(format!(
                "horizon [{}, {}] is shorter than dt = {}",
                self.t0, self.t_end, self.dt
            ));
        }
        if self.record_every == 0 {
            return cfg("record_every must be >= 1".into());
        }
        if self.params.state_dim() != n || self.params.input_dim() != self.model.input_dim() {
            return cfg("protocol parameters do not match the agent model".into());
        }
        if self.x0.len() != agents * n {
            return cfg(format!(
                "x0 has length {}, expected {agents}·{n}",
                self.x0.len()
            ));
        }
        if self.x0.iter().any(|v| !v.is_finite()) {
            return cfg("x0 has non-finite entries".into());
        }
        if self.rho0.len() != agents {
            return cfg(format!(
                "rho0 has length {}, expected {agents}",
                self.rho0.len()
            ));
        }
        if self.rho0.iter().any(|&r| !(r >= 0.0 && r.is_finite())) {
            return cfg("rho0 entries must be finite and nonnegative".into());
        }
        if let Some(labels) = &self.agent_labels {
            if labels.len() != agents || labels.contains(&0) {
                return cfg("agent_labels must hold one 1-based label per agent".into());
            }
        }

        let a = self.model.a();
        let b = self.model.b();
        match is_stabilizable(a, b) {
            Ok(true) => {}
            Ok(false) => {
                return Err(SimError::Assumption {
                    clause: AssumptionClause::Stabilizable,
                    detail: "PBH rank test failed".into(),
                })
            }
            Err(e) => return Err(assumption(AssumptionClause::Stabilizable, e)),
        }
        image_containment(self.model.e(), b)
            .map_err(|e| assumption(AssumptionClause::InputAdditiveDisturbance, e))?;
        if !self.disturbance.bound().is_finite() {
            return Err(SimError::Assumption {
                clause: AssumptionClause::BoundedDisturbance,
                detail: "signal bound is not finite".into(),
            });
        }
        if let DisturbanceSignal::Table(table) = &self.disturbance {
            let (start, end) = table.time_range();
            let max_label = (0..agents).map(|i| self.label(i)).max().unwrap_or(0);
            if start > self.t0 || end < self.t_end || table.agents() < max_label {
                return cfg(format!(
                    "disturbance table covers [{start}, {end}] for {} agents, needs [{}, {}] for {max_label}",
                    table.agents(),
                    self.t0,
                    self.t_end
                ));
            }
        }
        if !has_directed_spanning_tree(&self.graph) {
            return Err(SimError::Assumption {
                clause: AssumptionClause::SpanningTree,
                detail: format!("no node of the {agents}-node graph reaches every other node"),
            });
        }
        Ok(())
    }
}

fn assumption(clause: AssumptionClause, e: LinalgError) -> SimError {
    SimError::Assumption {
        clause,
        detail: e.to_string(),
    }
}

/// Time-sampled record of a run. Per-sample vectors are stacked by agent.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub n_agents: usize,
    pub state_dim: usize,
    pub input_dim: usize,
    pub dt: f64,
    pub record_every: usize,
    pub times: Vec<f64>,
    /// `N·n` per sample.
    pub states: Vec<Vec<f64>>,
    /// `N` per sample.
    pub gains: Vec<Vec<f64>>,
    /// `N·n` per sample.
    pub zetas: Vec<Vec<f64>>,
    /// `N·m` per sample.
    pub controls: Vec<Vec<f64>>,
    /// `ζᵢᵀPζᵢ`, `N` per sample.
    pub vi_values: Vec<Vec<f64>>,
    /// Scalar disturbance per agent at the sample time.
    pub disturbances: Vec<Vec<f64>>,
    /// Whether agent `i` was adapting at any integrator stage since the previous sample.
    pub deadzone_active: Vec<Vec<bool>>,
}

impl Trajectory {
    fn empty(cfg: &SimConfig) -> Self {
        Self {
            n_agents: cfg.n_agents(),
            state_dim: cfg.model.state_dim(),
            input_dim: cfg.model.input_dim(),
            dt: cfg.dt,
            record_every: cfg.record_every,
            times: Vec::new(),
            states: Vec::new(),
            gains: Vec::new(),
            zetas: Vec::new(),
            controls: Vec::new(),
            vi_values: Vec::new(),
            disturbances: Vec::new(),
            deadzone_active: Vec::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    pub fn sampling_interval(&self) -> f64 {
        self.dt * self.record_every as f64
    }

    pub fn state(&self, sample: usize, agent: usize) -> &[f64] {
        let n = self.state_dim;
        &self.states[sample][agent * n..(agent + 1) * n]
    }

    pub fn zeta(&self, sample: usize, agent: usize) -> &[f64] {
        let n = self.state_dim;
        &self.zetas[sample][agent * n..(agent + 1) * n]
    }

    pub fn control(&self, sample: usize, agent: usize) -> &[f64] {
        let m = self.input_dim;
        &self.controls[sample][agent * m..(agent + 1) * m]
    }

    pub fn final_state(&self) -> Option<NetworkState> {
        let k = self.len().checked_sub(1)?;
        Some(NetworkState {
            t: self.times[k],
            x: DVector::from_column_slice(&self.states[k]),
            rho: DVector::from_column_slice(&self.gains[k]),
        })
    }

    /// One row per (sample, agent): `t,agent,x_1..x_n,rho,u_1..u_m,zeta_norm,V_i`.
    pub fn write_csv<W: Write>(&self, out: W) -> csv::Result<()> {
        let mut w = csv::Writer::from_writer(out);
        let mut header = vec!["t".to_string(), "agent".to_string()];
        header.extend((1..=self.state_dim).map(|k| format!("x_{k}")));
        header.push("rho".into());
        header.extend((1..=self.input_dim).map(|k| format!("u_{k}")));
        header.push("zeta_norm".into());
        header.push("V_i".into());
        w.write_record(&header)?;
        let mut row: Vec<String> = Vec::with_capacity(header.len());
        for k in 0..self.len() {
            for i in 0..self.n_agents {
                row.clear();
                row.push(self.times[k].to_string());
                row.push((i + 1).to_string());
                row.extend(self.state(k, i).iter().map(f64::to_string));
                row.push(self.gains[k][i].to_string());
                row.extend(self.control(k, i).iter().map(f64::to_string));
                row.push(norm(self.zeta(k, i)).to_string());
                row.push(self.vi_values[k][i].to_string());
                w.write_record(&row)?;
            }
        }
        w.flush()?;
        Ok(())
    }
}

pub(crate) fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

/// Precomputed closed-loop evaluator with scratch space.
struct ClosedLoop<'a> {
    cfg: &'a SimConfig,
    rows: Vec<Vec<(usize, f64)>>,
    n: usize,
    m: usize,
    zeta: Vec<f64>,
    u: Vec<f64>,
}

impl<'a> ClosedLoop<'a> {
    fn new(cfg: &'a SimConfig) -> Self {
        let agents = cfg.n_agents();
        let n = cfg.model.state_dim();
        let m = cfg.model.input_dim();
        Self {
            cfg,
            rows: laplacian(&cfg.graph).sparse_rows(),
            n,
            m,
            zeta: vec![0.0; agents * n],
            u: vec![0.0; m],
        }
    }

    /// Writes `(ẋ, ρ̇)` and ORs the deadzone switch of each agent into `active`.
    fn eval(
        &mut self,
        t: f64,
        x: &[f64],
        rho: &[f64],
        dx: &mut [f64],
        drho: &mut [f64],
        active: &mut [bool],
    ) -> Result<(), SignalError> {
        let (n, m) = (self.n, self.m);
        let cfg = self.cfg;
        let params = &cfg.params;
        let (a, b, e) = (cfg.model.a(), cfg.model.b(), cfg.model.e());
        let d = params.spec().d;
        zeta_into(&self.rows, x, n, &mut self.zeta);
        for i in 0..cfg.n_agents() {
            let zi = &self.zeta[i * n..(i + 1) * n];
            let xi = &x[i * n..(i + 1) * n];
            if params.quadratic(zi) >= d {
                drho[i] = quad_form(params.pbbtp(), zi).max(0.0);
                active[i] = true;
            } else {
                drho[i] = 0.0;
            }
            control_into(rho[i], zi, params, &mut self.u);
            let w = cfg.disturbance.evaluate(cfg.label(i), t)?;
            let dxi = &mut dx[i * n..(i + 1) * n];
            for r in 0..n {
                let mut acc = 0.0;
                for c in 0..n {
                    acc += a[(r, c)] * xi[c];
                }
                for c in 0..m {
                    acc += b[(r, c)] * self.u[c];
                }
                for c in 0..e.ncols() {
                    acc += e[(r, c)] * w;
                }
                dxi[r] = acc;
            }
        }
        Ok(())
    }

    fn record(
        &mut self,
        traj: &mut Trajectory,
        t: f64,
        x: &[f64],
        rho: &[f64],
        active: Vec<bool>,
    ) -> Result<(), SignalError> {
        let (n, m) = (self.n, self.m);
        let cfg = self.cfg;
        let agents = cfg.n_agents();
        zeta_into(&self.rows, x, n, &mut self.zeta);
        let mut controls = vec![0.0; agents * m];
        let mut vis = Vec::with_capacity(agents);
        let mut ws = Vec::with_capacity(agents);
        for i in 0..agents {
            let zi = &self.zeta[i * n..(i + 1) * n];
            control_into(rho[i], zi, &cfg.params, &mut controls[i * m..(i + 1) * m]);
            vis.push(cfg.params.quadratic(zi));
            ws.push(cfg.disturbance.evaluate(cfg.label(i), t)?);
        }
        traj.times.push(t);
        traj.states.push(x.to_vec());
        traj.gains.push(rho.to_vec());
        traj.zetas.push(self.zeta.clone());
        traj.controls.push(controls);
        traj.vi_values.push(vis);
        traj.disturbances.push(ws);
        traj.deadzone_active.push(active);
        Ok(())
    }
}

/// Closed-loop right-hand side at a single state.
pub fn rhs(state: &NetworkState, cfg: &SimConfig) -> Result<Derivative, SimError> {
    let agents = cfg.n_agents();
    let n = cfg.model.state_dim();
    if state.x.len() != agents * n || state.rho.len() != agents {
        return Err(SimError::Config(
            "state dimensions do not match the config".into(),
        ));
    }
    if let Some(pos) = state.x.iter().position(|v| !v.is_finite()) {
        return Err(SimError::Diverged {
            agent: pos / n + 1,
            time: state.t,
            partial: Box::new(Trajectory::empty(cfg)),
        });
    }
    let mut lp = ClosedLoop::new(cfg);
    let mut dx = DVector::zeros(agents * n);
    let mut drho = DVector::zeros(agents);
    let mut active = vec![false; agents];
    lp.eval(
        state.t,
        state.x.as_slice(),
        state.rho.as_slice(),
        dx.as_mut_slice(),
        drho.as_mut_slice(),
        &mut active,
    )?;
    Ok(Derivative { x: dx, rho: drho })
}

/// Runs the closed loop from `t0` to `t_end` with RK4 and records every `record_every` steps.
pub fn simulate(cfg: &SimConfig) -> Result<Trajectory, SimError> {
    cfg.validate()?;
    let agents = cfg.n_agents();
    let n = cfg.model.state_dim();
    let dim = agents * n;
    let steps = cfg.n_steps();
    let h = cfg.dt;

    let mut lp = ClosedLoop::new(cfg);
    let mut traj = Trajectory::empty(cfg);
    let mut x = cfg.x0.as_slice().to_vec();
    let mut rho = cfg.rho0.as_slice().to_vec();
    lp.record(&mut traj, cfg.t0, &x, &rho, vec![false; agents])?;

    let mut kx = [
        vec![0.0; dim],
        vec![0.0; dim],
        vec![0.0; dim],
        vec![0.0; dim],
    ];
    let mut kr = [
        vec![0.0; agents],
        vec![0.0; agents],
        vec![0.0; agents],
        vec![0.0; agents],
    ];
    let mut xs = vec![0.0; dim];
    let mut rs = vec![0.0; agents];
    let mut active = vec![false; agents];

    for step in 0..steps {
        let t = cfg.t0 + step as f64 * h;
        {
            let [k1x, k2x, k3x, k4x] = &mut kx;
            let [k1r, k2r, k3r, k4r] = &mut kr;
            lp.eval(t, &x, &rho, k1x, k1r, &mut active)?;
            axpy(&mut xs, &x, 0.5 * h, k1x);
            axpy(&mut rs, &rho, 0.5 * h, k1r);
            lp.eval(t + 0.5 * h, &xs, &rs, k2x, k2r, &mut active)?;
            axpy(&mut xs, &x, 0.5 * h, k2x);
            axpy(&mut rs, &rho, 0.5 * h, k2r);
            lp.eval(t + 0.5 * h, &xs, &rs, k3x, k3r, &mut active)?;
            axpy(&mut xs, &x, h, k3x);
            axpy(&mut rs, &rho, h, k3r);
            lp.eval(t + h, &xs, &rs, k4x, k4r, &mut active)?;
        }
        rk4_combine(&mut x, h, &kx);
        rk4_combine(&mut rho, h, &kr);
        for r in rho.iter_mut() {
            *r = r.max(0.0);
        }
        let t_next = cfg.t0 + (step + 1) as f64 * h;

        if let Some(pos) = x
            .iter()
            .position(|v| !v.is_finite() || v.abs() > DIVERGENCE_LIMIT)
        {
            return Err(SimError::Diverged {
                agent: pos / n + 1,
                time: t_next,
                partial: Box::new(traj),
            });
        }
        if let Some(pos) = rho.iter().position(|v| !v.is_finite()) {
            return Err(SimError::Diverged {
                agent: pos + 1,
                time: t_next,
                partial: Box::new(traj),
            });
        }
        if (step + 1) % cfg.record_every == 0 || step + 1 == steps {
            let flags = std::mem::replace(&mut active, vec![false; agents]);
            lp.record(&mut traj, t_next, &x, &rho, flags)?;
        }
    }
    Ok(traj)
}

fn axpy(out: &mut [f64], base: &[f64], scale: f64, dir: &[f64]) {
    for ((o, b), d) in out.iter_mut().zip(base).zip(dir) {
        *o = b + scale * d;
    }
}

fn rk4_combine(y: &mut [f64], h: f64, k: &[Vec<f64>; 4]) {
    for (j, yj) in y.iter_mut().enumerate() {
        *yj += h / 6.0 * (k[0][j] + 2.0 * k[1][j] + 2.0 * k[2][j] + k[3][j]);
    }
}

/// Initial states drawn uniformly from `[-half_width, half_width]` with a seeded ChaCha8 stream.
pub fn uniform_initial_states(
    agents: usize,
    state_dim: usize,
    half_width: f64,
    seed: u64,
) -> DVector<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    DVector::from_fn(agents * state_dim, |_, _| {
        rng.random_range(-half_width..=half_width)
    })
}

/// Replacement fields for one member of a sweep.
#[derive(Debug, Clone, Default)]
pub struct SimOverride {
    pub graph: Option<WeightedDigraph>,
    pub params: Option<ProtocolParams>,
    pub disturbance: Option<DisturbanceSignal>,
    pub x0: Option<DVector<f64>>,
    pub rho0: Option<DVector<f64>>,
    pub t_end: Option<f64>,
    pub dt: Option<f64>,
    pub record_every: Option<usize>,
    pub agent_labels: Option<Option<Vec<usize>>>,
}

impl SimOverride {
    pub fn apply(&self, base: &SimConfig) -> SimConfig {
        let mut cfg = base.clone();
        if let Some(g) = &self.graph {
            cfg.graph = g.clone();
        }
        if let Some(p) = &self.params {
            cfg.params = p.clone();
        }
        if let Some(d) = &self.disturbance {
            cfg.disturbance = d.clone();
        }
        if let Some(x0) = &self.x0 {
            cfg.x0 = x0.clone();
        }
        if let Some(r) = &self.rho0 {
            cfg.rho0 = r.clone();
        }
        if let Some(t) = self.t_end {
            cfg.t_end = t;
        }
        if let Some(dt) = self.dt {
            cfg.dt = dt;
        }
        if let Some(k) = self.record_every {
            cfg.record_every = k;
        }
        if let Some(l) = &self.agent_labels {
            cfg.agent_labels = l.clone();
        }
        cfg
    }
}

/// Independent runs, one per override, returned in input order.
pub fn sweep(base: &SimConfig, variations: &[SimOverride]) -> Vec<Result<Trajectory, SimError>> {
    variations
        .par_iter()
        .map(|v| simulate(&v.apply(base)))
        .collect()
}

/// Runs fully formed configs concurrently, preserving order.
pub fn simulate_all(configs: &[SimConfig]) -> Vec<Result<Trajectory, SimError>> {
    configs.par_iter().map(simulate).collect()
}
