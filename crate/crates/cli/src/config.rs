//! Experiment configuration: the TOML schema and its resolution into a
//! [`SimConfig`].

use std::fs;
use std::path::{Path, PathBuf};

use coherence_core::graph::{circulant, parse_edge_list, vicsek_fractal, WeightedDigraph};
use coherence_core::linalg::{AgentModel, LinalgError};
use coherence_core::protocol::{ProtocolError, ProtocolParams};
use coherence_core::signals::{DisturbanceSignal, TableSignal};
use coherence_core::sim::{uniform_initial_states, AssumptionClause, SimConfig};
use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::Failure;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub name: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub description: Option<String>,
    pub model: ModelSpec,
    pub graph: GraphSpec,
    pub protocol: ProtocolSpec,
    pub disturbance: DisturbanceSpec,
    pub integration: IntegrationSpec,
    #[serde(default)]
    pub output: OutputSpec,
    #[serde(default)]
    pub checks: ChecksSpec,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub sweep: Vec<SweepEntry>,
}

/// Either a named model or inline matrices given as lists of rows.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelSpec {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub preset: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub a: Option<Vec<Vec<f64>>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub b: Option<Vec<Vec<f64>>>,
    /// Defaults to `b`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub e: Option<Vec<Vec<f64>>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum GraphSpec {
    Vicsek {
        generation: u32,
        directed: bool,
    },
    Circulant {
        nodes: usize,
        #[serde(default = "default_offsets")]
        offsets: Vec<usize>,
        directed: bool,
    },
    /// Text edge list: a `nodes N` header then `from to [weight]` lines, 1-based.
    EdgeList {
        path: PathBuf,
    },
}

fn default_offsets() -> Vec<usize> {
    vec![1, 2]
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProtocolSpec {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub delta: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub d: Option<f64>,
    #[serde(default)]
    pub rho0: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum DisturbanceSpec {
    Zero,
    /// `0.1 sin(0.1 i t + 0.01 t²)`
    Chirp,
    /// `0.01 i t − round(0.01 i t)`
    Sawtooth,
    /// CSV with header `t,w1,..,wN`, linearly interpolated.
    Table {
        path: PathBuf,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct IntegrationSpec {
    #[serde(default = "default_dt")]
    pub dt: f64,
    pub t_end: f64,
    #[serde(default = "default_record_every")]
    pub record_every: usize,
    #[serde(default = "default_seed")]
    pub seed: u64,
    /// Random initial states are uniform in `[-w, w]`.
    #[serde(default = "default_half_width")]
    pub initial_half_width: f64,
    /// Explicit initial states, one row per agent; overrides the seeded draw.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub x0: Option<Vec<Vec<f64>>>,
}

fn default_dt() -> f64 {
    1e-3
}
fn default_record_every() -> usize {
    10
}
fn default_seed() -> u64 {
    1
}
fn default_half_width() -> f64 {
    5.0
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum OutputFormat {
    Trajectory,
    Report,
    Summary,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputSpec {
    #[serde(default = "default_out_dir")]
    pub dir: PathBuf,
    #[serde(default = "all_formats")]
    pub formats: Vec<OutputFormat>,
}

fn default_out_dir() -> PathBuf {
    PathBuf::from("out")
}
fn all_formats() -> Vec<OutputFormat> {
    vec![
        OutputFormat::Trajectory,
        OutputFormat::Report,
        OutputFormat::Summary,
    ]
}

impl Default for OutputSpec {
    fn default() -> Self {
        Self {
            dir: default_out_dir(),
            formats: all_formats(),
        }
    }
}

/// Pass/fail checks. Only the ones requested here affect the exit status.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ChecksSpec {
    /// Upper bound on `ζᵢᵀPζᵢ` over the tail window.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub delta_level_bound: Option<f64>,
    #[serde(default)]
    pub require_settled: bool,
    /// Coherency level for the settling check; defaults to the protocol's `δ`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub settle_delta: Option<f64>,
    #[serde(default)]
    pub require_gain_convergence: bool,
    #[serde(default = "default_tail_fraction")]
    pub tail_fraction: f64,
    #[serde(default = "default_gain_tol")]
    pub gain_tol: f64,
}

fn default_tail_fraction() -> f64 {
    coherence_core::analysis::DEFAULT_TAIL_FRACTION
}
fn default_gain_tol() -> f64 {
    coherence_core::analysis::DEFAULT_GAIN_TOL
}

impl Default for ChecksSpec {
    fn default() -> Self {
        Self {
            delta_level_bound: None,
            require_settled: false,
            settle_delta: None,
            require_gain_convergence: false,
            tail_fraction: default_tail_fraction(),
            gain_tol: default_gain_tol(),
        }
    }
}

/// One sweep member: a name plus whole sections replacing the base ones.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepEntry {
    pub name: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub graph: Option<GraphSpec>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub protocol: Option<ProtocolSpec>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub disturbance: Option<DisturbanceSpec>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub integration: Option<IntegrationSpec>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub checks: Option<ChecksSpec>,
}

/// Command-line overrides applied on top of a loaded config.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub out: Option<PathBuf>,
    pub seed: Option<u64>,
    pub dt: Option<f64>,
    pub t_end: Option<f64>,
}

/// Everything needed to run and analyse one experiment.
#[derive(Debug, Clone)]
pub struct ResolvedRun {
    pub config: ExperimentConfig,
    pub sim: SimConfig,
}

fn schema(field: &str, msg: impl std::fmt::Display) -> Failure {
    Failure::Schema(format!("{field}: {msg}"))
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self, Failure> {
        toml::from_str(text).map_err(|e| Failure::Schema(e.to_string().trim_end().to_string()))
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    /// Reads a config file; relative data paths become relative to its directory.
    pub fn load(path: &Path) -> Result<Self, Failure> {
        let text = fs::read_to_string(path)
            .map_err(|e| Failure::Schema(format!("{}: {e}", path.display())))?;
        let mut cfg = Self::from_toml(&text).map_err(|f| match f {
            Failure::Schema(m) => Failure::Schema(format!("{}: {m}", path.display())),
            other => other,
        })?;
        let base = path.parent().unwrap_or(Path::new(""));
        cfg.rebase_paths(base);
        Ok(cfg)
    }

    fn rebase_paths(&mut self, base: &Path) {
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        let mut graphs: Vec<&mut GraphSpec> = vec![&mut self.graph];
        let mut signals: Vec<&mut DisturbanceSpec> = vec![&mut self.disturbance];
        for entry in &mut self.sweep {
            graphs.extend(entry.graph.as_mut());
            signals.extend(entry.disturbance.as_mut());
        }
        for g in graphs {
            if let GraphSpec::EdgeList { path } = g {
                fix(path);
            }
        }
        for s in signals {
            if let DisturbanceSpec::Table { path } = s {
                fix(path);
            }
        }
    }

    pub fn apply(&mut self, o: &Overrides) {
        if let Some(dir) = &o.out {
            self.output.dir = dir.clone();
        }
        let mut integrations: Vec<&mut IntegrationSpec> = vec![&mut self.integration];
        integrations.extend(self.sweep.iter_mut().filter_map(|e| e.integration.as_mut()));
        for integ in integrations {
            if let Some(seed) = o.seed {
                integ.seed = seed;
            }
            if let Some(dt) = o.dt {
                integ.dt = dt;
            }
            if let Some(t) = o.t_end {
                integ.t_end = t;
            }
        }
    }

    /// The sweep members as standalone configs, in file order.
    pub fn sweep_members(&self) -> Vec<ExperimentConfig> {
        self.sweep
            .iter()
            .map(|entry| {
                let mut cfg = self.clone();
                cfg.sweep.clear();
                cfg.name = entry.name.clone();
                if let Some(g) = &entry.graph {
                    cfg.graph = g.clone();
                }
                if let Some(p) = &entry.protocol {
                    cfg.protocol = p.clone();
                }
                if let Some(d) = &entry.disturbance {
                    cfg.disturbance = d.clone();
                }
                if let Some(i) = &entry.integration {
                    cfg.integration = i.clone();
                }
                if let Some(c) = &entry.checks {
                    cfg.checks = c.clone();
                }
                cfg
            })
            .collect()
    }

    /// Builds the model, graph, protocol and initial state, validating along the way.
    pub fn resolve(&self) -> Result<ResolvedRun, Failure> {
        if self.name.is_empty() || self.name.contains(['/', '\\']) {
            return Err(schema(
                "name",
                "must be a nonempty name without path separators",
            ));
        }
        let model = self.model.build()?;
        let graph = self.graph.build()?;
        let params = self.protocol.build(&model)?;
        let disturbance = self.disturbance.build()?;
        let agents = graph.n_nodes();
        let n = model.state_dim();
        let integ = &self.integration;
        for (field, v) in [
            ("integration.dt", integ.dt),
            ("integration.t_end", integ.t_end),
        ] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(schema(field, format!("must be positive, got {v}")));
            }
        }
        if integ.record_every == 0 {
            return Err(schema("integration.record_every", "must be at least 1"));
        }
        if !(integ.initial_half_width >= 0.0 && integ.initial_half_width.is_finite()) {
            return Err(schema(
                "integration.initial_half_width",
                "must be finite and nonnegative",
            ));
        }
        let x0 = match &integ.x0 {
            Some(rows) => {
                if rows.len() != agents || rows.iter().any(|r| r.len() != n) {
                    return Err(schema(
                        "integration.x0",
                        format!("expected {agents} rows of length {n}"),
                    ));
                }
                DVector::from_iterator(agents * n, rows.iter().flatten().copied())
            }
            None => uniform_initial_states(agents, n, integ.initial_half_width, integ.seed),
        };
        let rho0 = self.protocol.rho0;
        if !(rho0 >= 0.0 && rho0.is_finite()) {
            return Err(schema(
                "protocol.rho0",
                format!("must be finite and nonnegative, got {rho0}"),
            ));
        }
        let c = &self.checks;
        if !(c.tail_fraction > 0.0 && c.tail_fraction <= 1.0) {
            return Err(schema("checks.tail_fraction", "must lie in (0, 1]"));
        }
        if !(c.gain_tol > 0.0) {
            return Err(schema("checks.gain_tol", "must be positive"));
        }
        for (field, v) in [
            ("checks.delta_level_bound", c.delta_level_bound),
            ("checks.settle_delta", c.settle_delta),
        ] {
            if let Some(v) = v {
                if !(v > 0.0 && v.is_finite()) {
                    return Err(schema(field, format!("must be positive, got {v}")));
                }
            }
        }
        if self.output.formats.is_empty() {
            return Err(schema("output.formats", "must list at least one format"));
        }
        let sim = SimConfig {
            model,
            graph,
            params,
            disturbance,
            x0,
            rho0: DVector::from_element(agents, rho0),
            t0: 0.0,
            t_end: integ.t_end,
            dt: integ.dt,
            record_every: integ.record_every,
            agent_labels: None,
        };
        Ok(ResolvedRun {
            config: self.clone(),
            sim,
        })
    }
}

fn matrix(field: &str, rows: &[Vec<f64>]) -> Result<DMatrix<f64>, Failure> {
    let r = rows.len();
    let c = rows.first().map_or(0, Vec::len);
    if r == 0 || c == 0 || rows.iter().any(|row| row.len() != c) {
        return Err(schema(
            field,
            "must be a nonempty list of equal-length rows",
        ));
    }
    if rows.iter().flatten().any(|v| !v.is_finite()) {
        return Err(schema(field, "has non-finite entries"));
    }
    Ok(DMatrix::from_row_iterator(
        r,
        c,
        rows.iter().flatten().copied(),
    ))
}

fn linalg_failure(field: &str, e: LinalgError) -> Failure {
    match e {
        LinalgError::NotStabilizable { .. } => Failure::Assumption {
            clause: AssumptionClause::Stabilizable,
            detail: e.to_string(),
        },
        LinalgError::NotInputAdditive { .. } => Failure::Assumption {
            clause: AssumptionClause::InputAdditiveDisturbance,
            detail: e.to_string(),
        },
        other => schema(field, other),
    }
}

impl ModelSpec {
    pub fn build(&self) -> Result<AgentModel, Failure> {
        match (&self.preset, &self.a, &self.b) {
            (Some(name), None, None) if self.e.is_none() => match name.as_str() {
                "triple-integrator" => Ok(AgentModel::triple_integrator()),
                other => Err(schema(
                    "model.preset",
                    format!("unknown model '{other}' (known: triple-integrator)"),
                )),
            },
            (None, Some(a), Some(b)) => {
                let a = matrix("model.a", a)?;
                let b = matrix("model.b", b)?;
                let e = match &self.e {
                    Some(e) => matrix("model.e", e)?,
                    None => b.clone(),
                };
                AgentModel::new(a, b, e).map_err(|e| linalg_failure("model", e))
            }
            _ => Err(schema(
                "model",
                "give either `preset` alone or inline `a` and `b` (and optionally `e`)",
            )),
        }
    }
}

impl GraphSpec {
    pub fn build(&self) -> Result<WeightedDigraph, Failure> {
        match self {
            Self::Vicsek {
                generation,
                directed,
            } => vicsek_fractal(*generation, *directed).map_err(|e| schema("graph.generation", e)),
            Self::Circulant {
                nodes,
                offsets,
                directed,
            } => circulant(*nodes, offsets, *directed).map_err(|e| schema("graph", e)),
            Self::EdgeList { path } => {
                let text = fs::read_to_string(path)
                    .map_err(|e| schema("graph.path", format!("{}: {e}", path.display())))?;
                parse_edge_list(&text)
                    .map_err(|e| schema("graph.path", format!("{}: {e}", path.display())))
            }
        }
    }

    pub fn describe(&self) -> String {
        match self {
            Self::Vicsek {
                generation,
                directed,
            } => {
                format!(
                    "{} Vicsek fractal, generation {generation}",
                    if *directed { "directed" } else { "undirected" }
                )
            }
            Self::Circulant {
                nodes,
                offsets,
                directed,
            } => format!(
                "{} circulant, {nodes} nodes, offsets {offsets:?}",
                if *directed { "directed" } else { "undirected" }
            ),
            Self::EdgeList { path } => format!("edge list {}", path.display()),
        }
    }
}

impl ProtocolSpec {
    pub fn build(&self, model: &AgentModel) -> Result<ProtocolParams, Failure> {
        for (field, v) in [("protocol.delta", self.delta), ("protocol.d", self.d)] {
            if let Some(v) = v {
                if !(v > 0.0 && v.is_finite()) {
                    return Err(schema(field, format!("must be positive, got {v}")));
                }
            }
        }
        ProtocolParams::design(model, self.delta, self.d).map_err(|e| match e {
            ProtocolError::DeadzoneOutOfRange { .. } => schema("protocol.d", e),
            ProtocolError::Linalg(l) => linalg_failure("model", l),
            ProtocolError::Argument(m) => schema("protocol", m),
        })
    }
}

impl DisturbanceSpec {
    pub fn build(&self) -> Result<DisturbanceSignal, Failure> {
        Ok(match self {
            Self::Zero => DisturbanceSignal::Zero,
            Self::Chirp => DisturbanceSignal::Chirp,
            Self::Sawtooth => DisturbanceSignal::Sawtooth,
            Self::Table { path } => {
                let file = fs::File::open(path)
                    .map_err(|e| schema("disturbance.path", format!("{}: {e}", path.display())))?;
                DisturbanceSignal::Table(
                    TableSignal::from_csv(file).map_err(|e| {
                        schema("disturbance.path", format!("{}: {e}", path.display()))
                    })?,
                )
            }
        })
    }
}
