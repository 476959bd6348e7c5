//! Config-driven experiment runner: loads a TOML experiment (or a built-in
//! preset), simulates it, and writes a trajectory CSV, a text report, a
//! one-row summary CSV and a metadata sidecar.

// `!(x > 0.0)` style guards are used so that NaN is rejected too.
#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]

pub mod config;
pub mod presets;

use std::fmt::Write as _;
use std::fs;
use std::io::BufWriter;
use std::path::{Path, PathBuf};

use coherence_core::analysis::{check_delta_level, gain_report, settling_time, RunSummary};
use coherence_core::graph::{algebraic_connectivity, vicsek_fractal};
use coherence_core::linalg::min_eigenvalue_sym;
use coherence_core::protocol::CoherenceSpec;
use coherence_core::sim::{simulate_all, AssumptionClause, SimConfig, SimError, Trajectory};
use serde::{Deserialize, Serialize};

pub use config::{ExperimentConfig, OutputFormat, Overrides, ResolvedRun};

pub const VERSION: &str = env!("CARGO_PKG_VERSION");

/// Why a command did not succeed; each maps to one exit status.
#[derive(Debug, Clone, PartialEq)]
pub enum Failure {
    /// A requested check failed (exit 1).
    Checks(Vec<String>),
    /// Schema, validation or I/O problem (exit 2).
    Schema(String),
    /// A standing assumption of the protocol does not hold (exit 3).
    Assumption {
        clause: AssumptionClause,
        detail: String,
    },
    /// The simulated state blew up (exit 4).
    Diverged(String),
}

impl Failure {
    pub fn exit_code(&self) -> u8 {
        match self {
            Self::Checks(_) => 1,
            Self::Schema(_) => 2,
            Self::Assumption { .. } => 3,
            Self::Diverged(_) => 4,
        }
    }
}

impl std::fmt::Display for Failure {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Self::Checks(failed) => write!(f, "checks failed: {}", failed.join("; ")),
            Self::Schema(m) => write!(f, "config error: {m}"),
            Self::Assumption { clause, detail } => {
                write!(f, "assumption violated: {clause} ({detail})")
            }
            Self::Diverged(m) => write!(f, "divergence: {m}"),
        }
    }
}

impl From<SimError> for Failure {
    fn from(e: SimError) -> Self {
        match e {
            SimError::Config(m) => Self::Schema(m),
            SimError::Assumption { clause, detail } => Self::Assumption { clause, detail },
            SimError::Diverged { agent, time, .. } => Self::Diverged(format!(
                "agent {agent} left the bounded region at t = {time}"
            )),
            SimError::Signal(s) => Self::Schema(format!("disturbance: {s}")),
        }
    }
}

fn io_failure(path: &Path, e: impl std::fmt::Display) -> Failure {
    Failure::Schema(format!("{}: {e}", path.display()))
}

/// Loads a config from a file, or a built-in preset when no such file exists.
pub fn load_config(spec: &str) -> Result<ExperimentConfig, Failure> {
    let path = Path::new(spec);
    if path.exists() {
        return ExperimentConfig::load(path);
    }
    presets::preset(spec).ok_or_else(|| {
        Failure::Schema(format!(
            "{spec}: no such file and not a preset (see `list-presets`)"
        ))
    })
}

/// Run status and software details written next to the artifacts.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunInfo {
    pub software: String,
    pub version: String,
    pub seed: u64,
    pub n_agents: usize,
    pub status: String,
}

/// Contents of `metadata.toml`: run details plus the effective config.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Metadata {
    pub run: RunInfo,
    pub config: ExperimentConfig,
}

impl Metadata {
    pub fn parse(text: &str) -> Result<Self, Failure> {
        toml::from_str(text).map_err(|e| Failure::Schema(e.to_string()))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CheckResult {
    pub name: &'static str,
    pub passed: bool,
    pub detail: String,
}

/// Analysis of a completed run.
#[derive(Debug, Clone)]
pub struct RunOutcome {
    pub summary: RunSummary,
    pub checks: Vec<CheckResult>,
    pub dir: PathBuf,
}

impl RunOutcome {
    pub fn passed(&self) -> bool {
        self.checks.iter().all(|c| c.passed)
    }

    fn failure(&self) -> Option<Failure> {
        let failed: Vec<String> = self
            .checks
            .iter()
            .filter(|c| !c.passed)
            .map(|c| format!("{}: {}", c.name, c.detail))
            .collect();
        (!failed.is_empty()).then_some(Failure::Checks(failed))
    }
}

/// Computes the summary and evaluates the checks requested in the config.
pub fn analyse(
    cfg: &ExperimentConfig,
    sim: &SimConfig,
    traj: &Trajectory,
) -> Result<(RunSummary, Vec<CheckResult>), Failure> {
    let spec = *sim.params.spec();
    let c = &cfg.checks;
    let arg = |e: coherence_core::analysis::AnalysisError| Failure::Schema(e.to_string());
    let settle_delta = c.settle_delta.unwrap_or(spec.delta);
    let settling = settling_time(traj, settle_delta).map_err(arg)?;
    let bound = c.delta_level_bound.unwrap_or(spec.delta_bar);
    let delta_level = check_delta_level(traj, &sim.params, bound).map_err(arg)?;
    let gains = gain_report(traj, c.tail_fraction, c.gain_tol).map_err(arg)?;
    let lambda_min =
        min_eigenvalue_sym(sim.params.p()).map_err(|e| Failure::Schema(e.to_string()))?;
    let summary = RunSummary {
        name: cfg.name.clone(),
        n_agents: sim.n_agents(),
        d: spec.d,
        delta: spec.delta,
        delta_bar: spec.delta_bar,
        implied_min_delta: CoherenceSpec::implied_min_delta(spec.d, lambda_min),
        settling,
        delta_level_bound: bound,
        delta_level,
        gains,
    };

    let mut checks = Vec::new();
    if c.delta_level_bound.is_some() {
        checks.push(CheckResult {
            name: "delta_level",
            passed: summary.delta_level.passed,
            detail: format!(
                "tail max V_i = {} against bound {bound}",
                summary.delta_level.max_tail_vi
            ),
        });
    }
    if c.require_settled {
        checks.push(CheckResult {
            name: "settled",
            passed: summary.settling.settled,
            detail: match summary.settling.settle_time {
                Some(t) => format!("|zeta_i| <= {settle_delta} for all t > {t}"),
                None => format!("|zeta_i| still exceeds {settle_delta} at the end of the run"),
            },
        });
    }
    if c.require_gain_convergence {
        let worst = summary
            .gains
            .iter()
            .map(|g| g.tail_variation)
            .fold(0.0, f64::max);
        checks.push(CheckResult {
            name: "gain_convergence",
            passed: summary.gains_converged(),
            detail: format!(
                "largest tail variation of rho_i = {worst} against tolerance {}",
                c.gain_tol
            ),
        });
    }
    Ok((summary, checks))
}

fn report_text(cfg: &ExperimentConfig, summary: &RunSummary, checks: &[CheckResult]) -> String {
    let i = &cfg.integration;
    let mut out = String::new();
    let _ = writeln!(out, "graph: {}", cfg.graph.describe());
    let _ = writeln!(
        out,
        "disturbance: {}",
        toml::to_string(&cfg.disturbance)
            .unwrap_or_default()
            .trim()
            .replace('\n', ", ")
    );
    let _ = writeln!(
        out,
        "integration: dt = {}, t_end = {}, record_every = {}, seed = {}",
        i.dt, i.t_end, i.record_every, i.seed
    );
    out.push_str(&summary.text());
    for c in checks {
        let _ = writeln!(
            out,
            "check {}: {} ({})",
            c.name,
            if c.passed { "pass" } else { "FAIL" },
            c.detail
        );
    }
    out
}

fn metadata_text(cfg: &ExperimentConfig, n_agents: usize, status: &str) -> String {
    let meta = Metadata {
        run: RunInfo {
            software: "coherence".into(),
            version: VERSION.into(),
            seed: cfg.integration.seed,
            n_agents,
            status: status.into(),
        },
        config: cfg.clone(),
    };
    toml::to_string(&meta).expect("metadata serializes")
}

fn write_file(path: &Path, contents: &str) -> Result<(), Failure> {
    fs::write(path, contents).map_err(|e| io_failure(path, e))
}

fn write_trajectory(path: &Path, traj: &Trajectory) -> Result<(), Failure> {
    let file = fs::File::create(path).map_err(|e| io_failure(path, e))?;
    traj.write_csv(BufWriter::new(file))
        .map_err(|e| io_failure(path, e))
}

/// Writes the artifacts of one finished simulation into `dir`.
fn finish_run(
    cfg: &ExperimentConfig,
    sim: &SimConfig,
    result: Result<Trajectory, SimError>,
    dir: &Path,
) -> Result<RunOutcome, Failure> {
    fs::create_dir_all(dir).map_err(|e| io_failure(dir, e))?;
    let formats = &cfg.output.formats;
    let traj = match result {
        Ok(t) => t,
        Err(SimError::Diverged {
            agent,
            time,
            partial,
        }) => {
            if formats.contains(&OutputFormat::Trajectory) {
                write_trajectory(&dir.join("trajectory.csv"), &partial)?;
            }
            write_file(
                &dir.join("metadata.toml"),
                &metadata_text(cfg, sim.n_agents(), "diverged"),
            )?;
            return Err(SimError::Diverged {
                agent,
                time,
                partial,
            }
            .into());
        }
        Err(e) => return Err(e.into()),
    };
    let (summary, checks) = analyse(cfg, sim, &traj)?;
    if formats.contains(&OutputFormat::Trajectory) {
        write_trajectory(&dir.join("trajectory.csv"), &traj)?;
    }
    if formats.contains(&OutputFormat::Report) {
        write_file(
            &dir.join("report.txt"),
            &report_text(cfg, &summary, &checks),
        )?;
    }
    if formats.contains(&OutputFormat::Summary) {
        write_file(
            &dir.join("summary.csv"),
            &format!("{}\n{}\n", RunSummary::CSV_HEADER, summary.csv_row()),
        )?;
    }
    write_file(
        &dir.join("metadata.toml"),
        &metadata_text(cfg, sim.n_agents(), "completed"),
    )?;
    Ok(RunOutcome {
        summary,
        checks,
        dir: dir.to_path_buf(),
    })
}

/// Resolves a config and checks every assumption without simulating.
pub fn check(cfg: &ExperimentConfig) -> Result<Vec<ResolvedRun>, Failure> {
    let mut configs = vec![cfg.clone()];
    configs.extend(cfg.sweep_members());
    configs
        .iter()
        .map(|c| {
            let run = c.resolve()?;
            run.sim.validate()?;
            Ok(run)
        })
        .collect()
}

/// Runs a single experiment into `<output.dir>/<name>/`.
///
/// Returns the outcome even when a requested check fails; use
/// [`outcome_status`] to turn it into an exit status.
pub fn run(cfg: &ExperimentConfig) -> Result<RunOutcome, Failure> {
    let resolved = cfg.resolve()?;
    resolved.sim.validate()?;
    let dir = cfg.output.dir.join(&cfg.name);
    let result = simulate_all(std::slice::from_ref(&resolved.sim))
        .pop()
        .expect("one run");
    finish_run(cfg, &resolved.sim, result, &dir)
}

pub fn outcome_status(outcome: &RunOutcome) -> Result<(), Failure> {
    outcome.failure().map_or(Ok(()), Err)
}

/// Results of a sweep, one entry per member in file order.
#[derive(Debug)]
pub struct SweepOutcome {
    pub dir: PathBuf,
    pub members: Vec<(String, Result<RunOutcome, Failure>)>,
}

impl SweepOutcome {
    /// The most severe member failure, if any.
    pub fn status(&self) -> Result<(), Failure> {
        let mut worst: Option<Failure> = None;
        for (name, m) in &self.members {
            let f = match m {
                Ok(o) => o.failure(),
                Err(f) => Some(f.clone()),
            };
            if let Some(f) = f {
                let f = match f {
                    Failure::Checks(v) => {
                        Failure::Checks(v.into_iter().map(|c| format!("{name}: {c}")).collect())
                    }
                    other => other,
                };
                if worst.as_ref().is_none_or(|w| f.exit_code() > w.exit_code()) {
                    worst = Some(f);
                }
            }
        }
        worst.map_or(Ok(()), Err)
    }
}

/// Runs every `[[sweep]]` member concurrently into `<output.dir>/<name>/<member>/`
/// and aggregates one summary row per completed member.
pub fn sweep(cfg: &ExperimentConfig) -> Result<SweepOutcome, Failure> {
    let members = cfg.sweep_members();
    if members.is_empty() {
        return Err(Failure::Schema(
            "sweep: the config has no [[sweep]] entries".into(),
        ));
    }
    for (k, m) in members.iter().enumerate() {
        if members[..k].iter().any(|o| o.name == m.name) {
            return Err(Failure::Schema(format!(
                "sweep.name: duplicate member name '{}'",
                m.name
            )));
        }
    }
    let root = cfg.output.dir.join(&cfg.name);
    let mut prepared: Vec<Result<ResolvedRun, Failure>> = members
        .iter()
        .map(|m| {
            let r = m.resolve()?;
            r.sim.validate()?;
            Ok(r)
        })
        .collect();
    let runnable: Vec<SimConfig> = prepared
        .iter()
        .filter_map(|p| p.as_ref().ok().map(|r| r.sim.clone()))
        .collect();
    let mut results = simulate_all(&runnable).into_iter();

    let mut out = Vec::with_capacity(members.len());
    let mut rows = vec![RunSummary::CSV_HEADER.to_string()];
    for (member, prep) in members.iter().zip(prepared.drain(..)) {
        let outcome = prep.and_then(|r| {
            let result = results.next().expect("one result per runnable member");
            finish_run(member, &r.sim, result, &root.join(&member.name))
        });
        if let Ok(o) = &outcome {
            rows.push(o.summary.csv_row());
        }
        out.push((member.name.clone(), outcome));
    }
    fs::create_dir_all(&root).map_err(|e| io_failure(&root, e))?;
    write_file(&root.join("summary.csv"), &(rows.join("\n") + "\n"))?;
    Ok(SweepOutcome {
        dir: root,
        members: out,
    })
}

/// `(generation, nodes, Re λ₂)` for the undirected Vicsek graphs of generations 1 to 3.
pub fn table1() -> Vec<(u32, usize, f64)> {
    (1..=3)
        .map(|g| {
            let graph = vicsek_fractal(g, false).expect("valid generation");
            let l2 = algebraic_connectivity(&graph).expect("connected graph");
            (g, graph.n_nodes(), l2)
        })
        .collect()
}

pub fn format_table1(rows: &[(u32, usize, f64)]) -> String {
    let mut out = String::from("  N  g  Re(lambda_2)\n");
    for (g, n, l2) in rows {
        let _ = writeln!(out, "{n:>3}  {g}  {l2:.4}");
    }
    out
}
