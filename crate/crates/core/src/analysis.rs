//! Post-run checks: coherency levels, settling time, gain convergence and
//! the ellipsoid bound on `ζᵢᵀPζᵢ`.
//!
//! All checks run on recorded samples; the sampling interval is reported with
//! each result since the underlying properties are stated in continuous time.

use std::fmt::Write as _;

use thiserror::Error;

use crate::protocol::ProtocolParams;
use crate::sim::{norm, Trajectory};

#[derive(Debug, Error, PartialEq)]
pub enum AnalysisError {
    #[error("invalid argument: {0}")]
    Argument(String),
}

pub const DEFAULT_TAIL_FRACTION: f64 = 0.2;
pub const DEFAULT_GAIN_TOL: f64 = 1e-3;

/// `levels[i][k] = ‖ζᵢ(t_k)‖`.
pub fn coherence_levels(traj: &Trajectory) -> Vec<Vec<f64>> {
    (0..traj.n_agents)
        .map(|i| (0..traj.len()).map(|k| norm(traj.zeta(k, i))).collect())
        .collect()
}

/// Index of the first sample inside the trailing `fraction` of the recorded horizon.
pub fn tail_start(traj: &Trajectory, fraction: f64) -> usize {
    if traj.is_empty() {
        return 0;
    }
    let first = traj.times[0];
    let last = *traj.times.last().unwrap();
    let cutoff = last - fraction * (last - first);
    // a little slack so that a sample sitting exactly on the cutoff is kept
    let slack = 1e-9 * (last - first).abs().max(1.0);
    traj.times.partition_point(|&t| t < cutoff - slack)
}

#[derive(Debug, Clone, PartialEq)]
pub struct SettlingReport {
    pub settled: bool,
    /// Earliest sample time after which every agent stays within `delta`.
    pub settle_time: Option<f64>,
    /// 1-based agent with the largest coherency level in the tail window.
    pub worst_agent: usize,
    pub tail_max_zeta_norm: f64,
    pub tail_max_vi: f64,
    pub sampling_interval: f64,
}

pub fn settling_time(traj: &Trajectory, delta: f64) -> Result<SettlingReport, AnalysisError> {
    if !(delta > 0.0) {
        return Err(AnalysisError::Argument(format!(
            "delta = {delta} must be positive"
        )));
    }
    if traj.is_empty() {
        return Err(AnalysisError::Argument("empty trajectory".into()));
    }
    let levels = coherence_levels(traj);
    let violates = |k: usize| levels.iter().any(|series| series[k] > delta);
    let last_violation = (0..traj.len()).rev().find(|&k| violates(k));
    let settle_time = match last_violation {
        None => Some(traj.times[0]),
        Some(k) if k + 1 < traj.len() => Some(traj.times[k]),
        Some(_) => None,
    };

    let start = tail_start(traj, DEFAULT_TAIL_FRACTION);
    let mut worst_agent = 1;
    let mut tail_max_zeta_norm = 0.0;
    let mut tail_max_vi: f64 = 0.0;
    for (i, series) in levels.iter().enumerate() {
        for k in start..traj.len() {
            if series[k] > tail_max_zeta_norm {
                tail_max_zeta_norm = series[k];
                worst_agent = i + 1;
            }
            tail_max_vi = tail_max_vi.max(traj.vi_values[k][i]);
        }
    }
    Ok(SettlingReport {
        settled: settle_time.is_some(),
        settle_time,
        worst_agent,
        tail_max_zeta_norm,
        tail_max_vi,
        sampling_interval: traj.sampling_interval(),
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GainStatus {
    pub final_rho: f64,
    /// Change of `ρᵢ` across the tail window.
    pub tail_variation: f64,
    pub converged: bool,
}

pub fn gain_report(
    traj: &Trajectory,
    tail_fraction: f64,
    tol: f64,
) -> Result<Vec<GainStatus>, AnalysisError> {
    if !(tail_fraction > 0.0 && tail_fraction < 1.0) {
        return Err(AnalysisError::Argument(format!(
            "tail fraction {tail_fraction} must lie in (0, 1)"
        )));
    }
    if !(tol > 0.0) {
        return Err(AnalysisError::Argument(format!(
            "tolerance {tol} must be positive"
        )));
    }
    if traj.is_empty() {
        return Err(AnalysisError::Argument("empty trajectory".into()));
    }
    let start = tail_start(traj, tail_fraction);
    let last = traj.len() - 1;
    Ok((0..traj.n_agents)
        .map(|i| {
            let (lo, hi) =
                (start..=last).fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), k| {
                    let r = traj.gains[k][i];
                    (lo.min(r), hi.max(r))
                });
            let tail_variation = hi - lo;
            GainStatus {
                final_rho: traj.gains[last][i],
                tail_variation,
                converged: tail_variation < tol,
            }
        })
        .collect())
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DeltaLevelCheck {
    pub passed: bool,
    pub max_tail_vi: f64,
}

/// Whether `ζᵢᵀPζᵢ ≤ bound` for every agent over the final 20% of samples.
pub fn check_delta_level(
    traj: &Trajectory,
    params: &ProtocolParams,
    bound: f64,
) -> Result<DeltaLevelCheck, AnalysisError> {
    if !(bound > 0.0) {
        return Err(AnalysisError::Argument(format!(
            "bound {bound} must be positive"
        )));
    }
    if params.state_dim() != traj.state_dim {
        return Err(AnalysisError::Argument(
            "protocol parameters do not match the trajectory".into(),
        ));
    }
    let start = tail_start(traj, DEFAULT_TAIL_FRACTION);
    let mut max_tail_vi: f64 = 0.0;
    for k in start..traj.len() {
        for i in 0..traj.n_agents {
            max_tail_vi = max_tail_vi.max(params.quadratic(traj.zeta(k, i)));
        }
    }
    Ok(DeltaLevelCheck {
        passed: max_tail_vi <= bound,
        max_tail_vi,
    })
}

/// Summary of one run, written as text and as a CSV row.
#[derive(Debug, Clone, PartialEq)]
pub struct RunSummary {
    pub name: String,
    pub n_agents: usize,
    pub d: f64,
    pub delta: f64,
    pub delta_bar: f64,
    pub implied_min_delta: f64,
    pub settling: SettlingReport,
    pub delta_level_bound: f64,
    pub delta_level: DeltaLevelCheck,
    pub gains: Vec<GainStatus>,
}

impl RunSummary {
    pub fn gains_converged(&self) -> bool {
        self.gains.iter().all(|g| g.converged)
    }

    pub fn max_final_rho(&self) -> f64 {
        self.gains.iter().map(|g| g.final_rho).fold(0.0, f64::max)
    }

    pub const CSV_HEADER: &'static str = "name,n_agents,d,delta,delta_bar,implied_min_delta,settled,settle_time,worst_agent,tail_max_zeta_norm,tail_max_vi,sampling_interval,delta_level_bound,delta_level_passed,max_tail_vi,gains_converged,max_final_rho";

    pub fn csv_row(&self) -> String {
        let s = &self.settling;
        format!(
            "{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{}",
            self.name,
            self.n_agents,
            self.d,
            self.delta,
            self.delta_bar,
            self.implied_min_delta,
            s.settled,
            s.settle_time.map_or(String::new(), |t| t.to_string()),
            s.worst_agent,
            s.tail_max_zeta_norm,
            s.tail_max_vi,
            s.sampling_interval,
            self.delta_level_bound,
            self.delta_level.passed,
            self.delta_level.max_tail_vi,
            self.gains_converged(),
            self.max_final_rho(),
        )
    }

    pub fn text(&self) -> String {
        let s = &self.settling;
        let mut out = String::new();
        let _ = writeln!(out, "run: {}", self.name);
        let _ = writeln!(out, "agents: {}", self.n_agents);
        let _ = writeln!(out, "deadzone d: {}", self.d);
        let _ = writeln!(
            out,
            "coherency target delta: {} (delta_bar = {})",
            self.delta, self.delta_bar
        );
        let _ = writeln!(
            out,
            "smallest delta compatible with d: {}",
            self.implied_min_delta
        );
        match s.settle_time {
            Some(t) => {
                let _ = writeln!(
                    out,
                    "settled within delta: yes, T = {t} s (sampled every {} s)",
                    s.sampling_interval
                );
            }
            None => {
                let _ = writeln!(
                    out,
                    "settled within delta: no (sampled every {} s)",
                    s.sampling_interval
                );
            }
        }
        let _ = writeln!(
            out,
            "tail max |zeta_i|: {} (agent {})",
            s.tail_max_zeta_norm, s.worst_agent
        );
        let _ = writeln!(
            out,
            "tail max V_i: {} against bound {} -> {}",
            self.delta_level.max_tail_vi,
            self.delta_level_bound,
            if self.delta_level.passed {
                "pass"
            } else {
                "FAIL"
            }
        );
        let unconverged: Vec<usize> = self
            .gains
            .iter()
            .enumerate()
            .filter(|(_, g)| !g.converged)
            .map(|(i, _)| i + 1)
            .collect();
        let _ = writeln!(
            out,
            "gains converged: {} (max final rho = {})",
            if unconverged.is_empty() {
                "all".to_string()
            } else {
                format!("no, agents {unconverged:?}")
            },
            self.max_final_rho()
        );
        out
    }
}
