//! Acceptance gate: one PASS/FAIL line per criterion; exits nonzero if any fails.

use std::time::Instant;

use coherence_cli::{presets, ExperimentConfig};
use coherence_core::graph::{algebraic_connectivity, circulant, laplacian, vicsek_fractal};
use coherence_core::linalg::{
    care_residual, is_hurwitz, is_stabilizable, min_eigenvalue_sym, solve_care, AgentModel,
};
use coherence_core::signals::DisturbanceSignal;
use coherence_core::sim::{simulate, SimConfig, Trajectory};
use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

type Outcome = Result<String, String>;

fn ensure(cond: bool, msg: impl Into<String>) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg.into())
    }
}

fn riccati_reproduction() -> Outcome {
    let start = Instant::now();
    let model = AgentModel::triple_integrator();
    let sol = solve_care(model.a(), model.b()).map_err(|e| e.to_string())?;
    let elapsed = start.elapsed().as_secs_f64();
    let reference =
        DMatrix::from_row_slice(3, 3, &[2.41, 2.41, 1.0, 2.41, 4.82, 2.41, 1.0, 2.41, 2.41]);
    let dev = (&sol.p - reference).amax();
    let residual = care_residual(model.a(), model.b(), &DMatrix::identity(3, 3), &sol.p).norm();
    ensure(
        dev <= 0.01,
        format!("max deviation from the rounded reference P is {dev}"),
    )?;
    ensure(residual <= 1e-8, format!("residual {residual}"))?;
    ensure(elapsed < 1.0, format!("took {elapsed} s"))?;
    Ok(format!(
        "max |P - P_ref| = {dev:.2e}, residual = {residual:.2e}, {elapsed:.3} s"
    ))
}

fn table_one() -> Outcome {
    let mut parts = Vec::new();
    for (g, expected, tol) in [(1, 1.0, 1e-9), (2, 0.0692, 5e-4), (3, 0.0053, 5e-4)] {
        let start = Instant::now();
        let l2 = algebraic_connectivity(&vicsek_fractal(g, false).map_err(|e| e.to_string())?)
            .map_err(|e| e.to_string())?;
        let elapsed = start.elapsed().as_secs_f64();
        ensure(
            (l2 - expected).abs() <= tol,
            format!("g = {g}: lambda_2 = {l2}, expected {expected} ± {tol}"),
        )?;
        ensure(elapsed < 5.0, format!("g = {g} took {elapsed} s"))?;
        parts.push(format!("g={g}: {l2:.4}"));
    }
    Ok(parts.join(", "))
}

/// Runs a preset with the criterion's checks imposed explicitly.
fn preset_coherent(name: &str, d: f64, out: &std::path::Path) -> Outcome {
    let mut cfg: ExperimentConfig = presets::preset(name).ok_or(format!("no preset {name}"))?;
    ensure(
        cfg.protocol.d == Some(d),
        format!("{name}: preset d is {:?}, expected {d}", cfg.protocol.d),
    )?;
    ensure(
        cfg.integration.dt == 1e-3,
        format!("{name}: dt is {}", cfg.integration.dt),
    )?;
    cfg.output.dir = out.to_path_buf();
    cfg.checks.delta_level_bound = Some(2.0 * d);
    cfg.checks.require_gain_convergence = true;
    cfg.checks.tail_fraction = 0.2;
    cfg.checks.gain_tol = 1e-3;
    let start = Instant::now();
    let outcome = coherence_cli::run(&cfg).map_err(|f| format!("{name}: {f}"))?;
    let elapsed = start.elapsed().as_secs_f64();
    let s = &outcome.summary;
    ensure(
        s.delta_level.passed,
        format!(
            "{name}: tail max V_i = {} exceeds {}",
            s.delta_level.max_tail_vi,
            2.0 * d
        ),
    )?;
    let worst = s.gains.iter().map(|g| g.tail_variation).fold(0.0, f64::max);
    ensure(
        s.gains_converged(),
        format!("{name}: rho tail variation {worst}"),
    )?;
    ensure(elapsed < 180.0, format!("{name}: took {elapsed} s"))?;
    Ok(format!(
        "{name} N={} maxV={:.3e} drho={worst:.1e} {elapsed:.1}s",
        s.n_agents, s.delta_level.max_tail_vi
    ))
}

fn presets_coherent(names: &[&str], d: f64) -> Outcome {
    let tmp = tempfile::tempdir().map_err(|e| e.to_string())?;
    let parts = names
        .iter()
        .map(|n| preset_coherent(n, d, tmp.path()))
        .collect::<Result<Vec<_>, _>>()?;
    Ok(parts.join("; "))
}

fn base_sim(name: &str) -> Result<SimConfig, String> {
    let cfg = presets::preset(name).ok_or(format!("no preset {name}"))?;
    Ok(cfg.resolve().map_err(|f| f.to_string())?.sim)
}

fn max_abs_diff(a: &[Vec<f64>], b: &[Vec<f64>]) -> f64 {
    a.iter()
        .flatten()
        .zip(b.iter().flatten())
        .map(|(x, y)| (x - y).abs())
        .fold(0.0, f64::max)
}

fn run(sim: &SimConfig) -> Result<Trajectory, String> {
    simulate(sim).map_err(|e| e.to_string())
}

fn gain_monotone_and_deadzone_exact() -> Outcome {
    let mut sim = base_sim("fig3b")?;
    sim.t_end = 15.0;
    sim.record_every = 1;
    let traj = run(&sim)?;
    let mut frozen = 0usize;
    for k in 1..traj.len() {
        for i in 0..traj.n_agents {
            let (prev, next) = (traj.gains[k - 1][i], traj.gains[k][i]);
            ensure(
                next >= prev - 1e-12,
                format!("rho_{} decreased at t = {}", i + 1, traj.times[k]),
            )?;
            if !traj.deadzone_active[k][i] {
                ensure(
                    next == prev,
                    format!(
                        "rho_{} moved inside the deadzone at t = {}",
                        i + 1,
                        traj.times[k]
                    ),
                )?;
                frozen += 1;
            }
        }
    }
    ensure(frozen > 0, "the deadzone was never entered")?;
    Ok(format!("{frozen} frozen steps"))
}

fn row_sums_zero() -> Outcome {
    let mut graphs = Vec::new();
    for g in 1..=3 {
        graphs.push(vicsek_fractal(g, true).unwrap());
        graphs.push(vicsek_fractal(g, false).unwrap());
    }
    graphs.push(circulant(121, &[1, 2], true).unwrap());
    for g in &graphs {
        let l = laplacian(g);
        for i in 0..g.n_nodes() {
            let sum: f64 = l.entries().row(i).iter().sum();
            ensure(
                sum == 0.0,
                format!("row {i} of an {}-node Laplacian sums to {sum}", g.n_nodes()),
            )?;
        }
    }
    Ok(format!("{} graphs", graphs.len()))
}

fn translation_invariance() -> Outcome {
    let mut base = base_sim("fig3a")?;
    base.t_end = 10.0;
    let mut shifted = base.clone();
    let c = [3.0, -2.0, 0.5];
    for (k, v) in shifted.x0.iter_mut().enumerate() {
        *v += c[k % 3];
    }
    let (a, b) = (run(&base)?, run(&shifted)?);
    let worst = max_abs_diff(&a.zetas, &b.zetas)
        .max(max_abs_diff(&a.gains, &b.gains))
        .max(max_abs_diff(&a.controls, &b.controls));
    ensure(worst <= 1e-8, format!("zeta/rho/u differ by {worst}"))?;
    Ok(format!("{worst:.1e}"))
}

fn permutation_equivariance() -> Outcome {
    let mut base = base_sim("fig3b")?;
    base.t_end = 10.0;
    let agents = base.n_agents();
    let perm: Vec<usize> = (0..agents).map(|i| (i * 7 + 3) % agents).collect();
    let mut relabeled = base.clone();
    relabeled.graph = base.graph.relabel(&perm).map_err(|e| e.to_string())?;
    let mut labels = vec![0; agents];
    let mut x0 = DVector::zeros(agents * 3);
    for i in 0..agents {
        labels[perm[i]] = i + 1;
        for k in 0..3 {
            x0[perm[i] * 3 + k] = base.x0[i * 3 + k];
        }
    }
    relabeled.x0 = x0;
    relabeled.agent_labels = Some(labels);
    let (a, b) = (run(&base)?, run(&relabeled)?);
    let mut worst: f64 = 0.0;
    for k in 0..a.len() {
        for i in 0..agents {
            for (s, t) in a.state(k, i).iter().zip(b.state(k, perm[i])) {
                worst = worst.max((s - t).abs());
            }
            worst = worst.max((a.gains[k][i] - b.gains[k][perm[i]]).abs());
        }
    }
    ensure(
        worst <= 1e-8,
        format!("relabeled trajectories differ by {worst}"),
    )?;
    Ok(format!("{worst:.1e}"))
}

fn synchronized_start_preserved() -> Outcome {
    let mut sim = base_sim("fig7")?;
    sim.disturbance = DisturbanceSignal::Zero;
    sim.t_end = 5.0;
    let x0 = DVector::from_column_slice(&[1.0, -0.5, 0.25]);
    sim.x0 = DVector::from_fn(sim.n_agents() * 3, |k, _| x0[k % 3]);
    let traj = run(&sim)?;
    let a = sim.model.a().clone();
    // A is nilpotent with A³ = 0, so e^{At} = I + At + A²t²/2
    ensure((&a * &a * &a).amax() == 0.0, "model is not nilpotent")?;
    let mut worst: f64 = 0.0;
    for (k, &t) in traj.times.iter().enumerate() {
        let expm = DMatrix::identity(3, 3) + &a * t + &a * &a * (t * t / 2.0);
        let exact = &expm * &x0;
        for i in 0..traj.n_agents {
            for (s, e) in traj.state(k, i).iter().zip(exact.iter()) {
                worst = worst.max((s - e).abs());
            }
            ensure(
                traj.gains[k][i] == sim.rho0[i],
                "gain moved from a synchronized start",
            )?;
        }
    }
    ensure(
        worst <= 1e-8,
        format!("deviation from e^(At) x0 is {worst}"),
    )?;
    Ok(format!("{worst:.1e}"))
}

fn care_invariants() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let mut solved = 0;
    while solved < 50 {
        let n = rng.random_range(1..=6);
        let m = rng.random_range(1..=n);
        let a = DMatrix::from_fn(n, n, |_, _| rng.random_range(-2.0..2.0));
        let b = DMatrix::from_fn(n, m, |_, _| rng.random_range(-1.0..1.0));
        if !is_stabilizable(&a, &b).map_err(|e| e.to_string())? {
            continue;
        }
        let p = solve_care(&a, &b).map_err(|e| format!("n={n}: {e}"))?.p;
        ensure((&p - p.transpose()).amax() <= 1e-10, "P not symmetric")?;
        ensure(
            min_eigenvalue_sym(&p).map_err(|e| e.to_string())? > 0.0,
            "P not positive definite",
        )?;
        let residual = care_residual(&a, &b, &DMatrix::identity(n, n), &p).norm();
        ensure(residual <= 1e-8, format!("residual {residual}"))?;
        ensure(
            is_hurwitz(&(&a - &b * b.transpose() * &p)).map_err(|e| e.to_string())?,
            "closed loop not Hurwitz",
        )?;
        solved += 1;
    }
    let p1 = solve_care(&DMatrix::zeros(1, 1), &DMatrix::identity(1, 1))
        .map_err(|e| e.to_string())?
        .p;
    ensure(
        (p1[(0, 0)] - 1.0).abs() <= 1e-9,
        format!("scalar case gave {}", p1[(0, 0)]),
    )?;
    let a = DMatrix::from_row_slice(2, 2, &[0.0, 1.0, 0.0, 0.0]);
    let b = DMatrix::from_column_slice(2, 1, &[0.0, 1.0]);
    let p2 = solve_care(&a, &b).map_err(|e| e.to_string())?.p;
    let r3 = 3f64.sqrt();
    let dev = (p2 - DMatrix::from_row_slice(2, 2, &[r3, 1.0, 1.0, r3])).amax();
    ensure(dev <= 1e-9, format!("double integrator off by {dev}"))?;
    Ok("50 random systems, analytic cases".into())
}

fn invariant_suite() -> Outcome {
    let parts: [(&str, fn() -> Outcome); 6] = [
        ("rho/deadzone", gain_monotone_and_deadzone_exact),
        ("row sums", row_sums_zero),
        ("translation", translation_invariance),
        ("permutation", permutation_equivariance),
        ("sync", synchronized_start_preserved),
        ("care", care_invariants),
    ];
    let mut notes = Vec::new();
    for (name, f) in parts {
        notes.push(format!(
            "{name}: {}",
            f().map_err(|e| format!("{name}: {e}"))?
        ));
    }
    Ok(notes.join("; "))
}

fn step_halving() -> Outcome {
    let sim = base_sim("fig3a")?;
    // run until the gains have frozen, then integrate a deadzone-free window
    let mut warm = sim.clone();
    warm.t_end = 20.0;
    let start = run(&warm)?.final_state().ok_or("empty warm-up")?;
    let window = |dt: f64| -> Result<Trajectory, String> {
        let mut w = sim.clone();
        w.t0 = start.t;
        w.t_end = 25.0;
        w.x0 = start.x.clone();
        w.rho0 = start.rho.clone();
        w.dt = dt;
        w.record_every = (0.1 / dt).round() as usize;
        run(&w)
    };
    let (coarse, fine, reference) = (window(0.02)?, window(0.01)?, window(0.00125)?);
    for t in [&coarse, &fine, &reference] {
        ensure(
            t.deadzone_active.iter().skip(1).flatten().all(|a| !a),
            "adaptation active inside the window",
        )?;
        ensure(t.len() == reference.len(), "sample grids differ")?;
    }
    let err_coarse = max_abs_diff(&coarse.states, &reference.states);
    let err_fine = max_abs_diff(&fine.states, &reference.states);
    let ratio = err_coarse / err_fine;
    ensure(
        ratio >= 8.0,
        format!("error ratio {ratio} (errors {err_coarse:.2e}, {err_fine:.2e})"),
    )?;
    Ok(format!("dt 0.02 -> 0.01 on t in [20, 25]: errors {err_coarse:.2e} -> {err_fine:.2e}, ratio {ratio:.1}"))
}

fn main() -> std::process::ExitCode {
    let criteria: Vec<(&str, Box<dyn Fn() -> Outcome>)> = vec![
        ("1 Riccati reproduction", Box::new(riccati_reproduction)),
        ("2 Vicsek algebraic connectivity", Box::new(table_one)),
        (
            "3 delta-level coherency, directed Vicsek",
            Box::new(|| presets_coherent(&["fig3a", "fig3b", "fig3c"], 0.5)),
        ),
        (
            "4 graph-family robustness",
            Box::new(|| presets_coherent(&["fig4a", "fig4b", "fig4c", "fig7"], 0.5)),
        ),
        (
            "5 sawtooth disturbance",
            Box::new(|| presets_coherent(&["fig8"], 0.5)),
        ),
        (
            "6 deadzone d = 0.2",
            Box::new(|| presets_coherent(&["fig9"], 0.2)),
        ),
        ("7 invariant suite", Box::new(invariant_suite)),
        ("8 step-halving order", Box::new(step_halving)),
    ];
    let mut failed = Vec::new();
    for (name, check) in &criteria {
        match check() {
            Ok(detail) => println!("PASS criterion {name}: {detail}"),
            Err(why) => {
                println!("FAIL criterion {name}: {why}");
                failed.push(*name);
            }
        }
    }
    if failed.is_empty() {
        println!("acceptance: all {} criteria passed", criteria.len());
        std::process::ExitCode::SUCCESS
    } else {
        println!("acceptance: failed criteria {failed:?}");
        std::process::ExitCode::FAILURE
    }
}
