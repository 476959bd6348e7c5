use coherence_core::graph::{circulant, vicsek_fractal, WeightedDigraph};
use coherence_core::linalg::AgentModel;
use coherence_core::protocol::ProtocolParams;
use coherence_core::signals::DisturbanceSignal;
use coherence_core::sim::{
    simulate, sweep, uniform_initial_states, SimConfig, SimError, SimOverride,
};
use nalgebra::DVector;

fn triple_integrator_config(
    graph: WeightedDigraph,
    disturbance: DisturbanceSignal,
    d: f64,
    t_end: f64,
) -> SimConfig {
    let model = AgentModel::triple_integrator();
    let params = ProtocolParams::design(&model, None, Some(d)).unwrap();
    let agents = graph.n_nodes();
    SimConfig {
        model,
        graph,
        params,
        disturbance,
        x0: uniform_initial_states(agents, 3, 5.0, 1),
        rho0: DVector::zeros(agents),
        t0: 0.0,
        t_end,
        dt: 1e-3,
        record_every: 10,
        agent_labels: None,
    }
}

fn max_abs_diff(a: &[Vec<f64>], b: &[Vec<f64>]) -> f64 {
    a.iter()
        .flatten()
        .zip(b.iter().flatten())
        .map(|(x, y)| (x - y).abs())
        .fold(0.0, f64::max)
}

#[test]
fn synchronized_start_stays_synchronized() {
    let mut cfg = triple_integrator_config(
        circulant(6, &[1, 2], true).unwrap(),
        DisturbanceSignal::Zero,
        0.5,
        5.0,
    );
    let x0 = [1.0, -0.5, 0.25];
    cfg.x0 = DVector::from_fn(18, |k, _| x0[k % 3]);
    let traj = simulate(&cfg).unwrap();
    for (k, &t) in traj.times.iter().enumerate() {
        // e^{At} x0 for the triple integrator
        let exact = [
            x0[0] + x0[1] * t + x0[2] * t * t / 2.0,
            x0[1] + x0[2] * t,
            x0[2],
        ];
        for i in 0..6 {
            for (s, e) in traj.state(k, i).iter().zip(exact) {
                assert!((s - e).abs() <= 1e-8);
            }
            assert!(traj.zeta(k, i).iter().all(|z| z.abs() <= 1e-12));
            assert_eq!(traj.gains[k][i], 0.0);
        }
    }
}

#[test]
fn common_offset_does_not_change_disagreement() {
    let base = triple_integrator_config(
        vicsek_fractal(1, true).unwrap(),
        DisturbanceSignal::Chirp,
        0.5,
        10.0,
    );
    let mut shifted = base.clone();
    let c = [3.0, -2.0, 0.5];
    for (k, v) in shifted.x0.iter_mut().enumerate() {
        *v += c[k % 3];
    }
    let a = simulate(&base).unwrap();
    let b = simulate(&shifted).unwrap();
    assert!(max_abs_diff(&a.zetas, &b.zetas) <= 1e-8);
    assert!(max_abs_diff(&a.gains, &b.gains) <= 1e-8);
    assert!(max_abs_diff(&a.controls, &b.controls) <= 1e-8);
}

#[test]
fn relabeled_network_gives_relabeled_trajectory() {
    let base = triple_integrator_config(
        vicsek_fractal(2, true).unwrap(),
        DisturbanceSignal::Chirp,
        0.5,
        5.0,
    );
    let agents = base.n_agents();
    // a fixed derangement-like permutation
    let perm: Vec<usize> = (0..agents).map(|i| (i * 7 + 3) % agents).collect();
    let mut relabeled = base.clone();
    relabeled.graph = base.graph.relabel(&perm).unwrap();
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
    let a = simulate(&base).unwrap();
    let b = simulate(&relabeled).unwrap();
    let mut worst: f64 = 0.0;
    for k in 0..a.len() {
        for i in 0..agents {
            for (s, t) in a.state(k, i).iter().zip(b.state(k, perm[i])) {
                worst = worst.max((s - t).abs());
            }
            worst = worst.max((a.gains[k][i] - b.gains[k][perm[i]]).abs());
        }
    }
    assert!(worst <= 1e-8, "worst deviation {worst}");
}

#[test]
fn gains_never_decrease_and_freeze_in_the_deadzone() {
    let cfg = triple_integrator_config(
        vicsek_fractal(2, true).unwrap(),
        DisturbanceSignal::Sawtooth,
        0.5,
        15.0,
    );
    let traj = simulate(&cfg).unwrap();
    let mut frozen_intervals = 0;
    for k in 1..traj.len() {
        for i in 0..traj.n_agents {
            assert!(traj.gains[k][i] >= traj.gains[k - 1][i] - 1e-12);
            if !traj.deadzone_active[k][i] {
                assert!((traj.gains[k][i] - traj.gains[k - 1][i]).abs() <= 1e-12);
                frozen_intervals += 1;
            }
        }
    }
    assert!(frozen_intervals > 0);
}

#[test]
fn undisturbed_network_synchronizes() {
    let cfg = triple_integrator_config(
        vicsek_fractal(1, true).unwrap(),
        DisturbanceSignal::Zero,
        1e-4,
        30.0,
    );
    let traj = simulate(&cfg).unwrap();
    let max_norm = |k: usize| {
        (0..traj.n_agents)
            .map(|i| traj.zeta(k, i).iter().map(|z| z * z).sum::<f64>().sqrt())
            .fold(0.0, f64::max)
    };
    assert!(max_norm(traj.len() - 1) < max_norm(0) / 100.0);
}

#[test]
fn sweep_preserves_order_and_isolates_failures() {
    let base = triple_integrator_config(
        vicsek_fractal(1, true).unwrap(),
        DisturbanceSignal::Chirp,
        0.5,
        2.0,
    );
    let variations: Vec<SimOverride> = (1..=3)
        .map(|gen| {
            let g = vicsek_fractal(gen, true).unwrap();
            let n = g.n_nodes();
            SimOverride {
                graph: Some(g),
                x0: Some(uniform_initial_states(n, 3, 5.0, 1)),
                rho0: Some(DVector::zeros(n)),
                ..Default::default()
            }
        })
        .chain(std::iter::once(SimOverride {
            dt: Some(-1.0),
            ..Default::default()
        }))
        .collect();
    let results = sweep(&base, &variations);
    let sizes: Vec<usize> = results
        .iter()
        .take(3)
        .map(|r| r.as_ref().unwrap().n_agents)
        .collect();
    assert_eq!(sizes, vec![5, 25, 121]);
    assert!(matches!(results[3], Err(SimError::Config(_))));

    let again = sweep(&base, &variations[..1]);
    assert_eq!(again[0].as_ref().unwrap(), results[0].as_ref().unwrap());
}
