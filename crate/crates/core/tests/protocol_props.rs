use coherence_core::graph::{laplacian, vicsek_fractal};
use coherence_core::linalg::{min_eigenvalue_sym, AgentModel};
use coherence_core::protocol::{control, rho_dot, zeta, ProtocolParams};
use nalgebra::DVector;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn triple_integrator_params(d: f64) -> ProtocolParams {
    ProtocolParams::design(&AgentModel::triple_integrator(), None, Some(d)).unwrap()
}

#[test]
fn adaptation_rate_is_squared_feedback_norm() {
    let model = AgentModel::triple_integrator();
    let params = triple_integrator_params(1e-6);
    let btp = model.b().transpose() * params.p();
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for _ in 0..1000 {
        let z = DVector::from_fn(3, |_, _| rng.random_range(-3.0..3.0));
        if params.quadratic(z.as_slice()) < params.spec().d {
            continue;
        }
        let v = &btp * &z;
        let explicit = v.dot(&v);
        assert!((rho_dot(z.as_slice(), &params) - explicit).abs() <= 1e-10 * explicit.max(1.0));
    }
}

#[test]
fn ellipsoid_level_implies_norm_bound() {
    let params = triple_integrator_params(0.5);
    let spec = *params.spec();
    let lmin = min_eigenvalue_sym(params.p()).unwrap();
    assert!((spec.delta_bar - spec.delta * spec.delta * lmin).abs() < 1e-12);
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    for _ in 0..5000 {
        let dir = DVector::from_fn(3, |_, _| rng.random_range(-1.0..1.0));
        let level = params.quadratic(dir.as_slice());
        // scale onto the boundary ζᵀPζ = δ̄
        let z = &dir * (spec.delta_bar / level).sqrt();
        assert!(z.norm() <= spec.delta * (1.0 + 1e-12));
    }
}

#[test]
fn zeta_commutes_with_relabeling() {
    let g = vicsek_fractal(2, true).unwrap();
    let n = 3;
    let agents = g.n_nodes();
    let mut rng = ChaCha8Rng::seed_from_u64(13);
    let mut perm: Vec<usize> = (0..agents).collect();
    for i in (1..agents).rev() {
        perm.swap(i, rng.random_range(0..=i));
    }
    let x = DVector::from_fn(agents * n, |_, _| rng.random_range(-5.0..5.0));
    let mut px = DVector::zeros(agents * n);
    for i in 0..agents {
        for k in 0..n {
            px[perm[i] * n + k] = x[i * n + k];
        }
    }
    let z = zeta(&laplacian(&g), &x, n).unwrap();
    let pz = zeta(&laplacian(&g.relabel(&perm).unwrap()), &px, n).unwrap();
    for i in 0..agents {
        for k in 0..n {
            assert!((pz[perm[i] * n + k] - z[i * n + k]).abs() < 1e-12);
        }
    }
}

proptest! {
    #[test]
    fn adaptation_rate_is_nonnegative(z in prop::array::uniform3(-10.0f64..10.0), d in 0.01f64..2.0) {
        let params = triple_integrator_params(d);
        prop_assert!(rho_dot(&z, &params) >= 0.0);
    }

    #[test]
    fn control_is_linear_and_vanishes_at_agreement(z in prop::array::uniform3(-10.0f64..10.0), rho in 0.0f64..100.0) {
        let params = triple_integrator_params(0.5);
        prop_assert_eq!(control(rho, &[0.0; 3], &params)[0], 0.0);
        let u1 = control(rho, &z, &params)[0];
        let u2 = control(2.0 * rho, &z, &params)[0];
        prop_assert!((u2 - 2.0 * u1).abs() <= 1e-12 * u2.abs().max(1.0));
    }
}
