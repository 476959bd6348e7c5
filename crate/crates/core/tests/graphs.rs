use coherence_core::graph::{
    algebraic_connectivity, circulant, from_edge_list, has_directed_spanning_tree, laplacian,
    spanning_tree_root, vicsek_fractal, WeightedDigraph,
};
use nalgebra::DMatrix;
use proptest::prelude::*;

/// Brute-force reachability: a root exists iff some node reaches all others.
fn brute_force_spanning_tree(g: &WeightedDigraph) -> bool {
    let n = g.n_nodes();
    // transitive closure by repeated relaxation
    let mut reach = vec![vec![false; n]; n];
    for (from, to, _) in g.edges() {
        reach[from][to] = true;
    }
    for (i, row) in reach.iter_mut().enumerate() {
        row[i] = true;
    }
    for k in 0..n {
        for i in 0..n {
            for j in 0..n {
                if reach[i][k] && reach[k][j] {
                    reach[i][j] = true;
                }
            }
        }
    }
    reach.iter().any(|row| row.iter().all(|&r| r))
}

#[test]
fn table_one_connectivities() {
    let expected = [
        (1, 5, 1.0, 1e-9),
        (2, 25, 0.0692, 5e-4),
        (3, 121, 0.0053, 5e-4),
    ];
    for (gen, n, lambda2, tol) in expected {
        let g = vicsek_fractal(gen, false).unwrap();
        assert_eq!(g.n_nodes(), n);
        let l2 = algebraic_connectivity(&g).unwrap();
        assert!((l2 - lambda2).abs() <= tol, "g={gen}: {l2}");
    }
}

#[test]
fn directed_vicsek_rooted_at_center() {
    for gen in 1..=3 {
        let g = vicsek_fractal(gen, true).unwrap();
        assert!(brute_force_spanning_tree(&g));
        assert_eq!(spanning_tree_root(&g), Some(0));
    }
}

#[test]
fn directed_three_cycle_connectivity() {
    // eigenvalues 1 - exp(2πik/3): 0 and 1.5 ± 0.866i
    let oracle: f64 = (0..3)
        .map(|k| 1.0 - (2.0 * std::f64::consts::PI * k as f64 / 3.0).cos())
        .filter(|re| *re > 1e-12)
        .fold(f64::INFINITY, f64::min);
    assert!((oracle - 1.5).abs() < 1e-12);
    let g = circulant(3, &[1], true).unwrap();
    assert!((algebraic_connectivity(&g).unwrap() - oracle).abs() < 1e-10);
}

#[test]
fn single_offset_circulants_are_rooted() {
    for n in 2..=40 {
        let g = circulant(n, &[1], true).unwrap();
        assert!(brute_force_spanning_tree(&g));
        assert!(has_directed_spanning_tree(&g));
    }
}

#[test]
fn generated_laplacians_have_exact_zero_row_sums() {
    let graphs = [
        vicsek_fractal(1, true).unwrap(),
        vicsek_fractal(2, false).unwrap(),
        vicsek_fractal(3, true).unwrap(),
        vicsek_fractal(3, false).unwrap(),
        circulant(121, &[1, 2], true).unwrap(),
        circulant(10, &[1, 3, 4], false).unwrap(),
    ];
    for g in &graphs {
        let l = laplacian(g);
        for i in 0..g.n_nodes() {
            let sum: f64 = l.entries().row(i).iter().sum();
            assert_eq!(sum, 0.0);
        }
    }
}

#[test]
fn rooted_graphs_have_a_simple_zero_eigenvalue() {
    let graphs = [
        vicsek_fractal(2, true).unwrap(),
        vicsek_fractal(2, false).unwrap(),
        circulant(30, &[1, 2], true).unwrap(),
        from_edge_list(4, &[(1, 2, 1.0), (2, 3, 2.0), (2, 4, 0.5), (4, 1, 1.0)]).unwrap(),
    ];
    for g in &graphs {
        assert!(has_directed_spanning_tree(g));
        let eig = laplacian(g).eigenvalues().unwrap();
        let zeros = eig.iter().filter(|(re, im)| re.hypot(*im) < 1e-8).count();
        assert_eq!(zeros, 1);
        assert!(eig.iter().skip(1).all(|(re, _)| *re > 0.0));
    }
}

fn arb_graph() -> impl Strategy<Value = WeightedDigraph> {
    (2usize..8).prop_flat_map(|n| {
        prop::collection::vec(prop_oneof![Just(0.0), 0.1f64..3.0], n * n).prop_map(move |w| {
            let m = DMatrix::from_fn(n, n, |i, j| if i == j { 0.0 } else { w[i * n + j] });
            WeightedDigraph::from_weights(m).unwrap()
        })
    })
}

proptest! {
    #[test]
    fn relabeling_permutes_laplacian(g in arb_graph(), seed in any::<u64>()) {
        let n = g.n_nodes();
        let mut perm: Vec<usize> = (0..n).collect();
        // Fisher-Yates with a tiny LCG so the permutation is driven by the seed
        let mut s = seed;
        for i in (1..n).rev() {
            s = s.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
            perm.swap(i, (s >> 33) as usize % (i + 1));
        }
        let relabeled = g.relabel(&perm).unwrap();
        let mut pi = DMatrix::<f64>::zeros(n, n);
        for (i, &p) in perm.iter().enumerate() {
            pi[(p, i)] = 1.0;
        }
        let expected = &pi * laplacian(&g).entries() * pi.transpose();
        // diagonal sums may be accumulated in a different order
        prop_assert!((laplacian(&relabeled).entries() - expected).amax() <= 1e-12);
        prop_assert_eq!(has_directed_spanning_tree(&relabeled), has_directed_spanning_tree(&g));
    }

    #[test]
    fn spanning_tree_matches_brute_force(g in arb_graph()) {
        prop_assert_eq!(has_directed_spanning_tree(&g), brute_force_spanning_tree(&g));
        let l = laplacian(&g);
        for i in 0..g.n_nodes() {
            let row_sum: f64 = l.entries().row(i).iter().sum();
            prop_assert!(row_sum.abs() <= 1e-12);
        }
    }
}
