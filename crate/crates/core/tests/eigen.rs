mod common;

use common::{jacobi_eigen, Lcg};
use laplora::datasets::{generate, GraphKind, SyntheticSpec};
use laplora::eigen::{partial_eigen, EigenBasis, EigenOptions};
use laplora::graph::normalized_laplacian;
use laplora::{Error, GraphDataset, Matrix};
use proptest::prelude::*;

fn graph(kind: GraphKind, n: usize) -> GraphDataset {
    generate(&SyntheticSpec::new(kind, n)).unwrap()
}

fn sbm(n: usize, seed: u64) -> GraphDataset {
    generate(
        &SyntheticSpec::new(
            GraphKind::Sbm {
                block_sizes: vec![],
                p_in: 0.3,
                p_out: 0.02,
            },
            n,
        )
        .with_seed(seed),
    )
    .unwrap()
}

fn random_graph(n: usize, p: f64, seed: u64) -> GraphDataset {
    let mut rng = Lcg(seed);
    let mut edges = Vec::new();
    for i in 0..n {
        for j in i + 1..n {
            if rng.next_f64() < p {
                edges.push((i, j));
            }
        }
    }
    GraphDataset::new(
        "random",
        n,
        1,
        &edges,
        Matrix::zeros(n, 1),
        vec![0; n],
        vec![false; n],
        vec![false; n],
        vec![false; n],
    )
    .unwrap()
}

/// Checks eigenvalues against the dense oracle, orthonormality and residuals.
fn check_against_oracle(g: &GraphDataset, k: usize) -> EigenBasis {
    let l = normalized_laplacian(g);
    let basis = partial_eigen(&l, k, &EigenOptions::default()).unwrap();
    let (oracle, _) = jacobi_eigen(&l.to_dense());
    for i in 0..k {
        assert!(
            (basis.eigenvalues[i] - oracle[i]).abs() <= 1e-8,
            "{}: λ{i} = {} vs oracle {}",
            g.name,
            basis.eigenvalues[i],
            oracle[i]
        );
    }
    assert!(basis.eigenvalues.windows(2).all(|w| w[0] <= w[1]));
    assert!(basis.orthonormality_error() <= 1e-8);
    for (i, r) in basis.residuals(&l).unwrap().into_iter().enumerate() {
        assert!(r <= 1e-8 * basis.eigenvalues[i].max(1.0), "residual {r:e}");
    }
    basis
}

#[test]
fn path_of_three_has_spectrum_0_1_2() {
    let b = check_against_oracle(&graph(GraphKind::Path, 3), 3);
    for (got, want) in b.eigenvalues.iter().zip([0.0, 1.0, 2.0]) {
        assert!((got - want).abs() < 1e-8);
    }
}

#[test]
fn small_complete_graphs() {
    let b = check_against_oracle(&graph(GraphKind::Complete, 2), 2);
    assert!((b.eigenvalues[1] - 2.0).abs() < 1e-8);
    let b = check_against_oracle(&graph(GraphKind::Complete, 3), 3);
    assert!((b.eigenvalues[1] - 1.5).abs() < 1e-8);
    assert!((b.eigenvalues[2] - 1.5).abs() < 1e-8);
}

#[test]
fn cycle_of_fifty() {
    check_against_oracle(&graph(GraphKind::Cycle, 50), 8);
}

#[test]
fn constant_mode_of_connected_graph() {
    let g = sbm(40, 3);
    assert_eq!(g.components().iter().max(), Some(&0), "fixture must be connected");
    let l = normalized_laplacian(&g);
    let b = partial_eigen(&l, 1, &EigenOptions::default()).unwrap();
    assert!(b.eigenvalues[0].abs() <= 1e-8);

    let sqrt_deg: Vec<f64> = g.degrees().iter().map(|&d| (d as f64).sqrt()).collect();
    let norm = sqrt_deg.iter().map(|x| x * x).sum::<f64>().sqrt();
    let overlap: f64 = (0..g.n_nodes)
        .map(|i| b.eigenvectors.get(i, 0) * sqrt_deg[i] / norm)
        .sum();
    assert!((overlap.abs() - 1.0).abs() < 1e-8);

    // D^{1/2}·1 itself is a null vector of L.
    let residual = l.matvec(&sqrt_deg).unwrap();
    assert!(residual.iter().all(|r| r.abs() <= 1e-10));
}

#[test]
fn degenerate_block_matches_as_a_subspace() {
    // Two components give a two-dimensional null space, K3 a repeated 1.5.
    for (g, block) in [
        (graph(GraphKind::TwoCliques, 20), 0..2),
        (graph(GraphKind::Complete, 3), 1..3),
    ] {
        let l = normalized_laplacian(&g);
        let k = block.end;
        let b = partial_eigen(&l, k, &EigenOptions::default()).unwrap();
        let (_, vectors) = jacobi_eigen(&l.to_dense());
        let n = g.n_nodes;
        let mut worst: f64 = 0.0;
        for r in 0..n {
            for c in 0..n {
                let ours: f64 = block.clone().map(|i| b.eigenvectors.get(r, i) * b.eigenvectors.get(c, i)).sum();
                let oracle: f64 = block.clone().map(|i| vectors[i][r] * vectors[i][c]).sum();
                worst = worst.max((ours - oracle).abs());
            }
        }
        assert!(worst < 1e-8, "{}: projector gap {worst:e}", g.name);
    }
}

#[test]
fn acceptance_graphs_match_oracle() {
    for g in [
        graph(GraphKind::Path, 50),
        graph(GraphKind::Cycle, 50),
        graph(GraphKind::Complete, 3),
        graph(GraphKind::TwoCliques, 20),
        sbm(60, 7),
    ] {
        let k = 8.min(g.n_nodes);
        check_against_oracle(&g, k);
    }
}

#[test]
fn k_larger_than_n_is_a_parameter_error() {
    let l = normalized_laplacian(&graph(GraphKind::Path, 3));
    assert!(matches!(
        partial_eigen(&l, 4, &EigenOptions::default()),
        Err(Error::Parameter(_))
    ));
}

#[test]
fn exhausted_budget_reports_worst_residual() {
    let l = normalized_laplacian(&graph(GraphKind::Path, 150));
    let opts = EigenOptions {
        tol: 1e-14,
        max_iter: Some(1),
        seed: 0,
    };
    match partial_eigen(&l, 20, &opts) {
        Err(Error::Convergence { worst_residual, .. }) => assert!(worst_residual > 0.0),
        other => panic!("expected convergence error, got {other:?}"),
    }
}

#[test]
fn same_seed_same_bits() {
    let l = normalized_laplacian(&sbm(60, 7));
    let a = partial_eigen(&l, 8, &EigenOptions::default()).unwrap();
    let b = partial_eigen(&l, 8, &EigenOptions::default()).unwrap();
    assert_eq!(a.to_bytes(), b.to_bytes());
}

#[test]
fn cache_round_trip_and_failures() {
    let g = graph(GraphKind::Cycle, 12);
    let basis = partial_eigen(&normalized_laplacian(&g), 4, &EigenOptions::default())
        .unwrap()
        .with_graph_hash(0xfeed);
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("basis.bin");
    basis.save(&path).unwrap();
    assert_eq!(EigenBasis::load(&path, 0xfeed).unwrap(), basis);

    assert!(matches!(
        EigenBasis::load(&path, 0xbeef),
        Err(Error::StaleCache { expected: 0xbeef, found: 0xfeed })
    ));

    let bytes = std::fs::read(&path).unwrap();
    std::fs::write(&path, &bytes[..bytes.len() - 3]).unwrap();
    assert!(matches!(EigenBasis::load(&path, 0xfeed), Err(Error::Format(_))));
    std::fs::write(&path, &bytes[..10]).unwrap();
    assert!(matches!(EigenBasis::load(&path, 0xfeed), Err(Error::Format(_))));
    let mut bad = bytes.clone();
    bad[0] = b'X';
    std::fs::write(&path, &bad).unwrap();
    assert!(matches!(EigenBasis::load(&path, 0xfeed), Err(Error::Format(_))));
}

#[test]
fn cache_layout_is_column_major_little_endian() {
    let basis = EigenBasis {
        eigenvalues: vec![0.0, 1.5],
        eigenvectors: Matrix::from_rows(&[vec![1.0, 2.0], vec![3.0, 4.0], vec![5.0, 6.0]]).unwrap(),
        graph_hash: 7,
    };
    let bytes = basis.to_bytes();
    assert_eq!(&bytes[..4], b"LLRA");
    assert_eq!(u32::from_le_bytes(bytes[4..8].try_into().unwrap()), 1);
    assert_eq!(u64::from_le_bytes(bytes[8..16].try_into().unwrap()), 7);
    assert_eq!(u32::from_le_bytes(bytes[16..20].try_into().unwrap()), 3);
    assert_eq!(u32::from_le_bytes(bytes[20..24].try_into().unwrap()), 2);
    let floats: Vec<f64> = bytes[24..]
        .chunks(8)
        .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
        .collect();
    assert_eq!(floats, vec![0.0, 1.5, 1.0, 3.0, 5.0, 2.0, 4.0, 6.0]);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(12))]

    #[test]
    fn random_graphs_match_dense_oracle(n in 5usize..120, p in 0.02f64..0.4, seed in any::<u64>(), k in 1usize..10) {
        let g = random_graph(n, p, seed);
        check_against_oracle(&g, k.min(n));
    }

    #[test]
    fn laplacian_is_symmetric_with_spectrum_in_0_2(n in 1usize..50, p in 0.0f64..0.5, seed in any::<u64>()) {
        let l = normalized_laplacian(&random_graph(n, p, seed));
        let dense = l.to_dense();
        prop_assert_eq!(dense.max_abs_diff(&dense.transpose()), 0.0);
        let (values, _) = jacobi_eigen(&dense);
        prop_assert!(values.iter().all(|&v| (-1e-10..=2.0 + 1e-10).contains(&v)));
    }
}
