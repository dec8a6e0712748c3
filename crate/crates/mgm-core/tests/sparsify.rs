use mgm_core::assembly::{assemble_hierarchy, EllipticOperator};
use mgm_core::geometry::{build_hierarchy, geodesic_distance, Manifold, PointSet, TAU};
use mgm_core::linalg::seeded_unit_vector;
use mgm_core::multigrid::{LevelStack, MgConfig, StackMode};
use mgm_core::sparsify::{
    build_truncated_stack, sparse_matvec, tail_bound, truncate, truncation_error_report,
    truncation_radius, write_matrix_market, FlopLedger, SparseMatrix,
};
use mgm_core::{Matrix, Vector};

fn torus_stack(depth: usize) -> LevelStack {
    let hier = build_hierarchy(Manifold::FlatTorus, depth, 4).unwrap();
    let op = EllipticOperator::new(1.0).unwrap();
    let assembled = assemble_hierarchy(&op, &hier, 3, None).unwrap();
    LevelStack::from_assembled(&assembled).unwrap()
}

fn grid_points(side: usize) -> PointSet {
    let step = TAU / side as f64;
    let mut coords = Vec::with_capacity(side * side * 2);
    for i in 0..side {
        for j in 0..side {
            coords.push(i as f64 * step);
            coords.push(j as f64 * step);
        }
    }
    PointSet::new(Manifold::FlatTorus, coords).unwrap()
}

#[test]
fn radius_formula_and_domain() {
    let r = truncation_radius(0.5, 2.0).unwrap();
    assert!((r - 2.0 * 0.5 * (0.5f64.ln().abs())).abs() < 1e-15);
    assert!(truncation_radius(0.0, 1.0).is_err());
    assert!(truncation_radius(1.0, 1.0).is_err());
    assert!(truncation_radius(1.5, 1.0).is_err());
    assert!(truncation_radius(0.5, 0.0).is_err());
    assert!(truncation_radius(0.5, -2.0).is_err());
}

#[test]
fn full_radius_truncation_is_the_identity() {
    let pts = grid_points(6);
    let m = Matrix::from_shape_fn((36, 36), |(i, j)| ((i * 7 + j * 13) as f64).sin());
    let t = truncate(&m, &pts, &pts, Manifold::FlatTorus.diameter()).unwrap();
    assert_eq!(t.nnz(), 36 * 36);
    assert_eq!(t.to_dense(), m);
    let rep = truncation_error_report(&m, &t).unwrap();
    assert_eq!(rep.spectral_norm_diff, 0.0);
    assert_eq!(rep.max_row_sum_diff, 0.0);
}

#[test]
fn truncation_is_idempotent_bitwise() {
    let pts = grid_points(8);
    let m = Matrix::from_shape_fn((64, 64), |(i, j)| 1.0 / (1.0 + (i as f64 - j as f64).abs()));
    let r = 1.3;
    let t1 = truncate(&m, &pts, &pts, r).unwrap();
    let t2 = truncate(&t1.to_dense(), &pts, &pts, r).unwrap();
    assert_eq!(t1.row_offsets(), t2.row_offsets());
    assert_eq!(t1.col_indices(), t2.col_indices());
    assert_eq!(t1.values(), t2.values());
}

#[test]
fn kept_pattern_matches_a_distance_oracle() {
    let pts = grid_points(8);
    let n = pts.len();
    let m = Matrix::from_shape_fn((n, n), |(i, j)| ((i + 2 * j) as f64).cos());
    let r = 1.1;
    let t = truncate(&m, &pts, &pts, r).unwrap();
    let mut nnz = 0usize;
    for i in 0..n {
        for j in 0..n {
            let d = geodesic_distance(Manifold::FlatTorus, pts.point(i), pts.point(j)).unwrap();
            if d <= r {
                nnz += 1;
                assert_eq!(t.get(i, j), m[[i, j]], "({i},{j}) kept value");
            } else {
                assert_eq!(t.get(i, j), 0.0, "({i},{j}) should be dropped");
            }
        }
    }
    assert_eq!(t.nnz(), nnz);
}

#[test]
fn sparse_matvec_agrees_with_dense_and_counts_flops() {
    let pts = grid_points(8);
    let n = pts.len();
    let m = Matrix::from_shape_fn((n, n), |(i, j)| ((i * 3 + j) as f64 * 0.13).sin());
    let t = truncate(&m, &pts, &pts, 1.4).unwrap();
    let dense = t.to_dense();
    let x = seeded_unit_vector(n, 5);
    let mut ledger = FlopLedger::new();
    let y = sparse_matvec(&t, &x, &mut ledger).unwrap();
    assert_eq!(ledger.multiply_adds(), 2 * t.nnz() as u64);
    let y_dense = dense.dot(&x);
    for i in 0..n {
        assert!((y[i] - y_dense[i]).abs() < 1e-13);
    }
    // Transpose route agrees with the dense transpose as well.
    let yt = t.transpose().matvec_untracked(&x);
    let yt_dense = dense.t().dot(&x);
    for i in 0..n {
        assert!((yt[i] - yt_dense[i]).abs() < 1e-13);
    }
    assert!(sparse_matvec(&t, &Vector::zeros(n + 1), &mut ledger).is_err());
}

#[test]
fn ledger_merges_by_summation() {
    let mut a = FlopLedger::new();
    a.add(10);
    let mut b = FlopLedger::new();
    b.add(32);
    a.merge(&b);
    assert_eq!(a.multiply_adds(), 42);
}

#[test]
fn huge_constant_reproduces_the_dense_stack() {
    let stack = torus_stack(2);
    let trunc = build_truncated_stack(&stack, 1e3).unwrap();
    match trunc.mode() {
        StackMode::Truncated { k, radii } => {
            assert_eq!(*k, 1e3);
            // Coarsest level has h ≥ 1: the radius formula is void there.
            assert!(radii[0].is_infinite());
        }
        other => panic!("unexpected mode {other:?}"),
    }
    let n = stack.level(2).n();
    let b = seeded_unit_vector(n, 31);
    let cfg = MgConfig {
        eps_max: 1e-11,
        ..Default::default()
    };
    let (u_dense, _) = stack.solve_at(2, &b, &cfg, None).unwrap();
    let (u_trunc, rep) = trunc.solve_at(2, &b, &cfg, None).unwrap();
    assert!(rep.converged);
    let worst = (&u_dense - &u_trunc)
        .iter()
        .map(|d| d.abs())
        .fold(0.0f64, f64::max);
    assert!(worst < 1e-12, "untruncated radii changed the solve: {worst:.3e}");
}

#[test]
fn truncated_stack_keeps_symmetry_and_diagonals() {
    let stack = torus_stack(2);
    let trunc = build_truncated_stack(&stack, 8.0).unwrap();
    for l in 0..=2 {
        // dist(ξ,ξ) = 0 never exceeds the radius, so diagonals survive.
        let d0 = &stack.level(l).diag;
        let d1 = &trunc.level(l).diag;
        assert_eq!(d0, d1, "level {l} diagonal changed");
        let a = trunc.level(l).a.to_dense();
        assert_eq!(a, a.t(), "level {l} lost symmetry");
    }
    // R is exactly the transposed truncated P.
    for l in 1..=2 {
        let p = trunc.level(l).p.as_ref().unwrap().to_dense();
        let r = trunc.level(l).r.as_ref().unwrap().to_dense();
        assert_eq!(r, p.t());
    }
    assert!(build_truncated_stack(&stack, 0.0).is_err());
}

#[test]
fn truncated_cycle_contracts_at_the_working_constant() {
    let stack = torus_stack(2);
    let trunc = build_truncated_stack(&stack, 10.0).unwrap();
    let cfg = MgConfig {
        eps_max: 1e-10,
        ..Default::default()
    };
    let n = trunc.level(2).n();
    let b = seeded_unit_vector(n, 11);
    let (_, rep) = trunc.solve_at(2, &b, &cfg, None).unwrap();
    assert!(rep.converged, "history: {:?}", rep.residual_history);
    if let Some(c) = rep.asymptotic_contraction {
        assert!(c < 1.0, "asymptotic contraction {c}");
    }
}

#[test]
fn tail_bound_dominates_brute_force_sums() {
    // 16×16 grid: spacing 2π/16, separation radius q = spacing/2.
    let side = 16usize;
    let pts = grid_points(side);
    let q = TAU / side as f64 / 2.0;
    for &c in &[1.0, 2.0] {
        for &r in &[3.0 * q, 6.0 * q, 12.0 * q] {
            let bound = tail_bound(Manifold::FlatTorus, q, r, c).unwrap();
            // Any center: grid node and an incommensurate off-grid point.
            for center in [[0.0, 0.0], [0.137, 5.11]] {
                let sum: f64 = (0..pts.len())
                    .map(|i| {
                        let d =
                            geodesic_distance(Manifold::FlatTorus, &center, pts.point(i)).unwrap();
                        if d >= r {
                            (-c * d).exp()
                        } else {
                            0.0
                        }
                    })
                    .sum();
                assert!(
                    sum <= bound,
                    "c={c}, r={r:.3}: brute sum {sum:.6e} exceeds bound {bound:.6e}"
                );
            }
        }
    }
    assert!(tail_bound(Manifold::FlatTorus, q, 1.5 * q, 1.0).is_err());
    assert!(tail_bound(Manifold::FlatTorus, 0.0, 0.5, 1.0).is_err());
    assert!(tail_bound(Manifold::FlatTorus, q, 3.0 * q, 0.0).is_err());
}

#[test]
fn matrix_market_export_is_one_based_and_parsable() {
    let pts = grid_points(4);
    let n = pts.len();
    let m = Matrix::from_shape_fn((n, n), |(i, j)| if (i + j) % 3 == 0 { 0.5 } else { 0.0 });
    let t = truncate(&m, &pts, &pts, 2.0).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("a.mtx");
    write_matrix_market(&path, &t).unwrap();
    let text = std::fs::read_to_string(&path).unwrap();
    let mut lines = text.lines();
    let header = lines.next().unwrap();
    assert!(header.starts_with("%%MatrixMarket matrix coordinate real general"));
    let dims: Vec<usize> = lines
        .next()
        .unwrap()
        .split_whitespace()
        .map(|s| s.parse().unwrap())
        .collect();
    assert_eq!(dims, vec![n, n, t.nnz()]);
    let mut seen = 0;
    for line in lines {
        let parts: Vec<&str> = line.split_whitespace().collect();
        let (i, j): (usize, usize) = (parts[0].parse().unwrap(), parts[1].parse().unwrap());
        let v: f64 = parts[2].parse().unwrap();
        assert!(i >= 1 && j >= 1, "indices must be 1-based");
        assert_eq!(t.get(i - 1, j - 1), v);
        seen += 1;
    }
    assert_eq!(seen, t.nnz());
}

#[test]
fn csr_construction_validates_structure() {
    // Unsorted columns within a row are rejected.
    assert!(SparseMatrix::from_csr(2, 2, vec![0, 2, 2], vec![1, 0], vec![1.0, 2.0]).is_err());
    // Offsets must be monotone and end at nnz.
    assert!(SparseMatrix::from_csr(2, 2, vec![0, 2, 1], vec![0, 1], vec![1.0, 2.0]).is_err());
    assert!(SparseMatrix::from_csr(2, 2, vec![0, 1], vec![0], vec![1.0]).is_err());
    // Column index out of range.
    assert!(SparseMatrix::from_csr(1, 2, vec![0, 1], vec![5], vec![1.0]).is_err());
    let id = SparseMatrix::identity(4);
    let x = Vector::from_vec(vec![1.0, -2.0, 3.0, 0.5]);
    assert_eq!(id.matvec_untracked(&x), x);
}
