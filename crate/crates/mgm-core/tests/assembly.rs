use mgm_core::assembly::{
    assemble_load, assemble_stiffness, build_prolongation, energy_gram, energy_gram_eval,
    measure_normalization, read_dense_matrix, select_damping, write_dense_matrix,
    EllipticOperator,
};
use mgm_core::basis::LagrangeBasis;
use mgm_core::geometry::{build_hierarchy, build_quadrature, Manifold, PointSet};
use mgm_core::kernels::SpectralKernel;
use mgm_core::{Matrix, Vector};

fn torus_basis(base: usize, cutoff: usize) -> LagrangeBasis {
    let hier = build_hierarchy(Manifold::FlatTorus, 2, base).unwrap();
    let kernel = SpectralKernel::with_cutoff(Manifold::FlatTorus, 3, cutoff).unwrap();
    LagrangeBasis::compute(kernel, hier.levels[0].clone()).unwrap()
}

#[test]
fn operator_validation() {
    assert!(EllipticOperator::new(0.0).is_err());
    assert!(EllipticOperator::new(-1.0).is_err());
    assert!(EllipticOperator::new(f64::NAN).is_err());
    let op = EllipticOperator::with_advection(1.0, [0.5, -0.25]).unwrap();
    assert!(!op.is_symmetric());
    assert!(op.validate(Manifold::UnitSphere).is_err());
    assert!(EllipticOperator::with_advection(1.0, [0.0, 0.0])
        .unwrap()
        .is_symmetric());
}

#[test]
fn gram_eval_matches_matrix_entries() {
    let basis = torus_basis(4, 32);
    let op = EllipticOperator::with_advection(2.0, [0.3, -0.7]).unwrap();
    let gram = energy_gram(&op, basis.kernel(), basis.points()).unwrap();
    for (i, j) in [(0, 0), (1, 5), (7, 2)] {
        let e = energy_gram_eval(
            &op,
            basis.kernel(),
            basis.points().point(i),
            basis.points().point(j),
        )
        .unwrap();
        assert!((gram[[i, j]] - e).abs() < 1e-12);
    }
}

#[test]
fn grid_and_generic_stiffness_routes_agree() {
    // Small grid, low cutoff: the dense triple product is still accurate
    // there, so both routes must coincide to rounding.
    let basis = torus_basis(4, 32);
    let op = EllipticOperator::new(1.0).unwrap();
    let sys = assemble_stiffness(&op, &basis).unwrap();

    let gram = energy_gram(&op, basis.kernel(), basis.points()).unwrap();
    let c = basis.coeffs();
    let mut manual = c.t().dot(&gram.dot(c));
    let n = manual.nrows();
    for i in 0..n {
        for j in 0..i {
            let s = 0.5 * (manual[[i, j]] + manual[[j, i]]);
            manual[[i, j]] = s;
            manual[[j, i]] = s;
        }
    }
    let scale = mgm_core::linalg::max_abs(&sys.a);
    let worst = (&sys.a - &manual)
        .iter()
        .map(|d| d.abs())
        .fold(0.0f64, f64::max);
    assert!(worst / scale < 1e-9, "route disagreement {worst:.3e}");
}

#[test]
fn advective_stiffness_routes_agree() {
    let basis = torus_basis(4, 32);
    let op = EllipticOperator::with_advection(1.0, [0.7, -0.3]).unwrap();
    let sys = assemble_stiffness(&op, &basis).unwrap();
    let gram = energy_gram(&op, basis.kernel(), basis.points()).unwrap();
    let c = basis.coeffs();
    let manual = c.t().dot(&gram.dot(c));
    let scale = mgm_core::linalg::max_abs(&sys.a);
    let worst = (&sys.a - &manual)
        .iter()
        .map(|d| d.abs())
        .fold(0.0f64, f64::max);
    assert!(worst / scale < 1e-9, "route disagreement {worst:.3e}");
}

#[test]
fn stiffness_is_coercive_on_scattered_sphere_points() {
    let hier = build_hierarchy(Manifold::UnitSphere, 1, 0).unwrap();
    let kernel =
        SpectralKernel::for_fill_distance(Manifold::UnitSphere, 3, hier.stats[1].h).unwrap();
    let basis = LagrangeBasis::compute(kernel, hier.levels[1].clone()).unwrap();
    let op = EllipticOperator::new(1.0).unwrap();
    let sys = assemble_stiffness(&op, &basis).unwrap();
    let eigs = mgm_core::linalg::sym_eigvals(&sys.a).unwrap();
    assert!(eigs[0] > 0.0, "λmin = {:.3e}", eigs[0]);
    assert!(sys.theta > 0.0 && sys.theta < 1.0);
}

#[test]
fn load_vector_matches_direct_quadrature() {
    let basis = torus_basis(4, 32);
    let quad = build_quadrature(Manifold::FlatTorus, 2).unwrap();
    let f = |x: &[f64]| (x[0]).cos() + 0.5 * (2.0 * x[1]).sin();
    let b = assemble_load(&basis, f, &quad).unwrap();

    // Direct route: evaluate every cardinal function at every node.
    let norm = measure_normalization(Manifold::FlatTorus);
    let chi = basis.evaluation_matrix(&quad.nodes).unwrap();
    let w = Manifold::FlatTorus.coord_len();
    let coords = quad.nodes.coords();
    let fw = Vector::from_iter(
        quad.weights
            .iter()
            .enumerate()
            .map(|(q, &wq)| wq * f(&coords[q * w..(q + 1) * w])),
    );
    let direct = chi.t().dot(&fw) * norm;
    for i in 0..b.len() {
        assert!((b[i] - direct[i]).abs() < 1e-12);
    }
}

#[test]
fn load_is_linear_in_the_data() {
    let basis = torus_basis(4, 32);
    let quad = build_quadrature(Manifold::FlatTorus, 2).unwrap();
    let f = |x: &[f64]| (x[0] + 0.1).sin();
    let g = |x: &[f64]| (x[1]).cos() * (x[0]).cos();
    let bf = assemble_load(&basis, f, &quad).unwrap();
    let bg = assemble_load(&basis, g, &quad).unwrap();
    let bsum = assemble_load(&basis, |x: &[f64]| f(x) + 2.0 * g(x), &quad).unwrap();
    for i in 0..bf.len() {
        assert!((bsum[i] - (bf[i] + 2.0 * bg[i])).abs() < 1e-12);
    }
}

#[test]
fn prolongation_reproduces_coarse_basis_and_checks_nesting() {
    let hier = build_hierarchy(Manifold::FlatTorus, 1, 2).unwrap();
    let kernel = SpectralKernel::with_cutoff(Manifold::FlatTorus, 3, 32).unwrap();
    let coarse = LagrangeBasis::compute(kernel.clone(), hier.levels[0].clone()).unwrap();
    let p = build_prolongation(&hier.levels[1], &coarse).unwrap();
    assert_eq!(p.nrows(), hier.levels[1].len());
    assert_eq!(p.ncols(), hier.levels[0].len());
    // Rows over the shared prefix are the identity (cardinality).
    for i in 0..coarse.len() {
        for j in 0..coarse.len() {
            let want = if i == j { 1.0 } else { 0.0 };
            assert!((p[[i, j]] - want).abs() < 1e-8);
        }
    }
    // Interior rows evaluate the coarse basis at the fine nodes.
    let nc = coarse.len();
    let vals = coarse.eval_many(3, &hier.levels[1]).unwrap();
    for (row, &v) in vals.iter().enumerate().skip(nc) {
        assert!((p[[row, 3]] - v).abs() < 1e-12);
    }

    // A non-prefix coarse set must be rejected.
    let mut perm: Vec<f64> = Vec::new();
    let pts = &hier.levels[0];
    for i in (0..pts.len()).rev() {
        perm.extend_from_slice(pts.point(i));
    }
    let scrambled = PointSet::new(Manifold::FlatTorus, perm).unwrap();
    let bad = LagrangeBasis::compute(kernel.clone(), scrambled).unwrap();
    assert!(build_prolongation(&hier.levels[1], &bad).is_err());
    // Fine set smaller than coarse.
    let fine_basis = LagrangeBasis::compute(kernel, hier.levels[1].clone()).unwrap();
    assert!(build_prolongation(&hier.levels[0], &fine_basis).is_err());
}

#[test]
fn damping_closed_forms() {
    // A equal to its own diagonal: the scaled operator is the identity,
    // λ̂ = 1 exactly, so θ is the plain safety factor.
    let a = Matrix::from_diag(&Vector::from_vec(vec![3.0, 1.0, 0.25]));
    let diag = a.diag().to_owned();
    let (theta, converged) = select_damping(&a, &diag);
    assert!(converged);
    assert!((theta - 0.9).abs() < 1e-9);

    // [[2,1],[1,2]] with B = 2I scales to eigenvalues {1/2, 3/2}.
    let a = Matrix::from_shape_vec((2, 2), vec![2.0, 1.0, 1.0, 2.0]).unwrap();
    let diag = a.diag().to_owned();
    let (theta, converged) = select_damping(&a, &diag);
    assert!(converged);
    assert!((theta - 0.6).abs() < 1e-6);
}

#[test]
fn dense_matrix_file_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("a.dmat");
    let a = Matrix::from_shape_fn((7, 3), |(i, j)| (i as f64 - 1.5) * 0.37 + (j as f64).sqrt());
    write_dense_matrix(&path, &a).unwrap();
    let back = read_dense_matrix(&path).unwrap();
    assert_eq!(a, back);

    std::fs::write(&path, b"not a matrix").unwrap();
    assert!(read_dense_matrix(&path).is_err());
}
