use mgm_core::assembly::{assemble_hierarchy, EllipticOperator, LevelSystem};
use mgm_core::geometry::{build_hierarchy, Manifold};
use mgm_core::linalg::{self, seeded_unit_vector, spectral_norm};
use mgm_core::multigrid::{
    geometric_tail, jacobi_step, recursive_bound_check, CycleKind, LevelStack, MgConfig,
};
use mgm_core::{Matrix, Vector};

fn torus_stack(depth: usize) -> LevelStack {
    let hier = build_hierarchy(Manifold::FlatTorus, depth, 4).unwrap();
    let op = EllipticOperator::new(1.0).unwrap();
    let assembled = assemble_hierarchy(&op, &hier, 3, None).unwrap();
    LevelStack::from_assembled(&assembled).unwrap()
}

fn advective_stack(depth: usize) -> LevelStack {
    let hier = build_hierarchy(Manifold::FlatTorus, depth, 4).unwrap();
    let op = EllipticOperator::with_advection(1.0, [0.9, -0.4]).unwrap();
    let assembled = assemble_hierarchy(&op, &hier, 3, None).unwrap();
    LevelStack::from_assembled(&assembled).unwrap()
}

#[test]
fn exact_solution_is_a_fixed_point_on_every_level() {
    let stack = torus_stack(2);
    let cfg = MgConfig::default();
    for l in 0..=stack.depth() {
        let n = stack.level(l).n();
        let u_star = seeded_unit_vector(n, 41 + l as u64);
        let b = stack.level(l).a.apply(&u_star);
        let mut ledger = mgm_core::sparsify::FlopLedger::default();
        let next = stack.mgm(l, &u_star, &b, &cfg, &mut ledger).unwrap();
        let drift = (&next - &u_star)
            .iter()
            .map(|d| d.abs())
            .fold(0.0f64, f64::max);
        assert!(drift < 1e-9, "level {l}: fixed point drifts by {drift:.3e}");

        // A solve started at the solution stops immediately.
        let (_, rep) = stack.solve_at(l, &b, &cfg, Some(&u_star)).unwrap();
        assert!(rep.converged);
        assert_eq!(rep.iterations, 0);
    }
}

#[test]
fn tgm_matches_its_error_propagation_matrix() {
    let stack = torus_stack(2);
    let cfg = MgConfig {
        nu1: 2,
        nu2: 1,
        ..Default::default()
    };
    for l in [1, 2] {
        let n = stack.level(l).n();
        let t = stack
            .error_propagation_matrix(l, &cfg, CycleKind::TwoGrid)
            .unwrap();
        let e0 = seeded_unit_vector(n, 7 + l as u64);
        let b = Vector::zeros(n);
        let mut ledger = mgm_core::sparsify::FlopLedger::default();
        let via_alg = stack.tgm(l, &e0, &b, &cfg, &mut ledger).unwrap();
        let via_mat = t.dot(&e0);
        let diff = (&via_alg - &via_mat)
            .iter()
            .map(|d| d.abs())
            .fold(0.0f64, f64::max);
        assert!(diff < 1e-10, "level {l}: algorithm vs matrix {diff:.3e}");
    }
}

#[test]
fn mgm_matches_its_error_propagation_matrix() {
    let stack = torus_stack(2);
    for tau in [1, 2, 3] {
        let cfg = MgConfig {
            tau,
            ..Default::default()
        };
        let l = stack.depth();
        let n = stack.level(l).n();
        let m = stack
            .error_propagation_matrix(l, &cfg, CycleKind::TauCycle)
            .unwrap();
        let e0 = seeded_unit_vector(n, 100 + tau as u64);
        let b = Vector::zeros(n);
        let mut ledger = mgm_core::sparsify::FlopLedger::default();
        let via_alg = stack.mgm(l, &e0, &b, &cfg, &mut ledger).unwrap();
        let via_mat = m.dot(&e0);
        let diff = (&via_alg - &via_mat)
            .iter()
            .map(|d| d.abs())
            .fold(0.0f64, f64::max);
        assert!(diff < 1e-10, "tau {tau}: algorithm vs matrix {diff:.3e}");
    }
}

#[test]
fn w_cycle_iteration_matrix_contracts() {
    let stack = torus_stack(2);
    let cfg = MgConfig::default();
    let m = stack
        .error_propagation_matrix(stack.depth(), &cfg, CycleKind::TauCycle)
        .unwrap();
    let norm = spectral_norm(m.view());
    assert!(norm < 1.0, "‖M‖₂ = {norm}");

    // Two-grid on the same level is at least as strong a contraction in
    // spectral norm terms for this symmetric problem.
    let t = stack
        .error_propagation_matrix(stack.depth(), &cfg, CycleKind::TwoGrid)
        .unwrap();
    assert!(spectral_norm(t.view()) < 1.0);
}

#[test]
fn smoother_is_nonexpansive_in_the_weighted_norm() {
    let stack = torus_stack(2);
    for l in 0..=stack.depth() {
        let norm = stack.smoother_weighted_norm(l);
        assert!(
            norm <= 1.0 + 1e-10,
            "level {l}: ‖B^½WB^{{-½}}‖₂ = {norm}"
        );
    }
}

#[test]
fn nonsymmetric_smoother_norms_still_decay() {
    let stack = advective_stack(1);
    let lev = stack.level(1);
    let n = lev.n();
    let a = lev.a.to_dense();
    let dinv = lev.diag.mapv(|d| 1.0 / d);
    // W = id − θ B⁻¹ A.
    let mut w = Matrix::eye(n);
    for i in 0..n {
        for j in 0..n {
            w[[i, j]] -= lev.theta * dinv[i] * a[[i, j]];
        }
    }
    let mut pow = Matrix::eye(n);
    let mut xs = Vec::new();
    let mut ys = Vec::new();
    for nstep in 1..=64usize {
        pow = pow.dot(&w);
        if nstep.is_power_of_two() {
            xs.push((nstep as f64).ln());
            ys.push(spectral_norm(a.dot(&pow).view()).ln());
        }
    }
    let fit = linalg::fit_line(&xs, &ys).unwrap();
    assert!(
        fit.slope <= -0.2,
        "decay exponent {:.3} too shallow",
        fit.slope
    );
}

#[test]
fn perturbation_with_zero_eps_is_bitwise() {
    let stack = torus_stack(1);
    let zero = vec![0.0; stack.depth() + 1];
    let copy = stack.perturbed(&zero, 9).unwrap();
    for l in 0..=stack.depth() {
        let a0 = stack.level(l).a.to_dense();
        let a1 = copy.level(l).a.to_dense();
        assert_eq!(a0, a1, "level {l} matrix changed");
        assert_eq!(stack.level(l).theta, copy.level(l).theta);
        if l > 0 {
            let p0 = stack.level(l).p.as_ref().unwrap().to_dense();
            let p1 = copy.level(l).p.as_ref().unwrap().to_dense();
            assert_eq!(p0, p1, "level {l} prolongation changed");
        }
    }
}

#[test]
fn perturbation_injects_the_requested_norm() {
    let stack = torus_stack(1);
    let eps = vec![3e-3, 2e-4];
    let p = stack.perturbed(&eps, 123).unwrap();
    for l in 0..=stack.depth() {
        let diff = p.level(l).a.to_dense() - stack.level(l).a.to_dense();
        let norm = spectral_norm(diff.view());
        assert!(
            (norm - eps[l]).abs() / eps[l] < 1e-6,
            "level {l}: ‖E‖ = {norm:.6e} wanted {:.6e}",
            eps[l]
        );
    }
    // Mismatched schedule length and negative sizes are rejected.
    assert!(stack.perturbed(&[1e-3], 1).is_err());
    assert!(stack.perturbed(&[-1.0, 0.0], 1).is_err());
    // A perturbation overwhelming the diagonal is a domain error.
    let huge = vec![1e3; stack.depth() + 1];
    assert!(stack.perturbed(&huge, 5).is_err());
}

#[test]
fn suffix_stack_solves_the_same_fine_system() {
    let stack = torus_stack(2);
    let sub = stack.suffix(1).unwrap();
    assert_eq!(sub.depth(), 1);
    assert_eq!(sub.level(0).n(), stack.level(1).n());

    let n = stack.level(2).n();
    let b = seeded_unit_vector(n, 77);
    let cfg = MgConfig {
        eps_max: 1e-11,
        ..Default::default()
    };
    let (u_full, rep_full) = stack.solve_at(2, &b, &cfg, None).unwrap();
    let (u_sub, rep_sub) = sub.solve_at(1, &b, &cfg, None).unwrap();
    assert!(rep_full.converged && rep_sub.converged);
    let diff = (&u_full - &u_sub)
        .iter()
        .map(|d| d.abs())
        .fold(0.0f64, f64::max);
    let scale = u_full.iter().map(|v| v.abs()).fold(0.0f64, f64::max);
    assert!(diff / scale < 1e-8, "suffix solution diverges: {diff:.3e}");

    assert!(stack.suffix(3).is_err());
}

#[test]
fn solve_validates_shapes_and_handles_zero_rhs() {
    let stack = torus_stack(1);
    let cfg = MgConfig::default();
    let n = stack.level(1).n();
    assert!(stack.solve(&Vector::zeros(n - 1), &cfg, None).is_err());
    let bad_guess = Vector::zeros(n + 3);
    assert!(stack
        .solve(&Vector::zeros(n), &cfg, Some(&bad_guess))
        .is_err());
    assert!(stack.solve_at(9, &Vector::zeros(n), &cfg, None).is_err());

    let (u, rep) = stack.solve(&Vector::zeros(n), &cfg, None).unwrap();
    assert!(rep.converged);
    assert_eq!(rep.iterations, 0);
    assert!(u.iter().all(|&v| v == 0.0));
}

#[test]
fn config_validation_rejects_bad_parameters() {
    let ok = MgConfig::default();
    assert!(ok.validate().is_ok());
    assert!(ok.within_theory());
    for bad in [
        MgConfig { nu1: 0, ..ok.clone() },
        MgConfig { tau: 0, ..ok.clone() },
        MgConfig { gamma_target: 1.0, ..ok.clone() },
        MgConfig { gamma_target: 0.0, ..ok.clone() },
        MgConfig { eps_max: 0.0, ..ok.clone() },
        MgConfig { max_iters: 0, ..ok.clone() },
        MgConfig { truncation: Some(0.0), ..ok.clone() },
    ] {
        assert!(bad.validate().is_err(), "{bad:?} accepted");
    }
    let v_cycle = MgConfig { tau: 1, ..ok };
    assert!(v_cycle.validate().is_ok());
    assert!(!v_cycle.within_theory());
}

#[test]
fn jacobi_step_matches_hand_computation() {
    let a = Matrix::from_shape_vec((2, 2), vec![2.0, 1.0, 1.0, 2.0]).unwrap();
    let system = LevelSystem {
        a: a.clone(),
        diag: Vector::from_vec(vec![2.0, 2.0]),
        theta: 0.5,
        theta_converged: true,
    };
    let u = Vector::from_vec(vec![1.0, -1.0]);
    let b = Vector::from_vec(vec![0.5, 0.0]);
    // u + θ D⁻¹ (b − Au); Au = (1, -1), so update = (0.5·(−0.5)/2, 0.5·(1)/2).
    let next = jacobi_step(&system, &u, &b).unwrap();
    assert!((next[0] - (1.0 - 0.125)).abs() < 1e-15);
    assert!((next[1] - (-1.0 + 0.25)).abs() < 1e-15);
    assert!(jacobi_step(&system, &Vector::zeros(3), &b).is_err());
}

#[test]
fn recursion_trajectories_respect_the_lemma() {
    // Hypotheses satisfied: stays below γ forever.
    let ok = recursive_bound_check(0.2, 1.0, 2, 0.9, 10_000);
    assert!(ok.hypotheses_met);
    assert!(ok.holds, "trajectory max {}", ok.trajectory_max);
    assert!(ok.trajectory_max <= 0.9);
    // α at the admissible boundary still holds.
    let edge = recursive_bound_check(ok.alpha_bound, 1.0, 2, 0.9, 10_000);
    assert!(edge.hypotheses_met && edge.holds);
    // Violating α blows past γ.
    let bad = recursive_bound_check(0.6, 1.0, 2, 0.5, 200);
    assert!(!bad.hypotheses_met);
    assert!(!bad.holds);
    // τ = 3 admissible region.
    let cubic = recursive_bound_check(0.3, 0.6, 3, 0.8, 10_000);
    assert!(cubic.hypotheses_met);
    assert!(cubic.holds);
}

#[test]
fn alpha_bound_closed_form() {
    // τ=2, β=1: (τ−1)/τ · min{(βτ)^{−1/(τ−1)}, γ} = ½·min{½, γ}.
    let r = recursive_bound_check(0.1, 1.0, 2, 0.9, 10);
    assert!((r.alpha_bound - 0.25).abs() < 1e-15);
    let r = recursive_bound_check(0.1, 1.0, 2, 0.4, 10);
    assert!((r.alpha_bound - 0.2).abs() < 1e-15);
}

#[test]
fn geometric_tail_is_the_trailing_geometric_mean() {
    assert_eq!(geometric_tail(&[], 3), None);
    let t = geometric_tail(&[0.5, 0.5, 0.08], 2).unwrap();
    assert!((t - (0.5f64 * 0.08).sqrt()).abs() < 1e-15);
    // k beyond the history uses everything.
    let t = geometric_tail(&[0.25, 0.25], 10).unwrap();
    assert!((t - 0.25).abs() < 1e-15);
}
