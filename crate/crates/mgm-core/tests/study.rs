use std::str::FromStr;
use std::sync::LazyLock;

use mgm_core::assembly::{assemble_hierarchy, assemble_load, EllipticOperator};
use mgm_core::geometry::{build_hierarchy, Manifold, TAU};
use mgm_core::linalg::{self, fit_line, seeded_unit_vector, CoarseSolver};
use mgm_core::multigrid::LevelStack;
use mgm_core::study::{
    cg_baseline, complexity_study, condition_estimate, contraction_study, convergence_study_on,
    exact_torus_quadrature, l2_error, manufactured_load, manufactured_solution,
    measure_contraction, run_study, select_nu_star, write_level_csv, write_study_outputs,
    CheckRow, StudyConfig, StudyKind, StudyReport, SweepRow, STUDY_NUS,
};
use mgm_core::{Matrix, MgError, Vector};

fn small_config() -> StudyConfig {
    serde_json::from_str(r#"{"manifold":"torus","hierarchy":{"depth":2,"base":4}}"#).unwrap()
}

/// Shared depth-2 torus build: levels of 16/64/256 points, kernel band 32.
static SMALL: LazyLock<(StudyConfig, mgm_core::assembly::AssembledHierarchy, LevelStack)> =
    LazyLock::new(|| {
        let cfg = small_config();
        let (assembled, stack) = cfg.build().unwrap();
        (cfg, assembled, stack)
    });

#[test]
fn study_kind_names_round_trip() {
    for kind in [
        StudyKind::Contraction,
        StudyKind::Convergence,
        StudyKind::Complexity,
    ] {
        assert_eq!(StudyKind::from_str(kind.name()).unwrap(), kind);
    }
    let err = StudyKind::from_str("conditioning").unwrap_err();
    assert!(err.to_string().contains("unknown study kind"));
}

#[test]
fn config_defaults_and_validation() {
    let cfg = small_config();
    assert_eq!(cfg.m, 3);
    assert_eq!(cfg.seed, 0x5eed_cafe);
    assert_eq!(cfg.operator.c, 1.0);
    assert!(cfg.operator.advection.is_none());
    let t = &cfg.thresholds;
    assert_eq!(t.gamma_spread, 0.15);
    assert_eq!(t.kappa_ratio, (2.5, 6.0));
    assert_eq!(t.min_order, 2.0);
    assert_eq!(t.iteration_spread, 2);
    assert_eq!(t.cg_growth, 1.5);
    assert_eq!(t.fit_tolerance, 0.5);
    assert_eq!(t.solve_tol, 1e-8);
    cfg.validate().unwrap();

    // Typos in config files should be loud, not silently ignored.
    assert!(serde_json::from_str::<StudyConfig>(
        r#"{"manifold":"torus","hierarchy":{"depth":2,"base":4},"dept":3}"#
    )
    .is_err());

    let mut bad = small_config();
    bad.hierarchy.depth = 0;
    assert!(matches!(bad.validate(), Err(MgError::Domain(_))));

    let mut bad = small_config();
    bad.thresholds.min_order = 0.0;
    assert!(matches!(bad.validate(), Err(MgError::Domain(_))));

    let mut bad = small_config();
    bad.thresholds.kappa_ratio = (3.0, 2.0);
    assert!(matches!(bad.validate(), Err(MgError::Domain(_))));

    let mut bad = small_config();
    bad.mg.nu1 = 0;
    assert!(matches!(bad.validate(), Err(MgError::Domain(_))));

    let mut bad = small_config();
    bad.operator.c = -1.0;
    assert!(bad.validate().is_err());
}

#[test]
fn check_rows_compare_against_their_bounds() {
    assert!(CheckRow::le("x", 1.0, 1.0).passed);
    assert!(!CheckRow::le("x", 1.0 + 1e-12, 1.0).passed);
    assert!(CheckRow::ge("x", 2.0, 2.0).passed);
    assert!(!CheckRow::ge("x", 2.0 - 1e-12, 2.0).passed);
    // A non-finite measurement can never count as a pass, whichever side the
    // bound is on.
    assert!(!CheckRow::le("x", f64::NAN, 1.0).passed);
    assert!(!CheckRow::ge("x", f64::INFINITY, 1.0).passed);
    let row = CheckRow::le("named", 0.5, 1.0);
    assert_eq!(row.name, "named");
    assert!(row.upper);
    assert!(!CheckRow::ge("named", 2.0, 1.0).upper);
}

#[test]
fn line_fit_recovers_exact_lines() {
    let xs = [0.0, 1.0, 2.0, 3.0];
    let ys: Vec<f64> = xs.iter().map(|x| 2.0 * x + 1.0).collect();
    let fit = fit_line(&xs, &ys).unwrap();
    assert!((fit.slope - 2.0).abs() < 1e-12);
    assert!((fit.intercept - 1.0).abs() < 1e-12);
    assert!((fit.r2 - 1.0).abs() < 1e-12);
    assert_eq!(fit.n, 4);

    let flat = fit_line(&xs, &[5.0; 4]).unwrap();
    assert_eq!(flat.slope, 0.0);
    assert_eq!(flat.r2, 1.0);

    let noisy = fit_line(&xs, &[1.0, -1.0, 1.5, -0.5]).unwrap();
    assert!(noisy.r2 < 0.9);

    assert!(fit_line(&[1.0, 1.0, 1.0], &[1.0, 2.0, 3.0]).is_err());
    assert!(fit_line(&[1.0], &[2.0]).is_err());
    assert!(fit_line(&xs, &ys[..3]).is_err());
}

#[test]
fn cg_baseline_agrees_with_direct_solve() {
    let (_, assembled, _) = &*SMALL;
    let a = &assembled.levels[1].system.a;
    let b = seeded_unit_vector(a.nrows(), 42);
    let run = cg_baseline(a, &b, 1e-12).unwrap();
    assert!(run.converged);
    assert!(run.rel_residual <= 1e-12);
    let direct = CoarseSolver::new(a).unwrap().solve(&b).unwrap();
    let diff = (&run.x - &direct).dot(&(&run.x - &direct)).sqrt();
    let scale = direct.dot(&direct).sqrt();
    assert!(diff <= 1e-8 * scale, "cg/direct mismatch {diff:.3e}");

    let skew = Matrix::from_shape_vec((2, 2), vec![1.0, 2.0, 0.0, 1.0]).unwrap();
    let err = cg_baseline(&skew, &Vector::ones(2), 1e-8).unwrap_err();
    assert!(err.to_string().contains("symmetric"));
    assert!(matches!(
        cg_baseline(a, &Vector::ones(3), 1e-8),
        Err(MgError::Dimension(_))
    ));
}

#[test]
fn condition_estimate_dense_path_is_exact() {
    let a = Matrix::from_diag(&Vector::from(vec![1.0, 2.0, 3.0, 4.0, 5.0]));
    let est = condition_estimate(&a).unwrap();
    assert!(est.dense);
    assert!(est.reliable);
    assert!((est.kappa - 5.0).abs() < 1e-12);
    assert!((est.lambda_max - 5.0).abs() < 1e-12);
    assert!((est.lambda_min - 1.0).abs() < 1e-12);

    let singular = Matrix::from_diag(&Vector::from(vec![0.0, 1.0, 2.0]));
    let est = condition_estimate(&singular).unwrap();
    assert!(est.kappa.is_infinite());
    assert!(!est.reliable);

    assert!(condition_estimate(&Matrix::zeros((0, 0))).is_err());
    assert!(condition_estimate(&Matrix::zeros((2, 3))).is_err());
}

#[test]
fn condition_estimate_iterative_path_brackets_spectrum() {
    // Three distinct eigenvalues keep both power iteration and the CG-based
    // inverse iteration cheap at a size beyond the dense limit.
    let n = 2500;
    let diag: Vec<f64> = (0..n).map(|i| [1.0, 2.0, 4.0][i % 3]).collect();
    let a = Matrix::from_diag(&Vector::from(diag));
    let est = condition_estimate(&a).unwrap();
    assert!(!est.dense);
    assert!(est.reliable);
    assert!((est.lambda_max - 4.0).abs() < 4.0 * 1e-2);
    assert!((est.lambda_min - 1.0).abs() < 1e-2);
    assert!((est.kappa - 4.0).abs() < 0.1);
}

#[test]
fn torus_quadrature_resolves_the_kernel_band() {
    // Smallest dyadic trapezoid rule with at least 2T+5 points per axis.
    for (cutoff, level, side) in [(5, 1, 16), (32, 4, 128), (116, 5, 256)] {
        let (quad, ql) = exact_torus_quadrature(cutoff).unwrap();
        assert_eq!(ql, level);
        assert_eq!(quad.nodes.len(), side * side);
        assert!(8 << ql >= 2 * cutoff + 5);

        let wsum: f64 = quad.weights.iter().sum();
        assert!((wsum - TAU * TAU).abs() < 1e-9 * TAU * TAU);
    }

    // The rule integrates trig polynomials inside its band exactly.
    let (quad, _) = exact_torus_quadrature(32).unwrap();
    let mut pure = 0.0;
    let mut sq = 0.0;
    for (x, w) in quad.nodes.iter().zip(&quad.weights) {
        pure += w * (3.0 * x[0]).cos() * (5.0 * x[1]).cos();
        let u = manufactured_solution(x);
        sq += w * u * u;
    }
    assert!(pure.abs() < 1e-10 * TAU * TAU);
    assert!((sq - TAU * TAU / 4.0).abs() < 1e-9 * TAU * TAU);
}

#[test]
fn l2_error_of_zero_is_the_reference_norm() {
    let (_, assembled, _) = &*SMALL;
    let basis = &assembled.levels[1].basis;
    let (quad, _) = exact_torus_quadrature(assembled.kernel.cutoff()).unwrap();

    // ‖cos(x₁)cos(2x₂)‖ = 1/2 under the normalized measure.
    let zero = Vector::zeros(basis.len());
    let e = l2_error(basis, &zero, manufactured_solution, &quad).unwrap();
    assert!((e - 0.5).abs() < 1e-10, "got {e}");

    // The nodal interpolant of the reference is already close.
    let nodal: Vector = basis
        .points()
        .iter()
        .map(|x| manufactured_solution(x))
        .collect();
    let e = l2_error(basis, &nodal, manufactured_solution, &quad).unwrap();
    assert!(e < 0.05, "interpolant error {e}");

    assert!(matches!(
        l2_error(basis, &Vector::zeros(3), manufactured_solution, &quad),
        Err(MgError::Dimension(_))
    ));
}

#[test]
fn manufactured_load_matches_generic_assembly() {
    let (_, assembled, _) = &*SMALL;
    let b = manufactured_load(assembled, 1).unwrap();
    assert_eq!(b.len(), assembled.levels[1].n());
    let c = assembled.op.c;
    let f = move |x: &[f64]| (5.0 + c) * manufactured_solution(x);
    let (quad, _) = exact_torus_quadrature(assembled.kernel.cutoff()).unwrap();
    let direct = assemble_load(&assembled.levels[1].basis, f, &quad).unwrap();
    assert_eq!(b, direct);

    assert!(matches!(
        manufactured_load(assembled, 9),
        Err(MgError::Dimension(_))
    ));

    let sphere = build_hierarchy(Manifold::UnitSphere, 1, 0).unwrap();
    let op = EllipticOperator::new(1.0).unwrap();
    let on_sphere = assemble_hierarchy(&op, &sphere, 3, None).unwrap();
    assert!(matches!(
        manufactured_load(&on_sphere, 1),
        Err(MgError::Domain(_))
    ));

    let torus = build_hierarchy(Manifold::FlatTorus, 1, 4).unwrap();
    let adv = EllipticOperator::with_advection(1.0, [0.3, 0.1]).unwrap();
    let advective = assemble_hierarchy(&adv, &torus, 3, None).unwrap();
    assert!(matches!(
        manufactured_load(&advective, 1),
        Err(MgError::Domain(_))
    ));
}

#[test]
fn solved_coefficients_approach_the_manufactured_solution() {
    let (cfg, assembled, stack) = &*SMALL;
    let mut worst = Vec::new();
    for l in 1..=2 {
        let b = manufactured_load(assembled, l).unwrap();
        let (u, rep) = stack.solve_at(l, &b, &cfg.mg, None).unwrap();
        assert!(rep.converged);
        let e = assembled.levels[l]
            .basis
            .points()
            .iter()
            .enumerate()
            .map(|(i, x)| (u[i] - manufactured_solution(x)).abs())
            .fold(0.0f64, f64::max);
        worst.push(e);
    }
    // Nodal error shrinks under refinement and is already small at level 2.
    assert!(worst[1] < worst[0], "nodal errors {worst:?}");
    assert!(worst[1] < 1e-2, "level-2 nodal error {:.3e}", worst[1]);
}

#[test]
fn measure_contraction_reports_decaying_ratios() {
    let (cfg, _, stack) = &*SMALL;
    let m = measure_contraction(stack, 2, &cfg.mg, 12, 0x77).unwrap();
    assert_eq!(m.level, 2);
    assert!(m.contraction < 0.5, "contraction {}", m.contraction);
    assert!(m.iterations <= 12);
    assert!(!m.ratios.is_empty());
    assert!(m.cycle_flops > 0);
    assert!(matches!(
        measure_contraction(stack, 2, &cfg.mg, 0, 1),
        Err(MgError::Domain(_))
    ));
}

#[test]
fn nu_star_picks_the_smallest_uniformly_good_count() {
    let row = |nu: usize, c: f64| SweepRow {
        level: 1,
        n: 64,
        nu1: nu,
        nu2: nu,
        tau: 2,
        contraction: c,
        iterations: 10,
        flops: 100,
    };
    let rows = vec![
        row(1, 0.9),
        row(1, 0.8),
        row(2, 0.45),
        row(2, 0.35),
        row(4, 0.20),
        row(4, 0.19),
    ];
    assert_eq!(select_nu_star(&rows, 0.5, 0.15), Some(2));
    // Tighter spread disqualifies ν=2 but not ν=4.
    assert_eq!(select_nu_star(&rows, 0.5, 0.05), Some(4));
    assert_eq!(select_nu_star(&rows, 0.1, 0.05), None);
    // Asymmetric smoothing rows don't participate.
    let odd = vec![SweepRow {
        nu2: 3,
        ..row(1, 0.1)
    }];
    assert_eq!(select_nu_star(&odd, 0.5, 0.15), None);
}

#[test]
fn contraction_study_passes_on_a_small_hierarchy() {
    let (cfg, _, _) = &*SMALL;
    let report = contraction_study(cfg).unwrap();
    assert_eq!(report.kind, "contraction");
    assert_eq!(report.levels.len(), 3);
    assert_eq!(report.sweep.len(), STUDY_NUS.len() * 2);
    assert!(report.fits.contains_key("nu_star"));
    for check in &report.checks {
        assert!(
            check.passed,
            "check {} failed: {:.4e} vs {:.4e}",
            check.name, check.value, check.bound
        );
    }
    assert!(report.passed);
}

#[test]
fn convergence_study_measures_second_order_or_better() {
    let (cfg, assembled, stack) = &*SMALL;
    let report = convergence_study_on(cfg, assembled, stack).unwrap();
    assert!(report.passed, "checks: {:?}", report.checks);
    assert!(report.fits["median_order"] >= 2.0);
    // Both refined levels resolved the manufactured solution.
    let e1 = report.levels[1].error_l2.unwrap();
    let e2 = report.levels[2].error_l2.unwrap();
    assert!(e2 < e1, "errors did not decrease: {e1:.3e} -> {e2:.3e}");
    // The doubled-rule guard ran at this size and saw a stable error.
    assert!(report.fits["quad_refinement_delta"] <= 0.01);
}

#[test]
fn complexity_study_finds_level_independent_iterations() {
    let cfg: StudyConfig = serde_json::from_str(
        r#"{"manifold":"torus","hierarchy":{"depth":3,"base":4},"mg":{"truncation":10.0}}"#,
    )
    .unwrap();
    let report = complexity_study(&cfg).unwrap();
    assert_eq!(report.kind, "complexity");
    for check in &report.checks {
        assert!(
            check.passed,
            "check {} failed: {:.4e} vs {:.4e}",
            check.name, check.value, check.bound
        );
    }
    assert!(report.passed);
    assert!(report.fits.contains_key("k_star"));
    assert!(report.fits["k_star_contraction"] < 1.0);
    for l in 2..=3 {
        let row = &report.levels[l];
        assert!(row.nnz.unwrap() > 0);
        assert!(row.flops.unwrap() > 0);
        assert!(row.cg_iterations.unwrap() > 0);
        assert!(row.iterations.unwrap() > 0);
    }
}

#[test]
fn run_study_dispatches_by_kind() {
    let cfg: StudyConfig =
        serde_json::from_str(r#"{"manifold":"torus","hierarchy":{"depth":1,"base":4}}"#).unwrap();
    let report = run_study(StudyKind::Contraction, &cfg).unwrap();
    assert_eq!(report.kind, "contraction");
    assert_eq!(STUDY_NUS, [1, 2, 4, 8, 16, 32]);
}

#[test]
fn report_files_are_deterministic() {
    let mut fits = std::collections::BTreeMap::new();
    fits.insert("nu_star".to_string(), 4.0);
    fits.insert("median_order".to_string(), 2.5);
    let full_row = mgm_core::study::LevelRow {
        level: 1,
        n: 64,
        h: 0.5,
        q: 0.25,
        rho: 2.0_f64.sqrt(),
        theta: 0.45,
        theta_converged: true,
        kappa: Some(44.0),
        contraction: Some(0.11),
        iterations: Some(8),
        flops: Some(123_456),
        nnz: Some(4096),
        error_l2: Some(1.7e-5),
        order: Some(6.9),
        cg_iterations: Some(28),
        ..Default::default()
    };
    let report = StudyReport {
        kind: "contraction".to_string(),
        passed: true,
        seed: 7,
        manifold: "torus".to_string(),
        levels: vec![mgm_core::study::LevelRow::default(), full_row],
        sweep: vec![SweepRow {
            level: 1,
            n: 64,
            nu1: 2,
            nu2: 2,
            tau: 2,
            contraction: 0.25,
            iterations: 9,
            flops: 1234,
        }],
        fits,
        checks: vec![CheckRow::le("spread", 0.1, 0.15)],
        notes: vec!["one note".to_string()],
    };

    let dir_a = tempfile::tempdir().unwrap();
    let dir_b = tempfile::tempdir().unwrap();
    let paths_a = write_study_outputs(dir_a.path(), &report).unwrap();
    let paths_b = write_study_outputs(dir_b.path(), &report).unwrap();
    assert_eq!(paths_a.len(), 3);
    for (pa, pb) in paths_a.iter().zip(&paths_b) {
        assert_eq!(pa.file_name(), pb.file_name());
        let ba = std::fs::read(pa).unwrap();
        let bb = std::fs::read(pb).unwrap();
        assert!(!ba.is_empty());
        assert_eq!(ba, bb, "file {:?} not byte-stable", pa.file_name());
    }

    let json = std::fs::read_to_string(&paths_a[0]).unwrap();
    assert!(json.ends_with('\n'));
    let value: serde_json::Value = serde_json::from_str(&json).unwrap();
    assert_eq!(value["kind"], "contraction");
    assert_eq!(value["checks"][0]["passed"], true);

    let levels_csv = std::fs::read_to_string(&paths_a[1]).unwrap();
    let mut lines = levels_csv.lines();
    let header = lines.next().unwrap();
    assert_eq!(header.split(',').count(), 20);
    assert!(header.starts_with("level,N,h,q,rho,theta,kappa"));
    // Unmeasured columns stay empty rather than faking zeros.
    let default_line = lines.next().unwrap();
    assert_eq!(default_line.split(',').count(), 20);
    assert!(default_line.contains(",,"));
    let full_line = lines.next().unwrap();
    assert!(full_line.contains("1.700000000000e-5"));

    let sweep_csv = std::fs::read_to_string(&paths_a[2]).unwrap();
    assert_eq!(
        sweep_csv,
        "level,N,nu1,nu2,tau,contraction,iterations,flops\n1,64,2,2,2,2.500000000000e-1,9,1234\n"
    );

    // No sweep rows: no sweep file.
    let quiet = StudyReport {
        sweep: Vec::new(),
        ..report
    };
    let dir_c = tempfile::tempdir().unwrap();
    let paths_c = write_study_outputs(dir_c.path(), &quiet).unwrap();
    assert_eq!(paths_c.len(), 2);

    // Direct CSV writes are stable too.
    let p1 = dir_c.path().join("one.csv");
    let p2 = dir_c.path().join("two.csv");
    write_level_csv(&p1, &quiet.levels).unwrap();
    write_level_csv(&p2, &quiet.levels).unwrap();
    assert_eq!(std::fs::read(&p1).unwrap(), std::fs::read(&p2).unwrap());
}
