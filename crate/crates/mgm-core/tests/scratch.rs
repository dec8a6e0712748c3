use mgm_core::study::{convergence_study_on, StudyConfig};

fn print_report(rep: &mgm_core::study::StudyReport, dt: std::time::Duration) {
    println!("passed = {} ({:.0?})", rep.passed, dt);
    for c in &rep.checks {
        println!(
            "  [{}] {}: {:.4e} vs {:.4e}",
            if c.passed { "PASS" } else { "FAIL" },
            c.name,
            c.value,
            c.bound
        );
    }
    let mut fits: Vec<_> = rep.fits.iter().collect();
    fits.sort_by(|a, b| a.0.cmp(b.0));
    for (k, v) in fits {
        println!("  fit {k} = {v:.4}");
    }
    for row in &rep.levels {
        if let Some(e) = row.error_l2 {
            println!(
                "  level {}: n = {}, error_l2 = {:.6e}, iters = {:?}",
                row.level, row.n, e, row.iterations
            );
        }
    }
    for n in &rep.notes {
        println!("  note: {n}");
    }
}

#[test]
fn probe() {
    let cfg: StudyConfig = serde_json::from_str(
        r#"{"manifold":"torus","hierarchy":{"depth":4,"base":4},"mg":{"truncation":10.0}}"#,
    )
    .expect("cfg");
    let (assembled, stack) = cfg.build().expect("build");

    println!("== convergence study ==");
    let t0 = std::time::Instant::now();
    match convergence_study_on(&cfg, &assembled, &stack) {
        Ok(rep) => print_report(&rep, t0.elapsed()),
        Err(e) => println!("error: {e}"),
    }
}
