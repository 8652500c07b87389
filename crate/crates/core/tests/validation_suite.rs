use mixedfem::validation::{all_checks, run_check, select, Context};

#[test]
fn quick_checks_pass() {
    let ctx = Context::default();
    let failures: Vec<String> = all_checks()
        .iter()
        .filter(|c| !c.slow)
        .map(|c| run_check(c, &ctx))
        .filter(|o| !o.passed)
        .map(|o| format!("{}: {}", o.id, o.detail))
        .collect();
    assert!(failures.is_empty(), "failed checks:\n{}", failures.join("\n"));
}

#[test]
fn quick_checks_pass_for_another_seed() {
    let ctx = Context {
        seed: 12345,
        ..Context::default()
    };
    for c in all_checks().iter().filter(|c| !c.slow) {
        let o = run_check(c, &ctx);
        assert!(o.passed, "{}: {}", o.id, o.detail);
    }
}

#[test]
fn flipped_rhs_sign_is_caught_by_dense_oracle() {
    let ctx = Context {
        mutate_rhs_sign: true,
        ..Context::default()
    };
    let checks = select(Some("solver.dense_oracle"));
    assert_eq!(checks.len(), 1);
    let o = run_check(&checks[0], &ctx);
    assert!(!o.passed, "mutation survived: {}", o.detail);
}

#[test]
fn filter_selects_one_module() {
    let checks = select(Some("rotation"));
    assert!(!checks.is_empty());
    assert!(checks.iter().all(|c| c.module == "rotation"));
    assert_eq!(select(Some("no-such-check")).len(), 0);
    assert_eq!(select(None).len(), all_checks().len());
}
