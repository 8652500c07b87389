//! Acceptance criteria 1–10. Each criterion runs on its own thread and
//! reports one line; the process exits non-zero if any of them fails.
//!
//! Tolerances are the constants in `mixedfem::validation::criteria`.

use mixedfem::validation::{criteria, CheckResult, Context};
use std::time::Instant;

type Criterion = (u32, &'static str, fn(&Context) -> CheckResult);

const CRITERIA: [Criterion; 10] = [
    (1, "assembled operators match dense oracle", criteria::operator_oracle),
    (2, "material derivatives match finite differences", criteria::material_derivatives),
    (3, "global step matches dense KKT solve", criteria::dense_oracle),
    (4, "local rotation maximizes the Procrustes objective", criteria::procrustes),
    (5, "rest state is an equilibrium; free flight conserves momentum", criteria::equilibrium_and_momentum),
    (6, "converged stretches and rotations are polar factors of F", criteria::polar_consistency),
    (7, "stiff drop stays finite and nearly rigid", criteria::stiffness_robustness),
    (8, "ARAP does not neck, Corot and neo-Hookean do", criteria::necking),
    (9, "tet, tri and rod representations all simulate", criteria::three_representations),
    (10, "static cantilever matches a Newton reference", criteria::beam_oracle),
];

fn main() {
    let filter = std::env::args().skip(1).find(|a| !a.starts_with('-'));
    let ctx = Context::default();
    let start = Instant::now();
    let handles: Vec<_> = CRITERIA
        .iter()
        .filter(|(n, name, _)| filter.as_deref().map_or(true, |f| n.to_string() == f || name.contains(f)))
        .map(|&(n, name, run)| {
            let handle = std::thread::spawn(move || {
                let t = Instant::now();
                let result = run(&ctx);
                (result, t.elapsed().as_secs_f64())
            });
            (n, name, handle)
        })
        .collect();

    let mut failed = 0;
    for (n, name, handle) in handles {
        let (passed, detail, secs) = match handle.join() {
            Ok((Ok(d), s)) => (true, d, s),
            Ok((Err(d), s)) => (false, d, s),
            Err(_) => (false, "panicked".to_string(), 0.0),
        };
        if !passed {
            failed += 1;
        }
        let tag = if passed { "PASS" } else { "FAIL" };
        println!("[{tag}] criterion {n:>2}: {name} ({secs:.1}s) — {detail}");
    }
    println!(
        "acceptance: {failed} failed, {:.1}s total",
        start.elapsed().as_secs_f64()
    );
    if failed > 0 {
        std::process::exit(1);
    }
}
