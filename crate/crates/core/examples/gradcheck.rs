//! Finite-difference checks of every trainable operator and both training losses.

use svmr::gradsuite::{run_suite, DEFAULT_SEEDS};

fn main() -> svmr::Result<()> {
    let start = std::time::Instant::now();
    let checks = run_suite(&DEFAULT_SEEDS)?;
    for c in &checks {
        println!(
            "{:<20} seed {} rel err {:.2e} (tol {:.0e}) {}",
            c.name,
            c.seed,
            c.rel_err,
            c.tol,
            if c.passed() { "ok" } else { "FAIL" }
        );
    }
    let failed = checks.iter().filter(|c| !c.passed()).count();
    println!("{} checks, {failed} failed, {:.1?}", checks.len(), start.elapsed());
    Ok(())
}
