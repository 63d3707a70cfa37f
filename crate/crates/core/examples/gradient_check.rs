//! Finite-difference verification of every tape op, every activation, each
//! layer type and a small residual network.

use dsrelu::gradcheck;

fn main() -> dsrelu::Result<()> {
    let reports = gradcheck::full_suite(0)?;
    for r in &reports {
        println!(
            "{} {:<40} {:4} points  max rel err {:.2e}",
            if r.passed() { "ok  " } else { "FAIL" },
            r.name,
            r.checked,
            r.max_rel_err
        );
    }
    let failed = reports.iter().filter(|r| !r.passed()).count();
    println!("{} checks, {failed} failed (step {:e}, tolerance {:e})", reports.len(), gradcheck::STEP, gradcheck::TOLERANCE);
    Ok(())
}
