//! Runs the built-in verification suites and prints their reports.
//!
//! cargo run --release --example selftest

fn main() -> vae_novelty::Result<()> {
    let reports = vae_novelty::selftest::run_all(0)?;
    for r in &reports {
        print!("{r}");
    }
    let failed = reports.iter().filter(|r| !r.passed()).count();
    println!("{} of {} suites passed", reports.len() - failed, reports.len());
    Ok(())
}
