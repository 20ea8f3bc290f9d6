//! Finite-difference gradient checks for every layer in 64-bit precision.

use stvc::nn::check::{default_cases, run_cases, TOLERANCE};

fn main() -> stvc::Result<()> {
    let only = std::env::args().nth(1);
    for r in run_cases(default_cases(), only.as_deref())? {
        let verdict = if r.passed() { "ok" } else { "FAILED" };
        println!("{:<13} max rel error {:.2e} over {:>4} entries ({verdict})", r.name, r.max_rel_error, r.checked);
    }
    println!("tolerance {TOLERANCE:e}");
    Ok(())
}
