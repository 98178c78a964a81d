//! Finite-difference check of every backward pass on a small network.
//!
//! cargo run --release --example gradient_audit

use mgrade::training::{gradient_audit, AuditConfig};

fn main() -> mgrade::Result<()> {
    let report = gradient_audit(&AuditConfig::default())?;
    for c in &report.entries {
        println!("{:<40} max rel err {:.2e}", c.name, c.max_rel_err);
    }
    println!(
        "{} checks, worst {:.2e}, tolerance {:.0e}: {}",
        report.entries.len(),
        report.max_rel_err,
        report.tolerance,
        if report.passed { "pass" } else { "FAIL" }
    );
    Ok(())
}
