//! Compares taped gradients with central finite differences on the built-in fixture.

use essl::train::{gradcheck, GradcheckOptions};

fn main() -> essl::Result<()> {
    let report = gradcheck(&GradcheckOptions::default())?;
    for t in &report.terms {
        println!(
            "{:<7} max relative error {:.2e} at {}[{}] ({} probes, {} across a kink)",
            t.term.name(),
            t.max_rel_error,
            t.worst_param,
            t.worst_index,
            t.probes,
            t.skipped
        );
    }
    println!("{}", if report.passed() { "passed" } else { "FAILED" });
    Ok(())
}
