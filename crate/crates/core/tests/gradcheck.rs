mod common;

use common::{composition_checks, primitive_checks};

fn report(checks: &[common::Check]) {
    let mut failed = Vec::new();
    for c in checks {
        println!(
            "{:<38} worst {:.3e} (tol {:.0e}, {} instances, {:.2}s)",
            c.name, c.worst, c.tol, c.instances, c.seconds
        );
        if !c.passed() {
            failed.push(c.name.clone());
        }
    }
    assert!(failed.is_empty(), "gradient checks failed: {failed:?}");
}

#[test]
fn tape_primitives_match_central_differences() {
    report(&primitive_checks());
}

#[test]
fn compositions_match_central_differences() {
    report(&composition_checks());
}
