mod common;

use common::{analytic_checks, masking_violations};

#[test]
fn invalid_cells_are_exactly_zero() {
    assert_eq!(masking_violations(50, 7), 0);
}

#[test]
fn closed_form_examples() {
    for (name, got, want) in analytic_checks() {
        assert!((got - want).abs() < 1e-4, "{name}: {got} vs {want}");
    }
}
