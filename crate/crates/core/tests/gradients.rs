//! Analytic gradients and Jacobians against central differences.

mod common;

#[test]
fn phase_step_gradient() {
    let err = common::phase_gradient_error(11);
    assert!(err < 1e-6, "{err:e}");
}

#[test]
fn pattern_design_gradient() {
    let err = common::beam_gradient_error(12);
    assert!(err < 1e-6, "{err:e}");
}

#[test]
fn information_jacobian_columns() {
    let err = common::jacobian_error(13);
    assert!(err < 1e-6, "{err:e}");
}
