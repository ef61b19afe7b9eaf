//! Analytic gradients of the pretraining loss against central differences.

mod common;

#[test]
fn gradients_match_finite_differences() {
    let errs = common::gradcheck_worst();
    let bad: Vec<_> = errs.iter().filter(|(_, e)| *e >= 1e-4).collect();
    assert!(bad.is_empty(), "{bad:#?}");
}
