use mixlab::gradcheck::{model_check, op_checks, REL_TOL};

#[test]
fn every_op_matches_finite_differences() {
    let checks = op_checks(12, 1).unwrap();
    for (op, report) in &checks {
        assert!(report.passed(), "{op}: {:?}", report.failures());
        assert!(report.max_rel_error() <= REL_TOL);
    }
    let total: usize = checks.iter().map(|(_, r)| r.samples.len()).sum();
    assert!(total >= 200, "only {total} samples");
}

#[test]
fn full_model_matches_finite_differences() {
    let report = model_check(8, 1).unwrap();
    assert!(report.samples.len() >= 200, "only {} samples", report.samples.len());
    assert!(
        report.passed(),
        "max rel err {} failures {:?}",
        report.max_rel_error(),
        report.failures()
    );
}
