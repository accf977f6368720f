use hflgen::verify::{run_all, Suite};

#[test]
fn every_suite_passes() {
    let results = run_all(2024).unwrap();
    assert_eq!(results.len(), Suite::ALL.len());
    for r in &results {
        assert!(r.passed(), "{}: {:?}", r.suite, r.checks);
        assert!(r.checks.iter().all(|c| c.cases > 0));
    }
}

#[test]
fn suites_are_deterministic() {
    assert_eq!(Suite::Pinsker.run(3).unwrap(), Suite::Pinsker.run(3).unwrap());
}
