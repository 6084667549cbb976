use super::*;
use std::path::PathBuf;

fn bundled(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../scenarios").join(name)
}

fn failures(r: &ScenarioReport) -> Vec<String> {
    let steps = r.steps.iter().filter(|s| !s.ok).map(|s| format!("step {} {:?}: {:?}", s.index, s.id, s.error));
    let checks = r.expectations.iter().filter(|e| !e.passed).map(|e| format!("{:?}: {:?}", e.check, e.detail));
    steps.chain(checks).collect()
}

#[test]
fn assisted_living_passes_every_expectation() {
    let s = load_scenario(&bundled("assisted_living.scenario")).unwrap();
    let r = run_scenario(&s).unwrap();
    assert!(r.passed, "{:#?}", failures(&r));
    assert_eq!(r.summary.unexpected_step_errors, 0);
    assert!(r.summary.expectations_passed >= 40);
}

#[test]
fn reports_are_byte_identical_across_runs() {
    let s = load_scenario(&bundled("assisted_living.scenario")).unwrap();
    assert_eq!(run_scenario(&s).unwrap().to_json(), run_scenario(&s).unwrap().to_json());
}

#[test]
fn a_different_seed_changes_the_log_heads() {
    let mut s = load_scenario(&bundled("assisted_living.scenario")).unwrap();
    let a = run_scenario(&s).unwrap();
    s.seed += 1;
    let b = run_scenario(&s).unwrap();
    assert!(b.passed);
    assert_ne!(a.log_heads, b.log_heads);
}

#[test]
fn empty_timeline_gives_an_empty_passing_report() {
    let s = parse_scenario(r#"{ "name": "empty", "seed": 1 }"#).unwrap();
    let r = run_scenario(&s).unwrap();
    assert!(r.passed && r.steps.is_empty() && r.expectations.is_empty());
}

#[test]
fn failed_expectations_are_reported_not_raised() {
    let s = parse_scenario(
        r#"{ "name": "wrong", "seed": 1, "owners": [{ "id": "o" }],
             "timeline": [{ "at": 0, "id": "r", "step": "ingest", "owner": "o", "device": "d", "field": "F.x", "value": 1 }],
             "expectations": [{ "expect": "decision", "step": "r", "decision": "StoreLocal" }] }"#,
    )
    .unwrap();
    let r = run_scenario(&s).unwrap();
    assert!(!r.passed);
    assert_eq!(r.expectations[0].detail.as_deref(), Some("decision: expected \"StoreLocal\", got \"Forward\""));
}

#[test]
fn unexpected_step_errors_fail_the_run() {
    let s = parse_scenario(
        r#"{ "name": "e", "seed": 1, "owners": [{ "id": "o" }],
             "timeline": [
               { "at": 5, "step": "ingest", "owner": "o", "device": "d", "field": "F.x", "value": 1 },
               { "at": 5, "step": "annotation", "owner": "o", "level": { "level": "RestrictedTo", "endpoints": [] } } ] }"#,
    )
    .unwrap();
    let r = run_scenario(&s).unwrap();
    assert_eq!(r.summary.unexpected_step_errors, 1);
    assert!(!r.passed);
}

fn is_malformed(text: &str) -> bool {
    match parse_scenario(text) {
        Err(ScenarioError::MalformedScenario(_)) => true,
        Ok(s) => matches!(run_scenario(&s), Err(ScenarioError::MalformedScenario(_))),
        Err(_) => false,
    }
}

#[test]
fn malformed_scenarios_are_rejected() {
    assert!(is_malformed("{"));
    assert!(is_malformed(r#"{ "name": "x" }"#));
    assert!(is_malformed(r#"{ "name": "x", "seed": 1, "bogus": 0 }"#));
    assert!(is_malformed(
        r#"{ "name": "x", "seed": 1, "owners": [{ "id": "o" }],
             "timeline": [{ "at": 5, "step": "rotate", "owner": "o" }, { "at": 4, "step": "rotate", "owner": "o" }] }"#
    ));
    assert!(is_malformed(r#"{ "name": "x", "seed": 1, "timeline": [{ "at": 0, "step": "rotate", "owner": "ghost" }] }"#));
    assert!(is_malformed(
        r#"{ "name": "x", "seed": 1, "owners": [{ "id": "o" }],
             "expectations": [{ "expect": "step_ok", "step": "missing" }] }"#
    ));
    assert!(is_malformed(
        r#"{ "name": "x", "seed": 1, "owners": [{ "id": "o" }],
             "timeline": [{ "at": 0, "step": "assertion", "asserter": "nobody", "owner": "o", "claim": "c" }] }"#
    ));
    assert!(is_malformed(
        r#"{ "name": "x", "seed": 1, "services": [{ "id": "s", "model": "class {", "script": {} }] }"#
    ));
    assert!(is_malformed(r#"{ "name": "x", "seed": 1, "services": [{ "id": "s", "script": {} }] }"#));
}

#[test]
fn every_bundled_scenario_passes() {
    let dir = bundled("");
    let mut names: Vec<_> = std::fs::read_dir(&dir).unwrap().map(|e| e.unwrap().path()).collect();
    names.sort();
    for path in names.iter().filter(|p| p.extension().is_some_and(|e| e == "scenario")) {
        let r = run_scenario(&load_scenario(path).unwrap()).unwrap();
        assert!(r.passed, "{}: {:#?}", path.display(), failures(&r));
    }
}
