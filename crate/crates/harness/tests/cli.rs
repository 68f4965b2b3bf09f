use std::process::Command;

fn pchan(args: &[&str]) -> std::process::Output {
    Command::new(env!("CARGO_BIN_EXE_pchan")).args(args).output().expect("binary runs")
}

#[test]
fn compile_writes_a_machine() {
    let dir = tempfile::tempdir().unwrap();
    let model = concat!(env!("CARGO_MANIFEST_DIR"), "/../core/fixtures/incident_management.bpmn");
    let out = dir.path().join("machine.json");
    let pnml = dir.path().join("net.pnml");
    let o = pchan(&["compile", model, "-o", out.to_str().unwrap(), "--pnml", pnml.to_str().unwrap()]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let dump: serde_json::Value = serde_json::from_slice(&std::fs::read(out).unwrap()).unwrap();
    assert!(dump["transitions"].as_array().is_some_and(|t| !t.is_empty()));
    assert!(std::fs::read_to_string(pnml).unwrap().contains("<pnml"));
}

#[test]
fn run_scenario_prints_a_report_and_log() {
    let dir = tempfile::tempdir().unwrap();
    let log = dir.path().join("ledger.jsonl");
    let o = pchan(&[
        "run-scenario", "--case", "supply-chain", "--variant", "1", "--kind", "bad", "--seed", "2", "--log",
        log.to_str().unwrap(),
    ]);
    assert!(o.status.success());
    let run: serde_json::Value = serde_json::from_slice(&o.stdout).unwrap();
    assert_eq!(run["outcome"]["on_chain_events"], 5);
    assert!(std::fs::read_to_string(log).unwrap().lines().count() >= 7);
}

#[test]
fn usage_errors_exit_non_zero() {
    assert!(!pchan(&["run-scenario", "--case", "supply-chain", "--variant", "9", "--kind", "best"]).status.success());
    assert!(!pchan(&["run-scenario", "--case", "nowhere", "--kind", "best"]).status.success());
    assert!(!pchan(&["compile", "/nonexistent.bpmn", "-o", "/tmp/x"]).status.success());
}

#[test]
fn conformance_and_report_commands() {
    let o = pchan(&["conformance", "--case", "incident-management", "--mutants", "50", "--seed", "1"]);
    assert!(o.status.success());
    assert!(String::from_utf8_lossy(&o.stdout).contains("0 misclassified"));

    let dir = tempfile::tempdir().unwrap();
    let series = dir.path().join("series.csv");
    let o = pchan(&["report", "--format", "structured", "--seeds", "1", "--series", series.to_str().unwrap()]);
    assert!(o.status.success());
    let ev: serde_json::Value = serde_json::from_slice(&o.stdout).unwrap();
    assert_eq!(ev["cases"].as_array().unwrap().len(), 2);
    let csv = std::fs::read_to_string(series).unwrap();
    assert_eq!(csv.lines().count(), 1 + 2 * 3 * 10);

    let o = pchan(&["report", "--seeds", "1"]);
    assert!(String::from_utf8_lossy(&o.stdout).contains("break-even"));
    let o = pchan(&["break-even", "--mix", "0.2", "--case", "supply-chain", "--seeds", "1"]);
    assert!(o.status.success());
}
