use std::path::Path;
use std::process::{Command, Output};

use breakage::runner::manifest::{load_manifest, MANIFEST_COLUMNS};

fn breakage(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_breakage")).args(args).output().expect("binary runs")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

#[test]
fn run_prints_a_record() {
    let o = breakage(&["run", "--scenario", "secret-missing-key-advocate", "--agent", "oracle", "--arm", "tei", "--seed", "3"]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let record: serde_json::Value = serde_json::from_str(&stdout(&o)).unwrap();
    assert_eq!(record["score"]["composite"], 1.0);
    assert_eq!(record["end_reason"], "agent-done");
    assert_eq!(record["embedder"], "external");
}

#[test]
fn run_writes_a_transcript_and_store() {
    let dir = tempfile::tempdir().unwrap();
    let t = dir.path().join("t.jsonl");
    let s = dir.path().join("store.ndjson");
    let o = breakage(&[
        "run",
        "--scenario",
        "replicas-zero-advocate",
        "--agent",
        "null",
        "--transcript",
        t.to_str().unwrap(),
        "--store",
        s.to_str().unwrap(),
    ]);
    assert!(o.status.success());
    let text = std::fs::read_to_string(&t).unwrap();
    assert!(text.lines().all(|l| serde_json::from_str::<serde_json::Value>(l).is_ok()));
    assert_eq!(std::fs::read_to_string(&s).unwrap().lines().count(), 1);
}

#[test]
fn experiment_then_analyze() {
    let dir = tempfile::tempdir().unwrap();
    let manifest = dir.path().join("f.csv");
    let m = manifest.to_str().unwrap();
    let o = breakage(&["experiment", "--packaged", "falsification", "--reps", "2", "--seed", "4", "--manifest", m]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let out = stdout(&o);
    assert!(out.contains("substrate health: 0 framework-error runs"));
    assert!(out.contains("decision:"));
    let rows = load_manifest(&manifest).unwrap();
    assert_eq!(rows.len(), 12);
    let header = std::fs::read_to_string(&manifest).unwrap().lines().next().unwrap().to_string();
    assert_eq!(header, MANIFEST_COLUMNS.join(","));

    // Re-running resumes and adds nothing.
    let again = breakage(&["experiment", "--packaged", "falsification", "--reps", "2", "--seed", "4", "--manifest", m]);
    assert!(stdout(&again).contains("(12 rows, 0 new)"));

    let a = breakage(&["analyze", "--manifest", m]);
    assert!(a.status.success());
    assert!(stdout(&a).contains("| scenario | tier | treatment | control | delta | t | df | p | significant |"));
}

#[test]
fn experiment_from_a_plan_file() {
    let dir = tempfile::tempdir().unwrap();
    let plan = dir.path().join("plan.yaml");
    std::fs::write(
        &plan,
        "name: cli-plan\nscenarios: [env-var-missing-advocate]\narms:\n  - name: tei\n    retrieval: { embedder: external }\n  - name: control\n    retrieval: { embedder: deterministic }\nreps: 2\nbase_seed: 1\nagent: oracle\n",
    )
    .unwrap();
    let manifest = dir.path().join("m.csv");
    let o = breakage(&["experiment", "--plan", plan.to_str().unwrap(), "--manifest", manifest.to_str().unwrap()]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    assert_eq!(load_manifest(&manifest).unwrap().len(), 4);
}

#[test]
fn bad_input_fails_cleanly() {
    assert!(!breakage(&["run", "--scenario", "no-such-thing"]).status.success());
    assert!(!breakage(&["experiment", "--packaged", "nope"]).status.success());
    assert!(!breakage(&["analyze", "--manifest", "/nonexistent/m.csv"]).status.success());
    let o = breakage(&["run", "--scenario", "secret-missing-key-advocate", "--arm", "sideways"]);
    assert!(String::from_utf8_lossy(&o.stderr).contains("unknown arm"));
}

#[test]
fn shipped_scenarios_validate() {
    let dir = Path::new(env!("CARGO_MANIFEST_DIR")).join("data/scenarios/anchor");
    let files: Vec<String> = std::fs::read_dir(dir).unwrap().map(|e| e.unwrap().path().display().to_string()).collect();
    let mut args = vec!["validate"];
    args.extend(files.iter().map(String::as_str));
    let o = breakage(&args);
    assert!(o.status.success(), "{}", stdout(&o));
    assert_eq!(stdout(&o).lines().filter(|l| l.ends_with(": ok")).count(), files.len());
}
