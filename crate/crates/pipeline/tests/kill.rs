//! Orchestrator crash safety: a child process runs the pipeline over a
//! store directory and is killed mid-run; a fresh process then recovers.

mod common;

use std::collections::BTreeMap;
use std::io::{BufRead, BufReader};
use std::path::Path;
use std::process::{Command, Stdio};
use std::sync::Arc;

use common::*;
use lhs_core::{RecordStatus, VirtualClock};
use lhs_pipeline::{Orchestrator, OrchestratorConfig, RandomFaults};
use lhs_relay::{KeyStore, KEY_FILE_ENV};
use lhs_store::{JobState, Store, StoreOptions, TimeRange, JOURNAL_FILE};

const CHILD_ENV: &str = "LHS_PIPELINE_KILL_CHILD";
const JOBS: usize = 150;

fn faults() -> RandomFaults {
    RandomFaults { p: 0.05, seed: 12 }
}

fn restart(dir: &Path) -> Orchestrator {
    let store = Arc::new(Store::open(dir, StoreOptions::default()).unwrap());
    let clock = Arc::new(VirtualClock::new(latest_instant(&store)));
    let keys = KeyStore::from_env().unwrap();
    Orchestrator::new(store, clock, keys, OrchestratorConfig::default()).with_faults(faults())
}

#[test]
fn kill_child_orchestrator() {
    let Ok(dir) = std::env::var(CHILD_ENV) else { return };
    let orch = restart(Path::new(&dir));
    orch.recover().unwrap();
    println!();
    let mut n = 0;
    orch.run_with("child", &mut |outcome| {
        n += 1;
        println!("step {n} {outcome:?}");
        true
    })
    .unwrap();
    println!("done");
    std::thread::sleep(std::time::Duration::from_secs(600));
}

/// Runs the child until it reported `stop_after` steps, then kills it.
fn run_child_and_kill(dir: &Path, key_file: &Path, stop_after: usize) -> bool {
    let mut child = Command::new(std::env::current_exe().unwrap())
        .args(["kill_child_orchestrator", "--exact", "--nocapture", "--test-threads=1"])
        .env(CHILD_ENV, dir)
        .env(KEY_FILE_ENV, key_file)
        .stdout(Stdio::piped())
        .stderr(Stdio::null())
        .spawn()
        .unwrap();
    let mut finished = false;
    let mut steps = 0;
    for line in BufReader::new(child.stdout.take().unwrap()).lines() {
        let line = line.unwrap();
        if line.starts_with("step ") {
            steps += 1;
        }
        if line == "done" {
            finished = true;
        }
        if finished || steps >= stop_after {
            break;
        }
    }
    child.kill().unwrap();
    child.wait().unwrap();
    finished
}

/// MarkReintegrated ops per record across the whole journal.
fn reintegration_ops(dir: &Path) -> BTreeMap<String, usize> {
    let mut out = BTreeMap::new();
    let text = std::fs::read_to_string(dir.join(JOURNAL_FILE)).unwrap();
    for line in text.lines().skip(1) {
        let entry: serde_json::Value = serde_json::from_str(line).unwrap();
        for op in entry["ops"].as_array().unwrap() {
            if op["op"] == "mark_reintegrated" {
                *out.entry(op["reintegration"]["record_id"].as_str().unwrap().to_string()).or_default() += 1;
            }
        }
    }
    out
}

#[test]
fn killed_orchestrator_resumes_without_loss_or_duplicates() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path().join("store");
    let key_file = tmp.path().join("keys.json");
    {
        let h = Harness::on_disk(&dir);
        h.keys.save(&key_file).unwrap();
        let orch = h.orchestrator(faults());
        populate(&h, &orch, 10, JOBS, 31);
    }
    // Three kills at different depths, then a run to completion.
    let mut finished = false;
    for stop_after in [40, 90, 150] {
        finished |= run_child_and_kill(&dir, &key_file, stop_after);
    }
    assert!(!finished, "child should not finish before the last kill");
    std::env::set_var(KEY_FILE_ENV, &key_file);
    let orch = restart(&dir);
    orch.recover().unwrap();
    orch.run_until_idle("final").unwrap();

    let st = orch.store().read();
    assert_eq!(st.jobs().count(), JOBS);
    assert!(st.jobs().all(|j| j.state.is_terminal()), "no job left behind");
    for j in st.jobs() {
        let rec = st.record(&j.record_id).unwrap();
        match j.state {
            JobState::Succeeded => assert_eq!(rec.status, RecordStatus::Reintegrated),
            _ => assert_eq!(rec.status, RecordStatus::DeadLettered),
        }
    }
    let report = lhs_pipeline::pipeline_report(&st, TimeRange::all());
    assert!(report.conserved());
    assert_eq!(st.reintegrations().count(), report.succeeded);
    drop(st);
    let ops = reintegration_ops(&dir);
    assert_eq!(ops.len(), report.succeeded);
    assert!(ops.values().all(|n| *n == 1), "a record was reintegrated twice: {ops:?}");
}
