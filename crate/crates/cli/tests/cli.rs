use std::io::{BufRead, BufReader, Read, Write};
use std::path::Path;
use std::process::{Command, Output, Stdio};

fn lhs(data: &Path) -> Command {
    let mut c = Command::new(env!("CARGO_BIN_EXE_lhs"));
    c.env_remove("LHS_KEY_FILE").env_remove("LHS_API_TOKEN").env("LHS_DATA_DIR", data);
    c
}

fn run(cmd: &mut Command) -> Output {
    cmd.output().unwrap()
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn ok(o: Output) -> Output {
    assert!(o.status.success(), "exit {:?}\nstdout: {}\nstderr: {}", o.status.code(), stdout(&o), stderr(&o));
    o
}

#[test]
fn score_prints_the_value() {
    let d = tempfile::tempdir().unwrap();
    let o = ok(run(lhs(d.path()).args(["score", "SUS", "--items", "5,1,5,1,5,1,5,1,5,1"])));
    assert_eq!(stdout(&o), "100\n");
    let o = ok(run(lhs(d.path()).args(["score", "sus", "--items", "1,5,1,5,1,5,1,5,1,5"])));
    assert_eq!(stdout(&o), "0\n");
    let o = ok(run(lhs(d.path()).args(["score", "HADS", "--items", "3,0,3,0,3,0,3,0,3,0,3,0,3,0", "--format", "json"])));
    let v: serde_json::Value = serde_json::from_str(&stdout(&o)).unwrap();
    assert_eq!(v, serde_json::json!([{"code": "HADS_A", "value": 21.0}, {"code": "HADS_D", "value": 0.0}]));
    let o = ok(run(lhs(d.path()).args(["score", "ARAT", "--items", &["3"; 19].join(",")])));
    assert!(stdout(&o).contains("ARAT_TOTAL 57"));
}

#[test]
fn score_rejects_bad_vectors_with_exit_1() {
    let d = tempfile::tempdir().unwrap();
    let o = run(lhs(d.path()).args(["score", "HADS", "--items", "1,1,1,1,1,1,1,1,1,1,1,1,1"]));
    assert_eq!(o.status.code(), Some(1));
    let e = stderr(&o);
    assert!(e.contains("14") && e.contains("13"), "{e}");
    for items in ["1,x,3", "9,9,9,9,9,9,9,9", ""] {
        let o = run(lhs(d.path()).args(["score", "ESS", "--items", items]));
        assert_eq!(o.status.code(), Some(1), "{items}");
    }
    assert_eq!(run(lhs(d.path()).args(["score", "XYZ", "--items", "1"])).status.code(), Some(1));
}

#[test]
fn usage_errors_exit_1_and_help_exits_0() {
    let d = tempfile::tempdir().unwrap();
    assert_eq!(run(lhs(d.path()).arg("frobnicate")).status.code(), Some(1));
    assert_eq!(run(lhs(d.path()).args(["score", "SUS"])).status.code(), Some(1));
    // Keys never come from flags.
    assert_eq!(run(lhs(d.path()).args(["pipeline", "run", "--key-file", "k.json"])).status.code(), Some(1));
    let o = ok(run(lhs(d.path()).arg("--help")));
    assert!(stdout(&o).contains("extract-weekly"));
}

#[test]
fn key_file_comes_from_the_environment() {
    let d = tempfile::tempdir().unwrap();
    let o = run(lhs(d.path()).args(["keys", "init"]));
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("LHS_KEY_FILE"));
    let key = d.path().join("keys.json");
    ok(run(lhs(d.path()).args(["keys", "init"]).env("LHS_KEY_FILE", &key)));
    #[cfg(unix)]
    {
        use std::os::unix::fs::PermissionsExt;
        assert_eq!(std::fs::metadata(&key).unwrap().permissions().mode() & 0o777, 0o600);
    }
    assert_eq!(run(lhs(d.path()).args(["keys", "init"]).env("LHS_KEY_FILE", &key)).status.code(), Some(1));
    ok(run(lhs(d.path()).args(["keys", "rotate"]).env("LHS_KEY_FILE", &key)));
    let ks = lhs_relay::KeyStore::load(&key).unwrap();
    assert_eq!(ks.key_ids().count(), 2);
}

#[test]
fn commands_on_a_missing_store_are_user_errors() {
    let d = tempfile::tempdir().unwrap();
    let data = d.path().join("nothing");
    for args in [vec!["pipeline", "report"], vec!["export"], vec!["hl7", "build-oru", "--patient", "P1", "--date", "2025-01-06"]] {
        let o = run(lhs(&data).args(&args));
        assert_eq!(o.status.code(), Some(1), "{args:?}: {}", stderr(&o));
    }
    let key = d.path().join("k.json");
    let o = run(lhs(&data).args(["pipeline", "run"]));
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("LHS_KEY_FILE"));
    ok(run(lhs(d.path()).args(["keys", "init"]).env("LHS_KEY_FILE", &key)));
    let o = run(lhs(&data).args(["pipeline", "run"]).env("LHS_KEY_FILE", &key));
    assert_eq!(o.status.code(), Some(1), "{}", stderr(&o));
}

#[test]
fn end_to_end_smoke() {
    let d = tempfile::tempdir().unwrap();
    let data = d.path().join("data");
    let cohort = d.path().join("cohort");
    let key = d.path().join("keys.json");
    let spec = d.path().join("spec.toml");
    std::fs::write(&spec, "seed = 4\nn_patients = 3\ndays = 7\n").unwrap();
    ok(run(lhs(&data).args(["keys", "init"]).env("LHS_KEY_FILE", &key)));

    let o = ok(run(lhs(&data).args(["synth", "--spec"]).arg(&spec).arg("--out").arg(&cohort).args(["--format", "json"])));
    let synth: serde_json::Value = serde_json::from_str(&stdout(&o)).unwrap();
    assert_eq!(synth["patient_days"], 21);
    let n = synth["submissions"].as_u64().unwrap();

    let o = ok(run(lhs(&data).arg("ingest").arg("--dir").arg(&cohort).args(["--format", "json"])));
    let ingest: serde_json::Value = serde_json::from_str(&stdout(&o)).unwrap();
    assert_eq!(ingest["submitted"].as_u64(), Some(n));

    let o = ok(run(lhs(&data).args(["pipeline", "run", "--workers", "2", "--format", "json"]).env("LHS_KEY_FILE", &key)));
    let out: serde_json::Value = serde_json::from_str(&stdout(&o)).unwrap();
    assert_eq!(out["run"]["sealed"].as_u64(), Some(n));

    let o = ok(run(lhs(&data).args(["pipeline", "report", "--format", "json"])));
    let report: serde_json::Value = serde_json::from_str(&stdout(&o)).unwrap();
    assert!(report["success_rate"].as_f64().unwrap() >= 0.90, "{report}");
    assert_eq!(report["succeeded"].as_u64(), Some(n));
    assert_eq!(report["alert"], false);
    let text = stdout(&ok(run(lhs(&data).args(["pipeline", "report"]))));
    assert!(text.contains("success_rate 1.0000"), "{text}");

    let csv = d.path().join("all.csv");
    ok(run(lhs(&data).args(["export", "--scope", "all", "--format", "csv", "--out"]).arg(&csv)));
    let rows = lhs_store::read_export(&std::fs::read(&csv).unwrap(), lhs_store::ExportFormat::Csv).unwrap();
    assert_eq!(lhs_store::patient_days_in_export(&rows).len(), 21);
    let nd = stdout(&ok(run(lhs(&data).args(["export", "--scope", "patient:P002", "--format", "ndjson"]))));
    assert!(nd.lines().count() > 0 && nd.lines().all(|l| l.contains("\"P002\"")));
    assert_eq!(run(lhs(&data).args(["export", "--scope", "patient:P999"])).status.code(), Some(1));

    let oru = d.path().join("p1.hl7");
    ok(run(lhs(&data).args(["hl7", "build-oru", "--patient", "P001", "--date", "2025-01-07", "--out"]).arg(&oru)));
    let parsed = stdout(&ok(run(lhs(&data).args(["hl7", "parse"]).arg(&oru).args(["--format", "json"]))));
    let msgs: serde_json::Value = serde_json::from_str(&parsed).unwrap();
    assert_eq!(msgs[0]["message_type"], "ORU^R01");
    assert!(msgs[0]["segments"].as_array().unwrap().iter().any(|s| s["id"] == "OBX"));
    std::fs::write(d.path().join("junk.hl7"), b"not hl7").unwrap();
    assert_eq!(run(lhs(&data).args(["hl7", "parse"]).arg(d.path().join("junk.hl7"))).status.code(), Some(1));

    let ehr = d.path().join("ehr");
    let o = ok(run(lhs(&data).args(["return-daily", "--date", "2025-01-07", "--format", "json", "--ehr-dir"]).arg(&ehr)));
    let ret: serde_json::Value = serde_json::from_str(&stdout(&o)).unwrap();
    assert_eq!(ret["messages"], 3);
    let o = ok(run(lhs(&data).args(["return-daily", "--date", "2025-01-07", "--format", "json", "--ehr-dir"]).arg(&ehr)));
    assert_eq!(serde_json::from_str::<serde_json::Value>(&stdout(&o)).unwrap()["messages"], 0);

    // Returned results come back through the weekly extraction and are
    // recognised as already stored.
    let week = ehr.join("outbound").join("2025-W02");
    std::fs::create_dir_all(&week).unwrap();
    for e in std::fs::read_dir(ehr.join("inbound")).unwrap() {
        let p = e.unwrap().path();
        std::fs::copy(&p, week.join(p.file_name().unwrap())).unwrap();
    }
    let o = ok(run(lhs(&data).args(["extract-weekly", "--week", "2025-W02", "--format", "json", "--ehr-dir"]).arg(&ehr).env("LHS_KEY_FILE", &key)));
    let ex: serde_json::Value = serde_json::from_str(&stdout(&o)).unwrap();
    assert_eq!(ex["import"]["observations_imported"], 0);
    assert!(ex["import"]["observations_skipped"].as_u64().unwrap() > 0);
    let o = run(lhs(&data).args(["extract-weekly", "--week", "2025-W02", "--ehr-addr", "127.0.0.1:1"]).env("LHS_KEY_FILE", &key));
    assert_eq!(o.status.code(), Some(1));
    assert_eq!(run(lhs(&data).args(["extract-weekly", "--week", "W02", "--ehr-dir"]).arg(&ehr).env("LHS_KEY_FILE", &key)).status.code(), Some(1));

    let dl = stdout(&ok(run(lhs(&data).args(["pipeline", "dead-letters"]))));
    assert_eq!(dl.lines().count(), 1);
    ok(run(lhs(&data).args(["pipeline", "redrive-deadletter"])));
}

#[test]
fn serve_requires_a_token_unless_read_only() {
    let d = tempfile::tempdir().unwrap();
    let cfg = d.path().join("serve.toml");
    std::fs::write(&cfg, "[api]\nbind = \"127.0.0.1:0\"\ntoken_env = \"LHS_TEST_SERVE_TOKEN\"\n").unwrap();
    let o = run(lhs(d.path()).arg("serve").arg("--config").arg(&cfg).env_remove("LHS_TEST_SERVE_TOKEN"));
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("LHS_TEST_SERVE_TOKEN"));
    std::fs::write(&cfg, "[api]\nbind = \"127.0.0.1:0\"\ncolour = 1\n").unwrap();
    assert_eq!(run(lhs(d.path()).arg("serve").arg("--config").arg(&cfg)).status.code(), Some(1));
}

#[test]
fn serve_answers_http_with_the_token() {
    let d = tempfile::tempdir().unwrap();
    let key = d.path().join("keys.json");
    ok(run(lhs(d.path()).args(["keys", "init"]).env("LHS_KEY_FILE", &key)));
    let cfg = d.path().join("serve.toml");
    std::fs::write(&cfg, "[api]\nbind = \"127.0.0.1:0\"\ntoken_env = \"LHS_TEST_SERVE_TOKEN\"\n[pipeline]\npoll_interval_ms = 100\n").unwrap();
    let mut child = lhs(&d.path().join("data"))
        .arg("serve")
        .arg("--config")
        .arg(&cfg)
        .env("LHS_TEST_SERVE_TOKEN", "s3cret")
        .env("LHS_KEY_FILE", &key)
        .stdout(Stdio::piped())
        .stderr(Stdio::null())
        .spawn()
        .unwrap();
    let mut line = String::new();
    BufReader::new(child.stdout.take().unwrap()).read_line(&mut line).unwrap();
    let addr = line.trim().strip_prefix("listening on ").unwrap().to_string();
    let get = |auth: &str| {
        let mut s = std::net::TcpStream::connect(&addr).unwrap();
        write!(s, "GET /v1/pipeline/report HTTP/1.1\r\nHost: x\r\n{auth}Connection: close\r\n\r\n").unwrap();
        let mut out = String::new();
        s.read_to_string(&mut out).unwrap();
        out
    };
    let authed = get("Authorization: Bearer s3cret\r\n");
    let anon = get("");
    child.kill().unwrap();
    child.wait().unwrap();
    assert!(authed.starts_with("HTTP/1.1 200"), "{authed}");
    assert!(authed.contains("\"queued\":0"));
    assert!(anon.starts_with("HTTP/1.1 401"), "{anon}");
}
