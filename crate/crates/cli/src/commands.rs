use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::sync::Arc;

use chrono::{NaiveDate, Utc};
use lhs_api::canonical_json;
use lhs_core::metrics::scoring::score_raw;
use lhs_core::metrics::DerivationConfig;
use lhs_core::{Clock, IsoWeekId, PatientId, SystemClock};
use lhs_hl7::{mllp, parse_er7, serialize_er7, DirEhr, EhrEndpoint, EndpointError, Field, Hl7Message, TcpEhr};
use lhs_pipeline::{
    daily_oru, extract_weekly, import_candidates, ingest_dir, pipeline_report, process_pending, return_daily,
    write_dead_letters, DriveOptions, EncryptionNode, Gateway, NoFaults, Orchestrator, OrchestratorConfig, RandomFaults,
};
use lhs_relay::{DirParking, Inbox, KeyStore, NonceJournal, RetryPolicy, KEY_FILE_ENV};
use lhs_store::{export_rows, write_export, ExportFormat, ExportScope, Store, StoreOptions};
use lhs_synth::{write_cohort, CohortSpec};
use serde::Serialize;
use serde_json::json;

use crate::error::{internal, user, CliError, CliResult};
use crate::{Cli, Command, EhrArgs, Hl7Command, KeysCommand, Output, OutputFormat, PipelineCommand};

pub const NONCE_FILE: &str = "nonces.log";
pub const PARKING_DIR: &str = "parked";

pub fn run(cli: Cli) -> CliResult {
    let data = cli.data_dir;
    match cli.command {
        Command::Serve { config } => crate::serve::serve(&data, &config),
        Command::Synth { spec, out, output } => synth(&spec, &out, output),
        Command::Ingest { dir, output } => ingest(&data, &dir, output),
        Command::Pipeline(cmd) => pipeline(&data, cmd),
        Command::Hl7(Hl7Command::Parse { file, output }) => hl7_parse(&file, output),
        Command::Hl7(Hl7Command::BuildOru { patient, date, out, output }) => build_oru(&data, &patient, date, out, output),
        Command::Score { instrument, items, output } => score(&instrument, &items, output),
        Command::ExtractWeekly { week, ehr, output } => extract(&data, &week, &ehr, output),
        Command::ReturnDaily { date, ehr, output } => return_day(&data, date, &ehr, output),
        Command::Export { scope, format, out } => export(&data, &scope, &format, &out),
        Command::Keys(cmd) => keys(cmd),
    }
}

/// Prints `value` as canonical JSON, or as `text` renders it.
fn emit<T: Serialize>(output: Output, value: &T, text: impl FnOnce(&T) -> String) -> CliResult {
    let mut out = io::stdout().lock();
    let bytes = match output.format {
        OutputFormat::Json => canonical_json(value),
        OutputFormat::Text => {
            let mut s = text(value);
            if !s.ends_with('\n') {
                s.push('\n');
            }
            s.into_bytes()
        }
    };
    out.write_all(&bytes).map_err(internal)
}

pub fn open_store(data: &Path) -> CliResult<Arc<Store>> {
    Store::open(data, StoreOptions::default()).map(Arc::new).map_err(|e| internal(format!("opening {}: {e}", data.display())))
}

fn open_existing(data: &Path) -> CliResult<Arc<Store>> {
    if !data.join(lhs_store::JOURNAL_FILE).exists() {
        return Err(user(format!("{} holds no store; ingest something first", data.display())));
    }
    open_store(data)
}

pub fn node(data: &Path, keys: KeyStore) -> CliResult<EncryptionNode> {
    std::fs::create_dir_all(data).map_err(internal)?;
    Ok(EncryptionNode::new(keys, NonceJournal::open(&data.join(NONCE_FILE)).map_err(internal)?))
}

fn out_writer(path: &Path) -> CliResult<Box<dyn Write>> {
    if path == Path::new("-") {
        return Ok(Box::new(io::stdout().lock()));
    }
    Ok(Box::new(BufWriter::new(File::create(path).map_err(|e| user(format!("{}: {e}", path.display())))?)))
}

fn synth(spec: &Path, out: &Path, output: Output) -> CliResult {
    let text = std::fs::read_to_string(spec).map_err(|e| user(format!("{}: {e}", spec.display())))?;
    let spec = if spec.extension().is_some_and(|e| e == "json") {
        CohortSpec::from_json(&text)
    } else {
        CohortSpec::from_toml(&text)
    }
    .map_err(user)?;
    let cohort = write_cohort(&spec, out).map_err(|e| match e {
        lhs_synth::SynthError::InvalidSpec(_) => user(e),
        other => internal(other),
    })?;
    let summary = json!({
        "out": out.display().to_string(),
        "patients": cohort.patients.len(),
        "devices": cohort.devices.len(),
        "submissions": cohort.planting.captures().count(),
        "patient_days": cohort.planting.patient_days().len(),
    });
    emit(output, &summary, |s| {
        format!(
            "wrote {} submissions for {} patients ({} patient-days) to {}",
            s["submissions"], s["patients"], s["patient_days"], out.display()
        )
    })
}

fn ingest(data: &Path, dir: &Path, output: Output) -> CliResult {
    if !dir.is_dir() {
        return Err(user(format!("{} is not a directory", dir.display())));
    }
    let store = open_store(data)?;
    let gateway = Gateway::new(store, Arc::new(SystemClock));
    let report = ingest_dir(&gateway, dir).map_err(|e| match e.kind() {
        io::ErrorKind::InvalidData => user(e),
        _ => internal(e),
    })?;
    emit(output, &report, |r| {
        let mut s = format!(
            "patients added {}, devices added {}, submitted {}, duplicates {}, already present {}, rejected {}",
            r.patients_added,
            r.devices_added,
            r.submitted,
            r.duplicates,
            r.already_present,
            r.rejected.len()
        );
        for (file, why) in &r.rejected {
            s.push_str(&format!("\n  {file}: {why}"));
        }
        s
    })?;
    if report.rejected.is_empty() {
        Ok(())
    } else {
        Err(user(format!("{} submissions rejected", report.rejected.len())))
    }
}

fn report_text(r: &lhs_pipeline::PipelineReport) -> String {
    let rate = r.success_rate.map_or("n/a".to_string(), |v| format!("{v:.4}"));
    format!(
        "queued {}\nsucceeded {}\nfailed {}\ndead_lettered {}\nin_flight {}\nsuccess_rate {rate}\nalert {}",
        r.queued, r.succeeded, r.failed, r.dead_lettered, r.in_flight, r.alert
    )
}

fn pipeline(data: &Path, cmd: PipelineCommand) -> CliResult {
    let clock: Arc<dyn Clock> = Arc::new(SystemClock);
    match cmd {
        PipelineCommand::Run { workers, batch, inject_failure_rate, fault_seed, output } => {
            let keys = KeyStore::from_env()?;
            let store = open_existing(data)?;
            let node = node(data, keys.clone())?;
            let orch = Orchestrator::new(store.clone(), clock.clone(), keys, OrchestratorConfig::default());
            let orch = match inject_failure_rate {
                Some(p) if !(0.0..=1.0).contains(&p) => return Err(user("--inject-failure-rate must be in [0, 1]")),
                Some(p) => orch.with_faults(RandomFaults { p, seed: fault_seed }),
                None => orch.with_faults(NoFaults),
            };
            let parking = DirParking::new(data.join(PARKING_DIR));
            let drive = process_pending(&store, &node, &orch, &*clock, &parking, DriveOptions { batch, workers })?;
            let report = orch.report(lhs_store::TimeRange::all());
            let both = json!({ "run": drive, "report": report });
            emit(output, &both, |_| {
                format!(
                    "sealed {}, enqueued {}, completed {}, retries {}, dead-lettered {}\n{}",
                    drive.sealed,
                    drive.enqueued,
                    drive.run.completed,
                    drive.run.retries,
                    drive.run.dead_lettered,
                    report_text(&report)
                )
            })?;
            if drive.errors.is_empty() && drive.parked.is_empty() {
                Ok(())
            } else {
                Err(internal(format!("{} errors, {} parked: {:?}", drive.errors.len(), drive.parked.len(), drive.errors)))
            }
        }
        PipelineCommand::Report { window, output } => {
            let store = open_existing(data)?;
            let window = lhs_api::parse_window(window.as_deref(), clock.now()).map_err(user)?;
            let report = pipeline_report(&store.read(), window);
            emit(output, &report, report_text)
        }
        PipelineCommand::RedriveDeadletter { output } => {
            let store = open_existing(data)?;
            let orch = Orchestrator::new(store, clock, KeyStore::empty(), OrchestratorConfig::default());
            let ids = orch.redrive_dead_letters()?;
            emit(output, &ids, |ids| format!("requeued {} jobs", ids.len()))
        }
        PipelineCommand::DeadLetters { out } => {
            let store = open_existing(data)?;
            let mut w = out_writer(&out)?;
            write_dead_letters(&store.read(), &mut w).map_err(internal)?;
            w.flush().map_err(internal)
        }
    }
}

fn read_messages(file: &Path) -> CliResult<Vec<Vec<u8>>> {
    let bytes = std::fs::read(file).map_err(|e| user(format!("{}: {e}", file.display())))?;
    if bytes.first() == Some(&mllp::START) {
        mllp::split_frames(&bytes).map_err(user)
    } else {
        Ok(vec![bytes])
    }
}

fn field_json(f: &Field) -> serde_json::Value {
    json!(f.0.iter().map(|r| &r.0).collect::<Vec<_>>())
}

fn message_json(m: &Hl7Message) -> serde_json::Value {
    let (kind, event) = m.message_type();
    json!({
        "message_type": format!("{kind}^{event}"),
        "control_id": m.control_id(),
        "segments": m.segments.iter().map(|s| json!({
            "id": s.id,
            "fields": s.fields.iter().map(field_json).collect::<Vec<_>>(),
        })).collect::<Vec<_>>(),
    })
}

/// ER7 with segment terminators turned into newlines, for terminals.
fn er7_lines(m: &Hl7Message) -> CliResult<String> {
    let bytes = serialize_er7(m).map_err(internal)?;
    Ok(String::from_utf8_lossy(&bytes).replace('\r', "\n"))
}

fn hl7_parse(file: &Path, output: Output) -> CliResult {
    let mut parsed = Vec::new();
    for (i, raw) in read_messages(file)?.iter().enumerate() {
        let m = parse_er7(raw).map_err(|e| user(format!("message {}: {e}", i + 1)))?;
        parsed.push(m);
    }
    let values: Vec<_> = parsed.iter().map(message_json).collect();
    let mut text = String::new();
    for m in &parsed {
        let (kind, event) = m.message_type();
        text.push_str(&format!("{kind}^{event} control_id={} segments={}\n", m.control_id(), m.segments.len()));
        text.push_str(&er7_lines(m)?);
    }
    emit(output, &values, |_| text)
}

fn build_oru(data: &Path, patient: &str, date: NaiveDate, out: Option<PathBuf>, output: Output) -> CliResult {
    let store = open_existing(data)?;
    let pid = PatientId::new(patient);
    let st = store.read();
    if st.patient(&pid).is_none() {
        return Err(user(format!("unknown patient {patient}")));
    }
    let (msg, keys) = daily_oru(&st, &pid, date, Utc::now(), false)
        .ok_or_else(|| user(format!("no reintegrated results for {patient} on {date}")))?;
    drop(st);
    if let Some(path) = out {
        std::fs::write(&path, serialize_er7(&msg).map_err(internal)?).map_err(|e| user(format!("{}: {e}", path.display())))?;
    }
    let value = json!({
        "control_id": msg.control_id(),
        "observations": keys.len(),
        "er7": String::from_utf8_lossy(&serialize_er7(&msg).map_err(internal)?),
    });
    emit(output, &value, |_| er7_lines(&msg).unwrap_or_default())
}

fn score(instrument: &str, items: &str, output: Output) -> CliResult {
    let items: Vec<i64> = if items.trim().is_empty() {
        Vec::new()
    } else {
        items
            .split(',')
            .map(|s| s.trim().parse::<i64>().map_err(|_| user(format!("item {s:?} is not an integer"))))
            .collect::<CliResult<_>>()?
    };
    let values = score_raw(&instrument.to_ascii_uppercase(), &items, DerivationConfig::shipped()).map_err(user)?;
    emit(output, &values, |v| match v.as_slice() {
        [one] => one.value.to_string(),
        many => many.iter().map(|m| format!("{} {}", m.code, m.value)).collect::<Vec<_>>().join("\n"),
    })
}

fn endpoint(ehr: &EhrArgs) -> Box<dyn EhrEndpoint> {
    match (&ehr.ehr_dir, &ehr.ehr_addr) {
        (Some(dir), _) => Box::new(DirEhr::new(dir)),
        (None, Some(addr)) => Box::new(TcpEhr::new(addr.clone())),
        (None, None) => unreachable!("clap requires one endpoint"),
    }
}

fn unavailable(e: EndpointError) -> CliError {
    user(format!("{e}; nothing was changed, run again when the endpoint is reachable"))
}

fn extract(data: &Path, week: &str, ehr: &EhrArgs, output: Output) -> CliResult {
    let week: IsoWeekId = week.parse().map_err(|_| user(format!("{week:?} is not an ISO week like 2025-W03")))?;
    let keys = KeyStore::from_env()?;
    let store = open_store(data)?;
    let node = node(data, keys.clone())?;
    let inbox = Inbox::new();
    let source = endpoint(ehr);
    let parking = DirParking::new(data.join(PARKING_DIR));
    let extraction = extract_weekly(&*source, week, &node, &inbox, &RetryPolicy::default(), &SystemClock, &parking)
        .map_err(unavailable)?;
    let import = import_candidates(&store, &keys, &inbox);
    let both = json!({ "extraction": extraction, "import": import });
    emit(output, &both, |_| {
        format!(
            "week {}: pulled {}, records {}, forwarded {}, warnings {}; imported {}, skipped {}, rejected {}",
            extraction.week,
            extraction.pulled,
            extraction.records,
            extraction.forwarded,
            extraction.warnings.len(),
            import.observations_imported,
            import.observations_skipped,
            import.rejected.len()
        )
    })
}

fn return_day(data: &Path, date: NaiveDate, ehr: &EhrArgs, output: Output) -> CliResult {
    let store = open_existing(data)?;
    let dest = endpoint(ehr);
    let report = return_daily(&store, &*dest, date, Utc::now())?;
    emit(output, &report, |r| {
        let mut s = format!("{date}: sent {} messages with {} observations", r.messages, r.observations);
        for f in &r.failures {
            s.push_str(&format!("\n  failed {f}"));
        }
        s
    })?;
    if report.failures.is_empty() {
        Ok(())
    } else {
        Err(user(format!("{} pushes failed; they are retried on the next run", report.failures.len())))
    }
}

fn export(data: &Path, scope: &str, format: &str, out: &Path) -> CliResult {
    let scope: ExportScope = scope.parse().map_err(user)?;
    let format: ExportFormat = format.parse().map_err(user)?;
    let store = open_existing(data)?;
    let rows = export_rows(&store.read(), &scope).map_err(user)?;
    let mut w = out_writer(out)?;
    write_export(&rows, format, &mut w).map_err(internal)?;
    w.flush().map_err(internal)?;
    if out != Path::new("-") {
        eprintln!("wrote {} rows to {}", rows.len(), out.display());
    }
    Ok(())
}

fn key_path() -> CliResult<PathBuf> {
    std::env::var_os(KEY_FILE_ENV)
        .map(PathBuf::from)
        .ok_or_else(|| user(format!("set {KEY_FILE_ENV} to the path of the key file")))
}

fn keys(cmd: KeysCommand) -> CliResult {
    let path = key_path()?;
    let mut rng = rand::rng();
    match cmd {
        KeysCommand::Init => {
            if path.exists() {
                return Err(user(format!("{} exists; refusing to overwrite", path.display())));
            }
            let ks = KeyStore::generate(&mut rng, Utc::now());
            ks.save(&path)?;
            eprintln!("created key file {}", path.display());
        }
        KeysCommand::Rotate => {
            let mut ks = KeyStore::load(&path)?;
            let id = ks.rotate(&mut rng, Utc::now());
            ks.save(&path)?;
            eprintln!("active key is now {}", id.to_hex());
        }
    }
    Ok(())
}
