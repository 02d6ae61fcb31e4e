//! Staged job execution: decrypt, process, reintegrate.
//!
//! Every stage commits its effect together with the job update in one store
//! transaction, so a crash between stages neither loses work nor repeats a
//! completed stage. Jobs are leased to one worker at a time.

use std::collections::HashSet;
use std::sync::Arc;

use chrono::{DateTime, Duration, Utc};
use lhs_core::metrics::{derive_observations, DerivationConfig};
use lhs_core::payload::{decode_bundle, encode_bundle};
use lhs_core::{AffectedSide, Clock, ContentHash, RecordId, RecordStatus};
use lhs_hl7::{build_oru, serialize_er7, OruContext, OruError};
use lhs_relay::{open_bytes, KeyStore};
use lhs_store::{
    Job, JobEvent, JobEventKind, JobState, Lease, ObsKey, Op, Reintegration, Stage, State, Store, StoreError, TimeRange,
};
use parking_lot::Mutex;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

#[derive(Debug, thiserror::Error)]
pub enum OrchestratorError {
    #[error("unknown record {0}")]
    UnknownRecord(RecordId),
    #[error("record {record_id} is {status}, expected encrypted")]
    WrongStatus { record_id: RecordId, status: RecordStatus },
    #[error("unknown job {0}")]
    UnknownJob(String),
    #[error(transparent)]
    Store(#[from] StoreError),
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct OrchestratorConfig {
    pub max_retries: u32,
    pub backoff_base_ms: i64,
    pub backoff_factor: u32,
    /// Relative jitter, 0.2 means ±20%.
    pub jitter: f64,
    pub lease_ms: i64,
    pub jitter_seed: u64,
}

impl Default for OrchestratorConfig {
    fn default() -> Self {
        OrchestratorConfig {
            max_retries: 3,
            backoff_base_ms: 5_000,
            backoff_factor: 4,
            jitter: 0.2,
            lease_ms: 5 * 60_000,
            jitter_seed: 0,
        }
    }
}

/// Uniform in [0, 1) from a digest of the inputs; independent per input.
pub(crate) fn unit_hash(parts: &[&[u8]]) -> f64 {
    let mut h = Sha256::new();
    for p in parts {
        h.update((p.len() as u64).to_be_bytes());
        h.update(p);
    }
    let d = h.finalize();
    let mut b = [0u8; 8];
    b.copy_from_slice(&d[..8]);
    (u64::from_be_bytes(b) >> 11) as f64 / (1u64 << 53) as f64
}

impl OrchestratorConfig {
    /// Delay before retry `n` (1-based): base × factor^(n-1), jittered
    /// deterministically per job and attempt.
    pub fn backoff(&self, job_id: &str, stage: Stage, n: u32) -> Duration {
        let base = self.backoff_base_ms as f64 * (self.backoff_factor as f64).powi(n.saturating_sub(1) as i32);
        let u = unit_hash(&[&self.jitter_seed.to_be_bytes(), job_id.as_bytes(), stage.as_str().as_bytes(), &n.to_be_bytes()]);
        let scale = 1.0 + self.jitter * (2.0 * u - 1.0);
        Duration::milliseconds((base * scale).round() as i64)
    }
}

/// Decides whether an attempt fails before the stage runs. Used for fault
/// injection; production runs use [`NoFaults`].
pub trait Faults: Send + Sync {
    fn inject(&self, job: &Job, stage: Stage, attempt: u32) -> Option<String>;
}

#[derive(Debug, Clone, Copy, Default)]
pub struct NoFaults;

impl Faults for NoFaults {
    fn inject(&self, _: &Job, _: Stage, _: u32) -> Option<String> {
        None
    }
}

/// Each (job, stage, attempt) fails independently with probability `p`.
#[derive(Debug, Clone, Copy)]
pub struct RandomFaults {
    pub p: f64,
    pub seed: u64,
}

impl Faults for RandomFaults {
    fn inject(&self, job: &Job, stage: Stage, attempt: u32) -> Option<String> {
        let u = unit_hash(&[b"fault", &self.seed.to_be_bytes(), job.record_id.as_str().as_bytes(), stage.as_str().as_bytes(), &attempt.to_be_bytes()]);
        (u < self.p).then(|| format!("injected transient {stage} fault"))
    }
}

/// Every attempt of `stage` fails for the listed records.
#[derive(Debug, Clone, Default)]
pub struct PermanentFaults {
    pub records: HashSet<RecordId>,
    pub stage: Option<Stage>,
}

impl Faults for PermanentFaults {
    fn inject(&self, job: &Job, stage: Stage, _: u32) -> Option<String> {
        (self.records.contains(&job.record_id) && self.stage.map_or(true, |s| s == stage))
            .then(|| format!("injected permanent {stage} fault"))
    }
}

/// The first `failures` attempts of `stage` fail for `record`.
#[derive(Debug, Clone)]
pub struct ScriptedFault {
    pub record: RecordId,
    pub stage: Stage,
    pub failures: u32,
}

impl Faults for ScriptedFault {
    fn inject(&self, job: &Job, stage: Stage, attempt: u32) -> Option<String> {
        (job.record_id == self.record && stage == self.stage && attempt <= self.failures)
            .then(|| format!("scripted {stage} fault {attempt}"))
    }
}

pub struct AllFaults(pub Vec<Box<dyn Faults>>);

impl Faults for AllFaults {
    fn inject(&self, job: &Job, stage: Stage, attempt: u32) -> Option<String> {
        self.0.iter().find_map(|f| f.inject(job, stage, attempt))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StepOutcome {
    Advanced,
    Completed,
    RetryScheduled,
    DeadLettered,
    /// The lease was lost to another worker before the commit.
    LeaseLost,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct RunSummary {
    pub steps: usize,
    pub completed: usize,
    pub retries: usize,
    pub dead_lettered: usize,
}

pub const ALERT_THRESHOLD: f64 = 0.90;
pub const ALERT_MIN_SAMPLE: usize = 20;

/// Job counts for jobs created in `window`. `queued` counts every job
/// enqueued in the window; the other four partition it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PipelineReport {
    pub window: TimeRange,
    pub queued: usize,
    pub succeeded: usize,
    pub failed: usize,
    pub dead_lettered: usize,
    pub in_flight: usize,
    pub success_rate: Option<f64>,
    pub alert: bool,
}

impl PipelineReport {
    pub fn conserved(&self) -> bool {
        self.queued == self.succeeded + self.failed + self.dead_lettered + self.in_flight
    }
}

pub fn pipeline_report(state: &State, window: TimeRange) -> PipelineReport {
    let (mut queued, mut succeeded, mut failed, mut dead, mut in_flight) = (0, 0, 0, 0, 0);
    for j in state.jobs().filter(|j| window.contains(&j.created_at)) {
        queued += 1;
        match j.state {
            JobState::Succeeded => succeeded += 1,
            JobState::Failed => failed += 1,
            JobState::DeadLettered => dead += 1,
            JobState::Queued | JobState::Running => in_flight += 1,
        }
    }
    let done = succeeded + dead;
    let success_rate = (done > 0).then(|| succeeded as f64 / done as f64);
    let alert = done >= ALERT_MIN_SAMPLE && success_rate.is_some_and(|r| r < ALERT_THRESHOLD);
    PipelineReport { window, queued, succeeded, failed, dead_lettered: dead, in_flight, success_rate, alert }
}

/// What a successful stage contributes to the commit.
enum StageOutput {
    Decrypted(ContentHash),
    Processed(Vec<Op>),
    Reintegrated(Reintegration),
}

pub struct Orchestrator {
    store: Arc<Store>,
    clock: Arc<dyn Clock>,
    keys: KeyStore,
    config: OrchestratorConfig,
    derivation: DerivationConfig,
    faults: Box<dyn Faults>,
    lock: Mutex<()>,
}

fn event(at: DateTime<Utc>, stage: Stage, kind: JobEventKind, detail: Option<String>) -> JobEvent {
    JobEvent { at, stage, kind, detail }
}

impl Orchestrator {
    pub fn new(store: Arc<Store>, clock: Arc<dyn Clock>, keys: KeyStore, config: OrchestratorConfig) -> Self {
        Orchestrator {
            store,
            clock,
            keys,
            config,
            derivation: DerivationConfig::shipped().clone(),
            faults: Box::new(NoFaults),
            lock: Mutex::new(()),
        }
    }

    pub fn with_faults(mut self, faults: impl Faults + 'static) -> Self {
        self.faults = Box::new(faults);
        self
    }

    pub fn with_derivation(mut self, cfg: DerivationConfig) -> Self {
        self.derivation = cfg;
        self
    }

    pub fn config(&self) -> &OrchestratorConfig {
        &self.config
    }

    pub fn store(&self) -> &Arc<Store> {
        &self.store
    }

    /// Queues a job for an encrypted record. A second enqueue for the same
    /// record returns the existing job unchanged.
    pub fn enqueue(&self, record_id: &RecordId, envelope_blob: Option<ContentHash>) -> Result<Job, OrchestratorError> {
        let _g = self.lock.lock();
        let now = self.clock.now();
        {
            let st = self.store.read();
            if let Some(job) = st.job_for_record(record_id) {
                return Ok(job.clone());
            }
            let record = st.record(record_id).ok_or_else(|| OrchestratorError::UnknownRecord(record_id.clone()))?;
            if record.status != RecordStatus::Encrypted {
                return Err(OrchestratorError::WrongStatus { record_id: record_id.clone(), status: record.status });
            }
        }
        let job = Job::new(format!("J-{record_id}"), record_id.clone(), envelope_blob, now);
        self.store.put_job(job.clone())?;
        Ok(job)
    }

    /// Returns jobs held by workers of a dead process to the queue. Call
    /// once at startup, before any worker runs.
    pub fn recover(&self) -> Result<usize, OrchestratorError> {
        let _g = self.lock.lock();
        let now = self.clock.now();
        let running: Vec<Job> = self.store.read().jobs().filter(|j| j.state == JobState::Running).cloned().collect();
        let n = running.len();
        for mut job in running {
            job.state = JobState::Queued;
            job.lease = None;
            job.next_run_at = now;
            job.updated_at = now;
            job.history.push(event(now, job.stage, JobEventKind::LeaseExpired, Some("reclaimed at startup".into())));
            self.store.put_job(job)?;
        }
        Ok(n)
    }

    /// Moves every dead-lettered job back to the queue with a fresh retry
    /// budget at its failed stage.
    pub fn redrive_dead_letters(&self) -> Result<Vec<String>, OrchestratorError> {
        let _g = self.lock.lock();
        let now = self.clock.now();
        let dead: Vec<Job> = self.store.read().jobs().filter(|j| j.state == JobState::DeadLettered).cloned().collect();
        let mut ids = Vec::new();
        for mut job in dead {
            job.state = JobState::Queued;
            job.attempts.insert(job.stage, 0);
            job.next_run_at = now;
            job.updated_at = now;
            job.history.push(event(now, job.stage, JobEventKind::Redriven, None));
            ids.push(job.job_id.clone());
            self.store.put_job(job)?;
        }
        Ok(ids)
    }

    fn runnable(&self, job: &Job, now: DateTime<Utc>) -> bool {
        match job.state {
            JobState::Queued | JobState::Failed => job.next_run_at <= now,
            JobState::Running => job.lease.as_ref().is_some_and(|l| l.until < now),
            _ => false,
        }
    }

    /// Record status changes that put the record in the state the stage
    /// expects to start from.
    fn start_ops(record_status: RecordStatus, stage: Stage, record_id: &RecordId, at: DateTime<Utc>) -> Vec<Op> {
        let mut ops = Vec::new();
        let set = |status| Op::SetStatus { record_id: record_id.clone(), status, at };
        let mut s = record_status;
        if matches!(s, RecordStatus::Encrypted | RecordStatus::Failed | RecordStatus::DeadLettered) {
            ops.push(set(RecordStatus::Processing));
            s = RecordStatus::Processing;
        }
        if stage == Stage::Reintegrate && s == RecordStatus::Processing {
            ops.push(set(RecordStatus::Processed));
        }
        ops
    }

    /// Leases the next runnable job to `worker`.
    pub fn claim(&self, worker: &str) -> Result<Option<Job>, OrchestratorError> {
        let _g = self.lock.lock();
        let now = self.clock.now();
        let (mut job, status) = {
            let st = self.store.read();
            let Some(job) = st
                .jobs()
                .filter(|j| self.runnable(j, now))
                .min_by(|a, b| (a.next_run_at, &a.job_id).cmp(&(b.next_run_at, &b.job_id)))
            else {
                return Ok(None);
            };
            let status = st.record(&job.record_id).map(|r| r.status).ok_or_else(|| OrchestratorError::UnknownRecord(job.record_id.clone()))?;
            (job.clone(), status)
        };
        if job.state == JobState::Running {
            job.history.push(event(now, job.stage, JobEventKind::LeaseExpired, job.lease.as_ref().map(|l| l.worker.clone())));
        }
        let stage = job.stage;
        let mut ops = Vec::new();
        if job.attempts_at(stage) > self.config.max_retries {
            // The budget ran out while a lease was outstanding.
            ops.extend(Self::start_ops(status, stage, &job.record_id, now));
            ops.extend(self.dead_letter_ops(&mut job, now, "retry budget exhausted by expired leases".into()));
            self.store.commit(ops)?;
            return Ok(None);
        }
        *job.attempts.entry(stage).or_default() += 1;
        job.state = JobState::Running;
        job.lease = Some(Lease { worker: worker.to_string(), until: now + Duration::milliseconds(self.config.lease_ms) });
        job.updated_at = now;
        job.history.push(event(now, stage, JobEventKind::Started, Some(format!("{worker} attempt {}", job.attempts_at(stage)))));
        ops.extend(Self::start_ops(status, stage, &job.record_id, now));
        ops.push(Op::PutJob { job: job.clone() });
        self.store.commit(ops)?;
        Ok(Some(job))
    }

    fn dead_letter_ops(&self, job: &mut Job, now: DateTime<Utc>, error: String) -> Vec<Op> {
        job.state = JobState::DeadLettered;
        job.lease = None;
        job.updated_at = now;
        job.last_error = Some(error.clone());
        job.history.push(event(now, job.stage, JobEventKind::DeadLettered, Some(error)));
        vec![
            Op::SetStatus { record_id: job.record_id.clone(), status: RecordStatus::Failed, at: now },
            Op::SetStatus { record_id: job.record_id.clone(), status: RecordStatus::DeadLettered, at: now },
            Op::PutJob { job: job.clone() },
        ]
    }

    fn execute(&self, job: &Job) -> Result<StageOutput, String> {
        let attempt = job.attempts_at(job.stage);
        if let Some(msg) = self.faults.inject(job, job.stage, attempt) {
            return Err(msg);
        }
        match job.stage {
            Stage::Decrypt => self.decrypt(job).map(StageOutput::Decrypted),
            Stage::Process => self.process(job).map(StageOutput::Processed),
            Stage::Reintegrate => self.reintegrate(job).map(StageOutput::Reintegrated),
        }
    }

    fn decrypt(&self, job: &Job) -> Result<ContentHash, String> {
        let blob = job.envelope_blob.ok_or("job has no envelope")?;
        let bytes = self.store.get_blob(&blob).map_err(|e| e.to_string())?.ok_or("envelope blob missing")?;
        let (env, plain) = open_bytes(&bytes, &self.keys).map_err(|e| e.to_string())?;
        if env.manifest.record_id != job.record_id {
            return Err(format!("envelope belongs to record {}", env.manifest.record_id));
        }
        let parts = decode_bundle(&plain).map_err(|e| format!("bundle: {e}"))?;
        let record = self.store.read().record(&job.record_id).cloned().ok_or("record vanished")?;
        let mut expected: Vec<_> = record.payloads.iter().map(|p| p.content_hash).collect();
        let mut got: Vec<_> = parts.iter().map(|p| ContentHash::of(&p.bytes)).collect();
        expected.sort();
        got.sort();
        if expected != got {
            return Err("decrypted payloads differ from the captured record".into());
        }
        self.store.put_blob(&encode_bundle(&parts)).map_err(|e| e.to_string())
    }

    fn process(&self, job: &Job) -> Result<Vec<Op>, String> {
        let blob = job.bundle_blob.ok_or("job has no decrypted bundle")?;
        let bytes = self.store.get_blob(&blob).map_err(|e| e.to_string())?.ok_or("bundle blob missing")?;
        let parts = decode_bundle(&bytes).map_err(|e| format!("bundle: {e}"))?;
        let st = self.store.read();
        let record = st.record(&job.record_id).ok_or("record vanished")?;
        let side = st.patient(&record.patient_id).map(|p| p.affected_side).unwrap_or(AffectedSide::Unknown);
        let obs = derive_observations(record, side, &parts, &self.derivation, self.clock.now()).map_err(|e| e.to_string())?;
        Ok(obs
            .into_iter()
            .filter(|o| st.observation(&ObsKey::of(o)).is_none())
            .map(|observation| Op::PutObservation { observation })
            .collect())
    }

    fn reintegrate(&self, job: &Job) -> Result<Reintegration, String> {
        let st = self.store.read();
        let record = st.record(&job.record_id).ok_or("record vanished")?;
        let patient = st.patient(&record.patient_id).ok_or("patient vanished")?;
        let results: Vec<_> = st.observations_of_record(&job.record_id).cloned().collect();
        let now = self.clock.now();
        let control_id = format!("RI-{}", job.record_id);
        if !results.is_empty() {
            let mut ctx = OruContext { generated_at: Some(now.fixed_offset()), control_id: control_id.clone(), ..Default::default() };
            ctx.record_times.insert(record.record_id.clone(), record.captured_at);
            let msg = build_oru(patient, &results, &ctx).map_err(|e: OruError| e.to_string())?;
            serialize_er7(&msg).map_err(|e| e.to_string())?;
        }
        Ok(Reintegration { record_id: job.record_id.clone(), at: now, message_control_id: control_id })
    }

    /// Runs the current stage of a leased job and commits the outcome.
    pub fn step(&self, mut job: Job, worker: &str) -> Result<StepOutcome, OrchestratorError> {
        let result = self.execute(&job);
        let _g = self.lock.lock();
        let now = self.clock.now();
        let st = self.store.read();
        let current = st.job(&job.job_id).ok_or_else(|| OrchestratorError::UnknownJob(job.job_id.clone()))?;
        let still_ours = current.state == JobState::Running
            && current.lease.as_ref().is_some_and(|l| l.worker == worker)
            && current.attempts == job.attempts;
        if !still_ours {
            return Ok(StepOutcome::LeaseLost);
        }
        let already_reintegrated = st.reintegration(&job.record_id).is_some();
        drop(st);
        let stage = job.stage;
        job.lease = None;
        job.updated_at = now;
        let mut ops = Vec::new();
        let outcome = match result {
            Ok(out) => {
                job.last_error = None;
                job.history.push(event(now, stage, JobEventKind::StageSucceeded, None));
                match out {
                    StageOutput::Decrypted(h) => job.bundle_blob = Some(h),
                    StageOutput::Processed(obs) => {
                        ops.extend(obs);
                        ops.push(Op::SetStatus { record_id: job.record_id.clone(), status: RecordStatus::Processed, at: now });
                    }
                    StageOutput::Reintegrated(r) => {
                        if !already_reintegrated {
                            ops.push(Op::MarkReintegrated { reintegration: r });
                        }
                        ops.push(Op::SetStatus { record_id: job.record_id.clone(), status: RecordStatus::Reintegrated, at: now });
                    }
                }
                match stage.next() {
                    Some(next) => {
                        job.stage = next;
                        job.state = JobState::Queued;
                        job.next_run_at = now;
                        StepOutcome::Advanced
                    }
                    None => {
                        job.state = JobState::Succeeded;
                        job.completed_at = Some(now);
                        job.history.push(event(now, stage, JobEventKind::Completed, None));
                        StepOutcome::Completed
                    }
                }
            }
            Err(msg) => {
                let n = job.attempts_at(stage);
                if n > self.config.max_retries {
                    ops.extend(self.dead_letter_ops(&mut job, now, msg));
                    self.store.commit(ops)?;
                    return Ok(StepOutcome::DeadLettered);
                }
                job.state = JobState::Failed;
                job.last_error = Some(msg.clone());
                job.next_run_at = now + self.config.backoff(&job.job_id, stage, n);
                job.history.push(event(now, stage, JobEventKind::StageFailed, Some(msg)));
                ops.push(Op::SetStatus { record_id: job.record_id.clone(), status: RecordStatus::Failed, at: now });
                StepOutcome::RetryScheduled
            }
        };
        ops.push(Op::PutJob { job });
        self.store.commit(ops)?;
        Ok(outcome)
    }

    /// Earliest instant at which a queued or failed job becomes due, and
    /// whether any job is currently leased.
    fn pending(&self) -> (Option<DateTime<Utc>>, bool) {
        let st = self.store.read();
        let mut next = None::<DateTime<Utc>>;
        let mut leased = false;
        for j in st.jobs() {
            match j.state {
                JobState::Queued | JobState::Failed => next = Some(next.map_or(j.next_run_at, |n| n.min(j.next_run_at))),
                JobState::Running => leased = true,
                _ => {}
            }
        }
        (next, leased)
    }

    /// Works until no job is queued, failed or leased. Waits on the clock
    /// for scheduled retries.
    pub fn run_until_idle(&self, worker: &str) -> Result<RunSummary, OrchestratorError> {
        self.run_with(worker, &mut |_| true)
    }

    /// Like [`Orchestrator::run_until_idle`]; `on_step` sees each outcome
    /// and may stop the run by returning false.
    pub fn run_with(&self, worker: &str, on_step: &mut dyn FnMut(StepOutcome) -> bool) -> Result<RunSummary, OrchestratorError> {
        let mut summary = RunSummary::default();
        loop {
            if let Some(job) = self.claim(worker)? {
                let outcome = self.step(job, worker)?;
                summary.steps += 1;
                match outcome {
                    StepOutcome::Completed => summary.completed += 1,
                    StepOutcome::RetryScheduled => summary.retries += 1,
                    StepOutcome::DeadLettered => summary.dead_lettered += 1,
                    _ => {}
                }
                if !on_step(outcome) {
                    return Ok(summary);
                }
                continue;
            }
            match self.pending() {
                (_, true) => std::thread::sleep(std::time::Duration::from_millis(1)),
                (Some(due), false) => self.clock.sleep_until(due),
                (None, false) => return Ok(summary),
            }
        }
    }

    /// Runs `workers` threads until idle and sums their summaries.
    pub fn run_workers(&self, workers: usize) -> Result<RunSummary, OrchestratorError> {
        let results: Vec<_> = std::thread::scope(|s| {
            let handles: Vec<_> = (0..workers.max(1))
                .map(|i| s.spawn(move || self.run_until_idle(&format!("worker-{i}"))))
                .collect();
            handles.into_iter().map(|h| h.join().expect("worker panicked")).collect()
        });
        let mut total = RunSummary::default();
        for r in results {
            let r = r?;
            total.steps += r.steps;
            total.completed += r.completed;
            total.retries += r.retries;
            total.dead_lettered += r.dead_lettered;
        }
        Ok(total)
    }

    pub fn report(&self, window: TimeRange) -> PipelineReport {
        pipeline_report(&self.store.read(), window)
    }
}
