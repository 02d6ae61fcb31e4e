//! `lhs serve`: the HTTP service plus a background loop that drives
//! captured records through the pipeline.

use std::path::Path;
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::Arc;
use std::time::Duration;

use lhs_api::{ApiConfig, AppState};
use lhs_core::{Clock, SystemClock};
use lhs_pipeline::{process_pending, DriveOptions, Orchestrator, OrchestratorConfig};
use lhs_relay::{DirParking, KeyStore};
use serde::Deserialize;

use crate::commands::{node, open_store, PARKING_DIR};
use crate::error::{internal, user, CliResult};

#[derive(Debug, Clone, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct WorkerConfig {
    pub workers: usize,
    pub batch: usize,
    pub poll_interval_ms: u64,
    pub orchestrator: OrchestratorConfig,
}

impl Default for WorkerConfig {
    fn default() -> Self {
        WorkerConfig { workers: 2, batch: 25, poll_interval_ms: 2000, orchestrator: OrchestratorConfig::default() }
    }
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ServeConfig {
    pub api: ApiConfig,
    pub pipeline: WorkerConfig,
}

pub fn serve(data: &Path, config_path: &Path) -> CliResult {
    let text = std::fs::read_to_string(config_path).map_err(|e| user(format!("{}: {e}", config_path.display())))?;
    let config: ServeConfig = toml::from_str(&text).map_err(|e| user(format!("{}: {e}", config_path.display())))?;
    let token = config.api.resolve_token().map_err(user)?;
    let store = open_store(data)?;
    let clock: Arc<dyn Clock> = Arc::new(SystemClock);
    let stop = Arc::new(AtomicBool::new(false));

    let worker = if config.api.read_only {
        None
    } else {
        let keys = KeyStore::from_env()?;
        let node = node(data, keys.clone())?;
        let orch = Orchestrator::new(store.clone(), clock.clone(), keys, config.pipeline.orchestrator.clone());
        let parking = DirParking::new(data.join(PARKING_DIR));
        let (store, clock, stop) = (store.clone(), clock.clone(), stop.clone());
        let opts = DriveOptions { batch: config.pipeline.batch, workers: config.pipeline.workers };
        let poll = Duration::from_millis(config.pipeline.poll_interval_ms.max(50));
        Some(std::thread::spawn(move || {
            while !stop.load(Ordering::Relaxed) {
                match process_pending(&store, &node, &orch, &*clock, &parking, opts) {
                    Ok(r) if r.sealed > 0 || r.run.steps > 0 => tracing::info!(
                        sealed = r.sealed,
                        completed = r.run.completed,
                        dead_lettered = r.run.dead_lettered,
                        "pipeline pass"
                    ),
                    Ok(_) => {}
                    Err(e) => tracing::error!(error = %e, "pipeline pass failed"),
                }
                let mut waited = Duration::ZERO;
                while waited < poll && !stop.load(Ordering::Relaxed) {
                    std::thread::sleep(Duration::from_millis(50));
                    waited += Duration::from_millis(50);
                }
            }
        }))
    };

    let runtime = tokio::runtime::Runtime::new().map_err(internal)?;
    let result = runtime.block_on(async {
        let listener = tokio::net::TcpListener::bind(&config.api.bind)
            .await
            .map_err(|e| user(format!("cannot bind {}: {e}", config.api.bind)))?;
        let addr = listener.local_addr().map_err(internal)?;
        println!("listening on {addr}");
        let state = AppState::new(store, clock, config.api.clone(), token);
        lhs_api::serve(listener, state, async {
            let _ = tokio::signal::ctrl_c().await;
        })
        .await
        .map_err(internal)
    });
    stop.store(true, Ordering::Relaxed);
    if let Some(h) = worker {
        let _ = h.join();
    }
    result
}
