//! HTTP service administering MOS and ABX listening tests.
//!
//! Ratings go to an append-only JSON-lines log through a single writer and
//! are flushed before the request completes; on startup the log is replayed
//! to rebuild which trials each rater has answered.

use std::collections::{BTreeMap, BTreeSet};
use std::fs::{self, File, OpenOptions};
use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::{SystemTime, UNIX_EPOCH};

use axum::body::Bytes;
use axum::extract::{Path as UrlPath, Query, State};
use axum::http::{header, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use msms_core::eval::validate_score;
use msms_core::trials::{assign_trials, default_abx_pairs, EvalEntry, Trial, TrialKind};
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use tokio::sync::Mutex;

use crate::error::{Error, Result};
use crate::pipeline::stable_hash;
use crate::ratings::{self, AbxChoice, Response as Answer, TrialRecord};

struct Log {
    file: File,
    path: PathBuf,
    records: Vec<TrialRecord>,
    answered: BTreeSet<(String, String)>,
}

/// Shared service state: the evaluation index, both trial schedules and the
/// ratings log.
pub struct Service {
    eval_root: PathBuf,
    index: BTreeMap<String, EvalEntry>,
    schedules: BTreeMap<TrialKind, Vec<Trial>>,
    trials: BTreeMap<String, Trial>,
    pairs: Vec<(String, String)>,
    log: Mutex<Log>,
}

impl Service {
    /// Builds schedules for `index` (sample paths relative to `eval_root`)
    /// and replays the ratings log at `log_path`.
    pub fn open(eval_root: &Path, index: Vec<EvalEntry>, log_path: &Path, seed: u64) -> Result<Self> {
        let pairs = default_abx_pairs();
        let mut schedules = BTreeMap::new();
        schedules.insert(TrialKind::Mos, assign_trials(&index, TrialKind::Mos, seed, &pairs)?);
        match assign_trials(&index, TrialKind::Abx, seed, &pairs) {
            Ok(t) => {
                schedules.insert(TrialKind::Abx, t);
            }
            Err(e) => log::warn!("no ABX trials: {e}"),
        }
        let trials = schedules.values().flatten().map(|t| (t.id().to_string(), t.clone())).collect();

        let records = ratings::read_log(log_path)?;
        if let Some(parent) = log_path.parent().filter(|p| !p.as_os_str().is_empty()) {
            crate::fsutil::ensure_dir(parent)?;
        }
        let mut file = OpenOptions::new().create(true).append(true).open(log_path).map_err(Error::io(log_path))?;
        // A line cut short by a crash must not swallow the next record.
        let existing = fs::read(log_path).map_err(Error::io(log_path))?;
        if existing.last().is_some_and(|&b| b != b'\n') {
            file.write_all(b"\n").map_err(Error::io(log_path))?;
        }
        let answered = records.iter().map(|r| (r.trial_id.clone(), r.rater.clone())).collect();
        log::info!("replayed {} ratings from {}", records.len(), log_path.display());
        Ok(Service {
            eval_root: eval_root.into(),
            index: index.into_iter().map(|e| (e.id.clone(), e)).collect(),
            schedules,
            trials,
            pairs,
            log: Mutex::new(Log { file, path: log_path.into(), records, answered }),
        })
    }

    pub fn schedule(&self, kind: TrialKind) -> &[Trial] {
        self.schedules.get(&kind).map(Vec::as_slice).unwrap_or(&[])
    }

    pub fn trial(&self, id: &str) -> Option<&Trial> {
        self.trials.get(id)
    }

    pub async fn records(&self) -> Vec<TrialRecord> {
        self.log.lock().await.records.clone()
    }
}

/// A 4xx answer with a JSON body.
fn problem(status: StatusCode, field: Option<&str>, reason: impl Into<String>) -> Response {
    let mut body = json!({ "error": status.canonical_reason().unwrap_or("error"), "reason": reason.into() });
    if let Some(f) = field {
        body["field"] = json!(f);
    }
    (status, Json(body)).into_response()
}

#[derive(Debug, Deserialize)]
pub struct NextQuery {
    pub rater: Option<String>,
    pub kind: Option<String>,
}

#[derive(Debug, Serialize)]
pub struct SampleRef {
    pub label: String,
    pub id: String,
    pub url: String,
}

fn sample_refs(trial: &Trial) -> Vec<SampleRef> {
    let labels: &[&str] = match trial {
        Trial::Mos { .. } => &["sample"],
        Trial::Abx { .. } => &["A", "B", "X"],
    };
    labels
        .iter()
        .zip(trial.samples())
        .map(|(l, id)| SampleRef { label: l.to_string(), id: id.into(), url: format!("/audio/{id}.wav") })
        .collect()
}

async fn next_trial(State(svc): State<Arc<Service>>, Query(q): Query<NextQuery>) -> Response {
    let Some(rater) = q.rater.filter(|r| !r.trim().is_empty()) else {
        return problem(StatusCode::BAD_REQUEST, Some("rater"), "rater id is required");
    };
    let Some(kind) = q.kind.as_deref().and_then(TrialKind::parse) else {
        return problem(StatusCode::BAD_REQUEST, Some("kind"), "kind must be mos or abx");
    };
    let schedule = svc.schedule(kind);
    if schedule.is_empty() {
        return problem(StatusCode::NOT_FOUND, Some("kind"), format!("no {} trials in this evaluation set", kind.name()));
    }
    let log = svc.log.lock().await;
    let done = schedule.iter().filter(|t| log.answered.contains(&(t.id().to_string(), rater.clone()))).count();
    // Each rater walks the schedule from its own offset.
    let start = (stable_hash(&rater) % schedule.len() as u64) as usize;
    let next = (0..schedule.len())
        .map(|i| &schedule[(start + i) % schedule.len()])
        .find(|t| !log.answered.contains(&(t.id().to_string(), rater.clone())));
    let body = match next {
        Some(t) => json!({
            "done": false,
            "trial_id": t.id(),
            "kind": kind,
            "trial": t,
            "samples": sample_refs(t),
            "progress": done,
            "total": schedule.len(),
        }),
        None => json!({ "done": true, "kind": kind, "progress": done, "total": schedule.len() }),
    };
    Json(body).into_response()
}

fn string_field<'a>(v: &'a Value, name: &str) -> std::result::Result<Option<&'a str>, Response> {
    match v.get(name) {
        None | Some(Value::Null) => Ok(None),
        Some(Value::String(s)) => Ok(Some(s)),
        Some(_) => Err(problem(StatusCode::BAD_REQUEST, Some(name), "must be a string")),
    }
}

fn parse_answer(trial: &Trial, v: &Value) -> std::result::Result<Answer, Response> {
    match trial {
        Trial::Mos { .. } => {
            let score = v
                .get("score")
                .and_then(Value::as_u64)
                .ok_or_else(|| problem(StatusCode::BAD_REQUEST, Some("score"), "MOS trials need an integer score 1..5"))?;
            let score = u8::try_from(score)
                .ok()
                .filter(|s| validate_score(*s).is_ok())
                .ok_or_else(|| problem(StatusCode::BAD_REQUEST, Some("score"), format!("score {score} is outside 1..5")))?;
            Ok(Answer::Mos { score })
        }
        Trial::Abx { .. } => match v.get("choice").and_then(Value::as_str) {
            Some("A") => Ok(Answer::Abx { choice: AbxChoice::A }),
            Some("B") => Ok(Answer::Abx { choice: AbxChoice::B }),
            _ => Err(problem(StatusCode::BAD_REQUEST, Some("choice"), "ABX trials need choice \"A\" or \"B\"")),
        },
    }
}

async fn post_rating(State(svc): State<Arc<Service>>, body: Bytes) -> Response {
    let v: Value = match serde_json::from_slice(&body) {
        Ok(v @ Value::Object(_)) => v,
        Ok(_) => return problem(StatusCode::BAD_REQUEST, None, "body must be a JSON object"),
        Err(e) => return problem(StatusCode::BAD_REQUEST, None, format!("malformed JSON: {e}")),
    };
    let fields = (|| Ok::<_, Response>((string_field(&v, "trial_id")?, string_field(&v, "rater")?, string_field(&v, "device")?)))();
    let (trial_id, rater, device) = match fields {
        Ok(f) => f,
        Err(r) => return r,
    };
    let Some(trial_id) = trial_id else {
        return problem(StatusCode::BAD_REQUEST, Some("trial_id"), "trial_id is required");
    };
    let Some(rater) = rater.filter(|r| !r.trim().is_empty()) else {
        return problem(StatusCode::BAD_REQUEST, Some("rater"), "rater id is required");
    };
    let Some(trial) = svc.trial(trial_id) else {
        return problem(StatusCode::NOT_FOUND, Some("trial_id"), format!("unknown trial {trial_id}"));
    };
    let response = match parse_answer(trial, &v) {
        Ok(a) => a,
        Err(r) => return r,
    };

    let mut log = svc.log.lock().await;
    let key = (trial_id.to_string(), rater.to_string());
    if log.answered.contains(&key) {
        return problem(StatusCode::CONFLICT, Some("trial_id"), format!("rater {rater} already answered {trial_id}"));
    }
    let record = TrialRecord {
        trial_id: trial_id.into(),
        kind: trial.kind(),
        trial: trial.clone(),
        rater: rater.into(),
        response,
        device: device.map(str::to_string),
        timestamp_ms: SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_millis() as u64).unwrap_or(0),
    };
    let mut line = match serde_json::to_string(&record) {
        Ok(l) => l,
        Err(e) => return problem(StatusCode::INTERNAL_SERVER_ERROR, None, e.to_string()),
    };
    line.push('\n');
    let Log { file, path, .. } = &mut *log;
    if let Err(e) = file.write_all(line.as_bytes()).and_then(|_| file.flush()).and_then(|_| file.sync_data()) {
        log::error!("{}: {e}", path.display());
        return problem(StatusCode::INTERNAL_SERVER_ERROR, None, "could not persist the rating");
    }
    log.answered.insert(key);
    log.records.push(record);
    StatusCode::NO_CONTENT.into_response()
}

async fn results(State(svc): State<Arc<Service>>) -> Response {
    let records = svc.records().await;
    match ratings::results(&records, &svc.pairs) {
        Ok(r) => Json(r).into_response(),
        Err(e) => problem(StatusCode::INTERNAL_SERVER_ERROR, None, e.to_string()),
    }
}

async fn audio(State(svc): State<Arc<Service>>, UrlPath(file): UrlPath<String>) -> Response {
    let Some(entry) = file.strip_suffix(".wav").and_then(|id| svc.index.get(id)) else {
        return problem(StatusCode::NOT_FOUND, None, format!("no sample {file}"));
    };
    let path = svc.eval_root.join(&entry.path);
    match tokio::fs::read(&path).await {
        Ok(bytes) => ([(header::CONTENT_TYPE, "audio/wav")], bytes).into_response(),
        Err(e) => {
            log::error!("{}: {e}", path.display());
            problem(StatusCode::NOT_FOUND, None, format!("sample {file} is listed but unreadable"))
        }
    }
}

pub fn router(svc: Arc<Service>) -> Router {
    Router::new()
        .route("/api/session/next", get(next_trial))
        .route("/api/rating", post(post_rating))
        .route("/api/results", get(results))
        .route("/audio/{file}", get(audio))
        .with_state(svc)
}

/// Serves until interrupted.
pub async fn serve(svc: Arc<Service>, host: &str, port: u16) -> Result<()> {
    let addr = format!("{host}:{port}");
    let listener = tokio::net::TcpListener::bind(&addr).await.map_err(Error::io(&addr))?;
    log::info!("listening on http://{addr}");
    axum::serve(listener, router(svc))
        .with_graceful_shutdown(async {
            let _ = tokio::signal::ctrl_c().await;
        })
        .await
        .map_err(Error::io(addr))
}
