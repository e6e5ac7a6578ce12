//! HTTP survey service.
//!
//! Endpoints:
//!
//! * `POST /sessions` with `{"annotator_id": "...", "task": "intrusion" | "rating" (optional)}`
//!   creates a session and returns it with its assigned item ids (201).
//! * `GET /sessions/{id}` returns the session with its progress.
//! * `GET /sessions/{id}/next` returns the next unanswered item, or `{"done": true}`.
//!   Intrusion options are shuffled with the session seed; the payload never
//!   carries the answer.
//! * `POST /sessions/{id}/responses` with `{"item_id", "response", "familiar", "duration"}`
//!   records an answer (201). `response` is the zero-based position of the
//!   chosen word as served for intrusion items and the 1 to 3 rating for rating
//!   items. `familiar` is a boolean or one boolean per served word. A second
//!   answer to the same item returns 409, an unknown session 404.
//! * `GET /export` returns every response as CSV in the responses schema,
//!   ordered by `submitted_at` then `annotator_id`.
//!
//! Every session and response is appended to a newline-delimited JSON log and
//! synced to disk before the request is acknowledged. Opening a store replays
//! the log, so a restart recovers every acknowledged write.

use std::collections::{HashMap, HashSet};
use std::fs::{File, OpenOptions};
use std::io::{BufRead, BufReader, Seek, SeekFrom, Write};
use std::path::{Path, PathBuf};
use std::sync::{Arc, Mutex};

use axum::extract::{Path as UrlPath, State};
use axum::http::{header, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use chrono::{DateTime, SubsecRound, Utc};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use serde::{Deserialize, Serialize};

use topeval::humaneval::{assign_items, sort_for_export, write_responses_csv, AnnotationRecord, Familiarity, SurveyItem};
use topeval::rng::{derive_seed, SimRng};
use topeval::stats::power::Task;

use crate::files::write_atomic;

pub const RATING_LABELS: [&str; 3] = ["Not related", "Somewhat related", "Very related"];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ServiceConfig {
    /// Share of the (task-filtered) items assigned to each session.
    pub item_fraction: f64,
    pub seed: u64,
    /// Rewrite this CSV every `export_every` responses.
    pub export_path: Option<PathBuf>,
    pub export_every: usize,
}

impl Default for ServiceConfig {
    fn default() -> Self {
        Self { item_fraction: topeval::humaneval::DEFAULT_ITEM_FRACTION, seed: 0, export_path: None, export_every: 25 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SurveySession {
    pub session_id: String,
    pub annotator_id: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub task: Option<Task>,
    pub assigned_items: Vec<String>,
    pub started_at: DateTime<Utc>,
    pub seed: u64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
enum LogEntry {
    Session(SurveySession),
    Response { session_id: String, record: AnnotationRecord },
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CreateSession {
    pub annotator_id: String,
    #[serde(default)]
    pub task: Option<Task>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Submission {
    pub item_id: String,
    pub response: u32,
    pub familiar: Familiarity,
    pub duration: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RatingOption {
    pub value: u32,
    pub label: String,
}

/// One item as served to the annotation UI.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ServedItem {
    pub session_id: String,
    pub item_id: String,
    pub task: Task,
    pub words: Vec<String>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub scale: Vec<RatingOption>,
    /// One-based position in the assignment.
    pub position: usize,
    pub total: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SessionStatus {
    #[serde(flatten)]
    pub session: SurveySession,
    pub answered: usize,
    pub completed: bool,
}

#[derive(Debug, thiserror::Error)]
pub enum ServiceError {
    #[error("unknown session {0}")]
    NotFound(String),
    #[error("{0}")]
    Conflict(String),
    #[error("{0}")]
    Invalid(String),
    #[error("storage failure: {0}")]
    Storage(String),
}

impl IntoResponse for ServiceError {
    fn into_response(self) -> Response {
        let status = match &self {
            ServiceError::NotFound(_) => StatusCode::NOT_FOUND,
            ServiceError::Conflict(_) => StatusCode::CONFLICT,
            ServiceError::Invalid(_) => StatusCode::UNPROCESSABLE_ENTITY,
            ServiceError::Storage(_) => StatusCode::INTERNAL_SERVER_ERROR,
        };
        (status, Json(serde_json::json!({ "error": self.to_string() }))).into_response()
    }
}

struct SessionState {
    session: SurveySession,
    answered: HashSet<String>,
}

struct Inner {
    log: File,
    sessions: HashMap<String, SessionState>,
    records: Vec<AnnotationRecord>,
}

pub struct Store {
    items: Vec<SurveyItem>,
    index: HashMap<String, usize>,
    cfg: ServiceConfig,
    inner: Mutex<Inner>,
}

/// Served-position to stored-position map for one item of a session.
fn option_order(session: &SurveySession, position: usize, item: &SurveyItem) -> Vec<usize> {
    let n = item.displayed_words().len();
    let mut order: Vec<usize> = (0..n).collect();
    if matches!(item, SurveyItem::Intrusion(_)) {
        order.shuffle(&mut SimRng::seed_from_u64(derive_seed(session.seed, position as u64)));
    }
    order
}

impl Store {
    /// Opens the store, replaying `log_path` if it exists. A torn final line
    /// left by a crash mid-write is dropped; any other malformed line is an error.
    pub fn open(items: Vec<SurveyItem>, log_path: &Path, cfg: ServiceConfig) -> std::io::Result<Self> {
        let invalid = |m: String| std::io::Error::new(std::io::ErrorKind::InvalidData, m);
        let mut index = HashMap::new();
        for (i, it) in items.iter().enumerate() {
            if index.insert(it.item_id().to_string(), i).is_some() {
                return Err(invalid(format!("duplicate item id {}", it.item_id())));
            }
        }
        if let Some(dir) = log_path.parent().filter(|d| !d.as_os_str().is_empty()) {
            std::fs::create_dir_all(dir)?;
        }
        let mut log = OpenOptions::new().create(true).read(true).append(true).open(log_path)?;
        let mut sessions: HashMap<String, SessionState> = HashMap::new();
        let mut records = Vec::new();
        let mut good_len = 0u64;
        let mut torn = false;
        {
            let mut reader = BufReader::new(&log);
            let mut line = String::new();
            let mut n = 0;
            loop {
                line.clear();
                let read = reader.read_line(&mut line)?;
                if read == 0 {
                    break;
                }
                n += 1;
                let complete = line.ends_with('\n');
                match serde_json::from_str::<LogEntry>(line.trim_end()) {
                    Ok(_) if !complete => torn = true,
                    Ok(LogEntry::Session(s)) => {
                        sessions.insert(s.session_id.clone(), SessionState { session: s, answered: HashSet::new() });
                    }
                    Ok(LogEntry::Response { session_id, record }) => {
                        let st = sessions.get_mut(&session_id).ok_or_else(|| invalid(format!("log line {n}: response for unknown session {session_id}")))?;
                        st.answered.insert(record.item_id.clone());
                        records.push(record);
                    }
                    Err(_) if !complete => torn = true,
                    Err(e) => return Err(invalid(format!("log line {n}: {e}"))),
                }
                if torn {
                    break;
                }
                good_len += read as u64;
            }
        }
        if torn {
            log::warn!("dropping a torn final line from {}", log_path.display());
            log.set_len(good_len)?;
            log.seek(SeekFrom::End(0))?;
        }
        log::info!("survey store: {} sessions and {} responses recovered", sessions.len(), records.len());
        Ok(Self { items, index, cfg, inner: Mutex::new(Inner { log, sessions, records }) })
    }

    pub fn items(&self) -> &[SurveyItem] {
        &self.items
    }

    fn append(inner: &mut Inner, entry: &LogEntry) -> Result<(), ServiceError> {
        let mut line = serde_json::to_vec(entry).map_err(|e| ServiceError::Storage(e.to_string()))?;
        line.push(b'\n');
        inner.log.write_all(&line).and_then(|_| inner.log.sync_data()).map_err(|e| ServiceError::Storage(e.to_string()))
    }

    fn lock(&self) -> std::sync::MutexGuard<'_, Inner> {
        self.inner.lock().unwrap_or_else(|p| p.into_inner())
    }

    pub fn create_session(&self, req: CreateSession) -> Result<SurveySession, ServiceError> {
        if req.annotator_id.trim().is_empty() {
            return Err(ServiceError::Invalid("annotator_id must be nonempty".into()));
        }
        let ids: Vec<String> = self.items.iter().filter(|i| req.task.is_none_or(|t| i.task() == t)).map(|i| i.item_id().to_string()).collect();
        let mut inner = self.lock();
        let seed = derive_seed(self.cfg.seed, inner.sessions.len() as u64);
        let assigned = assign_items(&ids, self.cfg.item_fraction, seed).map_err(|e| ServiceError::Invalid(e.to_string()))?;
        let session = SurveySession {
            session_id: uuid::Uuid::new_v4().to_string(),
            annotator_id: req.annotator_id,
            task: req.task,
            assigned_items: assigned,
            started_at: Utc::now().trunc_subsecs(3),
            seed,
        };
        Self::append(&mut inner, &LogEntry::Session(session.clone()))?;
        inner.sessions.insert(session.session_id.clone(), SessionState { session: session.clone(), answered: HashSet::new() });
        Ok(session)
    }

    pub fn status(&self, session_id: &str) -> Result<SessionStatus, ServiceError> {
        let inner = self.lock();
        let st = inner.sessions.get(session_id).ok_or_else(|| ServiceError::NotFound(session_id.into()))?;
        Ok(SessionStatus { session: st.session.clone(), answered: st.answered.len(), completed: st.answered.len() == st.session.assigned_items.len() })
    }

    /// Next unanswered item in assignment order, or `None` when the session is complete.
    pub fn next_item(&self, session_id: &str) -> Result<Option<ServedItem>, ServiceError> {
        let inner = self.lock();
        let st = inner.sessions.get(session_id).ok_or_else(|| ServiceError::NotFound(session_id.into()))?;
        let Some((pos, id)) = st.session.assigned_items.iter().enumerate().find(|(_, id)| !st.answered.contains(*id)) else {
            return Ok(None);
        };
        let item = &self.items[self.index[id]];
        let order = option_order(&st.session, pos, item);
        let words = order.iter().map(|&j| item.displayed_words()[j].clone()).collect();
        let scale = match item {
            SurveyItem::Rating(_) => RATING_LABELS.iter().zip(1..).map(|(l, v)| RatingOption { value: v, label: l.to_string() }).collect(),
            SurveyItem::Intrusion(_) => Vec::new(),
        };
        Ok(Some(ServedItem {
            session_id: session_id.into(),
            item_id: id.clone(),
            task: item.task(),
            words,
            scale,
            position: pos + 1,
            total: st.session.assigned_items.len(),
        }))
    }

    pub fn submit(&self, session_id: &str, sub: Submission) -> Result<AnnotationRecord, ServiceError> {
        let mut inner = self.lock();
        let st = inner.sessions.get(session_id).ok_or_else(|| ServiceError::NotFound(session_id.into()))?;
        let pos = st
            .session
            .assigned_items
            .iter()
            .position(|i| *i == sub.item_id)
            .ok_or_else(|| ServiceError::Invalid(format!("item {} is not assigned to this session", sub.item_id)))?;
        if st.answered.contains(&sub.item_id) {
            return Err(ServiceError::Conflict(format!("item {} already answered in this session", sub.item_id)));
        }
        let item = &self.items[self.index[&sub.item_id]];
        let order = option_order(&st.session, pos, item);
        let response = match item {
            SurveyItem::Intrusion(_) => {
                *order.get(sub.response as usize).ok_or_else(|| ServiceError::Invalid(format!("response {} outside the served options", sub.response)))? as u32
            }
            SurveyItem::Rating(_) => sub.response,
        };
        let familiar = match sub.familiar {
            Familiarity::PerWord(flags) => {
                if flags.len() != order.len() {
                    return Err(ServiceError::Invalid(format!("expected {} familiarity flags, got {}", order.len(), flags.len())));
                }
                let mut stored = vec![false; flags.len()];
                for (served, &j) in order.iter().enumerate() {
                    stored[j] = flags[served];
                }
                Familiarity::PerWord(stored)
            }
            f => f,
        };
        let record = AnnotationRecord {
            annotator_id: st.session.annotator_id.clone(),
            item_id: sub.item_id.clone(),
            task: item.task(),
            response,
            familiar,
            duration: sub.duration,
            submitted_at: Utc::now().trunc_subsecs(3),
        };
        record.validate_for(item).map_err(|e| ServiceError::Invalid(e.to_string()))?;
        Self::append(&mut inner, &LogEntry::Response { session_id: session_id.into(), record: record.clone() })?;
        inner.sessions.get_mut(session_id).expect("session checked").answered.insert(sub.item_id);
        inner.records.push(record.clone());
        let n = inner.records.len();
        let snapshot = (self.cfg.export_every > 0 && n.is_multiple_of(self.cfg.export_every)).then(|| inner.records.clone());
        drop(inner);
        if let (Some(records), Some(path)) = (snapshot, &self.cfg.export_path) {
            if let Err(e) = write_atomic(path, &export_bytes(records)) {
                log::warn!("periodic export to {} failed: {e}", path.display());
            }
        }
        Ok(record)
    }

    pub fn records(&self) -> Vec<AnnotationRecord> {
        self.lock().records.clone()
    }

    pub fn export_csv(&self) -> Vec<u8> {
        export_bytes(self.records())
    }
}

/// Responses CSV in export order.
pub fn export_bytes(mut records: Vec<AnnotationRecord>) -> Vec<u8> {
    sort_for_export(&mut records);
    let mut out = Vec::new();
    write_responses_csv(&records, &mut out).expect("writing to memory");
    out
}

/// Reads the responses recorded in a service log without opening it for writing.
pub fn read_log_records(log_path: &Path) -> std::io::Result<Vec<AnnotationRecord>> {
    let mut out = Vec::new();
    for (n, line) in BufReader::new(File::open(log_path)?).lines().enumerate() {
        let line = line?;
        match serde_json::from_str::<LogEntry>(&line) {
            Ok(LogEntry::Response { record, .. }) => out.push(record),
            Ok(LogEntry::Session(_)) => {}
            Err(e) => log::warn!("skipping unreadable log line {}: {e}", n + 1),
        }
    }
    Ok(out)
}

type Shared = State<Arc<Store>>;

async fn create_session(State(store): Shared, Json(req): Json<CreateSession>) -> Result<(StatusCode, Json<SurveySession>), ServiceError> {
    let s = tokio::task::spawn_blocking(move || store.create_session(req)).await.map_err(|e| ServiceError::Storage(e.to_string()))??;
    Ok((StatusCode::CREATED, Json(s)))
}

async fn session_status(State(store): Shared, UrlPath(id): UrlPath<String>) -> Result<Json<SessionStatus>, ServiceError> {
    store.status(&id).map(Json)
}

async fn next_item(State(store): Shared, UrlPath(id): UrlPath<String>) -> Result<Response, ServiceError> {
    Ok(match store.next_item(&id)? {
        Some(item) => Json(item).into_response(),
        None => Json(serde_json::json!({ "session_id": id, "done": true })).into_response(),
    })
}

async fn submit(State(store): Shared, UrlPath(id): UrlPath<String>, Json(sub): Json<Submission>) -> Result<(StatusCode, Json<AnnotationRecord>), ServiceError> {
    let r = tokio::task::spawn_blocking(move || store.submit(&id, sub)).await.map_err(|e| ServiceError::Storage(e.to_string()))??;
    Ok((StatusCode::CREATED, Json(r)))
}

async fn export(State(store): Shared) -> impl IntoResponse {
    ([(header::CONTENT_TYPE, "text/csv; charset=utf-8")], store.export_csv())
}

pub fn router(store: Arc<Store>) -> Router {
    Router::new()
        .route("/sessions", post(create_session))
        .route("/sessions/{id}", get(session_status))
        .route("/sessions/{id}/next", get(next_item))
        .route("/sessions/{id}/responses", post(submit))
        .route("/export", get(export))
        .with_state(store)
}

/// Serves until Ctrl-C.
pub async fn serve(store: Arc<Store>, addr: &str) -> std::io::Result<()> {
    let listener = tokio::net::TcpListener::bind(addr).await?;
    log::info!("survey service listening on {}", listener.local_addr()?);
    axum::serve(listener, router(store))
        .with_graceful_shutdown(async {
            let _ = tokio::signal::ctrl_c().await;
        })
        .await
}
