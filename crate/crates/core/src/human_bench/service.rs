use std::collections::HashMap;
use std::path::{Path, PathBuf};
use std::sync::{Arc, Mutex};
use std::time::{SystemTime, UNIX_EPOCH};

use axum::extract::{Path as UrlPath, State};
use axum::http::{header, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use serde::{Deserialize, Serialize};

use super::aggregate::StudyReport;
use super::assign::Assigner;
use super::demographics::Demographics;
use super::store::{AnnotationStore, SessionRecord};
use super::{Annotation, GroundTruth, HumanBenchError, StudyConfig};

pub const STUDY_FILE: &str = "study.json";

type Clock = Box<dyn Fn() -> u64 + Send + Sync>;

fn wall_clock_ms() -> u64 {
    SystemTime::now().duration_since(UNIX_EPOCH).map_or(0, |d| d.as_millis() as u64)
}

struct Inner {
    assigner: Assigner,
    store: AnnotationStore,
}

/// A running study: configuration, ground truth and the serialized
/// assignment/annotation state.
pub struct Study {
    cfg: StudyConfig,
    base: PathBuf,
    gt: HashMap<String, GroundTruth>,
    /// public id -> image id
    public: HashMap<String, String>,
    inner: Mutex<Inner>,
    clock: Clock,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BatchImage {
    pub id: String,
    pub url: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnnotationFailure {
    pub annotation_id: String,
    pub message: String,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct SubmitOutcome {
    pub accepted: usize,
    pub duplicates: usize,
    pub errors: Vec<AnnotationFailure>,
}

impl Study {
    fn build(cfg: StudyConfig, base: PathBuf, store: AnnotationStore) -> Result<Self, HumanBenchError> {
        cfg.validate()?;
        let gt = cfg.ground_truth(&base)?;
        let public = cfg.images.iter().map(|i| (cfg.public_id(&i.id), i.id.clone())).collect();
        let mut assigner = Assigner::new(&cfg);
        for s in store.sessions() {
            assigner.open_session(&s.session_id, s.demographics);
        }
        for a in store.annotations() {
            assigner.replay(a);
        }
        Ok(Self { cfg, base, gt, public, inner: Mutex::new(Inner { assigner, store }), clock: Box::new(wall_clock_ms) })
    }

    /// Opens `<dir>/study.json` (or the given config file) and replays the
    /// session and annotation logs next to it.
    pub fn open(path: impl AsRef<Path>) -> Result<Self, HumanBenchError> {
        let path = path.as_ref();
        let file = if path.is_dir() { path.join(STUDY_FILE) } else { path.to_path_buf() };
        let dir = file.parent().map(Path::to_path_buf).unwrap_or_else(|| PathBuf::from("."));
        let cfg = StudyConfig::load(&file)?;
        let store = AnnotationStore::open(&dir)?;
        Self::build(cfg, dir, store)
    }

    /// No persistence; image paths resolve against `base`.
    pub fn in_memory(cfg: StudyConfig, base: impl Into<PathBuf>) -> Result<Self, HumanBenchError> {
        Self::build(cfg, base.into(), AnnotationStore::in_memory())
    }

    pub fn with_clock(mut self, clock: impl Fn() -> u64 + Send + Sync + 'static) -> Self {
        self.clock = Box::new(clock);
        self
    }

    pub fn config(&self) -> &StudyConfig {
        &self.cfg
    }

    pub fn ground_truth(&self) -> &HashMap<String, GroundTruth> {
        &self.gt
    }

    fn lock(&self) -> std::sync::MutexGuard<'_, Inner> {
        self.inner.lock().unwrap_or_else(|p| p.into_inner())
    }

    pub fn create_session(&self, demographics: Demographics) -> Result<String, HumanBenchError> {
        let id = uuid::Uuid::new_v4().simple().to_string();
        let mut inner = self.lock();
        inner.store.add_session(SessionRecord { session_id: id.clone(), demographics, created_ms: (self.clock)() })?;
        inner.assigner.open_session(&id, demographics);
        Ok(id)
    }

    pub fn next_batch(&self, session: &str) -> Result<Vec<BatchImage>, HumanBenchError> {
        let ids = self.lock().assigner.next_batch(session, (self.clock)())?;
        let mut out: Vec<BatchImage> = ids
            .iter()
            .map(|id| {
                let public = self.cfg.public_id(id);
                BatchImage { url: format!("/img/{public}"), id: public }
            })
            .collect();
        out.sort_by(|a, b| a.id.cmp(&b.id));
        Ok(out)
    }

    /// Stores every valid annotation; ids already stored count as duplicates.
    /// `image_id` is the public id from the batch.
    pub fn submit(&self, session: &str, annotations: Vec<Annotation>) -> Result<SubmitOutcome, HumanBenchError> {
        let mut inner = self.lock();
        if inner.assigner.session(session).is_none() {
            return Err(HumanBenchError::UnknownSession(session.to_string()));
        }
        let mut outcome = SubmitOutcome::default();
        for mut a in annotations {
            if inner.store.contains(&a.annotation_id) {
                outcome.duplicates += 1;
                continue;
            }
            a.session_id = session.to_string();
            let checked = a.validate().and_then(|()| match self.public.get(&a.image_id) {
                Some(id) => {
                    a.image_id = id.clone();
                    inner.assigner.record(&a)
                }
                None => Err(HumanBenchError::UnknownImage(a.image_id.clone())),
            });
            match checked.and_then(|()| inner.store.append(a.clone()).map(|_| ())) {
                Ok(()) => outcome.accepted += 1,
                Err(e) => outcome.errors.push(AnnotationFailure {
                    annotation_id: a.annotation_id.clone(),
                    message: match e {
                        HumanBenchError::InvalidAnnotation { reason, .. } => reason,
                        other => other.to_string(),
                    },
                }),
            }
        }
        Ok(outcome)
    }

    /// Snapshot of the stored annotations (internal image ids).
    pub fn annotations(&self) -> Vec<Annotation> {
        self.lock().store.annotations().to_vec()
    }

    pub fn report(&self) -> Result<StudyReport, HumanBenchError> {
        let (sessions, annotations) = {
            let inner = self.lock();
            (inner.store.sessions().to_vec(), inner.store.annotations().to_vec())
        };
        StudyReport::build(&self.cfg, &self.gt, &sessions, &annotations)
    }

    pub fn image_file(&self, public_id: &str) -> Option<PathBuf> {
        let id = self.public.get(public_id)?;
        let img = self.cfg.images.iter().find(|i| &i.id == id)?;
        Some(self.base.join(&img.path))
    }
}

#[derive(Deserialize)]
struct SessionRequest {
    demographics: Demographics,
}

#[derive(Serialize)]
struct SessionResponse {
    session_id: String,
}

#[derive(Serialize)]
struct BatchResponse {
    images: Vec<BatchImage>,
}

#[derive(Deserialize)]
#[serde(untagged)]
enum AnnotationBody {
    List(Vec<Annotation>),
    Wrapped { annotations: Vec<Annotation> },
}

fn error(status: StatusCode, e: &HumanBenchError) -> Response {
    let code = match e {
        HumanBenchError::PoolExhausted => "pool_exhausted",
        HumanBenchError::UnknownSession(_) => "unknown_session",
        HumanBenchError::UnknownImage(_) => "unknown_image",
        _ => "error",
    };
    (status, Json(serde_json::json!({ "error": code, "message": e.to_string() }))).into_response()
}

fn status_of(e: &HumanBenchError) -> StatusCode {
    match e {
        HumanBenchError::UnknownSession(_) | HumanBenchError::UnknownImage(_) => StatusCode::NOT_FOUND,
        HumanBenchError::PoolExhausted => StatusCode::CONFLICT,
        HumanBenchError::InvalidAnnotation { .. } => StatusCode::UNPROCESSABLE_ENTITY,
        _ => StatusCode::INTERNAL_SERVER_ERROR,
    }
}

fn respond<T: Serialize>(r: Result<T, HumanBenchError>) -> Response {
    match r {
        Ok(v) => Json(v).into_response(),
        Err(e) => error(status_of(&e), &e),
    }
}

async fn create_session(State(study): State<Arc<Study>>, Json(req): Json<SessionRequest>) -> Response {
    respond(study.create_session(req.demographics).map(|session_id| SessionResponse { session_id }))
}

async fn batch(State(study): State<Arc<Study>>, UrlPath(id): UrlPath<String>) -> Response {
    respond(study.next_batch(&id).map(|images| BatchResponse { images }))
}

async fn annotations(State(study): State<Arc<Study>>, UrlPath(id): UrlPath<String>, Json(body): Json<AnnotationBody>) -> Response {
    let list = match body {
        AnnotationBody::List(l) | AnnotationBody::Wrapped { annotations: l } => l,
    };
    match study.submit(&id, list) {
        Ok(outcome) if outcome.errors.is_empty() => Json(outcome).into_response(),
        Ok(outcome) => (StatusCode::UNPROCESSABLE_ENTITY, Json(outcome)).into_response(),
        Err(e) => error(status_of(&e), &e),
    }
}

async fn report(State(study): State<Arc<Study>>) -> Response {
    let study = study.clone();
    match tokio::task::spawn_blocking(move || study.report()).await {
        Ok(r) => respond(r),
        Err(e) => (StatusCode::INTERNAL_SERVER_ERROR, e.to_string()).into_response(),
    }
}

async fn image(State(study): State<Arc<Study>>, UrlPath(public_id): UrlPath<String>) -> Response {
    let Some(path) = study.image_file(&public_id) else {
        return StatusCode::NOT_FOUND.into_response();
    };
    let mime = match path.extension().and_then(|e| e.to_str()).map(str::to_ascii_lowercase).as_deref() {
        Some("jpg" | "jpeg") => "image/jpeg",
        Some("webp") => "image/webp",
        _ => "image/png",
    };
    match tokio::fs::read(&path).await {
        Ok(bytes) => ([(header::CONTENT_TYPE, mime), (header::CACHE_CONTROL, "no-store")], bytes).into_response(),
        Err(_) => StatusCode::NOT_FOUND.into_response(),
    }
}

/// `POST /session`, `GET /session/{id}/batch`, `POST /session/{id}/annotations`,
/// `GET /study/report` and `GET /img/{id}`.
pub fn study_router(study: Arc<Study>) -> Router {
    Router::new()
        .route("/session", post(create_session))
        .route("/session/{id}/batch", get(batch))
        .route("/session/{id}/annotations", post(annotations))
        .route("/study/report", get(report))
        .route("/img/{id}", get(image))
        .route("/healthz", get(|| async { "ok" }))
        .with_state(study)
}
