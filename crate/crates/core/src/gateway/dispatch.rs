use std::fs::OpenOptions;
use std::io::Write;
use std::path::PathBuf;
use std::sync::{Arc, Mutex};
use std::time::{Duration, Instant};

use serde::Serialize;

use super::mock::MockWorker;
use super::protocol::{Route, WorkerRequest, WorkerResponse};
use super::{WorkerHandle, WorkerRole};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum TransportError {
    #[error("worker unreachable: {0}")]
    Unavailable(String),
    #[error("worker returned HTTP {status}: {body}")]
    Status { status: u16, body: String },
    #[error("request timed out")]
    Timeout,
    #[error("malformed worker response: {0}")]
    Decode(String),
}

impl TransportError {
    fn is_transient(&self) -> bool {
        match self {
            TransportError::Unavailable(_) | TransportError::Timeout => true,
            TransportError::Status { status, .. } => *status >= 500 || *status == 429,
            TransportError::Decode(_) => false,
        }
    }
}

pub trait WorkerTransport: Send + Sync {
    fn call(&self, route: Route, request: &WorkerRequest) -> Result<WorkerResponse, TransportError>;
}

pub struct HttpWorker {
    base_url: String,
    client: reqwest::blocking::Client,
}

impl HttpWorker {
    pub fn new(base_url: impl Into<String>, timeout: Duration) -> Result<Self, TransportError> {
        let client = reqwest::blocking::Client::builder()
            .timeout(timeout)
            .build()
            .map_err(|e| TransportError::Unavailable(e.to_string()))?;
        Ok(Self { base_url: base_url.into().trim_end_matches('/').to_string(), client })
    }
}

impl WorkerTransport for HttpWorker {
    fn call(&self, route: Route, request: &WorkerRequest) -> Result<WorkerResponse, TransportError> {
        let url = format!("{}{}", self.base_url, route.path());
        let resp = self.client.post(url).json(request).send().map_err(|e| {
            if e.is_timeout() {
                TransportError::Timeout
            } else {
                TransportError::Unavailable(e.to_string())
            }
        })?;
        let status = resp.status();
        if !status.is_success() {
            return Err(TransportError::Status { status: status.as_u16(), body: resp.text().unwrap_or_default() });
        }
        resp.json().map_err(|e| TransportError::Decode(e.to_string()))
    }
}

/// Picks a transport for an endpoint string: `mock://` runs the in-process
/// mock worker, anything else is treated as an HTTP base URL.
pub fn transport_for(endpoint: &str, timeout: Duration) -> Result<Arc<dyn WorkerTransport>, TransportError> {
    if endpoint.starts_with("mock://") {
        Ok(Arc::new(MockWorker::default()))
    } else {
        Ok(Arc::new(HttpWorker::new(endpoint, timeout)?))
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RetryPolicy {
    pub attempts: u32,
    pub base_delay: Duration,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        Self { attempts: 3, base_delay: Duration::from_millis(250) }
    }
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum DispatchError {
    #[error("worker role {role:?} cannot serve {route:?}")]
    RoleMismatch { role: WorkerRole, route: Route },
    #[error("worker does not support {0} preservation")]
    UnsupportedPreservation(crate::manifest::Preservation),
    #[error("worker unavailable after {attempts} attempts: {reason}")]
    WorkerUnavailable { attempts: u32, reason: String },
    #[error("worker error {status} after {attempts} attempts: {body}")]
    WorkerError { status: u16, body: String, attempts: u32 },
    #[error("worker timed out after {attempts} attempts")]
    Timeout { attempts: u32 },
    #[error("bad worker response: {0}")]
    BadResponse(String),
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ProvenanceEntry {
    pub job_id: String,
    pub worker: String,
    pub model: String,
    pub version: String,
    pub attempts: u32,
    pub latency_ms: u64,
}

/// Append-only record of dispatched jobs, optionally mirrored to a JSONL file.
#[derive(Default)]
pub struct ProvenanceLog {
    entries: Mutex<Vec<ProvenanceEntry>>,
    file: Option<PathBuf>,
}

impl ProvenanceLog {
    pub fn to_file(path: impl Into<PathBuf>) -> Self {
        Self { entries: Mutex::new(Vec::new()), file: Some(path.into()) }
    }

    pub fn append(&self, entry: ProvenanceEntry) {
        let mut entries = self.entries.lock().unwrap();
        if let Some(path) = &self.file {
            let line = serde_json::to_string(&entry).expect("provenance serializes");
            let written = OpenOptions::new()
                .create(true)
                .append(true)
                .open(path)
                .and_then(|mut f| writeln!(f, "{line}"));
            if let Err(e) = written {
                log::warn!("cannot append provenance to {}: {e}", path.display());
            }
        }
        entries.push(entry);
    }

    pub fn entries(&self) -> Vec<ProvenanceEntry> {
        self.entries.lock().unwrap().clone()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dispatched {
    pub response: WorkerResponse,
    pub attempts: u32,
    pub latency: Duration,
}

fn role_serves(role: WorkerRole, route: Route) -> bool {
    role.route() == route
}

/// Sends one request, retrying transient failures (unreachable worker,
/// timeout, 5xx, 429) with exponential backoff.
pub fn dispatch(
    request: &WorkerRequest,
    route: Route,
    worker: &WorkerHandle,
    retry: RetryPolicy,
    log: Option<&ProvenanceLog>,
) -> Result<Dispatched, DispatchError> {
    let desc = &worker.descriptor;
    if !role_serves(desc.role, route) {
        return Err(DispatchError::RoleMismatch { role: desc.role, route });
    }
    if let Some(p) = request.preservation {
        if desc.role == WorkerRole::Inpaint && !desc.supports_preservation.contains(&p) {
            return Err(DispatchError::UnsupportedPreservation(p));
        }
    }
    let mut request = request.clone();
    for (k, v) in &desc.params {
        request.params.entry(k.clone()).or_insert_with(|| v.clone());
    }

    let attempts = retry.attempts.max(1);
    let started = Instant::now();
    let mut last = None;
    for attempt in 1..=attempts {
        match worker.transport.call(route, &request) {
            Ok(response) => {
                if response.job_id != request.job_id {
                    return Err(DispatchError::BadResponse(format!(
                        "job id {} echoed as {}",
                        request.job_id, response.job_id
                    )));
                }
                let latency = started.elapsed();
                if let Some(log) = log {
                    log.append(ProvenanceEntry {
                        job_id: request.job_id.clone(),
                        worker: desc.endpoint.clone(),
                        model: response.model.clone(),
                        version: response.version.clone(),
                        attempts: attempt,
                        latency_ms: latency.as_millis() as u64,
                    });
                }
                return Ok(Dispatched { response, attempts: attempt, latency });
            }
            Err(e) if e.is_transient() => {
                log::debug!("job {} attempt {attempt}/{attempts}: {e}", request.job_id);
                last = Some(e);
                if attempt < attempts {
                    std::thread::sleep(retry.base_delay * 2u32.pow(attempt - 1));
                }
            }
            Err(TransportError::Status { status, body }) => {
                return Err(DispatchError::WorkerError { status, body, attempts: attempt })
            }
            Err(e) => return Err(DispatchError::BadResponse(e.to_string())),
        }
    }
    Err(match last {
        Some(TransportError::Status { status, body }) => DispatchError::WorkerError { status, body, attempts },
        Some(TransportError::Timeout) => DispatchError::Timeout { attempts },
        Some(other) => DispatchError::WorkerUnavailable { attempts, reason: other.to_string() },
        None => DispatchError::WorkerUnavailable { attempts, reason: "no attempt made".into() },
    })
}

#[cfg(test)]
mod tests {
    use std::collections::VecDeque;

    use super::*;
    use crate::gateway::{WorkerDescriptor, WorkerOutputs};

    struct Scripted {
        replies: Mutex<VecDeque<Result<WorkerResponse, TransportError>>>,
        calls: Mutex<u32>,
    }

    impl Scripted {
        fn new(replies: Vec<Result<WorkerResponse, TransportError>>) -> Arc<Self> {
            Arc::new(Self { replies: Mutex::new(replies.into()), calls: Mutex::new(0) })
        }
    }

    impl WorkerTransport for Scripted {
        fn call(&self, _route: Route, _req: &WorkerRequest) -> Result<WorkerResponse, TransportError> {
            *self.calls.lock().unwrap() += 1;
            self.replies.lock().unwrap().pop_front().unwrap_or(Err(TransportError::Timeout))
        }
    }

    fn handle(role: WorkerRole, transport: Arc<dyn WorkerTransport>) -> WorkerHandle {
        WorkerHandle::new(
            WorkerDescriptor {
                role,
                endpoint: "test://".into(),
                pipeline: None,
                model: "m".into(),
                supports_preservation: vec![],
                params: Default::default(),
            },
            transport,
        )
    }

    fn ok(job: &str) -> Result<WorkerResponse, TransportError> {
        Ok(WorkerResponse {
            job_id: job.into(),
            outputs: WorkerOutputs { caption: Some("a dog on a beach".into()), ..Default::default() },
            model: "m".into(),
            version: "1".into(),
        })
    }

    fn fast() -> RetryPolicy {
        RetryPolicy { attempts: 3, base_delay: Duration::from_millis(1) }
    }

    fn err500() -> Result<WorkerResponse, TransportError> {
        Err(TransportError::Status { status: 500, body: "boom".into() })
    }

    #[test]
    fn three_server_errors_give_worker_error() {
        let t = Scripted::new(vec![err500(), err500(), err500(), ok("j")]);
        let w = handle(WorkerRole::Caption, t.clone());
        let err = dispatch(&WorkerRequest::new("j", String::new()), Route::Caption, &w, fast(), None).unwrap_err();
        assert_eq!(err, DispatchError::WorkerError { status: 500, body: "boom".into(), attempts: 3 });
        assert_eq!(*t.calls.lock().unwrap(), 3);
    }

    #[test]
    fn transient_failure_then_success() {
        let t = Scripted::new(vec![Err(TransportError::Unavailable("refused".into())), ok("j")]);
        let w = handle(WorkerRole::Caption, t);
        let log = ProvenanceLog::default();
        let d = dispatch(&WorkerRequest::new("j", String::new()), Route::Caption, &w, fast(), Some(&log)).unwrap();
        assert_eq!(d.attempts, 2);
        assert_eq!(d.response.outputs.caption.as_deref(), Some("a dog on a beach"));
        assert_eq!(log.entries()[0].attempts, 2);
    }

    #[test]
    fn client_errors_are_not_retried() {
        let t = Scripted::new(vec![Err(TransportError::Status { status: 422, body: "no".into() })]);
        let w = handle(WorkerRole::Inpaint, t.clone());
        let err = dispatch(&WorkerRequest::new("j", String::new()), Route::Inpaint, &w, fast(), None).unwrap_err();
        assert!(matches!(err, DispatchError::WorkerError { status: 422, attempts: 1, .. }));
        assert_eq!(*t.calls.lock().unwrap(), 1);
    }

    #[test]
    fn timeouts_exhaust() {
        let t = Scripted::new(vec![]);
        let w = handle(WorkerRole::Segment, t);
        let err = dispatch(&WorkerRequest::new("j", String::new()), Route::Segment, &w, fast(), None).unwrap_err();
        assert_eq!(err, DispatchError::Timeout { attempts: 3 });
    }

    #[test]
    fn role_and_echo_checks() {
        let w = handle(WorkerRole::Caption, Scripted::new(vec![ok("other")]));
        assert!(matches!(
            dispatch(&WorkerRequest::new("j", String::new()), Route::Inpaint, &w, fast(), None),
            Err(DispatchError::RoleMismatch { .. })
        ));
        assert!(matches!(
            dispatch(&WorkerRequest::new("j", String::new()), Route::Caption, &w, fast(), None),
            Err(DispatchError::BadResponse(_))
        ));
    }
}
