//! Chat-completion endpoint contract shared by the language model (object
//! selection) and the vision-language model (realism judgment).
//!
//! Wire format: `POST` a [`ChatRequest`] as JSON, receive `{"content": "..."}`.
//! Images travel as base64 PNG strings in a message's `images` array.

use std::collections::VecDeque;
use std::sync::{Arc, Mutex};
use std::time::Duration;

use axum::extract::State;
use axum::http::StatusCode;
use axum::routing::post;
use axum::{Json, Router};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Role {
    System,
    User,
    Assistant,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChatMessage {
    pub role: Role,
    pub content: String,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub images: Vec<String>,
}

impl ChatMessage {
    pub fn system(content: impl Into<String>) -> Self {
        Self { role: Role::System, content: content.into(), images: Vec::new() }
    }

    pub fn user(content: impl Into<String>) -> Self {
        Self { role: Role::User, content: content.into(), images: Vec::new() }
    }

    pub fn assistant(content: impl Into<String>) -> Self {
        Self { role: Role::Assistant, content: content.into(), images: Vec::new() }
    }

    pub fn with_images(mut self, images: Vec<String>) -> Self {
        self.images = images;
        self
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChatRequest {
    pub model: String,
    pub messages: Vec<ChatMessage>,
    pub temperature: f64,
    pub top_p: f64,
    pub max_tokens: u32,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChatResponse {
    pub content: String,
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum EndpointError {
    #[error("transport error: {0}")]
    Transport(String),
    #[error("endpoint returned HTTP {status}: {body}")]
    Status { status: u16, body: String },
    #[error("malformed endpoint response: {0}")]
    Decode(String),
    #[error("scripted endpoint has no replies left")]
    ScriptExhausted,
}

pub trait ChatEndpoint: Send + Sync {
    fn complete(&self, request: &ChatRequest) -> Result<String, EndpointError>;
}

impl<T: ChatEndpoint + ?Sized> ChatEndpoint for Arc<T> {
    fn complete(&self, request: &ChatRequest) -> Result<String, EndpointError> {
        (**self).complete(request)
    }
}

impl<T: ChatEndpoint + ?Sized> ChatEndpoint for &T {
    fn complete(&self, request: &ChatRequest) -> Result<String, EndpointError> {
        (**self).complete(request)
    }
}

pub struct HttpChatEndpoint {
    url: String,
    client: reqwest::blocking::Client,
}

impl HttpChatEndpoint {
    pub fn new(url: impl Into<String>) -> Result<Self, EndpointError> {
        Self::with_timeout(url, Duration::from_secs(120))
    }

    pub fn with_timeout(url: impl Into<String>, timeout: Duration) -> Result<Self, EndpointError> {
        let client = reqwest::blocking::Client::builder()
            .timeout(timeout)
            .build()
            .map_err(|e| EndpointError::Transport(e.to_string()))?;
        Ok(Self { url: url.into(), client })
    }
}

impl ChatEndpoint for HttpChatEndpoint {
    fn complete(&self, request: &ChatRequest) -> Result<String, EndpointError> {
        let resp = self
            .client
            .post(&self.url)
            .json(request)
            .send()
            .map_err(|e| EndpointError::Transport(e.to_string()))?;
        let status = resp.status();
        if !status.is_success() {
            let body = resp.text().unwrap_or_default();
            return Err(EndpointError::Status { status: status.as_u16(), body });
        }
        let parsed: ChatResponse = resp.json().map_err(|e| EndpointError::Decode(e.to_string()))?;
        Ok(parsed.content)
    }
}

/// Replays a fixed list of replies and records every request it sees.
#[derive(Default)]
pub struct ScriptedEndpoint {
    replies: Mutex<VecDeque<Result<String, EndpointError>>>,
    log: Mutex<Vec<ChatRequest>>,
}

impl ScriptedEndpoint {
    pub fn new<I, S>(replies: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        Self::from_results(replies.into_iter().map(|s| Ok(s.into())))
    }

    pub fn from_results(replies: impl IntoIterator<Item = Result<String, EndpointError>>) -> Self {
        Self {
            replies: Mutex::new(replies.into_iter().collect()),
            log: Mutex::new(Vec::new()),
        }
    }

    pub fn requests(&self) -> Vec<ChatRequest> {
        self.log.lock().unwrap().clone()
    }

    pub fn call_count(&self) -> usize {
        self.log.lock().unwrap().len()
    }
}

impl ChatEndpoint for ScriptedEndpoint {
    fn complete(&self, request: &ChatRequest) -> Result<String, EndpointError> {
        self.log.lock().unwrap().push(request.clone());
        self.replies
            .lock()
            .unwrap()
            .pop_front()
            .unwrap_or(Err(EndpointError::ScriptExhausted))
    }
}

/// Adapts a closure into an endpoint.
pub struct FnEndpoint<F>(pub F);

impl<F> ChatEndpoint for FnEndpoint<F>
where
    F: Fn(&ChatRequest) -> Result<String, EndpointError> + Send + Sync,
{
    fn complete(&self, request: &ChatRequest) -> Result<String, EndpointError> {
        (self.0)(request)
    }
}

/// Serves any endpoint implementation over the HTTP wire format, at `/` and
/// `/v1/chat`.
pub fn chat_router(endpoint: Arc<dyn ChatEndpoint>) -> Router {
    async fn handle(
        State(endpoint): State<Arc<dyn ChatEndpoint>>,
        Json(req): Json<ChatRequest>,
    ) -> Result<Json<ChatResponse>, (StatusCode, String)> {
        let result = tokio::task::spawn_blocking(move || endpoint.complete(&req))
            .await
            .map_err(|e| (StatusCode::INTERNAL_SERVER_ERROR, e.to_string()))?;
        match result {
            Ok(content) => Ok(Json(ChatResponse { content })),
            Err(EndpointError::Status { status, body }) => {
                Err((StatusCode::from_u16(status).unwrap_or(StatusCode::BAD_GATEWAY), body))
            }
            Err(e) => Err((StatusCode::BAD_GATEWAY, e.to_string())),
        }
    }
    Router::new()
        .route("/", post(handle))
        .route("/v1/chat", post(handle))
        .with_state(endpoint)
}
