use axum::body::Bytes;
use axum::extract::State;
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use image::{DynamicImage, GenericImageView, GrayImage, Luma, Rgb, RgbImage};
use sha2::{Digest, Sha256};

use super::dispatch::{TransportError, WorkerTransport};
use super::protocol::{Route, SegmentObject, WorkerOutputs, WorkerRequest, WorkerResponse};
use crate::imageio::{from_b64, is_masked, to_png_b64};
use crate::manifest::Preservation;

pub const MOCK_MODEL: &str = "mock";
pub const MOCK_VERSION: &str = "1";

/// Deterministic stand-in for every worker role.
///
/// * caption: a fixed caption
/// * segment: two rectangular objects (left half, bottom-right quadrant)
/// * inpaint: fills the mask with a colour hashed from the prompt; in FR mode
///   the unmasked pixels are also perturbed so the whole frame changes
/// * score: mean intensity in [0,1], or with `params.reference_b64` the mean
///   absolute difference to the reference
#[derive(Debug, Clone)]
pub struct MockWorker {
    pub caption: String,
}

impl Default for MockWorker {
    fn default() -> Self {
        Self { caption: "a dog on a beach".into() }
    }
}

#[derive(Debug)]
struct Reject(StatusCode, String);

impl Reject {
    fn bad(msg: impl Into<String>) -> Self {
        Reject(StatusCode::BAD_REQUEST, msg.into())
    }
    fn unprocessable(msg: impl Into<String>) -> Self {
        Reject(StatusCode::UNPROCESSABLE_ENTITY, msg.into())
    }
}

/// Fill colour for a prompt; removal jobs (no prompt) hash the empty string.
pub fn fill_colour(prompt: Option<&str>) -> Rgb<u8> {
    let digest = Sha256::digest(prompt.unwrap_or("").as_bytes());
    Rgb([digest[0], digest[1], digest[2]])
}

impl MockWorker {
    fn decode(&self, b64: &str, what: &str) -> Result<DynamicImage, Reject> {
        from_b64(b64).map_err(|e| Reject::bad(format!("{what}: {e}")))
    }

    fn respond(&self, route: Route, req: &WorkerRequest) -> Result<WorkerResponse, Reject> {
        let image = self.decode(&req.image_b64, "image_b64")?;
        let outputs = match route {
            Route::Caption => WorkerOutputs { caption: Some(self.caption.clone()), ..Default::default() },
            Route::Segment => WorkerOutputs { objects: Some(segment(&image)?), ..Default::default() },
            Route::Inpaint => {
                let out = self.inpaint(&image, req)?;
                let b64 = to_png_b64(&DynamicImage::ImageRgb8(out)).map_err(|e| Reject::bad(e.to_string()))?;
                WorkerOutputs { image_b64: Some(b64), ..Default::default() }
            }
            Route::Score => WorkerOutputs { score: Some(self.score(&image, req)?), ..Default::default() },
        };
        Ok(WorkerResponse {
            job_id: req.job_id.clone(),
            outputs,
            model: MOCK_MODEL.into(),
            version: MOCK_VERSION.into(),
        })
    }

    fn inpaint(&self, image: &DynamicImage, req: &WorkerRequest) -> Result<RgbImage, Reject> {
        let mask_b64 = req.mask_b64.as_deref().ok_or_else(|| Reject::bad("mask_b64 is required"))?;
        let preservation = req.preservation.ok_or_else(|| Reject::bad("preservation is required"))?;
        let mask = self.decode(mask_b64, "mask_b64")?.to_luma8();
        if mask.dimensions() != image.dimensions() {
            return Err(Reject::bad("mask and image dimensions differ"));
        }
        let fill = fill_colour(req.prompt.as_deref());
        let mut out = image.to_rgb8();
        for (x, y, px) in out.enumerate_pixels_mut() {
            if is_masked(&mask, x, y) {
                *px = fill;
            } else if preservation == Preservation::Fr {
                px.0 = px.0.map(|c| c ^ 0x01);
            }
        }
        Ok(out)
    }

    fn score(&self, image: &DynamicImage, req: &WorkerRequest) -> Result<f64, Reject> {
        let perceptual = req.params.get("kind").and_then(|v| v.as_str()) == Some("perceptual");
        let reference = match req.params.get("reference_b64") {
            Some(v) => {
                let b64 = v.as_str().ok_or_else(|| Reject::bad("reference_b64 must be a string"))?;
                Some(self.decode(b64, "reference_b64")?)
            }
            None if perceptual => return Err(Reject::unprocessable("perceptual scoring needs reference_b64")),
            None => None,
        };
        let a = image.to_rgb8();
        let n = (a.width() as u64 * a.height() as u64 * 3).max(1) as f64;
        match reference {
            None => Ok(a.as_raw().iter().map(|&v| v as f64).sum::<f64>() / 255.0 / n),
            Some(r) => {
                let b = r.to_rgb8();
                if a.dimensions() != b.dimensions() {
                    return Err(Reject::unprocessable("reference dimensions differ"));
                }
                let diff: f64 = a.as_raw().iter().zip(b.as_raw()).map(|(&x, &y)| (x as f64 - y as f64).abs()).sum();
                Ok(diff / 255.0 / n)
            }
        }
    }
}

fn segment(image: &DynamicImage) -> Result<Vec<SegmentObject>, Reject> {
    let (w, h) = image.dimensions();
    let left = GrayImage::from_fn(w, h, |x, _| Luma([if x < w.div_ceil(2) { 255 } else { 0 }]));
    let corner = GrayImage::from_fn(w, h, |x, y| Luma([if x >= w / 2 && y >= h / 2 { 255 } else { 0 }]));
    let enc = |m: GrayImage| to_png_b64(&DynamicImage::ImageLuma8(m)).map_err(|e| Reject::bad(e.to_string()));
    Ok(vec![
        SegmentObject { label: "person".into(), mask_b64: enc(left)? },
        SegmentObject { label: "umbrella".into(), mask_b64: enc(corner)? },
    ])
}

impl WorkerTransport for MockWorker {
    fn call(&self, route: Route, request: &WorkerRequest) -> Result<WorkerResponse, TransportError> {
        self.respond(route, request)
            .map_err(|Reject(status, body)| TransportError::Status { status: status.as_u16(), body })
    }
}

async fn handle(worker: MockWorker, route: Route, body: Bytes) -> Response {
    let req: WorkerRequest = match serde_json::from_slice(&body) {
        Ok(r) => r,
        Err(e) => return (StatusCode::BAD_REQUEST, format!("malformed request: {e}")).into_response(),
    };
    let result = tokio::task::spawn_blocking(move || worker.respond(route, &req)).await;
    match result {
        Ok(Ok(resp)) => Json(resp).into_response(),
        Ok(Err(Reject(status, body))) => (status, body).into_response(),
        Err(e) => (StatusCode::INTERNAL_SERVER_ERROR, e.to_string()).into_response(),
    }
}

/// HTTP server for [`MockWorker`], speaking the worker protocol.
pub fn mock_worker_router(worker: MockWorker) -> Router {
    let route = |r: Route| {
        post(move |State(w): State<MockWorker>, body: Bytes| handle(w, r, body))
    };
    Router::new()
        .route(Route::Segment.path(), route(Route::Segment))
        .route(Route::Caption.path(), route(Route::Caption))
        .route(Route::Inpaint.path(), route(Route::Inpaint))
        .route(Route::Score.path(), route(Route::Score))
        .route("/healthz", get(|| async { "ok" }))
        .with_state(worker)
}
