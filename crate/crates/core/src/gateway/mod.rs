//! Wire protocol and scheduling for the neural workers (segmentation,
//! captioning, inpainting, scoring), plus the image pre/post-processing the
//! core owns: working-resolution resize and spliced (SP) compositing.

mod composite;
mod dispatch;
mod mock;
mod pipeline;
mod protocol;
mod resize;
mod schedule;

use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::manifest::{Pipeline, Preservation};

pub use composite::{composite_sp, CompositeError};
pub use dispatch::{
    dispatch, transport_for, DispatchError, Dispatched, HttpWorker, ProvenanceEntry, ProvenanceLog, RetryPolicy,
    TransportError, WorkerTransport,
};
pub use mock::{fill_colour, mock_worker_router, MockWorker};
pub use pipeline::{
    describe_image, ingest_semantics, inpaint_one, mock_inpaint_workers, run_pipeline, ImageSemantics, JobFailure,
    PipelineConfig, PipelineError, PipelineOutput, PipelineWorkers,
};
pub use protocol::{Route, SegmentObject, WorkerOutputs, WorkerRequest, WorkerResponse};
pub use resize::{resize_for_inpainting, resize_mask, ResizeTransform, DEFAULT_MAX_DIM};
pub use schedule::{eligible_for_second_round, schedule_rounds, JobPlan, RoundTwoJob, ScheduleError};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum WorkerRole {
    Segment,
    Caption,
    Inpaint,
    Quality,
    Perceptual,
}

impl WorkerRole {
    pub fn route(self) -> Route {
        match self {
            WorkerRole::Segment => Route::Segment,
            WorkerRole::Caption => Route::Caption,
            WorkerRole::Inpaint => Route::Inpaint,
            WorkerRole::Quality | WorkerRole::Perceptual => Route::Score,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WorkerDescriptor {
    pub role: WorkerRole,
    /// Base URL; `mock://` selects the in-process mock worker.
    pub endpoint: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub pipeline: Option<Pipeline>,
    #[serde(default)]
    pub model: String,
    #[serde(default)]
    pub supports_preservation: Vec<Preservation>,
    /// Passed through opaquely in every request's `params`.
    #[serde(default, skip_serializing_if = "serde_json::Map::is_empty")]
    pub params: serde_json::Map<String, serde_json::Value>,
}

impl WorkerDescriptor {
    pub fn check(&self) -> Result<(), String> {
        if self.role == WorkerRole::Inpaint {
            if self.supports_preservation.is_empty() {
                return Err(format!("inpaint worker {} declares no preservation mode", self.endpoint));
            }
            let Some(pipeline) = self.pipeline else {
                return Err(format!("inpaint worker {} declares no pipeline", self.endpoint));
            };
            if let Some(p) = self
                .supports_preservation
                .iter()
                .find(|p| !pipeline.allowed_preservation().contains(p))
            {
                return Err(format!("{pipeline} cannot produce {p}"));
            }
        }
        Ok(())
    }
}

/// A worker descriptor bound to a transport.
#[derive(Clone)]
pub struct WorkerHandle {
    pub descriptor: WorkerDescriptor,
    pub transport: Arc<dyn WorkerTransport>,
}

impl WorkerHandle {
    pub fn new(descriptor: WorkerDescriptor, transport: Arc<dyn WorkerTransport>) -> Self {
        Self { descriptor, transport }
    }
}

impl std::fmt::Debug for WorkerHandle {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("WorkerHandle").field("descriptor", &self.descriptor).finish_non_exhaustive()
    }
}

/// How an inpainted record was produced; stored in the manifest.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    pub job_id: String,
    pub worker: String,
    pub model: String,
    pub version: String,
    pub seed: u64,
    pub transform: ResizeTransform,
}

/// One inpainting request before it is put on the wire.
#[derive(Debug, Clone, PartialEq)]
pub struct InpaintJob {
    pub job_id: String,
    pub image_path: std::path::PathBuf,
    pub mask_path: std::path::PathBuf,
    /// Absent only for removal pipelines.
    pub prompt: Option<String>,
    pub preservation: Preservation,
    pub seed: u64,
}
