use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Duration;

use image::{DynamicImage, GrayImage, RgbImage};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::composite::{composite_sp, CompositeError};
use super::dispatch::{dispatch, transport_for, DispatchError, ProvenanceLog, RetryPolicy};
use super::protocol::{Route, WorkerRequest};
use super::resize::{resize_for_inpainting, DEFAULT_MAX_DIM};
use super::schedule::{eligible_for_second_round, schedule_rounds, JobPlan, ScheduleError};
use super::{InpaintJob, Provenance, WorkerDescriptor, WorkerHandle, WorkerRole};
use crate::chat::ChatEndpoint;
use crate::imageio::{area_fraction, binarize, from_b64, open_mask, open_rgb, to_png_b64, ImageIoError};
use crate::manifest::{DatasetManifest, InpaintRecord, ManifestError, MaskRecord, Pipeline, Preservation};
use crate::saor::{select_batch, InventoryItem, LlmConfig, PriorEdit, PromptStage, PromptSpec, SemanticContext};

#[derive(Debug, thiserror::Error)]
pub enum PipelineError {
    #[error("invalid worker configuration: {0}")]
    Config(String),
    #[error("{0}")]
    Image(#[from] ImageIoError),
    #[error("cannot write {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error(transparent)]
    Dispatch(#[from] DispatchError),
    #[error("worker response for {job_id} lacks {field}")]
    MissingOutput { job_id: String, field: &'static str },
    #[error("worker returned {got:?} for {job_id}, expected {expected:?}")]
    OutputSize { job_id: String, got: (u32, u32), expected: (u32, u32) },
    #[error(transparent)]
    Composite(#[from] CompositeError),
    #[error(transparent)]
    Schedule(#[from] ScheduleError),
    #[error(transparent)]
    Manifest(#[from] ManifestError),
}

/// Workers bound to transports, grouped by role.
#[derive(Debug, Clone, Default)]
pub struct PipelineWorkers {
    pub segment: Option<WorkerHandle>,
    pub caption: Option<WorkerHandle>,
    pub inpaint: Vec<WorkerHandle>,
}

impl PipelineWorkers {
    pub fn from_descriptors(descriptors: &[WorkerDescriptor], timeout: Duration) -> Result<Self, PipelineError> {
        let mut out = Self::default();
        for d in descriptors {
            d.check().map_err(PipelineError::Config)?;
            let transport = transport_for(&d.endpoint, timeout).map_err(|e| PipelineError::Config(e.to_string()))?;
            let handle = WorkerHandle::new(d.clone(), transport);
            match d.role {
                WorkerRole::Segment => out.segment = Some(handle),
                WorkerRole::Caption => out.caption = Some(handle),
                WorkerRole::Inpaint => out.inpaint.push(handle),
                WorkerRole::Quality | WorkerRole::Perceptual => {}
            }
        }
        Ok(out)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PipelineConfig {
    pub out_dir: PathBuf,
    pub seed: u64,
    pub fraction_double: f64,
    pub max_dim: u32,
    pub llm: LlmConfig,
    pub saor_retries: usize,
    pub concurrency: usize,
    #[serde(skip, default)]
    pub retry: RetryPolicy,
}

impl PipelineConfig {
    pub fn new(out_dir: impl Into<PathBuf>, seed: u64) -> Self {
        Self {
            out_dir: out_dir.into(),
            seed,
            fraction_double: 1.0 / 6.0,
            max_dim: DEFAULT_MAX_DIM,
            llm: LlmConfig::default(),
            saor_retries: 2,
            concurrency: 4,
            retry: RetryPolicy::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct JobFailure {
    pub job_id: String,
    pub message: String,
}

#[derive(Debug)]
pub struct PipelineOutput {
    pub manifest: DatasetManifest,
    pub plan: JobPlan,
    pub failures: Vec<JobFailure>,
}

/// Caption and object masks for one image, as returned by the workers.
#[derive(Debug, Clone, PartialEq)]
pub struct ImageSemantics {
    pub caption: Option<String>,
    pub objects: Vec<(String, GrayImage)>,
}

/// Asks the caption and segmentation workers (whichever are configured)
/// about one image.
pub fn describe_image(
    image: &DynamicImage,
    job_id: &str,
    workers: &PipelineWorkers,
    retry: RetryPolicy,
    log: Option<&ProvenanceLog>,
) -> Result<ImageSemantics, PipelineError> {
    let b64 = to_png_b64(image)?;
    let mut sem = ImageSemantics { caption: None, objects: Vec::new() };
    if let Some(w) = &workers.caption {
        let req = WorkerRequest::new(format!("{job_id}__caption"), b64.clone());
        let resp = dispatch(&req, Route::Caption, w, retry, log)?.response;
        let caption = resp
            .outputs
            .caption
            .ok_or_else(|| PipelineError::MissingOutput { job_id: req.job_id.clone(), field: "caption" })?;
        sem.caption = Some(caption.trim().to_string());
    }
    if let Some(w) = &workers.segment {
        let req = WorkerRequest::new(format!("{job_id}__segment"), b64);
        let resp = dispatch(&req, Route::Segment, w, retry, log)?.response;
        let objects = resp
            .outputs
            .objects
            .ok_or_else(|| PipelineError::MissingOutput { job_id: req.job_id.clone(), field: "objects" })?;
        for obj in objects {
            let mask = binarize(&from_b64(&obj.mask_b64)?.to_luma8());
            sem.objects.push((obj.label, mask));
        }
    }
    Ok(sem)
}

fn write_png(img: &DynamicImage, path: &Path) -> Result<(), PipelineError> {
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir).map_err(|source| PipelineError::Io { path: dir.to_path_buf(), source })?;
    }
    img.save(path).map_err(|e| PipelineError::Image(ImageIoError::Encode(e)))
}

/// Path as stored in the output manifest: relative to `out_dir` when inside
/// it, absolute otherwise.
fn rebase(manifest: &DatasetManifest, path: &str, out_dir: &Path) -> String {
    let resolved = manifest.resolve(path);
    let abs = std::path::absolute(&resolved).unwrap_or(resolved);
    let out = std::path::absolute(out_dir).unwrap_or_else(|_| out_dir.to_path_buf());
    match abs.strip_prefix(&out) {
        Ok(rel) => rel.to_string_lossy().replace('\\', "/"),
        Err(_) => abs.to_string_lossy().into_owned(),
    }
}

fn rebased(manifest: &DatasetManifest, out_dir: &Path) -> DatasetManifest {
    let mut images = manifest.images.clone();
    for img in &mut images {
        img.path = rebase(manifest, &img.path, out_dir);
    }
    let mut masks = manifest.masks.clone();
    for m in &mut masks {
        m.mask_path = rebase(manifest, &m.mask_path, out_dir);
    }
    let mut inpaints = manifest.inpaints.clone();
    for r in &mut inpaints {
        r.inpainted_path = rebase(manifest, &r.inpainted_path, out_dir);
    }
    DatasetManifest::new_unchecked(images, masks, inpaints)
        .expect("ids unchanged")
        .with_base_dir(out_dir)
}

/// Fills in missing captions and object masks using the configured workers.
/// New masks are written to `out_dir/masks/`; the returned manifest has its
/// base directory set to `out_dir`.
pub fn ingest_semantics(
    manifest: &DatasetManifest,
    workers: &PipelineWorkers,
    cfg: &PipelineConfig,
    log: Option<&ProvenanceLog>,
) -> Result<DatasetManifest, PipelineError> {
    let base = rebased(manifest, &cfg.out_dir);
    let (mut images, mut masks, inpaints) = base.clone().into_parts();
    let pool = thread_pool(cfg.concurrency);
    let described: Vec<Result<Option<ImageSemantics>, PipelineError>> = pool.install(|| {
        images
            .par_iter()
            .map(|img| {
                let want_caption = img.caption.is_none() && workers.caption.is_some();
                let want_masks = base.masks_for_image(&img.id).is_empty() && workers.segment.is_some();
                if !img.authentic || (!want_caption && !want_masks) {
                    return Ok(None);
                }
                let picked = PipelineWorkers {
                    caption: workers.caption.clone().filter(|_| want_caption),
                    segment: workers.segment.clone().filter(|_| want_masks),
                    inpaint: Vec::new(),
                };
                let rgb = DynamicImage::ImageRgb8(open_rgb(base.resolve(&img.path))?);
                describe_image(&rgb, &img.id, &picked, cfg.retry, log).map(Some)
            })
            .collect()
    });
    for (img, sem) in images.iter_mut().zip(described) {
        let Some(sem) = sem? else { continue };
        if let Some(c) = sem.caption {
            img.caption = Some(c);
        }
        for (k, (label, mask)) in sem.objects.into_iter().enumerate() {
            let id = format!("{}_seg{k}", img.id);
            let rel = format!("masks/{id}.png");
            let fraction = area_fraction(&mask);
            write_png(&DynamicImage::ImageLuma8(mask), &cfg.out_dir.join(&rel))?;
            masks.push(MaskRecord {
                id,
                image_id: img.id.clone(),
                object_label: label,
                mask_path: rel,
                area_fraction: fraction,
            });
        }
    }
    Ok(DatasetManifest::new(images, masks, inpaints)?.with_base_dir(&cfg.out_dir))
}

/// Resizes, dispatches, and (for SP) composites one job. Returns the output
/// at working resolution together with its provenance.
pub fn inpaint_one(
    job: &InpaintJob,
    worker: &WorkerHandle,
    max_dim: u32,
    retry: RetryPolicy,
    log: Option<&ProvenanceLog>,
) -> Result<(RgbImage, Provenance), PipelineError> {
    let original = DynamicImage::ImageRgb8(open_rgb(&job.image_path)?);
    let (working, transform) = resize_for_inpainting(&original, max_dim);
    let working = working.to_rgb8();
    let mut mask = open_mask(&job.mask_path)?;
    if mask.dimensions() != working.dimensions() {
        mask = image::imageops::resize(
            &mask,
            working.width(),
            working.height(),
            image::imageops::FilterType::Nearest,
        );
    }

    let mut req = WorkerRequest::new(job.job_id.clone(), to_png_b64(&DynamicImage::ImageRgb8(working.clone()))?);
    req.mask_b64 = Some(to_png_b64(&DynamicImage::ImageLuma8(mask.clone()))?);
    req.prompt = job.prompt.clone();
    req.preservation = Some(job.preservation);
    req.seed = Some(job.seed);
    let done = dispatch(&req, Route::Inpaint, worker, retry, log)?;
    let b64 = done
        .response
        .outputs
        .image_b64
        .ok_or_else(|| PipelineError::MissingOutput { job_id: job.job_id.clone(), field: "image_b64" })?;
    let generated = from_b64(&b64)?.to_rgb8();
    if generated.dimensions() != working.dimensions() {
        return Err(PipelineError::OutputSize {
            job_id: job.job_id.clone(),
            got: generated.dimensions(),
            expected: working.dimensions(),
        });
    }
    let output = match job.preservation {
        Preservation::Sp => composite_sp(&working, &generated, &mask)?,
        Preservation::Fr => generated,
    };
    let provenance = Provenance {
        job_id: job.job_id.clone(),
        worker: worker.descriptor.endpoint.clone(),
        model: done.response.model,
        version: done.response.version,
        seed: job.seed,
        transform,
    };
    Ok((output, provenance))
}

fn thread_pool(n: usize) -> rayon::ThreadPool {
    rayon::ThreadPoolBuilder::new().num_threads(n.max(1)).build().expect("thread pool")
}

fn job_seed(seed: u64, job_id: &str) -> u64 {
    let digest = Sha256::digest(format!("{seed}:{job_id}").as_bytes());
    u64::from_le_bytes(digest[..8].try_into().expect("8 bytes"))
}

struct Planned {
    record: InpaintRecord,
    ctx: SemanticContext,
    stage: PromptStage,
    worker: usize,
    input: PathBuf,
}

/// Runs SAOR for each planned job, then dispatches the jobs in parallel.
/// Results keep plan order; failed jobs are reported, not fatal.
fn execute(
    planned: Vec<Planned>,
    manifest: &DatasetManifest,
    workers: &PipelineWorkers,
    llm: &dyn ChatEndpoint,
    cfg: &PipelineConfig,
    log: Option<&ProvenanceLog>,
    failures: &mut Vec<JobFailure>,
) -> Result<Vec<InpaintRecord>, PipelineError> {
    let mut specs: Vec<Option<Result<PromptSpec, String>>> = vec![None; planned.len()];
    for stage in [PromptStage::FirstInpaint, PromptStage::SecondInpaint, PromptStage::Removal] {
        let idx: Vec<usize> = (0..planned.len()).filter(|&i| planned[i].stage == stage).collect();
        let contexts: Vec<SemanticContext> = idx.iter().map(|&i| planned[i].ctx.clone()).collect();
        let results = select_batch(&contexts, stage, llm, &cfg.llm, cfg.saor_retries, cfg.concurrency);
        for (i, r) in idx.into_iter().zip(results) {
            specs[i] = Some(r.map_err(|e| e.to_string()));
        }
    }

    let pool = thread_pool(cfg.concurrency);
    let results: Vec<Result<InpaintRecord, String>> = pool.install(|| {
        planned
            .par_iter()
            .zip(specs.into_par_iter())
            .map(|(p, spec)| {
                let spec = spec.expect("every job went through SAOR")?;
                let mask_id = spec.mask_id.clone().ok_or("selected object has no mask")?;
                let mask = manifest.mask(&mask_id).ok_or("selected mask missing from manifest")?;
                let removal = p.stage == PromptStage::Removal;
                let job = InpaintJob {
                    job_id: p.record.id.clone(),
                    image_path: p.input.clone(),
                    mask_path: manifest.resolve(&mask.mask_path),
                    prompt: (!removal).then(|| spec.prompt_text.clone()),
                    preservation: p.record.preservation,
                    seed: job_seed(cfg.seed, &p.record.id),
                };
                let worker = &workers.inpaint[p.worker];
                let (out, provenance) =
                    inpaint_one(&job, worker, cfg.max_dim, cfg.retry, log).map_err(|e| e.to_string())?;
                write_png(&DynamicImage::ImageRgb8(out), &cfg.out_dir.join(&p.record.inpainted_path))
                    .map_err(|e| e.to_string())?;
                let mut record = p.record.clone();
                record.mask_id = mask_id;
                record.prompt = (!removal).then_some(spec);
                record.provenance = Some(provenance);
                Ok(record)
            })
            .collect()
    });

    let mut done = Vec::new();
    for (p, r) in planned.iter().zip(results) {
        match r {
            Ok(rec) => done.push(rec),
            Err(message) => {
                log::warn!("job {} failed: {message}", p.record.id);
                failures.push(JobFailure { job_id: p.record.id.clone(), message });
            }
        }
    }
    Ok(done)
}

fn pending_record(id: String, parent: &str, worker: &WorkerDescriptor, preservation: Preservation, round: u32, split: crate::manifest::Split) -> InpaintRecord {
    InpaintRecord {
        inpainted_path: format!("inpainted/{id}.png"),
        id,
        parent_image_id: parent.to_string(),
        mask_id: String::new(),
        prompt: None,
        pipeline: worker.pipeline.expect("inpaint workers declare a pipeline"),
        model_name: worker.model.clone(),
        preservation,
        round,
        split,
        ugda: None,
        provenance: None,
    }
}

/// Single and double inpainting over every authentic image with masks.
///
/// Round 1 assigns images to inpaint workers round-robin (sorted by id) and
/// cycles each worker's preservation modes. Round 2 takes the scheduled
/// fraction of round-1 outputs and edits a different object on top of them
/// with the same worker. Outputs go to `out_dir/inpainted/`.
pub fn run_pipeline(
    manifest: &DatasetManifest,
    workers: &PipelineWorkers,
    llm: &dyn ChatEndpoint,
    cfg: &PipelineConfig,
    log: Option<&ProvenanceLog>,
) -> Result<PipelineOutput, PipelineError> {
    if workers.inpaint.is_empty() {
        return Err(PipelineError::Config("no inpaint worker configured".into()));
    }
    for w in &workers.inpaint {
        w.descriptor.check().map_err(PipelineError::Config)?;
    }
    let base = rebased(manifest, &cfg.out_dir);
    let mut failures = Vec::new();

    let mut images: Vec<_> = base
        .images
        .iter()
        .filter(|img| img.authentic && !base.masks_for_image(&img.id).is_empty())
        .collect();
    images.sort_by(|a, b| a.id.cmp(&b.id));
    let n_workers = workers.inpaint.len();
    let round1: Vec<Planned> = images
        .iter()
        .enumerate()
        .map(|(i, img)| {
            let w = i % n_workers;
            let desc = &workers.inpaint[w].descriptor;
            let modes = &desc.supports_preservation;
            let preservation = modes[(i / n_workers) % modes.len()];
            let pipeline = desc.pipeline.unwrap_or(Pipeline::BrushNet);
            Planned {
                record: pending_record(format!("{}__r1", img.id), &img.id, desc, preservation, 1, img.split),
                ctx: SemanticContext::from_manifest(&base, img),
                stage: if pipeline.is_removal() { PromptStage::Removal } else { PromptStage::FirstInpaint },
                worker: w,
                input: base.resolve(&img.path),
            }
        })
        .collect();
    let worker_of: BTreeMap<String, usize> = round1.iter().map(|p| (p.record.id.clone(), p.worker)).collect();
    let done1 = execute(round1, &base, workers, llm, cfg, log, &mut failures)?;

    let (images, masks, mut inpaints) = base.clone().into_parts();
    inpaints.extend(done1);
    let stage1 = DatasetManifest::new(images, masks, inpaints)?.with_base_dir(&cfg.out_dir);

    let eligible: Vec<String> = eligible_for_second_round(&stage1)
        .into_iter()
        .filter(|r| worker_of.contains_key(&r.id))
        .map(|r| r.id.clone())
        .collect();
    let plan = schedule_rounds(&stage1, &eligible, cfg.fraction_double, cfg.seed)?;

    let round2: Vec<Planned> = plan
        .jobs
        .iter()
        .map(|job| {
            let parent = stage1.inpaint(&job.parent_id).expect("planned from this manifest");
            let root = stage1.root_image(parent).expect("linked manifest");
            let w = worker_of[&job.parent_id];
            let desc = &workers.inpaint[w].descriptor;
            let prior_label = stage1.mask(&parent.mask_id).map(|m| m.object_label.clone()).unwrap_or_default();
            let inventory = job
                .candidate_masks
                .iter()
                .filter_map(|id| stage1.mask(id))
                .map(|m| InventoryItem::new(m.object_label.clone(), m.id.clone(), m.area_fraction))
                .collect();
            let ctx = SemanticContext {
                caption: root.caption.clone().unwrap_or_default(),
                inventory,
                prior_edit: Some(PriorEdit {
                    object_label: prior_label,
                    prompt: parent.prompt.as_ref().map(|p| p.prompt_text.clone()).unwrap_or_default(),
                }),
            };
            Planned {
                record: pending_record(job.job_id.clone(), &parent.id, desc, parent.preservation, 2, root.split),
                ctx,
                stage: if parent.pipeline.is_removal() { PromptStage::Removal } else { PromptStage::SecondInpaint },
                worker: w,
                input: stage1.resolve(&parent.inpainted_path),
            }
        })
        .collect();
    let done2 = execute(round2, &stage1, workers, llm, cfg, log, &mut failures)?;

    let (images, masks, mut inpaints) = stage1.into_parts();
    inpaints.extend(done2);
    let manifest = DatasetManifest::new(images, masks, inpaints)?.with_base_dir(&cfg.out_dir);
    Ok(PipelineOutput { manifest, plan, failures })
}

/// Convenience for tests and the CLI: a pool of in-process mock workers,
/// one per pipeline, each offering every allowed preservation mode.
pub fn mock_inpaint_workers(pipelines: &[Pipeline]) -> PipelineWorkers {
    let inpaint = pipelines
        .iter()
        .map(|&p| {
            WorkerHandle::new(
                WorkerDescriptor {
                    role: WorkerRole::Inpaint,
                    endpoint: format!("mock://{}", p.as_str().to_lowercase()),
                    pipeline: Some(p),
                    model: format!("mock-{}", p.as_str().to_lowercase()),
                    supports_preservation: p.allowed_preservation().to_vec(),
                    params: Default::default(),
                },
                Arc::new(super::mock::MockWorker::default()),
            )
        })
        .collect();
    PipelineWorkers { segment: None, caption: None, inpaint }
}
