//! Human study service: batch assignment, annotation storage, aggregation
//! and demographic statistics.

mod aggregate;
mod assign;
pub mod demographics;
mod service;
mod stats;
mod store;

use std::collections::{BTreeMap, HashMap, HashSet};
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

pub use aggregate::{aggregate, human_observations, Aggregate, Category, CategoryStats, FactorResult, StudyReport};
pub use assign::{Assigner, SessionState};
pub use demographics::{DemographicFactor, Demographics};
pub use service::{study_router, AnnotationFailure, BatchImage, Study, SubmitOutcome, STUDY_FILE};
pub use stats::{chi_square_independence, filter_participants, ChiSquare, ContingencyTable, ParticipantTally};
pub use store::{AnnotationStore, SessionRecord, ANNOTATIONS_FILE, SESSIONS_FILE};

use crate::eval::{eval_items, ground_truth, EvalError};
use crate::imageio::{open_mask, ImageIoError};
use crate::manifest::DatasetManifest;
use crate::metrics::{mask_to_bbox, BBox, Label};
use crate::ugda::UgdaState;

#[derive(Debug, Error)]
pub enum HumanBenchError {
    #[error("invalid study config: {0}")]
    InvalidConfig(String),
    #[error("unknown session {0}")]
    UnknownSession(String),
    #[error("no images left to assign")]
    PoolExhausted,
    #[error("unknown image {0}")]
    UnknownImage(String),
    #[error("annotation {annotation_id}: {reason}")]
    InvalidAnnotation { annotation_id: String, reason: String },
    #[error("contingency table has a zero marginal")]
    DegenerateTable,
    #[error("contingency table needs at least 2x2, got {rows}x{cols}")]
    TableTooSmall { rows: usize, cols: usize },
    #[error("contingency table rows differ in length")]
    RaggedTable,
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("{path}: {message}")]
    Parse { path: PathBuf, message: String },
    #[error(transparent)]
    Image(#[from] ImageIoError),
    #[error(transparent)]
    Eval(#[from] EvalError),
}

pub(crate) fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> HumanBenchError + '_ {
    move |source| HumanBenchError::Io { path: path.to_path_buf(), source }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StudyImage {
    pub id: String,
    /// Relative to the study directory unless absolute.
    pub path: String,
    pub label: Label,
    /// The authentic image this one derives from (itself for authentic ones).
    pub source_id: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ugda: Option<UgdaState>,
    /// Ground-truth box for inpainted images; derived from `mask_path` when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub bbox: Option<BBox>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mask_path: Option<String>,
}

fn default_batch() -> usize {
    20
}
fn default_min() -> u32 {
    3
}
fn default_max() -> u32 {
    5
}
fn default_timeout() -> u64 {
    30 * 60
}
fn default_min_votes() -> u64 {
    20
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StudyConfig {
    pub name: String,
    pub images: Vec<StudyImage>,
    #[serde(default = "default_batch")]
    pub batch_size: usize,
    #[serde(default = "default_min")]
    pub min_assessments: u32,
    #[serde(default = "default_max")]
    pub max_assessments: u32,
    #[serde(default = "default_timeout")]
    pub inflight_timeout_secs: u64,
    #[serde(default = "default_min_votes")]
    pub min_votes: u64,
}

/// What aggregation needs to know about one image.
#[derive(Debug, Clone, PartialEq)]
pub struct GroundTruth {
    pub label: Label,
    pub bbox: Option<BBox>,
    pub ugda: Option<UgdaState>,
}

impl StudyConfig {
    pub fn new(name: impl Into<String>, images: Vec<StudyImage>) -> Self {
        Self {
            name: name.into(),
            images,
            batch_size: default_batch(),
            min_assessments: default_min(),
            max_assessments: default_max(),
            inflight_timeout_secs: default_timeout(),
            min_votes: default_min_votes(),
        }
    }

    pub fn validate(&self) -> Result<(), HumanBenchError> {
        let bad = |m: String| Err(HumanBenchError::InvalidConfig(m));
        if self.images.is_empty() {
            return bad("empty image pool".into());
        }
        if self.batch_size == 0 {
            return bad("batch_size must be positive".into());
        }
        if self.min_assessments == 0 || self.min_assessments > self.max_assessments {
            return bad(format!(
                "need 1 <= min_assessments ({}) <= max_assessments ({})",
                self.min_assessments, self.max_assessments
            ));
        }
        let mut ids = HashSet::new();
        let mut authentic_sources = HashSet::new();
        let mut inpainted_sources: HashMap<&str, &str> = HashMap::new();
        for img in &self.images {
            if !ids.insert(img.id.as_str()) {
                return bad(format!("duplicate image id {}", img.id));
            }
            match img.label {
                Label::Authentic => {
                    authentic_sources.insert(img.source_id.as_str());
                }
                Label::Inpainted => {
                    if img.bbox.is_none() && img.mask_path.is_none() {
                        return bad(format!("{} has neither bbox nor mask_path", img.id));
                    }
                    if let Some(prev) = inpainted_sources.insert(&img.source_id, &img.id) {
                        return bad(format!("{prev} and {} share source {}", img.id, img.source_id));
                    }
                }
            }
        }
        if let Some((src, id)) = inpainted_sources.iter().find(|(s, _)| authentic_sources.contains(*s)) {
            return bad(format!("{id} derives from {src}, which is also in the authentic pool"));
        }
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, HumanBenchError> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(io_err(path))?;
        let cfg: Self = serde_json::from_str(&text)
            .map_err(|e| HumanBenchError::Parse { path: path.to_path_buf(), message: e.to_string() })?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<(), HumanBenchError> {
        let path = path.as_ref();
        if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
            std::fs::create_dir_all(dir).map_err(io_err(dir))?;
        }
        let text = serde_json::to_string_pretty(self).expect("config serializes");
        std::fs::write(path, text + "\n").map_err(io_err(path))
    }

    /// Ground truth per image id; boxes come from `bbox` or the mask file.
    pub fn ground_truth(&self, base: &Path) -> Result<HashMap<String, GroundTruth>, HumanBenchError> {
        let mut out = HashMap::new();
        for img in &self.images {
            let bbox = match (img.label, img.bbox, &img.mask_path) {
                (Label::Authentic, _, _) => None,
                (_, Some(b), _) => Some(b),
                (_, None, Some(p)) => mask_to_bbox(&open_mask(base.join(p))?),
                (_, None, None) => None,
            };
            out.insert(img.id.clone(), GroundTruth { label: img.label, bbox, ugda: img.ugda });
        }
        Ok(out)
    }

    /// Opaque id shown to participants, so file names and ids leak nothing
    /// about the label.
    pub fn public_id(&self, id: &str) -> String {
        let digest = Sha256::digest(format!("{}:{id}", self.name).as_bytes());
        hex::encode(&digest[..8])
    }

    /// Draws a study pool from the manifest's test split: up to `n_inpainted`
    /// inpaintings (one per authentic source) and up to `n_authentic`
    /// authentic images that no chosen inpainting derives from.
    pub fn from_manifest(
        manifest: &DatasetManifest,
        name: &str,
        n_inpainted: usize,
        n_authentic: usize,
        seed: u64,
    ) -> Result<Self, HumanBenchError> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let items = eval_items(manifest);
        let mut by_source: BTreeMap<String, Vec<&crate::eval::EvalItem>> = BTreeMap::new();
        let mut authentic = Vec::new();
        for item in &items {
            match item.label {
                Label::Authentic => authentic.push(item),
                Label::Inpainted => {
                    let rec = manifest.inpaint(&item.id).expect("eval items come from the manifest");
                    let root = manifest.root_image(rec).map(|r| r.id.clone()).unwrap_or_default();
                    by_source.entry(root).or_default().push(item);
                }
            }
        }
        let mut sources: Vec<&String> = by_source.keys().collect();
        sources.shuffle(&mut rng);
        sources.truncate(n_inpainted);
        let used: HashSet<&str> = sources.iter().map(|s| s.as_str()).collect();
        authentic.retain(|a| !used.contains(a.id.as_str()));
        authentic.shuffle(&mut rng);
        authentic.truncate(n_authentic);

        let mut images = Vec::new();
        for src in sources {
            let candidates = &by_source[src];
            let item = candidates[rand::Rng::random_range(&mut rng, 0..candidates.len())];
            let rec = manifest.inpaint(&item.id).expect("eval items come from the manifest");
            images.push(StudyImage {
                id: item.id.clone(),
                path: item.image_path.display().to_string(),
                label: Label::Inpainted,
                source_id: src.clone(),
                ugda: rec.ugda.as_ref().map(|u| u.state),
                bbox: mask_to_bbox(&ground_truth(item)?),
                mask_path: None,
            });
        }
        for a in authentic {
            images.push(StudyImage {
                id: a.id.clone(),
                path: a.image_path.display().to_string(),
                label: Label::Authentic,
                source_id: a.id.clone(),
                ugda: None,
                bbox: None,
                mask_path: None,
            });
        }
        images.sort_by(|a, b| a.id.cmp(&b.id));
        let cfg = Self::new(name, images);
        cfg.validate()?;
        Ok(cfg)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Annotation {
    /// Client-generated; resubmissions with a known id are ignored.
    pub annotation_id: String,
    #[serde(default)]
    pub session_id: String,
    pub image_id: String,
    pub verdict: Label,
    #[serde(default)]
    pub boxes: Vec<BBox>,
    #[serde(default)]
    pub elapsed_ms: u64,
}

impl Annotation {
    pub fn validate(&self) -> Result<(), HumanBenchError> {
        let fail = |reason: &str| {
            Err(HumanBenchError::InvalidAnnotation {
                annotation_id: self.annotation_id.clone(),
                reason: reason.into(),
            })
        };
        if self.annotation_id.trim().is_empty() {
            return fail("missing annotation_id");
        }
        match (self.verdict, self.boxes.is_empty()) {
            (Label::Inpainted, true) => return fail("an inpainted verdict needs at least one box"),
            (Label::Authentic, false) => return fail("an authentic verdict takes no boxes"),
            _ => {}
        }
        if self.boxes.iter().any(|b| !b.is_valid()) {
            return fail("box with min > max");
        }
        Ok(())
    }
}
