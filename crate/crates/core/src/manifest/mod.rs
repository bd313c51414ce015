//! Canonical data model for authentic images, masks and inpainted derivatives.
//!
//! A manifest is a JSONL file: one tagged record per line. Manifests are
//! immutable once loaded; stages produce new manifests through
//! [`DatasetManifest::new`].

mod io;
mod splits;
mod validate;

use std::collections::{BTreeMap, HashMap};
use std::fmt;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::gateway::Provenance;
use crate::saor::PromptSpec;
use crate::ugda::UgdaOutcome;

pub use io::{load_manifest, parse_manifest, save_manifest, to_jsonl};
pub use splits::{assign_splits, DatasetTarget, SplitAssignment, SplitPolicy, Target};
pub use validate::{validate, ValidationReport, Violation, ViolationKind};

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, thiserror::Error)]
pub enum ManifestError {
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("dangling reference to `{0}`")]
    DanglingReference(String),
    #[error("duplicate id `{0}`")]
    DuplicateId(String),
    #[error("split targets for {dataset} need {needed} records but only {available} are available")]
    InsufficientRecords {
        dataset: SourceDataset,
        needed: usize,
        available: usize,
    },
    #[error("invalid split policy: {0}")]
    InvalidPolicy(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum SourceDataset {
    Coco,
    Raise,
    #[serde(rename = "OPENIMAGES")]
    OpenImages,
    Custom,
}

impl fmt::Display for SourceDataset {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            SourceDataset::Coco => "COCO",
            SourceDataset::Raise => "RAISE",
            SourceDataset::OpenImages => "OPENIMAGES",
            SourceDataset::Custom => "CUSTOM",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum Split {
    Train,
    Val,
    TestId,
    TestOod,
}

impl Split {
    pub fn is_test(self) -> bool {
        matches!(self, Split::TestId | Split::TestOod)
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Split::Train => "TRAIN",
            Split::Val => "VAL",
            Split::TestId => "TEST_ID",
            Split::TestOod => "TEST_OOD",
        }
    }
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum Pipeline {
    #[serde(rename = "HDPAINTER")]
    HdPainter,
    #[serde(rename = "BRUSHNET")]
    BrushNet,
    #[serde(rename = "POWERPAINT")]
    PowerPaint,
    #[serde(rename = "CONTROLNET")]
    ControlNet,
    InpaintAnything,
    RemoveAnything,
}

impl Pipeline {
    pub const ALL: [Pipeline; 6] = [
        Pipeline::HdPainter,
        Pipeline::BrushNet,
        Pipeline::PowerPaint,
        Pipeline::ControlNet,
        Pipeline::InpaintAnything,
        Pipeline::RemoveAnything,
    ];

    /// Preservation modes a pipeline can legitimately produce.
    pub fn allowed_preservation(self) -> &'static [Preservation] {
        match self {
            Pipeline::ControlNet => &[Preservation::Fr],
            Pipeline::InpaintAnything | Pipeline::RemoveAnything => &[Preservation::Sp],
            Pipeline::HdPainter | Pipeline::BrushNet | Pipeline::PowerPaint => {
                &[Preservation::Sp, Preservation::Fr]
            }
        }
    }

    /// Removal pipelines take no text prompt.
    pub fn is_removal(self) -> bool {
        self == Pipeline::RemoveAnything
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Pipeline::HdPainter => "HDPAINTER",
            Pipeline::BrushNet => "BRUSHNET",
            Pipeline::PowerPaint => "POWERPAINT",
            Pipeline::ControlNet => "CONTROLNET",
            Pipeline::InpaintAnything => "INPAINT_ANYTHING",
            Pipeline::RemoveAnything => "REMOVE_ANYTHING",
        }
    }
}

impl fmt::Display for Pipeline {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Whether the unmasked area of an inpainted image is copied from the source
/// (spliced) or regenerated by the model.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Preservation {
    #[serde(rename = "SP")]
    Sp,
    #[serde(rename = "FR")]
    Fr,
}

impl Preservation {
    pub fn as_str(self) -> &'static str {
        match self {
            Preservation::Sp => "SP",
            Preservation::Fr => "FR",
        }
    }
}

impl fmt::Display for Preservation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImageRecord {
    pub id: String,
    pub source_dataset: SourceDataset,
    pub path: String,
    pub width: u32,
    pub height: u32,
    pub split: Split,
    pub authentic: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub caption: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MaskRecord {
    pub id: String,
    pub image_id: String,
    pub object_label: String,
    pub mask_path: String,
    pub area_fraction: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InpaintRecord {
    pub id: String,
    /// An [`ImageRecord`] for round 1, the round-1 [`InpaintRecord`] for round 2.
    pub parent_image_id: String,
    pub mask_id: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub prompt: Option<PromptSpec>,
    pub pipeline: Pipeline,
    pub model_name: String,
    pub preservation: Preservation,
    pub round: u32,
    pub inpainted_path: String,
    pub split: Split,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ugda: Option<UgdaOutcome>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub provenance: Option<Provenance>,
}

/// A fully linked manifest.
#[derive(Debug, Clone, Default)]
pub struct DatasetManifest {
    pub schema_version: u32,
    pub images: Vec<ImageRecord>,
    pub masks: Vec<MaskRecord>,
    pub inpaints: Vec<InpaintRecord>,
    /// Records (authentic and inpainted) per root dataset and split.
    pub split_counts: BTreeMap<SourceDataset, BTreeMap<Split, usize>>,
    /// Directory relative record paths resolve against.
    pub base_dir: Option<PathBuf>,
    image_index: HashMap<String, usize>,
    mask_index: HashMap<String, usize>,
    inpaint_index: HashMap<String, usize>,
}

/// What an id in the manifest points at.
#[derive(Debug, Clone, Copy)]
pub enum RecordRef<'a> {
    Image(&'a ImageRecord),
    Mask(&'a MaskRecord),
    Inpaint(&'a InpaintRecord),
}

impl DatasetManifest {
    /// Links the records, rejecting duplicate ids and dangling references.
    pub fn new(
        images: Vec<ImageRecord>,
        masks: Vec<MaskRecord>,
        inpaints: Vec<InpaintRecord>,
    ) -> Result<Self, ManifestError> {
        let mut m = Self::new_unchecked(images, masks, inpaints)?;
        m.check_references()?;
        m.split_counts = m.compute_split_counts();
        Ok(m)
    }

    /// Builds the indices without checking references. Duplicate ids are
    /// still rejected since lookups would be ambiguous.
    pub fn new_unchecked(
        images: Vec<ImageRecord>,
        masks: Vec<MaskRecord>,
        inpaints: Vec<InpaintRecord>,
    ) -> Result<Self, ManifestError> {
        let mut seen = std::collections::HashSet::new();
        let ids = images
            .iter()
            .map(|r| &r.id)
            .chain(masks.iter().map(|r| &r.id))
            .chain(inpaints.iter().map(|r| &r.id));
        for id in ids {
            if !seen.insert(id.as_str()) {
                return Err(ManifestError::DuplicateId(id.clone()));
            }
        }
        let image_index = images.iter().enumerate().map(|(i, r)| (r.id.clone(), i)).collect();
        let mask_index = masks.iter().enumerate().map(|(i, r)| (r.id.clone(), i)).collect();
        let inpaint_index = inpaints.iter().enumerate().map(|(i, r)| (r.id.clone(), i)).collect();
        let mut m = Self {
            schema_version: SCHEMA_VERSION,
            images,
            masks,
            inpaints,
            split_counts: BTreeMap::new(),
            base_dir: None,
            image_index,
            mask_index,
            inpaint_index,
        };
        m.split_counts = m.compute_split_counts();
        Ok(m)
    }

    pub fn with_base_dir(mut self, dir: impl Into<PathBuf>) -> Self {
        self.base_dir = Some(dir.into());
        self
    }

    pub fn len(&self) -> usize {
        self.images.len() + self.masks.len() + self.inpaints.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn image(&self, id: &str) -> Option<&ImageRecord> {
        self.image_index.get(id).map(|&i| &self.images[i])
    }

    pub fn mask(&self, id: &str) -> Option<&MaskRecord> {
        self.mask_index.get(id).map(|&i| &self.masks[i])
    }

    pub fn inpaint(&self, id: &str) -> Option<&InpaintRecord> {
        self.inpaint_index.get(id).map(|&i| &self.inpaints[i])
    }

    pub fn get(&self, id: &str) -> Option<RecordRef<'_>> {
        self.image(id)
            .map(RecordRef::Image)
            .or_else(|| self.mask(id).map(RecordRef::Mask))
            .or_else(|| self.inpaint(id).map(RecordRef::Inpaint))
    }

    /// Masks attached to an authentic image, in manifest order.
    pub fn masks_for_image(&self, image_id: &str) -> Vec<&MaskRecord> {
        self.masks.iter().filter(|m| m.image_id == image_id).collect()
    }

    /// Follows `parent_image_id` links up to the authentic root image.
    /// Returns `None` for dangling or cyclic chains.
    pub fn root_image(&self, inpaint: &InpaintRecord) -> Option<&ImageRecord> {
        let mut parent = inpaint.parent_image_id.as_str();
        for _ in 0..=self.inpaints.len() {
            if let Some(img) = self.image(parent) {
                return Some(img);
            }
            parent = self.inpaint(parent)?.parent_image_id.as_str();
        }
        None
    }

    /// Inpaint records in chain order, from round 1 up to `inpaint`.
    pub fn inpaint_chain<'a>(&'a self, inpaint: &'a InpaintRecord) -> Vec<&'a InpaintRecord> {
        let mut chain = vec![inpaint];
        let mut cur = inpaint;
        while let Some(parent) = self.inpaint(&cur.parent_image_id) {
            if chain.len() > self.inpaints.len() {
                break;
            }
            chain.push(parent);
            cur = parent;
        }
        chain.reverse();
        chain
    }

    /// Resolves a record path against the manifest's base directory.
    pub fn resolve(&self, path: &str) -> PathBuf {
        let p = Path::new(path);
        match &self.base_dir {
            Some(base) if p.is_relative() => base.join(p),
            _ => p.to_path_buf(),
        }
    }

    fn check_references(&self) -> Result<(), ManifestError> {
        for mask in &self.masks {
            if self.image(&mask.image_id).is_none() {
                return Err(ManifestError::DanglingReference(mask.image_id.clone()));
            }
        }
        for rec in &self.inpaints {
            if self.image(&rec.parent_image_id).is_none() && self.inpaint(&rec.parent_image_id).is_none() {
                return Err(ManifestError::DanglingReference(rec.parent_image_id.clone()));
            }
            if self.mask(&rec.mask_id).is_none() {
                return Err(ManifestError::DanglingReference(rec.mask_id.clone()));
            }
        }
        Ok(())
    }

    fn compute_split_counts(&self) -> BTreeMap<SourceDataset, BTreeMap<Split, usize>> {
        let mut counts: BTreeMap<SourceDataset, BTreeMap<Split, usize>> = BTreeMap::new();
        for img in &self.images {
            *counts.entry(img.source_dataset).or_default().entry(img.split).or_default() += 1;
        }
        for rec in &self.inpaints {
            if let Some(root) = self.root_image(rec) {
                *counts.entry(root.source_dataset).or_default().entry(rec.split).or_default() += 1;
            }
        }
        counts
    }

    pub fn into_parts(self) -> (Vec<ImageRecord>, Vec<MaskRecord>, Vec<InpaintRecord>) {
        (self.images, self.masks, self.inpaints)
    }
}
