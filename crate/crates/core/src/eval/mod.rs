//! Benchmark runs over detector outputs: grouped metric tables, the
//! recompression sweep and score-based splits.

mod detector;
mod fidelity;
mod report;
mod split;
mod sweep;

use std::collections::{BTreeMap, BTreeSet};
use std::path::PathBuf;

use image::{GrayImage, Luma};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::imageio::{open_mask, ImageIoError};
use crate::manifest::{to_jsonl, DatasetManifest, Split};
use crate::metrics::{
    detection_accuracy, pixel_iou_resized, resize_mask_nearest, DetectorOutput, Label, ScoreHistogram,
    MetricsError, LOC_GRID,
};
use crate::ugda::UgdaState;

pub use detector::{load_detector_dir, load_detector_jsonl, load_detector_outputs};
pub use fidelity::{fidelity_rows, write_fidelity_csv, FidelityRow};
pub use report::{format_float, write_report, MetricReport, ReportMeta, ReportRow};
pub use split::{detector_observations, split_by_score, Observation, ScoreSplit, SplitGroup, SplitRule};
pub use sweep::{
    compression_sweep, encode_variant, Codec, DetectorSource, SweepConfig, SweepReport, Variant, DEFAULT_QUALITIES,
};

#[derive(Debug, thiserror::Error)]
pub enum EvalError {
    #[error("missing detector output for {} image(s): {}", .0.len(), .0.join(", "))]
    MissingOutput(Vec<String>),
    #[error("missing score for record {0}")]
    MissingScore(String),
    #[error("invalid grouping: {0}")]
    InvalidGrouping(String),
    #[error("cannot access {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("cannot parse {path}: {message}")]
    Parse { path: PathBuf, message: String },
    #[error(transparent)]
    Image(#[from] ImageIoError),
    #[error("{id}: {source}")]
    Metric {
        id: String,
        #[source]
        source: MetricsError,
    },
    #[error("cannot encode {codec}: {message}")]
    Encode { codec: String, message: String },
    #[error("detector failed: {0}")]
    Detector(String),
}

pub(crate) fn io_err(path: impl Into<PathBuf>) -> impl FnOnce(std::io::Error) -> EvalError {
    let path = path.into();
    move |source| EvalError::Io { path, source }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum GroupAxis {
    Split,
    Preservation,
    Pipeline,
    Rounds,
    Ugda,
}

impl GroupAxis {
    pub fn as_str(self) -> &'static str {
        match self {
            GroupAxis::Split => "split",
            GroupAxis::Preservation => "preservation",
            GroupAxis::Pipeline => "pipeline",
            GroupAxis::Rounds => "rounds",
            GroupAxis::Ugda => "ugda",
        }
    }
}

impl std::str::FromStr for GroupAxis {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().as_str() {
            "split" => Ok(GroupAxis::Split),
            "preservation" => Ok(GroupAxis::Preservation),
            "pipeline" => Ok(GroupAxis::Pipeline),
            "rounds" => Ok(GroupAxis::Rounds),
            "ugda" | "ugda_state" => Ok(GroupAxis::Ugda),
            other => Err(format!("unknown axis `{other}`")),
        }
    }
}

/// Axes to group report rows by; kept sorted and deduplicated.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GroupingSpec {
    axes: Vec<GroupAxis>,
}

impl GroupingSpec {
    pub fn new(axes: impl IntoIterator<Item = GroupAxis>) -> Result<Self, EvalError> {
        let axes: BTreeSet<GroupAxis> = axes.into_iter().collect();
        if axes.is_empty() {
            return Err(EvalError::InvalidGrouping("at least one axis is required".into()));
        }
        Ok(Self { axes: axes.into_iter().collect() })
    }

    pub fn axes(&self) -> &[GroupAxis] {
        &self.axes
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EvalOptions {
    /// Threshold for both localization maps and detection scores.
    pub threshold: f64,
    /// Average IoU over authentic images too (empty vs empty counts as 1).
    pub iou_includes_authentic: bool,
    pub loc_grid: u32,
}

impl Default for EvalOptions {
    fn default() -> Self {
        Self { threshold: 0.5, iou_includes_authentic: false, loc_grid: LOC_GRID }
    }
}

/// One test-split image to score: an authentic image or an inpainted record.
#[derive(Debug, Clone, PartialEq)]
pub struct EvalItem {
    pub id: String,
    pub label: Label,
    pub image_path: PathBuf,
    pub split: Split,
    /// Group value per axis; authentic images only carry `split`.
    pub keys: BTreeMap<GroupAxis, String>,
    /// Masks whose union is the ground truth (every round of the chain).
    pub mask_paths: Vec<PathBuf>,
}

fn split_key(split: Split) -> String {
    match split {
        Split::TestOod => "OOD".into(),
        Split::TestId => "ID".into(),
        other => other.as_str().into(),
    }
}

/// Test-split images of the manifest, sorted by id.
pub fn eval_items(manifest: &DatasetManifest) -> Vec<EvalItem> {
    let mut items = Vec::new();
    for img in manifest.images.iter().filter(|i| i.authentic && i.split.is_test()) {
        items.push(EvalItem {
            id: img.id.clone(),
            label: Label::Authentic,
            image_path: manifest.resolve(&img.path),
            split: img.split,
            keys: BTreeMap::from([(GroupAxis::Split, split_key(img.split))]),
            mask_paths: Vec::new(),
        });
    }
    for rec in manifest.inpaints.iter().filter(|r| r.split.is_test()) {
        let chain = manifest.inpaint_chain(rec);
        let keys = BTreeMap::from([
            (GroupAxis::Split, split_key(rec.split)),
            (GroupAxis::Preservation, rec.preservation.as_str().to_string()),
            (GroupAxis::Pipeline, rec.pipeline.as_str().to_string()),
            (GroupAxis::Rounds, if rec.round >= 2 { "double" } else { "single" }.to_string()),
            (
                GroupAxis::Ugda,
                rec.ugda.as_ref().map_or(UgdaState::NotAssessed, |u| u.state).as_str().to_string(),
            ),
        ]);
        items.push(EvalItem {
            id: rec.id.clone(),
            label: Label::Inpainted,
            image_path: manifest.resolve(&rec.inpainted_path),
            split: rec.split,
            keys,
            mask_paths: chain
                .iter()
                .filter_map(|r| manifest.mask(&r.mask_id))
                .map(|m| manifest.resolve(&m.mask_path))
                .collect(),
        });
    }
    items.sort_by(|a, b| a.id.cmp(&b.id));
    items
}

/// Ground truth at the evaluated image's resolution: the union of the
/// chain's masks (nearest-resized), or all zeros for authentic images.
pub fn ground_truth(item: &EvalItem) -> Result<GrayImage, EvalError> {
    let (w, h) = image::image_dimensions(&item.image_path)
        .map_err(|source| ImageIoError::Decode { context: item.image_path.display().to_string(), source })?;
    let mut gt = GrayImage::new(w, h);
    for path in &item.mask_paths {
        let mask = resize_mask_nearest(&open_mask(path)?, w, h);
        for (dst, src) in gt.pixels_mut().zip(mask.pixels()) {
            if src[0] > 127 {
                *dst = Luma([255]);
            }
        }
    }
    Ok(gt)
}

/// Metrics for one image plus its resampled maps for localization AUC.
#[derive(Debug, Clone)]
pub struct ImageEval {
    pub id: String,
    pub label: Label,
    pub det_score: f64,
    pub iou: f64,
    pub correct: bool,
    /// Pixel scores on the common grid, for localization AUC.
    pixels: ScoreHistogram,
}

pub fn evaluate_images(
    items: &[EvalItem],
    outputs: &BTreeMap<String, DetectorOutput>,
    opts: &EvalOptions,
) -> Result<Vec<ImageEval>, EvalError> {
    let missing: Vec<String> = items.iter().filter(|i| !outputs.contains_key(&i.id)).map(|i| i.id.clone()).collect();
    if !missing.is_empty() {
        return Err(EvalError::MissingOutput(missing));
    }
    items
        .par_iter()
        .map(|item| {
            let out = &outputs[&item.id];
            let gt = ground_truth(item)?;
            let iou = pixel_iou_resized(&out.loc_map, &gt, opts.threshold)
                .map_err(|source| EvalError::Metric { id: item.id.clone(), source })?;
            let grid = opts.loc_grid.max(1);
            Ok(ImageEval {
                id: item.id.clone(),
                label: item.label,
                det_score: out.det_score,
                iou,
                correct: (out.det_score >= opts.threshold) == item.label.is_inpainted(),
                pixels: ScoreHistogram::from_map(&out.loc_map, &gt, grid),
            })
        })
        .collect()
}

fn mean(values: impl Iterator<Item = f64>) -> f64 {
    let (sum, n) = values.fold((0.0, 0usize), |(s, n), v| (s + v, n + 1));
    if n == 0 {
        f64::NAN
    } else {
        sum / n as f64
    }
}

fn group_row(group: String, members: &[&ImageEval], opts: &EvalOptions) -> ReportRow {
    let n_inpainted = members.iter().filter(|m| m.label.is_inpainted()).count();
    let mean_iou = mean(
        members
            .iter()
            .filter(|m| opts.iou_includes_authentic || m.label.is_inpainted())
            .map(|m| m.iou),
    );
    let scores: Vec<f64> = members.iter().map(|m| m.det_score).collect();
    let labels: Vec<Label> = members.iter().map(|m| m.label).collect();
    let positives: Vec<bool> = labels.iter().map(|l| l.is_inpainted()).collect();
    let accuracy = detection_accuracy(&scores, &labels, opts.threshold).unwrap_or(f64::NAN);
    let det_auc = crate::metrics::roc_auc(&scores, &positives).unwrap_or(f64::NAN);
    let loc_auc = ScoreHistogram::merge(members.iter().map(|m| &m.pixels)).auc().unwrap_or(f64::NAN);
    ReportRow {
        group,
        n: members.len(),
        n_inpainted,
        n_authentic: members.len() - n_inpainted,
        mean_iou,
        accuracy,
        det_auc,
        loc_auc,
    }
}

/// Group key of an inpainted item, e.g. `preservation=SP;split=ID`.
fn group_key(keys: &BTreeMap<GroupAxis, String>, grouping: &GroupingSpec) -> String {
    grouping
        .axes()
        .iter()
        .map(|a| format!("{}={}", a.as_str(), keys.get(a).map(String::as_str).unwrap_or("-")))
        .collect::<Vec<_>>()
        .join(";")
}

pub fn manifest_sha256(manifest: &DatasetManifest) -> String {
    hex::encode(Sha256::digest(to_jsonl(manifest).as_bytes()))
}

/// Rows for every group present among the inpainted test images.
/// Authentic test images join every group of their split as negatives
/// (all groups when `split` is not an axis).
pub fn group_rows(
    items: &[EvalItem],
    evals: &[ImageEval],
    grouping: &GroupingSpec,
    opts: &EvalOptions,
) -> Vec<ReportRow> {
    let mut groups: BTreeMap<String, Vec<&ImageEval>> = BTreeMap::new();
    let mut group_split: BTreeMap<String, Option<String>> = BTreeMap::new();
    for (item, ev) in items.iter().zip(evals) {
        if item.label.is_inpainted() {
            let key = group_key(&item.keys, grouping);
            let split = grouping.axes().contains(&GroupAxis::Split).then(|| item.keys[&GroupAxis::Split].clone());
            group_split.insert(key.clone(), split);
            groups.entry(key).or_default().push(ev);
        }
    }
    for (item, ev) in items.iter().zip(evals) {
        if item.label.is_inpainted() {
            continue;
        }
        for (key, split) in &group_split {
            if split.as_ref().is_none_or(|s| *s == item.keys[&GroupAxis::Split]) {
                groups.get_mut(key).expect("group exists").push(ev);
            }
        }
    }
    groups
        .into_iter()
        .map(|(key, mut members)| {
            members.sort_by(|a, b| a.id.cmp(&b.id));
            group_row(key, &members, opts)
        })
        .collect()
}

/// All four metrics per group over the manifest's test split.
pub fn run_benchmark(
    manifest: &DatasetManifest,
    outputs: &BTreeMap<String, DetectorOutput>,
    detector_id: &str,
    grouping: &GroupingSpec,
    opts: &EvalOptions,
) -> Result<MetricReport, EvalError> {
    let items = eval_items(manifest);
    let evals = evaluate_images(&items, outputs, opts)?;
    Ok(MetricReport {
        rows: group_rows(&items, &evals, grouping, opts),
        meta: ReportMeta {
            manifest_sha256: manifest_sha256(manifest),
            detector_id: detector_id.to_string(),
            grouping: grouping.axes().iter().map(|a| a.as_str().to_string()).collect(),
            options: *opts,
            variant: None,
        },
    })
}

#[cfg(test)]
pub(crate) mod fixtures {
    use std::path::Path;

    use image::{Rgb, RgbImage};

    use super::*;
    use crate::metrics::LocMap;
    use crate::manifest::{ImageRecord, InpaintRecord, MaskRecord, Pipeline, Preservation, SourceDataset};
    use crate::saor::PromptSpec;

    /// Two authentic images with one SP and one FR inpainting each, all in
    /// TEST_ID, 4×4 with the left two columns masked.
    pub fn four_image_manifest(dir: &Path) -> DatasetManifest {
        let mut images = Vec::new();
        let mut masks = Vec::new();
        let mut inpaints = Vec::new();
        let mask = GrayImage::from_fn(4, 4, |x, _| Luma([if x < 2 { 255 } else { 0 }]));
        for i in 0..2 {
            let id = format!("a{i}");
            RgbImage::from_pixel(4, 4, Rgb([i * 50, 10, 10])).save(dir.join(format!("{id}.png"))).unwrap();
            mask.save(dir.join(format!("{id}_m.png"))).unwrap();
            images.push(ImageRecord {
                id: id.clone(),
                source_dataset: SourceDataset::Coco,
                path: format!("{id}.png"),
                width: 4,
                height: 4,
                split: Split::TestId,
                authentic: true,
                caption: None,
            });
            masks.push(MaskRecord {
                id: format!("{id}_m"),
                image_id: id.clone(),
                object_label: "cup".into(),
                mask_path: format!("{id}_m.png"),
                area_fraction: 0.5,
            });
            for (pres, pipe) in [(Preservation::Sp, Pipeline::BrushNet), (Preservation::Fr, Pipeline::ControlNet)] {
                let rid = format!("{id}_{}", pres.as_str().to_lowercase());
                RgbImage::from_pixel(4, 4, Rgb([200, 0, 0])).save(dir.join(format!("{rid}.png"))).unwrap();
                inpaints.push(InpaintRecord {
                    id: rid.clone(),
                    parent_image_id: id.clone(),
                    mask_id: format!("{id}_m"),
                    prompt: Some(PromptSpec::new("cup", "a mug")),
                    pipeline: pipe,
                    model_name: "m".into(),
                    preservation: pres,
                    round: 1,
                    inpainted_path: format!("{rid}.png"),
                    split: Split::TestId,
                    ugda: None,
                    provenance: None,
                });
            }
        }
        DatasetManifest::new(images, masks, inpaints).unwrap().with_base_dir(dir)
    }

    pub fn output(id: &str, map: Vec<f64>, score: f64) -> (String, DetectorOutput) {
        (id.to_string(), DetectorOutput { image_id: id.into(), loc_map: LocMap::new(4, 4, map).unwrap(), det_score: score })
    }

    /// Left-two-columns prediction with value `v`.
    pub fn left(v: f64) -> Vec<f64> {
        (0..16).map(|i| if i % 4 < 2 { v } else { 0.0 }).collect()
    }
}
