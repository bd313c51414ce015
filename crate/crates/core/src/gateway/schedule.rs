use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::manifest::{DatasetManifest, InpaintRecord};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum ScheduleError {
    #[error("fraction_double must lie in [0, 1], got {0}")]
    InvalidFraction(f64),
    #[error("record {0} has no alternate mask for a second round")]
    NoAlternateMask(String),
    #[error("record {0} is not a round-1 record of this manifest")]
    NotEligible(String),
}

/// A second inpainting round on top of a round-1 output.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoundTwoJob {
    pub job_id: String,
    /// The round-1 record whose output becomes the input image.
    pub parent_id: String,
    /// Masks of the root image whose label differs from the first edit.
    pub candidate_masks: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct JobPlan {
    pub seed: u64,
    pub fraction_double: f64,
    pub eligible: usize,
    pub jobs: Vec<RoundTwoJob>,
}

fn alternate_masks(manifest: &DatasetManifest, rec: &InpaintRecord) -> Vec<String> {
    let Some(root) = manifest.root_image(rec) else { return Vec::new() };
    let used = manifest
        .mask(&rec.mask_id)
        .map(|m| m.object_label.trim().to_lowercase())
        .unwrap_or_default();
    let mut ids: Vec<String> = manifest
        .masks_for_image(&root.id)
        .into_iter()
        .filter(|m| m.id != rec.mask_id && m.object_label.trim().to_lowercase() != used)
        .map(|m| m.id.clone())
        .collect();
    ids.sort();
    ids
}

/// Round-1 records that have at least one differently labelled mask left.
pub fn eligible_for_second_round(manifest: &DatasetManifest) -> Vec<&InpaintRecord> {
    let mut out: Vec<&InpaintRecord> = manifest
        .inpaints
        .iter()
        .filter(|r| r.round == 1 && !alternate_masks(manifest, r).is_empty())
        .collect();
    out.sort_by(|a, b| a.id.cmp(&b.id));
    out
}

/// Seeded selection of ⌊fraction·N⌋ round-1 records for a second round.
/// The plan depends only on the record ids, the fraction and the seed.
pub fn schedule_rounds(
    manifest: &DatasetManifest,
    record_ids: &[String],
    fraction_double: f64,
    seed: u64,
) -> Result<JobPlan, ScheduleError> {
    if !(0.0..=1.0).contains(&fraction_double) {
        return Err(ScheduleError::InvalidFraction(fraction_double));
    }
    let mut ids: Vec<&String> = record_ids.iter().collect();
    ids.sort();
    ids.dedup();
    let n = ids.len();
    // The epsilon keeps 600 * (1/6) from landing on 99.999...
    let k = ((fraction_double * n as f64) + 1e-9).floor() as usize;
    let k = k.min(n);

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    ids.shuffle(&mut rng);
    let mut chosen: Vec<&String> = ids.into_iter().take(k).collect();
    chosen.sort();

    let mut jobs = Vec::with_capacity(k);
    for id in chosen {
        let rec = manifest
            .inpaint(id)
            .filter(|r| r.round == 1)
            .ok_or_else(|| ScheduleError::NotEligible(id.clone()))?;
        let candidate_masks = alternate_masks(manifest, rec);
        if candidate_masks.is_empty() {
            return Err(ScheduleError::NoAlternateMask(id.clone()));
        }
        jobs.push(RoundTwoJob { job_id: format!("{id}__r2"), parent_id: id.clone(), candidate_masks });
    }
    Ok(JobPlan { seed, fraction_double, eligible: n, jobs })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::manifest::{ImageRecord, MaskRecord, Pipeline, Preservation, SourceDataset, Split};

    fn manifest(n: usize, masks_per_image: usize) -> DatasetManifest {
        let mut images = Vec::new();
        let mut masks = Vec::new();
        let mut inpaints = Vec::new();
        for i in 0..n {
            let id = format!("img{i:04}");
            images.push(ImageRecord {
                id: id.clone(),
                source_dataset: SourceDataset::Coco,
                path: format!("{id}.png"),
                width: 8,
                height: 8,
                split: Split::Train,
                authentic: true,
                caption: None,
            });
            for m in 0..masks_per_image {
                masks.push(MaskRecord {
                    id: format!("{id}_m{m}"),
                    image_id: id.clone(),
                    object_label: format!("label{m}"),
                    mask_path: format!("{id}_m{m}.png"),
                    area_fraction: 0.1,
                });
            }
            inpaints.push(InpaintRecord {
                id: format!("{id}__r1"),
                parent_image_id: id.clone(),
                mask_id: format!("{id}_m0"),
                prompt: None,
                pipeline: Pipeline::BrushNet,
                model_name: "m".into(),
                preservation: Preservation::Sp,
                round: 1,
                inpainted_path: format!("{id}__r1.png"),
                split: Split::Train,
                ugda: None,
                provenance: None,
            });
        }
        DatasetManifest::new(images, masks, inpaints).unwrap()
    }

    fn ids(m: &DatasetManifest) -> Vec<String> {
        eligible_for_second_round(m).into_iter().map(|r| r.id.clone()).collect()
    }

    #[test]
    fn one_sixth_of_600_is_100() {
        let m = manifest(600, 2);
        let plan = schedule_rounds(&m, &ids(&m), 1.0 / 6.0, 7).unwrap();
        assert_eq!(plan.jobs.len(), 100);
        assert!(plan.jobs.iter().all(|j| j.candidate_masks.len() == 1 && !j.candidate_masks[0].ends_with("_m0")));
    }

    #[test]
    fn zero_fraction_and_determinism() {
        let m = manifest(60, 3);
        assert!(schedule_rounds(&m, &ids(&m), 0.0, 1).unwrap().jobs.is_empty());
        let a = schedule_rounds(&m, &ids(&m), 0.5, 11).unwrap();
        let mut shuffled = ids(&m);
        shuffled.reverse();
        assert_eq!(a, schedule_rounds(&m, &shuffled, 0.5, 11).unwrap());
        assert_ne!(a.jobs, schedule_rounds(&m, &ids(&m), 0.5, 12).unwrap().jobs);
    }

    #[test]
    fn single_mask_images_have_no_alternate() {
        let m = manifest(3, 1);
        assert!(eligible_for_second_round(&m).is_empty());
        let all: Vec<String> = m.inpaints.iter().map(|r| r.id.clone()).collect();
        assert_eq!(
            schedule_rounds(&m, &all, 1.0, 0),
            Err(ScheduleError::NoAlternateMask("img0000__r1".into()))
        );
        assert!(matches!(schedule_rounds(&m, &all, 1.5, 0), Err(ScheduleError::InvalidFraction(_))));
    }
}
