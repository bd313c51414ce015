use serde::Serialize;

use super::{DatasetManifest, Pipeline};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum ViolationKind {
    InvalidDimensions,
    UnresolvablePath,
    DimensionMismatch,
    AreaFractionOutOfRange,
    PreservationRuleViolation,
    InvalidRound,
    RoundParentMismatch,
    PromptRuleViolation,
    SplitMismatch,
    DanglingReference,
    ForeignMask,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Violation {
    pub record_id: String,
    pub kind: ViolationKind,
    pub detail: String,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct ValidationReport {
    pub violations: Vec<Violation>,
}

impl ValidationReport {
    pub fn is_clean(&self) -> bool {
        self.violations.is_empty()
    }

    pub fn count(&self, kind: ViolationKind) -> usize {
        self.violations.iter().filter(|v| v.kind == kind).count()
    }

    fn push(&mut self, record_id: &str, kind: ViolationKind, detail: impl Into<String>) {
        self.violations.push(Violation {
            record_id: record_id.to_string(),
            kind,
            detail: detail.into(),
        });
    }
}

/// Checks every record invariant, touching the filesystem for path and
/// mask-dimension checks. Never fails: problems become report entries.
pub fn validate(manifest: &DatasetManifest) -> ValidationReport {
    let mut report = ValidationReport::default();

    for img in &manifest.images {
        if img.width == 0 || img.height == 0 {
            report.push(&img.id, ViolationKind::InvalidDimensions, format!("{}x{}", img.width, img.height));
        }
        if !manifest.resolve(&img.path).is_file() {
            report.push(&img.id, ViolationKind::UnresolvablePath, img.path.clone());
        }
    }

    for mask in &manifest.masks {
        if !(0.0..=1.0).contains(&mask.area_fraction) {
            report.push(&mask.id, ViolationKind::AreaFractionOutOfRange, mask.area_fraction.to_string());
        }
        let Some(parent) = manifest.image(&mask.image_id) else {
            report.push(&mask.id, ViolationKind::DanglingReference, mask.image_id.clone());
            continue;
        };
        match image::image_dimensions(manifest.resolve(&mask.mask_path)) {
            Ok((w, h)) if (w, h) != (parent.width, parent.height) => report.push(
                &mask.id,
                ViolationKind::DimensionMismatch,
                format!("mask {w}x{h}, image {}x{}", parent.width, parent.height),
            ),
            Ok(_) => {}
            Err(_) => report.push(&mask.id, ViolationKind::UnresolvablePath, mask.mask_path.clone()),
        }
    }

    for rec in &manifest.inpaints {
        if !rec.pipeline.allowed_preservation().contains(&rec.preservation) {
            report.push(
                &rec.id,
                ViolationKind::PreservationRuleViolation,
                format!("{} cannot produce {}", rec.pipeline, rec.preservation),
            );
        }
        let removal = rec.pipeline == Pipeline::RemoveAnything;
        let has_prompt = rec.prompt.as_ref().is_some_and(|p| !p.prompt_text.is_empty());
        if removal == has_prompt {
            report.push(
                &rec.id,
                ViolationKind::PromptRuleViolation,
                if removal { "removal record carries a prompt" } else { "inpaint record without prompt" },
            );
        }
        if !manifest.resolve(&rec.inpainted_path).is_file() {
            report.push(&rec.id, ViolationKind::UnresolvablePath, rec.inpainted_path.clone());
        }

        match rec.round {
            1 if manifest.image(&rec.parent_image_id).is_none() => report.push(
                &rec.id,
                ViolationKind::RoundParentMismatch,
                "round-1 record must derive from an authentic image",
            ),
            2 if manifest.inpaint(&rec.parent_image_id).map(|p| p.round) != Some(1) => report.push(
                &rec.id,
                ViolationKind::RoundParentMismatch,
                "round-2 record must derive from a round-1 record",
            ),
            1 | 2 => {}
            r => report.push(&rec.id, ViolationKind::InvalidRound, r.to_string()),
        }

        let Some(root) = manifest.root_image(rec) else {
            report.push(&rec.id, ViolationKind::DanglingReference, rec.parent_image_id.clone());
            continue;
        };
        if rec.split != root.split {
            report.push(
                &rec.id,
                ViolationKind::SplitMismatch,
                format!("{} but root {} is {}", rec.split, root.id, root.split),
            );
        }
        match manifest.mask(&rec.mask_id) {
            None => report.push(&rec.id, ViolationKind::DanglingReference, rec.mask_id.clone()),
            Some(mask) if mask.image_id != root.id => report.push(
                &rec.id,
                ViolationKind::ForeignMask,
                format!("mask {} belongs to {}", mask.id, mask.image_id),
            ),
            Some(_) => {}
        }
    }
    report
}

#[cfg(test)]
mod tests {
    use std::path::Path;

    use image::{GrayImage, RgbImage};

    use super::*;
    use crate::manifest::{
        ImageRecord, InpaintRecord, MaskRecord, Preservation, SourceDataset, Split,
    };
    use crate::saor::PromptSpec;

    fn write_fixture(dir: &Path, mask_dims: (u32, u32)) -> DatasetManifest {
        RgbImage::new(8, 6).save(dir.join("a.png")).unwrap();
        RgbImage::new(8, 6).save(dir.join("a_r1.png")).unwrap();
        GrayImage::new(mask_dims.0, mask_dims.1).save(dir.join("m.png")).unwrap();
        let images = vec![ImageRecord {
            id: "a".into(),
            source_dataset: SourceDataset::Coco,
            path: "a.png".into(),
            width: 8,
            height: 6,
            split: Split::TestId,
            authentic: true,
            caption: Some("a cup on a table".into()),
        }];
        let masks = vec![MaskRecord {
            id: "m".into(),
            image_id: "a".into(),
            object_label: "cup".into(),
            mask_path: "m.png".into(),
            area_fraction: 0.2,
        }];
        let inpaints = vec![InpaintRecord {
            id: "a_r1".into(),
            parent_image_id: "a".into(),
            mask_id: "m".into(),
            prompt: Some(PromptSpec::new("cup", "a glass of milk")),
            pipeline: Pipeline::BrushNet,
            model_name: "sd15".into(),
            preservation: Preservation::Sp,
            round: 1,
            inpainted_path: "a_r1.png".into(),
            split: Split::TestId,
            ugda: None,
            provenance: None,
        }];
        DatasetManifest::new(images, masks, inpaints).unwrap().with_base_dir(dir)
    }

    #[test]
    fn clean_fixture_has_no_violations() {
        let dir = tempfile::tempdir().unwrap();
        let m = write_fixture(dir.path(), (8, 6));
        let report = validate(&m);
        assert!(report.is_clean(), "{report:?}");
    }

    #[test]
    fn wrong_mask_dimensions() {
        let dir = tempfile::tempdir().unwrap();
        let m = write_fixture(dir.path(), (8, 5));
        let report = validate(&m);
        assert_eq!(report.violations.len(), 1);
        assert_eq!(report.violations[0].kind, ViolationKind::DimensionMismatch);
        assert_eq!(report.violations[0].record_id, "m");
    }

    #[test]
    fn controlnet_tagged_sp() {
        let dir = tempfile::tempdir().unwrap();
        let (images, masks, mut inpaints) = write_fixture(dir.path(), (8, 6)).into_parts();
        inpaints[0].pipeline = Pipeline::ControlNet;
        let m = DatasetManifest::new(images, masks, inpaints).unwrap().with_base_dir(dir.path());
        let report = validate(&m);
        assert_eq!(report.violations.len(), 1);
        assert_eq!(report.violations[0].kind, ViolationKind::PreservationRuleViolation);
    }

    #[test]
    fn preservation_rule_table_is_exact() {
        // Rule-table oracle written out independently of `allowed_preservation`.
        let table = [
            (Pipeline::HdPainter, true, true),
            (Pipeline::BrushNet, true, true),
            (Pipeline::PowerPaint, true, true),
            (Pipeline::ControlNet, false, true),
            (Pipeline::InpaintAnything, true, false),
            (Pipeline::RemoveAnything, true, false),
        ];
        let dir = tempfile::tempdir().unwrap();
        let (images, masks, base) = write_fixture(dir.path(), (8, 6)).into_parts();
        for (pipeline, sp_ok, fr_ok) in table {
            for (pres, ok) in [(Preservation::Sp, sp_ok), (Preservation::Fr, fr_ok)] {
                let mut rec = base[0].clone();
                rec.pipeline = pipeline;
                rec.preservation = pres;
                if pipeline == Pipeline::RemoveAnything {
                    rec.prompt = None;
                }
                let m = DatasetManifest::new(images.clone(), masks.clone(), vec![rec])
                    .unwrap()
                    .with_base_dir(dir.path());
                let report = validate(&m);
                assert_eq!(
                    report.count(ViolationKind::PreservationRuleViolation) == 0,
                    ok,
                    "{pipeline} {pres}"
                );
                assert_eq!(report.violations.len(), usize::from(!ok));
            }
        }
    }

    #[test]
    fn split_mismatch_and_bad_round() {
        let dir = tempfile::tempdir().unwrap();
        let (images, masks, mut inpaints) = write_fixture(dir.path(), (8, 6)).into_parts();
        inpaints[0].split = Split::Train;
        inpaints[0].round = 3;
        let m = DatasetManifest::new(images, masks, inpaints).unwrap().with_base_dir(dir.path());
        let report = validate(&m);
        assert_eq!(report.count(ViolationKind::SplitMismatch), 1);
        assert_eq!(report.count(ViolationKind::InvalidRound), 1);
    }
}
