use std::collections::{BTreeMap, BTreeSet};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{DatasetManifest, ImageRecord, ManifestError, SourceDataset, Split};

/// A split size, either an absolute count or a fraction of the dataset pool.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Target {
    Count(usize),
    Fraction(f64),
}

impl Default for Target {
    fn default() -> Self {
        Target::Count(0)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetTarget {
    pub dataset: SourceDataset,
    #[serde(default)]
    pub train: Target,
    #[serde(default)]
    pub val: Target,
    #[serde(default)]
    pub test: Target,
    /// Test images of an out-of-domain source go to `TEST_OOD`, and such a
    /// source may not contribute training or validation images.
    #[serde(default)]
    pub ood_source: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplitPolicy {
    #[serde(default)]
    pub seed: u64,
    pub datasets: Vec<DatasetTarget>,
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct SplitAssignment {
    pub splits: BTreeMap<String, Split>,
    /// Pool images not drawn into any split.
    pub unassigned: Vec<String>,
}

impl SplitAssignment {
    pub fn split_of(&self, id: &str) -> Option<Split> {
        self.splits.get(id).copied()
    }

    pub fn counts(&self) -> BTreeMap<Split, usize> {
        let mut out = BTreeMap::new();
        for s in self.splits.values() {
            *out.entry(*s).or_default() += 1;
        }
        out
    }

    /// Rewrites a manifest with the assigned splits. Unassigned images are
    /// dropped together with their masks and derivatives; every derivative
    /// takes the split of its root image.
    pub fn apply(&self, manifest: &DatasetManifest) -> Result<DatasetManifest, ManifestError> {
        let mut images = Vec::new();
        let mut kept = BTreeSet::new();
        for img in &manifest.images {
            if let Some(split) = self.split_of(&img.id) {
                kept.insert(img.id.clone());
                images.push(ImageRecord { split, ..img.clone() });
            }
        }
        let masks = manifest
            .masks
            .iter()
            .filter(|m| kept.contains(&m.image_id))
            .cloned()
            .collect();
        let mut inpaints = Vec::new();
        for rec in &manifest.inpaints {
            let Some(root) = manifest.root_image(rec) else {
                return Err(ManifestError::DanglingReference(rec.parent_image_id.clone()));
            };
            if let Some(split) = self.split_of(&root.id) {
                let mut rec = rec.clone();
                rec.split = split;
                inpaints.push(rec);
            }
        }
        let mut out = DatasetManifest::new(images, masks, inpaints)?;
        out.base_dir = manifest.base_dir.clone();
        Ok(out)
    }
}

fn resolve(target: Target, pool: usize) -> Result<usize, ManifestError> {
    match target {
        Target::Count(n) => Ok(n),
        Target::Fraction(f) if (0.0..=1.0).contains(&f) => Ok((f * pool as f64 + 1e-9).floor() as usize),
        Target::Fraction(f) => Err(ManifestError::InvalidPolicy(format!("fraction {f} outside [0, 1]"))),
    }
}

fn dataset_seed(seed: u64, dataset: SourceDataset) -> u64 {
    let salt = match dataset {
        SourceDataset::Coco => 1u64,
        SourceDataset::Raise => 2,
        SourceDataset::OpenImages => 3,
        SourceDataset::Custom => 4,
    };
    seed ^ salt.wrapping_mul(0x9E37_79B9_7F4A_7C15)
}

/// Draws train/val/test splits per source dataset.
///
/// Deterministic in `policy.seed`: ids are sorted, shuffled with a ChaCha
/// stream keyed by seed and dataset, then cut into consecutive runs.
pub fn assign_splits(records: &[ImageRecord], policy: &SplitPolicy) -> Result<SplitAssignment, ManifestError> {
    let mut pools: BTreeMap<SourceDataset, Vec<&str>> = BTreeMap::new();
    for r in records {
        pools.entry(r.source_dataset).or_default().push(r.id.as_str());
    }

    let mut seen = BTreeSet::new();
    for t in &policy.datasets {
        if !seen.insert(t.dataset) {
            return Err(ManifestError::InvalidPolicy(format!("dataset {} listed twice", t.dataset)));
        }
    }

    let mut assignment = SplitAssignment::default();
    for (dataset, mut ids) in pools {
        ids.sort_unstable();
        let Some(target) = policy.datasets.iter().find(|t| t.dataset == dataset) else {
            assignment.unassigned.extend(ids.iter().map(|s| s.to_string()));
            continue;
        };
        let n = ids.len();
        let mut train = resolve(target.train, n)?;
        let mut val = resolve(target.val, n)?;
        let mut test = resolve(target.test, n)?;

        let fractions: Vec<f64> = [target.train, target.val, target.test]
            .iter()
            .filter_map(|t| match t {
                Target::Fraction(f) => Some(*f),
                Target::Count(_) => None,
            })
            .collect();
        if fractions.len() == 3 {
            let total: f64 = fractions.iter().sum();
            if total > 1.0 + 1e-9 {
                return Err(ManifestError::InvalidPolicy(format!(
                    "fractions for {dataset} sum to {total}"
                )));
            }
            // Fractions covering the whole pool leave no image behind to rounding.
            if (total - 1.0).abs() <= 1e-9 {
                let rest = n.saturating_sub(train + val + test);
                if target.test != Target::Fraction(0.0) {
                    test += rest;
                } else if target.val != Target::Fraction(0.0) {
                    val += rest;
                } else {
                    train += rest;
                }
            }
        }
        if target.ood_source && (train > 0 || val > 0) {
            return Err(ManifestError::InvalidPolicy(format!(
                "out-of-domain source {dataset} cannot feed train/val"
            )));
        }
        let needed = train + val + test;
        if needed > n {
            return Err(ManifestError::InsufficientRecords {
                dataset,
                needed,
                available: n,
            });
        }

        let mut rng = ChaCha8Rng::seed_from_u64(dataset_seed(policy.seed, dataset));
        ids.shuffle(&mut rng);
        let test_split = if target.ood_source { Split::TestOod } else { Split::TestId };
        let runs = [(Split::Train, train), (Split::Val, val), (test_split, test)];
        let mut it = ids.into_iter();
        for (split, count) in runs {
            for id in it.by_ref().take(count) {
                assignment.splits.insert(id.to_string(), split);
            }
        }
        assignment.unassigned.extend(it.map(str::to_string));
    }
    assignment.unassigned.sort();
    Ok(assignment)
}
