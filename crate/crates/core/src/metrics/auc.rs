use image::GrayImage;

use super::{resize_mask_nearest, LocMap, MetricsError};

/// Side of the common grid localization maps are resampled to.
pub const LOC_GRID: u32 = 256;

/// Area under the ROC curve as the Mann-Whitney statistic: the probability
/// that a random positive outscores a random negative, ties counting half.
/// Computed from average ranks after one sort.
pub fn roc_auc(scores: &[f64], positives: &[bool]) -> Result<f64, MetricsError> {
    if scores.len() != positives.len() {
        return Err(MetricsError::LengthMismatch(scores.len(), positives.len()));
    }
    if scores.iter().any(|s| s.is_nan()) {
        return Err(MetricsError::NotANumber);
    }
    let mut pairs: Vec<(f64, bool)> = scores.iter().copied().zip(positives.iter().copied()).collect();
    auc_of_pairs(&mut pairs)
}

fn auc_of_pairs(pairs: &mut [(f64, bool)]) -> Result<f64, MetricsError> {
    ScoreHistogram::from_pairs(pairs.iter().copied()).auc()
}

/// Labelled scores collapsed to distinct values with positive/negative
/// counts, sorted ascending. Histograms merge without losing ties, so the
/// AUC of a union equals the AUC of the concatenated scores.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ScoreHistogram {
    bins: Vec<(f64, u64, u64)>,
}

impl ScoreHistogram {
    pub fn from_pairs(pairs: impl IntoIterator<Item = (f64, bool)>) -> Self {
        let bins = pairs.into_iter().map(|(s, p)| (s, p as u64, !p as u64)).collect();
        Self::normalized(bins)
    }

    /// One image: every pixel of the map resampled to `grid`×`grid`
    /// (bilinear) against the mask resampled the same way (nearest).
    pub fn from_map(loc: &LocMap, gt: &GrayImage, grid: u32) -> Self {
        let loc = loc.resize(grid, grid);
        let gt = resize_mask_nearest(gt, grid, grid);
        Self::from_pairs(loc.values().iter().copied().zip(gt.as_raw().iter().map(|&g| g > 127)))
    }

    pub fn merge<'a>(parts: impl IntoIterator<Item = &'a ScoreHistogram>) -> Self {
        Self::normalized(parts.into_iter().flat_map(|h| h.bins.iter().copied()).collect())
    }

    fn normalized(mut bins: Vec<(f64, u64, u64)>) -> Self {
        bins.sort_unstable_by(|a, b| a.0.total_cmp(&b.0));
        let mut out: Vec<(f64, u64, u64)> = Vec::with_capacity(bins.len());
        for (s, p, n) in bins {
            match out.last_mut() {
                Some(last) if last.0 == s => {
                    last.1 += p;
                    last.2 += n;
                }
                _ => out.push((s, p, n)),
            }
        }
        Self { bins: out }
    }

    pub fn positives(&self) -> u64 {
        self.bins.iter().map(|b| b.1).sum()
    }

    pub fn negatives(&self) -> u64 {
        self.bins.iter().map(|b| b.2).sum()
    }

    /// Mann-Whitney U over the bins: each positive beats every negative in a
    /// lower bin and ties half of those in its own bin. Kept doubled so the
    /// sum stays in integers.
    pub fn auc(&self) -> Result<f64, MetricsError> {
        let (p, n) = (self.positives(), self.negatives());
        if p == 0 || n == 0 {
            return Err(MetricsError::DegenerateClasses { positives: p as usize, negatives: n as usize });
        }
        let mut doubled_u: u128 = 0;
        let mut below: u128 = 0;
        for &(_, pos, neg) in &self.bins {
            doubled_u += pos as u128 * (2 * below + neg as u128);
            below += neg as u128;
        }
        Ok(doubled_u as f64 / (2 * p as u128 * n as u128) as f64)
    }
}

/// ROC AUC over all pixels after resampling every map (bilinear) and mask
/// (nearest) to a `grid`×`grid` raster and concatenating them.
pub fn localization_auc(items: &[(&LocMap, &GrayImage)], grid: u32) -> Result<f64, MetricsError> {
    if items.is_empty() {
        return Err(MetricsError::EmptyInput);
    }
    let parts: Vec<ScoreHistogram> = items.iter().map(|(loc, gt)| ScoreHistogram::from_map(loc, gt, grid)).collect();
    ScoreHistogram::merge(&parts).auc()
}
