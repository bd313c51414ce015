use std::collections::{BTreeMap, HashMap};
use std::fmt::Write as _;

use serde::Serialize;

use super::demographics::DemographicFactor;
use super::stats::{chi_square_independence, filter_participants, ChiSquare, ContingencyTable, ParticipantTally};
use super::store::SessionRecord;
use super::{Annotation, GroundTruth, HumanBenchError, StudyConfig};
use crate::eval::{format_float, Observation};
use crate::metrics::{bbox_iou, Label};
use crate::ugda::UgdaState;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Category {
    Deceiving,
    Intermediate,
    NonDeceiving,
    Authentic,
}

impl Category {
    /// Unassessed and failed inpaintings count as non-deceiving.
    pub fn of(gt: &GroundTruth) -> Self {
        match (gt.label, gt.ugda) {
            (Label::Authentic, _) => Category::Authentic,
            (_, Some(UgdaState::Deceiving)) => Category::Deceiving,
            (_, Some(UgdaState::Intermediate)) => Category::Intermediate,
            _ => Category::NonDeceiving,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Category::Deceiving => "deceiving",
            Category::Intermediate => "intermediate",
            Category::NonDeceiving => "non_deceiving",
            Category::Authentic => "authentic",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct CategoryStats {
    pub n: usize,
    pub correct: usize,
    pub accuracy: f64,
    /// Over annotations of inpainted images; NaN (null) otherwise.
    pub mean_iou: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Aggregate {
    pub overall: CategoryStats,
    pub breakdown: BTreeMap<Category, CategoryStats>,
}

#[derive(Default)]
struct Acc {
    n: usize,
    correct: usize,
    iou_sum: f64,
    iou_n: usize,
}

impl Acc {
    fn stats(&self) -> CategoryStats {
        CategoryStats {
            n: self.n,
            correct: self.correct,
            accuracy: if self.n == 0 { f64::NAN } else { self.correct as f64 / self.n as f64 },
            mean_iou: if self.iou_n == 0 { f64::NAN } else { self.iou_sum / self.iou_n as f64 },
        }
    }
}

/// Canonical order (by annotation id, then content) with duplicates removed,
/// so results do not depend on arrival order.
fn canonical(annotations: &[Annotation]) -> Vec<&Annotation> {
    let mut keyed: Vec<(String, &Annotation)> = annotations
        .iter()
        .map(|a| (serde_json::to_string(a).expect("annotation serializes"), a))
        .collect();
    keyed.sort_by(|x, y| x.1.annotation_id.cmp(&y.1.annotation_id).then_with(|| x.0.cmp(&y.0)));
    keyed.dedup_by(|x, y| x.1.annotation_id == y.1.annotation_id);
    keyed.into_iter().map(|k| k.1).collect()
}

/// Accuracy of verdicts and box IoU against the ground-truth box, overall and
/// per category.
pub fn aggregate(annotations: &[Annotation], gt: &HashMap<String, GroundTruth>) -> Result<Aggregate, HumanBenchError> {
    let mut overall = Acc::default();
    let mut per: BTreeMap<Category, Acc> = BTreeMap::new();
    for a in canonical(annotations) {
        let truth = gt.get(&a.image_id).ok_or_else(|| HumanBenchError::UnknownImage(a.image_id.clone()))?;
        let correct = a.verdict == truth.label;
        let iou = truth.label.is_inpainted().then(|| bbox_iou(&a.boxes, truth.bbox.as_slice()));
        for acc in [&mut overall, per.entry(Category::of(truth)).or_default()] {
            acc.n += 1;
            acc.correct += correct as usize;
            if let Some(v) = iou {
                acc.iou_sum += v;
                acc.iou_n += 1;
            }
        }
    }
    Ok(Aggregate { overall: overall.stats(), breakdown: per.iter().map(|(k, v)| (*k, v.stats())).collect() })
}

/// Human judgments as split observations, keyed by image id.
pub fn human_observations(
    annotations: &[Annotation],
    gt: &HashMap<String, GroundTruth>,
) -> Result<Vec<Observation>, HumanBenchError> {
    canonical(annotations)
        .into_iter()
        .map(|a| {
            let truth = gt.get(&a.image_id).ok_or_else(|| HumanBenchError::UnknownImage(a.image_id.clone()))?;
            Ok(Observation {
                record_id: a.image_id.clone(),
                correct: a.verdict == truth.label,
                iou: truth.label.is_inpainted().then(|| bbox_iou(&a.boxes, truth.bbox.as_slice())),
            })
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FactorResult {
    pub factor: DemographicFactor,
    pub table: ContingencyTable,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub test: Option<ChiSquare>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StudyReport {
    pub study: String,
    pub n_images: usize,
    /// Images with at least the minimum number of assessments.
    pub n_images_complete: usize,
    pub n_sessions: usize,
    pub n_annotations: usize,
    /// Over annotations of complete images only.
    pub results: Aggregate,
    pub participants: Vec<ParticipantTally>,
    pub n_participants_kept: usize,
    pub demographics: Vec<FactorResult>,
}

impl StudyReport {
    pub fn build(
        cfg: &StudyConfig,
        gt: &HashMap<String, GroundTruth>,
        sessions: &[SessionRecord],
        annotations: &[Annotation],
    ) -> Result<Self, HumanBenchError> {
        let annotations = canonical(annotations);
        let mut per_image: HashMap<&str, u32> = HashMap::new();
        for a in &annotations {
            *per_image.entry(a.image_id.as_str()).or_default() += 1;
        }
        let complete: Vec<Annotation> = annotations
            .iter()
            .filter(|a| per_image[a.image_id.as_str()] >= cfg.min_assessments)
            .map(|a| (*a).clone())
            .collect();
        let results = aggregate(&complete, gt)?;

        let mut participants = Vec::new();
        for s in sessions {
            let mut tally =
                ParticipantTally { session_id: s.session_id.clone(), demographics: s.demographics, correct: 0, incorrect: 0 };
            for a in annotations.iter().filter(|a| a.session_id == s.session_id) {
                let truth = gt.get(&a.image_id).ok_or_else(|| HumanBenchError::UnknownImage(a.image_id.clone()))?;
                if a.verdict == truth.label {
                    tally.correct += 1;
                } else {
                    tally.incorrect += 1;
                }
            }
            participants.push(tally);
        }
        participants.sort_by(|a, b| a.session_id.cmp(&b.session_id));

        let demographics = DemographicFactor::ALL
            .iter()
            .map(|&factor| {
                let table = ContingencyTable::from_participants(&participants, factor, cfg.min_votes);
                let (test, error) = match chi_square_independence(&table) {
                    Ok(t) => (Some(t), None),
                    Err(e) => (None, Some(e.to_string())),
                };
                FactorResult { factor, table, test, error }
            })
            .collect();

        Ok(Self {
            study: cfg.name.clone(),
            n_images: cfg.images.len(),
            n_images_complete: per_image.values().filter(|&&c| c >= cfg.min_assessments).count(),
            n_sessions: sessions.len(),
            n_annotations: annotations.len(),
            results,
            n_participants_kept: filter_participants(&participants, cfg.min_votes).len(),
            participants,
            demographics,
        })
    }

    /// `category,n,correct,accuracy,mean_iou` with an `all` row first.
    pub fn results_csv(&self) -> String {
        let mut out = String::from("category,n,correct,accuracy,mean_iou\n");
        let rows = std::iter::once(("all", &self.results.overall))
            .chain(self.results.breakdown.iter().map(|(k, v)| (k.as_str(), v)));
        for (name, s) in rows {
            let _ = writeln!(out, "{name},{},{},{},{}", s.n, s.correct, format_float(s.accuracy), format_float(s.mean_iou));
        }
        out
    }

    /// `factor,n_participants,n_votes,chi2,df,p_value,cramers_v`; statistics are
    /// empty when the table is degenerate.
    pub fn demographics_csv(&self) -> String {
        let mut out = String::from("factor,n_participants,n_votes,chi2,df,p_value,cramers_v\n");
        for f in &self.demographics {
            let (chi2, df, p, v) = match &f.test {
                Some(t) => (format_float(t.chi2), t.df.to_string(), format_float(t.p_value), format_float(t.cramers_v)),
                None => Default::default(),
            };
            let _ = writeln!(out, "{},{},{},{chi2},{df},{p},{v}", f.factor.as_str(), self.n_participants_kept, f.table.total());
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use proptest::prelude::*;

    use super::*;
    use crate::metrics::BBox;

    fn gt() -> HashMap<String, GroundTruth> {
        let b = Some(BBox::new(0, 0, 9, 9));
        HashMap::from([
            ("d".into(), GroundTruth { label: Label::Inpainted, bbox: b, ugda: Some(UgdaState::Deceiving) }),
            ("i".into(), GroundTruth { label: Label::Inpainted, bbox: b, ugda: Some(UgdaState::Intermediate) }),
            ("n".into(), GroundTruth { label: Label::Inpainted, bbox: b, ugda: Some(UgdaState::NotAssessed) }),
            ("a".into(), GroundTruth { label: Label::Authentic, bbox: None, ugda: None }),
        ])
    }

    fn ann(id: &str, image: &str, verdict: Label, boxes: Vec<BBox>) -> Annotation {
        Annotation {
            annotation_id: id.into(),
            session_id: "s".into(),
            image_id: image.into(),
            verdict,
            boxes,
            elapsed_ms: 0,
        }
    }

    /// Ten annotations with hand-computed IoUs: exact box = 1, a 10x5 half
    /// box = 0.5, a disjoint box = 0, no box = 0.
    fn fixture() -> Vec<Annotation> {
        let exact = vec![BBox::new(0, 0, 9, 9)];
        let half = vec![BBox::new(0, 0, 9, 4)];
        let off = vec![BBox::new(20, 20, 25, 25)];
        use Label::{Authentic as A, Inpainted as I};
        vec![
            ann("01", "d", I, exact.clone()),
            ann("02", "d", A, vec![]),
            ann("03", "d", I, half.clone()),
            ann("04", "i", I, off),
            ann("05", "i", I, half),
            ann("06", "n", A, vec![]),
            ann("07", "n", I, exact),
            ann("08", "a", A, vec![]),
            ann("09", "a", I, vec![BBox::new(1, 1, 2, 2)]),
            ann("10", "a", A, vec![]),
        ]
    }

    #[test]
    fn hand_tallied_fixture() {
        let agg = aggregate(&fixture(), &gt()).unwrap();
        // Correct: 01 03 04 05 07 08 10.
        assert_eq!((agg.overall.n, agg.overall.correct), (10, 7));
        assert!((agg.overall.accuracy - 0.7).abs() < 1e-15);
        // IoUs over the 7 inpainted annotations: 1, 0, .5, 0, .5, 0, 1.
        assert!((agg.overall.mean_iou - 3.0 / 7.0).abs() < 1e-15);
        let d = agg.breakdown[&Category::Deceiving];
        assert_eq!((d.n, d.correct), (3, 2));
        assert!((d.mean_iou - 0.5).abs() < 1e-15);
        let i = agg.breakdown[&Category::Intermediate];
        assert_eq!((i.n, i.correct, i.mean_iou), (2, 2, 0.25));
        let n = agg.breakdown[&Category::NonDeceiving];
        assert_eq!((n.n, n.correct, n.mean_iou), (2, 1, 0.5));
        let a = agg.breakdown[&Category::Authentic];
        assert_eq!((a.n, a.correct), (3, 2));
        assert!(a.mean_iou.is_nan());
    }

    #[test]
    fn trivial_cases_and_unknown_image() {
        let exact = vec![BBox::new(0, 0, 9, 9)];
        let all_right: Vec<_> = ["d", "i", "n"].iter().map(|im| ann(im, im, Label::Inpainted, exact.clone())).collect();
        let agg = aggregate(&all_right, &gt()).unwrap();
        assert_eq!((agg.overall.accuracy, agg.overall.mean_iou), (1.0, 1.0));
        let all_wrong: Vec<_> = ["d", "i", "n"].iter().map(|im| ann(im, im, Label::Authentic, vec![])).collect();
        assert_eq!(aggregate(&all_wrong, &gt()).unwrap().overall.accuracy, 0.0);
        assert!(matches!(
            aggregate(&[ann("x", "zzz", Label::Authentic, vec![])], &gt()),
            Err(HumanBenchError::UnknownImage(id)) if id == "zzz"
        ));
    }

    proptest! {
        #[test]
        fn order_independent(perm in Just(fixture()).prop_shuffle(), dup in 0usize..10) {
            let mut shuffled = perm;
            let extra = shuffled[dup].clone();
            shuffled.push(extra);
            let a = aggregate(&shuffled, &gt()).unwrap();
            let b = aggregate(&fixture(), &gt()).unwrap();
            prop_assert_eq!(format!("{a:?}"), format!("{b:?}"));
        }
    }
}
