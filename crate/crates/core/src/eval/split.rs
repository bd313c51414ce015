use std::collections::{BTreeSet, HashMap};
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use super::report::format_float;
use super::{mean, EvalError, ImageEval};
use crate::ugda::UgdaState;

/// How records are partitioned.
#[derive(Debug, Clone, PartialEq)]
pub enum SplitRule {
    /// Top half by score (descending, ties by id) against the bottom half.
    Score(HashMap<String, f64>),
    /// DECEIVING against every other state.
    Ugda(HashMap<String, UgdaState>),
}

/// One judgment about a record: a human annotation or a detector decision.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Observation {
    pub record_id: String,
    pub correct: bool,
    #[serde(default)]
    pub iou: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SplitGroup {
    pub name: String,
    pub n_records: usize,
    pub n_observations: usize,
    pub accuracy: f64,
    pub mean_iou: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ScoreSplit {
    pub members: [Vec<String>; 2],
    pub groups: [SplitGroup; 2],
    /// First group minus second group.
    pub difference: SplitGroup,
}

fn group(name: &str, members: &[String], observations: &[Observation]) -> SplitGroup {
    let set: BTreeSet<&str> = members.iter().map(String::as_str).collect();
    let obs: Vec<&Observation> = observations.iter().filter(|o| set.contains(o.record_id.as_str())).collect();
    SplitGroup {
        name: name.to_string(),
        n_records: members.len(),
        n_observations: obs.len(),
        accuracy: mean(obs.iter().map(|o| o.correct as u8 as f64)),
        mean_iou: mean(obs.iter().filter_map(|o| o.iou)),
    }
}

/// One observation per evaluated image; IoU only for inpainted ones.
pub fn detector_observations(evals: &[ImageEval]) -> Vec<Observation> {
    evals
        .iter()
        .map(|e| Observation {
            record_id: e.id.clone(),
            correct: e.correct,
            iou: e.label.is_inpainted().then_some(e.iou),
        })
        .collect()
}

/// Partitions `records` by `rule` and aggregates the pooled observations of
/// each side.
pub fn split_by_score(
    records: &[String],
    rule: &SplitRule,
    observations: &[Observation],
) -> Result<ScoreSplit, EvalError> {
    let mut ids: Vec<String> = records.to_vec();
    ids.sort();
    ids.dedup();
    let (names, first, second) = match rule {
        SplitRule::Score(scores) => {
            let mut scored = Vec::with_capacity(ids.len());
            for id in &ids {
                let s = *scores.get(id).ok_or_else(|| EvalError::MissingScore(id.clone()))?;
                scored.push((s, id.clone()));
            }
            scored.sort_by(|a, b| b.0.total_cmp(&a.0).then_with(|| a.1.cmp(&b.1)));
            let top = scored.len().div_ceil(2);
            let mut first: Vec<String> = scored[..top].iter().map(|p| p.1.clone()).collect();
            let mut second: Vec<String> = scored[top..].iter().map(|p| p.1.clone()).collect();
            first.sort();
            second.sort();
            (["top50", "bottom50"], first, second)
        }
        SplitRule::Ugda(states) => {
            let mut first = Vec::new();
            let mut second = Vec::new();
            for id in ids {
                let state = *states.get(&id).ok_or_else(|| EvalError::MissingScore(id.clone()))?;
                if state.is_deceiving() {
                    first.push(id);
                } else {
                    second.push(id);
                }
            }
            (["deceiving", "non_deceiving"], first, second)
        }
    };
    let g1 = group(names[0], &first, observations);
    let g2 = group(names[1], &second, observations);
    let difference = SplitGroup {
        name: "difference".into(),
        n_records: 0,
        n_observations: 0,
        accuracy: g1.accuracy - g2.accuracy,
        mean_iou: g1.mean_iou - g2.mean_iou,
    };
    Ok(ScoreSplit { members: [first, second], groups: [g1, g2], difference })
}

impl ScoreSplit {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("group,n_records,n_observations,accuracy,mean_iou\n");
        for g in self.groups.iter().chain(std::iter::once(&self.difference)) {
            let _ = writeln!(
                out,
                "{},{},{},{},{}",
                g.name,
                g.n_records,
                g.n_observations,
                format_float(g.accuracy),
                format_float(g.mean_iou)
            );
        }
        out
    }
}
