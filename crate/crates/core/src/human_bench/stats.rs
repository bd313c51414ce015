use std::collections::BTreeMap;

use serde::Serialize;
use statrs::function::gamma::gamma_ur;

use super::demographics::{DemographicFactor, Demographics};
use super::HumanBenchError;

/// Category × outcome counts; columns are `[correct, incorrect]` when built
/// from participants.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ContingencyTable {
    pub rows: Vec<String>,
    pub cols: Vec<String>,
    pub counts: Vec<Vec<u64>>,
}

/// Vote tally of one participant.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ParticipantTally {
    pub session_id: String,
    pub demographics: Demographics,
    pub correct: u64,
    pub incorrect: u64,
}

impl ParticipantTally {
    pub fn votes(&self) -> u64 {
        self.correct + self.incorrect
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ChiSquare {
    pub chi2: f64,
    pub df: usize,
    pub p_value: f64,
    pub cramers_v: f64,
    pub n: u64,
}

/// Participants with at least `min_votes` votes.
pub fn filter_participants(participants: &[ParticipantTally], min_votes: u64) -> Vec<&ParticipantTally> {
    participants.iter().filter(|p| p.votes() >= min_votes).collect()
}

impl ContingencyTable {
    pub fn new(rows: Vec<String>, cols: Vec<String>, counts: Vec<Vec<u64>>) -> Result<Self, HumanBenchError> {
        if counts.len() != rows.len() || counts.iter().any(|r| r.len() != cols.len()) {
            return Err(HumanBenchError::RaggedTable);
        }
        Ok(Self { rows, cols, counts })
    }

    /// Rows are the factor's categories present among participants with at
    /// least `min_votes` votes, in questionnaire order; cells sum votes.
    pub fn from_participants(participants: &[ParticipantTally], factor: DemographicFactor, min_votes: u64) -> Self {
        let mut rows: BTreeMap<(usize, &'static str), [u64; 2]> = BTreeMap::new();
        for p in filter_participants(participants, min_votes) {
            let cell = rows.entry(factor.category(&p.demographics)).or_default();
            cell[0] += p.correct;
            cell[1] += p.incorrect;
        }
        Self {
            rows: rows.keys().map(|k| k.1.to_string()).collect(),
            cols: vec!["correct".into(), "incorrect".into()],
            counts: rows.values().map(|c| c.to_vec()).collect(),
        }
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().flatten().sum()
    }
}

/// Pearson chi-square test of independence, without continuity correction.
pub fn chi_square_independence(table: &ContingencyTable) -> Result<ChiSquare, HumanBenchError> {
    let r = table.counts.len();
    let c = table.cols.len();
    if table.counts.iter().any(|row| row.len() != c) || table.rows.len() != r {
        return Err(HumanBenchError::RaggedTable);
    }
    if r < 2 || c < 2 {
        return Err(HumanBenchError::TableTooSmall { rows: r, cols: c });
    }
    let row_sums: Vec<u64> = table.counts.iter().map(|row| row.iter().sum()).collect();
    let col_sums: Vec<u64> = (0..c).map(|j| table.counts.iter().map(|row| row[j]).sum()).collect();
    if row_sums.contains(&0) || col_sums.contains(&0) {
        return Err(HumanBenchError::DegenerateTable);
    }
    let n: u64 = row_sums.iter().sum();
    let nf = n as f64;
    let mut chi2 = 0.0;
    for (i, row) in table.counts.iter().enumerate() {
        for (j, &obs) in row.iter().enumerate() {
            let expected = row_sums[i] as f64 * col_sums[j] as f64 / nf;
            let d = obs as f64 - expected;
            chi2 += d * d / expected;
        }
    }
    let df = (r - 1) * (c - 1);
    let p_value = if chi2 <= 0.0 { 1.0 } else { gamma_ur(df as f64 / 2.0, chi2 / 2.0) };
    let k = (r - 1).min(c - 1) as f64;
    let cramers_v = (chi2 / (nf * k)).sqrt().min(1.0);
    Ok(ChiSquare { chi2, df, p_value, cramers_v, n })
}
