//! Turning annotator votes into final labels, and measuring how much the
//! annotators agreed.

use serde::{Serialize, Serializer};

pub use crate::corpus::AnnotationRecord;
use crate::corpus::Label;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum NonEnglishRule {
    /// NonEnglish wins only when strictly more than half of the votes say so.
    Majority,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ConsensusConfig {
    /// Minimum Toxic votes for a Toxic label.
    pub toxic_threshold: usize,
    pub nonenglish_rule: NonEnglishRule,
}

impl Default for ConsensusConfig {
    fn default() -> Self {
        Self {
            toxic_threshold: 2,
            nonenglish_rule: NonEnglishRule::Majority,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum ConsensusError {
    #[error("record `{0}` has no votes")]
    NoVotes(String),
    #[error("toxic threshold {threshold} exceeds the {arity} available votes")]
    ThresholdTooHigh { threshold: usize, arity: usize },
    #[error("toxic threshold must be at least 1")]
    ZeroThreshold,
    #[error("row {row} sums to {found} votes, expected {expected}")]
    RaggedRow {
        row: usize,
        expected: usize,
        found: usize,
    },
    #[error("row {row} has {found} categories, expected {expected}")]
    CategoryMismatch {
        row: usize,
        expected: usize,
        found: usize,
    },
    #[error("kappa needs at least one item, two raters per item and two categories")]
    TooSmall,
}

/// Final label for one message.
///
/// NonEnglish when a strict majority of votes are NonEnglish; otherwise Toxic
/// iff at least `toxic_threshold` votes are Toxic (NonEnglish votes count as
/// non-Toxic here); otherwise NonToxic.
pub fn consensus_label(
    record: &AnnotationRecord,
    config: &ConsensusConfig,
) -> Result<Label, ConsensusError> {
    let arity = record.votes.len();
    if arity == 0 {
        return Err(ConsensusError::NoVotes(record.message_id.clone()));
    }
    if config.toxic_threshold == 0 {
        return Err(ConsensusError::ZeroThreshold);
    }
    if config.toxic_threshold > arity {
        return Err(ConsensusError::ThresholdTooHigh {
            threshold: config.toxic_threshold,
            arity,
        });
    }
    let NonEnglishRule::Majority = config.nonenglish_rule;
    if 2 * record.count(Label::NonEnglish) > arity {
        return Ok(Label::NonEnglish);
    }
    if record.count(Label::Toxic) >= config.toxic_threshold {
        Ok(Label::Toxic)
    } else {
        Ok(Label::NonToxic)
    }
}

/// Fleiss' kappa, or the marker for the degenerate case where every vote
/// falls into a single category and chance agreement is 1.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Kappa {
    Value(f64),
    Degenerate,
}

impl Kappa {
    pub fn value(self) -> Option<f64> {
        match self {
            Kappa::Value(v) => Some(v),
            Kappa::Degenerate => None,
        }
    }
}

impl Serialize for Kappa {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        match self {
            Kappa::Value(v) => s.serialize_f64(*v),
            Kappa::Degenerate => s.serialize_str("degenerate"),
        }
    }
}

/// Fleiss' kappa over an items × categories matrix of vote counts.
///
/// Every row must sum to the same number of raters `n >= 2`.
pub fn fleiss_kappa<R: AsRef<[u64]>>(counts: &[R]) -> Result<Kappa, ConsensusError> {
    let first = counts.first().ok_or(ConsensusError::TooSmall)?.as_ref();
    let k = first.len();
    let n: u64 = first.iter().sum();
    if k < 2 || n < 2 {
        return Err(ConsensusError::TooSmall);
    }
    let mut totals = vec![0u64; k];
    let mut agreement_sum = 0.0;
    for (row, counts) in counts.iter().enumerate() {
        let counts = counts.as_ref();
        if counts.len() != k {
            return Err(ConsensusError::CategoryMismatch {
                row,
                expected: k,
                found: counts.len(),
            });
        }
        let sum: u64 = counts.iter().sum();
        if sum != n {
            return Err(ConsensusError::RaggedRow {
                row,
                expected: n as usize,
                found: sum as usize,
            });
        }
        let squares: u64 = counts.iter().map(|c| c * c).sum();
        agreement_sum += (squares - n) as f64 / (n * (n - 1)) as f64;
        for (t, c) in totals.iter_mut().zip(counts) {
            *t += c;
        }
    }
    let items = counts.len() as u64;
    let all_votes = items * n;
    if totals.contains(&all_votes) {
        return Ok(Kappa::Degenerate);
    }
    let mean_agreement = agreement_sum / items as f64;
    let chance: f64 = totals
        .iter()
        .map(|&t| {
            let p = t as f64 / all_votes as f64;
            p * p
        })
        .sum();
    Ok(Kappa::Value((mean_agreement - chance) / (1.0 - chance)))
}

/// Vote-count rows over the three categories, ordered as [`Label::index`].
pub fn vote_matrix(records: &[AnnotationRecord]) -> Vec<[u64; 3]> {
    records
        .iter()
        .map(|r| {
            let mut row = [0u64; 3];
            for v in &r.votes {
                row[v.index()] += 1;
            }
            row
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AgreementReport {
    pub kappa: Kappa,
    #[serde(rename = "unanimous")]
    pub unanimous_count: usize,
    #[serde(rename = "single_flag")]
    pub single_flag_count: usize,
    #[serde(rename = "items")]
    pub n_items: usize,
    #[serde(rename = "raters")]
    pub n_raters: usize,
}

/// Three-category kappa plus unanimity and single-Toxic-vote counts.
/// An empty batch reports a degenerate kappa over zero items.
pub fn agreement_report(records: &[AnnotationRecord]) -> Result<AgreementReport, ConsensusError> {
    let Some(first) = records.first() else {
        return Ok(AgreementReport {
            kappa: Kappa::Degenerate,
            unanimous_count: 0,
            single_flag_count: 0,
            n_items: 0,
            n_raters: 0,
        });
    };
    let kappa = fleiss_kappa(&vote_matrix(records))?;
    let unanimous_count = records
        .iter()
        .filter(|r| r.votes.iter().all(|v| *v == r.votes[0]))
        .count();
    let single_flag_count = records
        .iter()
        .filter(|r| r.count(Label::Toxic) == 1)
        .count();
    Ok(AgreementReport {
        kappa,
        unanimous_count,
        single_flag_count,
        n_items: records.len(),
        n_raters: first.votes.len(),
    })
}
