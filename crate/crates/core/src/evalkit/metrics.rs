use std::fmt::Write as _;
use std::str::FromStr;

use serde::{Serialize, Serializer};

use super::EvalError;
use crate::classify::Prediction;
use crate::corpus::Label;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Granularity {
    Message,
    Grouped,
    Match,
}

impl Granularity {
    pub fn as_str(self) -> &'static str {
        match self {
            Granularity::Message => "message",
            Granularity::Grouped => "grouped",
            Granularity::Match => "match",
        }
    }
}

impl FromStr for Granularity {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "message" => Ok(Granularity::Message),
            "grouped" => Ok(Granularity::Grouped),
            "match" => Ok(Granularity::Match),
            other => Err(format!("unknown granularity `{other}`")),
        }
    }
}

/// Confusion counts with Toxic as the positive class.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize)]
pub struct ConfusionCounts {
    pub tp: u64,
    pub fp: u64,
    #[serde(rename = "fn")]
    pub fn_: u64,
    pub tn: u64,
}

impl ConfusionCounts {
    pub fn total(&self) -> u64 {
        self.tp + self.fp + self.fn_ + self.tn
    }

    pub fn accuracy(&self) -> Option<f64> {
        let total = self.total();
        (total > 0).then(|| (self.tp + self.tn) as f64 / total as f64)
    }

    pub fn precision(&self) -> Option<f64> {
        let d = self.tp + self.fp;
        (d > 0).then(|| self.tp as f64 / d as f64)
    }

    pub fn recall(&self) -> Option<f64> {
        let d = self.tp + self.fn_;
        (d > 0).then(|| self.tp as f64 / d as f64)
    }

    /// Harmonic mean of precision and recall; absent when either is, and 0
    /// when both are 0.
    pub fn f1(&self) -> Option<f64> {
        let (p, r) = (self.precision()?, self.recall()?);
        Some(if p + r == 0.0 {
            0.0
        } else {
            2.0 * p * r / (p + r)
        })
    }

    pub fn record(&mut self, predicted_toxic: bool, truly_toxic: bool) {
        match (predicted_toxic, truly_toxic) {
            (true, true) => self.tp += 1,
            (true, false) => self.fp += 1,
            (false, true) => self.fn_ += 1,
            (false, false) => self.tn += 1,
        }
    }

    /// Reassembles the report fields from raw counts.
    pub fn report(
        self,
        granularity: Granularity,
        seed: Option<u64>,
    ) -> Result<MetricsReport, EvalError> {
        let accuracy = self.accuracy().ok_or(EvalError::Empty)?;
        Ok(MetricsReport {
            granularity,
            accuracy,
            precision: self.precision(),
            recall: self.recall(),
            f1: self.f1(),
            confusion: self,
            seed,
        })
    }
}

fn four_places<S: Serializer>(v: &f64, s: S) -> Result<S::Ok, S::Error> {
    s.serialize_f64((v * 1e4).round() / 1e4)
}

fn four_places_opt<S: Serializer>(v: &Option<f64>, s: S) -> Result<S::Ok, S::Error> {
    match v {
        Some(v) => four_places(v, s),
        None => s.serialize_none(),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MetricsReport {
    pub granularity: Granularity,
    #[serde(rename = "acc", serialize_with = "four_places")]
    pub accuracy: f64,
    #[serde(rename = "prec", serialize_with = "four_places_opt")]
    pub precision: Option<f64>,
    #[serde(rename = "rec", serialize_with = "four_places_opt")]
    pub recall: Option<f64>,
    #[serde(serialize_with = "four_places_opt")]
    pub f1: Option<f64>,
    pub confusion: ConfusionCounts,
    pub seed: Option<u64>,
}

impl MetricsReport {
    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("report serializes")
    }
}

fn cell(v: Option<f64>) -> String {
    v.map_or_else(|| "-".to_string(), |v| format!("{v:.4}"))
}

/// Aligned plain-text table, one row per report.
pub fn render_table(reports: &[MetricsReport]) -> String {
    let mut out = String::new();
    let _ = writeln!(
        out,
        "{:<10} {:>7} {:>7} {:>7} {:>7} {:>7} {:>7} {:>7} {:>7}",
        "level", "acc", "prec", "rec", "f1", "tp", "fp", "fn", "tn"
    );
    for r in reports {
        let c = r.confusion;
        let _ = writeln!(
            out,
            "{:<10} {:>7} {:>7} {:>7} {:>7} {:>7} {:>7} {:>7} {:>7}",
            r.granularity.as_str(),
            cell(Some(r.accuracy)),
            cell(r.precision),
            cell(r.recall),
            cell(r.f1),
            c.tp,
            c.fp,
            c.fn_,
            c.tn
        );
    }
    out
}

/// Tallies predictions against binary truths, pairing by index.
pub fn compute_metrics(
    predictions: &[Prediction],
    truths: &[Label],
) -> Result<MetricsReport, EvalError> {
    compute_metrics_at(predictions, truths, Granularity::Message)
}

pub fn compute_metrics_at(
    predictions: &[Prediction],
    truths: &[Label],
    granularity: Granularity,
) -> Result<MetricsReport, EvalError> {
    if predictions.len() != truths.len() {
        return Err(EvalError::LengthMismatch {
            predictions: predictions.len(),
            truths: truths.len(),
        });
    }
    let mut counts = ConfusionCounts::default();
    for (p, &t) in predictions.iter().zip(truths) {
        if t == Label::NonEnglish {
            return Err(EvalError::NonBinaryTruth);
        }
        counts.record(p.is_toxic(), t == Label::Toxic);
    }
    counts.report(granularity, None)
}
