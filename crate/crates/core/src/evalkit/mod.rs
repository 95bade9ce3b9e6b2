//! Dataset splits, confusion-matrix metrics and evaluation at message,
//! grouped-message and match granularity.

mod metrics;
mod split;

pub use metrics::{
    compute_metrics, compute_metrics_at, render_table, ConfusionCounts, Granularity, MetricsReport,
};
pub use split::{match_split, stratified_split, Split, SplitMode, SplitSpec};

use crate::aggregate::{self, chunk_for_model, AggregateError, GroupingConfig};
use crate::classify::{classify_batch, Classifier, ClassifierConfig, ClassifyError, Prediction};
use crate::corpus::{english_only, Label, LabeledMessage};

#[derive(Debug, thiserror::Error)]
pub enum EvalError {
    #[error("{predictions} predictions but {truths} truths")]
    LengthMismatch { predictions: usize, truths: usize },
    #[error("nothing to evaluate")]
    Empty,
    #[error("ground truth must be toxic or nontoxic")]
    NonBinaryTruth,
    #[error("dataset needs both toxic and nontoxic messages")]
    SingleClass,
    #[error("message `{0}` is nonenglish; filter those out first")]
    NonEnglish(String),
    #[error("only {available} matches available, {requested} requested for training plus at least one for testing")]
    TooFewMatches { available: usize, requested: usize },
    #[error("{0}")]
    Split(String),
    #[error(transparent)]
    Aggregate(#[from] AggregateError),
    #[error(transparent)]
    Classify(#[from] ClassifyError),
}

/// How match transcripts longer than the model limit are handled.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TranscriptMode {
    /// Let the tokenizer cut the transcript at the length limit.
    Truncate,
    /// Score overlapping windows and flag the transcript if any window is Toxic.
    Chunk,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EvalConfig {
    pub classifier: ClassifierConfig,
    pub grouping: GroupingConfig,
    pub transcript_mode: TranscriptMode,
    /// Chunk stride in tokens; defaults to half of `max_tokens`.
    pub stride: Option<usize>,
    /// Seed of the split that produced the dataset, echoed into the report.
    pub seed: Option<u64>,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            classifier: ClassifierConfig::default(),
            grouping: GroupingConfig::default(),
            transcript_mode: TranscriptMode::Chunk,
            stride: None,
            seed: None,
        }
    }
}

/// One item to classify at the chosen granularity.
#[derive(Debug, Clone, PartialEq)]
pub struct EvalUnit {
    pub text: String,
    pub label: Label,
}

/// Builds the evaluation items: English messages as-is, utterances, or
/// per-player match transcripts. Aggregated levels sort by (match, seq) first.
pub fn granularity_units(
    dataset: &[LabeledMessage],
    granularity: Granularity,
    grouping: &GroupingConfig,
) -> Result<Vec<EvalUnit>, EvalError> {
    let mut english = english_only(dataset);
    Ok(match granularity {
        Granularity::Message => english
            .into_iter()
            .map(|m| EvalUnit {
                text: m.message.text,
                label: m.label,
            })
            .collect(),
        Granularity::Grouped => {
            aggregate::sort_for_aggregation(&mut english);
            aggregate::group_messages(&english, grouping)?
                .into_iter()
                .map(|u| EvalUnit {
                    text: u.text,
                    label: u.label,
                })
                .collect()
        }
        Granularity::Match => {
            aggregate::sort_for_aggregation(&mut english);
            aggregate::match_transcripts(&english)?
                .into_iter()
                .map(|t| EvalUnit {
                    text: t.text,
                    label: t.label,
                })
                .collect()
        }
    })
}

/// Classifies prepared units and scores them. At match level in chunk mode,
/// each transcript is split into windows and takes the highest window score.
pub fn evaluate_units(
    classifier: &dyn Classifier,
    units: &[EvalUnit],
    granularity: Granularity,
    config: &EvalConfig,
) -> Result<(MetricsReport, Vec<Prediction>), EvalError> {
    let cfg = &config.classifier;
    cfg.validate()?;
    let chunking = match (granularity, config.transcript_mode, classifier.tokenizer()) {
        (Granularity::Match, TranscriptMode::Chunk, Some(tok)) => Some(tok),
        _ => None,
    };
    let predictions = match chunking {
        None => classify_batch(
            &units.iter().map(|u| u.text.as_str()).collect::<Vec<_>>(),
            classifier,
            cfg,
        )?,
        Some(tokenizer) => {
            let stride = config
                .stride
                .unwrap_or((cfg.max_tokens / 2).max(1))
                .min(cfg.max_tokens);
            let mut owners = Vec::new();
            let mut texts = Vec::new();
            for (i, unit) in units.iter().enumerate() {
                for chunk in chunk_for_model(&unit.text, tokenizer, cfg.max_tokens, stride) {
                    owners.push(i);
                    texts.push(chunk.text);
                }
            }
            let chunk_preds = classify_batch(&texts, classifier, cfg)?;
            let mut best = vec![0.0f64; units.len()];
            for (p, &owner) in chunk_preds.iter().zip(&owners) {
                best[owner] = best[owner].max(p.toxic_score);
            }
            best.into_iter()
                .enumerate()
                .map(|(i, s)| Prediction::from_score(s, cfg.threshold, i))
                .collect()
        }
    };
    let truths: Vec<Label> = units.iter().map(|u| u.label).collect();
    let mut report = compute_metrics_at(&predictions, &truths, granularity)?;
    report.seed = config.seed;
    Ok((report, predictions))
}

/// Aggregates, classifies and scores a labeled dataset at one granularity.
pub fn evaluate(
    classifier: &dyn Classifier,
    dataset: &[LabeledMessage],
    granularity: Granularity,
    config: &EvalConfig,
) -> Result<MetricsReport, EvalError> {
    let units = granularity_units(dataset, granularity, &config.grouping)?;
    evaluate_units(classifier, &units, granularity, config).map(|(r, _)| r)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::classify::{Lexicon, OracleClassifier};
    use crate::corpus::ChatMessage;

    fn item(
        id: usize,
        game: &str,
        player: &str,
        t: f64,
        text: &str,
        label: Label,
    ) -> LabeledMessage {
        LabeledMessage::new(
            ChatMessage {
                message_id: format!("m{id}"),
                match_id: game.into(),
                player_id: Some(player.into()),
                seq: id as u64,
                timestamp_s: Some(t),
                text: text.into(),
            },
            label,
        )
    }

    fn dataset() -> Vec<LabeledMessage> {
        use Label::*;
        vec![
            item(0, "g1", "a", 0.0, "gg", NonToxic),
            item(1, "g1", "a", 2.0, "bot lane", NonToxic),
            item(2, "g1", "b", 3.0, "noob", Toxic),
            item(3, "g1", "b", 40.0, "hola que tal", NonEnglish),
            item(4, "g1", "a", 60.0, "wp", NonToxic),
            item(5, "g2", "c", 1.0, "just uninstall lol", Toxic),
            item(6, "g2", "d", 5.0, "nice ult", NonToxic),
        ]
    }

    #[test]
    fn oracle_scores_perfectly_at_every_level() {
        let data = dataset();
        for g in [
            Granularity::Message,
            Granularity::Grouped,
            Granularity::Match,
        ] {
            let units = granularity_units(&data, g, &GroupingConfig::default()).unwrap();
            let oracle =
                OracleClassifier::from_pairs(units.iter().map(|u| (u.text.clone(), u.label)));
            let (r, _) = evaluate_units(&oracle, &units, g, &EvalConfig::default()).unwrap();
            assert_eq!(r.granularity, g);
            assert_eq!(
                (r.accuracy, r.precision, r.recall, r.f1),
                (1.0, Some(1.0), Some(1.0), Some(1.0))
            );
        }
    }

    #[test]
    fn unit_counts_per_level() {
        let data = dataset();
        let g = GroupingConfig::default();
        assert_eq!(
            granularity_units(&data, Granularity::Message, &g)
                .unwrap()
                .len(),
            6
        );
        // a: {gg, bot lane}, {wp}; b: {noob}; c; d
        assert_eq!(
            granularity_units(&data, Granularity::Grouped, &g)
                .unwrap()
                .len(),
            5
        );
        assert_eq!(
            granularity_units(&data, Granularity::Match, &g)
                .unwrap()
                .len(),
            4
        );
    }

    #[test]
    fn lexicon_evaluation_and_seed_echo() {
        let cfg = EvalConfig {
            seed: Some(99),
            ..Default::default()
        };
        let r = evaluate(&Lexicon::builtin(), &dataset(), Granularity::Message, &cfg).unwrap();
        assert_eq!(r.seed, Some(99));
        assert_eq!(r.confusion.total(), 6);
        assert_eq!(r.confusion.tp, 2);
    }
}
