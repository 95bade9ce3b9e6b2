//! Binary toxicity classification behind one interface.
//!
//! Backends: a weighted lexicon (always available), an exact-match oracle for
//! self-tests, and a transformer graph executed from an ONNX file (feature
//! `onnx`).

mod lexicon;
#[cfg(feature = "onnx")]
mod onnx;
mod oracle;
mod wordpiece;

use std::path::PathBuf;

use rayon::prelude::*;
use serde::Serialize;

use crate::corpus::Label;

pub use lexicon::{lexicon_classify, Lexicon};
#[cfg(feature = "onnx")]
pub use onnx::{load_model, ModelInfo, OnnxClassifier};
pub use oracle::OracleClassifier;
pub use wordpiece::{SpecialTokens, Token, TokenizerSpec, WordPieceTokenizer};

pub const DEFAULT_MAX_TOKENS: usize = 192;
pub const DEFAULT_THRESHOLD: f64 = 0.5;

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Prediction {
    pub toxic_score: f64,
    pub label: Label,
    /// Index of the input this prediction belongs to.
    pub text_ref: usize,
}

impl Prediction {
    pub fn from_score(toxic_score: f64, threshold: f64, text_ref: usize) -> Self {
        let label = if toxic_score >= threshold {
            Label::Toxic
        } else {
            Label::NonToxic
        };
        Self {
            toxic_score,
            label,
            text_ref,
        }
    }

    pub fn is_toxic(&self) -> bool {
        self.label == Label::Toxic
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ClassifierConfig {
    pub max_tokens: usize,
    pub batch_size: usize,
    pub threshold: f64,
}

impl Default for ClassifierConfig {
    fn default() -> Self {
        Self {
            max_tokens: DEFAULT_MAX_TOKENS,
            batch_size: 16,
            threshold: DEFAULT_THRESHOLD,
        }
    }
}

impl ClassifierConfig {
    pub fn validate(&self) -> Result<(), ClassifyError> {
        if self.max_tokens < 2 {
            return Err(ClassifyError::Config(format!(
                "max_tokens must be at least 2, got {}",
                self.max_tokens
            )));
        }
        if self.batch_size == 0 {
            return Err(ClassifyError::Config(
                "batch_size must be at least 1".into(),
            ));
        }
        if !(self.threshold > 0.0 && self.threshold < 1.0) {
            return Err(ClassifyError::Config(format!(
                "threshold must lie in (0, 1), got {}",
                self.threshold
            )));
        }
        Ok(())
    }
}

#[derive(Debug, thiserror::Error)]
pub enum ClassifyError {
    #[error("{path}: {reason}")]
    Load { path: PathBuf, reason: String },
    #[error("not a binary toxicity head: model emits {0} logits per input")]
    NotBinaryHead(usize),
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("batch {batch}: {source}")]
    Batch {
        batch: usize,
        #[source]
        source: Box<ClassifyError>,
    },
    #[error("model execution failed: {0}")]
    Execution(String),
    #[error("classifier returned {found} scores for {expected} inputs")]
    ScoreCount { expected: usize, found: usize },
    #[error("classifier returned score {0} outside [0, 1]")]
    ScoreRange(f64),
    #[error("oracle has no ground truth for `{0}`")]
    UnknownText(String),
}

/// A backend producing Toxic-class probabilities.
///
/// Implementations are immutable once built and may be shared across threads;
/// scoring one text never depends on the other texts in the same call.
pub trait Classifier: Send + Sync {
    fn name(&self) -> &str;

    /// Probability of the Toxic class for each input, in input order.
    fn score_batch(&self, texts: &[&str]) -> Result<Vec<f64>, ClassifyError>;

    /// Tokenizer whose length limit applies to inputs, if the backend has one.
    fn tokenizer(&self) -> Option<&WordPieceTokenizer> {
        None
    }
}

impl<C: Classifier + ?Sized> Classifier for std::sync::Arc<C> {
    fn name(&self) -> &str {
        (**self).name()
    }

    fn score_batch(&self, texts: &[&str]) -> Result<Vec<f64>, ClassifyError> {
        (**self).score_batch(texts)
    }

    fn tokenizer(&self) -> Option<&WordPieceTokenizer> {
        (**self).tokenizer()
    }
}

pub(crate) fn score_checked(
    classifier: &dyn Classifier,
    texts: &[&str],
) -> Result<Vec<f64>, ClassifyError> {
    let scores = classifier.score_batch(texts)?;
    if scores.len() != texts.len() {
        return Err(ClassifyError::ScoreCount {
            expected: texts.len(),
            found: scores.len(),
        });
    }
    if let Some(&bad) = scores.iter().find(|s| !(0.0..=1.0).contains(*s)) {
        return Err(ClassifyError::ScoreRange(bad));
    }
    Ok(scores)
}

/// Classifies `texts` in batches of `config.batch_size`, returning one
/// prediction per input in input order. Batches may run in parallel; the
/// partitioning never changes the result.
pub fn classify_batch<S: AsRef<str> + Sync>(
    texts: &[S],
    classifier: &dyn Classifier,
    config: &ClassifierConfig,
) -> Result<Vec<Prediction>, ClassifyError> {
    config.validate()?;
    let batches: Vec<Vec<f64>> = texts
        .par_chunks(config.batch_size)
        .enumerate()
        .map(|(batch, chunk)| {
            let refs: Vec<&str> = chunk.iter().map(AsRef::as_ref).collect();
            score_checked(classifier, &refs).map_err(|source| ClassifyError::Batch {
                batch,
                source: Box::new(source),
            })
        })
        .collect::<Result<_, _>>()?;
    Ok(batches
        .into_iter()
        .flatten()
        .enumerate()
        .map(|(i, score)| Prediction::from_score(score, config.threshold, i))
        .collect())
}

/// Two-way softmax, returning the probability of the second (Toxic) class.
pub fn toxic_probability(non_toxic_logit: f32, toxic_logit: f32) -> f64 {
    let (a, b) = (non_toxic_logit as f64, toxic_logit as f64);
    let m = a.max(b);
    let (ea, eb) = ((a - m).exp(), (b - m).exp());
    eb / (ea + eb)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    struct Broken;

    impl Classifier for Broken {
        fn name(&self) -> &str {
            "broken"
        }
        fn score_batch(&self, texts: &[&str]) -> Result<Vec<f64>, ClassifyError> {
            if texts.iter().any(|t| t.contains("boom")) {
                Err(ClassifyError::Execution("boom".into()))
            } else {
                Ok(vec![0.0; texts.len()])
            }
        }
    }

    #[test]
    fn empty_input() {
        let out =
            classify_batch::<&str>(&[], &Lexicon::builtin(), &ClassifierConfig::default()).unwrap();
        assert!(out.is_empty());
    }

    #[test]
    fn failure_carries_batch_index() {
        let texts = ["a", "b", "c", "boom", "d"];
        let cfg = ClassifierConfig {
            batch_size: 2,
            ..Default::default()
        };
        match classify_batch(&texts, &Broken, &cfg) {
            Err(ClassifyError::Batch { batch, .. }) => assert_eq!(batch, 1),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn config_validation() {
        let bad = ClassifierConfig {
            batch_size: 0,
            ..Default::default()
        };
        assert!(classify_batch(&["x"], &Broken, &bad).is_err());
        let bad = ClassifierConfig {
            threshold: 1.0,
            ..Default::default()
        };
        assert!(bad.validate().is_err());
    }

    #[test]
    fn label_follows_threshold() {
        assert_eq!(Prediction::from_score(0.5, 0.5, 0).label, Label::Toxic);
        assert_eq!(
            Prediction::from_score(0.4999, 0.5, 0).label,
            Label::NonToxic
        );
    }

    proptest! {
        #[test]
        fn softmax_sums_to_one(a in -50f32..50.0, b in -50f32..50.0) {
            let p = toxic_probability(a, b);
            let q = toxic_probability(b, a);
            prop_assert!((p + q - 1.0).abs() < 1e-9);
            prop_assert!((0.0..=1.0).contains(&p));
        }
    }
}
