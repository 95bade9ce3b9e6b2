use std::collections::HashMap;

use super::{Classifier, ClassifyError};
use crate::corpus::Label;

/// Returns the known ground truth for each text: score 1 for Toxic, 0 otherwise.
/// Used to self-test evaluation pipelines end to end.
#[derive(Debug, Clone, Default)]
pub struct OracleClassifier {
    truth: HashMap<String, bool>,
}

impl OracleClassifier {
    /// Later pairs for the same text override earlier ones only by OR-ing in
    /// toxicity, so a text seen once as Toxic stays Toxic.
    pub fn from_pairs<I, S>(pairs: I) -> Self
    where
        I: IntoIterator<Item = (S, Label)>,
        S: Into<String>,
    {
        let mut truth = HashMap::new();
        for (text, label) in pairs {
            *truth.entry(text.into()).or_insert(false) |= label == Label::Toxic;
        }
        Self { truth }
    }
}

impl Classifier for OracleClassifier {
    fn name(&self) -> &str {
        "oracle"
    }

    fn score_batch(&self, texts: &[&str]) -> Result<Vec<f64>, ClassifyError> {
        texts
            .iter()
            .map(|t| match self.truth.get(*t) {
                Some(true) => Ok(1.0),
                Some(false) => Ok(0.0),
                None => Err(ClassifyError::UnknownText(t.to_string())),
            })
            .collect()
    }
}
