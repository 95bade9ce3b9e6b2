use std::collections::HashMap;
use std::path::Path;

use super::{Classifier, ClassifyError, Prediction, DEFAULT_THRESHOLD};

const BUILTIN: &str = include_str!("../../data/lexicon.json");

/// Weighted term list. Terms may span several words; matching is done on
/// lowercased words with punctuation removed.
#[derive(Debug, Clone)]
pub struct Lexicon {
    terms: HashMap<String, f64>,
    longest_term: usize,
    threshold: f64,
}

/// Lowercases and splits on anything that is not alphanumeric. Apostrophes
/// are dropped so "you're" matches "youre".
fn words(text: &str) -> Vec<String> {
    text.to_lowercase()
        .replace(['\'', '\u{2019}'], "")
        .split(|c: char| !c.is_alphanumeric())
        .filter(|w| !w.is_empty())
        .map(str::to_owned)
        .collect()
}

impl Lexicon {
    pub fn new<I, S>(terms: I) -> Result<Self, String>
    where
        I: IntoIterator<Item = (S, f64)>,
        S: AsRef<str>,
    {
        let mut map = HashMap::new();
        let mut longest_term = 0;
        for (term, weight) in terms {
            let term = term.as_ref();
            if !weight.is_finite() || weight < 0.0 {
                return Err(format!("weight for `{term}` must be a non-negative number"));
            }
            let key = words(term);
            if key.is_empty() {
                return Err(format!("term `{term}` has no matchable words"));
            }
            longest_term = longest_term.max(key.len());
            map.insert(key.join(" "), weight);
        }
        if map.is_empty() {
            return Err("lexicon is empty".into());
        }
        Ok(Self {
            terms: map,
            longest_term,
            threshold: DEFAULT_THRESHOLD,
        })
    }

    /// Parses a JSON object mapping terms to weights.
    pub fn from_json(json: &str) -> Result<Self, String> {
        let raw: HashMap<String, f64> = serde_json::from_str(json).map_err(|e| e.to_string())?;
        let mut entries: Vec<_> = raw.into_iter().collect();
        entries.sort_by(|a, b| a.0.cmp(&b.0));
        Self::new(entries)
    }

    pub fn from_path(path: &Path) -> Result<Self, ClassifyError> {
        let load_err = |reason: String| ClassifyError::Load {
            path: path.to_path_buf(),
            reason,
        };
        let raw = std::fs::read_to_string(path).map_err(|e| load_err(e.to_string()))?;
        Self::from_json(&raw).map_err(load_err)
    }

    /// Terms seeded from common in-game insults and profanity.
    pub fn builtin() -> Self {
        Self::from_json(BUILTIN).expect("builtin lexicon is valid")
    }

    pub fn with_threshold(mut self, threshold: f64) -> Self {
        self.threshold = threshold;
        self
    }

    pub fn threshold(&self) -> f64 {
        self.threshold
    }

    pub fn len(&self) -> usize {
        self.terms.len()
    }

    pub fn is_empty(&self) -> bool {
        self.terms.is_empty()
    }

    /// Sum of weights over every term occurrence, capped at 1.
    pub fn score(&self, text: &str) -> f64 {
        let words = words(text);
        let mut total = 0.0;
        for start in 0..words.len() {
            let mut key = String::new();
            for (n, word) in words[start..].iter().take(self.longest_term).enumerate() {
                if n > 0 {
                    key.push(' ');
                }
                key.push_str(word);
                if let Some(w) = self.terms.get(&key) {
                    total += w;
                }
            }
        }
        total.min(1.0)
    }
}

pub fn lexicon_classify(text: &str, lexicon: &Lexicon) -> Prediction {
    Prediction::from_score(lexicon.score(text), lexicon.threshold, 0)
}

impl Classifier for Lexicon {
    fn name(&self) -> &str {
        "lexicon"
    }

    fn score_batch(&self, texts: &[&str]) -> Result<Vec<f64>, ClassifyError> {
        Ok(texts.iter().map(|t| self.score(t)).collect())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::Label;
    use proptest::prelude::*;

    #[test]
    fn insult_is_toxic() {
        let p = lexicon_classify("mother fucking noob", &Lexicon::builtin());
        assert_eq!(p.label, Label::Toxic);
        assert_eq!(
            lexicon_classify("bot lane noob", &Lexicon::builtin()).label,
            Label::Toxic
        );
    }

    #[test]
    fn empty_text_scores_zero() {
        let p = lexicon_classify("", &Lexicon::builtin());
        assert_eq!(p.toxic_score, 0.0);
        assert_eq!(p.label, Label::NonToxic);
    }

    #[test]
    fn case_and_punctuation_invariant() {
        let lex = Lexicon::builtin();
        assert_eq!(lex.score("NOOB!!!"), lex.score("noob"));
        assert!(lex.score("noob") > 0.0);
    }

    #[test]
    fn multi_word_terms() {
        let lex = Lexicon::new([("so bad", 0.5), ("bad", 0.1)]).unwrap();
        assert!((lex.score("you are SO... bad") - 0.6).abs() < 1e-12);
        assert!((lex.score("bad so") - 0.1).abs() < 1e-12);
    }

    #[test]
    fn score_is_capped() {
        let lex = Lexicon::builtin();
        assert_eq!(lex.score("kys kys idiot noob trash"), 1.0);
    }

    #[test]
    fn construction_errors() {
        assert!(Lexicon::new(Vec::<(&str, f64)>::new()).is_err());
        assert!(Lexicon::new([("noob", -1.0)]).is_err());
        assert!(Lexicon::new([("!!!", 1.0)]).is_err());
        assert!(Lexicon::from_json("[1,2]").is_err());
        assert!(matches!(
            Lexicon::from_path(Path::new("/nonexistent/lex.json")),
            Err(ClassifyError::Load { .. })
        ));
    }

    proptest! {
        #[test]
        fn appending_a_term_never_lowers_score(text in "[a-zA-Z !?.]{0,40}", pick in 0usize..26) {
            let lex = Lexicon::builtin();
            let mut terms: Vec<&String> = lex.terms.keys().collect();
            terms.sort();
            let term = terms[pick % terms.len()];
            let before = lex.score(&text);
            let after = lex.score(&format!("{text} {term}"));
            prop_assert!(after >= before);
        }
    }
}
