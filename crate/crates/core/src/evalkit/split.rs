use std::collections::HashSet;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::EvalError;
use crate::corpus::{Label, LabeledMessage};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SplitMode {
    StratifiedMessage,
    ByMatch,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SplitSpec {
    pub mode: SplitMode,
    pub train_fraction: f64,
    pub seed: u64,
}

impl SplitSpec {
    pub fn stratified(seed: u64) -> Self {
        Self {
            mode: SplitMode::StratifiedMessage,
            train_fraction: 0.8,
            seed,
        }
    }

    pub fn by_match(seed: u64) -> Self {
        Self {
            mode: SplitMode::ByMatch,
            train_fraction: 0.8,
            seed,
        }
    }

    /// Runs the split this spec describes. For `ByMatch` the number of training
    /// matches is `train_fraction` of the distinct matches, rounded.
    pub fn apply(&self, dataset: &[LabeledMessage]) -> Result<Split, EvalError> {
        match self.mode {
            SplitMode::StratifiedMessage => stratified_split(dataset, self),
            SplitMode::ByMatch => {
                check_fraction(self.train_fraction)?;
                let matches = distinct_matches(dataset).len();
                let n_train = ((matches as f64) * self.train_fraction).round() as usize;
                match_split(
                    dataset,
                    n_train.clamp(1, matches.saturating_sub(1).max(1)),
                    self.seed,
                )
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Split {
    pub train: Vec<LabeledMessage>,
    pub test: Vec<LabeledMessage>,
}

fn check_fraction(f: f64) -> Result<(), EvalError> {
    if f > 0.0 && f < 1.0 {
        Ok(())
    } else {
        Err(EvalError::Split(format!(
            "train fraction must lie in (0, 1), got {f}"
        )))
    }
}

fn assemble(dataset: &[LabeledMessage], in_test: &[bool]) -> Split {
    let mut split = Split {
        train: Vec::new(),
        test: Vec::new(),
    };
    for (item, &t) in dataset.iter().zip(in_test) {
        if t {
            split.test.push(item.clone());
        } else {
            split.train.push(item.clone());
        }
    }
    split
}

/// Per-class seeded shuffle; each class sends `round((1 - f) * n_class)` items
/// to the test side, kept in input order.
pub fn stratified_split(dataset: &[LabeledMessage], spec: &SplitSpec) -> Result<Split, EvalError> {
    check_fraction(spec.train_fraction)?;
    if let Some(m) = dataset.iter().find(|m| m.label == Label::NonEnglish) {
        return Err(EvalError::NonEnglish(m.message.message_id.clone()));
    }
    let mut by_class: [Vec<usize>; 2] = [Vec::new(), Vec::new()];
    for (i, m) in dataset.iter().enumerate() {
        by_class[usize::from(m.label == Label::Toxic)].push(i);
    }
    if by_class.iter().any(Vec::is_empty) {
        return Err(EvalError::SingleClass);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let mut in_test = vec![false; dataset.len()];
    for members in &mut by_class {
        members.shuffle(&mut rng);
        let n = members.len();
        let exact = (1.0 - spec.train_fraction) * n as f64;
        let mut take = exact.round() as usize;
        if n >= 2 {
            take = take.clamp(1, n - 1);
        }
        for &i in &members[..take] {
            in_test[i] = true;
        }
    }
    let split = assemble(dataset, &in_test);
    if split.train.is_empty() || split.test.is_empty() {
        return Err(EvalError::Split(
            "both sides of the split must be non-empty".into(),
        ));
    }
    Ok(split)
}

fn distinct_matches(dataset: &[LabeledMessage]) -> Vec<&str> {
    let mut seen = HashSet::new();
    dataset
        .iter()
        .map(|m| m.message.match_id.as_str())
        .filter(|id| seen.insert(*id))
        .collect()
}

/// Sends `n_train_matches` randomly chosen whole matches to the training side.
pub fn match_split(
    dataset: &[LabeledMessage],
    n_train_matches: usize,
    seed: u64,
) -> Result<Split, EvalError> {
    let mut matches = distinct_matches(dataset);
    if n_train_matches == 0 || matches.len() < n_train_matches + 1 {
        return Err(EvalError::TooFewMatches {
            available: matches.len(),
            requested: n_train_matches,
        });
    }
    matches.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let train: HashSet<&str> = matches[..n_train_matches].iter().copied().collect();
    let in_test: Vec<bool> = dataset
        .iter()
        .map(|m| !train.contains(m.message.match_id.as_str()))
        .collect();
    Ok(assemble(dataset, &in_test))
}
