use std::collections::HashSet;

use serde::Serialize;

use super::{Label, LabeledMessage};

#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct CorpusStats {
    pub total: usize,
    pub toxic: usize,
    pub non_toxic: usize,
    pub non_english: usize,
    /// Mean message length in characters, English messages only.
    pub mean_len_chars: f64,
    /// Population standard deviation of the English message lengths.
    pub std_len_chars: f64,
    pub match_count: usize,
}

pub fn corpus_stats(dataset: &[LabeledMessage]) -> CorpusStats {
    let mut stats = CorpusStats {
        total: dataset.len(),
        ..CorpusStats::default()
    };
    let mut matches = HashSet::new();
    let mut lengths = Vec::new();
    for item in dataset {
        matches.insert(item.message.match_id.as_str());
        match item.label {
            Label::Toxic => stats.toxic += 1,
            Label::NonToxic => stats.non_toxic += 1,
            Label::NonEnglish => stats.non_english += 1,
        }
        if item.label.is_english() {
            lengths.push(item.message.text.chars().count() as f64);
        }
    }
    stats.match_count = matches.len();
    if !lengths.is_empty() {
        let n = lengths.len() as f64;
        let mean = lengths.iter().sum::<f64>() / n;
        let var = lengths.iter().map(|l| (l - mean).powi(2)).sum::<f64>() / n;
        stats.mean_len_chars = mean;
        stats.std_len_chars = var.sqrt();
    }
    stats
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::ChatMessage;
    use proptest::prelude::*;

    fn item(id: usize, text: &str, label: Label) -> LabeledMessage {
        LabeledMessage::new(
            ChatMessage {
                message_id: id.to_string(),
                match_id: format!("g{}", id % 3),
                player_id: None,
                seq: id as u64,
                timestamp_s: None,
                text: text.into(),
            },
            label,
        )
    }

    #[test]
    fn empty_dataset() {
        assert_eq!(corpus_stats(&[]), CorpusStats::default());
    }

    #[test]
    fn lengths_exclude_non_english() {
        let data = vec![
            item(0, "gg", Label::NonToxic),
            item(1, "noob", Label::Toxic),
            item(2, "this one is very long and foreign", Label::NonEnglish),
        ];
        let s = corpus_stats(&data);
        assert_eq!((s.total, s.toxic, s.non_toxic, s.non_english), (3, 1, 1, 1));
        assert_eq!(s.mean_len_chars, 3.0);
        assert_eq!(s.std_len_chars, 1.0);
        assert_eq!(s.match_count, 3);
    }

    #[test]
    fn length_counts_characters_not_bytes() {
        let s = corpus_stats(&[item(0, "n\u{f6}\u{f6}b", Label::Toxic)]);
        assert_eq!(s.mean_len_chars, 4.0);
    }

    proptest! {
        #[test]
        fn counts_partition_dataset(labels in prop::collection::vec(0usize..3, 0..200)) {
            let data: Vec<_> = labels
                .iter()
                .enumerate()
                .map(|(i, &l)| item(i, "x", Label::ALL[l]))
                .collect();
            let s = corpus_stats(&data);
            prop_assert_eq!(s.toxic + s.non_toxic + s.non_english, s.total);
            prop_assert_eq!(s.total, data.len());
        }
    }
}
