//! Message grouping for the coarser evaluation granularities: short-window
//! utterances and whole-match transcripts per player.

use std::collections::{HashMap, HashSet};

use serde::Serialize;

use crate::classify::WordPieceTokenizer;
use crate::corpus::{Label, LabeledMessage};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum AggregateError {
    #[error("message `{message_id}` is out of (match, seq) order")]
    Unsorted { message_id: String },
    #[error("message `{0}` has no player id")]
    MissingPlayer(String),
    #[error("message `{0}` is labeled nonenglish; filter those out first")]
    NonEnglish(String),
    #[error("invalid grouping config: {0}")]
    Config(String),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GroupingConfig {
    /// Largest timestamp gap (seconds) between consecutive members.
    pub gap_s: f64,
    /// Maximum utterance size when timestamps are unavailable.
    pub fallback_run_len: usize,
}

impl Default for GroupingConfig {
    fn default() -> Self {
        Self {
            gap_s: 10.0,
            fallback_run_len: 3,
        }
    }
}

/// Either a message seq or a timestamp, depending on what the data carries.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SpanPoint {
    pub seq: u64,
    pub t: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Utterance {
    pub match_id: String,
    pub player_id: String,
    #[serde(rename = "members")]
    pub member_ids: Vec<String>,
    pub text: String,
    pub label: Label,
    pub span: (SpanPoint, SpanPoint),
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MatchTranscript {
    pub match_id: String,
    pub player_id: String,
    #[serde(rename = "members")]
    pub member_ids: Vec<String>,
    pub text: String,
    pub label: Label,
}

/// Checks the aggregation preconditions: English only, every message has a
/// player, matches contiguous and seq strictly increasing within each match.
fn check_input(messages: &[LabeledMessage]) -> Result<(), AggregateError> {
    let mut finished: HashSet<&str> = HashSet::new();
    let mut prev: Option<&LabeledMessage> = None;
    for item in messages {
        let m = &item.message;
        if item.label == Label::NonEnglish {
            return Err(AggregateError::NonEnglish(m.message_id.clone()));
        }
        if m.player_id.is_none() {
            return Err(AggregateError::MissingPlayer(m.message_id.clone()));
        }
        if let Some(p) = prev {
            let p = &p.message;
            let ordered = if p.match_id == m.match_id {
                p.seq < m.seq
            } else {
                finished.insert(p.match_id.as_str());
                !finished.contains(m.match_id.as_str())
            };
            if !ordered {
                return Err(AggregateError::Unsorted {
                    message_id: m.message_id.clone(),
                });
            }
        }
        prev = Some(item);
    }
    Ok(())
}

/// Stable sort by (match, seq) that keeps matches in first-appearance order.
pub fn sort_for_aggregation(messages: &mut [LabeledMessage]) {
    let mut first_seen: HashMap<String, usize> = HashMap::new();
    for (i, m) in messages.iter().enumerate() {
        first_seen.entry(m.message.match_id.clone()).or_insert(i);
    }
    messages.sort_by_key(|m| (first_seen[&m.message.match_id], m.message.seq));
}

fn span_point(m: &LabeledMessage) -> SpanPoint {
    SpanPoint {
        seq: m.message.seq,
        t: m.message.timestamp_s,
    }
}

/// Greedy left-to-right grouping of each player's consecutive messages.
///
/// A message joins its player's open utterance when both carry timestamps no
/// more than `gap_s` apart; without timestamps it joins only while the run is
/// shorter than `fallback_run_len` and no other player spoke in between.
/// Utterances are returned in order of their first member.
pub fn group_messages(
    messages: &[LabeledMessage],
    config: &GroupingConfig,
) -> Result<Vec<Utterance>, AggregateError> {
    if !(config.gap_s.is_finite() && config.gap_s > 0.0) {
        return Err(AggregateError::Config(format!(
            "gap_s must be positive, got {}",
            config.gap_s
        )));
    }
    if config.fallback_run_len == 0 {
        return Err(AggregateError::Config(
            "fallback_run_len must be at least 1".into(),
        ));
    }
    check_input(messages)?;

    let mut utterances: Vec<Utterance> = Vec::new();
    // (match, player) -> index of the open utterance and its last member
    let mut open: HashMap<(&str, &str), (usize, &LabeledMessage)> = HashMap::new();
    let mut previous: Option<&LabeledMessage> = None;
    for item in messages {
        let m = &item.message;
        let player = m.player_id.as_deref().unwrap_or_default();
        if previous.is_some_and(|p| p.message.match_id != m.match_id) {
            open.clear();
        }
        let key = (m.match_id.as_str(), player);
        let joins = open.get(&key).is_some_and(|&(ix, last)| {
            match (last.message.timestamp_s, m.timestamp_s) {
                (Some(a), Some(b)) => b - a <= config.gap_s,
                _ => {
                    let adjacent = previous.is_some_and(|p| std::ptr::eq(p, last));
                    adjacent && utterances[ix].member_ids.len() < config.fallback_run_len
                }
            }
        });
        if joins {
            let ix = open[&key].0;
            let u = &mut utterances[ix];
            u.member_ids.push(m.message_id.clone());
            u.text.push(' ');
            u.text.push_str(&m.text);
            if item.label == Label::Toxic {
                u.label = Label::Toxic;
            }
            u.span.1 = span_point(item);
            open.insert(key, (ix, item));
        } else {
            utterances.push(Utterance {
                match_id: m.match_id.clone(),
                player_id: player.to_string(),
                member_ids: vec![m.message_id.clone()],
                text: m.text.clone(),
                label: item.label,
                span: (span_point(item), span_point(item)),
            });
            open.insert(key, (utterances.len() - 1, item));
        }
        previous = Some(item);
    }
    Ok(utterances)
}

/// One space-joined transcript per (match, player), Toxic iff any message is.
/// Transcripts are ordered by each player's first message.
pub fn match_transcripts(
    messages: &[LabeledMessage],
) -> Result<Vec<MatchTranscript>, AggregateError> {
    check_input(messages)?;
    let mut out: Vec<MatchTranscript> = Vec::new();
    let mut index: HashMap<(&str, &str), usize> = HashMap::new();
    for item in messages {
        let m = &item.message;
        let player = m.player_id.as_deref().unwrap_or_default();
        match index.get(&(m.match_id.as_str(), player)) {
            Some(&ix) => {
                let t = &mut out[ix];
                t.member_ids.push(m.message_id.clone());
                t.text.push(' ');
                t.text.push_str(&m.text);
                if item.label == Label::Toxic {
                    t.label = Label::Toxic;
                }
            }
            None => {
                index.insert((m.match_id.as_str(), player), out.len());
                out.push(MatchTranscript {
                    match_id: m.match_id.clone(),
                    player_id: player.to_string(),
                    member_ids: vec![m.message_id.clone()],
                    text: m.text.clone(),
                    label: item.label,
                });
            }
        }
    }
    Ok(out)
}

/// A window of the input text covering content tokens `token_range`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TextChunk {
    pub text: String,
    pub token_range: std::ops::Range<usize>,
}

/// Splits text into overlapping windows of at most `max_tokens - 2` content
/// tokens (room for the start/end markers), advancing by `stride` tokens.
///
/// Each chunk is the slice of the original text spanned by its tokens. A
/// stride wider than the window is narrowed to the window so no token is
/// skipped.
pub fn chunk_for_model(
    text: &str,
    tokenizer: &WordPieceTokenizer,
    max_tokens: usize,
    stride: usize,
) -> Vec<TextChunk> {
    assert!(
        max_tokens >= 2,
        "max_tokens must leave room for start/end tokens"
    );
    assert!(
        stride > 0 && stride <= max_tokens,
        "stride must lie in 1..=max_tokens"
    );
    let tokens = tokenizer.encode(text);
    let window = (max_tokens - 2).max(1);
    if tokens.len() <= window {
        return vec![TextChunk {
            text: text.to_string(),
            token_range: 0..tokens.len(),
        }];
    }
    let stride = stride.min(window);
    let mut chunks = Vec::new();
    let mut start = 0;
    loop {
        let end = (start + window).min(tokens.len());
        chunks.push(TextChunk {
            text: text[tokens[start].start..tokens[end - 1].end].to_string(),
            token_range: start..end,
        });
        if end == tokens.len() {
            return chunks;
        }
        start += stride;
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::ChatMessage;
    use proptest::prelude::*;

    fn msg(
        id: &str,
        game: &str,
        player: &str,
        seq: u64,
        t: Option<f64>,
        text: &str,
        toxic: bool,
    ) -> LabeledMessage {
        LabeledMessage::new(
            ChatMessage {
                message_id: id.into(),
                match_id: game.into(),
                player_id: Some(player.into()),
                seq,
                timestamp_s: t,
                text: text.into(),
            },
            if toxic { Label::Toxic } else { Label::NonToxic },
        )
    }

    fn ids(u: &Utterance) -> Vec<&str> {
        u.member_ids.iter().map(String::as_str).collect()
    }

    #[test]
    fn close_messages_group() {
        let data = [
            msg("a", "g", "p", 0, Some(0.0), "yo", false),
            msg("b", "g", "p", 1, Some(4.0), "trash", true),
        ];
        let u = group_messages(&data, &GroupingConfig::default()).unwrap();
        assert_eq!(u.len(), 1);
        assert_eq!(ids(&u[0]), vec!["a", "b"]);
        assert_eq!(u[0].text, "yo trash");
        assert_eq!(u[0].label, Label::Toxic);
        assert_eq!(u[0].span.1.t, Some(4.0));
    }

    #[test]
    fn player_boundary_splits() {
        let data = [
            msg("a", "g", "p1", 0, Some(0.0), "gg", false),
            msg("b", "g", "p2", 1, Some(0.5), "gg", false),
        ];
        assert_eq!(
            group_messages(&data, &GroupingConfig::default())
                .unwrap()
                .len(),
            2
        );
    }

    #[test]
    fn gap_beyond_window_splits() {
        let data = [
            msg("a", "g", "p", 0, Some(0.0), "x", false),
            msg("b", "g", "p", 1, Some(30.0), "y", false),
        ];
        assert_eq!(
            group_messages(&data, &GroupingConfig::default())
                .unwrap()
                .len(),
            2
        );
    }

    #[test]
    fn timestamped_groups_allow_interleaving() {
        let data = [
            msg("a", "g", "p1", 0, Some(0.0), "x", false),
            msg("b", "g", "p2", 1, Some(1.0), "y", false),
            msg("c", "g", "p1", 2, Some(2.0), "z", false),
        ];
        let u = group_messages(&data, &GroupingConfig::default()).unwrap();
        assert_eq!(u.len(), 2);
        assert_eq!(ids(&u[0]), vec!["a", "c"]);
    }

    #[test]
    fn fallback_runs_without_timestamps() {
        let data: Vec<_> = (0..5)
            .map(|i| msg(&format!("m{i}"), "g", "p", i, None, "w", false))
            .collect();
        let u = group_messages(&data, &GroupingConfig::default()).unwrap();
        assert_eq!(
            u.iter().map(|u| u.member_ids.len()).collect::<Vec<_>>(),
            vec![3, 2]
        );

        let data = [
            msg("a", "g", "p1", 0, None, "x", false),
            msg("b", "g", "p2", 1, None, "y", false),
            msg("c", "g", "p1", 2, None, "z", false),
        ];
        assert_eq!(
            group_messages(&data, &GroupingConfig::default())
                .unwrap()
                .len(),
            3
        );
    }

    #[test]
    fn match_boundary_splits() {
        let data = [
            msg("a", "g1", "p", 0, Some(0.0), "x", false),
            msg("b", "g2", "p", 0, Some(1.0), "y", false),
        ];
        assert_eq!(
            group_messages(&data, &GroupingConfig::default())
                .unwrap()
                .len(),
            2
        );
    }

    #[test]
    fn unsorted_input_rejected() {
        let data = [
            msg("a", "g", "p", 1, None, "x", false),
            msg("b", "g", "p", 0, None, "y", false),
        ];
        assert!(matches!(
            group_messages(&data, &GroupingConfig::default()),
            Err(AggregateError::Unsorted { .. })
        ));
        let data = [
            msg("a", "g1", "p", 0, None, "x", false),
            msg("b", "g2", "p", 0, None, "y", false),
            msg("c", "g1", "p", 1, None, "z", false),
        ];
        assert!(matches!(
            match_transcripts(&data),
            Err(AggregateError::Unsorted { .. })
        ));
    }

    #[test]
    fn non_english_and_missing_player_rejected() {
        let mut m = msg("a", "g", "p", 0, None, "hola", false);
        m.label = Label::NonEnglish;
        assert!(matches!(
            match_transcripts(&[m]),
            Err(AggregateError::NonEnglish(_))
        ));
        let mut m = msg("a", "g", "p", 0, None, "gg", false);
        m.message.player_id = None;
        assert!(matches!(
            group_messages(&[m], &GroupingConfig::default()),
            Err(AggregateError::MissingPlayer(_))
        ));
    }

    #[test]
    fn transcripts_concatenate() {
        let data = [
            msg("a", "g", "p", 0, None, "gg", false),
            msg("b", "g", "q", 1, None, "noob", true),
            msg("c", "g", "p", 2, None, "ez", false),
        ];
        let t = match_transcripts(&data).unwrap();
        assert_eq!(t.len(), 2);
        assert_eq!(t[0].text, "gg ez");
        assert_eq!(t[0].label, Label::NonToxic);
        assert_eq!(t[1].label, Label::Toxic);
    }

    #[test]
    fn one_toxic_among_many_flags_transcript() {
        let mut data: Vec<_> = (0..50)
            .map(|i| msg(&format!("m{i}"), "g", "p", i, None, "fine", false))
            .collect();
        data.push(msg("bad", "g", "p", 50, None, "kys", true));
        let t = match_transcripts(&data).unwrap();
        assert_eq!(t.len(), 1);
        assert_eq!(t[0].label, Label::Toxic);
    }

    #[test]
    fn sort_keeps_match_order() {
        let mut data = vec![
            msg("b", "g2", "p", 1, None, "y", false),
            msg("a", "g2", "p", 0, None, "x", false),
            msg("c", "g1", "p", 0, None, "z", false),
        ];
        sort_for_aggregation(&mut data);
        let order: Vec<_> = data.iter().map(|m| m.message.message_id.as_str()).collect();
        assert_eq!(order, vec!["a", "b", "c"]);
    }

    fn tokenizer() -> WordPieceTokenizer {
        let mut pieces: Vec<String> = ["[PAD]", "[UNK]", "[CLS]", "[SEP]"]
            .iter()
            .map(|s| s.to_string())
            .collect();
        pieces.extend((0..50).map(|i| format!("w{i}")));
        WordPieceTokenizer::new(pieces, true, ["[CLS]", "[SEP]", "[PAD]", "[UNK]"]).unwrap()
    }

    #[test]
    fn short_text_single_chunk() {
        let t = tokenizer();
        let chunks = chunk_for_model("w1 w2 w3", &t, 8, 4);
        assert_eq!(
            chunks,
            vec![TextChunk {
                text: "w1 w2 w3".into(),
                token_range: 0..3
            }]
        );
    }

    #[test]
    fn empty_text_single_empty_chunk() {
        let chunks = chunk_for_model("", &tokenizer(), 8, 4);
        assert_eq!(
            chunks,
            vec![TextChunk {
                text: String::new(),
                token_range: 0..0
            }]
        );
    }

    #[test]
    fn exact_double_window_gives_two_disjoint_chunks() {
        let t = tokenizer();
        let max_tokens = 8;
        let window = max_tokens - 2;
        let words: Vec<String> = (0..2 * window).map(|i| format!("w{i}")).collect();
        let text = words.join(" ");
        let chunks = chunk_for_model(&text, &t, max_tokens, window);
        assert_eq!(chunks.len(), 2);
        assert_eq!(chunks[0].token_range, 0..window);
        assert_eq!(chunks[1].token_range, window..2 * window);
        assert_eq!(chunks[0].text, words[..window].join(" "));
        assert_eq!(chunks[1].text, words[window..].join(" "));
        for c in &chunks {
            assert!(t.tokenize(&c.text, max_tokens).unwrap().len() <= max_tokens);
        }
    }

    fn stream() -> impl Strategy<Value = Vec<LabeledMessage>> {
        prop::collection::vec(
            (0usize..3, 0usize..4, 0u32..25, any::<bool>(), any::<bool>()),
            0..60,
        )
        .prop_map(|raw| {
            let mut t = 0.0;
            let mut seqs = [0u64; 3];
            let mut out: Vec<LabeledMessage> = raw
                .into_iter()
                .enumerate()
                .map(|(i, (game, player, dt, toxic, has_t))| {
                    t += dt as f64;
                    seqs[game] += 1;
                    msg(
                        &format!("m{i}"),
                        &format!("g{game}"),
                        &format!("p{player}"),
                        seqs[game],
                        has_t.then_some(t),
                        "w",
                        toxic,
                    )
                })
                .collect();
            sort_for_aggregation(&mut out);
            out
        })
    }

    proptest! {
        #[test]
        fn grouping_partitions_each_players_stream(data in stream(), gap in 1u32..20, run in 1usize..5) {
            let cfg = GroupingConfig { gap_s: gap as f64, fallback_run_len: run };
            let utterances = group_messages(&data, &cfg).unwrap();
            prop_assert!(utterances.len() <= data.len());
            let mut per_player: HashMap<(String, String), Vec<String>> = HashMap::new();
            for m in &data {
                per_player
                    .entry((m.message.match_id.clone(), m.message.player_id.clone().unwrap()))
                    .or_default()
                    .push(m.message.message_id.clone());
            }
            let mut rebuilt: HashMap<(String, String), Vec<String>> = HashMap::new();
            for u in &utterances {
                rebuilt
                    .entry((u.match_id.clone(), u.player_id.clone()))
                    .or_default()
                    .extend(u.member_ids.iter().cloned());
            }
            prop_assert_eq!(rebuilt, per_player);

            let toxic_messages = data.iter().filter(|m| m.label == Label::Toxic).count();
            let toxic_utterances = utterances.iter().filter(|u| u.label == Label::Toxic).count();
            prop_assert!(toxic_utterances <= toxic_messages);
            let transcripts = match_transcripts(&data).unwrap();
            if toxic_messages == 0 {
                prop_assert_eq!(toxic_utterances, 0);
                prop_assert!(transcripts.iter().all(|t| t.label == Label::NonToxic));
            }
        }

        #[test]
        fn chunks_cover_every_token(n in 0usize..120, max_tokens in 3usize..20, stride_pick in any::<prop::sample::Index>()) {
            let t = tokenizer();
            let text = (0..n).map(|i| format!("w{}", i % 50)).collect::<Vec<_>>().join(" ");
            let stride = stride_pick.index(max_tokens) + 1;
            let chunks = chunk_for_model(&text, &t, max_tokens, stride);
            let mut covered = vec![false; n];
            for c in &chunks {
                prop_assert!(c.token_range.len() <= max_tokens - 2 || n == 0);
                for i in c.token_range.clone() {
                    covered[i] = true;
                }
            }
            prop_assert!(covered.into_iter().all(|c| c));
        }
    }
}
