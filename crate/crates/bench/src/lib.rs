//! Seeded synthetic inputs shared by the benchmarks.

use chattox_core::corpus::{ChatMessage, Label, LabeledMessage};
use chattox_core::scanner::TextUnit;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const WORDS: &[&str] = &[
    "gg",
    "wp",
    "nice",
    "ult",
    "bot",
    "lane",
    "mid",
    "jungle",
    "drag",
    "baron",
    "ward",
    "river",
    "noob",
    "trash",
    "useless",
    "uninstall",
    "lol",
    "ez",
    "report",
    "pls",
];

pub fn chat_line(rng: &mut ChaCha8Rng) -> String {
    let n = rng.gen_range(1..6);
    (0..n)
        .map(|_| *WORDS.choose(rng).unwrap())
        .collect::<Vec<_>>()
        .join(" ")
}

pub fn lines(n: usize, seed: u64) -> Vec<String> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n).map(|_| chat_line(&mut rng)).collect()
}

pub fn units(n: usize, seed: u64) -> Vec<TextUnit> {
    lines(n, seed)
        .into_iter()
        .enumerate()
        .map(|(i, t)| TextUnit::new(format!("u{i}"), t))
        .collect()
}

/// Labeled English messages spread over `matches` matches of ten players,
/// sorted by match then sequence number.
pub fn match_log(n: usize, matches: usize, seed: u64) -> Vec<LabeledMessage> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let per_match = n.div_ceil(matches.max(1));
    (0..n)
        .map(|i| {
            let label = if rng.gen_bool(0.1) {
                Label::Toxic
            } else {
                Label::NonToxic
            };
            LabeledMessage::new(
                ChatMessage {
                    message_id: format!("m{i}"),
                    match_id: format!("g{}", i / per_match),
                    player_id: Some(format!("p{}", rng.gen_range(0..10))),
                    seq: (i % per_match) as u64,
                    timestamp_s: Some((i % per_match) as f64 * 4.0),
                    text: chat_line(&mut rng),
                },
                label,
            )
        })
        .collect()
}

/// Random vote-count rows over three categories with `raters` votes each.
pub fn vote_rows(n: usize, raters: u64, seed: u64) -> Vec<[u64; 3]> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|_| {
            let mut row = [0u64; 3];
            for _ in 0..raters {
                row[rng.gen_range(0..3)] += 1;
            }
            row
        })
        .collect()
}
