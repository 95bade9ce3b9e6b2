//! Data model and file formats: chatlogs, annotator votes, labeled datasets,
//! caption files and corpus statistics.

mod annotations;
mod chatlog;
mod labeled;
mod stats;
mod subtitles;

use std::fmt;
use std::path::PathBuf;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

pub use annotations::{parse_annotations, AnnotationRecord};
pub use chatlog::{parse_chatlog, ChatlogFormat, ParseReport, ParsedChatlog};
pub use labeled::{
    read_labeled, write_labeled, write_labeled_to, ReadReport, LABELED_SCHEMA_VERSION,
};
pub use stats::{corpus_stats, CorpusStats};
pub use subtitles::{parse_vtt, parse_vtt_with, write_vtt, CaptionCue, CaptionFormat, VttOptions};

/// One in-game chat line.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChatMessage {
    pub message_id: String,
    pub match_id: String,
    pub player_id: Option<String>,
    /// Position within the match, strictly increasing in file order.
    pub seq: u64,
    /// Seconds from match start.
    pub timestamp_s: Option<f64>,
    pub text: String,
}

/// The three annotation categories.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Label {
    Toxic,
    NonToxic,
    NonEnglish,
}

impl Label {
    pub const ALL: [Label; 3] = [Label::Toxic, Label::NonToxic, Label::NonEnglish];

    pub fn as_str(self) -> &'static str {
        match self {
            Label::Toxic => "toxic",
            Label::NonToxic => "nontoxic",
            Label::NonEnglish => "nonenglish",
        }
    }

    /// Column index used by vote-count matrices.
    pub fn index(self) -> usize {
        match self {
            Label::Toxic => 0,
            Label::NonToxic => 1,
            Label::NonEnglish => 2,
        }
    }

    pub fn is_english(self) -> bool {
        self != Label::NonEnglish
    }
}

impl fmt::Display for Label {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Label {
    type Err = CorpusError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().as_str() {
            "toxic" | "1" => Ok(Label::Toxic),
            "nontoxic" | "non-toxic" | "0" => Ok(Label::NonToxic),
            "nonenglish" | "non-english" => Ok(Label::NonEnglish),
            other => Err(CorpusError::UnknownCategory(other.to_string())),
        }
    }
}

/// A chat message carrying its consensus label.
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledMessage {
    pub message: ChatMessage,
    pub label: Label,
}

impl LabeledMessage {
    pub fn new(message: ChatMessage, label: Label) -> Self {
        Self { message, label }
    }
}

/// Keeps only Toxic and NonToxic messages.
pub fn english_only(dataset: &[LabeledMessage]) -> Vec<LabeledMessage> {
    dataset
        .iter()
        .filter(|m| m.label.is_english())
        .cloned()
        .collect()
}

#[derive(Debug, thiserror::Error)]
pub enum CorpusError {
    #[error("line {line}: {reason}")]
    Malformed { line: usize, reason: String },
    #[error("duplicate message id `{0}`")]
    DuplicateId(String),
    #[error("line {line}: match `{match_id}` seq {seq} does not follow {previous}")]
    SeqOrder {
        line: usize,
        match_id: String,
        seq: u64,
        previous: u64,
    },
    #[error("line {line}: timestamp ordering contradicts seq ordering in match `{match_id}`")]
    TimestampOrder { line: usize, match_id: String },
    #[error("unknown category `{0}`")]
    UnknownCategory(String),
    #[error("line {line}: expected {expected} votes, found {found}")]
    RaggedVotes {
        line: usize,
        expected: usize,
        found: usize,
    },
    #[error("missing WEBVTT header")]
    MissingHeader,
    #[error("cue {cue}: {reason}")]
    BadCue { cue: usize, reason: String },
    #[error("cue {cue} starts before the previous cue")]
    CueOrder { cue: usize },
    #[error("unsupported labeled schema version {found} (expected {expected})")]
    SchemaVersion { found: u64, expected: u64 },
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error(transparent)]
    Stream(#[from] std::io::Error),
}
