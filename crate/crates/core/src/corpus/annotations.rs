use std::io::{BufReader, Read};

use serde::Deserialize;

use super::chatlog::{for_each_line, string_or_number};
use super::{CorpusError, Label, ParseReport};

/// Per-message category votes, one entry per annotator.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AnnotationRecord {
    pub message_id: String,
    pub votes: Vec<Label>,
}

impl AnnotationRecord {
    pub fn new(message_id: impl Into<String>, votes: Vec<Label>) -> Self {
        Self {
            message_id: message_id.into(),
            votes,
        }
    }

    pub fn count(&self, label: Label) -> usize {
        self.votes.iter().filter(|&&v| v == label).count()
    }
}

#[derive(Deserialize)]
struct RawAnnotation {
    #[serde(deserialize_with = "string_or_number")]
    id: String,
    votes: Vec<serde_json::Value>,
}

fn vote(value: &serde_json::Value) -> Result<Label, CorpusError> {
    match value {
        serde_json::Value::String(s) => s.parse(),
        serde_json::Value::Number(n) => n.to_string().parse(),
        other => Err(CorpusError::UnknownCategory(other.to_string())),
    }
}

/// Parses annotation JSONL: `{"id": str, "votes": ["toxic"|"nontoxic"|"nonenglish", ...]}`.
///
/// Binary `1`/`0` votes are read as toxic/nontoxic. Every record in a file must
/// carry the same number of votes.
pub fn parse_annotations<R: Read>(stream: R) -> Result<Vec<AnnotationRecord>, CorpusError> {
    let mut report = ParseReport::default();
    let mut records: Vec<AnnotationRecord> = Vec::new();
    for_each_line(BufReader::new(stream), &mut report, |line, text| {
        let raw: RawAnnotation =
            serde_json::from_str(text).map_err(|e| CorpusError::Malformed {
                line,
                reason: e.to_string(),
            })?;
        if raw.votes.is_empty() {
            return Err(CorpusError::Malformed {
                line,
                reason: "empty vote vector".into(),
            });
        }
        if let Some(first) = records.first() {
            if first.votes.len() != raw.votes.len() {
                return Err(CorpusError::RaggedVotes {
                    line,
                    expected: first.votes.len(),
                    found: raw.votes.len(),
                });
            }
        }
        let votes = raw.votes.iter().map(vote).collect::<Result<Vec<_>, _>>()?;
        records.push(AnnotationRecord::new(raw.id, votes));
        Ok(())
    })?;
    Ok(records)
}
