use std::collections::{HashMap, HashSet};
use std::io::{BufRead, Read};

use serde::{Deserialize, Deserializer};

use super::{ChatMessage, CorpusError};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ChatlogFormat {
    Jsonl,
    Csv,
}

/// Non-fatal observations made while parsing.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct ParseReport {
    /// Invalid UTF-8 sequences replaced with U+FFFD.
    pub replaced_sequences: usize,
    /// Records (1-based line numbers) that contained replacements.
    pub lines_with_replacements: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ParsedChatlog {
    pub messages: Vec<ChatMessage>,
    pub report: ParseReport,
}

#[derive(Deserialize)]
pub(crate) struct RawRecord {
    #[serde(deserialize_with = "string_or_number")]
    pub id: String,
    #[serde(rename = "match", deserialize_with = "string_or_number")]
    pub match_id: String,
    #[serde(default, deserialize_with = "opt_string_or_number")]
    pub player: Option<String>,
    #[serde(default)]
    pub t: Option<f64>,
    #[serde(default)]
    pub seq: Option<u64>,
    pub text: String,
}

pub(crate) fn string_or_number<'de, D: Deserializer<'de>>(d: D) -> Result<String, D::Error> {
    match serde_json::Value::deserialize(d)? {
        serde_json::Value::String(s) => Ok(s),
        serde_json::Value::Number(n) => Ok(n.to_string()),
        other => Err(serde::de::Error::custom(format!(
            "expected string or number, found {other}"
        ))),
    }
}

pub(crate) fn opt_string_or_number<'de, D: Deserializer<'de>>(
    d: D,
) -> Result<Option<String>, D::Error> {
    match serde_json::Value::deserialize(d)? {
        serde_json::Value::Null => Ok(None),
        serde_json::Value::String(s) => Ok(Some(s)),
        serde_json::Value::Number(n) => Ok(Some(n.to_string())),
        other => Err(serde::de::Error::custom(format!(
            "expected string, number or null, found {other}"
        ))),
    }
}

/// Decodes `bytes` as UTF-8, substituting U+FFFD for each invalid sequence.
pub(crate) fn decode_lossy(bytes: &[u8]) -> (String, usize) {
    let mut out = String::with_capacity(bytes.len());
    let mut replaced = 0;
    for chunk in bytes.utf8_chunks() {
        out.push_str(chunk.valid());
        if !chunk.invalid().is_empty() {
            out.push(char::REPLACEMENT_CHARACTER);
            replaced += 1;
        }
    }
    (out, replaced)
}

/// Reads newline-separated records, yielding (1-based line number, decoded line).
pub(crate) fn for_each_line<R: BufRead>(
    mut reader: R,
    report: &mut ParseReport,
    mut f: impl FnMut(usize, &str) -> Result<(), CorpusError>,
) -> Result<(), CorpusError> {
    let mut buf = Vec::new();
    let mut line = 0;
    loop {
        buf.clear();
        if reader.read_until(b'\n', &mut buf)? == 0 {
            return Ok(());
        }
        line += 1;
        while matches!(buf.last(), Some(b'\n' | b'\r')) {
            buf.pop();
        }
        let (text, replaced) = decode_lossy(&buf);
        if replaced > 0 {
            report.replaced_sequences += replaced;
            report.lines_with_replacements.push(line);
        }
        let text = text.strip_prefix('\u{feff}').unwrap_or(&text);
        if text.trim().is_empty() {
            continue;
        }
        f(line, text)?;
    }
}

#[derive(Default)]
struct MatchCursor {
    last_seq: Option<u64>,
    max_t: Option<f64>,
}

/// Enforces id uniqueness and per-match ordering while records stream in.
#[derive(Default)]
pub(crate) struct Builder {
    ids: HashSet<String>,
    matches: HashMap<String, MatchCursor>,
    pub messages: Vec<ChatMessage>,
}

impl Builder {
    pub fn push(&mut self, line: usize, raw: RawRecord) -> Result<(), CorpusError> {
        if let Some(t) = raw.t {
            if !t.is_finite() || t < 0.0 {
                return Err(CorpusError::Malformed {
                    line,
                    reason: format!("timestamp {t} is not a non-negative number"),
                });
            }
        }
        if !self.ids.insert(raw.id.clone()) {
            return Err(CorpusError::DuplicateId(raw.id));
        }
        let cursor = self.matches.entry(raw.match_id.clone()).or_default();
        let seq = match (raw.seq, cursor.last_seq) {
            (Some(seq), Some(prev)) if seq <= prev => {
                return Err(CorpusError::SeqOrder {
                    line,
                    match_id: raw.match_id,
                    seq,
                    previous: prev,
                })
            }
            (Some(seq), _) => seq,
            (None, Some(prev)) => prev + 1,
            (None, None) => 0,
        };
        cursor.last_seq = Some(seq);
        if let Some(t) = raw.t {
            if cursor.max_t.is_some_and(|max| t < max) {
                return Err(CorpusError::TimestampOrder {
                    line,
                    match_id: raw.match_id,
                });
            }
            cursor.max_t = Some(t);
        }
        self.messages.push(ChatMessage {
            message_id: raw.id,
            match_id: raw.match_id,
            player_id: raw.player,
            seq,
            timestamp_s: raw.t,
            text: raw.text,
        });
        Ok(())
    }
}

/// Parses a chatlog stream into messages, preserving input order.
///
/// JSONL records follow `{"id", "match", "player", "t", "text"}` with an optional
/// `"seq"`; CSV files carry the same names as header columns. Missing `seq`
/// values continue the per-match counter from the previous record.
pub fn parse_chatlog<R: Read>(
    stream: R,
    format: ChatlogFormat,
) -> Result<ParsedChatlog, CorpusError> {
    let mut report = ParseReport::default();
    let mut builder = Builder::default();
    match format {
        ChatlogFormat::Jsonl => {
            let reader = std::io::BufReader::new(stream);
            for_each_line(reader, &mut report, |line, text| {
                let raw: RawRecord =
                    serde_json::from_str(text).map_err(|e| CorpusError::Malformed {
                        line,
                        reason: e.to_string(),
                    })?;
                builder.push(line, raw)
            })?;
        }
        ChatlogFormat::Csv => parse_csv(stream, &mut report, &mut builder)?,
    }
    Ok(ParsedChatlog {
        messages: builder.messages,
        report,
    })
}

fn parse_csv<R: Read>(
    stream: R,
    report: &mut ParseReport,
    builder: &mut Builder,
) -> Result<(), CorpusError> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .from_reader(stream);
    let headers = reader
        .byte_headers()
        .map_err(|e| CorpusError::Malformed {
            line: 1,
            reason: e.to_string(),
        })?
        .clone();
    let column = |name: &str| {
        headers
            .iter()
            .position(|h| decode_lossy(h).0.trim().eq_ignore_ascii_case(name))
    };
    let (id_col, match_col, text_col) = match (column("id"), column("match"), column("text")) {
        (Some(i), Some(m), Some(t)) => (i, m, t),
        _ => {
            return Err(CorpusError::Malformed {
                line: 1,
                reason: "CSV header must name id, match and text columns".into(),
            })
        }
    };
    let player_col = column("player");
    let t_col = column("t");
    let seq_col = column("seq");

    let mut record = csv::ByteRecord::new();
    loop {
        let more = reader.read_byte_record(&mut record).map_err(|e| {
            let line = e.position().map(|p| p.line() as usize).unwrap_or(0);
            CorpusError::Malformed {
                line,
                reason: e.to_string(),
            }
        })?;
        if !more {
            return Ok(());
        }
        let line = record.position().map(|p| p.line() as usize).unwrap_or(0);
        let mut field = |col: usize| -> String {
            let (s, replaced) = decode_lossy(record.get(col).unwrap_or_default());
            if replaced > 0 {
                report.replaced_sequences += replaced;
                if report.lines_with_replacements.last() != Some(&line) {
                    report.lines_with_replacements.push(line);
                }
            }
            s
        };
        let id = field(id_col);
        let match_id = field(match_col);
        let text = field(text_col);
        let player = player_col.map(&mut field).filter(|p| !p.is_empty());
        let t = t_col.map(&mut field).filter(|s| !s.trim().is_empty());
        let seq = seq_col.map(&mut field).filter(|s| !s.trim().is_empty());
        let t = t
            .map(|s| s.trim().parse::<f64>())
            .transpose()
            .map_err(|e| CorpusError::Malformed {
                line,
                reason: format!("bad timestamp: {e}"),
            })?;
        let seq = seq
            .map(|s| s.trim().parse::<u64>())
            .transpose()
            .map_err(|e| CorpusError::Malformed {
                line,
                reason: format!("bad seq: {e}"),
            })?;
        builder.push(
            line,
            RawRecord {
                id,
                match_id,
                player,
                t,
                seq,
                text,
            },
        )?;
    }
}
