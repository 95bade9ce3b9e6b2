use std::collections::BTreeSet;
use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use serde::Serialize;

use super::chatlog::{for_each_line, Builder, RawRecord};
use super::{CorpusError, Label, LabeledMessage, ParseReport};

/// Version accepted in an optional `"schema_version"` field.
pub const LABELED_SCHEMA_VERSION: u64 = 1;

const KNOWN_FIELDS: &[&str] = &[
    "id",
    "match",
    "player",
    "t",
    "text",
    "label",
    "seq",
    "schema_version",
];

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct ReadReport {
    pub parse: ParseReport,
    /// Field names that were present but not part of the schema.
    pub ignored_fields: BTreeSet<String>,
}

#[derive(Serialize)]
struct OutRecord<'a> {
    id: &'a str,
    #[serde(rename = "match")]
    match_id: &'a str,
    player: Option<&'a str>,
    t: Option<f64>,
    seq: u64,
    text: &'a str,
    label: Label,
}

/// Writes the dataset as labeled JSONL, one record per line.
pub fn write_labeled_to<W: Write>(mut out: W, dataset: &[LabeledMessage]) -> std::io::Result<()> {
    for item in dataset {
        let m = &item.message;
        let rec = OutRecord {
            id: &m.message_id,
            match_id: &m.match_id,
            player: m.player_id.as_deref(),
            t: m.timestamp_s,
            seq: m.seq,
            text: &m.text,
            label: item.label,
        };
        serde_json::to_writer(&mut out, &rec)?;
        out.write_all(b"\n")?;
    }
    out.flush()
}

pub fn write_labeled(path: &Path, dataset: &[LabeledMessage]) -> Result<(), CorpusError> {
    let io_err = |source| CorpusError::Io {
        path: path.to_path_buf(),
        source,
    };
    let file = File::create(path).map_err(io_err)?;
    write_labeled_to(BufWriter::new(file), dataset).map_err(io_err)
}

pub(crate) fn read_labeled_from<R: Read>(
    stream: R,
) -> Result<(Vec<LabeledMessage>, ReadReport), CorpusError> {
    let mut report = ReadReport::default();
    let mut builder = Builder::default();
    let mut labels = Vec::new();
    let mut ignored = BTreeSet::new();
    for_each_line(BufReader::new(stream), &mut report.parse, |line, text| {
        let malformed = |reason: String| CorpusError::Malformed { line, reason };
        let value: serde_json::Value =
            serde_json::from_str(text).map_err(|e| malformed(e.to_string()))?;
        let obj = value
            .as_object()
            .ok_or_else(|| malformed("record is not a JSON object".into()))?;
        for key in obj.keys() {
            if !KNOWN_FIELDS.contains(&key.as_str()) && ignored.insert(key.clone()) {
                log::warn!("line {line}: ignoring unknown field `{key}`");
            }
        }
        if let Some(v) = obj.get("schema_version") {
            let found = v
                .as_u64()
                .ok_or_else(|| malformed("schema_version must be an integer".into()))?;
            if found != LABELED_SCHEMA_VERSION {
                return Err(CorpusError::SchemaVersion {
                    found,
                    expected: LABELED_SCHEMA_VERSION,
                });
            }
        }
        let label: Label = obj
            .get("label")
            .and_then(|v| v.as_str())
            .ok_or_else(|| malformed("missing label".into()))?
            .parse()?;
        let raw: RawRecord = serde_json::from_value(value).map_err(|e| malformed(e.to_string()))?;
        builder.push(line, raw)?;
        labels.push(label);
        Ok(())
    })?;
    report.ignored_fields = ignored;
    let dataset = builder
        .messages
        .into_iter()
        .zip(labels)
        .map(|(m, l)| LabeledMessage::new(m, l))
        .collect();
    Ok((dataset, report))
}

/// Reads a labeled JSONL file. Unknown fields are skipped and listed in the report.
pub fn read_labeled(path: &Path) -> Result<(Vec<LabeledMessage>, ReadReport), CorpusError> {
    let file = File::open(path).map_err(|source| CorpusError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    read_labeled_from(file)
}
