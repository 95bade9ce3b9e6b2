use std::fmt::Write as _;
use std::io::Read;

use super::chatlog::decode_lossy;
use super::CorpusError;

/// One timed block of caption text.
#[derive(Debug, Clone, PartialEq)]
pub struct CaptionCue {
    pub start_s: f64,
    pub end_s: f64,
    pub lines: Vec<String>,
}

impl CaptionCue {
    /// The cue's lines joined by spaces.
    pub fn text(&self) -> String {
        self.lines.join(" ")
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CaptionFormat {
    WebVtt,
    Srt,
}

#[derive(Debug, Clone, Copy, Default)]
pub struct VttOptions {
    /// Sort out-of-order cues by start time instead of failing.
    pub reorder: bool,
}

pub fn parse_vtt<R: Read>(stream: R) -> Result<Vec<CaptionCue>, CorpusError> {
    parse_vtt_with(stream, VttOptions::default())
}

/// Parses WebVTT, or SRT when the file opens with a numeric counter followed by
/// a timing line. Markup tags are removed from cue text.
pub fn parse_vtt_with<R: Read>(
    mut stream: R,
    options: VttOptions,
) -> Result<Vec<CaptionCue>, CorpusError> {
    let mut bytes = Vec::new();
    stream.read_to_end(&mut bytes)?;
    let (text, _) = decode_lossy(&bytes);
    let text = text.strip_prefix('\u{feff}').unwrap_or(&text);
    let lines: Vec<&str> = text.lines().map(|l| l.trim_end_matches('\r')).collect();

    let format = detect(&lines).ok_or(CorpusError::MissingHeader)?;
    let mut blocks = blocks(&lines);
    if format == CaptionFormat::WebVtt {
        // header block, including any "Kind:"/"Language:" metadata
        blocks.remove(0);
    }

    let mut cues: Vec<CaptionCue> = Vec::new();
    for block in blocks {
        let first = block[0];
        if format == CaptionFormat::WebVtt
            && !first.contains("-->")
            && ["NOTE", "STYLE", "REGION"].iter().any(|kw| {
                first == *kw
                    || first.starts_with(&format!("{kw} "))
                    || first.starts_with(&format!("{kw}\t"))
            })
        {
            continue;
        }
        let index = cues.len() + 1;
        let timing_at = block
            .iter()
            .take(2)
            .position(|l| l.contains("-->"))
            .ok_or_else(|| CorpusError::BadCue {
                cue: index,
                reason: "missing timing line".into(),
            })?;
        let (start_s, end_s) = parse_timing(block[timing_at])
            .map_err(|reason| CorpusError::BadCue { cue: index, reason })?;
        if end_s <= start_s {
            return Err(CorpusError::BadCue {
                cue: index,
                reason: format!("end {end_s} is not after start {start_s}"),
            });
        }
        if let Some(prev) = cues.last() {
            if start_s < prev.start_s && !options.reorder {
                return Err(CorpusError::CueOrder { cue: index });
            }
        }
        let lines = block[timing_at + 1..]
            .iter()
            .map(|l| strip_markup(l))
            .filter(|l| !l.trim().is_empty())
            .collect();
        cues.push(CaptionCue {
            start_s,
            end_s,
            lines,
        });
    }
    if options.reorder {
        cues.sort_by(|a, b| a.start_s.total_cmp(&b.start_s));
    }
    Ok(cues)
}

fn detect(lines: &[&str]) -> Option<CaptionFormat> {
    let mut non_empty = lines.iter().filter(|l| !l.trim().is_empty());
    let first = non_empty.next()?;
    if let Some(rest) = first.strip_prefix("WEBVTT") {
        if rest.is_empty() || rest.starts_with([' ', '\t']) {
            return Some(CaptionFormat::WebVtt);
        }
        return None;
    }
    let is_counter = !first.trim().is_empty() && first.trim().bytes().all(|b| b.is_ascii_digit());
    match non_empty.next() {
        Some(second) if is_counter && second.contains("-->") => Some(CaptionFormat::Srt),
        _ => None,
    }
}

fn blocks<'a>(lines: &[&'a str]) -> Vec<Vec<&'a str>> {
    let mut out = Vec::new();
    let mut current = Vec::new();
    for &line in lines {
        if line.trim().is_empty() {
            if !current.is_empty() {
                out.push(std::mem::take(&mut current));
            }
        } else {
            current.push(line);
        }
    }
    if !current.is_empty() {
        out.push(current);
    }
    out
}

fn parse_timing(line: &str) -> Result<(f64, f64), String> {
    let (start, rest) = line
        .split_once("-->")
        .ok_or_else(|| "missing `-->`".to_string())?;
    let end = rest
        .split_whitespace()
        .next()
        .ok_or_else(|| "missing end timestamp".to_string())?;
    Ok((parse_timestamp(start.trim())?, parse_timestamp(end)?))
}

/// `[hh:]mm:ss.ttt`, accepting `,` as the decimal separator.
fn parse_timestamp(s: &str) -> Result<f64, String> {
    let bad = || format!("unparseable timestamp `{s}`");
    let normalized = s.replace(',', ".");
    let (clock, frac) = normalized.split_once('.').ok_or_else(bad)?;
    if frac.is_empty() || frac.len() > 3 || !frac.bytes().all(|b| b.is_ascii_digit()) {
        return Err(bad());
    }
    let parts: Vec<&str> = clock.split(':').collect();
    if !(2..=3).contains(&parts.len()) {
        return Err(bad());
    }
    let mut fields = Vec::with_capacity(3);
    for p in &parts {
        if p.is_empty() || !p.bytes().all(|b| b.is_ascii_digit()) {
            return Err(bad());
        }
        fields.push(p.parse::<u64>().map_err(|_| bad())?);
    }
    let (h, m, sec) = match fields[..] {
        [m, s] => (0, m, s),
        [h, m, s] => (h, m, s),
        _ => unreachable!(),
    };
    if m >= 60 || sec >= 60 {
        return Err(bad());
    }
    let millis: u64 = format!("{frac:0<3}").parse().map_err(|_| bad())?;
    Ok(((h * 3600 + m * 60 + sec) * 1000 + millis) as f64 / 1000.0)
}

/// Removes `<...>` tags (class spans, voices, inline timestamps, SRT font tags)
/// and decodes the character references WebVTT permits.
fn strip_markup(line: &str) -> String {
    let mut out = String::with_capacity(line.len());
    let mut in_tag = false;
    for c in line.chars() {
        match (in_tag, c) {
            (false, '<') => in_tag = true,
            (true, '>') => in_tag = false,
            (false, c) => out.push(c),
            (true, _) => {}
        }
    }
    out.replace("&lt;", "<")
        .replace("&gt;", ">")
        .replace("&nbsp;", "\u{a0}")
        .replace("&lrm;", "\u{200e}")
        .replace("&rlm;", "\u{200f}")
        .replace("&amp;", "&")
}

fn format_timestamp(seconds: f64) -> String {
    let total_ms = (seconds * 1000.0).round() as u64;
    let (h, rem) = (total_ms / 3_600_000, total_ms % 3_600_000);
    let (m, rem) = (rem / 60_000, rem % 60_000);
    format!("{h:02}:{m:02}:{:02}.{:03}", rem / 1000, rem % 1000)
}

/// Serializes cues as WebVTT.
pub fn write_vtt(cues: &[CaptionCue]) -> String {
    let mut out = String::from("WEBVTT\n");
    for cue in cues {
        let _ = write!(
            out,
            "\n{} --> {}\n",
            format_timestamp(cue.start_s),
            format_timestamp(cue.end_s)
        );
        for line in &cue.lines {
            out.push_str(line);
            out.push('\n');
        }
    }
    out
}
