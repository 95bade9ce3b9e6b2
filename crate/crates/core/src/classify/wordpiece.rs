//! BERT-style text normalization and greedy longest-match WordPiece.

use std::collections::HashMap;
use std::fs;
use std::path::{Path, PathBuf};

use serde::Deserialize;
use unicode_normalization::char::is_combining_mark;
use unicode_normalization::UnicodeNormalization;

use super::ClassifyError;

const MAX_CHARS_PER_WORD: usize = 100;
const CONTINUATION: &str = "##";

/// A special token given either as its vocabulary piece or as its id.
#[derive(Debug, Clone, Deserialize, PartialEq, Eq)]
#[serde(untagged)]
pub enum SpecialRef {
    Id(u32),
    Piece(String),
}

#[derive(Debug, Clone, Deserialize)]
struct SpecialRefs {
    start: SpecialRef,
    end: SpecialRef,
    pad: SpecialRef,
    unk: SpecialRef,
}

/// The JSON sidecar describing a vocabulary.
#[derive(Debug, Clone, Deserialize)]
struct Sidecar {
    lowercase: bool,
    special: SpecialRefs,
    /// Vocabulary path relative to the sidecar; defaults to `vocab.txt`.
    #[serde(default)]
    vocab: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SpecialTokens {
    pub start: u32,
    pub end: u32,
    pub pad: u32,
    pub unk: u32,
}

#[derive(Debug, Clone)]
pub struct TokenizerSpec {
    pub vocab_path: PathBuf,
    pub lowercase: bool,
    special: SpecialRefs,
}

impl TokenizerSpec {
    /// Reads the sidecar `{lowercase, special: {start, end, pad, unk}, vocab?}`.
    pub fn from_sidecar(path: &Path) -> Result<Self, ClassifyError> {
        let load_err = |reason: String| ClassifyError::Load {
            path: path.to_path_buf(),
            reason,
        };
        let raw = fs::read_to_string(path).map_err(|e| load_err(e.to_string()))?;
        let sidecar: Sidecar = serde_json::from_str(&raw).map_err(|e| load_err(e.to_string()))?;
        let dir = path.parent().unwrap_or(Path::new("."));
        let vocab_path = dir.join(sidecar.vocab.unwrap_or_else(|| PathBuf::from("vocab.txt")));
        Ok(Self {
            vocab_path,
            lowercase: sidecar.lowercase,
            special: sidecar.special,
        })
    }

    pub fn load(&self) -> Result<WordPieceTokenizer, ClassifyError> {
        let raw = fs::read_to_string(&self.vocab_path).map_err(|e| ClassifyError::Load {
            path: self.vocab_path.clone(),
            reason: e.to_string(),
        })?;
        let pieces = raw
            .lines()
            .map(|l| l.trim_end_matches('\r').to_string())
            .collect();
        WordPieceTokenizer::from_pieces(pieces, self.lowercase, &self.special).map_err(|reason| {
            ClassifyError::Load {
                path: self.vocab_path.clone(),
                reason,
            }
        })
    }
}

/// A content token with its byte span in the original text.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Token {
    pub id: u32,
    pub start: usize,
    pub end: usize,
}

#[derive(Debug, Clone)]
pub struct WordPieceTokenizer {
    ids: HashMap<String, u32>,
    lowercase: bool,
    special: SpecialTokens,
}

/// A normalized word plus, per normalized char, the original byte span it came from.
struct Word {
    text: String,
    spans: Vec<(usize, usize)>,
}

impl WordPieceTokenizer {
    pub fn from_files(sidecar: &Path) -> Result<Self, ClassifyError> {
        TokenizerSpec::from_sidecar(sidecar)?.load()
    }

    /// Builds from an in-memory vocabulary; `special` lists start, end, pad and
    /// unknown pieces in that order.
    pub fn new(pieces: Vec<String>, lowercase: bool, special: [&str; 4]) -> Result<Self, String> {
        let refs = SpecialRefs {
            start: SpecialRef::Piece(special[0].into()),
            end: SpecialRef::Piece(special[1].into()),
            pad: SpecialRef::Piece(special[2].into()),
            unk: SpecialRef::Piece(special[3].into()),
        };
        Self::from_pieces(pieces, lowercase, &refs)
    }

    fn from_pieces(
        pieces: Vec<String>,
        lowercase: bool,
        special: &SpecialRefs,
    ) -> Result<Self, String> {
        let mut ids = HashMap::with_capacity(pieces.len());
        for (i, piece) in pieces.into_iter().enumerate() {
            if ids.insert(piece.clone(), i as u32).is_some() {
                return Err(format!(
                    "duplicate vocabulary piece `{piece}` on line {}",
                    i + 1
                ));
            }
        }
        let size = ids.len() as u32;
        let resolve = |r: &SpecialRef| -> Result<u32, String> {
            match r {
                SpecialRef::Id(id) if *id < size => Ok(*id),
                SpecialRef::Id(id) => Err(format!("special token id {id} outside vocabulary")),
                SpecialRef::Piece(p) => ids
                    .get(p)
                    .copied()
                    .ok_or_else(|| format!("special token `{p}` not in vocabulary")),
            }
        };
        let special = SpecialTokens {
            start: resolve(&special.start)?,
            end: resolve(&special.end)?,
            pad: resolve(&special.pad)?,
            unk: resolve(&special.unk)?,
        };
        Ok(Self {
            ids,
            lowercase,
            special,
        })
    }

    pub fn special(&self) -> SpecialTokens {
        self.special
    }

    pub fn vocab_size(&self) -> usize {
        self.ids.len()
    }

    pub fn id(&self, piece: &str) -> Option<u32> {
        self.ids.get(piece).copied()
    }

    /// Full encoding: start token, content tokens, end token, truncated so the
    /// result holds at most `max_tokens` ids and always ends with the end token.
    pub fn tokenize(&self, text: &str, max_tokens: usize) -> Result<Vec<u32>, ClassifyError> {
        if max_tokens < 2 {
            return Err(ClassifyError::Config(format!(
                "max_tokens must be at least 2, got {max_tokens}"
            )));
        }
        let content = self.encode(text);
        let keep = content.len().min(max_tokens - 2);
        let mut ids = Vec::with_capacity(keep + 2);
        ids.push(self.special.start);
        ids.extend(content[..keep].iter().map(|t| t.id));
        ids.push(self.special.end);
        Ok(ids)
    }

    /// Content tokens (no start/end markers, no truncation) with byte offsets.
    pub fn encode(&self, text: &str) -> Vec<Token> {
        let mut tokens = Vec::new();
        for word in self.words(text) {
            self.word_pieces(&word, &mut tokens);
        }
        tokens
    }

    fn words(&self, text: &str) -> Vec<Word> {
        let mut words = Vec::new();
        let mut current = Word {
            text: String::new(),
            spans: Vec::new(),
        };
        let flush = |current: &mut Word, words: &mut Vec<Word>| {
            if !current.text.is_empty() {
                words.push(std::mem::replace(
                    current,
                    Word {
                        text: String::new(),
                        spans: Vec::new(),
                    },
                ));
            }
        };
        for (start, c) in text.char_indices() {
            let end = start + c.len_utf8();
            if is_removed(c) {
                continue;
            }
            if c.is_whitespace() {
                flush(&mut current, &mut words);
                continue;
            }
            let normalized = self.normalize_char(c);
            if is_cjk(c) || normalized.chars().any(is_punctuation) {
                flush(&mut current, &mut words);
                if !normalized.is_empty() {
                    let spans = vec![(start, end); normalized.chars().count()];
                    words.push(Word {
                        text: normalized,
                        spans,
                    });
                }
                continue;
            }
            for n in normalized.chars() {
                current.text.push(n);
                current.spans.push((start, end));
            }
        }
        flush(&mut current, &mut words);
        words
    }

    fn normalize_char(&self, c: char) -> String {
        if !self.lowercase {
            return c.to_string();
        }
        c.to_lowercase()
            .collect::<String>()
            .nfd()
            .filter(|&c| !is_combining_mark(c))
            .collect()
    }

    fn word_pieces(&self, word: &Word, out: &mut Vec<Token>) {
        let chars: Vec<(usize, char)> = word.text.char_indices().collect();
        let span_of = |from: usize, to: usize| (word.spans[from].0, word.spans[to - 1].1);
        if chars.len() > MAX_CHARS_PER_WORD {
            let (start, end) = span_of(0, chars.len());
            out.push(Token {
                id: self.special.unk,
                start,
                end,
            });
            return;
        }
        let byte_at = |i: usize| chars.get(i).map_or(word.text.len(), |c| c.0);
        let mut pieces = Vec::new();
        let mut start = 0;
        while start < chars.len() {
            let mut end = chars.len();
            let mut found = None;
            while start < end {
                let sub = &word.text[byte_at(start)..byte_at(end)];
                let id = if start > 0 {
                    self.ids.get(&format!("{CONTINUATION}{sub}"))
                } else {
                    self.ids.get(sub)
                };
                if let Some(&id) = id {
                    found = Some(id);
                    break;
                }
                end -= 1;
            }
            let Some(id) = found else {
                let (s, e) = span_of(0, chars.len());
                out.push(Token {
                    id: self.special.unk,
                    start: s,
                    end: e,
                });
                return;
            };
            let (s, e) = span_of(start, end);
            pieces.push(Token {
                id,
                start: s,
                end: e,
            });
            start = end;
        }
        out.extend(pieces);
    }
}

fn is_removed(c: char) -> bool {
    let cp = c as u32;
    if cp == 0 || c == char::REPLACEMENT_CHARACTER {
        return true;
    }
    if matches!(c, '\t' | '\n' | '\r') {
        return false;
    }
    c.is_control()
        || matches!(cp, 0xAD | 0x200B..=0x200F | 0x202A..=0x202E | 0x2060..=0x2064 | 0xFEFF)
}

fn is_cjk(c: char) -> bool {
    matches!(c as u32,
        0x4E00..=0x9FFF
        | 0x3400..=0x4DBF
        | 0x20000..=0x2A6DF
        | 0x2A700..=0x2B73F
        | 0x2B740..=0x2B81F
        | 0x2B820..=0x2CEAF
        | 0xF900..=0xFAFF
        | 0x2F800..=0x2FA1F)
}

fn is_punctuation(c: char) -> bool {
    if c.is_ascii() {
        return c.is_ascii_punctuation();
    }
    matches!(c as u32,
        0xA1 | 0xA7 | 0xAB | 0xB6 | 0xB7 | 0xBB | 0xBF
        | 0x2010..=0x2027
        | 0x2030..=0x205E
        | 0x2E00..=0x2E7F
        | 0x3001..=0x3003
        | 0x3008..=0x3011
        | 0x3014..=0x301F
        | 0xFE10..=0xFE19
        | 0xFE30..=0xFE4F
        | 0xFF01..=0xFF0F
        | 0xFF1A..=0xFF20
        | 0xFF3B..=0xFF3D
        | 0xFF3F
        | 0xFF5B
        | 0xFF5D
        | 0xFF5F..=0xFF65)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn fixture() -> WordPieceTokenizer {
        let pieces = [
            "[PAD]",
            "[UNK]",
            "[CLS]",
            "[SEP]",
            "gg",
            "noob",
            "!",
            "un",
            "##install",
            "lol",
            "caf",
            "##e",
            "n",
            "##0",
            "##b",
            "的",
        ];
        WordPieceTokenizer::new(
            pieces.iter().map(|s| s.to_string()).collect(),
            true,
            ["[CLS]", "[SEP]", "[PAD]", "[UNK]"],
        )
        .unwrap()
    }

    #[test]
    fn empty_text_is_bracketed() {
        assert_eq!(fixture().tokenize("", 192).unwrap(), vec![2, 3]);
    }

    #[test]
    fn single_known_word() {
        let t = fixture();
        assert_eq!(
            t.tokenize("gg", 192).unwrap(),
            vec![2, t.id("gg").unwrap(), 3]
        );
    }

    #[test]
    fn continuation_pieces_and_punctuation() {
        let t = fixture();
        let ids = t.tokenize("UNINSTALL lol!!", 192).unwrap();
        assert_eq!(ids, vec![2, 7, 8, 9, 6, 6, 3]);
    }

    #[test]
    fn accents_stripped_when_lowercasing() {
        let t = fixture();
        assert_eq!(t.tokenize("Café", 192).unwrap(), vec![2, 10, 11, 3]);
    }

    #[test]
    fn unknown_word_is_single_unk() {
        let t = fixture();
        assert_eq!(t.tokenize("zzz gg", 192).unwrap(), vec![2, 1, 4, 3]);
        assert_eq!(
            t.tokenize("n0000b", 192).unwrap(),
            vec![2, 12, 13, 13, 13, 13, 14, 3]
        );
    }

    #[test]
    fn truncation_keeps_end_token() {
        let t = fixture();
        let text = vec!["gg"; 500].join(" ");
        let ids = t.tokenize(&text, 192).unwrap();
        assert_eq!(ids.len(), 192);
        assert_eq!(*ids.last().unwrap(), t.special().end);
        assert_eq!(ids[0], t.special().start);
        assert!(t.tokenize("gg", 1).is_err());
    }

    #[test]
    fn offsets_point_into_original_text() {
        let t = fixture();
        let text = "  NOOB\u{200b}! 的";
        let toks = t.encode(text);
        let spans: Vec<&str> = toks.iter().map(|k| &text[k.start..k.end]).collect();
        assert_eq!(spans, vec!["NOOB", "!", "的"]);
    }

    #[test]
    fn cased_vocabulary_keeps_case() {
        let t = WordPieceTokenizer::new(
            ["[PAD]", "[UNK]", "[CLS]", "[SEP]", "GG"]
                .iter()
                .map(|s| s.to_string())
                .collect(),
            false,
            ["[CLS]", "[SEP]", "[PAD]", "[UNK]"],
        )
        .unwrap();
        assert_eq!(t.tokenize("GG gg", 10).unwrap(), vec![2, 4, 1, 3]);
    }

    #[test]
    fn missing_special_token_rejected() {
        let err =
            WordPieceTokenizer::new(vec!["a".into()], true, ["[CLS]", "[SEP]", "[PAD]", "[UNK]"]);
        assert!(err.is_err());
    }

    #[test]
    fn missing_vocab_file_is_load_error() {
        let spec = TokenizerSpec {
            vocab_path: PathBuf::from("/nonexistent/vocab.txt"),
            lowercase: true,
            special: SpecialRefs {
                start: SpecialRef::Id(0),
                end: SpecialRef::Id(0),
                pad: SpecialRef::Id(0),
                unk: SpecialRef::Id(0),
            },
        };
        assert!(matches!(spec.load(), Err(ClassifyError::Load { .. })));
    }
}
