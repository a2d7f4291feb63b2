use std::collections::HashSet;
use std::fs;
use std::ops::Range;
use std::path::Path;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum SegmenterError {
    #[error("segmenter `{name}` failed: {message}")]
    Failed { name: String, message: String },
    #[error("word list {path}: {message}")]
    WordList { path: String, message: String },
}

/// A word with its character range `[start, end)` in the source text.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Word {
    pub text: String,
    pub chars: Range<usize>,
}

/// Word segmentation plugin. Words never overlap and come in text order;
/// whitespace is never part of a word.
pub trait Segmenter: Send + Sync {
    fn name(&self) -> &str;
    fn segment(&self, text: &str) -> Result<Vec<Word>, SegmenterError>;

    /// Enough to rebuild this segmenter from a checkpoint, if it can be.
    fn spec(&self) -> Option<SegmenterSpec> {
        None
    }
}

/// Serializable description of a built-in segmenter.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum SegmenterSpec {
    Fallback,
    Dictionary { words: Vec<String> },
}

impl SegmenterSpec {
    pub fn build(&self) -> Arc<dyn Segmenter> {
        match self {
            SegmenterSpec::Fallback => Arc::new(FallbackSegmenter),
            SegmenterSpec::Dictionary { words } => Arc::new(DictionarySegmenter::new(words.iter().cloned())),
        }
    }
}

fn is_word_char(c: char) -> bool {
    c.is_ascii_alphanumeric()
}

/// Runs of ASCII letters and digits form one word; every other
/// non-whitespace character is a word by itself.
#[derive(Debug, Default, Clone, Copy)]
pub struct FallbackSegmenter;

impl Segmenter for FallbackSegmenter {
    fn name(&self) -> &str {
        "fallback"
    }

    fn spec(&self) -> Option<SegmenterSpec> {
        Some(SegmenterSpec::Fallback)
    }

    fn segment(&self, text: &str) -> Result<Vec<Word>, SegmenterError> {
        let chars: Vec<char> = text.chars().collect();
        let mut out = Vec::new();
        let mut i = 0;
        while i < chars.len() {
            if chars[i].is_whitespace() {
                i += 1;
                continue;
            }
            let start = i;
            if is_word_char(chars[i]) {
                while i < chars.len() && is_word_char(chars[i]) {
                    i += 1;
                }
            } else {
                i += 1;
            }
            out.push(Word { text: chars[start..i].iter().collect(), chars: start..i });
        }
        Ok(out)
    }
}

/// Forward maximum matching against a word list; characters not starting
/// any listed word fall back to [`FallbackSegmenter`] units.
#[derive(Debug, Clone)]
pub struct DictionarySegmenter {
    words: HashSet<String>,
    longest: usize,
}

impl DictionarySegmenter {
    pub fn new<I, S>(words: I) -> DictionarySegmenter
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        let words: HashSet<String> = words.into_iter().map(Into::into).filter(|w| !w.trim().is_empty()).collect();
        let longest = words.iter().map(|w| w.chars().count()).max().unwrap_or(0);
        DictionarySegmenter { words, longest }
    }

    /// One word per line; `#` starts a comment; an optional second
    /// whitespace-separated column (e.g. a frequency) is ignored.
    pub fn load(path: &Path) -> Result<DictionarySegmenter, SegmenterError> {
        let text = fs::read_to_string(path)
            .map_err(|e| SegmenterError::WordList { path: path.display().to_string(), message: e.to_string() })?;
        Ok(DictionarySegmenter::new(
            text.lines()
                .map(|l| l.split('#').next().unwrap_or("").trim())
                .filter_map(|l| l.split_whitespace().next())
                .map(str::to_string),
        ))
    }

    pub fn len(&self) -> usize {
        self.words.len()
    }

    pub fn is_empty(&self) -> bool {
        self.words.is_empty()
    }
}

impl Segmenter for DictionarySegmenter {
    fn name(&self) -> &str {
        "dictionary"
    }

    fn spec(&self) -> Option<SegmenterSpec> {
        let mut words: Vec<String> = self.words.iter().cloned().collect();
        words.sort();
        Some(SegmenterSpec::Dictionary { words })
    }

    fn segment(&self, text: &str) -> Result<Vec<Word>, SegmenterError> {
        let chars: Vec<char> = text.chars().collect();
        let mut out = Vec::new();
        let mut i = 0;
        while i < chars.len() {
            if chars[i].is_whitespace() {
                i += 1;
                continue;
            }
            let max = self.longest.min(chars.len() - i);
            let hit = (2..=max).rev().find(|&n| {
                let cand = &chars[i..i + n];
                !cand.iter().any(|c| c.is_whitespace()) && self.words.contains(&cand.iter().collect::<String>())
            });
            let end = match hit {
                Some(n) => i + n,
                None if is_word_char(chars[i]) => {
                    let mut j = i;
                    while j < chars.len() && is_word_char(chars[j]) {
                        j += 1;
                    }
                    j
                }
                None => i + 1,
            };
            out.push(Word { text: chars[i..end].iter().collect(), chars: i..end });
            i = end;
        }
        Ok(out)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn texts(ws: &[Word]) -> Vec<&str> {
        ws.iter().map(|w| w.text.as_str()).collect()
    }

    #[test]
    fn fallback_units() {
        let ws = FallbackSegmenter.segment("打 Pfizer2針!").unwrap();
        assert_eq!(texts(&ws), ["打", "Pfizer2", "針", "!"]);
        assert_eq!(ws[1].chars, 2..9);
    }

    #[test]
    fn max_match_prefers_longest() {
        let s = DictionarySegmenter::new(["疫苗", "接種", "接種疫苗", "居心叵測"]);
        let ws = s.segment("佢哋居心叵測 去接種疫苗").unwrap();
        assert_eq!(texts(&ws), ["佢", "哋", "居心叵測", "去", "接種疫苗"]);
    }

    #[test]
    fn spans_are_disjoint_and_ordered() {
        let s = DictionarySegmenter::new(["ab", "bc"]);
        let ws = s.segment("abc abc").unwrap();
        assert!(ws.windows(2).all(|w| w[0].chars.end <= w[1].chars.start));
    }
}
