use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use super::segment::{Segmenter, SegmenterError};

/// Which n-gram orders to extract.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct NgramSpec {
    pub word_ns: Vec<usize>,
    pub char_ns: Vec<usize>,
}

impl Default for NgramSpec {
    fn default() -> Self {
        NgramSpec { word_ns: vec![1, 2, 3], char_ns: vec![2, 3, 4, 5] }
    }
}

/// Feature strings of one text: `w:` word n-grams joined by a space,
/// `c:` character n-grams. Character n-grams never span whitespace.
pub fn ngram_strings(text: &str, spec: &NgramSpec, seg: &dyn Segmenter) -> Result<BTreeSet<String>, SegmenterError> {
    let mut out = BTreeSet::new();
    let words: Vec<String> = seg.segment(text)?.into_iter().map(|w| w.text.to_lowercase()).collect();
    for &n in &spec.word_ns {
        if n == 0 {
            continue;
        }
        for win in words.windows(n) {
            out.insert(format!("w:{}", win.join(" ")));
        }
    }
    let chars: Vec<char> = text.to_lowercase().chars().collect();
    for &n in &spec.char_ns {
        if n == 0 {
            continue;
        }
        for win in chars.windows(n) {
            if !win.iter().any(|c| c.is_whitespace()) {
                out.insert(format!("c:{}", win.iter().collect::<String>()));
            }
        }
    }
    Ok(out)
}

/// Sparse vector: sorted `(index, value)` pairs.
pub type SparseVec = Vec<(usize, f64)>;

/// Feature vocabulary learned from training texts only.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NgramVectorizer {
    pub spec: NgramSpec,
    pub vocabulary: BTreeMap<String, usize>,
}

impl NgramVectorizer {
    pub fn fit<'a, I>(texts: I, spec: NgramSpec, seg: &dyn Segmenter) -> Result<NgramVectorizer, SegmenterError>
    where
        I: IntoIterator<Item = &'a str>,
    {
        let mut all = BTreeSet::new();
        for t in texts {
            all.extend(ngram_strings(t, &spec, seg)?);
        }
        let vocabulary = all.into_iter().enumerate().map(|(i, f)| (f, i)).collect();
        Ok(NgramVectorizer { spec, vocabulary })
    }

    pub fn len(&self) -> usize {
        self.vocabulary.len()
    }

    pub fn is_empty(&self) -> bool {
        self.vocabulary.is_empty()
    }

    /// Binary indicators scaled to unit length; unseen n-grams are ignored.
    pub fn transform(&self, text: &str, seg: &dyn Segmenter) -> Result<SparseVec, SegmenterError> {
        let mut idx: Vec<usize> =
            ngram_strings(text, &self.spec, seg)?.iter().filter_map(|f| self.vocabulary.get(f).copied()).collect();
        idx.sort_unstable();
        if idx.is_empty() {
            return Ok(Vec::new());
        }
        let v = 1.0 / (idx.len() as f64).sqrt();
        Ok(idx.into_iter().map(|i| (i, v)).collect())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::baselines::FallbackSegmenter;

    #[test]
    fn char_bigrams() {
        let spec = NgramSpec { word_ns: vec![], char_ns: vec![2] };
        let got = ngram_strings("abcd", &spec, &FallbackSegmenter).unwrap();
        assert_eq!(got.into_iter().collect::<Vec<_>>(), ["c:ab", "c:bc", "c:cd"]);
    }

    #[test]
    fn empty_text_is_empty() {
        let v = NgramVectorizer::fit(["ab"], NgramSpec::default(), &FallbackSegmenter).unwrap();
        assert!(v.transform("", &FallbackSegmenter).unwrap().is_empty());
    }

    #[test]
    fn two_document_vocabulary_by_hand() {
        // "ab cd": words ab, cd; "ab": word ab.
        // word 1-grams {ab, cd}, 2-grams {ab cd}; char 2-grams {ab, cd}
        let spec = NgramSpec { word_ns: vec![1, 2], char_ns: vec![2] };
        let v = NgramVectorizer::fit(["ab cd", "ab"], spec, &FallbackSegmenter).unwrap();
        let names: Vec<&str> = v.vocabulary.keys().map(String::as_str).collect();
        assert_eq!(names, ["c:ab", "c:cd", "w:ab", "w:ab cd", "w:cd"]);
    }

    #[test]
    fn unseen_features_ignored() {
        let v = NgramVectorizer::fit(["同意"], NgramSpec::default(), &FallbackSegmenter).unwrap();
        let x = v.transform("同意 唔知", &FallbackSegmenter).unwrap();
        assert!(x.iter().all(|(i, _)| *i < v.len()));
        assert_eq!(x.len(), 4); // w:同, w:意, w:同 意, c:同意
    }
}
