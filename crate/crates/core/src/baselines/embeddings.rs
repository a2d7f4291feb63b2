use std::collections::HashMap;
use std::fs;
use std::path::Path;

use ndarray::Array2;

use super::BaselineError;

/// Fixed word vectors; unknown words map to the zero vector.
#[derive(Debug, Clone, PartialEq)]
pub struct StaticEmbeddings {
    pub dim: usize,
    pub index: HashMap<String, usize>,
    /// `count × dim`
    pub vectors: Array2<f64>,
}

impl StaticEmbeddings {
    pub fn new(words: Vec<String>, vectors: Array2<f64>) -> Result<StaticEmbeddings, BaselineError> {
        if words.len() != vectors.nrows() {
            return Err(BaselineError::Embeddings(format!("{} words for {} vectors", words.len(), vectors.nrows())));
        }
        let dim = vectors.ncols();
        let index = words.into_iter().enumerate().map(|(i, w)| (w, i)).collect();
        Ok(StaticEmbeddings { dim, index, vectors })
    }

    /// Text format: a header line `count dim`, then `word v1 ... vdim` per line.
    pub fn parse(text: &str) -> Result<StaticEmbeddings, BaselineError> {
        let bad = |line: usize, m: &str| BaselineError::Embeddings(format!("line {line}: {m}"));
        let mut lines = text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty());
        let (_, header) = lines.next().ok_or_else(|| bad(1, "missing header"))?;
        let mut h = header.split_whitespace().map(str::parse::<usize>);
        let (count, dim) = match (h.next(), h.next(), h.next()) {
            (Some(Ok(c)), Some(Ok(d)), None) if d > 0 => (c, d),
            _ => return Err(bad(1, "header must be `count dim`")),
        };
        let mut words = Vec::with_capacity(count);
        let mut data = Vec::with_capacity(count * dim);
        for (i, line) in lines {
            let mut parts = line.split_whitespace();
            let word = parts.next().ok_or_else(|| bad(i + 1, "empty line"))?;
            let vals: Vec<f64> =
                parts.map(str::parse).collect::<Result<_, _>>().map_err(|e| bad(i + 1, &format!("{e}")))?;
            if vals.len() != dim {
                return Err(bad(i + 1, &format!("expected {dim} values, found {}", vals.len())));
            }
            words.push(word.to_string());
            data.extend(vals);
        }
        if words.len() != count {
            return Err(bad(1, &format!("header announces {count} words, file has {}", words.len())));
        }
        let vectors = Array2::from_shape_vec((count, dim), data).expect("shape checked");
        StaticEmbeddings::new(words, vectors)
    }

    pub fn load(path: &Path) -> Result<StaticEmbeddings, BaselineError> {
        let text =
            fs::read_to_string(path).map_err(|e| BaselineError::Embeddings(format!("{}: {e}", path.display())))?;
        StaticEmbeddings::parse(&text)
    }

    pub fn len(&self) -> usize {
        self.index.len()
    }

    pub fn is_empty(&self) -> bool {
        self.index.is_empty()
    }

    pub fn lookup(&self, word: &str) -> Option<ndarray::ArrayView1<'_, f64>> {
        self.index.get(word).map(|&i| self.vectors.row(i))
    }

    /// Rows for `words`, zero for unknown ones.
    pub fn rows<'a>(&self, words: impl IntoIterator<Item = &'a str>) -> Array2<f64> {
        let words: Vec<&str> = words.into_iter().collect();
        let mut out = Array2::zeros((words.len(), self.dim));
        for (r, w) in words.iter().enumerate() {
            if let Some(v) = self.lookup(w) {
                out.row_mut(r).assign(&v);
            }
        }
        out
    }

    /// Words in index order, for serialisation.
    pub fn words(&self) -> Vec<String> {
        let mut w: Vec<(&String, &usize)> = self.index.iter().collect();
        w.sort_by_key(|(_, i)| **i);
        w.into_iter().map(|(s, _)| s.clone()).collect()
    }

    /// Deterministic random vectors for the given words (tests and demos).
    pub fn random(words: &[&str], dim: usize, seed: u64) -> StaticEmbeddings {
        use rand::SeedableRng;
        use rand_distr::{Distribution, Normal};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let n = Normal::new(0.0, 1.0).expect("valid");
        let vectors = Array2::from_shape_fn((words.len(), dim), |_| n.sample(&mut rng));
        StaticEmbeddings::new(words.iter().map(|w| w.to_string()).collect(), vectors).expect("matching lengths")
    }
}
