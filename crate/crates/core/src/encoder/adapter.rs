use std::ops::Range;

use ndarray::{s, Array2, ArrayView2};
use serde::{Deserialize, Serialize};

use super::{EncoderError, EncoderHandle, Summarizer, Token, TokenId};
use crate::thread::SubBranch;

/// Length budget and output width of the adapter.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct EncoderSpec {
    pub max_input_tokens: usize,
    pub separator_token: String,
    pub mask_token: String,
}

impl Default for EncoderSpec {
    fn default() -> Self {
        EncoderSpec { max_input_tokens: 512, separator_token: "[SEP]".to_string(), mask_token: "[MASK]".to_string() }
    }
}

/// One instance inside a tokenized branch.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Segment {
    pub instance_id: String,
    /// Text actually fed to the encoder (the abstract, for a summarised post).
    pub text: String,
    pub tokens: Vec<Token>,
    /// Half-open token range in the concatenated sequence.
    pub span: Range<usize>,
    pub abstracted: bool,
}

impl Segment {
    pub fn len(&self) -> usize {
        self.span.len()
    }

    pub fn is_empty(&self) -> bool {
        self.span.is_empty()
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct TruncationReport {
    pub original_length: usize,
    pub final_length: usize,
    pub post_abstracted: bool,
    /// Ancestors removed to fit the budget, oldest first.
    pub dropped: Vec<String>,
    /// The abstract still did not fit and its tail was cut.
    pub post_cut: bool,
    /// The target alone exceeded the budget and was tail-truncated.
    pub target_truncated: bool,
}

impl TruncationReport {
    pub fn changed(&self) -> bool {
        self.post_abstracted || !self.dropped.is_empty() || self.post_cut || self.target_truncated
    }
}

/// `x_1 [SEP] x_2 ... [SEP] x_i` as token ids with per-instance spans.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TokenizedBranch {
    pub ids: Vec<TokenId>,
    pub segments: Vec<Segment>,
    pub sep_id: TokenId,
    pub report: TruncationReport,
}

impl TokenizedBranch {
    pub fn assemble(parts: Vec<(String, String, Vec<Token>, bool)>, sep_id: TokenId) -> TokenizedBranch {
        let mut ids = Vec::new();
        let mut segments = Vec::with_capacity(parts.len());
        for (i, (instance_id, text, tokens, abstracted)) in parts.into_iter().enumerate() {
            if i > 0 {
                ids.push(sep_id);
            }
            let start = ids.len();
            ids.extend(tokens.iter().map(|t| t.id));
            segments.push(Segment { instance_id, text, tokens, span: start..ids.len(), abstracted });
        }
        let len = ids.len();
        TokenizedBranch {
            ids,
            segments,
            sep_id,
            report: TruncationReport { original_length: len, final_length: len, ..Default::default() },
        }
    }

    fn parts(&self) -> Vec<(String, String, Vec<Token>, bool)> {
        self.segments.iter().map(|s| (s.instance_id.clone(), s.text.clone(), s.tokens.clone(), s.abstracted)).collect()
    }

    /// Total length `l` including separators.
    pub fn total_length(&self) -> usize {
        self.ids.len()
    }

    pub fn spans(&self) -> Vec<Range<usize>> {
        self.segments.iter().map(|s| s.span.clone()).collect()
    }

    pub fn target(&self) -> &Segment {
        self.segments.last().expect("branch has a target")
    }

    pub fn segment_of(&self, instance_id: &str) -> Option<usize> {
        self.segments.iter().position(|s| s.instance_id == instance_id)
    }

    /// Copy with tokens `[p, q)` of one segment replaced by `mask_id`;
    /// the length is unchanged.
    pub fn masked(&self, segment: usize, tokens: Range<usize>, mask_id: TokenId) -> TokenizedBranch {
        let mut out = self.clone();
        let span = &self.segments[segment].span;
        let lo = (span.start + tokens.start).min(span.end);
        let hi = (span.start + tokens.end).min(span.end);
        out.ids[lo..hi].iter_mut().for_each(|id| *id = mask_id);
        out
    }
}

/// Tokenize every instance and join them with separators.
pub fn concat_subbranch(b: &SubBranch, enc: &EncoderHandle) -> Result<TokenizedBranch, EncoderError> {
    if b.is_empty() {
        return Err(EncoderError::EmptyBranch);
    }
    let mut parts = Vec::with_capacity(b.len());
    for inst in b.instances() {
        let tokens = enc.tokenize(&inst.text)?;
        parts.push((inst.instance_id.clone(), inst.text.clone(), tokens, false));
    }
    Ok(TokenizedBranch::assemble(parts, enc.get().sep_id()))
}

/// Fit a tokenized branch into `max_input_tokens`.
///
/// Within budget the branch is returned as is. Otherwise the post is
/// replaced by its abstract; if that is not enough the oldest comments
/// between post and target are dropped whole; then the abstract is
/// shortened further and finally cut. A target that alone exceeds the
/// budget is tail-truncated and flagged in the report.
pub fn budget(
    tb: TokenizedBranch,
    summarizer: &dyn Summarizer,
    spec: &EncoderSpec,
    enc: &EncoderHandle,
) -> Result<TokenizedBranch, EncoderError> {
    let limit = spec.max_input_tokens.max(1);
    let original = tb.total_length();
    if original <= limit {
        return Ok(tb);
    }
    let sep = tb.sep_id;
    let mut parts = tb.parts();
    let mut report = TruncationReport { original_length: original, ..Default::default() };
    let length = |parts: &[(String, String, Vec<Token>, bool)]| -> usize {
        parts.iter().map(|p| p.2.len()).sum::<usize>() + parts.len() - 1
    };

    if parts.len() >= 2 {
        let post_len = parts[0].2.len();
        let others = length(&parts) - post_len;
        let avail = limit.saturating_sub(others);
        let text = summarizer.summarize(&parts[0].1, avail.saturating_sub(1));
        parts[0].2 = enc.tokenize(&text)?;
        parts[0].1 = text;
        parts[0].3 = true;
        report.post_abstracted = true;

        while length(&parts) > limit && parts.len() > 2 {
            let dropped = parts.remove(1);
            report.dropped.push(dropped.0);
        }

        if length(&parts) > limit {
            let target_len = parts[1].2.len();
            let avail = limit.saturating_sub(target_len + 1);
            if avail == 0 {
                let dropped = parts.remove(0);
                report.dropped.push(dropped.0);
            } else {
                let text = summarizer.summarize(&parts[0].1, avail.saturating_sub(1));
                parts[0].2 = enc.tokenize(&text)?;
                parts[0].1 = text;
                if parts[0].2.len() > avail {
                    parts[0].2.truncate(avail);
                    report.post_cut = true;
                }
            }
        }
    }

    if length(&parts) > limit {
        let last = parts.len() - 1;
        parts[last].2.truncate(limit);
        report.target_truncated = true;
        log::warn!("target `{}` alone exceeds {limit} tokens; keeping its first {limit}", parts[last].0);
    }

    let mut out = TokenizedBranch::assemble(parts, sep);
    report.final_length = out.total_length();
    out.report = report;
    Ok(out)
}

/// The target's token vectors, zero-padded or cut (keeping the prefix) to `d` rows.
#[derive(Debug, Clone, PartialEq)]
pub struct TargetRepresentation {
    pub matrix: Array2<f64>,
    pub valid_rows: usize,
}

impl TargetRepresentation {
    pub fn d(&self) -> usize {
        self.matrix.nrows()
    }

    pub fn hidden_size(&self) -> usize {
        self.matrix.ncols()
    }

    /// Fit any `n × h` block to `d` rows.
    pub fn from_rows(rows: ArrayView2<'_, f64>, d: usize) -> TargetRepresentation {
        let valid = rows.nrows().min(d);
        let mut matrix = Array2::zeros((d, rows.ncols()));
        matrix.slice_mut(s![..valid, ..]).assign(&rows.slice(s![..valid, ..]));
        TargetRepresentation { matrix, valid_rows: valid }
    }
}

/// Run the encoder over the whole branch and slice out the target rows.
pub fn encode_target(
    tb: &TokenizedBranch,
    enc: &EncoderHandle,
    d: usize,
) -> Result<TargetRepresentation, EncoderError> {
    let hidden = enc.encode(&tb.ids)?;
    let h = enc.get().hidden_size();
    if hidden.nrows() != tb.ids.len() || hidden.ncols() != h {
        return Err(EncoderError::ShapeMismatch(format!(
            "encoder returned {}x{}, expected {}x{}",
            hidden.nrows(),
            hidden.ncols(),
            tb.ids.len(),
            h
        )));
    }
    let span = tb.target().span.clone();
    Ok(TargetRepresentation::from_rows(hidden.slice(s![span, ..]), d))
}

/// Place `dL/dH_target` (d × h) back at the target's rows of an `l × h` gradient.
pub fn scatter_target_grad(tb: &TokenizedBranch, grad: ArrayView2<'_, f64>, valid_rows: usize) -> Array2<f64> {
    let mut full = Array2::zeros((tb.ids.len(), grad.ncols()));
    let start = tb.target().span.start;
    full.slice_mut(s![start..start + valid_rows, ..]).assign(&grad.slice(s![..valid_rows, ..]));
    full
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::encoder::{Encoder, EncoderDescriptor, HeadTailSummarizer};
    use crate::thread::fixtures::instance;
    use crate::thread::SubBranch;

    /// One token per character; each row of `encode` is `[position, id]`.
    #[derive(Clone)]
    struct RowIndexEncoder;

    impl Encoder for RowIndexEncoder {
        fn name(&self) -> &str {
            "row-index"
        }
        fn hidden_size(&self) -> usize {
            2
        }
        fn tokenize(&self, text: &str) -> Result<Vec<Token>, EncoderError> {
            Ok(text
                .chars()
                .enumerate()
                .filter(|(_, c)| !c.is_whitespace())
                .map(|(i, c)| Token { id: 10 + c as u32 % 1000, start: i, end: i + 1 })
                .collect())
        }
        fn encode(&self, ids: &[TokenId]) -> Result<Array2<f64>, EncoderError> {
            Ok(Array2::from_shape_fn((ids.len(), 2), |(i, j)| if j == 0 { i as f64 } else { ids[i] as f64 }))
        }
        fn descriptor(&self) -> EncoderDescriptor {
            EncoderDescriptor { name: "row-index".into(), config: serde_json::Value::Null }
        }
        fn clone_box(&self) -> Box<dyn Encoder> {
            Box::new(self.clone())
        }
    }

    fn handle() -> EncoderHandle {
        EncoderHandle::new(Box::new(RowIndexEncoder))
    }

    fn branch(texts: &[&str]) -> SubBranch {
        let mut recs = Vec::new();
        for (i, t) in texts.iter().enumerate() {
            let parent = if i == 0 { None } else { Some(format!("n{}", i - 1)) };
            recs.push(instance(&format!("n{i}"), parent.as_deref(), t, i as u32));
        }
        SubBranch::new(recs).unwrap()
    }

    #[test]
    fn length_identity_small_cases() {
        let tb = concat_subbranch(&branch(&["abc", "defg"]), &handle()).unwrap();
        assert_eq!(tb.total_length(), 8);
        let tb = concat_subbranch(&branch(&["abcde"]), &handle()).unwrap();
        assert_eq!(tb.total_length(), 5);
        assert!(!tb.ids.contains(&tb.sep_id));
    }

    #[test]
    fn within_budget_is_identity() {
        let text = "字".repeat(510);
        let tb = concat_subbranch(&branch(&[&text, "a"]), &handle()).unwrap();
        assert_eq!(tb.total_length(), 512);
        let out = budget(tb.clone(), &HeadTailSummarizer, &EncoderSpec::default(), &handle()).unwrap();
        assert_eq!(out, tb);
    }

    #[test]
    fn long_post_is_abstracted() {
        let post = "字".repeat(600);
        let tb = concat_subbranch(&branch(&[&post, "0123456789"]), &handle()).unwrap();
        let out = budget(tb, &HeadTailSummarizer, &EncoderSpec::default(), &handle()).unwrap();
        assert!(out.report.post_abstracted);
        assert!(out.segments[0].abstracted);
        assert!(out.total_length() <= 512);
        assert_eq!(out.target().text, "0123456789");
        assert_eq!(out.target().len(), 10);
    }

    #[test]
    fn abstract_still_too_long_drops_oldest_ancestors() {
        let post = "字".repeat(600);
        let mid = "中".repeat(150);
        let texts = [post.as_str(), &mid, &mid, &mid, &mid, &mid, &mid, "target"];
        let tb = concat_subbranch(&branch(&texts), &handle()).unwrap();
        let out = budget(tb, &HeadTailSummarizer, &EncoderSpec::default(), &handle()).unwrap();
        assert!(out.total_length() <= 512);
        assert_eq!(out.target().text, "target");
        assert_eq!(out.target().len(), 6);
        assert_eq!(out.segments[0].instance_id, "n0");
        // oldest comments go first, the nearest survive
        assert_eq!(out.report.dropped[0], "n1");
        assert_eq!(out.segments.last().unwrap().instance_id, "n7");
        assert!(out.segments.windows(2).all(|w| w[0].instance_id < w[1].instance_id));
        // a second pass changes nothing
        let again = budget(out.clone(), &HeadTailSummarizer, &EncoderSpec::default(), &handle()).unwrap();
        assert_eq!(again.ids, out.ids);
    }

    #[test]
    fn oversized_target_is_truncated_and_flagged() {
        let target = "字".repeat(700);
        let tb = concat_subbranch(&branch(&["post", &target]), &handle()).unwrap();
        let out = budget(tb, &HeadTailSummarizer, &EncoderSpec::default(), &handle()).unwrap();
        assert!(out.report.target_truncated);
        assert_eq!(out.total_length(), 512);
        assert_eq!(out.segments.len(), 1);
    }

    #[test]
    fn slicing_returns_target_positions() {
        let tb = concat_subbranch(&branch(&["ab", "cde", "fghi"]), &handle()).unwrap();
        let rep = encode_target(&tb, &handle(), 6).unwrap();
        assert_eq!(rep.valid_rows, 4);
        let rows: Vec<f64> = rep.matrix.column(0).iter().take(4).copied().collect();
        assert_eq!(rows, [7.0, 8.0, 9.0, 10.0]);
        assert!(rep.matrix.slice(s![4.., ..]).iter().all(|x| *x == 0.0));
    }

    #[test]
    fn padding_and_cutting_to_d() {
        let long = "x".repeat(70);
        let tb = concat_subbranch(&branch(&[&long]), &handle()).unwrap();
        let rep = encode_target(&tb, &handle(), 64).unwrap();
        assert_eq!((rep.d(), rep.valid_rows), (64, 64));
        assert_eq!(rep.matrix[[63, 0]], 63.0, "prefix kept");

        let short = "x".repeat(10);
        let tb = concat_subbranch(&branch(&[&short]), &handle()).unwrap();
        let rep = encode_target(&tb, &handle(), 64).unwrap();
        assert_eq!(rep.valid_rows, 10);
        assert_eq!(rep.matrix.slice(s![10.., ..]).iter().filter(|x| **x != 0.0).count(), 0);
    }

    #[test]
    fn shape_mismatch_detected() {
        #[derive(Clone)]
        struct Short;
        impl Encoder for Short {
            fn name(&self) -> &str {
                "short"
            }
            fn hidden_size(&self) -> usize {
                2
            }
            fn tokenize(&self, t: &str) -> Result<Vec<Token>, EncoderError> {
                RowIndexEncoder.tokenize(t)
            }
            fn encode(&self, ids: &[TokenId]) -> Result<Array2<f64>, EncoderError> {
                Ok(Array2::zeros((ids.len().saturating_sub(1), 2)))
            }
            fn descriptor(&self) -> EncoderDescriptor {
                EncoderDescriptor { name: "short".into(), config: serde_json::Value::Null }
            }
            fn clone_box(&self) -> Box<dyn Encoder> {
                Box::new(self.clone())
            }
        }
        let enc = EncoderHandle::new(Box::new(Short));
        let tb = concat_subbranch(&branch(&["abc"]), &enc).unwrap();
        assert!(matches!(encode_target(&tb, &enc, 4), Err(EncoderError::ShapeMismatch(_))));
    }
}
