//! Occlusion attribution: mask one ancestor word at a time and measure how
//! much the predicted label's probability drops.

use std::fmt::Write as _;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::baselines::{Segmenter, SegmenterError};
use crate::encoder::{Token, TokenId, TokenizedBranch};
use crate::model::{ModelError, StanceModel};
use crate::stance::{Stance, StanceDistribution};
use crate::thread::{Instance, SubBranch};

/// A span is a keyword when it removes at least this fraction of the
/// unmasked confidence.
pub const KEYWORD_FRACTION: f64 = 0.2;

#[derive(Debug, thiserror::Error)]
pub enum AttributionError {
    #[error("span out of range: {0}")]
    SpanOutOfRange(String),
    #[error(transparent)]
    Segmenter(#[from] SegmenterError),
    #[error(transparent)]
    Model(#[from] ModelError),
}

/// Tokens `p..=q` (1-based) of one instance.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Span {
    pub instance_id: String,
    pub p: usize,
    pub q: usize,
    pub surface: String,
    /// The word did not start and end on token boundaries; the span was
    /// widened to the covering tokens.
    #[serde(default, skip_serializing_if = "std::ops::Not::not")]
    pub misaligned: bool,
}

impl Span {
    pub fn token_count(&self) -> usize {
        self.q + 1 - self.p
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ContributionRecord {
    pub span: Span,
    pub contribution: f64,
    pub is_keyword: bool,
    pub baseline_confidence: f64,
    pub predicted_label: Stance,
}

impl ContributionRecord {
    fn new(span: Span, contribution: f64, baseline_confidence: f64, predicted_label: Stance) -> ContributionRecord {
        ContributionRecord {
            span,
            contribution,
            is_keyword: is_keyword(contribution, baseline_confidence),
            baseline_confidence,
            predicted_label,
        }
    }
}

pub fn is_keyword(contribution: f64, baseline_confidence: f64) -> bool {
    contribution >= KEYWORD_FRACTION * baseline_confidence
}

/// What occlusion needs from a model: the token sequence it would see, a
/// prediction on a (possibly masked) copy, and its tokenizer.
pub trait OcclusionTarget: Send + Sync {
    fn prepare(&self, b: &SubBranch) -> Result<TokenizedBranch, ModelError>;
    fn predict_tokenized(&self, tb: &TokenizedBranch) -> Result<StanceDistribution, ModelError>;
    fn tokenize(&self, text: &str) -> Result<Vec<Token>, ModelError>;
    fn mask_id(&self) -> TokenId;
}

impl OcclusionTarget for StanceModel {
    fn prepare(&self, b: &SubBranch) -> Result<TokenizedBranch, ModelError> {
        StanceModel::prepare(self, b)
    }

    fn predict_tokenized(&self, tb: &TokenizedBranch) -> Result<StanceDistribution, ModelError> {
        StanceModel::predict_tokenized(self, tb)
    }

    fn tokenize(&self, text: &str) -> Result<Vec<Token>, ModelError> {
        Ok(self.encoder().tokenize(text)?)
    }

    fn mask_id(&self) -> TokenId {
        StanceModel::mask_id(self)
    }
}

/// Map each segmenter word of `text` onto the tokens covering it.
///
/// Words without any token (e.g. characters the tokenizer drops) are
/// skipped. A word sharing a token with the previous word is merged into
/// it so spans stay disjoint.
pub fn segment_words(
    instance_id: &str,
    text: &str,
    tokens: &[Token],
    segmenter: &dyn Segmenter,
) -> Result<Vec<Span>, AttributionError> {
    let mut out: Vec<Span> = Vec::new();
    for w in segmenter.segment(text)? {
        let (ws, we) = (w.chars.start, w.chars.end);
        let covering: Vec<usize> = (0..tokens.len()).filter(|&t| tokens[t].start < we && tokens[t].end > ws).collect();
        let (Some(&first), Some(&last)) = (covering.first(), covering.last()) else {
            log::debug!("word {:?} of {instance_id} has no token", w.text);
            continue;
        };
        let misaligned = tokens[first].start != ws || tokens[last].end != we;
        let (p, q) = (first + 1, last + 1);
        match out.last_mut() {
            Some(prev) if prev.q >= p => {
                prev.q = prev.q.max(q);
                prev.surface.push_str(&w.text);
                prev.misaligned = true;
            }
            _ => out.push(Span { instance_id: instance_id.to_string(), p, q, surface: w.text, misaligned }),
        }
    }
    Ok(out)
}

/// Prediction on the unmasked branch: label and its probability.
#[derive(Debug, Clone)]
struct Baseline {
    tb: TokenizedBranch,
    label: Stance,
    confidence: f64,
}

fn baseline(b: &SubBranch, model: &dyn OcclusionTarget) -> Result<Baseline, ModelError> {
    let tb = model.prepare(b)?;
    let p = model.predict_tokenized(&tb)?;
    Ok(Baseline { label: p.label(), confidence: p.prob(p.label()), tb })
}

fn ancestor<'a>(b: &'a SubBranch, id: &str) -> Option<&'a Instance> {
    b.ancestors().iter().find(|a| a.instance_id == id)
}

/// Text and tokens of an ancestor as the model sees it; a hidden or dropped
/// ancestor falls back to its raw text.
fn visible_tokens(
    inst: &Instance,
    tb: &TokenizedBranch,
    model: &dyn OcclusionTarget,
) -> Result<(String, Vec<Token>), ModelError> {
    match tb.segment_of(&inst.instance_id) {
        Some(s) => Ok((tb.segments[s].text.clone(), tb.segments[s].tokens.clone())),
        None => Ok((inst.text.clone(), model.tokenize(&inst.text)?)),
    }
}

fn contribution_with(
    base: &Baseline,
    span: &Span,
    model: &dyn OcclusionTarget,
) -> Result<ContributionRecord, AttributionError> {
    let masked_conf = match base.tb.segment_of(&span.instance_id) {
        // an ancestor the model never sees cannot change its output
        None => base.confidence,
        Some(s) => {
            let masked = base.tb.masked(s, span.p - 1..span.q, model.mask_id());
            model.predict_tokenized(&masked)?.prob(base.label)
        }
    };
    Ok(ContributionRecord::new(span.clone(), base.confidence - masked_conf, base.confidence, base.label))
}

fn check_span(b: &SubBranch, span: &Span, n_tokens: usize) -> Result<(), AttributionError> {
    if span.p < 1 || span.q < span.p || span.q > n_tokens {
        return Err(AttributionError::SpanOutOfRange(format!(
            "{}..={} in {} with {n_tokens} tokens",
            span.p, span.q, span.instance_id
        )));
    }
    debug_assert!(ancestor(b, &span.instance_id).is_some());
    Ok(())
}

/// Contribution of one ancestor span to the prediction on `b`.
pub fn contribution(
    b: &SubBranch,
    span: &Span,
    model: &dyn OcclusionTarget,
) -> Result<ContributionRecord, AttributionError> {
    let inst = ancestor(b, &span.instance_id).ok_or_else(|| {
        AttributionError::SpanOutOfRange(format!("{} is not an ancestor of the target", span.instance_id))
    })?;
    let base = baseline(b, model)?;
    let (_, tokens) = visible_tokens(inst, &base.tb, model)?;
    check_span(b, span, tokens.len())?;
    contribution_with(&base, span, model)
}

/// Every ancestor word's contribution, largest first.
pub fn keywords(
    b: &SubBranch,
    model: &dyn OcclusionTarget,
    segmenter: &dyn Segmenter,
) -> Result<Vec<ContributionRecord>, AttributionError> {
    Ok(report(b, model, segmenter)?.records)
}

/// Attribution output for one target.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttributionReport {
    pub target_id: String,
    pub predicted_label: Stance,
    pub confidence: f64,
    pub records: Vec<ContributionRecord>,
}

pub fn report(
    b: &SubBranch,
    model: &dyn OcclusionTarget,
    segmenter: &dyn Segmenter,
) -> Result<AttributionReport, AttributionError> {
    let base = baseline(b, model)?;
    let mut spans = Vec::new();
    for inst in b.ancestors() {
        let (text, tokens) = visible_tokens(inst, &base.tb, model)?;
        spans.extend(segment_words(&inst.instance_id, &text, &tokens, segmenter)?);
    }
    let mut records: Vec<ContributionRecord> =
        spans.par_iter().map(|s| contribution_with(&base, s, model)).collect::<Result<_, _>>()?;
    // stable: ties keep branch order
    records.sort_by(|a, b| b.contribution.total_cmp(&a.contribution));
    Ok(AttributionReport {
        target_id: b.target().instance_id.clone(),
        predicted_label: base.label,
        confidence: base.confidence,
        records,
    })
}

impl AttributionReport {
    /// Plain-text table: word, translation (left blank), instance,
    /// contribution in percent; keywords are starred.
    pub fn render_table(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(
            s,
            "target {} predicted {} ({:.2}%)",
            self.target_id,
            self.predicted_label,
            100.0 * self.confidence
        );
        let _ = writeln!(s, "{:<16}\t{:<12}\t{:<12}\t{:>10}", "word", "translation", "instance", "c");
        for r in &self.records {
            let star = if r.is_keyword { "*" } else { "" };
            let _ = writeln!(
                s,
                "{:<16}\t{:<12}\t{:<12}\t{:>9.2}%{star}",
                r.span.surface,
                "",
                r.span.instance_id,
                100.0 * r.contribution
            );
        }
        s
    }
}
