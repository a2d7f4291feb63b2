use crate::stance::{Stance, NUM_CLASSES};

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum MetricError {
    #[error("{golds} gold labels but {preds} predictions")]
    LengthMismatch { golds: usize, preds: usize },
    #[error("no labels to score")]
    Empty,
}

/// Counts indexed `[gold][predicted]` in class order.
pub type Confusion = [[usize; NUM_CLASSES]; NUM_CLASSES];

pub fn confusion(golds: &[Stance], preds: &[Stance]) -> Result<Confusion, MetricError> {
    if golds.len() != preds.len() {
        return Err(MetricError::LengthMismatch { golds: golds.len(), preds: preds.len() });
    }
    let mut m = [[0; NUM_CLASSES]; NUM_CLASSES];
    for (g, p) in golds.iter().zip(preds) {
        m[g.index()][p.index()] += 1;
    }
    Ok(m)
}

/// F1 of each class from a confusion matrix; 0 when a class has no true
/// positives (including when it never occurs at all).
pub fn per_class_f1(m: &Confusion) -> [f64; NUM_CLASSES] {
    let mut out = [0.0; NUM_CLASSES];
    for (c, f1) in out.iter_mut().enumerate() {
        let tp = m[c][c] as f64;
        let gold: usize = m[c].iter().sum();
        let pred: usize = m.iter().map(|row| row[c]).sum();
        let denom = (gold + pred) as f64;
        if tp > 0.0 {
            *f1 = 2.0 * tp / denom;
        }
    }
    out
}

/// Unweighted mean of per-class F1 over the three classes.
pub fn macro_f1(golds: &[Stance], preds: &[Stance]) -> Result<f64, MetricError> {
    let m = confusion(golds, preds)?;
    if golds.is_empty() {
        return Err(MetricError::Empty);
    }
    Ok(per_class_f1(&m).iter().sum::<f64>() / NUM_CLASSES as f64)
}
