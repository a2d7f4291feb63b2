use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

/// A stance toward the fixed target.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Stance {
    Favor,
    Against,
    Neither,
}

/// Fixed class order used for every probability vector and weight row.
pub const CLASS_ORDER: [Stance; 3] = [Stance::Favor, Stance::Against, Stance::Neither];

pub const NUM_CLASSES: usize = 3;

impl Stance {
    pub fn index(self) -> usize {
        match self {
            Stance::Favor => 0,
            Stance::Against => 1,
            Stance::Neither => 2,
        }
    }

    pub fn from_index(i: usize) -> Option<Stance> {
        CLASS_ORDER.get(i).copied()
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Stance::Favor => "favor",
            Stance::Against => "against",
            Stance::Neither => "neither",
        }
    }
}

impl fmt::Display for Stance {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("unknown stance label `{0}` (expected favor, against or neither)")]
pub struct UnknownLabel(pub String);

impl FromStr for Stance {
    type Err = UnknownLabel;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "favor" => Ok(Stance::Favor),
            "against" => Ok(Stance::Against),
            "neither" => Ok(Stance::Neither),
            other => Err(UnknownLabel(other.to_string())),
        }
    }
}

/// Probability triple over `CLASS_ORDER`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StanceDistribution {
    pub probs: [f64; 3],
}

impl StanceDistribution {
    pub fn uniform() -> Self {
        StanceDistribution { probs: [1.0 / 3.0; 3] }
    }

    /// Numerically stable softmax over three logits.
    pub fn from_logits(logits: [f64; 3]) -> Self {
        let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let mut exps = [0.0; 3];
        for (e, l) in exps.iter_mut().zip(logits.iter()) {
            *e = (l - max).exp();
        }
        let sum: f64 = exps.iter().sum();
        for e in exps.iter_mut() {
            *e /= sum;
        }
        StanceDistribution { probs: exps }
    }

    /// Argmax; ties go to the earliest class in `CLASS_ORDER`.
    pub fn label(&self) -> Stance {
        let mut best = 0;
        for i in 1..NUM_CLASSES {
            if self.probs[i] > self.probs[best] {
                best = i;
            }
        }
        CLASS_ORDER[best]
    }

    /// Probability of the argmax label.
    pub fn confidence(&self) -> f64 {
        self.probs[self.label().index()]
    }

    pub fn prob(&self, label: Stance) -> f64 {
        self.probs[label.index()]
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn tie_breaks_to_earliest_class() {
        let d = StanceDistribution { probs: [0.4, 0.4, 0.2] };
        assert_eq!(d.label(), Stance::Favor);
        let d = StanceDistribution { probs: [0.2, 0.4, 0.4] };
        assert_eq!(d.label(), Stance::Against);
    }

    #[test]
    fn softmax_of_zero_logits_is_uniform() {
        let d = StanceDistribution::from_logits([0.0; 3]);
        for p in d.probs {
            assert!((p - 1.0 / 3.0).abs() < 1e-15);
        }
    }

    #[test]
    fn parse_rejects_unknown_label() {
        assert!("agree".parse::<Stance>().is_err());
        assert_eq!("neither".parse::<Stance>().unwrap(), Stance::Neither);
    }
}
