/// Produces a shorter stand-in for a long post.
pub trait Summarizer: Send + Sync {
    fn name(&self) -> &str;
    fn summarize(&self, text: &str, budget_chars: usize) -> String;
}

pub const ELLIPSIS: char = '…';

/// Keep the first ⌈0.7·budget⌉ and the last ⌊0.3·budget⌋ characters,
/// joined by an ellipsis. Texts within budget are returned unchanged.
/// Budgets below 2 are raised to 2.
pub fn default_summarizer(text: &str, budget_chars: usize) -> String {
    let budget = budget_chars.max(2);
    let chars: Vec<char> = text.chars().collect();
    if chars.len() <= budget {
        return text.to_string();
    }
    let head = (7 * budget).div_ceil(10);
    let tail = budget - head;
    let mut out: String = chars[..head].iter().collect();
    out.push(ELLIPSIS);
    out.extend(&chars[chars.len() - tail..]);
    out
}

#[derive(Debug, Default, Clone, Copy)]
pub struct HeadTailSummarizer;

impl Summarizer for HeadTailSummarizer {
    fn name(&self) -> &str {
        "head-tail"
    }

    fn summarize(&self, text: &str, budget_chars: usize) -> String {
        default_summarizer(text, budget_chars)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn within_budget_unchanged() {
        let t = "字".repeat(100);
        assert_eq!(default_summarizer(&t, 120), t);
    }

    #[test]
    fn seventy_thirty_split() {
        let t: String = (0..200).map(|i| char::from_u32(0x4E00 + i).unwrap()).collect();
        let s = default_summarizer(&t, 100);
        let (head, tail) = s.split_once(ELLIPSIS).unwrap();
        assert_eq!(head.chars().count(), 70);
        assert_eq!(tail.chars().count(), 30);
        assert!(t.starts_with(head) && t.ends_with(tail));
    }

    proptest! {
        #[test]
        fn idempotent(t in "\\PC{0,300}", budget in 2usize..150) {
            let once = default_summarizer(&t, budget);
            prop_assert_eq!(default_summarizer(&once, budget), once);
        }
    }
}
