use serde::{Deserialize, Serialize};

use crate::dense::TrainingExample;
use crate::error::{Error, Result};
use crate::eval::RankedList;

/// Which ranks of a list become positives and hard negatives.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct ExtractionRule {
    /// Window size: only the first `k` entries are considered.
    pub k: usize,
    pub k_pos: usize,
    pub k_neg: usize,
}

impl Default for ExtractionRule {
    fn default() -> Self {
        ExtractionRule {
            k: 50,
            k_pos: 10,
            k_neg: 5,
        }
    }
}

impl ExtractionRule {
    pub fn validate(&self) -> Result<()> {
        if self.k == 0 || self.k_pos == 0 || self.k_neg == 0 || self.k_pos + self.k_neg > self.k {
            return Err(Error::InvalidArgument(format!(
                "extraction rule needs positive k, k_pos, k_neg with k_pos + k_neg ≤ k, got {self:?}"
            )));
        }
        Ok(())
    }
}

/// Positives are ranks 1..=k_pos; negatives are the bottom k_neg ranks of the
/// k-window (k−k_neg+1..=k). A list shorter than the window gives its own
/// bottom entries below the positive block as negatives.
pub fn extract_labels(ranked: &RankedList, rule: &ExtractionRule) -> TrainingExample {
    let window = &ranked.entries[..ranked.len().min(rule.k)];
    let n_pos = rule.k_pos.min(window.len());
    let n_neg = rule.k_neg.min(window.len() - n_pos);
    TrainingExample {
        query_id: ranked.query_id.clone(),
        positives: window[..n_pos].iter().map(|e| e.passage_id.clone()).collect(),
        negatives: window[window.len() - n_neg..].iter().map(|e| e.passage_id.clone()).collect(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn list(n: usize) -> RankedList {
        RankedList::from_pairs("q", (0..n).map(|i| (format!("r{}", i + 1), -(i as f64))))
    }

    #[test]
    fn default_window_of_fifty() {
        let ex = extract_labels(&list(50), &ExtractionRule::default());
        let pos: Vec<String> = (1..=10).map(|r| format!("r{r}")).collect();
        let neg: Vec<String> = (46..=50).map(|r| format!("r{r}")).collect();
        assert_eq!(ex.positives, pos);
        assert_eq!(ex.negatives, neg);
    }

    #[test]
    fn short_lists() {
        let ex = extract_labels(&list(10), &ExtractionRule::default());
        assert_eq!(ex.positives.len(), 10);
        assert!(ex.negatives.is_empty());
        let ex = extract_labels(&list(12), &ExtractionRule::default());
        assert_eq!(ex.negatives, ["r11", "r12"]);
        let ex = extract_labels(&list(100), &ExtractionRule::default());
        assert_eq!(ex.negatives.first().map(String::as_str), Some("r46"));
        assert!(extract_labels(&list(0), &ExtractionRule::default()).positives.is_empty());
    }

    #[test]
    fn rule_validation() {
        assert!(ExtractionRule::default().validate().is_ok());
        assert!(ExtractionRule { k: 10, k_pos: 8, k_neg: 5 }.validate().is_err());
    }
}
