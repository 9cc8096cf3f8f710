use std::collections::HashSet;

use serde::Serialize;

use super::EvalError;

/// A user's top-K recommendations with the ground-truth relevant set.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RankedList {
    pub user: usize,
    pub items: Vec<usize>,
    pub relevant: HashSet<usize>,
    pub k: usize,
}

impl RankedList {
    pub fn new(user: usize, items: Vec<usize>, relevant: &[usize], k: usize) -> Result<Self, EvalError> {
        if k == 0 {
            return Err(EvalError::InvalidArgument("K must be >= 1".into()));
        }
        let mut seen = HashSet::new();
        if let Some(&dup) = items.iter().find(|&&i| !seen.insert(i)) {
            return Err(EvalError::InvalidArgument(format!("item {} ranked twice", dup)));
        }
        Ok(Self { user, items, relevant: relevant.iter().copied().collect(), k })
    }

    fn top(&self) -> &[usize] {
        &self.items[..self.items.len().min(self.k)]
    }

    pub fn hits(&self) -> usize {
        self.top().iter().filter(|i| self.relevant.contains(i)).count()
    }
}

/// `|top-K ∩ relevant| / K`.
pub fn precision_at_k(rl: &RankedList) -> f64 {
    rl.hits() as f64 / rl.k as f64
}

/// `|top-K ∩ relevant| / |relevant|`; `None` when nothing is relevant.
pub fn recall_at_k(rl: &RankedList) -> Option<f64> {
    if rl.relevant.is_empty() {
        return None;
    }
    Some(rl.hits() as f64 / rl.relevant.len() as f64)
}

/// Binary-gain nDCG against an ideal list holding `min(K, |relevant|)` hits
/// at the head; `None` when nothing is relevant.
pub fn ndcg_at_k(rl: &RankedList) -> Option<f64> {
    if rl.relevant.is_empty() {
        return None;
    }
    let dcg: f64 = rl
        .top()
        .iter()
        .enumerate()
        .filter(|(_, i)| rl.relevant.contains(i))
        .map(|(p, _)| 1.0 / ((p + 2) as f64).log2())
        .sum();
    let ideal: f64 = (0..rl.k.min(rl.relevant.len())).map(|p| 1.0 / ((p + 2) as f64).log2()).sum();
    Some(dcg / ideal)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn list(items: Vec<usize>, relevant: &[usize]) -> RankedList {
        RankedList::new(0, items, relevant, 10).unwrap()
    }

    #[test]
    fn precision_cases() {
        let top: Vec<usize> = (0..10).collect();
        assert_eq!(precision_at_k(&list(top.clone(), &[1, 4, 9])), 0.3);
        assert_eq!(precision_at_k(&list(top.clone(), &[20, 30])), 0.0);
        assert_eq!(precision_at_k(&list(top.clone(), &top)), 1.0);
    }

    #[test]
    fn recall_cases() {
        let top: Vec<usize> = (0..10).collect();
        assert_eq!(recall_at_k(&list(top.clone(), &[2, 3, 50, 60])), Some(0.5));
        assert_eq!(recall_at_k(&list(top.clone(), &[0, 2, 5, 9])), Some(1.0));
        assert_eq!(recall_at_k(&list(top, &[])), None);
    }

    #[test]
    fn ndcg_cases() {
        let top: Vec<usize> = (0..10).collect();
        assert_eq!(ndcg_at_k(&list(top.clone(), &[0, 1, 2])), Some(1.0));
        let v = ndcg_at_k(&list(top.clone(), &[1])).unwrap();
        assert!((v - 1.0 / 3f64.log2()).abs() < 1e-12);
        assert_eq!(ndcg_at_k(&list(top, &[])), None);
    }

    #[test]
    fn duplicates_and_zero_k_rejected() {
        assert!(RankedList::new(0, vec![1, 2, 1], &[1], 10).is_err());
        assert!(RankedList::new(0, vec![1], &[1], 0).is_err());
    }
}
