/// Fraction of `relevant` found in the first `k` entries of `ranked`.
/// `relevant` holds distinct items.
///
/// Returns 0 when `relevant` is empty.
pub fn recall_at_k(ranked: &[usize], relevant: &[usize], k: usize) -> f64 {
    if relevant.is_empty() {
        return 0.0;
    }
    let hits = ranked.iter().take(k).filter(|i| relevant.contains(i)).count();
    hits as f64 / relevant.len() as f64
}

/// Binary-relevance NDCG with `1 / log2(rank + 1)` discounts, ranks from 1.
///
/// Returns 0 when `relevant` is empty.
pub fn ndcg_at_k(ranked: &[usize], relevant: &[usize], k: usize) -> f64 {
    if relevant.is_empty() || k == 0 {
        return 0.0;
    }
    let dcg: f64 = ranked
        .iter()
        .take(k)
        .enumerate()
        .filter(|(_, i)| relevant.contains(i))
        .map(|(r, _)| discount(r + 1))
        .sum();
    let ideal: f64 = (1..=k.min(relevant.len())).map(discount).sum();
    dcg / ideal
}

fn discount(rank: usize) -> f64 {
    1.0 / ((rank + 1) as f64).log2()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn recall_examples() {
        assert_eq!(recall_at_k(&[7, 1, 2], &[7], 30), 1.0);
        let ranked: Vec<usize> = (0..60).collect();
        assert_eq!(recall_at_k(&ranked, &[3, 10, 45, 59], 30), 0.5);
        assert_eq!(recall_at_k(&ranked, &[], 30), 0.0);
    }

    #[test]
    fn ndcg_examples() {
        assert_eq!(ndcg_at_k(&[4, 5, 6], &[4], 10), 1.0);
        assert_eq!(ndcg_at_k(&[1, 2, 4, 5], &[4], 3), 0.5);
        assert_eq!(ndcg_at_k(&[1, 2, 4, 5], &[9], 3), 0.0);
        assert_eq!(ndcg_at_k(&[1, 2, 4, 5], &[4], 2), 0.0);
        assert!((ndcg_at_k(&[2, 1, 3], &[1, 2], 3) - 1.0).abs() < 1e-15);
    }
}
