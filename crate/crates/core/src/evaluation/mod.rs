//! Top-K evaluation against popularity-sampled candidates, the popularity
//! baseline and per-user attention scores.

mod candidates;
mod metrics;
mod report;

pub use candidates::{build_candidates, popularity_baseline, rank_by_score, CandidateSet, UserCandidates, EVAL_NEGATIVES};
pub use metrics::{ndcg_at_k, recall_at_k};
pub use report::{attention_report, AttentionReport, CutoffScores, EvalReport, MetricTable, ScoreSummary};

use std::collections::BTreeMap;
use std::path::PathBuf;

use rayon::prelude::*;
use thiserror::Error;

use crate::dataset::Split;
use crate::training::{infer, Inference, Model, TrainError, TrainingData};

/// Cutoffs reported when none are requested.
pub const DEFAULT_CUTOFFS: [usize; 2] = [30, 50];

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("failed to write {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("cutoffs must be positive")]
    Cutoff,
    #[error(transparent)]
    Model(#[from] TrainError),
}

pub type Result<T> = std::result::Result<T, EvalError>;

/// Ranks each user's candidates by `e_u · e_i`.
pub fn model_rankings(inference: &Inference, candidates: &CandidateSet) -> Vec<Vec<usize>> {
    candidates
        .users
        .par_iter()
        .map(|c| rank_by_score(&c.items(), |i| inference.score(c.user, i)))
        .collect()
}

/// Scores `model` and the popularity baseline on the `which` split.
pub fn evaluate(
    model: &Model,
    data: &TrainingData,
    which: Split,
    seed: u64,
    ks: &[usize],
    metadata: BTreeMap<String, String>,
) -> Result<EvalReport> {
    if ks.contains(&0) {
        return Err(EvalError::Cutoff);
    }
    let candidates = build_candidates(&data.matrix, &data.split, which, seed);
    let inference = infer(data, &model.params, model.dims.hops)?;
    let rankings = model_rankings(&inference, &candidates);
    let popularity = data.split.train_popularity(&data.matrix);
    let pop_rankings = popularity_baseline(&popularity, &candidates);
    let users: Vec<usize> = candidates.users.iter().map(|c| c.user).collect();
    Ok(EvalReport {
        metadata,
        model: MetricTable::score(&candidates, &rankings, ks),
        popularity: MetricTable::score(&candidates, &pop_rankings, ks),
        attention: attention_report(&inference.scores, &users),
        skipped_users: candidates.skipped,
        exhausted_users: candidates.exhausted_count(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::seq::{IndexedRandom, SliceRandom};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    /// Straight from the definitions: position lookup per relevant item.
    fn brute_recall(ranked: &[usize], relevant: &[usize], k: usize) -> f64 {
        if relevant.is_empty() {
            return 0.0;
        }
        let mut hits = 0usize;
        for r in relevant {
            if let Some(p) = ranked.iter().position(|x| x == r) {
                if p < k {
                    hits += 1;
                }
            }
        }
        hits as f64 / relevant.len() as f64
    }

    fn brute_ndcg(ranked: &[usize], relevant: &[usize], k: usize) -> f64 {
        if relevant.is_empty() || k == 0 {
            return 0.0;
        }
        let gains: Vec<f64> = ranked.iter().map(|x| if relevant.contains(x) { 1.0 } else { 0.0 }).collect();
        let dcg = |g: &[f64]| -> f64 {
            g.iter()
                .take(k)
                .enumerate()
                .map(|(p, &x)| (2f64.powf(x) - 1.0) / (p as f64 + 2.0).log2())
                .sum()
        };
        let mut ideal = vec![1.0; relevant.len()];
        ideal.resize(ranked.len().max(relevant.len()), 0.0);
        dcg(&gains) / dcg(&ideal)
    }

    #[test]
    fn metrics_match_brute_force() {
        let mut rng = ChaCha8Rng::seed_from_u64(2024);
        for _ in 0..1000 {
            let n = rng.random_range(1..120);
            let mut ranked: Vec<usize> = (0..n).collect();
            ranked.shuffle(&mut rng);
            let n_rel = rng.random_range(0..=n.min(10));
            let relevant: Vec<usize> = ranked.choose_multiple(&mut rng, n_rel).copied().collect();
            let k = rng.random_range(1..130);
            assert!((recall_at_k(&ranked, &relevant, k) - brute_recall(&ranked, &relevant, k)).abs() < 1e-9);
            assert!((ndcg_at_k(&ranked, &relevant, k) - brute_ndcg(&ranked, &relevant, k)).abs() < 1e-9);
        }
    }

    #[test]
    fn rankings_follow_dot_products() {
        let inference = Inference {
            users: crate::numerics::Tensor::matrix(1, 2, vec![1.0, 0.0]).unwrap(),
            items: crate::numerics::Tensor::matrix(3, 2, vec![0.1, 5.0, 0.9, 0.0, 0.5, 1.0]).unwrap(),
            scores: crate::numerics::Tensor::zeros(&[1, 4]),
        };
        let set = CandidateSet {
            split: Split::Test,
            users: vec![UserCandidates {
                user: 0,
                positives: vec![2],
                negatives: vec![0, 1],
                exhausted: true,
            }],
            skipped: 0,
        };
        assert_eq!(model_rankings(&inference, &set), vec![vec![1, 2, 0]]);
    }
}
