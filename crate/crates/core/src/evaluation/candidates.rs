use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::dataset::{InteractionMatrix, PopularitySampler, Split, SplitAssignment};

/// Sampled negatives per evaluated user.
pub const EVAL_NEGATIVES: usize = 100;

/// Held-out positives and sampled negatives of one user.
#[derive(Clone, Debug, PartialEq)]
pub struct UserCandidates {
    pub user: usize,
    pub positives: Vec<usize>,
    pub negatives: Vec<usize>,
    /// Fewer than [`EVAL_NEGATIVES`] negatives could be drawn.
    pub exhausted: bool,
}

impl UserCandidates {
    /// Positives followed by negatives.
    pub fn items(&self) -> Vec<usize> {
        self.positives.iter().chain(&self.negatives).copied().collect()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct CandidateSet {
    pub split: Split,
    pub users: Vec<UserCandidates>,
    /// Users without positives in the split.
    pub skipped: usize,
}

impl CandidateSet {
    pub fn exhausted_count(&self) -> usize {
        self.users.iter().filter(|u| u.exhausted).count()
    }
}

/// Pairs every user's positives in `which` with popularity-sampled
/// negatives.
///
/// Popularity is the training count; negatives avoid every item the user
/// touched in any split. Each user draws from its own stream of `seed`, so
/// a user's candidates do not depend on the other users.
pub fn build_candidates(m: &InteractionMatrix, split: &SplitAssignment, which: Split, seed: u64) -> CandidateSet {
    let sampler = PopularitySampler::new(&split.train_popularity(m));
    let seen = m.items_by_user();
    let held = split.items_by_user(m, which);
    let mut users = Vec::new();
    let mut skipped = 0;
    for (user, positives) in held.into_iter().enumerate() {
        if positives.is_empty() {
            skipped += 1;
            continue;
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(user as u64);
        let k = EVAL_NEGATIVES.min(sampler.available(&seen[user]));
        let negatives = sampler.sample(&mut rng, &seen[user], k).unwrap_or_default();
        users.push(UserCandidates {
            user,
            positives,
            exhausted: negatives.len() < EVAL_NEGATIVES,
            negatives,
        });
    }
    CandidateSet {
        split: which,
        users,
        skipped,
    }
}

/// Orders `items` by descending score, ties broken by ascending item index.
pub fn rank_by_score(items: &[usize], score: impl Fn(usize) -> f64) -> Vec<usize> {
    let mut scored: Vec<(usize, f64)> = items.iter().map(|&i| (i, score(i))).collect();
    scored.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
    scored.into_iter().map(|(i, _)| i).collect()
}

/// Ranks each user's candidates by training popularity.
pub fn popularity_baseline(popularity: &[usize], candidates: &CandidateSet) -> Vec<Vec<usize>> {
    candidates
        .users
        .iter()
        .map(|c| rank_by_score(&c.items(), |i| popularity[i] as f64))
        .collect()
}
