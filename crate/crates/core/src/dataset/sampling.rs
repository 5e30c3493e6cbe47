use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{DatasetError, InteractionMatrix, Result, Split, SplitAssignment};

pub const NEGATIVES_PER_POSITIVE: usize = 5;

/// A training positive `item` paired with a sampled negative.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Triple {
    pub user: usize,
    pub positive: usize,
    pub negative: usize,
}

/// Draws items with probability proportional to their popularity.
///
/// Items with zero popularity are never drawn.
#[derive(Clone, Debug)]
pub struct PopularitySampler {
    weights: Vec<f64>,
    index: Option<WeightedIndex<f64>>,
}

impl PopularitySampler {
    pub fn new(popularity: &[usize]) -> Self {
        let weights: Vec<f64> = popularity.iter().map(|&c| c as f64).collect();
        let index = WeightedIndex::new(&weights).ok();
        PopularitySampler { weights, index }
    }

    pub fn n_items(&self) -> usize {
        self.weights.len()
    }

    /// Number of drawable items outside `excluded` (a sorted list).
    pub fn available(&self, excluded: &[usize]) -> usize {
        self.weights
            .iter()
            .enumerate()
            .filter(|&(i, &w)| w > 0.0 && excluded.binary_search(&i).is_err())
            .count()
    }

    /// Draws `k` distinct items not in `excluded` (sorted), or `None` when
    /// fewer than `k` candidates exist.
    pub fn sample<R: Rng>(&self, rng: &mut R, excluded: &[usize], k: usize) -> Option<Vec<usize>> {
        if self.available(excluded) < k {
            return None;
        }
        let index = self.index.as_ref()?;
        let mut picked = Vec::with_capacity(k);
        let mut attempts = 0;
        while picked.len() < k && attempts < 64 * k {
            attempts += 1;
            let j = index.sample(rng);
            if excluded.binary_search(&j).is_err() && !picked.contains(&j) {
                picked.push(j);
            }
        }
        if picked.len() < k {
            // Rejection stalls when the excluded items hold most of the mass;
            // finish by sampling from the explicit remainder.
            let mut pool: Vec<(usize, f64)> = self
                .weights
                .iter()
                .enumerate()
                .filter(|&(i, &w)| w > 0.0 && excluded.binary_search(&i).is_err() && !picked.contains(&i))
                .map(|(i, &w)| (i, w))
                .collect();
            while picked.len() < k {
                let total: f64 = pool.iter().map(|p| p.1).sum();
                let mut target = rng.random::<f64>() * total;
                let mut chosen = pool.len() - 1;
                for (pos, &(_, w)) in pool.iter().enumerate() {
                    if target < w {
                        chosen = pos;
                        break;
                    }
                    target -= w;
                }
                picked.push(pool.remove(chosen).0);
            }
        }
        Some(picked)
    }
}

/// Emits five popularity-weighted negatives per training positive.
///
/// Popularity counts come from the training split; negatives exclude every
/// item the user interacted with in any split.
pub fn sample_negatives(m: &InteractionMatrix, split: &SplitAssignment, seed: u64) -> Result<Vec<Triple>> {
    let train = split.pair_indices(Split::Train);
    if train.is_empty() {
        return Err(DatasetError::Empty("training split is empty".into()));
    }
    let sampler = PopularitySampler::new(&split.train_popularity(m));
    let seen = m.items_by_user();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut triples = Vec::with_capacity(train.len() * NEGATIVES_PER_POSITIVE);
    for k in train {
        let p = m.pairs()[k];
        let negatives = sampler
            .sample(&mut rng, &seen[p.user], NEGATIVES_PER_POSITIVE)
            .ok_or_else(|| DatasetError::NegativesExhausted {
                user: m.users()[p.user].clone(),
                needed: NEGATIVES_PER_POSITIVE,
            })?;
        triples.extend(negatives.into_iter().map(|j| Triple {
            user: p.user,
            positive: p.item,
            negative: j,
        }));
    }
    Ok(triples)
}
