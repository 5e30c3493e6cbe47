use rand::seq::IndexedRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{train, Result, TrainConfig, TrainError, TrainingData};

/// Discrete ranges sampled by [`random_search`].
#[derive(Clone, Debug, PartialEq)]
pub struct SearchSpace {
    pub dims: Vec<usize>,
    pub alphas: Vec<f64>,
    pub batch_sizes: Vec<usize>,
    pub hops: Vec<usize>,
    pub lambdas: Vec<f64>,
}

impl Default for SearchSpace {
    fn default() -> Self {
        SearchSpace {
            dims: vec![128, 512],
            alphas: vec![0.1, 0.2],
            batch_sizes: vec![1024, 4096],
            hops: vec![1, 2, 3],
            lambdas: vec![0.1, 0.001],
        }
    }
}

impl SearchSpace {
    /// A space holding only the values of `cfg`.
    pub fn point(cfg: &TrainConfig) -> Self {
        SearchSpace {
            dims: vec![cfg.dim],
            alphas: vec![cfg.alpha],
            batch_sizes: vec![cfg.batch_size],
            hops: vec![cfg.hops],
            lambdas: vec![cfg.lambda],
        }
    }

    /// Draws one config, taking every other field from `base`.
    pub fn sample(&self, base: &TrainConfig, rng: &mut ChaCha8Rng) -> Result<TrainConfig> {
        fn pick<T: Copy>(v: &[T], name: &str, rng: &mut ChaCha8Rng) -> Result<T> {
            v.choose(rng)
                .copied()
                .ok_or_else(|| TrainError::Config(format!("search range {name} is empty")))
        }
        let mut cfg = base.clone();
        cfg.dim = pick(&self.dims, "dim", rng)?;
        cfg.alpha = pick(&self.alphas, "alpha", rng)?;
        cfg.batch_size = pick(&self.batch_sizes, "batch_size", rng)?;
        cfg.hops = pick(&self.hops, "hops", rng)?;
        cfg.lambda = pick(&self.lambdas, "lambda", rng)?;
        Ok(cfg)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Trial {
    pub config: TrainConfig,
    /// Best validation recall reached; 0 when there is no validation data.
    pub val_recall: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SearchOutcome {
    pub best: TrainConfig,
    pub best_recall: f64,
    pub trials: Vec<Trial>,
}

/// Trains `trials` configs drawn from `space` and returns the one with the
/// highest validation recall. Ties keep the earlier trial.
pub fn random_search(
    data: &TrainingData,
    base: &TrainConfig,
    space: &SearchSpace,
    trials: usize,
    seed: u64,
) -> Result<SearchOutcome> {
    if trials == 0 {
        return Err(TrainError::Config("trials must be at least 1".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut done: Vec<Trial> = Vec::with_capacity(trials);
    for _ in 0..trials {
        let config = space.sample(base, &mut rng)?;
        let outcome = train(data, &config)?;
        done.push(Trial {
            val_recall: outcome.best_val_recall.unwrap_or(0.0),
            config,
        });
    }
    let mut best = 0;
    for (k, t) in done.iter().enumerate() {
        if t.val_recall > done[best].val_recall {
            best = k;
        }
    }
    Ok(SearchOutcome {
        best: done[best].config.clone(),
        best_recall: done[best].val_recall,
        trials: done,
    })
}
