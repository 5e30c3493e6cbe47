use std::fmt;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{DatasetError, InteractionMatrix, Result};

/// Share of each user's pairs held out for validation and test.
pub const HELD_OUT_FRACTION: f64 = 0.4;

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Split {
    Train,
    Validation,
    Test,
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Split::Train => "train",
            Split::Validation => "validation",
            Split::Test => "test",
        })
    }
}

impl FromStr for Split {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        match s {
            "train" => Ok(Split::Train),
            "validation" => Ok(Split::Validation),
            "test" => Ok(Split::Test),
            other => Err(format!("unknown split tag {other:?}")),
        }
    }
}

/// One tag per entry of [`InteractionMatrix::pairs`].
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SplitAssignment {
    tags: Vec<Split>,
}

/// Size of the held-out pool for a user with `n` pairs: `round(0.4 n)`.
pub(crate) fn held_out_count(n: usize) -> usize {
    // 0.4 n never lands on .5, so integer rounding is exact.
    (4 * n + 5) / 10
}

impl SplitAssignment {
    pub fn new(m: &InteractionMatrix, tags: Vec<Split>) -> Result<Self> {
        if tags.len() != m.pairs().len() {
            return Err(DatasetError::Empty(format!(
                "split has {} tags for {} pairs",
                tags.len(),
                m.pairs().len()
            )));
        }
        Ok(SplitAssignment { tags })
    }

    pub fn tags(&self) -> &[Split] {
        &self.tags
    }

    pub fn count(&self, which: Split) -> usize {
        self.tags.iter().filter(|&&t| t == which).count()
    }

    /// Indices into `m.pairs()` carrying the given tag.
    pub fn pair_indices(&self, which: Split) -> Vec<usize> {
        (0..self.tags.len()).filter(|&k| self.tags[k] == which).collect()
    }

    /// Per-user item lists restricted to one split.
    pub fn items_by_user(&self, m: &InteractionMatrix, which: Split) -> Vec<Vec<usize>> {
        let mut out = vec![Vec::new(); m.n_users()];
        for (p, &t) in m.pairs().iter().zip(&self.tags) {
            if t == which {
                out[p.user].push(p.item);
            }
        }
        out
    }

    /// Number of training pairs per item.
    pub fn train_popularity(&self, m: &InteractionMatrix) -> Vec<usize> {
        let mut counts = vec![0; m.n_items()];
        for (p, &t) in m.pairs().iter().zip(&self.tags) {
            if t == Split::Train {
                counts[p.item] += 1;
            }
        }
        counts
    }
}

/// Holds out `round(0.4 n)` of each user's pairs, alternating validation
/// and test over a seeded shuffle so validation gets the odd one.
pub fn split_interactions(m: &InteractionMatrix, seed: u64) -> Result<SplitAssignment> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut by_user: Vec<Vec<usize>> = vec![Vec::new(); m.n_users()];
    for (k, p) in m.pairs().iter().enumerate() {
        by_user[p.user].push(k);
    }
    let mut tags = vec![Split::Train; m.pairs().len()];
    for (user, mut pool) in by_user.into_iter().enumerate() {
        let n = pool.len();
        let held = held_out_count(n);
        if n > 0 && held >= n {
            return Err(DatasetError::NoTrainingInteractions(m.users()[user].clone()));
        }
        pool.shuffle(&mut rng);
        for (rank, &k) in pool.iter().take(held).enumerate() {
            tags[k] = if rank % 2 == 0 { Split::Validation } else { Split::Test };
        }
    }
    Ok(SplitAssignment { tags })
}
