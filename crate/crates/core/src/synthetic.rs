//! Generated collections with planted block preferences, used to check
//! that the model learns more than item popularity.

use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::Normal;

use crate::dataset::{split_interactions, Interaction, InteractionMatrix, Split, SplitAssignment};
use crate::features::{tile_scalar, zscore_columns, ItemFeatureSet, SCALAR_TILE_DIM, USER_FEATURE_DIM};
use crate::numerics::Tensor;
use crate::training::{Result, TrainConfig, TrainError, TrainingData};

#[derive(Clone, Debug, PartialEq)]
pub struct SyntheticSpec {
    pub n_users: usize,
    pub n_items: usize,
    pub n_blocks: usize,
    /// Probability that a positive comes from the user's own block.
    pub in_block: f64,
    pub min_positives: usize,
    pub max_positives: usize,
    pub image_dim: usize,
    pub text_dim: usize,
    /// Standard deviation of per-item noise around the block centroid.
    pub feature_noise: f64,
    /// Exponent of the within-block popularity law.
    pub zipf_exponent: f64,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        SyntheticSpec {
            n_users: 200,
            n_items: 500,
            n_blocks: 5,
            in_block: 0.8,
            min_positives: 10,
            max_positives: 20,
            image_dim: 64,
            text_dim: 48,
            feature_noise: 0.6,
            zipf_exponent: 0.8,
        }
    }
}

/// A generated collection with its hidden block assignments.
#[derive(Clone, Debug)]
pub struct SyntheticData {
    pub matrix: InteractionMatrix,
    pub features: ItemFeatureSet,
    /// Z-scored `[n_users, 3]` user features.
    pub user_features: Tensor,
    pub user_blocks: Vec<usize>,
    pub item_blocks: Vec<usize>,
}

impl SyntheticData {
    /// Splits the interactions and builds the modality graphs.
    pub fn training_data(&self, split_seed: u64) -> Result<TrainingData> {
        let split = split_interactions(&self.matrix, split_seed)?;
        TrainingData::new(self.matrix.clone(), split, &self.features, &self.user_features)
    }
}

/// A configuration sized for the generated collections.
pub fn synthetic_config(seed: u64) -> TrainConfig {
    TrainConfig {
        dim: 32,
        hops: 2,
        d_k: 16,
        alpha: 0.2,
        lambda: 1e-5,
        batch_size: 1024,
        seed,
        ..TrainConfig::default()
    }
}

fn centroids(n: usize, dim: usize, rng: &mut ChaCha8Rng) -> Vec<Vec<f64>> {
    let unit = Normal::new(0.0, 1.0).expect("valid normal");
    (0..n).map(|_| (0..dim).map(|_| unit.sample(rng)).collect()).collect()
}

/// Generates a collection. Item `i` belongs to block `i % n_blocks` and
/// user `u` prefers block `u % n_blocks`.
pub fn generate(spec: &SyntheticSpec, seed: u64) -> Result<SyntheticData> {
    if spec.n_blocks == 0
        || spec.n_items < spec.n_blocks
        || spec.min_positives == 0
        || spec.max_positives < spec.min_positives
        || spec.max_positives > spec.n_items / spec.n_blocks
    {
        return Err(TrainError::Config(format!("unusable synthetic spec {spec:?}")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let noise = Normal::new(0.0, spec.feature_noise).map_err(|e| TrainError::Config(e.to_string()))?;
    let unit = Normal::new(0.0, 1.0).expect("valid normal");

    let item_blocks: Vec<usize> = (0..spec.n_items).map(|i| i % spec.n_blocks).collect();
    let user_blocks: Vec<usize> = (0..spec.n_users).map(|u| u % spec.n_blocks).collect();
    let members: Vec<Vec<usize>> = (0..spec.n_blocks)
        .map(|b| (0..spec.n_items).filter(|&i| item_blocks[i] == b).collect())
        .collect();
    let law: Vec<f64> = (0..spec.n_items).map(|r| 1.0 / ((r / spec.n_blocks + 1) as f64).powf(spec.zipf_exponent)).collect();
    let in_block: Vec<WeightedIndex<f64>> = members
        .iter()
        .map(|items| WeightedIndex::new(items.iter().map(|&i| law[i])).expect("nonempty block"))
        .collect();
    let anywhere = WeightedIndex::new(&law).expect("nonempty items");

    let mut events = Vec::new();
    let mut clock = 1_600_000_000i64;
    let mut item_base_price = vec![0.0; spec.n_items];
    let block_price: Vec<f64> = (0..spec.n_blocks).map(|b| 1.0 + 0.3 * b as f64).collect();
    for (i, p) in item_base_price.iter_mut().enumerate() {
        let jitter: f64 = unit.sample(&mut rng);
        *p = block_price[item_blocks[i]] * (1.0 + 0.5 * jitter).abs().max(0.05);
    }
    for (user, &block) in user_blocks.iter().enumerate() {
        let n = rng.random_range(spec.min_positives..=spec.max_positives);
        let mut chosen: Vec<usize> = Vec::with_capacity(n);
        while chosen.len() < n {
            let item = if rng.random::<f64>() < spec.in_block {
                members[block][in_block[block].sample(&mut rng)]
            } else {
                anywhere.sample(&mut rng)
            };
            if !chosen.contains(&item) {
                chosen.push(item);
            }
        }
        for item in chosen {
            clock += rng.random_range(60..86_400);
            let up = 1.0 / (1.0 + (-(item_base_price[item] - 1.6)).exp());
            events.push(Interaction {
                user,
                item,
                timestamp: clock,
                price_eth: item_base_price[item],
                label: u8::from(rng.random::<f64>() < up),
            });
        }
    }
    let matrix = InteractionMatrix::new(
        (0..spec.n_users).map(|u| format!("0xuser{u:04}")).collect(),
        (0..spec.n_items).map(|i| format!("{i}")).collect(),
        events,
    )?;

    let image_c = centroids(spec.n_blocks, spec.image_dim, &mut rng);
    let text_c = centroids(spec.n_blocks, spec.text_dim, &mut rng);
    let around = |c: &[f64], rng: &mut ChaCha8Rng| -> Vec<f64> { c.iter().map(|x| x + noise.sample(rng)).collect() };
    let mut image = Vec::with_capacity(spec.n_items);
    let mut text = Vec::with_capacity(spec.n_items);
    let mut price_raw = Vec::with_capacity(spec.n_items);
    let mut txn_raw = Vec::with_capacity(spec.n_items);
    for (i, &b) in item_blocks.iter().enumerate() {
        image.push(around(&image_c[b], &mut rng));
        text.push(around(&text_c[b], &mut rng));
        price_raw.push(vec![item_base_price[i]]);
        txn_raw.push(vec![unit.sample(&mut rng)]);
    }
    let tile = |raw: Vec<Vec<f64>>| -> Result<Tensor> {
        let z = zscore_columns(&Tensor::from_rows(&raw)?);
        let rows: Vec<Vec<f64>> = (0..z.rows()).map(|r| tile_scalar(z.row(r)[0], SCALAR_TILE_DIM)).collect();
        Ok(Tensor::from_rows(&rows)?)
    };
    let features = ItemFeatureSet::new([
        Tensor::from_rows(&image)?,
        Tensor::from_rows(&text)?,
        tile(price_raw)?,
        tile(txn_raw)?,
    ])
    .map_err(|e| TrainError::Config(e.to_string()))?;

    let users: Vec<Vec<f64>> = (0..spec.n_users)
        .map(|_| (0..USER_FEATURE_DIM).map(|_| unit.sample(&mut rng)).collect())
        .collect();
    let user_features = zscore_columns(&Tensor::from_rows(&users)?);
    Ok(SyntheticData {
        matrix,
        features,
        user_features,
        user_blocks,
        item_blocks,
    })
}

/// Five users and ten items. User `u` trains on items `2u, 2u+1, 2u+2`
/// and holds out `2u+3` for validation (indices mod 10), so every item is
/// popular in training and each user keeps six drawable negatives. Even and
/// odd items carry different image and text centroids.
pub fn toy_collection(seed: u64) -> Result<TrainingData> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let unit = Normal::new(0.0, 1.0).expect("valid normal");
    let (n_users, n_items) = (5, 10);
    let mut events = Vec::new();
    let mut tags_by_pair = Vec::new();
    for u in 0..n_users {
        for (k, off) in (0..4).enumerate() {
            let item = (2 * u + off) % n_items;
            events.push(Interaction {
                user: u,
                item,
                timestamp: (10 * u + k) as i64 + 1,
                price_eth: 1.0 + item as f64 / 10.0,
                label: u8::from((u + item) % 3 == 0),
            });
            tags_by_pair.push(((u, item), if off < 3 { Split::Train } else { Split::Validation }));
        }
    }
    let matrix = InteractionMatrix::new(
        (0..n_users).map(|u| format!("u{u}")).collect(),
        (0..n_items).map(|i| format!("{i}")).collect(),
        events,
    )?;
    let tags = matrix
        .pairs()
        .iter()
        .map(|p| {
            tags_by_pair
                .iter()
                .find(|(key, _)| *key == (p.user, p.item))
                .map(|(_, t)| *t)
                .expect("every pair tagged")
        })
        .collect();
    let split = SplitAssignment::new(&matrix, tags)?;
    let centers = [centroids(2, 6, &mut rng), centroids(2, 5, &mut rng)];
    let mut image = Vec::new();
    let mut text = Vec::new();
    let mut price = Vec::new();
    let mut txn = Vec::new();
    for i in 0..n_items {
        let jitter = |c: &[f64], rng: &mut ChaCha8Rng| -> Vec<f64> { c.iter().map(|x| x + 0.3 * unit.sample(rng)).collect() };
        image.push(jitter(&centers[0][i % 2], &mut rng));
        text.push(jitter(&centers[1][i % 2], &mut rng));
        price.push(tile_scalar(unit.sample(&mut rng), 4));
        txn.push(tile_scalar(unit.sample(&mut rng), 4));
    }
    let features = ItemFeatureSet::new([
        Tensor::from_rows(&image)?,
        Tensor::from_rows(&text)?,
        Tensor::from_rows(&price)?,
        Tensor::from_rows(&txn)?,
    ])
    .map_err(|e| TrainError::Config(e.to_string()))?;
    let users: Vec<Vec<f64>> = (0..n_users)
        .map(|_| (0..USER_FEATURE_DIM).map(|_| unit.sample(&mut rng)).collect())
        .collect();
    TrainingData::new(matrix, split, &features, &zscore_columns(&Tensor::from_rows(&users)?))
}
