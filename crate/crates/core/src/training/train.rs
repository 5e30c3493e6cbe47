use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{batch_loss, clip_global_norm, infer, Adam, ModelDims, ModelParams, Result, TrainConfig, TrainError, TrainingData};
use crate::dataset::{sample_negatives, Split};
use crate::evaluation::{build_candidates, model_rankings, CandidateSet, MetricTable};
use crate::numerics::{Tape, Tensor};

const NEGATIVE_SALT: u64 = 0x6e65_6761_7469_7665;
const SHUFFLE_SALT: u64 = 0x7368_7566_666c_6521;
const VALIDATION_SALT: u64 = 0x7661_6c69_6461_7465;

/// A trained model: its shapes and parameters.
#[derive(Clone, Debug, PartialEq)]
pub struct Model {
    pub dims: ModelDims,
    pub params: ModelParams<Tensor>,
}

/// Per-epoch training record.
#[derive(Clone, Debug, PartialEq)]
pub struct EpochRecord {
    /// 1-based.
    pub epoch: usize,
    /// Mean combined loss over the epoch's triples.
    pub loss: f64,
    pub rec_loss: f64,
    pub price_loss: f64,
    /// Validation recall at `select_k`; `None` without validation users.
    pub val_recall: Option<f64>,
}

#[derive(Clone, Debug)]
pub struct TrainOutcome {
    /// Parameters from the best validation epoch (the last epoch when
    /// there is no validation data).
    pub model: Model,
    pub best_epoch: usize,
    pub best_val_recall: Option<f64>,
    pub trace: Vec<EpochRecord>,
}

/// Seed of the negative sample drawn for `epoch`.
pub fn epoch_seed(seed: u64, epoch: usize) -> u64 {
    seed ^ NEGATIVE_SALT.wrapping_mul(epoch as u64 + 1)
}

/// Candidates used for model selection during training.
pub fn validation_candidates(data: &TrainingData, seed: u64) -> CandidateSet {
    build_candidates(&data.matrix, &data.split, Split::Validation, seed ^ VALIDATION_SALT)
}

/// Mean recall at `k` over `candidates`.
pub fn recall_of(model: &Model, data: &TrainingData, candidates: &CandidateSet, k: usize) -> Result<f64> {
    let inference = infer(data, &model.params, model.dims.hops)?;
    let rankings = model_rankings(&inference, candidates);
    Ok(MetricTable::score(candidates, &rankings, &[k]).mean_recall(k).unwrap_or(0.0))
}

/// Flattened parameter values in `ModelParams::entries` order.
fn flatten(params: &ModelParams<Tensor>) -> Vec<Tensor> {
    params.entries().into_iter().map(|(_, t)| t.clone()).collect()
}

fn rebuild(template: &ModelParams<Tensor>, flat: &[Tensor]) -> ModelParams<Tensor> {
    let mut it = flat.iter();
    template
        .try_map(|_, _| Ok::<_, std::convert::Infallible>(it.next().expect("same layout").clone()))
        .expect("infallible")
}

/// Trains with Adam, redrawing negatives every epoch and keeping the
/// parameters of the epoch with the best validation recall.
pub fn train(data: &TrainingData, cfg: &TrainConfig) -> Result<TrainOutcome> {
    cfg.validate()?;
    train_from(data, cfg, ModelParams::init(&data.dims(cfg), cfg.seed))
}

/// [`train`] starting from the given parameters.
pub fn train_from(data: &TrainingData, cfg: &TrainConfig, init: ModelParams<Tensor>) -> Result<TrainOutcome> {
    cfg.validate()?;
    let dims = data.dims(cfg);
    let template = init;
    let mut flat = flatten(&template);
    let mut adam = Adam::new(&flat, cfg.learning_rate);
    let candidates = validation_candidates(data, cfg.seed);
    let mut trace = Vec::with_capacity(cfg.epochs);
    let mut best: Option<(f64, usize, Vec<Tensor>)> = None;

    for epoch in 1..=cfg.epochs {
        let mut triples = sample_negatives(&data.matrix, &data.split, epoch_seed(cfg.seed, epoch))?;
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ SHUFFLE_SALT);
        rng.set_stream(epoch as u64);
        triples.shuffle(&mut rng);

        let (mut total, mut rec, mut price) = (0.0, 0.0, 0.0);
        for (b, batch) in triples.chunks(cfg.batch_size).enumerate() {
            let mut tape = Tape::new();
            let mut it = flat.iter();
            let vars = template.try_map(|_, _| tape.param(it.next().expect("same layout").clone()))?;
            let loss = batch_loss(&mut tape, data, &vars, batch, cfg)?;
            let value = tape.value(loss.total).item();
            if !value.is_finite() {
                return Err(TrainError::NonFinite { epoch, batch: b + 1 });
            }
            let weight = batch.len() as f64;
            total += value * weight;
            rec += tape.value(loss.rec).item() * weight;
            price += tape.value(loss.price).item() * weight;

            tape.backward(loss.total)?;
            let mut grads: Vec<Tensor> = vars
                .entries()
                .into_iter()
                .map(|(_, v)| tape.grad(*v).cloned().unwrap_or_else(|| Tensor::zeros(tape.shape(*v))))
                .collect();
            clip_global_norm(&mut grads, cfg.clip_norm);
            adam.step(&mut flat, &grads);
            if flat.iter().any(|t| !t.is_finite()) {
                return Err(TrainError::NonFinite { epoch, batch: b + 1 });
            }
        }

        let n = triples.len().max(1) as f64;
        let val_recall = if candidates.users.is_empty() {
            None
        } else {
            let model = Model {
                dims,
                params: rebuild(&template, &flat),
            };
            Some(recall_of(&model, data, &candidates, cfg.select_k)?)
        };
        if let Some(r) = val_recall {
            if best.as_ref().is_none_or(|(b, _, _)| r > *b) {
                best = Some((r, epoch, flat.clone()));
            }
        }
        trace.push(EpochRecord {
            epoch,
            loss: total / n,
            rec_loss: rec / n,
            price_loss: price / n,
            val_recall,
        });
    }

    let (best_val_recall, best_epoch, chosen) = match best {
        Some((r, e, p)) => (Some(r), e, p),
        None => (None, cfg.epochs, flat),
    };
    Ok(TrainOutcome {
        model: Model {
            dims,
            params: rebuild(&template, &chosen),
        },
        best_epoch,
        best_val_recall,
        trace,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synthetic::toy_collection;

    fn toy() -> TrainingData {
        toy_collection(3).unwrap()
    }

    fn toy_config() -> TrainConfig {
        TrainConfig {
            dim: 8,
            hops: 2,
            d_k: 4,
            batch_size: 16,
            epochs: 10,
            lambda: 1e-4,
            select_k: 5,
            seed: 11,
            ..TrainConfig::default()
        }
    }

    #[test]
    fn loss_descends_on_toy_data() {
        let out = train(&toy(), &toy_config()).unwrap();
        assert_eq!(out.trace.len(), 10);
        assert!(out.trace[9].loss < out.trace[0].loss, "{:?}", out.trace);
        assert!(out.trace.iter().all(|r| r.val_recall.is_some()));
        assert!((1..=10).contains(&out.best_epoch));
    }

    #[test]
    fn same_seed_same_trace() {
        let data = toy();
        let cfg = TrainConfig { epochs: 3, ..toy_config() };
        let a = train(&data, &cfg).unwrap();
        let b = train(&data, &cfg).unwrap();
        assert_eq!(a.trace, b.trace);
        assert_eq!(a.model, b.model);
        let c = train(&data, &TrainConfig { seed: 12, ..cfg }).unwrap();
        assert_ne!(a.trace, c.trace);
    }

    #[test]
    fn zero_alpha_leaves_price_head() {
        let data = toy();
        let cfg = TrainConfig {
            alpha: 0.0,
            lambda: 0.0,
            epochs: 3,
            ..toy_config()
        };
        let init = ModelParams::init(&data.dims(&cfg), cfg.seed);
        let out = train_from(&data, &cfg, init.clone()).unwrap();
        assert_eq!(out.model.params.price, init.price);
        assert_ne!(out.model.params.fusion, init.fusion);
    }

    #[test]
    fn invalid_config_is_rejected() {
        let cfg = TrainConfig { hops: 0, ..toy_config() };
        assert!(matches!(train(&toy(), &cfg), Err(TrainError::Config(_))));
    }
}
