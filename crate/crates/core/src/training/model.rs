use std::collections::{BTreeSet, HashMap};
use std::sync::Arc;

use super::{ModelDims, ModelParams, Result, TrainConfig};
use crate::dataset::{InteractionMatrix, Split, SplitAssignment, Triple};
use crate::features::ItemFeatureSet;
use crate::fusion::{attend, mean_of_four, mean_of_rows, per_user_means};
use crate::graph::{build_modal_graphs, propagate, ModalGraph};
use crate::heads::{bce_loss, bpr_loss, combined_loss, price_forward, LossConfig};
use crate::numerics::{Tape, Tensor, Var};

/// Interactions, split and modality graphs for one collection.
#[derive(Clone, Debug)]
pub struct TrainingData {
    pub matrix: InteractionMatrix,
    pub split: SplitAssignment,
    pub graphs: [ModalGraph; 4],
    /// Training items of each user, ascending.
    pub train_positives: Vec<Vec<usize>>,
    labels: HashMap<(usize, usize), f64>,
}

impl TrainingData {
    /// `user_features` must already be normalized.
    pub fn new(
        matrix: InteractionMatrix,
        split: SplitAssignment,
        features: &ItemFeatureSet,
        user_features: &Tensor,
    ) -> Result<Self> {
        let graphs = build_modal_graphs(&matrix, &split, features, user_features)?;
        let mut train_positives = split.items_by_user(&matrix, Split::Train);
        train_positives.iter_mut().for_each(|p| p.sort_unstable());
        let labels = matrix
            .pairs()
            .iter()
            .zip(split.tags())
            .filter(|(_, t)| **t == Split::Train)
            .map(|(p, _)| ((p.user, p.item), f64::from(p.label)))
            .collect();
        Ok(TrainingData {
            matrix,
            split,
            graphs,
            train_positives,
            labels,
        })
    }

    pub fn dims(&self, cfg: &TrainConfig) -> ModelDims {
        ModelDims {
            n_users: self.matrix.n_users(),
            n_items: self.matrix.n_items(),
            user_dim: self.graphs[0].user_features.cols(),
            feature_dims: [0, 1, 2, 3].map(|m| self.graphs[m].feature_dim()),
            dim: cfg.dim,
            hops: cfg.hops,
            d_k: cfg.d_k,
        }
    }

    /// Price-movement label of a training pair; 0 for anything else.
    pub fn price_label(&self, user: usize, item: usize) -> f64 {
        self.labels.get(&(user, item)).copied().unwrap_or(0.0)
    }

    fn item_nodes(&self, items: impl IntoIterator<Item = usize>) -> Arc<[usize]> {
        let offset = self.matrix.n_users();
        items.into_iter().map(|i| offset + i).collect()
    }
}

/// Final node representations of all four modalities, `[n_nodes, width]`.
pub fn representations(tape: &mut Tape, data: &TrainingData, params: &ModelParams<Var>, hops: usize) -> Result<[Var; 4]> {
    let mut out = Vec::with_capacity(4);
    for (g, w) in data.graphs.iter().zip(&params.modalities) {
        out.push(propagate(tape, g, w, params.id, hops)?);
    }
    Ok([out[0], out[1], out[2], out[3]])
}

/// Loss terms of one batch.
#[derive(Clone, Copy, Debug)]
pub struct BatchLoss {
    pub total: Var,
    pub rec: Var,
    pub price: Var,
    pub pos_scores: Var,
    pub neg_scores: Var,
}

/// Records the forward pass and combined loss for a batch of triples.
///
/// Attention keys and values are the per-modality means over the distinct
/// positive items of the batch, shared by every user in it.
pub fn batch_loss(
    tape: &mut Tape,
    data: &TrainingData,
    params: &ModelParams<Var>,
    batch: &[Triple],
    cfg: &TrainConfig,
) -> Result<BatchLoss> {
    let reps = representations(tape, data, params, cfg.hops)?;

    let users: Vec<usize> = batch.iter().map(|t| t.user).collect::<BTreeSet<_>>().into_iter().collect();
    let local: HashMap<usize, usize> = users.iter().enumerate().map(|(k, &u)| (u, k)).collect();
    let positives: BTreeSet<usize> = batch.iter().map(|t| t.positive).collect();
    let pos_nodes = data.item_nodes(positives);

    let mut slots = Vec::with_capacity(4);
    let mut user_rows = Vec::with_capacity(4);
    let mut pos_rows = Vec::with_capacity(4);
    let mut neg_rows = Vec::with_capacity(4);
    let batch_pos = data.item_nodes(batch.iter().map(|t| t.positive));
    let batch_neg = data.item_nodes(batch.iter().map(|t| t.negative));
    let user_index: Arc<[usize]> = users.iter().copied().collect();
    for &r in &reps {
        slots.push(mean_of_rows(tape, r, &pos_nodes)?);
        user_rows.push(tape.gather_rows(r, user_index.clone())?);
        pos_rows.push(tape.gather_rows(r, batch_pos.clone())?);
        neg_rows.push(tape.gather_rows(r, batch_neg.clone())?);
    }
    let four = |v: &Vec<Var>| [v[0], v[1], v[2], v[3]];
    let query = mean_of_four(tape, four(&user_rows))?;
    let (fused, _) = attend(tape, query, four(&slots), &params.fusion)?;
    let per_triple: Arc<[usize]> = batch.iter().map(|t| local[&t.user]).collect();
    let e_u = tape.gather_rows(fused, per_triple)?;
    let e_pos = mean_of_four(tape, four(&pos_rows))?;
    let e_neg = mean_of_four(tape, four(&neg_rows))?;

    let pos_scores = tape.row_dot(e_u, e_pos)?;
    let neg_scores = tape.row_dot(e_u, e_neg)?;
    let rec = bpr_loss(tape, pos_scores, neg_scores)?;

    let labels: Vec<f64> = batch.iter().map(|t| data.price_label(t.user, t.positive)).collect();
    let labels = tape.constant(Tensor::matrix(batch.len(), 1, labels)?)?;
    let prob = price_forward(tape, e_u, e_pos, &params.price)?;
    let price = bce_loss(tape, prob, labels)?;

    let loss_cfg = LossConfig::new(cfg.alpha, cfg.lambda)?;
    let regularized: Vec<Var> = params.regularized().into_iter().copied().collect();
    let total = combined_loss(tape, rec, Some(price), loss_cfg, &regularized)?;
    Ok(BatchLoss {
        total,
        rec,
        price,
        pos_scores,
        neg_scores,
    })
}

/// User and item embeddings used for ranking, plus raw attention scores.
#[derive(Clone, Debug, PartialEq)]
pub struct Inference {
    /// `[n_users, width]` fused user embeddings.
    pub users: Tensor,
    /// `[n_items, width]` modality-mean item embeddings.
    pub items: Tensor,
    /// `[n_users, 4]` pre-softmax modality scores.
    pub scores: Tensor,
}

impl Inference {
    pub fn score(&self, user: usize, item: usize) -> f64 {
        self.users.row(user).iter().zip(self.items.row(item)).map(|(a, b)| a * b).sum()
    }
}

/// Embeds every user and item. Each user attends over the means of its
/// own training items.
pub fn infer(data: &TrainingData, params: &ModelParams<Tensor>, hops: usize) -> Result<Inference> {
    let mut tape = Tape::new();
    let p = params.try_map(|_, t| tape.constant(t.clone()))?;
    let reps = representations(&mut tape, data, &p, hops)?;
    let offset = data.matrix.n_users();
    let positives: Vec<Vec<usize>> = data
        .train_positives
        .iter()
        .map(|items| items.iter().map(|i| offset + i).collect())
        .collect();
    let all_users: Arc<[usize]> = (0..offset).collect();
    let all_items = data.item_nodes(0..data.matrix.n_items());
    let mut slots = Vec::with_capacity(4);
    let mut user_rows = Vec::with_capacity(4);
    let mut item_rows = Vec::with_capacity(4);
    for &r in &reps {
        slots.push(per_user_means(&mut tape, r, &positives)?);
        user_rows.push(tape.gather_rows(r, all_users.clone())?);
        item_rows.push(tape.gather_rows(r, all_items.clone())?);
    }
    let four = |v: &Vec<Var>| [v[0], v[1], v[2], v[3]];
    let query = mean_of_four(&mut tape, four(&user_rows))?;
    let (fused, scores) = attend(&mut tape, query, four(&slots), &p.fusion)?;
    let items = mean_of_four(&mut tape, four(&item_rows))?;
    Ok(Inference {
        users: tape.value(fused).clone(),
        items: tape.value(items).clone(),
        scores: tape.value(scores).clone(),
    })
}
