//! User-wise cross-attention over the four modality representations.
//!
//! The query is the user's mean representation across modalities. Keys and
//! values come from one slot per modality, each the mean representation of
//! a set of positive items.

use std::sync::Arc;

use rand::Rng;
use thiserror::Error;

use crate::features::Modality;
use crate::graph::glorot;
use crate::numerics::{NumericsError, Tape, Tensor, Var};

#[derive(Debug, Error)]
pub enum FusionError {
    #[error("modality embeddings differ in length: {0:?}")]
    LengthMismatch(Vec<usize>),
    #[error("positive item set is empty")]
    EmptyPositives,
    #[error(transparent)]
    Numerics(#[from] NumericsError),
}

pub type Result<T> = std::result::Result<T, FusionError>;

/// Query, key and value projections, row-vector convention.
#[derive(Clone, Debug, PartialEq)]
pub struct FusionWeights<T> {
    /// `[width, d_k]`.
    pub w_q: T,
    /// `[width, d_k]`.
    pub w_k: T,
    /// `[width, width]`.
    pub w_v: T,
}

impl FusionWeights<Tensor> {
    pub fn init<R: Rng>(width: usize, d_k: usize, rng: &mut R) -> Self {
        FusionWeights {
            w_q: glorot(width, d_k, rng),
            w_k: glorot(width, d_k, rng),
            w_v: glorot(width, width, rng),
        }
    }
}

impl<T> FusionWeights<T> {
    pub fn try_map<U, E>(&self, mut f: impl FnMut(&str, &T) -> std::result::Result<U, E>) -> std::result::Result<FusionWeights<U>, E> {
        Ok(FusionWeights {
            w_q: f("w_q", &self.w_q)?,
            w_k: f("w_k", &self.w_k)?,
            w_v: f("w_v", &self.w_v)?,
        })
    }

    pub fn entries(&self) -> Vec<(&'static str, &T)> {
        vec![("w_q", &self.w_q), ("w_k", &self.w_k), ("w_v", &self.w_v)]
    }
}

/// Fused user embedding and raw attention scores.
#[derive(Clone, Debug, PartialEq)]
pub struct FusionOutput {
    pub embedding: Vec<f64>,
    /// Pre-softmax scores in `Modality::ALL` order.
    pub scores: [f64; 4],
}

impl FusionOutput {
    /// Softmax of the scores.
    pub fn weights(&self) -> [f64; 4] {
        softmax4(self.scores)
    }
}

pub fn softmax4(s: [f64; 4]) -> [f64; 4] {
    let max = s.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let e = s.map(|x| (x - max).exp());
    let total: f64 = e.iter().sum();
    e.map(|x| x / total)
}

/// Elementwise mean of the per-modality user representations.
pub fn fuse_query(embeddings: [&[f64]; 4]) -> Result<Vec<f64>> {
    let len = embeddings[0].len();
    if embeddings.iter().any(|e| e.len() != len) {
        return Err(FusionError::LengthMismatch(embeddings.iter().map(|e| e.len()).collect()));
    }
    Ok((0..len).map(|k| embeddings.iter().map(|e| e[k]).sum::<f64>() / 4.0).collect())
}

/// Per-modality mean of the item rows listed in `positives`.
pub fn build_keys_values(item_embeddings: [&Tensor; 4], positives: &[usize]) -> Result<[Vec<f64>; 4]> {
    if positives.is_empty() {
        return Err(FusionError::EmptyPositives);
    }
    let width = item_embeddings[0].cols();
    if item_embeddings.iter().any(|t| t.cols() != width) {
        return Err(FusionError::LengthMismatch(item_embeddings.iter().map(|t| t.cols()).collect()));
    }
    let mut out: [Vec<f64>; 4] = Default::default();
    for (slot, table) in out.iter_mut().zip(item_embeddings) {
        let mut tape = Tape::new();
        let all = tape.constant(table.clone())?;
        let mean = mean_of_rows(&mut tape, all, positives)?;
        *slot = tape.value(mean).data().to_vec();
    }
    Ok(out)
}

/// Attends from one query over four key/value slots.
pub fn cross_attend(query: &[f64], slots: &[Vec<f64>; 4], weights: &FusionWeights<Tensor>) -> Result<FusionOutput> {
    let lens: Vec<usize> = std::iter::once(query.len()).chain(slots.iter().map(Vec::len)).collect();
    if lens.iter().any(|&l| l != query.len()) {
        return Err(FusionError::LengthMismatch(lens));
    }
    let mut tape = Tape::new();
    let w = weights.try_map(|_, t| tape.constant(t.clone()))?;
    let q = tape.constant(Tensor::matrix(1, query.len(), query.to_vec())?)?;
    let slot_vars = slots
        .iter()
        .map(|s| tape.constant(Tensor::matrix(1, s.len(), s.clone())?))
        .collect::<crate::numerics::Result<Vec<Var>>>()?;
    let (embedding, scores) = attend(&mut tape, q, [slot_vars[0], slot_vars[1], slot_vars[2], slot_vars[3]], &w)?;
    let s = tape.value(scores).data();
    Ok(FusionOutput {
        embedding: tape.value(embedding).data().to_vec(),
        scores: [s[0], s[1], s[2], s[3]],
    })
}

/// Mean of the listed rows of `table` as a `[1, width]` row.
pub fn mean_of_rows(tape: &mut Tape, table: Var, rows: &[usize]) -> Result<Var> {
    if rows.is_empty() {
        return Err(FusionError::EmptyPositives);
    }
    let picked = tape.gather_rows(table, Arc::from(rows))?;
    Ok(tape.mean_rows(picked)?)
}

/// Row `u` of the result is the mean of `table` rows in `positives[u]`.
pub fn per_user_means(tape: &mut Tape, table: Var, positives: &[Vec<usize>]) -> Result<Var> {
    if positives.iter().any(Vec::is_empty) {
        return Err(FusionError::EmptyPositives);
    }
    let owners: Vec<usize> = positives.iter().enumerate().flat_map(|(u, p)| std::iter::repeat_n(u, p.len())).collect();
    let items: Vec<usize> = positives.iter().flatten().copied().collect();
    let picked = tape.gather_rows(table, items.into())?;
    let sums = tape.scatter_add_rows(picked, owners.into(), positives.len())?;
    let inv: Vec<f64> = positives.iter().map(|p| 1.0 / p.len() as f64).collect();
    let inv = tape.constant(Tensor::matrix(positives.len(), 1, inv)?)?;
    Ok(tape.scale_rows(sums, inv)?)
}

/// Batched cross-attention.
///
/// `query` is `[n, width]`; each slot is `[n, width]` (one row per user) or
/// `[1, width]` (shared by all users). Returns the fused embeddings
/// `[n, width]` and the raw scores `[n, 4]`.
pub fn attend(tape: &mut Tape, query: Var, slots: [Var; 4], weights: &FusionWeights<Var>) -> Result<(Var, Var)> {
    let n = tape.shape(query)[0];
    let d_k = tape.shape(weights.w_q)[1];
    let q = tape.matmul(query, weights.w_q)?;
    let mut scores = Vec::with_capacity(4);
    let mut values = Vec::with_capacity(4);
    for slot in slots {
        let slot = if tape.shape(slot)[0] == 1 && n != 1 {
            tape.gather_rows(slot, vec![0; n].into())?
        } else {
            slot
        };
        let k = tape.matmul(slot, weights.w_k)?;
        let raw = tape.row_dot(q, k)?;
        scores.push(tape.scale(raw, 1.0 / (d_k as f64).sqrt())?);
        values.push(tape.matmul(slot, weights.w_v)?);
    }
    let scores = tape.concat(&scores, 1)?;
    let attention = tape.softmax(scores)?;
    let mut fused = None;
    for (m, v) in Modality::ALL.iter().zip(values) {
        let a = tape.slice_cols(attention, m.index(), m.index() + 1)?;
        let term = tape.scale_rows(v, a)?;
        fused = Some(match fused {
            None => term,
            Some(acc) => tape.add(acc, term)?,
        });
    }
    Ok((fused.expect("four modalities"), scores))
}

/// Mean of the four per-modality representations on the tape.
pub fn mean_of_four(tape: &mut Tape, parts: [Var; 4]) -> Result<Var> {
    let ab = tape.add(parts[0], parts[1])?;
    let cd = tape.add(parts[2], parts[3])?;
    let all = tape.add(ab, cd)?;
    Ok(tape.scale(all, 0.25)?)
}
