//! Recommendation and price-movement heads and their losses.

use rand::Rng;
use thiserror::Error;

use crate::graph::glorot;
use crate::numerics::{sigmoid, NumericsError, Tape, Tensor, Var, LEAKY_RELU_SLOPE};

/// Predictions are kept this far from 0 and 1 inside the log.
pub const BCE_CLAMP: f64 = 1e-12;

#[derive(Debug, Error)]
pub enum HeadError {
    #[error("length mismatch: {0} vs {1}")]
    LengthMismatch(usize, usize),
    #[error("alpha must lie in [0, 1], got {0}")]
    Alpha(f64),
    #[error("regularization weight must be non-negative, got {0}")]
    Lambda(f64),
    #[error(transparent)]
    Numerics(#[from] NumericsError),
}

pub type Result<T> = std::result::Result<T, HeadError>;

/// Mean of an item's four modality representations.
#[derive(Clone, Debug, PartialEq)]
pub struct ItemFinalEmbedding(pub Vec<f64>);

impl ItemFinalEmbedding {
    pub fn from_modalities(parts: [&[f64]; 4]) -> Result<Self> {
        let len = parts[0].len();
        if let Some(p) = parts.iter().find(|p| p.len() != len) {
            return Err(HeadError::LengthMismatch(len, p.len()));
        }
        Ok(ItemFinalEmbedding(
            (0..len).map(|k| parts.iter().map(|p| p[k]).sum::<f64>() / 4.0).collect(),
        ))
    }
}

/// Inner-product recommendation score.
pub fn rec_score(user: &[f64], item: &[f64]) -> Result<f64> {
    if user.len() != item.len() {
        return Err(HeadError::LengthMismatch(user.len(), item.len()));
    }
    Ok(user.iter().zip(item).map(|(a, b)| a * b).sum())
}

/// Mean of `-ln σ(pos - neg)` over paired scores.
pub fn bpr_loss_value(pos: &[f64], neg: &[f64]) -> Result<f64> {
    if pos.len() != neg.len() {
        return Err(HeadError::LengthMismatch(pos.len(), neg.len()));
    }
    let total: f64 = pos
        .iter()
        .zip(neg)
        .map(|(p, n)| {
            let x = p - n;
            // -ln σ(x) = ln(1 + e^{-x}), evaluated stably.
            (-x).max(0.0) + (-x.abs()).exp().ln_1p()
        })
        .sum();
    Ok(total / pos.len() as f64)
}

/// Tape form of [`bpr_loss_value`] over `[n, 1]` score columns.
pub fn bpr_loss(tape: &mut Tape, pos: Var, neg: Var) -> Result<Var> {
    let diff = tape.sub(pos, neg)?;
    let ls = tape.log_sigmoid(diff)?;
    let mean = tape.mean(ls)?;
    Ok(tape.scale(mean, -1.0)?)
}

/// Mean binary cross-entropy with predictions clamped to
/// `[1e-12, 1 - 1e-12]`.
pub fn bce_loss_value(pred: &[f64], labels: &[f64]) -> Result<f64> {
    if pred.len() != labels.len() {
        return Err(HeadError::LengthMismatch(pred.len(), labels.len()));
    }
    let total: f64 = pred
        .iter()
        .zip(labels)
        .map(|(&p, &y)| {
            let p = p.clamp(BCE_CLAMP, 1.0 - BCE_CLAMP);
            -(y * p.ln() + (1.0 - y) * (1.0 - p).ln())
        })
        .sum();
    Ok(total / pred.len() as f64)
}

/// Tape form of [`bce_loss_value`]; `labels` is a constant `[n, 1]` column.
pub fn bce_loss(tape: &mut Tape, pred: Var, labels: Var) -> Result<Var> {
    let shape = tape.shape(pred).to_vec();
    let ones = tape.constant(Tensor::filled(&shape, 1.0))?;
    let p = tape.clamp(pred, BCE_CLAMP, 1.0 - BCE_CLAMP)?;
    let q = tape.sub(ones, p)?;
    let not_y = tape.sub(ones, labels)?;
    let ln_p = tape.ln(p)?;
    let ln_q = tape.ln(q)?;
    let a = tape.mul(labels, ln_p)?;
    let b = tape.mul(not_y, ln_q)?;
    let per = tape.add(a, b)?;
    let mean = tape.mean(per)?;
    Ok(tape.scale(mean, -1.0)?)
}

/// Two-layer MLP over `e_u ‖ e_i`: LeakyReLU hidden layer of width `d`,
/// sigmoid output.
#[derive(Clone, Debug, PartialEq)]
pub struct PriceHead<T> {
    /// `[2 · width, d]`.
    pub w1: T,
    /// `[1, d]`.
    pub b1: T,
    /// `[d, 1]`.
    pub w2: T,
    /// `[1, 1]`.
    pub b2: T,
}

impl PriceHead<Tensor> {
    pub fn init<R: Rng>(width: usize, hidden: usize, rng: &mut R) -> Self {
        PriceHead {
            w1: glorot(2 * width, hidden, rng),
            b1: Tensor::zeros(&[1, hidden]),
            w2: glorot(hidden, 1, rng),
            b2: Tensor::zeros(&[1, 1]),
        }
    }
}

impl<T> PriceHead<T> {
    pub fn try_map<U, E>(&self, mut f: impl FnMut(&str, &T) -> std::result::Result<U, E>) -> std::result::Result<PriceHead<U>, E> {
        Ok(PriceHead {
            w1: f("w1", &self.w1)?,
            b1: f("b1", &self.b1)?,
            w2: f("w2", &self.w2)?,
            b2: f("b2", &self.b2)?,
        })
    }

    pub fn entries(&self) -> Vec<(&'static str, &T)> {
        vec![("w1", &self.w1), ("b1", &self.b1), ("w2", &self.w2), ("b2", &self.b2)]
    }
}

/// Probability that the price rises after the user buys the item.
pub fn price_predict(user: &[f64], item: &[f64], head: &PriceHead<Tensor>) -> Result<f64> {
    if user.len() != item.len() {
        return Err(HeadError::LengthMismatch(user.len(), item.len()));
    }
    let input: Vec<f64> = user.iter().chain(item).copied().collect();
    if input.len() != head.w1.rows() {
        return Err(HeadError::LengthMismatch(input.len(), head.w1.rows()));
    }
    let hidden = head.w1.cols();
    let mut logit = head.b2.item();
    for h in 0..hidden {
        let z: f64 = head.b1.data()[h] + input.iter().enumerate().map(|(r, x)| x * head.w1.row(r)[h]).sum::<f64>();
        let a = if z > 0.0 { z } else { LEAKY_RELU_SLOPE * z };
        logit += a * head.w2.row(h)[0];
    }
    Ok(sigmoid(logit))
}

/// Tape form of [`price_predict`] for `[n, width]` user and item rows.
pub fn price_forward(tape: &mut Tape, users: Var, items: Var, head: &PriceHead<Var>) -> Result<Var> {
    let input = tape.concat(&[users, items], 1)?;
    let z = tape.matmul(input, head.w1)?;
    let z = tape.add_row(z, head.b1)?;
    let a = tape.leaky_relu(z, LEAKY_RELU_SLOPE)?;
    let logit = tape.matmul(a, head.w2)?;
    let logit = tape.add_row(logit, head.b2)?;
    Ok(tape.sigmoid(logit)?)
}

/// Task weighting and L2 strength.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LossConfig {
    pub alpha: f64,
    pub lambda: f64,
}

impl LossConfig {
    pub fn new(alpha: f64, lambda: f64) -> Result<Self> {
        if !(0.0..=1.0).contains(&alpha) {
            return Err(HeadError::Alpha(alpha));
        }
        if !(lambda >= 0.0) || !lambda.is_finite() {
            return Err(HeadError::Lambda(lambda));
        }
        Ok(LossConfig { alpha, lambda })
    }
}

/// `(1 - α) L_r + α L_p + λ ‖θ‖²` on plain numbers.
pub fn combined_loss_value(rec: f64, price: f64, cfg: LossConfig, squared_norm: f64) -> f64 {
    (1.0 - cfg.alpha) * rec + cfg.alpha * price + cfg.lambda * squared_norm
}

/// Tape form of [`combined_loss_value`].
///
/// A task whose weight is zero is left out of the graph entirely, so no
/// gradient reaches its head.
pub fn combined_loss(tape: &mut Tape, rec: Var, price: Option<Var>, cfg: LossConfig, params: &[Var]) -> Result<Var> {
    let mut terms = Vec::with_capacity(3);
    if cfg.alpha < 1.0 {
        terms.push(tape.scale(rec, 1.0 - cfg.alpha)?);
    }
    if let Some(price) = price.filter(|_| cfg.alpha > 0.0) {
        terms.push(tape.scale(price, cfg.alpha)?);
    }
    if cfg.lambda > 0.0 {
        let mut norm: Option<Var> = None;
        for &p in params {
            let sq = tape.mul(p, p)?;
            let s = tape.sum(sq)?;
            norm = Some(match norm {
                None => s,
                Some(acc) => tape.add(acc, s)?,
            });
        }
        if let Some(norm) = norm {
            terms.push(tape.scale(norm, cfg.lambda)?);
        }
    }
    let mut total = match terms.first() {
        Some(&t) => t,
        None => tape.constant(Tensor::scalar(0.0))?,
    };
    for &t in &terms[1.min(terms.len())..] {
        total = tape.add(total, t)?;
    }
    Ok(total)
}

#[cfg(test)]
mod tests {
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    use super::*;
    use crate::numerics::gradient_check;

    #[test]
    fn score_examples() {
        assert_eq!(rec_score(&[1.0, 0.0], &[0.0, 3.0]).unwrap(), 0.0);
        assert_eq!(rec_score(&[0.0, 1.0], &[0.0, 1.0]).unwrap(), 1.0);
        assert_eq!(rec_score(&[1.0, 2.0], &[3.0, -1.0]).unwrap(), 1.0);
        assert!(rec_score(&[1.0], &[1.0, 2.0]).is_err());
        let a = 2.5;
        let u = [0.3, -1.2, 4.0];
        let i = [1.1, 0.5, -0.25];
        let scaled: Vec<f64> = u.iter().map(|x| a * x).collect();
        assert!((rec_score(&scaled, &i).unwrap() - a * rec_score(&u, &i).unwrap()).abs() < 1e-12);
    }

    #[test]
    fn bpr_examples() {
        assert!((bpr_loss_value(&[0.7], &[0.7]).unwrap() - std::f64::consts::LN_2).abs() < 1e-15);
        let direct = (1.0 + (-1.0f64).exp()).ln();
        assert!((bpr_loss_value(&[1.5], &[0.5]).unwrap() - direct).abs() < 1e-15);
        assert!((direct - 0.3133).abs() < 1e-4);
        assert!(bpr_loss_value(&[800.0], &[0.0]).unwrap() < 1e-300);
        let mut last = f64::INFINITY;
        for k in -20..20 {
            let l = bpr_loss_value(&[k as f64 * 0.5], &[0.0]).unwrap();
            assert!(l >= 0.0 && l < last);
            last = l;
        }
    }

    #[test]
    fn bpr_tape_matches_value() {
        let pos = [0.3, -1.0, 2.0];
        let neg = [0.1, 0.5, -3.0];
        let mut tape = Tape::new();
        let p = tape.constant(Tensor::matrix(3, 1, pos.to_vec()).unwrap()).unwrap();
        let n = tape.constant(Tensor::matrix(3, 1, neg.to_vec()).unwrap()).unwrap();
        let l = bpr_loss(&mut tape, p, n).unwrap();
        assert!((tape.value(l).item() - bpr_loss_value(&pos, &neg).unwrap()).abs() < 1e-15);
    }

    #[test]
    fn bce_examples() {
        for y in [0.0, 1.0] {
            assert!((bce_loss_value(&[0.5], &[y]).unwrap() - std::f64::consts::LN_2).abs() < 1e-15);
        }
        let direct = -(0.75f64).ln();
        assert!((bce_loss_value(&[0.75], &[1.0]).unwrap() - direct).abs() < 1e-15);
        assert!((direct - 0.2877).abs() < 1e-4);
        assert!(bce_loss_value(&[1.0, 0.0], &[1.0, 0.0]).unwrap() < 1e-11);
        assert!(bce_loss_value(&[0.0], &[1.0]).unwrap().is_finite());

        let pred = [0.2, 0.9, 0.6];
        let labels = [0.0, 1.0, 0.0];
        let mut tape = Tape::new();
        let p = tape.constant(Tensor::matrix(3, 1, pred.to_vec()).unwrap()).unwrap();
        let y = tape.constant(Tensor::matrix(3, 1, labels.to_vec()).unwrap()).unwrap();
        let l = bce_loss(&mut tape, p, y).unwrap();
        assert!((tape.value(l).item() - bce_loss_value(&pred, &labels).unwrap()).abs() < 1e-15);
    }

    #[test]
    fn price_head_range_and_zero_weights() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let head = PriceHead::init(4, 3, &mut rng);
        let zero = head.try_map(|_, t| Ok::<_, ()>(Tensor::zeros(t.shape()))).unwrap();
        assert_eq!(price_predict(&[1.0; 4], &[2.0; 4], &zero).unwrap(), 0.5);
        for k in 0..20 {
            let u: Vec<f64> = (0..4).map(|j| ((k * 7 + j) as f64).sin() * 5.0).collect();
            let i: Vec<f64> = (0..4).map(|j| ((k * 3 + j) as f64).cos() * 5.0).collect();
            let p = price_predict(&u, &i, &head).unwrap();
            assert!(p > 0.0 && p < 1.0);
            assert_eq!(p, price_predict(&u, &i, &head).unwrap());
        }
    }

    #[test]
    fn price_tape_matches_plain() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let head = PriceHead::init(3, 2, &mut rng);
        let users = Tensor::matrix(2, 3, vec![0.1, -0.4, 0.9, 1.0, 0.0, -2.0]).unwrap();
        let items = Tensor::matrix(2, 3, vec![0.5, 0.5, -0.1, 0.3, 0.2, 0.1]).unwrap();
        let mut tape = Tape::new();
        let h = head.try_map(|_, t| tape.constant(t.clone())).unwrap();
        let u = tape.constant(users.clone()).unwrap();
        let i = tape.constant(items.clone()).unwrap();
        let p = price_forward(&mut tape, u, i, &h).unwrap();
        for r in 0..2 {
            let plain = price_predict(users.row(r), items.row(r), &head).unwrap();
            assert!((tape.value(p).row(r)[0] - plain).abs() < 1e-15);
        }
    }

    #[test]
    fn combined_examples() {
        let cfg = LossConfig::new(0.2, 0.0).unwrap();
        assert!((combined_loss_value(1.0, 0.5, cfg, 3.0) - 0.9).abs() < 1e-15);
        let cfg0 = LossConfig::new(0.0, 0.1).unwrap();
        assert_eq!(combined_loss_value(1.0, 7.0, cfg0, 2.0), 1.0 + 0.1 * 2.0);
        assert!(LossConfig::new(1.5, 0.0).is_err());
        assert!(LossConfig::new(0.5, -1.0).is_err());

        let mut tape = Tape::new();
        let r = tape.constant(Tensor::scalar(1.0)).unwrap();
        let p = tape.constant(Tensor::scalar(0.5)).unwrap();
        let w = tape.param(Tensor::vector(vec![1.0, -2.0]).unwrap()).unwrap();
        let cfg = LossConfig::new(0.2, 0.01).unwrap();
        let l = combined_loss(&mut tape, r, Some(p), cfg, &[w]).unwrap();
        assert!((tape.value(l).item() - combined_loss_value(1.0, 0.5, cfg, 5.0)).abs() < 1e-15);
    }

    #[test]
    fn zero_alpha_cuts_price_gradient() {
        let mut tape = Tape::new();
        let rec_w = tape.param(Tensor::scalar(0.4)).unwrap();
        let price_w = tape.param(Tensor::scalar(0.9)).unwrap();
        let rec = tape.mul(rec_w, rec_w).unwrap();
        let price = tape.mul(price_w, price_w).unwrap();
        let l = combined_loss(&mut tape, rec, Some(price), LossConfig::new(0.0, 0.0).unwrap(), &[]).unwrap();
        tape.backward(l).unwrap();
        assert_eq!(tape.grad(price_w).unwrap().item(), 0.0);
        assert!(tape.grad(rec_w).unwrap().item() != 0.0);
    }

    #[test]
    fn loss_gradients_match_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        let head = PriceHead::init(3, 4, &mut rng);
        let users = Tensor::matrix(2, 3, vec![0.1, -0.4, 0.9, 1.0, 0.0, -2.0]).unwrap();
        let items = Tensor::matrix(2, 3, vec![0.5, 0.5, -0.1, 0.3, 0.2, 0.1]).unwrap();
        let labels = Tensor::matrix(2, 1, vec![1.0, 0.0]).unwrap();
        let cfg = LossConfig::new(0.3, 0.05).unwrap();
        for name in ["w1", "b1", "w2", "b2", "users"] {
            let point = if name == "users" {
                users.clone()
            } else {
                head.entries().into_iter().find(|(n, _)| *n == name).unwrap().1.clone()
            };
            let loss = |tape: &mut Tape, x: Var| -> crate::numerics::Result<Var> {
                let h = head.try_map(|n, t| if n == name { Ok(x) } else { tape.param(t.clone()) })?;
                let u = if name == "users" { x } else { tape.constant(users.clone())? };
                let i = tape.constant(items.clone())?;
                let y = tape.constant(labels.clone())?;
                let unwrap = |e: HeadError| match e {
                    HeadError::Numerics(n) => n,
                    other => NumericsError::Invalid(other.to_string()),
                };
                let p = price_forward(tape, u, i, &h).map_err(unwrap)?;
                let lp = bce_loss(tape, p, y).map_err(unwrap)?;
                let pos = tape.row_dot(u, i)?;
                let neg = tape.row_dot(u, u)?;
                let lr = bpr_loss(tape, pos, neg).map_err(unwrap)?;
                combined_loss(tape, lr, Some(lp), cfg, &[h.w1, h.w2]).map_err(unwrap)
            };
            let err = gradient_check(loss, &point, 1e-6).unwrap();
            assert!(err < 1e-6, "{name}: {err}");
        }
    }
}
