use std::collections::BTreeMap;

use super::Result;
use crate::dataset::TransactionLog;
use crate::numerics::Tensor;

pub const SCALAR_TILE_DIM: usize = 64;
pub const SECONDS_PER_DAY: f64 = 86_400.0;
/// Average purchase price, average holding period, transaction count.
pub const USER_FEATURE_DIM: usize = 3;

/// Repeats `x` to fill a `dim`-long vector.
pub fn tile_scalar(x: f64, dim: usize) -> Vec<f64> {
    vec![x; dim]
}

/// Per-item averages feeding the price and transaction modalities.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ItemScalars {
    /// Mean sale price in ETH; non-ETH/WETH sales count as 0.
    pub price: f64,
    /// Mean gap between consecutive sales, in days; 0 for a single sale.
    pub holding_days: f64,
}

pub fn build_item_scalar_features(log: &TransactionLog) -> BTreeMap<String, ItemScalars> {
    log.by_token()
        .into_iter()
        .map(|(token, events)| {
            let price = events.iter().map(|r| r.price_eth()).sum::<f64>() / events.len() as f64;
            let holding_days = if events.len() < 2 {
                0.0
            } else {
                let span = (events[events.len() - 1].timestamp - events[0].timestamp) as f64;
                span / SECONDS_PER_DAY / (events.len() - 1) as f64
            };
            (token.to_string(), ItemScalars { price, holding_days })
        })
        .collect()
}

/// Raw user features, one row per user in the order given.
#[derive(Clone, Debug, PartialEq)]
pub struct UserFeatureMatrix {
    values: Tensor,
}

impl UserFeatureMatrix {
    pub fn new(values: Tensor) -> Self {
        UserFeatureMatrix { values }
    }

    pub fn values(&self) -> &Tensor {
        &self.values
    }

    pub fn n_users(&self) -> usize {
        self.values.rows()
    }

    /// Column-wise z-scores, the form fed to the model.
    pub fn normalized(&self) -> Tensor {
        zscore_columns(&self.values)
    }
}

/// Average purchase price (ETH), average holding period (days) and
/// transaction count for each user.
///
/// A purchase is held until the user's next sale of that token, or until
/// the end of the log when it was never resold. The count includes both
/// purchases and sales.
pub fn build_user_features(log: &TransactionLog, users: &[String]) -> Result<UserFeatureMatrix> {
    let end = log.end_timestamp();
    let mut rows = Vec::with_capacity(users.len());
    for user in users {
        let buys: Vec<_> = log.records().iter().filter(|r| &r.buyer == user).collect();
        let sells: Vec<_> = log.records().iter().filter(|r| &r.seller == user).collect();
        let count = (buys.len() + sells.len()) as f64;
        if buys.is_empty() {
            rows.push(vec![0.0, 0.0, count]);
            continue;
        }
        let price = buys.iter().map(|r| r.price_eth()).sum::<f64>() / buys.len() as f64;
        let holding = buys
            .iter()
            .map(|b| {
                let sold = sells
                    .iter()
                    .filter(|s| s.token_id == b.token_id && s.timestamp >= b.timestamp)
                    .map(|s| s.timestamp)
                    .min()
                    .unwrap_or(end);
                (sold - b.timestamp) as f64 / SECONDS_PER_DAY
            })
            .sum::<f64>()
            / buys.len() as f64;
        rows.push(vec![price, holding, count]);
    }
    let values = if rows.is_empty() {
        Tensor::zeros(&[1, USER_FEATURE_DIM])
    } else {
        Tensor::from_rows(&rows)?
    };
    Ok(UserFeatureMatrix { values })
}

/// Standardizes each column to zero mean and unit variance; constant
/// columns become zero.
pub fn zscore_columns(t: &Tensor) -> Tensor {
    let (rows, cols) = (t.rows(), t.cols());
    let mut out = t.clone();
    for c in 0..cols {
        let mean = (0..rows).map(|r| t.row(r)[c]).sum::<f64>() / rows as f64;
        let var = (0..rows).map(|r| (t.row(r)[c] - mean).powi(2)).sum::<f64>() / rows as f64;
        let sd = var.sqrt();
        for r in 0..rows {
            out.row_mut(r)[c] = if sd > 1e-12 { (t.row(r)[c] - mean) / sd } else { 0.0 };
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::TransactionRecord;

    const DAY: i64 = 86_400;

    fn sale(token: &str, buyer: &str, seller: &str, price: f64, currency: &str, day: i64) -> TransactionRecord {
        TransactionRecord {
            collection: "C".into(),
            token_id: token.into(),
            buyer: buyer.into(),
            seller: seller.into(),
            price,
            currency: currency.into(),
            timestamp: 1_000_000 + day * DAY,
        }
    }

    #[test]
    fn item_price_is_mean_over_eth_and_weth() {
        let log = TransactionLog::new(vec![sale("t", "a", "b", 1.0, "ETH", 0), sale("t", "c", "a", 3.0, "WETH", 1)]);
        assert_eq!(build_item_scalar_features(&log)["t"].price, 2.0);
    }

    #[test]
    fn other_currencies_count_as_zero() {
        let log = TransactionLog::new(vec![sale("t", "a", "b", 2.0, "ETH", 0), sale("t", "c", "a", 4.0, "USDC", 1)]);
        assert_eq!(build_item_scalar_features(&log)["t"].price, 1.0);
    }

    #[test]
    fn holding_period_is_mean_gap() {
        let log = TransactionLog::new(vec![
            sale("t", "a", "b", 1.0, "ETH", 0),
            sale("t", "c", "a", 1.0, "ETH", 10),
            sale("t", "d", "c", 1.0, "ETH", 30),
            sale("solo", "d", "x", 1.0, "ETH", 5),
        ]);
        let f = build_item_scalar_features(&log);
        assert_eq!(f["t"].holding_days, 15.0);
        assert_eq!(f["solo"].holding_days, 0.0);
    }

    #[test]
    fn user_features_price_holding_and_count() {
        let log = TransactionLog::new(vec![
            sale("t1", "u", "s", 1.0, "ETH", 0),
            sale("t2", "u", "s", 3.0, "ETH", 2),
            sale("t1", "v", "u", 5.0, "ETH", 8),
            sale("t3", "w", "z", 1.0, "ETH", 10),
        ]);
        let f = build_user_features(&log, &["u".to_string(), "v".to_string()]).unwrap();
        let u = f.values().row(0);
        assert_eq!(u[0], 2.0);
        // t1 held 8 days; t2 never resold so held to the end of the log (day 10).
        assert_eq!(u[1], (8.0 + 8.0) / 2.0);
        assert_eq!(u[2], 3.0);
        let v = f.values().row(1);
        assert_eq!(v, &[5.0, 2.0, 1.0]);
    }

    #[test]
    fn five_purchases_count_five() {
        let log = TransactionLog::new((0..5).map(|k| sale(&format!("t{k}"), "u", "s", 1.0, "ETH", k)).collect());
        let f = build_user_features(&log, &["u".to_string()]).unwrap();
        assert_eq!(f.values().row(0)[2], 5.0);
    }

    #[test]
    fn tiling() {
        assert_eq!(tile_scalar(2.5, SCALAR_TILE_DIM), vec![2.5; 64]);
        assert!(tile_scalar(0.0, 64).iter().all(|&v| v == 0.0));
        assert_eq!(tile_scalar(7.0, 1), vec![7.0]);
    }

    #[test]
    fn zscore_handles_constant_columns() {
        let t = Tensor::matrix(3, 2, vec![1.0, 5.0, 2.0, 5.0, 3.0, 5.0]).unwrap();
        let z = zscore_columns(&t);
        let col0: Vec<f64> = (0..3).map(|r| z.row(r)[0]).collect();
        assert!((col0.iter().sum::<f64>()).abs() < 1e-12);
        assert!((col0[2] - 1.224744871391589).abs() < 1e-12);
        assert!((0..3).all(|r| z.row(r)[1] == 0.0));
    }
}
