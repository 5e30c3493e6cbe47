use std::collections::BTreeMap;

use super::{DatasetError, EventKey, PriceLabels, Result, TransactionLog};

/// One purchase event, with user and item as indices into the matrix.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Interaction {
    pub user: usize,
    pub item: usize,
    pub timestamp: i64,
    pub price_eth: f64,
    pub label: u8,
}

/// A distinct (user, item) entry of the binary feedback matrix.
///
/// Repeat purchases collapse into one pair; `timestamp` and `label` come
/// from the user's latest purchase of the item.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Pair {
    pub user: usize,
    pub item: usize,
    pub timestamp: i64,
    pub label: u8,
}

/// Implicit feedback of one collection plus per-event price labels.
#[derive(Clone, Debug, PartialEq)]
pub struct InteractionMatrix {
    users: Vec<String>,
    items: Vec<String>,
    interactions: Vec<Interaction>,
    pairs: Vec<Pair>,
}

impl InteractionMatrix {
    pub fn new(users: Vec<String>, items: Vec<String>, mut interactions: Vec<Interaction>) -> Result<Self> {
        if users.is_empty() || items.is_empty() || interactions.is_empty() {
            return Err(DatasetError::Empty("interaction matrix needs users, items and events".into()));
        }
        for ev in &interactions {
            if ev.user >= users.len() || ev.item >= items.len() {
                return Err(DatasetError::Empty(format!(
                    "interaction ({}, {}) references an unknown user or item",
                    ev.user, ev.item
                )));
            }
            if ev.label > 1 {
                return Err(DatasetError::Empty(format!("price label {} is not binary", ev.label)));
            }
        }
        interactions.sort_by_key(|ev| (ev.user, ev.item, ev.timestamp));
        let mut latest: BTreeMap<(usize, usize), Pair> = BTreeMap::new();
        for ev in &interactions {
            latest.insert(
                (ev.user, ev.item),
                Pair {
                    user: ev.user,
                    item: ev.item,
                    timestamp: ev.timestamp,
                    label: ev.label,
                },
            );
        }
        Ok(InteractionMatrix {
            users,
            items,
            interactions,
            pairs: latest.into_values().collect(),
        })
    }

    /// Builds the matrix from a filtered log; every buyer becomes a user.
    pub fn from_log(log: &TransactionLog, labels: &PriceLabels) -> Result<Self> {
        let users: Vec<String> = log.buyers().into_iter().map(str::to_string).collect();
        let items: Vec<String> = log.tokens().into_iter().map(str::to_string).collect();
        let user_index: BTreeMap<&str, usize> = users.iter().enumerate().map(|(i, u)| (u.as_str(), i)).collect();
        let item_index: BTreeMap<&str, usize> = items.iter().enumerate().map(|(i, t)| (t.as_str(), i)).collect();
        let interactions = log
            .records()
            .iter()
            .map(|r| Interaction {
                user: user_index[r.buyer.as_str()],
                item: item_index[r.token_id.as_str()],
                timestamp: r.timestamp,
                price_eth: r.price_eth(),
                label: labels.get(&EventKey::of(r)).copied().unwrap_or(0),
            })
            .collect();
        InteractionMatrix::new(users, items, interactions)
    }

    pub fn users(&self) -> &[String] {
        &self.users
    }

    pub fn items(&self) -> &[String] {
        &self.items
    }

    pub fn n_users(&self) -> usize {
        self.users.len()
    }

    pub fn n_items(&self) -> usize {
        self.items.len()
    }

    /// Purchase events ordered by (user, item, timestamp).
    pub fn interactions(&self) -> &[Interaction] {
        &self.interactions
    }

    /// Distinct (user, item) pairs ordered by user then item.
    pub fn pairs(&self) -> &[Pair] {
        &self.pairs
    }

    /// Price label of a purchase event, if that event exists.
    pub fn price_label(&self, user: usize, item: usize, timestamp: i64) -> Option<u8> {
        self.interactions
            .iter()
            .find(|ev| ev.user == user && ev.item == item && ev.timestamp == timestamp)
            .map(|ev| ev.label)
    }

    /// Items each user has interacted with, sorted.
    pub fn items_by_user(&self) -> Vec<Vec<usize>> {
        let mut out = vec![Vec::new(); self.users.len()];
        for p in &self.pairs {
            out[p.user].push(p.item);
        }
        out
    }
}
