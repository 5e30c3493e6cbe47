//! Per-modality bipartite graphs and gated attention propagation.
//!
//! Nodes are numbered users first (`0..n_users`) and then items
//! (`n_users..n_users + n_items`). All four modalities share one topology
//! built from the training split; they differ in item features and weights.

mod propagate;

pub use propagate::{attention_and_gate, init_embeddings, initial_states, propagate};

use std::sync::Arc;

use rand::Rng;
use rand_distr::{Distribution, Normal};
use thiserror::Error;

use crate::dataset::{InteractionMatrix, Split, SplitAssignment};
use crate::features::{ItemFeatureSet, Modality};
use crate::numerics::{NumericsError, Tensor};

#[derive(Debug, Error)]
pub enum GraphError {
    #[error("user {0} has no training interactions")]
    IsolatedUser(String),
    #[error("{what}: expected {expected} rows, found {found}")]
    RowMismatch {
        what: &'static str,
        expected: usize,
        found: usize,
    },
    #[error("hops must be 1, 2 or 3, got {0}")]
    Hops(usize),
    #[error(transparent)]
    Numerics(#[from] NumericsError),
}

pub type Result<T> = std::result::Result<T, GraphError>;

/// Undirected user–item adjacency shared by every modality.
#[derive(Clone, Debug, PartialEq)]
pub struct Topology {
    n_users: usize,
    n_items: usize,
    neighbors: Vec<Vec<usize>>,
    /// Directed message edges `src → dst`, grouped by destination.
    dst: Arc<[usize]>,
    src: Arc<[usize]>,
}

impl Topology {
    /// Builds the adjacency from `(user, item)` edges; duplicates collapse.
    pub fn new(n_users: usize, n_items: usize, edges: &[(usize, usize)]) -> Result<Self> {
        let n = n_users + n_items;
        let mut neighbors = vec![Vec::new(); n];
        for &(u, i) in edges {
            if u >= n_users || i >= n_items {
                return Err(NumericsError::IndexOutOfBounds {
                    op: "topology",
                    index: if u >= n_users { u } else { i },
                    len: if u >= n_users { n_users } else { n_items },
                }
                .into());
            }
            neighbors[u].push(n_users + i);
            neighbors[n_users + i].push(u);
        }
        for list in &mut neighbors {
            list.sort_unstable();
            list.dedup();
        }
        let mut dst = Vec::new();
        let mut src = Vec::new();
        for (h, list) in neighbors.iter().enumerate() {
            for &t in list {
                dst.push(h);
                src.push(t);
            }
        }
        Ok(Topology {
            n_users,
            n_items,
            neighbors,
            dst: dst.into(),
            src: src.into(),
        })
    }

    pub fn n_users(&self) -> usize {
        self.n_users
    }

    pub fn n_items(&self) -> usize {
        self.n_items
    }

    pub fn n_nodes(&self) -> usize {
        self.n_users + self.n_items
    }

    pub fn item_node(&self, item: usize) -> usize {
        self.n_users + item
    }

    pub fn neighbors(&self, node: usize) -> &[usize] {
        &self.neighbors[node]
    }

    pub fn degree(&self, node: usize) -> usize {
        self.neighbors[node].len()
    }

    /// Number of undirected edges.
    pub fn n_edges(&self) -> usize {
        self.dst.len() / 2
    }

    pub fn message_dst(&self) -> Arc<[usize]> {
        self.dst.clone()
    }

    pub fn message_src(&self) -> Arc<[usize]> {
        self.src.clone()
    }
}

/// One modality's view of the interaction graph.
#[derive(Clone, Debug, PartialEq)]
pub struct ModalGraph {
    pub modality: Modality,
    pub topology: Arc<Topology>,
    /// One row per item.
    pub item_features: Tensor,
    /// One row per user, already normalized.
    pub user_features: Tensor,
}

impl ModalGraph {
    pub fn feature_dim(&self) -> usize {
        self.item_features.cols()
    }
}

/// Builds the four modality graphs over training-split edges.
///
/// Every user must keep at least one training edge. Items without
/// training edges stay in the graph and receive no messages.
pub fn build_modal_graphs(
    m: &InteractionMatrix,
    split: &SplitAssignment,
    features: &ItemFeatureSet,
    user_features: &Tensor,
) -> Result<[ModalGraph; 4]> {
    if features.n_items() != m.n_items() {
        return Err(GraphError::RowMismatch {
            what: "item features",
            expected: m.n_items(),
            found: features.n_items(),
        });
    }
    if user_features.rows() != m.n_users() {
        return Err(GraphError::RowMismatch {
            what: "user features",
            expected: m.n_users(),
            found: user_features.rows(),
        });
    }
    let edges: Vec<(usize, usize)> = m
        .pairs()
        .iter()
        .zip(split.tags())
        .filter(|(_, tag)| **tag == Split::Train)
        .map(|(p, _)| (p.user, p.item))
        .collect();
    let topology = Arc::new(Topology::new(m.n_users(), m.n_items(), &edges)?);
    if let Some(u) = (0..m.n_users()).find(|&u| topology.degree(u) == 0) {
        return Err(GraphError::IsolatedUser(m.users()[u].clone()));
    }
    Ok(Modality::ALL.map(|modality| ModalGraph {
        modality,
        topology: topology.clone(),
        item_features: features.get(modality).clone(),
        user_features: user_features.clone(),
    }))
}

/// Uniform Glorot initialization for a `[fan_in, fan_out]` matrix.
pub fn glorot<R: Rng>(fan_in: usize, fan_out: usize, rng: &mut R) -> Tensor {
    let bound = (6.0 / (fan_in + fan_out) as f64).sqrt();
    let data = (0..fan_in * fan_out).map(|_| rng.random_range(-bound..=bound)).collect();
    Tensor::matrix(fan_in, fan_out, data).expect("shape matches data")
}

/// Node ID embeddings drawn from N(0, 0.01²).
pub fn init_id_embeddings<R: Rng>(n_nodes: usize, d: usize, rng: &mut R) -> Tensor {
    let normal = Normal::new(0.0, 0.01).expect("valid deviation");
    let data = (0..n_nodes * d).map(|_| normal.sample(rng)).collect();
    Tensor::matrix(n_nodes, d, data).expect("shape matches data")
}

/// Trainable matrices of one modality's propagation, row-vector convention
/// (`h · W`).
///
/// Layer 1 maps the native feature width to `d`; deeper layers share the
/// `d → d` message and self transforms. The combine transform is shared by
/// all layers.
#[derive(Clone, Debug, PartialEq)]
pub struct PropagationWeights<T> {
    /// `[user_feature_dim, d_m]`.
    pub user_proj: T,
    /// `[d_m, d]`.
    pub message: T,
    /// `[d_m, d]`.
    pub self_loop: T,
    /// `[d, d]`, present when hops > 1.
    pub message_deep: Option<T>,
    /// `[d, d]`, present when hops > 1.
    pub self_loop_deep: Option<T>,
    /// `[d, d]`.
    pub combine: T,
}

impl PropagationWeights<Tensor> {
    pub fn init<R: Rng>(user_dim: usize, feature_dim: usize, d: usize, hops: usize, rng: &mut R) -> Self {
        let user_proj = glorot(user_dim, feature_dim, rng);
        let message = glorot(feature_dim, d, rng);
        let self_loop = glorot(feature_dim, d, rng);
        let (message_deep, self_loop_deep) = if hops > 1 {
            (Some(glorot(d, d, rng)), Some(glorot(d, d, rng)))
        } else {
            (None, None)
        };
        let combine = glorot(d, d, rng);
        PropagationWeights {
            user_proj,
            message,
            self_loop,
            message_deep,
            self_loop_deep,
            combine,
        }
    }
}

impl<T> PropagationWeights<T> {
    /// Applies `f` to every tensor along with its short name.
    pub fn try_map<U, E>(&self, mut f: impl FnMut(&str, &T) -> std::result::Result<U, E>) -> std::result::Result<PropagationWeights<U>, E> {
        Ok(PropagationWeights {
            user_proj: f("user_proj", &self.user_proj)?,
            message: f("message", &self.message)?,
            self_loop: f("self_loop", &self.self_loop)?,
            message_deep: self.message_deep.as_ref().map(|t| f("message_deep", t)).transpose()?,
            self_loop_deep: self.self_loop_deep.as_ref().map(|t| f("self_loop_deep", t)).transpose()?,
            combine: f("combine", &self.combine)?,
        })
    }

    /// Every tensor with its short name, in a fixed order.
    pub fn entries(&self) -> Vec<(&'static str, &T)> {
        let mut out = vec![
            ("user_proj", &self.user_proj),
            ("message", &self.message),
            ("self_loop", &self.self_loop),
        ];
        if let Some(t) = &self.message_deep {
            out.push(("message_deep", t));
        }
        if let Some(t) = &self.self_loop_deep {
            out.push(("self_loop_deep", t));
        }
        out.push(("combine", &self.combine));
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::Interaction;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn matrix(edges: &[(usize, usize)], users: usize, items: usize) -> InteractionMatrix {
        let interactions = edges
            .iter()
            .enumerate()
            .map(|(k, &(user, item))| Interaction {
                user,
                item,
                timestamp: 1 + k as i64,
                price_eth: 1.0,
                label: 0,
            })
            .collect();
        InteractionMatrix::new(
            (0..users).map(|u| format!("u{u}")).collect(),
            (0..items).map(|i| format!("i{i}")).collect(),
            interactions,
        )
        .unwrap()
    }

    fn features(items: usize) -> ItemFeatureSet {
        ItemFeatureSet::new([
            Tensor::filled(&[items, 4], 0.1),
            Tensor::filled(&[items, 6], 0.2),
            Tensor::filled(&[items, 2], 0.3),
            Tensor::filled(&[items, 2], 0.4),
        ])
        .unwrap()
    }

    #[test]
    fn four_graphs_share_topology() {
        let m = matrix(&[(0, 0), (0, 1), (1, 1), (1, 2)], 2, 3);
        let split = SplitAssignment::new(&m, vec![Split::Train; 4]).unwrap();
        let graphs = build_modal_graphs(&m, &split, &features(3), &Tensor::zeros(&[2, 3])).unwrap();
        for g in &graphs {
            assert_eq!(g.topology.n_edges(), 4);
            assert_eq!(g.topology, graphs[0].topology);
        }
        assert_eq!(graphs[1].feature_dim(), 6);
        let t = &graphs[0].topology;
        assert_eq!(t.neighbors(0), &[t.item_node(0), t.item_node(1)]);
        assert!(t.neighbors(t.item_node(0)).contains(&0));
    }

    #[test]
    fn held_out_edges_are_excluded() {
        let m = matrix(&[(0, 0), (0, 1), (1, 2)], 2, 3);
        let split = SplitAssignment::new(&m, vec![Split::Train, Split::Test, Split::Train]).unwrap();
        let graphs = build_modal_graphs(&m, &split, &features(3), &Tensor::zeros(&[2, 3])).unwrap();
        assert_eq!(graphs[0].topology.n_edges(), 2);
        assert_eq!(graphs[0].topology.degree(graphs[0].topology.item_node(1)), 0);
    }

    #[test]
    fn isolated_user_is_an_error() {
        let m = matrix(&[(0, 0), (1, 1)], 2, 2);
        let split = SplitAssignment::new(&m, vec![Split::Train, Split::Validation]).unwrap();
        let err = build_modal_graphs(&m, &split, &features(2), &Tensor::zeros(&[2, 3])).unwrap_err();
        assert!(matches!(err, GraphError::IsolatedUser(u) if u == "u1"));
    }

    #[test]
    fn id_embeddings_are_seeded() {
        let a = init_id_embeddings(5, 4, &mut ChaCha8Rng::seed_from_u64(9));
        let b = init_id_embeddings(5, 4, &mut ChaCha8Rng::seed_from_u64(9));
        assert_eq!(a, b);
        assert!(a.data().iter().all(|v| v.abs() < 0.1));
    }

    #[test]
    fn glorot_respects_bound() {
        let w = glorot(10, 6, &mut ChaCha8Rng::seed_from_u64(1));
        let bound = (6.0f64 / 16.0).sqrt();
        assert!(w.data().iter().all(|v| v.abs() <= bound));
        assert_eq!(w.shape(), &[10, 6]);
    }
}
