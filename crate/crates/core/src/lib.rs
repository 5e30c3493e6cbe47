//! Multi-modal graph-attention recommender for NFT transaction data.
//!
//! The pipeline runs from raw sale exports to ranked recommendations:
//! [`dataset`] turns transactions into implicit feedback and price-movement
//! labels, [`features`] builds the four item modalities and user features,
//! [`graph`] propagates gated attention over one bipartite graph per
//! modality, [`fusion`] weighs the modalities per user, [`heads`] scores
//! and trains the recommendation and price tasks, [`training`] optimizes
//! the whole model, and [`evaluation`] measures top-K quality.

pub mod numerics;
pub mod dataset;
pub mod features;
pub mod graph;
pub mod fusion;
pub mod heads;
pub mod training;
pub mod evaluation;
pub mod synthetic;
pub mod pipeline;
