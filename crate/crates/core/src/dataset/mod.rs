//! Transaction ingestion, implicit-feedback construction, splitting and
//! negative sampling.

mod interactions;
mod io;
mod power_law;
mod sampling;
mod split;
mod transactions;

pub use interactions::{Interaction, InteractionMatrix, Pair};
pub use io::{read_interactions, read_split, write_interactions, write_split};
pub use power_law::{power_law_report, DegreeRow, PowerLawReport};
pub use sampling::{sample_negatives, PopularitySampler, Triple, NEGATIVES_PER_POSITIVE};
pub use split::{split_interactions, Split, SplitAssignment, HELD_OUT_FRACTION};
pub use transactions::{
    compute_price_labels, drop_incomplete_items, filter_users, load_transactions, parse_transactions,
    price_in_eth, EventKey, PriceLabels, TransactionLog, TransactionRecord, MIN_USER_INTERACTIONS,
};

use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum DatasetError {
    #[error("failed to read {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("line {line}, column {column}: {message}")]
    Parse {
        line: u64,
        column: String,
        message: String,
    },
    #[error("line {line}: {message}")]
    InvalidRecord { line: u64, message: String },
    #[error("{0}")]
    Empty(String),
    #[error("no users have at least {0} interactions")]
    NoUsers(usize),
    #[error("user {0} would lose all training interactions")]
    NoTrainingInteractions(String),
    #[error("user {user} has fewer than {needed} candidate negative items")]
    NegativesExhausted { user: String, needed: usize },
    #[error("{0}")]
    Csv(#[from] csv::Error),
}

pub type Result<T> = std::result::Result<T, DatasetError>;
