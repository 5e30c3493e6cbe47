//! Item modality features and user features.

mod embeddings;
mod image;
mod scalar;
mod text;

pub use self::image::{
    load_image_manifest, read_image, train_image_autoencoder, AutoencoderTrace, ConvAutoencoder, ImageArray,
    BOTTLENECK_DIM, IMAGE_SIDE,
};
pub use embeddings::{load_precomputed_embeddings, parse_embeddings, write_embeddings};
pub use scalar::{
    build_item_scalar_features, build_user_features, tile_scalar, zscore_columns, ItemScalars, UserFeatureMatrix,
    SCALAR_TILE_DIM, SECONDS_PER_DAY, USER_FEATURE_DIM,
};
pub use text::{
    assemble_text_embedding, load_traits, parse_traits, select_traits, TraitTable, WordVectorStore, MAX_TRAITS,
    WORD_VECTOR_DIM,
};

use std::collections::BTreeMap;
use std::fmt;
use std::path::PathBuf;

use thiserror::Error;

use crate::numerics::Tensor;

/// The four item feature channels, each with its own graph.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Modality {
    Image,
    Text,
    Price,
    Transaction,
}

impl Modality {
    pub const ALL: [Modality; 4] = [Modality::Image, Modality::Text, Modality::Price, Modality::Transaction];

    pub fn name(self) -> &'static str {
        match self {
            Modality::Image => "image",
            Modality::Text => "text",
            Modality::Price => "price",
            Modality::Transaction => "transaction",
        }
    }

    pub fn index(self) -> usize {
        self as usize
    }
}

impl fmt::Display for Modality {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Error)]
pub enum FeatureError {
    #[error("failed to access {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}, line {line}: {message}")]
    Parse { path: String, line: usize, message: String },
    #[error("item {item}: expected {expected} values, found {found}")]
    DimensionMismatch { item: String, expected: usize, found: usize },
    #[error("item {0} listed more than once")]
    DuplicateItem(String),
    #[error("item {item} has no {modality} feature")]
    MissingItem { item: String, modality: Modality },
    #[error("image {name}: {message}")]
    Image { name: String, message: String },
    #[error("non-finite value in {0} features")]
    NonFinite(String),
    #[error(transparent)]
    Numerics(#[from] crate::numerics::NumericsError),
}

pub type Result<T> = std::result::Result<T, FeatureError>;

/// Per-modality item feature matrices, rows aligned with an item list.
#[derive(Clone, Debug, PartialEq)]
pub struct ItemFeatureSet {
    matrices: [Tensor; 4],
}

impl ItemFeatureSet {
    /// Takes matrices in `Modality::ALL` order; all must share a row count.
    pub fn new(matrices: [Tensor; 4]) -> Result<Self> {
        let rows = matrices[0].rows();
        for (m, t) in Modality::ALL.iter().zip(&matrices) {
            if t.rank() != 2 || t.rows() != rows {
                return Err(FeatureError::DimensionMismatch {
                    item: format!("<{m} matrix>"),
                    expected: rows,
                    found: t.rows(),
                });
            }
            if !t.is_finite() {
                return Err(FeatureError::NonFinite(m.name().into()));
            }
        }
        Ok(ItemFeatureSet { matrices })
    }

    /// Stacks per-item vectors for `items`, in order, for every modality.
    pub fn from_maps(items: &[String], maps: [&BTreeMap<String, Vec<f64>>; 4]) -> Result<Self> {
        let mut matrices = Vec::with_capacity(4);
        for (modality, map) in Modality::ALL.into_iter().zip(maps) {
            let mut rows = Vec::with_capacity(items.len());
            for item in items {
                let v = map.get(item).ok_or_else(|| FeatureError::MissingItem {
                    item: item.clone(),
                    modality,
                })?;
                rows.push(v.clone());
            }
            matrices.push(Tensor::from_rows(&rows)?);
        }
        let matrices: [Tensor; 4] = matrices.try_into().expect("four modalities");
        ItemFeatureSet::new(matrices)
    }

    pub fn get(&self, m: Modality) -> &Tensor {
        &self.matrices[m.index()]
    }

    pub fn n_items(&self) -> usize {
        self.matrices[0].rows()
    }

    /// Feature width of each modality, in `Modality::ALL` order.
    pub fn dims(&self) -> [usize; 4] {
        [0, 1, 2, 3].map(|k| self.matrices[k].cols())
    }
}
