use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{Result, TrainError};
use crate::features::Modality;
use crate::fusion::FusionWeights;
use crate::graph::{init_id_embeddings, PropagationWeights};
use crate::heads::PriceHead;
use crate::numerics::Tensor;

/// Sizes that fix every parameter shape.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ModelDims {
    pub n_users: usize,
    pub n_items: usize,
    pub user_dim: usize,
    /// Native item feature width per modality.
    pub feature_dims: [usize; 4],
    pub dim: usize,
    pub hops: usize,
    pub d_k: usize,
}

impl ModelDims {
    /// Width of a final node representation, `hops · dim`.
    pub fn width(&self) -> usize {
        self.hops * self.dim
    }

    pub fn n_nodes(&self) -> usize {
        self.n_users + self.n_items
    }
}

/// Every trainable tensor of the model.
#[derive(Clone, Debug, PartialEq)]
pub struct ModelParams<T> {
    pub modalities: [PropagationWeights<T>; 4],
    /// Node ID embeddings, `[n_nodes, dim]`, shared by all modalities.
    pub id: T,
    pub fusion: FusionWeights<T>,
    pub price: PriceHead<T>,
}

impl ModelParams<Tensor> {
    pub fn init(dims: &ModelDims, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let modalities = dims
            .feature_dims
            .map(|fd| PropagationWeights::init(dims.user_dim, fd, dims.dim, dims.hops, &mut rng));
        let id = init_id_embeddings(dims.n_nodes(), dims.dim, &mut rng);
        let fusion = FusionWeights::init(dims.width(), dims.d_k, &mut rng);
        let price = PriceHead::init(dims.width(), dims.dim, &mut rng);
        ModelParams {
            modalities,
            id,
            fusion,
            price,
        }
    }

    /// Rebuilds parameters from named tensors, checking every shape against
    /// a fresh initialization for `dims`.
    pub fn from_named(dims: &ModelDims, named: Vec<(String, Tensor)>) -> Result<Self> {
        let template = ModelParams::init(dims, 0);
        let expected = template.entries();
        if named.len() != expected.len() {
            return Err(TrainError::Checkpoint(format!(
                "expected {} tensors, found {}",
                expected.len(),
                named.len()
            )));
        }
        for ((name, t), (want, w)) in named.iter().zip(&expected) {
            if name != want || t.shape() != w.shape() {
                return Err(TrainError::Checkpoint(format!(
                    "tensor {name} {:?} does not match {want} {:?}",
                    t.shape(),
                    w.shape()
                )));
            }
        }
        let mut values = named.into_iter().map(|(_, t)| t);
        Ok(template
            .try_map(|_, _| Ok::<_, std::convert::Infallible>(values.next().expect("count checked")))
            .expect("infallible"))
    }

    pub fn is_finite(&self) -> bool {
        self.entries().iter().all(|(_, t)| t.is_finite())
    }
}

impl<T> ModelParams<T> {
    /// Applies `f` to every tensor in [`ModelParams::entries`] order.
    pub fn try_map<U, E>(&self, mut f: impl FnMut(&str, &T) -> std::result::Result<U, E>) -> std::result::Result<ModelParams<U>, E> {
        let mut modalities = Vec::with_capacity(4);
        for (m, w) in Modality::ALL.iter().zip(&self.modalities) {
            modalities.push(w.try_map(|n, t| f(&format!("{m}.{n}"), t))?);
        }
        let modalities: [PropagationWeights<U>; 4] = match modalities.try_into() {
            Ok(arr) => arr,
            Err(_) => unreachable!("four modalities"),
        };
        let id = f("id_embedding", &self.id)?;
        let fusion = self.fusion.try_map(|n, t| f(&format!("fusion.{n}"), t))?;
        let price = self.price.try_map(|n, t| f(&format!("price.{n}"), t))?;
        Ok(ModelParams {
            modalities,
            id,
            fusion,
            price,
        })
    }

    /// Every tensor with its qualified name, e.g. `image.message`,
    /// `id_embedding`, `fusion.w_q`, `price.w1`.
    pub fn entries(&self) -> Vec<(String, &T)> {
        let mut out = Vec::new();
        for (m, w) in Modality::ALL.iter().zip(&self.modalities) {
            out.extend(w.entries().into_iter().map(|(n, t)| (format!("{m}.{n}"), t)));
        }
        out.push(("id_embedding".to_string(), &self.id));
        out.extend(self.fusion.entries().into_iter().map(|(n, t)| (format!("fusion.{n}"), t)));
        out.extend(self.price.entries().into_iter().map(|(n, t)| (format!("price.{n}"), t)));
        out
    }

    /// Tensors subject to L2 regularization: everything except biases.
    pub fn regularized(&self) -> Vec<&T> {
        self.entries()
            .into_iter()
            .filter(|(n, _)| !n.starts_with("price.b"))
            .map(|(_, t)| t)
            .collect()
    }
}
