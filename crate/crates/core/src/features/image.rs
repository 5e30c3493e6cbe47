//! Convolutional autoencoder producing 64-dimensional image embeddings.
//!
//! Encoder: four stages of 3×3 convolution, ReLU and 2×2 max-pooling take a
//! 128×128×3 image down to 8×8×1. The decoder mirrors it with 2×2
//! nearest-neighbour upsampling followed by 3×3 convolutions; its last
//! layer is linear. Training minimizes pixel MSE with Adam.

use std::fs::File;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{FeatureError, Result};

pub const IMAGE_SIDE: usize = 128;
pub const BOTTLENECK_DIM: usize = 64;
const CHANNELS: usize = 3;
const STAGES: usize = 4;
const HIDDEN: usize = 4;
const BATCH: usize = 8;
const LEARNING_RATE: f64 = 5e-3;

/// An RGB image in channel-major order with values in `[0, 1]`.
#[derive(Clone, Debug, PartialEq)]
pub struct ImageArray {
    side: usize,
    data: Vec<f64>,
}

impl ImageArray {
    pub fn new(side: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != CHANNELS * side * side {
            return Err(FeatureError::Image {
                name: "<array>".into(),
                message: format!("expected {}x{}x3 values, got {}", side, side, data.len()),
            });
        }
        if data.iter().any(|v| !v.is_finite() || *v < 0.0 || *v > 1.0) {
            return Err(FeatureError::Image {
                name: "<array>".into(),
                message: "pixel values must lie in [0, 1]".into(),
            });
        }
        Ok(ImageArray { side, data })
    }

    pub fn side(&self) -> usize {
        self.side
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }
}

/// Decodes a raster file and resamples it to 128×128 RGB.
pub fn read_image(path: &Path) -> Result<ImageArray> {
    let img = image::open(path).map_err(|e| FeatureError::Image {
        name: path.display().to_string(),
        message: e.to_string(),
    })?;
    let rgb = img
        .resize_exact(IMAGE_SIDE as u32, IMAGE_SIDE as u32, image::imageops::FilterType::Triangle)
        .to_rgb8();
    let plane = IMAGE_SIDE * IMAGE_SIDE;
    let mut data = vec![0.0; CHANNELS * plane];
    for (x, y, px) in rgb.enumerate_pixels() {
        let at = y as usize * IMAGE_SIDE + x as usize;
        for c in 0..CHANNELS {
            data[c * plane + at] = f64::from(px[c]) / 255.0;
        }
    }
    ImageArray::new(IMAGE_SIDE, data)
}

/// Reads a `token_id,filename` manifest; filenames resolve against the
/// manifest's directory.
pub fn load_image_manifest(path: &Path) -> Result<Vec<(String, PathBuf)>> {
    let file = File::open(path).map_err(|source| FeatureError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    let base = path.parent().unwrap_or(Path::new("."));
    let mut reader = csv::ReaderBuilder::new().has_headers(true).trim(csv::Trim::All).from_reader(file);
    let mut out = Vec::new();
    for (k, row) in reader.records().enumerate() {
        let row = row.map_err(|e| FeatureError::Parse {
            path: path.display().to_string(),
            line: k + 2,
            message: e.to_string(),
        })?;
        match (row.get(0), row.get(1)) {
            (Some(token), Some(name)) if !token.is_empty() && !name.is_empty() => {
                out.push((token.to_string(), base.join(name)));
            }
            _ => {
                return Err(FeatureError::Parse {
                    path: path.display().to_string(),
                    line: k + 2,
                    message: "expected token_id,filename".into(),
                })
            }
        }
    }
    Ok(out)
}

#[derive(Clone, Debug, PartialEq)]
struct Conv {
    cin: usize,
    cout: usize,
    weight: Vec<f64>,
    bias: Vec<f64>,
}

impl Conv {
    fn new<R: Rng>(cin: usize, cout: usize, rng: &mut R) -> Self {
        let bound = (6.0 / ((cin + cout) * 9) as f64).sqrt();
        let weight = (0..cout * cin * 9).map(|_| rng.random_range(-bound..bound)).collect();
        Conv {
            cin,
            cout,
            weight,
            bias: vec![0.0; cout],
        }
    }

    fn zeros_like(&self) -> Self {
        Conv {
            cin: self.cin,
            cout: self.cout,
            weight: vec![0.0; self.weight.len()],
            bias: vec![0.0; self.bias.len()],
        }
    }

    fn w(&self, co: usize, ci: usize, ky: usize, kx: usize) -> f64 {
        self.weight[((co * self.cin + ci) * 3 + ky) * 3 + kx]
    }

    /// Valid output column range for kernel column `kx` with same padding.
    fn span(side: usize, k: usize) -> (usize, usize) {
        (1usize.saturating_sub(k), (side + 1 - k).min(side))
    }

    fn forward(&self, x: &[f64], side: usize) -> Vec<f64> {
        let plane = side * side;
        let mut out = vec![0.0; self.cout * plane];
        for co in 0..self.cout {
            let o = &mut out[co * plane..(co + 1) * plane];
            o.iter_mut().for_each(|v| *v = self.bias[co]);
            for ci in 0..self.cin {
                let input = &x[ci * plane..(ci + 1) * plane];
                for ky in 0..3 {
                    let (y0, y1) = Self::span(side, ky);
                    for kx in 0..3 {
                        let w = self.w(co, ci, ky, kx);
                        let (x0, x1) = Self::span(side, kx);
                        for y in y0..y1 {
                            let iy = y + ky - 1;
                            let orow = &mut o[y * side + x0..y * side + x1];
                            let irow = &input[iy * side + x0 + kx - 1..iy * side + x1 + kx - 1];
                            for (ov, iv) in orow.iter_mut().zip(irow) {
                                *ov += w * iv;
                            }
                        }
                    }
                }
            }
        }
        out
    }

    /// Accumulates parameter gradients into `grad` and returns d loss / d x.
    fn backward(&self, x: &[f64], side: usize, g: &[f64], grad: &mut Conv) -> Vec<f64> {
        let plane = side * side;
        let mut dx = vec![0.0; self.cin * plane];
        for co in 0..self.cout {
            let go = &g[co * plane..(co + 1) * plane];
            grad.bias[co] += go.iter().sum::<f64>();
            for ci in 0..self.cin {
                let input = &x[ci * plane..(ci + 1) * plane];
                let dxi = &mut dx[ci * plane..(ci + 1) * plane];
                for ky in 0..3 {
                    let (y0, y1) = Self::span(side, ky);
                    for kx in 0..3 {
                        let w = self.w(co, ci, ky, kx);
                        let (x0, x1) = Self::span(side, kx);
                        let mut dw = 0.0;
                        for y in y0..y1 {
                            let iy = y + ky - 1;
                            let grow = &go[y * side + x0..y * side + x1];
                            let start = iy * side + x0 + kx - 1;
                            let irow = &input[start..start + (x1 - x0)];
                            let drow = &mut dxi[start..start + (x1 - x0)];
                            for ((gv, iv), dv) in grow.iter().zip(irow).zip(drow.iter_mut()) {
                                dw += gv * iv;
                                *dv += w * gv;
                            }
                        }
                        grad.weight[((co * self.cin + ci) * 3 + ky) * 3 + kx] += dw;
                    }
                }
            }
        }
        dx
    }
}

fn relu_inplace(x: &mut [f64]) {
    x.iter_mut().for_each(|v| *v = v.max(0.0));
}

fn relu_backward(out: &[f64], g: &mut [f64]) {
    for (gv, &o) in g.iter_mut().zip(out) {
        if o <= 0.0 {
            *gv = 0.0;
        }
    }
}

/// 2×2 max-pool; returns pooled values and the winning input offsets.
fn max_pool(x: &[f64], channels: usize, side: usize) -> (Vec<f64>, Vec<usize>) {
    let half = side / 2;
    let mut out = Vec::with_capacity(channels * half * half);
    let mut arg = Vec::with_capacity(channels * half * half);
    for c in 0..channels {
        let base = c * side * side;
        for y in 0..half {
            for xx in 0..half {
                let mut best = base + 2 * y * side + 2 * xx;
                for (dy, dx) in [(0, 1), (1, 0), (1, 1)] {
                    let at = base + (2 * y + dy) * side + 2 * xx + dx;
                    if x[at] > x[best] {
                        best = at;
                    }
                }
                out.push(x[best]);
                arg.push(best);
            }
        }
    }
    (out, arg)
}

fn upsample(x: &[f64], channels: usize, side: usize) -> Vec<f64> {
    let big = side * 2;
    let mut out = vec![0.0; channels * big * big];
    for c in 0..channels {
        for y in 0..big {
            for xx in 0..big {
                out[c * big * big + y * big + xx] = x[c * side * side + (y / 2) * side + xx / 2];
            }
        }
    }
    out
}

fn upsample_backward(g: &[f64], channels: usize, side: usize) -> Vec<f64> {
    let big = side * 2;
    let mut dx = vec![0.0; channels * side * side];
    for c in 0..channels {
        for y in 0..big {
            for xx in 0..big {
                dx[c * side * side + (y / 2) * side + xx / 2] += g[c * big * big + y * big + xx];
            }
        }
    }
    dx
}

struct Cache {
    /// Input to each encoder conv, then each decoder conv.
    inputs: Vec<Vec<f64>>,
    /// Post-ReLU activations for every conv except the last.
    activations: Vec<Vec<f64>>,
    argmax: Vec<Vec<usize>>,
    bottleneck: Vec<f64>,
    output: Vec<f64>,
}

/// Encoder-decoder pair trained on image reconstruction.
#[derive(Clone, Debug, PartialEq)]
pub struct ConvAutoencoder {
    input_side: usize,
    layers: Vec<Conv>,
}

impl ConvAutoencoder {
    /// `input_side` must be a positive multiple of 16.
    pub fn new(input_side: usize, seed: u64) -> Result<Self> {
        if input_side == 0 || input_side % (1 << STAGES) != 0 {
            return Err(FeatureError::Image {
                name: "<model>".into(),
                message: format!("input side {input_side} is not a multiple of 16"),
            });
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let enc = [(CHANNELS, HIDDEN), (HIDDEN, HIDDEN), (HIDDEN, HIDDEN), (HIDDEN, 1)];
        let dec = [(1, HIDDEN), (HIDDEN, HIDDEN), (HIDDEN, HIDDEN), (HIDDEN, CHANNELS)];
        let layers = enc
            .iter()
            .chain(&dec)
            .map(|&(cin, cout)| Conv::new(cin, cout, &mut rng))
            .collect();
        Ok(ConvAutoencoder { input_side, layers })
    }

    pub fn input_side(&self) -> usize {
        self.input_side
    }

    pub fn embedding_dim(&self) -> usize {
        let s = self.input_side >> STAGES;
        s * s
    }

    fn check(&self, image: &ImageArray) -> Result<()> {
        if image.side != self.input_side {
            return Err(FeatureError::Image {
                name: "<array>".into(),
                message: format!(
                    "expected {}x{}x3 input, got {}x{}x3",
                    self.input_side, self.input_side, image.side, image.side
                ),
            });
        }
        Ok(())
    }

    fn run(&self, image: &[f64]) -> Cache {
        let mut cache = Cache {
            inputs: Vec::with_capacity(2 * STAGES),
            activations: Vec::with_capacity(2 * STAGES),
            argmax: Vec::with_capacity(STAGES),
            bottleneck: Vec::new(),
            output: Vec::new(),
        };
        let mut side = self.input_side;
        let mut x = image.to_vec();
        for layer in &self.layers[..STAGES] {
            let mut h = layer.forward(&x, side);
            relu_inplace(&mut h);
            let (pooled, arg) = max_pool(&h, layer.cout, side);
            cache.inputs.push(std::mem::replace(&mut x, pooled));
            cache.activations.push(h);
            cache.argmax.push(arg);
            side /= 2;
        }
        cache.bottleneck = x.clone();
        for (k, layer) in self.layers[STAGES..].iter().enumerate() {
            let up = upsample(&x, layer.cin, side);
            side *= 2;
            let mut h = layer.forward(&up, side);
            cache.inputs.push(up);
            if k + 1 < STAGES {
                relu_inplace(&mut h);
                cache.activations.push(h.clone());
            }
            x = h;
        }
        cache.output = x;
        cache
    }

    /// Flattened bottleneck activation.
    pub fn encode(&self, image: &ImageArray) -> Result<Vec<f64>> {
        self.check(image)?;
        Ok(self.run(&image.data).bottleneck)
    }

    pub fn reconstruct(&self, image: &ImageArray) -> Result<Vec<f64>> {
        self.check(image)?;
        Ok(self.run(&image.data).output)
    }

    pub fn mse(&self, image: &ImageArray) -> Result<f64> {
        let out = self.reconstruct(image)?;
        Ok(mse(&out, &image.data))
    }

    /// Reconstruction MSE and its gradient for one image.
    fn loss_and_grad(&self, image: &[f64]) -> (f64, Vec<Conv>) {
        let cache = self.run(image);
        let n = image.len() as f64;
        let loss = mse(&cache.output, image);
        let mut grads: Vec<Conv> = self.layers.iter().map(Conv::zeros_like).collect();
        let mut g: Vec<f64> = cache.output.iter().zip(image).map(|(o, t)| 2.0 * (o - t) / n).collect();
        let mut side = self.input_side;
        for k in (0..STAGES).rev() {
            let layer = &self.layers[STAGES + k];
            if k + 1 < STAGES {
                relu_backward(&cache.activations[STAGES + k], &mut g);
            }
            let dx = layer.backward(&cache.inputs[STAGES + k], side, &g, &mut grads[STAGES + k]);
            side /= 2;
            g = upsample_backward(&dx, layer.cin, side);
        }
        for k in (0..STAGES).rev() {
            let layer = &self.layers[k];
            let mut dh = vec![0.0; layer.cout * side * 2 * side * 2];
            for (gv, &at) in g.iter().zip(&cache.argmax[k]) {
                dh[at] += gv;
            }
            side *= 2;
            relu_backward(&cache.activations[k], &mut dh);
            g = layer.backward(&cache.inputs[k], side, &dh, &mut grads[k]);
        }
        (loss, grads)
    }

    fn params_mut(&mut self) -> impl Iterator<Item = &mut f64> {
        self.layers
            .iter_mut()
            .flat_map(|l| l.weight.iter_mut().chain(l.bias.iter_mut()))
    }
}

fn mse(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>() / a.len() as f64
}

/// Reconstruction error before training, after each epoch, and at the end.
#[derive(Clone, Debug, PartialEq)]
pub struct AutoencoderTrace {
    pub initial_mse: f64,
    pub epoch_mse: Vec<f64>,
    pub final_mse: f64,
}

fn mean_mse(model: &ConvAutoencoder, images: &[ImageArray]) -> Result<f64> {
    let mut total = 0.0;
    for img in images {
        total += model.mse(img)?;
    }
    Ok(total / images.len() as f64)
}

/// Trains the autoencoder on 128×128×3 images with mini-batch Adam.
pub fn train_image_autoencoder(
    images: &[ImageArray],
    epochs: usize,
    seed: u64,
) -> Result<(ConvAutoencoder, AutoencoderTrace)> {
    train_autoencoder_at(images, IMAGE_SIDE, epochs, seed)
}

pub(crate) fn train_autoencoder_at(
    images: &[ImageArray],
    side: usize,
    epochs: usize,
    seed: u64,
) -> Result<(ConvAutoencoder, AutoencoderTrace)> {
    let mut model = ConvAutoencoder::new(side, seed)?;
    if images.is_empty() {
        return Err(FeatureError::Image {
            name: "<set>".into(),
            message: "no images to train on".into(),
        });
    }
    for img in images {
        model.check(img)?;
    }
    let initial_mse = mean_mse(&model, images)?;
    let n_params = model.params_mut().count();
    let (mut m, mut v) = (vec![0.0; n_params], vec![0.0; n_params]);
    let (b1, b2, eps) = (0.9f64, 0.999f64, 1e-8);
    let mut step = 0i32;
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x9e37_79b9);
    let mut order: Vec<usize> = (0..images.len()).collect();
    let mut epoch_mse = Vec::with_capacity(epochs);
    for _ in 0..epochs {
        order.shuffle(&mut rng);
        let mut epoch_loss = 0.0;
        for batch in order.chunks(BATCH) {
            let mut total: Option<Vec<f64>> = None;
            for &i in batch {
                let (loss, grads) = model.loss_and_grad(&images[i].data);
                epoch_loss += loss;
                let flat = grads.into_iter().flat_map(|c| c.weight.into_iter().chain(c.bias));
                match total.as_mut() {
                    None => total = Some(flat.collect()),
                    Some(t) => t.iter_mut().zip(flat).for_each(|(a, b)| *a += b),
                }
            }
            let grad = total.expect("batch is nonempty");
            let scale = 1.0 / batch.len() as f64;
            step += 1;
            let (c1, c2) = (1.0 - b1.powi(step), 1.0 - b2.powi(step));
            for (k, p) in model.params_mut().enumerate() {
                let g = grad[k] * scale;
                m[k] = b1 * m[k] + (1.0 - b1) * g;
                v[k] = b2 * v[k] + (1.0 - b2) * g * g;
                *p -= LEARNING_RATE * (m[k] / c1) / ((v[k] / c2).sqrt() + eps);
            }
        }
        epoch_mse.push(epoch_loss / images.len() as f64);
    }
    let final_mse = mean_mse(&model, images)?;
    Ok((
        model,
        AutoencoderTrace {
            initial_mse,
            epoch_mse,
            final_mse,
        },
    ))
}
