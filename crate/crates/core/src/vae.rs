//! Dense two-channel variational auto-encoder with hand-derived gradients.
//!
//! The auto-encoder is the crossover operator of the design loop: it encodes
//! paired images (a material layout channel plus a normalized thickness
//! channel) into one shared latent space and decodes fresh candidates from
//! standard-normal latent draws. Everything — forward pass, reverse-mode
//! gradients, and the adaptive-moment optimizer — is implemented directly on
//! `f64` slices so gradients can be audited against finite differences.

use alloc::vec;
use alloc::vec::Vec;

use rand::seq::SliceRandom;

use crate::rng::{standard_normal, stream};

#[cfg(not(feature = "std"))]
use crate::float::F64Ext;

/// Default latent dimension of the shared code.
pub const DEFAULT_LATENT_DIM: usize = 16;
/// Decoder outputs are clamped into `[CLAMP, 1 - CLAMP]` before any log.
pub const OUTPUT_CLAMP: f64 = 1e-7;
/// Number of equal-width thickness bins used when rebalancing a dataset.
pub const OVERSAMPLE_BINS: usize = 4;

const TRAIN_INIT_TAG: u64 = 0x5641_4549;
const TRAIN_EPOCH_TAG: u64 = 0x5641_4554;
const GENERATE_TAG: u64 = 0x5641_4547;

/// A stack of same-sized image channels with pixel values in `[0, 1]`.
///
/// Pixels are stored channel-major: index `c * height * width + y * width + x`.
#[derive(Clone, Debug, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct MultiChannelImage {
    pub channels: usize,
    pub height: usize,
    pub width: usize,
    pub pixels: Vec<f64>,
}

impl MultiChannelImage {
    /// Wraps a channel-major pixel buffer, checking shape and value range.
    pub fn new(channels: usize, height: usize, width: usize, pixels: Vec<f64>) -> Self {
        assert_eq!(pixels.len(), channels * height * width, "pixel count");
        debug_assert!(
            pixels.iter().all(|p| (0.0..=1.0).contains(p)),
            "pixels must lie in [0, 1]"
        );
        Self { channels, height, width, pixels }
    }

    /// Total pixel count across channels (the network input width).
    pub fn len(&self) -> usize {
        self.pixels.len()
    }

    /// True when the image holds no pixels.
    pub fn is_empty(&self) -> bool {
        self.pixels.is_empty()
    }

    /// Borrows one channel as a flat slice.
    pub fn channel(&self, c: usize) -> &[f64] {
        let plane = self.height * self.width;
        &self.pixels[c * plane..(c + 1) * plane]
    }

    /// Mutable access to one channel.
    pub fn channel_mut(&mut self, c: usize) -> &mut [f64] {
        let plane = self.height * self.width;
        &mut self.pixels[c * plane..(c + 1) * plane]
    }
}

/// Errors raised by the auto-encoder.
#[derive(Clone, Debug, PartialEq)]
pub enum VaeError {
    /// A configuration field is out of range.
    InvalidConfig(&'static str),
    /// An input vector does not match the model's input width.
    ShapeMismatch { expected: usize, got: usize },
    /// A forward pass produced a non-finite activation in the named layer.
    NonFiniteActivation { layer: &'static str },
    /// A backward pass produced a non-finite gradient in the named block.
    NonFiniteGradient { block: &'static str },
    /// Training produced a non-finite epoch loss.
    Divergence { epoch: usize },
    /// Training requires at least one sample.
    EmptyDataset,
}

impl core::fmt::Display for VaeError {
    fn fmt(&self, f: &mut core::fmt::Formatter<'_>) -> core::fmt::Result {
        match self {
            VaeError::InvalidConfig(what) => write!(f, "invalid training config: {what}"),
            VaeError::ShapeMismatch { expected, got } => {
                write!(f, "input has {got} values, model expects {expected}")
            }
            VaeError::NonFiniteActivation { layer } => {
                write!(f, "non-finite activation in {layer}")
            }
            VaeError::NonFiniteGradient { block } => {
                write!(f, "non-finite gradient in {block}")
            }
            VaeError::Divergence { epoch } => {
                write!(f, "training loss became non-finite at epoch {epoch}")
            }
            VaeError::EmptyDataset => write!(f, "training dataset is empty"),
        }
    }
}

#[cfg(feature = "std")]
impl std::error::Error for VaeError {}

/// Layer widths of the dense encoder/decoder pair.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct VaeArchitecture {
    pub input_dim: usize,
    pub hidden_dim: usize,
    pub latent_dim: usize,
}

impl VaeArchitecture {
    /// Picks layer widths for images of the given shape.
    ///
    /// The hidden width scales with the input (one sixteenth of the pixel
    /// count) but is clamped to `[64, 512]` so small grids still get enough
    /// capacity and the default 2x64x64 input maps to a 512-wide hidden layer.
    pub fn for_images(channels: usize, height: usize, width: usize) -> Self {
        let input_dim = channels * height * width;
        let hidden_dim = (input_dim / 16).clamp(64, 512);
        Self { input_dim, hidden_dim, latent_dim: DEFAULT_LATENT_DIM }
    }
}

/// Dense encoder/decoder parameter set.
///
/// Encoder: `input -> tanh(hidden) -> [mean | log-variance]` (each of latent
/// width). Decoder: `latent -> tanh(hidden) -> sigmoid(input)`. Weight
/// matrices are row-major with one row per output unit.
#[derive(Clone, Debug, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct VaeModel {
    pub input_dim: usize,
    pub hidden_dim: usize,
    pub latent_dim: usize,
    pub enc_w1: Vec<f64>,
    pub enc_b1: Vec<f64>,
    pub enc_w2: Vec<f64>,
    pub enc_b2: Vec<f64>,
    pub dec_w1: Vec<f64>,
    pub dec_b1: Vec<f64>,
    pub dec_w2: Vec<f64>,
    pub dec_b2: Vec<f64>,
}

/// Per-parameter gradients, in the same layout as [`VaeModel`].
#[derive(Clone, Debug)]
pub struct VaeGradients {
    pub enc_w1: Vec<f64>,
    pub enc_b1: Vec<f64>,
    pub enc_w2: Vec<f64>,
    pub enc_b2: Vec<f64>,
    pub dec_w1: Vec<f64>,
    pub dec_b1: Vec<f64>,
    pub dec_w2: Vec<f64>,
    pub dec_b2: Vec<f64>,
}

impl VaeGradients {
    fn zeros(arch: &VaeArchitecture) -> Self {
        let (d, h, l) = (arch.input_dim, arch.hidden_dim, arch.latent_dim);
        Self {
            enc_w1: vec![0.0; h * d],
            enc_b1: vec![0.0; h],
            enc_w2: vec![0.0; 2 * l * h],
            enc_b2: vec![0.0; 2 * l],
            dec_w1: vec![0.0; h * l],
            dec_b1: vec![0.0; h],
            dec_w2: vec![0.0; d * h],
            dec_b2: vec![0.0; d],
        }
    }

    fn blocks(&self) -> [(&'static str, &[f64]); 8] {
        [
            ("enc_w1", &self.enc_w1),
            ("enc_b1", &self.enc_b1),
            ("enc_w2", &self.enc_w2),
            ("enc_b2", &self.enc_b2),
            ("dec_w1", &self.dec_w1),
            ("dec_b1", &self.dec_b1),
            ("dec_w2", &self.dec_w2),
            ("dec_b2", &self.dec_b2),
        ]
    }

    fn blocks_mut(&mut self) -> [&mut Vec<f64>; 8] {
        [
            &mut self.enc_w1,
            &mut self.enc_b1,
            &mut self.enc_w2,
            &mut self.enc_b2,
            &mut self.dec_w1,
            &mut self.dec_b1,
            &mut self.dec_w2,
            &mut self.dec_b2,
        ]
    }

    /// Concatenates all blocks in declaration order.
    pub fn flatten(&self) -> Vec<f64> {
        let mut out = Vec::new();
        for (_, block) in self.blocks() {
            out.extend_from_slice(block);
        }
        out
    }

    fn accumulate(&mut self, other: &VaeGradients) {
        for (dst, src) in self.blocks_mut().into_iter().zip(other.blocks()) {
            for (d, s) in dst.iter_mut().zip(src.1) {
                *d += *s;
            }
        }
    }

    fn scale(&mut self, factor: f64) {
        for block in self.blocks_mut() {
            for v in block.iter_mut() {
                *v *= factor;
            }
        }
    }
}

impl VaeModel {
    /// Builds a model with uniform Xavier initialization from a seed.
    pub fn new(arch: VaeArchitecture, seed: u64) -> Self {
        let mut rng = stream(seed, TRAIN_INIT_TAG);
        let (d, h, l) = (arch.input_dim, arch.hidden_dim, arch.latent_dim);
        let mut layer = |rows: usize, cols: usize| -> Vec<f64> {
            let bound = (6.0 / (rows + cols) as f64).sqrt();
            (0..rows * cols)
                .map(|_| rand::Rng::gen_range(&mut rng, -bound..bound))
                .collect()
        };
        Self {
            input_dim: d,
            hidden_dim: h,
            latent_dim: l,
            enc_w1: layer(h, d),
            enc_b1: vec![0.0; h],
            enc_w2: layer(2 * l, h),
            enc_b2: vec![0.0; 2 * l],
            dec_w1: layer(h, l),
            dec_b1: vec![0.0; h],
            dec_w2: layer(d, h),
            dec_b2: vec![0.0; d],
        }
    }

    /// The model's layer widths.
    pub fn architecture(&self) -> VaeArchitecture {
        VaeArchitecture {
            input_dim: self.input_dim,
            hidden_dim: self.hidden_dim,
            latent_dim: self.latent_dim,
        }
    }

    fn blocks(&self) -> [&Vec<f64>; 8] {
        [
            &self.enc_w1,
            &self.enc_b1,
            &self.enc_w2,
            &self.enc_b2,
            &self.dec_w1,
            &self.dec_b1,
            &self.dec_w2,
            &self.dec_b2,
        ]
    }

    fn blocks_mut(&mut self) -> [&mut Vec<f64>; 8] {
        [
            &mut self.enc_w1,
            &mut self.enc_b1,
            &mut self.enc_w2,
            &mut self.enc_b2,
            &mut self.dec_w1,
            &mut self.dec_b1,
            &mut self.dec_w2,
            &mut self.dec_b2,
        ]
    }

    /// Total number of trainable parameters.
    pub fn parameter_count(&self) -> usize {
        self.blocks().iter().map(|b| b.len()).sum()
    }

    /// Concatenates all parameters in block order.
    pub fn flatten_parameters(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.parameter_count());
        for block in self.blocks() {
            out.extend_from_slice(block);
        }
        out
    }

    /// Overwrites all parameters from a flat vector in block order.
    pub fn assign_parameters(&mut self, flat: &[f64]) {
        assert_eq!(flat.len(), self.parameter_count(), "parameter count");
        let mut offset = 0;
        for block in self.blocks_mut() {
            let len = block.len();
            block.copy_from_slice(&flat[offset..offset + len]);
            offset += len;
        }
    }

    /// Encoder forward pass: returns the latent mean and standard deviation.
    ///
    /// The second encoder head produces the log-variance; the returned
    /// deviation is `exp(log_var / 2)`, so it is strictly positive.
    pub fn encode(&self, x: &[f64]) -> Result<(Vec<f64>, Vec<f64>), VaeError> {
        let f = self.encoder_forward(x)?;
        Ok((f.mu, f.sigma))
    }

    /// Decoder forward pass: maps a latent vector to pixel values in (0, 1).
    pub fn decode(&self, z: &[f64]) -> Result<Vec<f64>, VaeError> {
        if z.len() != self.latent_dim {
            return Err(VaeError::ShapeMismatch { expected: self.latent_dim, got: z.len() });
        }
        let d = self.decoder_forward(z)?;
        Ok(d.y)
    }

    fn encoder_forward(&self, x: &[f64]) -> Result<EncoderPass, VaeError> {
        if x.len() != self.input_dim {
            return Err(VaeError::ShapeMismatch { expected: self.input_dim, got: x.len() });
        }
        let mut hidden = affine(&self.enc_w1, &self.enc_b1, x);
        for v in hidden.iter_mut() {
            *v = v.tanh();
        }
        ensure_finite(&hidden, "encoder hidden layer")?;
        let head = affine(&self.enc_w2, &self.enc_b2, &hidden);
        ensure_finite(&head, "encoder output layer")?;
        let l = self.latent_dim;
        let mu = head[..l].to_vec();
        let log_var = head[l..].to_vec();
        let sigma: Vec<f64> = log_var.iter().map(|lv| (0.5 * lv).exp()).collect();
        ensure_finite(&sigma, "encoder output layer")?;
        Ok(EncoderPass { hidden, mu, sigma })
    }

    fn decoder_forward(&self, z: &[f64]) -> Result<DecoderPass, VaeError> {
        let mut hidden = affine(&self.dec_w1, &self.dec_b1, z);
        for v in hidden.iter_mut() {
            *v = v.tanh();
        }
        ensure_finite(&hidden, "decoder hidden layer")?;
        let mut y = affine(&self.dec_w2, &self.dec_b2, &hidden);
        for v in y.iter_mut() {
            *v = sigmoid(*v);
        }
        ensure_finite(&y, "decoder output layer")?;
        Ok(DecoderPass { hidden, y })
    }
}

struct EncoderPass {
    hidden: Vec<f64>,
    mu: Vec<f64>,
    sigma: Vec<f64>,
}

struct DecoderPass {
    hidden: Vec<f64>,
    y: Vec<f64>,
}

/// Dense layer forward: `w * x + b` with a row-major `w`.
fn affine(w: &[f64], b: &[f64], x: &[f64]) -> Vec<f64> {
    let rows = b.len();
    let cols = x.len();
    debug_assert_eq!(w.len(), rows * cols);
    let mut out = b.to_vec();
    for r in 0..rows {
        let row = &w[r * cols..(r + 1) * cols];
        let mut acc = 0.0;
        for (wv, xv) in row.iter().zip(x) {
            acc += wv * xv;
        }
        out[r] += acc;
    }
    out
}

/// Accumulates `w^T * g` into `out`.
fn affine_transpose_accumulate(w: &[f64], g: &[f64], out: &mut [f64]) {
    let rows = g.len();
    let cols = out.len();
    debug_assert_eq!(w.len(), rows * cols);
    for r in 0..rows {
        let row = &w[r * cols..(r + 1) * cols];
        let gv = g[r];
        for (o, wv) in out.iter_mut().zip(row) {
            *o += gv * wv;
        }
    }
}

/// Accumulates the outer product `g * x^T` into the row-major gradient `gw`.
fn outer_accumulate(gw: &mut [f64], g: &[f64], x: &[f64]) {
    let cols = x.len();
    for (r, gv) in g.iter().enumerate() {
        let row = &mut gw[r * cols..(r + 1) * cols];
        for (o, xv) in row.iter_mut().zip(x) {
            *o += gv * xv;
        }
    }
}

fn ensure_finite(values: &[f64], layer: &'static str) -> Result<(), VaeError> {
    if values.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(VaeError::NonFiniteActivation { layer })
    }
}

/// Numerically stable logistic function.
fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Latent draw from the encoded distribution: `z = mu + sigma * eps`.
pub fn reparameterize(mu: &[f64], sigma: &[f64], eps: &[f64]) -> Vec<f64> {
    debug_assert_eq!(mu.len(), sigma.len());
    debug_assert_eq!(mu.len(), eps.len());
    mu.iter()
        .zip(sigma)
        .zip(eps)
        .map(|((m, s), e)| m + s * e)
        .collect()
}

/// Divergence of the encoded Gaussian from a standard normal.
///
/// `-1/2 * sum(1 + log sigma^2 - mu^2 - sigma^2)`, which is nonnegative and
/// zero exactly when `mu = 0` and `sigma = 1`.
pub fn kl_divergence(mu: &[f64], sigma: &[f64]) -> f64 {
    debug_assert_eq!(mu.len(), sigma.len());
    let mut acc = 0.0;
    for (m, s) in mu.iter().zip(sigma) {
        let var = s * s;
        acc += 1.0 + var.ln() - m * m - var;
    }
    -0.5 * acc
}

/// Per-channel reconstruction log-likelihood under a Bernoulli model.
///
/// Returns `sum(x * ln y + (1 - x) * ln(1 - y))`, which is nonpositive;
/// predictions are clamped into `[1e-7, 1 - 1e-7]` before the logs so exact
/// 0/1 outputs stay finite. The training loss subtracts this value.
pub fn bce_reconstruction(x: &[f64], y: &[f64]) -> f64 {
    debug_assert_eq!(x.len(), y.len());
    let mut acc = 0.0;
    for (xv, yv) in x.iter().zip(y) {
        let y = yv.clamp(OUTPUT_CLAMP, 1.0 - OUTPUT_CLAMP);
        acc += xv * y.ln() + (1.0 - xv) * (1.0 - y).ln();
    }
    acc
}

/// Full training loss for one sample and one injected latent perturbation.
///
/// `loss = w_kl * KL - sum over channels of reconstruction log-likelihood`,
/// evaluated with a single Monte Carlo latent draw `z = mu + sigma * eps`.
pub fn vae_loss(model: &VaeModel, x: &[f64], eps: &[f64], w_kl: f64) -> Result<f64, VaeError> {
    let enc = model.encoder_forward(x)?;
    let z = reparameterize(&enc.mu, &enc.sigma, eps);
    let dec = model.decoder_forward(&z)?;
    let kl = kl_divergence(&enc.mu, &enc.sigma);
    let recon = bce_reconstruction(x, &dec.y);
    Ok(w_kl * kl - recon)
}

/// Reverse-mode gradient of [`vae_loss`] with respect to every parameter.
///
/// Returns the loss alongside gradients in the model's block layout; the
/// result matches central finite differences of the forward loss.
pub fn backward(
    model: &VaeModel,
    x: &[f64],
    eps: &[f64],
    w_kl: f64,
) -> Result<(f64, VaeGradients), VaeError> {
    let enc = model.encoder_forward(x)?;
    let z = reparameterize(&enc.mu, &enc.sigma, eps);
    let dec = model.decoder_forward(&z)?;
    let kl = kl_divergence(&enc.mu, &enc.sigma);
    let recon = bce_reconstruction(x, &dec.y);
    let loss = w_kl * kl - recon;

    let mut g = VaeGradients::zeros(&model.architecture());
    let l = model.latent_dim;

    // Output stage: for the subtracted Bernoulli log-likelihood the gradient
    // with respect to the decoder pre-activation collapses to (y - x); where
    // the clamp is active the loss is flat, so the gradient is zero there.
    let g_out: Vec<f64> = dec
        .y
        .iter()
        .zip(x)
        .map(|(y, xv)| {
            if *y < OUTPUT_CLAMP || *y > 1.0 - OUTPUT_CLAMP {
                0.0
            } else {
                y - xv
            }
        })
        .collect();
    g.dec_b2.copy_from_slice(&g_out);
    outer_accumulate(&mut g.dec_w2, &g_out, &dec.hidden);
    let mut g_dec_hidden = vec![0.0; model.hidden_dim];
    affine_transpose_accumulate(&model.dec_w2, &g_out, &mut g_dec_hidden);

    // Decoder hidden tanh.
    let g_dec_pre: Vec<f64> = g_dec_hidden
        .iter()
        .zip(&dec.hidden)
        .map(|(gv, h)| gv * (1.0 - h * h))
        .collect();
    g.dec_b1.copy_from_slice(&g_dec_pre);
    outer_accumulate(&mut g.dec_w1, &g_dec_pre, &z);
    let mut g_z = vec![0.0; l];
    affine_transpose_accumulate(&model.dec_w1, &g_dec_pre, &mut g_z);

    // Latent draw and divergence penalty. With z = mu + exp(log_var/2) * eps:
    // dz/dmu = 1 and dz/dlog_var = sigma * eps / 2; the penalty adds
    // w_kl * mu to the mean head and w_kl * (sigma^2 - 1) / 2 to the
    // log-variance head.
    let mut g_head = vec![0.0; 2 * l];
    for j in 0..l {
        g_head[j] = g_z[j] + w_kl * enc.mu[j];
        g_head[l + j] =
            g_z[j] * 0.5 * enc.sigma[j] * eps[j] + w_kl * 0.5 * (enc.sigma[j] * enc.sigma[j] - 1.0);
    }
    g.enc_b2.copy_from_slice(&g_head);
    outer_accumulate(&mut g.enc_w2, &g_head, &enc.hidden);
    let mut g_enc_hidden = vec![0.0; model.hidden_dim];
    affine_transpose_accumulate(&model.enc_w2, &g_head, &mut g_enc_hidden);

    // Encoder hidden tanh.
    let g_enc_pre: Vec<f64> = g_enc_hidden
        .iter()
        .zip(&enc.hidden)
        .map(|(gv, h)| gv * (1.0 - h * h))
        .collect();
    g.enc_b1.copy_from_slice(&g_enc_pre);
    outer_accumulate(&mut g.enc_w1, &g_enc_pre, x);

    for (name, block) in g.blocks() {
        if !block.iter().all(|v| v.is_finite()) {
            return Err(VaeError::NonFiniteGradient { block: name });
        }
    }
    Ok((loss, g))
}

/// Training hyperparameters.
#[derive(Clone, Copy, Debug)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct TrainConfig {
    pub max_epochs: usize,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub w_kl: f64,
    /// Stop after this many epochs without a best-loss improvement.
    pub patience: usize,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            max_epochs: 300,
            learning_rate: 1e-4,
            batch_size: 16,
            w_kl: 1e-3,
            patience: 40,
            seed: 0,
        }
    }
}

impl TrainConfig {
    fn validate(&self) -> Result<(), VaeError> {
        if self.max_epochs == 0 {
            return Err(VaeError::InvalidConfig("max_epochs must be positive"));
        }
        if !(self.learning_rate > 0.0) {
            return Err(VaeError::InvalidConfig("learning_rate must be positive"));
        }
        if self.batch_size == 0 {
            return Err(VaeError::InvalidConfig("batch_size must be positive"));
        }
        if !(self.w_kl >= 0.0) {
            return Err(VaeError::InvalidConfig("w_kl must be nonnegative"));
        }
        if self.patience == 0 || self.patience > self.max_epochs {
            return Err(VaeError::InvalidConfig("patience must be in 1..=max_epochs"));
        }
        Ok(())
    }
}

/// Result of a training run: the best model seen plus its loss curve.
#[derive(Clone, Debug)]
pub struct TrainedVae {
    pub model: VaeModel,
    /// Mean per-sample loss for every completed epoch.
    pub curve: Vec<f64>,
    pub best_epoch: usize,
    pub best_loss: f64,
}

/// Adaptive-moment gradient descent with standard defaults.
struct Adam {
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
    step: u64,
    learning_rate: f64,
}

impl Adam {
    const BETA1: f64 = 0.9;
    const BETA2: f64 = 0.999;
    const EPS: f64 = 1e-8;

    fn new(model: &VaeModel, learning_rate: f64) -> Self {
        let m = model.blocks().iter().map(|b| vec![0.0; b.len()]).collect::<Vec<_>>();
        let v = m.clone();
        Self { m, v, step: 0, learning_rate }
    }

    fn apply(&mut self, model: &mut VaeModel, grads: &VaeGradients) {
        self.step += 1;
        let t = self.step as f64;
        let bias1 = 1.0 - Self::BETA1.powf(t);
        let bias2 = 1.0 - Self::BETA2.powf(t);
        for ((block, grad), (m, v)) in model
            .blocks_mut()
            .into_iter()
            .zip(grads.blocks())
            .zip(self.m.iter_mut().zip(self.v.iter_mut()))
        {
            for i in 0..block.len() {
                let g = grad.1[i];
                m[i] = Self::BETA1 * m[i] + (1.0 - Self::BETA1) * g;
                v[i] = Self::BETA2 * v[i] + (1.0 - Self::BETA2) * g * g;
                let m_hat = m[i] / bias1;
                let v_hat = v[i] / bias2;
                block[i] -= self.learning_rate * m_hat / (v_hat.sqrt() + Self::EPS);
            }
        }
    }
}

/// Trains an auto-encoder on a flattened image dataset.
///
/// Runs seeded shuffled mini-batches with one latent draw per sample per
/// step, tracks the mean epoch loss, and returns the parameters from the
/// best epoch. Training stops early once the best loss has not improved for
/// `patience` consecutive epochs. Fully deterministic for a fixed seed.
pub fn train(
    dataset: &[MultiChannelImage],
    arch: VaeArchitecture,
    config: &TrainConfig,
) -> Result<TrainedVae, VaeError> {
    config.validate()?;
    if dataset.is_empty() {
        return Err(VaeError::EmptyDataset);
    }
    for image in dataset {
        if image.len() != arch.input_dim {
            return Err(VaeError::ShapeMismatch { expected: arch.input_dim, got: image.len() });
        }
    }

    let mut model = VaeModel::new(arch, config.seed);
    let mut optimizer = Adam::new(&model, config.learning_rate);
    let mut rng = stream(config.seed, TRAIN_EPOCH_TAG);
    let mut order: Vec<usize> = (0..dataset.len()).collect();

    let mut curve = Vec::with_capacity(config.max_epochs);
    let mut best_loss = f64::INFINITY;
    let mut best_epoch = 0;
    let mut best_model = model.clone();
    let mut stall = 0usize;

    for epoch in 0..config.max_epochs {
        order.shuffle(&mut rng);
        let mut epoch_loss = 0.0;
        for batch in order.chunks(config.batch_size) {
            let mut batch_grads = VaeGradients::zeros(&arch);
            for &idx in batch {
                let x = &dataset[idx].pixels;
                let eps: Vec<f64> =
                    (0..arch.latent_dim).map(|_| standard_normal(&mut rng)).collect();
                let (loss, grads) = backward(&model, x, &eps, config.w_kl)?;
                epoch_loss += loss;
                batch_grads.accumulate(&grads);
            }
            batch_grads.scale(1.0 / batch.len() as f64);
            optimizer.apply(&mut model, &batch_grads);
        }
        let mean_loss = epoch_loss / dataset.len() as f64;
        if !mean_loss.is_finite() {
            return Err(VaeError::Divergence { epoch });
        }
        curve.push(mean_loss);

        if mean_loss < best_loss {
            best_loss = mean_loss;
            best_epoch = epoch;
            best_model = model.clone();
            stall = 0;
        } else {
            stall += 1;
            if stall >= config.patience {
                break;
            }
        }
    }

    Ok(TrainedVae { model: best_model, curve, best_epoch, best_loss })
}

/// Decodes `count` fresh images from seeded standard-normal latent draws.
pub fn generate(
    model: &VaeModel,
    channels: usize,
    height: usize,
    width: usize,
    count: usize,
    seed: u64,
) -> Result<Vec<MultiChannelImage>, VaeError> {
    if channels * height * width != model.input_dim {
        return Err(VaeError::ShapeMismatch {
            expected: model.input_dim,
            got: channels * height * width,
        });
    }
    let mut rng = stream(seed, GENERATE_TAG);
    let mut out = Vec::with_capacity(count);
    for _ in 0..count {
        let z: Vec<f64> = (0..model.latent_dim).map(|_| standard_normal(&mut rng)).collect();
        let y = model.decode(&z)?;
        out.push(MultiChannelImage::new(channels, height, width, y));
    }
    Ok(out)
}

/// Duplicate indices that rebalance a dataset across thickness bins.
///
/// Samples are binned by their scalar thickness into `n_bins` equal-width
/// bins over `[h_min, h_max]`; every nonempty bin is topped up to the largest
/// bin count by cycling through its members. The result starts with the
/// identity indices `0..n`, so no original sample is lost or altered.
pub fn oversample_indices(
    h_values: &[f64],
    n_bins: usize,
    h_min: f64,
    h_max: f64,
) -> Vec<usize> {
    let n = h_values.len();
    let mut out: Vec<usize> = (0..n).collect();
    if n == 0 || n_bins == 0 || !(h_max > h_min) {
        return out;
    }
    let mut bins: Vec<Vec<usize>> = vec![Vec::new(); n_bins];
    for (i, &h) in h_values.iter().enumerate() {
        let t = (h - h_min) / (h_max - h_min);
        let k = ((t * n_bins as f64) as usize).min(n_bins - 1);
        bins[k].push(i);
    }
    let target = bins.iter().map(|b| b.len()).max().unwrap_or(0);
    for bin in &bins {
        if bin.is_empty() {
            continue;
        }
        for extra in 0..target - bin.len() {
            out.push(bin[extra % bin.len()]);
        }
    }
    out
}

/// Clones dataset entries according to [`oversample_indices`].
pub fn oversample<T: Clone>(
    dataset: &[T],
    h_values: &[f64],
    n_bins: usize,
    h_min: f64,
    h_max: f64,
) -> Vec<T> {
    assert_eq!(dataset.len(), h_values.len(), "one thickness per sample");
    oversample_indices(h_values, n_bins, h_min, h_max)
        .into_iter()
        .map(|i| dataset[i].clone())
        .collect()
}

/// Maps a thickness in `[h_min, h_max]` onto the unit interval.
pub fn normalize_hf(h: f64, h_min: f64, h_max: f64) -> f64 {
    (h - h_min) / (h_max - h_min)
}

/// Exact inverse of [`normalize_hf`].
pub fn denormalize_hf(t: f64, h_min: f64, h_max: f64) -> f64 {
    h_min + t * (h_max - h_min)
}

/// Reads one thickness scalar out of a decoded two-channel image.
///
/// Averages the denormalized second channel over the pixels the first
/// channel marks solid (value at least one half) and clamps the result into
/// `[h_min, h_max]`. An image with no solid pixels yields `h_min`; such a
/// design is rejected as infeasible downstream anyway.
pub fn extract_scalar_hf(image: &MultiChannelImage, h_min: f64, h_max: f64) -> f64 {
    debug_assert!(image.channels >= 2, "need a layout channel and a thickness channel");
    let mask = image.channel(0);
    let field = image.channel(1);
    let mut sum = 0.0;
    let mut count = 0usize;
    for (m, t) in mask.iter().zip(field) {
        if *m >= 0.5 {
            sum += denormalize_hf(*t, h_min, h_max);
            count += 1;
        }
    }
    if count == 0 {
        return h_min;
    }
    (sum / count as f64).clamp(h_min, h_max)
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;

    fn tiny_model(seed: u64) -> VaeModel {
        VaeModel::new(
            VaeArchitecture { input_dim: 6, hidden_dim: 5, latent_dim: 2 },
            seed,
        )
    }

    #[test]
    fn encode_of_zero_weight_model_returns_biases() {
        let mut model = tiny_model(1);
        for block in model.blocks_mut() {
            for v in block.iter_mut() {
                *v = 0.0;
            }
        }
        model.enc_b2 = vec![0.3, -0.2, 0.4, -0.6];
        let x = vec![0.5; 6];
        let (mu, sigma) = model.encode(&x).unwrap();
        assert_eq!(mu, vec![0.3, -0.2]);
        assert!((sigma[0] - (0.5f64 * 0.4).exp()).abs() < 1e-15);
        assert!((sigma[1] - (0.5f64 * -0.6).exp()).abs() < 1e-15);
    }

    #[test]
    fn encode_is_deterministic() {
        let model = tiny_model(2);
        let x = vec![0.1, 0.9, 0.4, 0.6, 0.2, 0.8];
        assert_eq!(model.encode(&x).unwrap(), model.encode(&x).unwrap());
    }

    #[test]
    fn encode_matches_direct_forward_pass() {
        let model = tiny_model(3);
        let x = vec![0.2, 0.7, 0.1, 0.9, 0.5, 0.3];
        // Independent re-computation with explicit loops.
        let mut hidden = vec![0.0; 5];
        for r in 0..5 {
            let mut acc = model.enc_b1[r];
            for c in 0..6 {
                acc += model.enc_w1[r * 6 + c] * x[c];
            }
            hidden[r] = acc.tanh();
        }
        let mut head = vec![0.0; 4];
        for r in 0..4 {
            let mut acc = model.enc_b2[r];
            for c in 0..5 {
                acc += model.enc_w2[r * 5 + c] * hidden[c];
            }
            head[r] = acc;
        }
        let (mu, sigma) = model.encode(&x).unwrap();
        for j in 0..2 {
            assert!((mu[j] - head[j]).abs() < 1e-14);
            assert!((sigma[j] - (0.5 * head[2 + j]).exp()).abs() < 1e-14);
        }
    }

    #[test]
    fn reparameterize_substitutions() {
        assert_eq!(reparameterize(&[1.0, 2.0], &[1.0, 0.5], &[0.0, 0.0]), vec![1.0, 2.0]);
        assert_eq!(reparameterize(&[1.0, 2.0], &[0.0, 0.0], &[5.0, -7.0]), vec![1.0, 2.0]);
        assert_eq!(reparameterize(&[1.0, 2.0], &[1.0, 0.5], &[1.0, -2.0]), vec![2.0, 1.0]);
    }

    #[test]
    fn kl_closed_form_cases() {
        assert_eq!(kl_divergence(&[0.0, 0.0], &[1.0, 1.0]), 0.0);
        assert!((kl_divergence(&[1.0], &[1.0]) - 0.5).abs() < 1e-15);
        // Nonnegative on random draws.
        let mut rng = stream(9, 0);
        for _ in 0..100 {
            let mu = [standard_normal(&mut rng) * 2.0];
            let sigma = [(standard_normal(&mut rng) * 0.5).exp()];
            assert!(kl_divergence(&mu, &sigma) >= 0.0);
        }
    }

    #[test]
    fn kl_matches_quadrature() {
        // Numerically integrate p(x) ln(p(x)/q(x)) for the one-dimensional
        // Gaussians p = N(mu, sigma^2) and q = N(0, 1).
        let cases = [(0.7, 1.3), (-1.2, 0.4), (0.0, 2.0), (2.5, 0.9)];
        for (mu, sigma) in cases {
            let closed = kl_divergence(&[mu], &[sigma]);
            let span = 14.0 * sigma.max(1.0) + mu.abs();
            let n = 200_001usize;
            let dx = 2.0 * span / (n - 1) as f64;
            let mut integral = 0.0;
            for i in 0..n {
                let x = mu - span + i as f64 * dx;
                let zp = (x - mu) / sigma;
                let ln_p = -0.5 * zp * zp - sigma.ln() - 0.5 * core::f64::consts::TAU.ln();
                let ln_q = -0.5 * x * x - 0.5 * core::f64::consts::TAU.ln();
                let p = ln_p.exp();
                let weight = if i == 0 || i == n - 1 { 0.5 } else { 1.0 };
                integral += weight * p * (ln_p - ln_q) * dx;
            }
            assert!(
                (closed - integral).abs() < 1e-8,
                "mu {mu} sigma {sigma}: closed {closed} vs quadrature {integral}"
            );
        }
    }

    #[test]
    fn bce_perfect_binary_reconstruction_is_near_zero() {
        let x = vec![0.0, 1.0, 1.0, 0.0];
        let value = bce_reconstruction(&x, &x);
        // Clamping leaves a residual of about 1e-7 per pixel.
        assert!(value <= 0.0);
        assert!(value.abs() < 1e-6);
    }

    #[test]
    fn bce_uniform_half_prediction_costs_ln2_per_pixel() {
        let x = vec![1.0, 0.0, 1.0, 1.0, 0.0];
        let y = vec![0.5; 5];
        let value = bce_reconstruction(&x, &y);
        assert!((value - (-5.0 * core::f64::consts::LN_2)).abs() < 1e-12);
    }

    #[test]
    fn bce_matches_elementwise_summation() {
        let mut rng = stream(11, 0);
        let x: Vec<f64> = (0..9).map(|_| rand::Rng::gen::<f64>(&mut rng)).collect();
        let y: Vec<f64> = (0..9).map(|_| rand::Rng::gen_range(&mut rng, 0.05..0.95)).collect();
        let mut direct = 0.0;
        for i in 0..9 {
            direct += x[i] * y[i].ln() + (1.0 - x[i]) * (1.0 - y[i]).ln();
        }
        assert!((bce_reconstruction(&x, &y) - direct).abs() < 1e-12);
    }

    #[test]
    fn loss_reduces_to_reconstruction_when_unweighted() {
        let model = tiny_model(5);
        let x = vec![0.3, 0.8, 0.1, 0.6, 0.4, 0.9];
        let eps = vec![0.3, -0.7];
        let (mu, sigma) = model.encode(&x).unwrap();
        let z = reparameterize(&mu, &sigma, &eps);
        let y = model.decode(&z).unwrap();
        let expect = -bce_reconstruction(&x, &y);
        let loss = vae_loss(&model, &x, &eps, 0.0).unwrap();
        assert!((loss - expect).abs() < 1e-12);
        // Composition with the divergence term, and monotonicity in the weight.
        let kl = kl_divergence(&mu, &sigma);
        let weighted = vae_loss(&model, &x, &eps, 1e-3).unwrap();
        assert!((weighted - (1e-3 * kl + expect)).abs() < 1e-12);
        let heavier = vae_loss(&model, &x, &eps, 10.0).unwrap();
        assert!(heavier >= weighted);
    }

    #[test]
    fn backward_of_zero_model_matches_hand_gradient() {
        let mut model = tiny_model(6);
        for block in model.blocks_mut() {
            for v in block.iter_mut() {
                *v = 0.0;
            }
        }
        let x = vec![0.0; 6];
        let eps = vec![0.4, -1.1];
        let (loss, g) = backward(&model, &x, &eps, 1e-3).unwrap();
        // Forward collapses to y = 1/2 everywhere and a standard-normal code,
        // so the loss is input_dim * ln 2 and the only nonzero gradient is the
        // decoder output bias at (y - x) = 1/2.
        assert!((loss - 6.0 * core::f64::consts::LN_2).abs() < 1e-12);
        assert!(g.dec_b2.iter().all(|v| (*v - 0.5).abs() < 1e-15));
        for (name, block) in g.blocks() {
            if name == "dec_b2" {
                continue;
            }
            assert!(block.iter().all(|v| *v == 0.0), "block {name} should vanish");
        }
    }

    #[test]
    fn backward_matches_finite_differences() {
        let model = tiny_model(7);
        let x = vec![0.25, 0.75, 0.5, 0.9, 0.1, 0.65];
        let eps = vec![0.8, -0.3];
        let w_kl = 1e-3;
        let (_, grads) = backward(&model, &x, &eps, w_kl).unwrap();
        let analytic = grads.flatten();
        let base = model.flatten_parameters();
        let step = 1e-5;
        let mut worst = 0.0f64;
        for i in 0..base.len() {
            let mut probe = model.clone();
            let mut params = base.clone();
            params[i] = base[i] + step;
            probe.assign_parameters(&params);
            let up = vae_loss(&probe, &x, &eps, w_kl).unwrap();
            params[i] = base[i] - step;
            probe.assign_parameters(&params);
            let down = vae_loss(&probe, &x, &eps, w_kl).unwrap();
            let fd = (up - down) / (2.0 * step);
            let denom = analytic[i].abs().max(fd.abs()).max(1e-6);
            worst = worst.max((analytic[i] - fd).abs() / denom);
        }
        assert!(worst < 1e-4, "max relative gradient error {worst}");
    }

    #[test]
    fn batch_gradient_is_permutation_invariant() {
        let model = tiny_model(8);
        let a = vec![0.2, 0.4, 0.6, 0.8, 0.5, 0.3];
        let eps = vec![0.1, 0.2];
        let (_, ga) = backward(&model, &a, &eps, 1e-3).unwrap();
        let mut sum_ab = ga.flatten();
        let (_, gb) = backward(&model, &a, &eps, 1e-3).unwrap();
        for (s, v) in sum_ab.iter_mut().zip(gb.flatten()) {
            *s += v;
        }
        // Reversed accumulation order gives the identical batch gradient.
        let (_, g1) = backward(&model, &a, &eps, 1e-3).unwrap();
        let (_, g2) = backward(&model, &a, &eps, 1e-3).unwrap();
        let mut sum_ba = g2.flatten();
        for (s, v) in sum_ba.iter_mut().zip(g1.flatten()) {
            *s += v;
        }
        assert_eq!(sum_ab, sum_ba);
    }

    #[test]
    fn shape_mismatch_is_reported() {
        let model = tiny_model(9);
        assert_eq!(
            model.encode(&[0.0; 4]).unwrap_err(),
            VaeError::ShapeMismatch { expected: 6, got: 4 }
        );
        assert_eq!(
            model.decode(&[0.0; 3]).unwrap_err(),
            VaeError::ShapeMismatch { expected: 2, got: 3 }
        );
    }

    #[test]
    fn training_overfits_one_image() {
        let pixels = vec![0.3, 0.7, 0.2, 0.8, 0.4, 0.6, 0.9, 0.1];
        let image = MultiChannelImage::new(2, 2, 2, pixels.clone());
        let arch = VaeArchitecture { input_dim: 8, hidden_dim: 8, latent_dim: 2 };
        let config = TrainConfig {
            max_epochs: 3000,
            learning_rate: 2e-2,
            batch_size: 1,
            w_kl: 1e-3,
            patience: 3000,
            seed: 42,
        };
        let trained = train(core::slice::from_ref(&image), arch, &config).unwrap();
        let (mu, _) = trained.model.encode(&pixels).unwrap();
        let z = reparameterize(&mu, &[0.0, 0.0], &[0.0, 0.0]);
        let y = trained.model.decode(&z).unwrap();
        let achieved = -bce_reconstruction(&pixels, &y);
        // The reconstruction floor is the total pixel entropy, reached when
        // the prediction equals the target exactly.
        let floor = -bce_reconstruction(&pixels, &pixels);
        assert!(
            achieved <= 1.05 * floor,
            "achieved {achieved} vs floor {floor}"
        );
        assert!(!trained.curve.is_empty());
        assert!(trained.best_loss.is_finite());
    }

    #[test]
    fn training_is_deterministic_per_seed() {
        let images: Vec<MultiChannelImage> = (0..6)
            .map(|i| {
                let v = i as f64 / 6.0;
                MultiChannelImage::new(2, 2, 2, vec![v; 8])
            })
            .collect();
        let arch = VaeArchitecture { input_dim: 8, hidden_dim: 6, latent_dim: 2 };
        let config = TrainConfig {
            max_epochs: 20,
            learning_rate: 1e-3,
            batch_size: 4,
            w_kl: 1e-3,
            patience: 20,
            seed: 7,
        };
        let a = train(&images, arch, &config).unwrap();
        let b = train(&images, arch, &config).unwrap();
        assert_eq!(a.model, b.model);
        assert_eq!(a.curve, b.curve);
    }

    #[test]
    fn invalid_configs_are_rejected() {
        let image = MultiChannelImage::new(2, 2, 2, vec![0.5; 8]);
        let arch = VaeArchitecture { input_dim: 8, hidden_dim: 4, latent_dim: 2 };
        let bad = TrainConfig { patience: 50, max_epochs: 20, ..TrainConfig::default() };
        assert!(matches!(
            train(core::slice::from_ref(&image), arch, &bad),
            Err(VaeError::InvalidConfig(_))
        ));
        assert!(matches!(
            train(&[], arch, &TrainConfig { max_epochs: 50, patience: 40, ..TrainConfig::default() }),
            Err(VaeError::EmptyDataset)
        ));
    }

    #[test]
    fn generation_is_seeded_and_counts_match() {
        let model = VaeModel::new(
            VaeArchitecture { input_dim: 8, hidden_dim: 4, latent_dim: 2 },
            3,
        );
        let a = generate(&model, 2, 2, 2, 9, 77).unwrap();
        let b = generate(&model, 2, 2, 2, 9, 77).unwrap();
        assert_eq!(a.len(), 9);
        assert_eq!(a, b);
        let c = generate(&model, 2, 2, 2, 9, 78).unwrap();
        assert_ne!(a, c);
        for image in &a {
            assert!(image.pixels.iter().all(|p| *p > 0.0 && *p < 1.0));
        }
        // A zero latent decodes deterministically.
        let mean_a = model.decode(&[0.0, 0.0]).unwrap();
        let mean_b = model.decode(&[0.0, 0.0]).unwrap();
        assert_eq!(mean_a, mean_b);
    }

    #[test]
    fn oversampling_balances_bins() {
        // Balanced already: identity.
        let balanced = [0.02, 0.04, 0.06, 0.08];
        assert_eq!(oversample_indices(&balanced, 4, 0.01, 0.09), vec![0, 1, 2, 3]);

        // Counts (8, 2) -> (8, 8): six duplicates cycling over the small bin.
        let mut h = vec![0.02; 8];
        h.extend([0.08, 0.085]);
        let indices = oversample_indices(&h, 2, 0.01, 0.09);
        assert_eq!(indices.len(), 16);
        assert_eq!(&indices[..10], &[0, 1, 2, 3, 4, 5, 6, 7, 8, 9]);
        assert_eq!(&indices[10..], &[8, 9, 8, 9, 8, 9]);
    }

    #[test]
    fn oversampling_histogram_matches_max_bin() {
        let mut rng = stream(13, 0);
        let h: Vec<f64> =
            (0..37).map(|_| rand::Rng::gen_range(&mut rng, 0.01..0.1)).collect();
        let indices = oversample_indices(&h, 4, 0.01, 0.1);
        // Prefix is the untouched original dataset.
        assert!(indices[..37].iter().enumerate().all(|(i, &v)| i == v));
        let bin_of = |v: f64| -> usize {
            (((v - 0.01) / 0.09 * 4.0) as usize).min(3)
        };
        let mut counts = [0usize; 4];
        for &i in &indices {
            counts[bin_of(h[i])] += 1;
        }
        let mut originals = [0usize; 4];
        for &v in &h {
            originals[bin_of(v)] += 1;
        }
        let max = *originals.iter().max().unwrap();
        for (bin, &count) in counts.iter().enumerate() {
            if originals[bin] > 0 {
                assert_eq!(count, max, "bin {bin}");
            } else {
                assert_eq!(count, 0, "bin {bin}");
            }
        }
    }

    #[test]
    fn thickness_normalization_round_trips() {
        let (h_min, h_max) = (0.01, 0.1);
        let mut rng = stream(17, 0);
        for _ in 0..200 {
            let h = rand::Rng::gen_range(&mut rng, h_min..h_max);
            let back = denormalize_hf(normalize_hf(h, h_min, h_max), h_min, h_max);
            assert!((back - h).abs() < 1e-12);
        }
    }

    #[test]
    fn scalar_extraction_cases() {
        let (h_min, h_max) = (0.01, 0.1);
        // Uniform half-value second channel: the denormalized midpoint.
        let mut pixels = vec![1.0; 4];
        pixels.extend([0.5; 4]);
        let image = MultiChannelImage::new(2, 2, 2, pixels);
        assert!((extract_scalar_hf(&image, h_min, h_max) - 0.055).abs() < 1e-12);

        // Uniform full-value second channel: the upper bound.
        let mut pixels = vec![1.0, 0.0, 1.0, 0.0];
        pixels.extend([1.0; 4]);
        let image = MultiChannelImage::new(2, 2, 2, pixels);
        assert!((extract_scalar_hf(&image, h_min, h_max) - h_max).abs() < 1e-12);

        // All-void first channel: lower bound fallback.
        let mut pixels = vec![0.0; 4];
        pixels.extend([0.9; 4]);
        let image = MultiChannelImage::new(2, 2, 2, pixels);
        assert_eq!(extract_scalar_hf(&image, h_min, h_max), h_min);

        // Random image against a direct masked mean.
        let mut rng = stream(19, 0);
        let pixels: Vec<f64> = (0..32).map(|_| rand::Rng::gen::<f64>(&mut rng)).collect();
        let image = MultiChannelImage::new(2, 4, 4, pixels);
        let mask = image.channel(0);
        let field = image.channel(1);
        let mut sum = 0.0;
        let mut count = 0;
        for i in 0..16 {
            if mask[i] >= 0.5 {
                sum += denormalize_hf(field[i], h_min, h_max);
                count += 1;
            }
        }
        let expect = (sum / count as f64).clamp(h_min, h_max);
        assert!((extract_scalar_hf(&image, h_min, h_max) - expect).abs() < 1e-12);
    }
}
