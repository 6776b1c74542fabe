//! Instruction-to-sub-action network: BiLSTM, multi-head self-attention,
//! BiLSTM feed-forward with layer norm, BiLSTM autoencoder and a
//! time-distributed softmax, with hand-written gradients.

pub mod attention;
pub mod checkpoint;
mod init;
pub mod lstm;
pub mod metrics;
pub mod predict;
pub mod train;

use ndarray::linalg::general_mat_mul;
use ndarray::{s, Array2, ArrayView2, Axis};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::OneHotSequence;
use crate::embed::TiledEmbedding;

pub use attention::{mha_forward, AttentionParams};
pub use lstm::{bilstm_forward, BiLstmParams, LstmParams, SeqInput};

/// Lower clamp applied to probabilities inside the cross-entropy log.
pub const LOG_CLAMP: f64 = 1e-12;
const LAYER_NORM_EPS: f64 = 1e-5;

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("non-finite values produced by the {layer} layer")]
    Numeric { layer: String },
    #[error("training diverged at epoch {epoch}: loss is not finite")]
    Diverged { epoch: usize },
    #[error("invalid training configuration: {0}")]
    Config(String),
    #[error("empty {0}")]
    Empty(&'static str),
    #[error("checkpoint error: {0}")]
    Checkpoint(String),
    #[error(transparent)]
    Embed(#[from] crate::embed::EmbedError),
    #[error(transparent)]
    Corpus(#[from] crate::corpus::CorpusError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Layer widths. `reference()` gives the published configuration.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelDims {
    pub input: usize,
    pub seq_len: usize,
    pub classes: usize,
    pub lstm_units: usize,
    pub heads: usize,
    pub d_k: usize,
    pub ff_units: usize,
    pub latent_units: usize,
    pub decoder_units: usize,
}

impl ModelDims {
    pub fn reference() -> Self {
        ModelDims {
            input: 1024,
            seq_len: crate::corpus::SEQ_LEN,
            classes: crate::corpus::NUM_CLASSES,
            lstm_units: 256,
            heads: 8,
            d_k: 256,
            ff_units: 128,
            latent_units: 64,
            decoder_units: 128,
        }
    }

    /// Small configuration used for gradient checks and fast tests.
    pub fn tiny() -> Self {
        ModelDims {
            input: 8,
            seq_len: 4,
            classes: 5,
            lstm_units: 4,
            heads: 2,
            d_k: 4,
            ff_units: 4,
            latent_units: 2,
            decoder_units: 4,
        }
    }

    /// Full-length sequences with narrow layers, for quick experiments.
    pub fn compact() -> Self {
        ModelDims {
            input: 64,
            lstm_units: 16,
            heads: 2,
            d_k: 16,
            ff_units: 8,
            latent_units: 4,
            decoder_units: 8,
            ..ModelDims::reference()
        }
    }

    /// Width of the attention input and output.
    pub fn model_width(&self) -> usize {
        2 * self.lstm_units
    }

    pub fn bottleneck_width(&self) -> usize {
        2 * self.ff_units
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        let all = [
            self.input,
            self.seq_len,
            self.classes,
            self.lstm_units,
            self.heads,
            self.d_k,
            self.ff_units,
            self.latent_units,
            self.decoder_units,
        ];
        if all.contains(&0) {
            return Err(ModelError::Shape("every dimension must be positive".into()));
        }
        if self.decoder_units != self.ff_units {
            return Err(ModelError::Shape(
                "reconstruction width must equal bottleneck width".into(),
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayerNormParams {
    pub gain: Array2<f64>,
    pub bias: Array2<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DenseParams {
    /// `C × n`
    pub w: Array2<f64>,
    /// `1 × C`
    pub b: Array2<f64>,
}

/// All trainable parameters. Gradients use the same structure.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SequenceModel {
    pub dims: ModelDims,
    pub bilstm1: BiLstmParams,
    pub attention: AttentionParams,
    pub bilstm_ff: BiLstmParams,
    pub layernorm: LayerNormParams,
    pub ae_encoder: BiLstmParams,
    pub ae_decoder: BiLstmParams,
    pub dense: DenseParams,
}

impl SequenceModel {
    pub fn zeros(dims: ModelDims) -> Self {
        let w = dims.model_width();
        let n = dims.bottleneck_width();
        SequenceModel {
            dims,
            bilstm1: BiLstmParams::zeros(dims.input, dims.lstm_units),
            attention: AttentionParams::zeros(w, dims.heads, dims.d_k, w),
            bilstm_ff: BiLstmParams::zeros(w, dims.ff_units),
            layernorm: LayerNormParams { gain: Array2::zeros((1, n)), bias: Array2::zeros((1, n)) },
            ae_encoder: BiLstmParams::zeros(n, dims.latent_units),
            ae_decoder: BiLstmParams::zeros(2 * dims.latent_units, dims.decoder_units),
            dense: DenseParams {
                w: Array2::zeros((dims.classes, 2 * dims.decoder_units)),
                b: Array2::zeros((1, dims.classes)),
            },
        }
    }

    pub fn new(dims: ModelDims, seed: u64) -> Result<Self, ModelError> {
        dims.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let w = dims.model_width();
        let n = dims.bottleneck_width();
        Ok(SequenceModel {
            dims,
            bilstm1: BiLstmParams::init(dims.input, dims.lstm_units, &mut rng),
            attention: AttentionParams::init(w, dims.heads, dims.d_k, w, &mut rng),
            bilstm_ff: BiLstmParams::init(w, dims.ff_units, &mut rng),
            layernorm: LayerNormParams { gain: Array2::ones((1, n)), bias: Array2::zeros((1, n)) },
            ae_encoder: BiLstmParams::init(n, dims.latent_units, &mut rng),
            ae_decoder: BiLstmParams::init(2 * dims.latent_units, dims.decoder_units, &mut rng),
            dense: DenseParams {
                w: init::glorot(dims.classes, 2 * dims.decoder_units, &mut rng),
                b: Array2::zeros((1, dims.classes)),
            },
        })
    }

    /// Named parameter tensors in a fixed order.
    pub fn tensors(&self) -> Vec<(&'static str, &Array2<f64>)> {
        let mut v: Vec<(&'static str, &Array2<f64>)> = Vec::with_capacity(26);
        for (prefix, l) in [
            ("bilstm1", &self.bilstm1),
            ("bilstm_ff", &self.bilstm_ff),
            ("ae_encoder", &self.ae_encoder),
            ("ae_decoder", &self.ae_decoder),
        ] {
            let names = lstm_names(prefix);
            v.push((names[0], &l.fwd.w_x));
            v.push((names[1], &l.fwd.w_h));
            v.push((names[2], &l.fwd.b));
            v.push((names[3], &l.bwd.w_x));
            v.push((names[4], &l.bwd.w_h));
            v.push((names[5], &l.bwd.b));
        }
        v.push(("attention.w_q", &self.attention.w_q));
        v.push(("attention.w_k", &self.attention.w_k));
        v.push(("attention.w_v", &self.attention.w_v));
        v.push(("attention.w_o", &self.attention.w_o));
        v.push(("layernorm.gain", &self.layernorm.gain));
        v.push(("layernorm.bias", &self.layernorm.bias));
        v.push(("dense.w", &self.dense.w));
        v.push(("dense.b", &self.dense.b));
        v
    }

    /// Mutable tensors in the same order as [`SequenceModel::tensors`].
    pub fn tensors_mut(&mut self) -> Vec<&mut Array2<f64>> {
        let mut v: Vec<&mut Array2<f64>> = Vec::with_capacity(32);
        for l in [&mut self.bilstm1, &mut self.bilstm_ff, &mut self.ae_encoder, &mut self.ae_decoder] {
            v.push(&mut l.fwd.w_x);
            v.push(&mut l.fwd.w_h);
            v.push(&mut l.fwd.b);
            v.push(&mut l.bwd.w_x);
            v.push(&mut l.bwd.w_h);
            v.push(&mut l.bwd.b);
        }
        v.push(&mut self.attention.w_q);
        v.push(&mut self.attention.w_k);
        v.push(&mut self.attention.w_v);
        v.push(&mut self.attention.w_o);
        v.push(&mut self.layernorm.gain);
        v.push(&mut self.layernorm.bias);
        v.push(&mut self.dense.w);
        v.push(&mut self.dense.b);
        v
    }

    pub fn parameter_count(&self) -> usize {
        self.tensors().iter().map(|(_, t)| t.len()).sum()
    }

    pub fn all_finite(&self) -> bool {
        self.tensors().iter().all(|(_, t)| t.iter().all(|v| v.is_finite()))
    }
}

fn lstm_names(prefix: &str) -> [&'static str; 6] {
    match prefix {
        "bilstm1" => [
            "bilstm1.fwd.w_x",
            "bilstm1.fwd.w_h",
            "bilstm1.fwd.b",
            "bilstm1.bwd.w_x",
            "bilstm1.bwd.w_h",
            "bilstm1.bwd.b",
        ],
        "bilstm_ff" => [
            "bilstm_ff.fwd.w_x",
            "bilstm_ff.fwd.w_h",
            "bilstm_ff.fwd.b",
            "bilstm_ff.bwd.w_x",
            "bilstm_ff.bwd.w_h",
            "bilstm_ff.bwd.b",
        ],
        "ae_encoder" => [
            "ae_encoder.fwd.w_x",
            "ae_encoder.fwd.w_h",
            "ae_encoder.fwd.b",
            "ae_encoder.bwd.w_x",
            "ae_encoder.bwd.w_h",
            "ae_encoder.bwd.b",
        ],
        _ => [
            "ae_decoder.fwd.w_x",
            "ae_decoder.fwd.w_h",
            "ae_decoder.fwd.b",
            "ae_decoder.bwd.w_x",
            "ae_decoder.bwd.w_h",
            "ae_decoder.bwd.b",
        ],
    }
}

/// Single-example forward outputs.
#[derive(Debug, Clone, PartialEq)]
pub struct ForwardOutput {
    /// `L × C` class probabilities.
    pub probs: Array2<f64>,
    /// `L × 2u_ff` post-layer-norm feed-forward output.
    pub bottleneck: Array2<f64>,
    /// `L × 2u_dec` decoder output.
    pub reconstruction: Array2<f64>,
    /// `L × 2u_latent` latent code.
    pub latent: Array2<f64>,
}

/// Batched, time-major activations kept for the backward pass.
pub(crate) struct BatchCache {
    steps: usize,
    batch: usize,
    tiled: bool,
    input: Array2<f64>,
    h1: Array2<f64>,
    c1: lstm::BiLstmCache,
    attn_out: Array2<f64>,
    ca: attention::AttentionCache,
    cff: lstm::BiLstmCache,
    ln_xhat: Array2<f64>,
    ln_inv_std: Vec<f64>,
    bottleneck: Array2<f64>,
    latent: Array2<f64>,
    cenc: lstm::BiLstmCache,
    recon: Array2<f64>,
    cdec: lstm::BiLstmCache,
    probs: Array2<f64>,
}

fn check_finite(m: &Array2<f64>, layer: &str) -> Result<(), ModelError> {
    if m.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(ModelError::Numeric { layer: layer.to_string() })
    }
}

fn layer_norm(x: &Array2<f64>, p: &LayerNormParams) -> (Array2<f64>, Array2<f64>, Vec<f64>) {
    let n = x.ncols() as f64;
    let mut xhat = x.clone();
    let mut inv_std = Vec::with_capacity(x.nrows());
    for mut row in xhat.rows_mut() {
        let mean = row.sum() / n;
        let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
        let is = 1.0 / (var + LAYER_NORM_EPS).sqrt();
        row.mapv_inplace(|v| (v - mean) * is);
        inv_std.push(is);
    }
    let y = &xhat * &p.gain + &p.bias;
    (y, xhat, inv_std)
}

fn layer_norm_backward(
    dy: &Array2<f64>,
    xhat: &Array2<f64>,
    inv_std: &[f64],
    p: &LayerNormParams,
    grad: &mut LayerNormParams,
) -> Array2<f64> {
    grad.gain += &(dy * xhat).sum_axis(Axis(0)).insert_axis(Axis(0));
    grad.bias += &dy.sum_axis(Axis(0)).insert_axis(Axis(0));
    let dxhat = dy * &p.gain;
    let n = dy.ncols() as f64;
    let mut dx = Array2::zeros(dy.dim());
    for (r, ((dxh, xh), mut out)) in
        dxhat.rows().into_iter().zip(xhat.rows()).zip(dx.rows_mut()).enumerate()
    {
        let mean_d = dxh.sum() / n;
        let mean_dx = dxh.iter().zip(xh.iter()).map(|(a, b)| a * b).sum::<f64>() / n;
        for c in 0..dxh.len() {
            out[c] = inv_std[r] * (dxh[c] - mean_d - xh[c] * mean_dx);
        }
    }
    dx
}

fn softmax_rows(m: &mut Array2<f64>) {
    for mut row in m.rows_mut() {
        let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        row.mapv_inplace(|v| (v - max).exp());
        let sum = row.sum();
        row /= sum;
    }
}

/// Time-major batched forward. `input` is either `B × d` (tiled) or
/// `(L·B) × d`.
pub(crate) fn forward_batch(
    model: &SequenceModel,
    input: Array2<f64>,
    tiled: bool,
    batch: usize,
) -> Result<BatchCache, ModelError> {
    let dims = model.dims;
    let steps = dims.seq_len;
    if input.ncols() != dims.input {
        return Err(ModelError::Shape(format!(
            "input width {} does not match model input {}",
            input.ncols(),
            dims.input
        )));
    }
    let expected_rows = if tiled { batch } else { steps * batch };
    if input.nrows() != expected_rows {
        return Err(ModelError::Shape(format!(
            "input has {} rows, expected {expected_rows}",
            input.nrows()
        )));
    }
    let seq_in = if tiled { SeqInput::Tiled(input.view()) } else { SeqInput::Sequence(input.view()) };
    let (h1, c1) = lstm::bilstm_forward_batch(&model.bilstm1, seq_in, steps, batch);
    check_finite(&h1, "bilstm1")?;
    let (attn_out, ca) = attention::mha_forward_batch(&model.attention, h1.view(), steps, batch)?;
    check_finite(&attn_out, "attention")?;
    let (ff_out, cff) =
        lstm::bilstm_forward_batch(&model.bilstm_ff, SeqInput::Sequence(attn_out.view()), steps, batch);
    check_finite(&ff_out, "bilstm_ff")?;
    let (bottleneck, ln_xhat, ln_inv_std) = layer_norm(&ff_out, &model.layernorm);
    check_finite(&bottleneck, "layernorm")?;
    let (latent, cenc) = lstm::bilstm_forward_batch(
        &model.ae_encoder,
        SeqInput::Sequence(bottleneck.view()),
        steps,
        batch,
    );
    check_finite(&latent, "ae_encoder")?;
    let (recon, cdec) =
        lstm::bilstm_forward_batch(&model.ae_decoder, SeqInput::Sequence(latent.view()), steps, batch);
    check_finite(&recon, "ae_decoder")?;
    let mut probs = recon.dot(&model.dense.w.t()) + &model.dense.b;
    softmax_rows(&mut probs);
    check_finite(&probs, "dense")?;
    Ok(BatchCache {
        steps,
        batch,
        tiled,
        input,
        h1,
        c1,
        attn_out,
        ca,
        cff,
        ln_xhat,
        ln_inv_std,
        bottleneck,
        latent,
        cenc,
        recon,
        cdec,
        probs,
    })
}

impl BatchCache {
    fn example_rows(&self, m: &Array2<f64>, b: usize) -> Array2<f64> {
        m.slice(s![b..;self.batch, ..]).to_owned()
    }

    pub(crate) fn probs_of(&self, b: usize) -> Array2<f64> {
        self.example_rows(&self.probs, b)
    }

    /// Combined loss per example; `labels` is time-major `(L·B) × C`.
    pub(crate) fn losses(&self, labels: &Array2<f64>, lambda: f64) -> Vec<f64> {
        (0..self.batch)
            .map(|b| {
                loss(
                    self.probs.slice(s![b..;self.batch, ..]),
                    labels.slice(s![b..;self.batch, ..]),
                    self.bottleneck.slice(s![b..;self.batch, ..]),
                    self.recon.slice(s![b..;self.batch, ..]),
                    lambda,
                )
            })
            .collect()
    }

    /// Gradient of `scale · Σ_b loss_b` with respect to every parameter.
    pub(crate) fn backward(
        &self,
        model: &SequenceModel,
        labels: &Array2<f64>,
        lambda: f64,
        scale: f64,
    ) -> SequenceModel {
        let mut grad = SequenceModel::zeros(model.dims);
        let steps = self.steps;
        // Cross-entropy through softmax: dlogit = p·Σy − y.
        let mut d_logits = self.probs.clone();
        for (mut row, y) in d_logits.rows_mut().into_iter().zip(labels.rows()) {
            let ysum = y.sum();
            for (p, yv) in row.iter_mut().zip(y.iter()) {
                *p = scale * (*p * ysum - yv);
            }
        }
        general_mat_mul(1.0, &d_logits.t(), &self.recon, 1.0, &mut grad.dense.w);
        grad.dense.b += &d_logits.sum_axis(Axis(0)).insert_axis(Axis(0));
        let mut d_recon = d_logits.dot(&model.dense.w);

        // Reconstruction term: λ · mean over the L × n entries of each example.
        let n = self.bottleneck.ncols();
        let mse_coef = scale * lambda * 2.0 / (steps * n) as f64;
        let diff = &self.bottleneck - &self.recon;
        d_recon.scaled_add(-mse_coef, &diff);
        let mut d_bottleneck = diff * mse_coef;

        let d_latent = lstm::bilstm_backward_batch(
            &model.ae_decoder,
            &self.cdec,
            SeqInput::Sequence(self.latent.view()),
            d_recon.view(),
            &mut grad.ae_decoder,
        )
        .expect("sequence input yields input gradient");
        let d_bn_enc = lstm::bilstm_backward_batch(
            &model.ae_encoder,
            &self.cenc,
            SeqInput::Sequence(self.bottleneck.view()),
            d_latent.view(),
            &mut grad.ae_encoder,
        )
        .expect("sequence input yields input gradient");
        d_bottleneck += &d_bn_enc;
        let d_ff = layer_norm_backward(
            &d_bottleneck,
            &self.ln_xhat,
            &self.ln_inv_std,
            &model.layernorm,
            &mut grad.layernorm,
        );
        let d_attn = lstm::bilstm_backward_batch(
            &model.bilstm_ff,
            &self.cff,
            SeqInput::Sequence(self.attn_out.view()),
            d_ff.view(),
            &mut grad.bilstm_ff,
        )
        .expect("sequence input yields input gradient");
        let d_h1 = attention::mha_backward_batch(
            &model.attention,
            &self.ca,
            self.h1.view(),
            d_attn.view(),
            &mut grad.attention,
        );
        let input =
            if self.tiled { SeqInput::Tiled(self.input.view()) } else { SeqInput::Sequence(self.input.view()) };
        lstm::bilstm_backward_batch(&model.bilstm1, &self.c1, input, d_h1.view(), &mut grad.bilstm1);
        grad
    }
}

fn rows_identical(m: &Array2<f64>) -> bool {
    let first = m.row(0);
    m.rows().into_iter().all(|r| r == first)
}

fn prepare_input(model: &SequenceModel, r: &TiledEmbedding) -> Result<(Array2<f64>, bool), ModelError> {
    let (l, d) = r.rows.dim();
    if l != model.dims.seq_len || d != model.dims.input {
        return Err(ModelError::Shape(format!(
            "input is {l}×{d}, model expects {}×{}",
            model.dims.seq_len, model.dims.input
        )));
    }
    if rows_identical(&r.rows) {
        Ok((r.rows.slice(s![0..1, ..]).to_owned(), true))
    } else {
        Ok((r.rows.clone(), false))
    }
}

/// Full forward pass on one tiled instruction.
pub fn forward(model: &SequenceModel, r: &TiledEmbedding) -> Result<ForwardOutput, ModelError> {
    let (input, tiled) = prepare_input(model, r)?;
    let c = forward_batch(model, input, tiled, 1)?;
    Ok(ForwardOutput { probs: c.probs, bottleneck: c.bottleneck, reconstruction: c.recon, latent: c.latent })
}

/// Σ_t −Σ_c y log max(p, 1e-12) + λ · mean((B − B̂)²).
pub fn loss(
    probs: ArrayView2<'_, f64>,
    labels: ArrayView2<'_, f64>,
    bottleneck: ArrayView2<'_, f64>,
    reconstruction: ArrayView2<'_, f64>,
    lambda: f64,
) -> f64 {
    let ce: f64 = probs
        .iter()
        .zip(labels.iter())
        .filter(|(_, y)| **y != 0.0)
        .map(|(p, y)| -y * p.max(LOG_CLAMP).ln())
        .sum();
    let mse = if lambda == 0.0 {
        0.0
    } else {
        bottleneck
            .iter()
            .zip(reconstruction.iter())
            .map(|(a, b)| (a - b) * (a - b))
            .sum::<f64>()
            / bottleneck.len() as f64
    };
    ce + lambda * mse
}

/// Analytic gradient of the combined loss for one example.
pub fn backward(
    model: &SequenceModel,
    r: &TiledEmbedding,
    y: &OneHotSequence,
    lambda: f64,
) -> Result<SequenceModel, ModelError> {
    if y.matrix.dim() != (model.dims.seq_len, model.dims.classes) {
        return Err(ModelError::Shape("label matrix does not match model".into()));
    }
    let (input, tiled) = prepare_input(model, r)?;
    let c = forward_batch(model, input, tiled, 1)?;
    Ok(c.backward(model, &y.matrix, lambda, 1.0))
}

/// Combined loss of one example under the current parameters.
pub fn example_loss(
    model: &SequenceModel,
    r: &TiledEmbedding,
    y: &OneHotSequence,
    lambda: f64,
) -> Result<f64, ModelError> {
    let out = forward(model, r)?;
    Ok(loss(out.probs.view(), y.matrix.view(), out.bottleneck.view(), out.reconstruction.view(), lambda))
}
