//! Mini-batch Adam training with plateau learning-rate decay and early
//! stopping on validation loss.

use ndarray::{Array2, Zip};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{forward_batch, ModelError, SequenceModel};
use crate::corpus::{encode_actions, Corpus};
use crate::embed::EmbeddingProvider;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub lr: f64,
    pub patience: usize,
    pub min_delta: f64,
    pub max_epochs: usize,
    pub lambda_recon: f64,
    /// Epochs without improvement before the learning rate is halved.
    pub plateau_epochs: usize,
    pub lr_floor: f64,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            batch_size: 64,
            lr: 1e-4,
            patience: 5,
            min_delta: 1e-6,
            max_epochs: 300,
            lambda_recon: 0.1,
            plateau_epochs: 3,
            lr_floor: 1e-6,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), ModelError> {
        let bad = |m: &str| Err(ModelError::Config(m.to_string()));
        if self.batch_size == 0 || self.patience == 0 || self.max_epochs == 0 || self.plateau_epochs == 0 {
            return bad("batch_size, patience, plateau_epochs and max_epochs must be positive");
        }
        if !(self.lr > 0.0 && self.min_delta > 0.0 && self.lr_floor > 0.0) {
            return bad("lr, min_delta and lr_floor must be positive");
        }
        if !(self.lambda_recon >= 0.0 && self.lambda_recon.is_finite()) {
            return bad("lambda_recon must be non-negative");
        }
        Ok(())
    }
}

/// Embedded instructions with per-step class labels.
#[derive(Debug, Clone)]
pub struct Dataset {
    /// `N × d`, one embedding per example.
    pub inputs: Array2<f64>,
    /// `N` label sequences of length `L`.
    pub labels: Vec<Vec<usize>>,
    pub classes: usize,
    /// Class index of the padding label.
    pub pad: usize,
}

impl Dataset {
    pub fn from_corpus(
        corpus: &Corpus,
        provider: &dyn EmbeddingProvider,
        seq_len: usize,
    ) -> Result<Dataset, ModelError> {
        let d = provider.dim();
        let mut inputs = Array2::zeros((corpus.len(), d));
        let mut labels = Vec::with_capacity(corpus.len());
        for (i, ex) in corpus.examples.iter().enumerate() {
            let e = provider.embed(&ex.instruction)?;
            inputs.row_mut(i).assign(&ndarray::ArrayView1::from(&e.values[..]));
            labels.push(encode_actions(&ex.actions, seq_len, &corpus.vocab)?.classes());
        }
        Ok(Dataset { inputs, labels, classes: corpus.vocab.len(), pad: corpus.vocab.pad_index() })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    /// Inputs `B × d` and time-major one-hot labels `(L·B) × C` for `idx`.
    pub fn batch(&self, idx: &[usize]) -> (Array2<f64>, Array2<f64>) {
        let b = idx.len();
        let steps = self.labels.first().map_or(0, Vec::len);
        let mut x = Array2::zeros((b, self.inputs.ncols()));
        let mut y = Array2::zeros((steps * b, self.classes));
        for (k, &i) in idx.iter().enumerate() {
            x.row_mut(k).assign(&self.inputs.row(i));
            for (t, &c) in self.labels[i].iter().enumerate() {
                y[[t * b + k, c]] = 1.0;
            }
        }
        (x, y)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_loss: f64,
    pub lr: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainHistory {
    /// Training-set loss of the initial parameters.
    pub initial_train_loss: f64,
    pub initial_val_loss: f64,
    pub epochs: Vec<EpochRecord>,
    /// Epoch (1-based) whose parameters were returned.
    pub best_epoch: usize,
    pub stopped_early: bool,
}

struct Adam {
    m: Vec<Array2<f64>>,
    v: Vec<Array2<f64>>,
    t: i32,
}

const BETA1: f64 = 0.9;
const BETA2: f64 = 0.999;
const ADAM_EPS: f64 = 1e-8;

impl Adam {
    fn new(model: &SequenceModel) -> Self {
        let shapes: Vec<_> = model.tensors().iter().map(|(_, t)| t.raw_dim()).collect();
        Adam {
            m: shapes.iter().map(|s| Array2::zeros(s.clone())).collect(),
            v: shapes.iter().map(|s| Array2::zeros(s.clone())).collect(),
            t: 0,
        }
    }

    fn step(&mut self, model: &mut SequenceModel, grad: &SequenceModel, lr: f64) {
        self.t += 1;
        let c1 = 1.0 - BETA1.powi(self.t);
        let c2 = 1.0 - BETA2.powi(self.t);
        let grads = grad.tensors();
        for (((p, (_, g)), m), v) in
            model.tensors_mut().into_iter().zip(grads).zip(&mut self.m).zip(&mut self.v)
        {
            Zip::from(p).and(g).and(m).and(v).for_each(|p, &g, m, v| {
                *m = BETA1 * *m + (1.0 - BETA1) * g;
                *v = BETA2 * *v + (1.0 - BETA2) * g * g;
                *p -= lr * (*m / c1) / ((*v / c2).sqrt() + ADAM_EPS);
            });
        }
    }
}

/// Mean combined loss over a dataset.
pub fn dataset_loss(
    model: &SequenceModel,
    data: &Dataset,
    lambda: f64,
    batch_size: usize,
) -> Result<f64, ModelError> {
    if data.is_empty() {
        return Err(ModelError::Empty("dataset"));
    }
    let idx: Vec<usize> = (0..data.len()).collect();
    let mut total = 0.0;
    for chunk in idx.chunks(batch_size.max(1)) {
        let (x, y) = data.batch(chunk);
        let cache = forward_batch(model, x, true, chunk.len())?;
        total += cache.losses(&y, lambda).iter().sum::<f64>();
    }
    Ok(total / data.len() as f64)
}

/// Class index per step for every example, by argmax with lowest-index ties.
pub fn predict_classes(
    model: &SequenceModel,
    data: &Dataset,
    batch_size: usize,
) -> Result<Vec<Vec<usize>>, ModelError> {
    let idx: Vec<usize> = (0..data.len()).collect();
    let mut out = Vec::with_capacity(data.len());
    for chunk in idx.chunks(batch_size.max(1)) {
        let (x, _) = data.batch(chunk);
        let cache = forward_batch(model, x, true, chunk.len())?;
        for b in 0..chunk.len() {
            let probs = cache.probs_of(b);
            out.push(probs.rows().into_iter().map(|r| super::metrics::argmax(r.as_slice().unwrap())).collect());
        }
    }
    Ok(out)
}

/// Trains `model` and returns the parameters with the best validation loss.
pub fn train(
    model: SequenceModel,
    train_set: &Dataset,
    val_set: &Dataset,
    cfg: &TrainConfig,
) -> Result<(SequenceModel, TrainHistory), ModelError> {
    train_with_progress(model, train_set, val_set, cfg, |_| {})
}

pub fn train_with_progress(
    mut model: SequenceModel,
    train_set: &Dataset,
    val_set: &Dataset,
    cfg: &TrainConfig,
    mut on_epoch: impl FnMut(&EpochRecord),
) -> Result<(SequenceModel, TrainHistory), ModelError> {
    cfg.validate()?;
    if train_set.is_empty() {
        return Err(ModelError::Empty("training set"));
    }
    if val_set.is_empty() {
        return Err(ModelError::Empty("validation set"));
    }
    let eval_batch = cfg.batch_size.max(64);
    let initial_train_loss = dataset_loss(&model, train_set, cfg.lambda_recon, eval_batch)?;
    let initial_val_loss = dataset_loss(&model, val_set, cfg.lambda_recon, eval_batch)?;
    if !initial_train_loss.is_finite() || !initial_val_loss.is_finite() {
        return Err(ModelError::Diverged { epoch: 0 });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut adam = Adam::new(&model);
    let mut lr = cfg.lr;
    let mut best_val = initial_val_loss;
    let mut best_model = model.clone();
    let mut best_epoch = 0;
    let mut since_best = 0usize;
    let mut since_decay = 0usize;
    let mut epochs = Vec::new();
    let mut stopped_early = false;
    let mut order: Vec<usize> = (0..train_set.len()).collect();
    let steps = model.dims.seq_len;

    for epoch in 1..=cfg.max_epochs {
        order.shuffle(&mut rng);
        let mut epoch_loss = 0.0;
        for chunk in order.chunks(cfg.batch_size) {
            let (x, y) = train_set.batch(chunk);
            let cache = forward_batch(&model, x, true, chunk.len())
                .map_err(|_| ModelError::Diverged { epoch })?;
            let losses = cache.losses(&y, cfg.lambda_recon);
            let batch_loss: f64 = losses.iter().sum();
            if !batch_loss.is_finite() {
                return Err(ModelError::Diverged { epoch });
            }
            epoch_loss += batch_loss;
            let grad = cache.backward(&model, &y, cfg.lambda_recon, 1.0 / chunk.len() as f64);
            adam.step(&mut model, &grad, lr);
        }
        debug_assert_eq!(steps, model.dims.seq_len);
        if !model.all_finite() {
            return Err(ModelError::Diverged { epoch });
        }
        let train_loss = epoch_loss / train_set.len() as f64;
        let val_loss = dataset_loss(&model, val_set, cfg.lambda_recon, eval_batch)
            .map_err(|_| ModelError::Diverged { epoch })?;
        if !val_loss.is_finite() {
            return Err(ModelError::Diverged { epoch });
        }
        let record = EpochRecord { epoch, train_loss, val_loss, lr };
        on_epoch(&record);
        epochs.push(record);

        if val_loss < best_val - cfg.min_delta {
            best_val = val_loss;
            best_model = model.clone();
            best_epoch = epoch;
            since_best = 0;
            since_decay = 0;
        } else {
            since_best += 1;
            since_decay += 1;
            if since_decay >= cfg.plateau_epochs {
                lr = (lr * 0.5).max(cfg.lr_floor);
                since_decay = 0;
            }
            if since_best >= cfg.patience {
                stopped_early = true;
                break;
            }
        }
    }
    let history = TrainHistory { initial_train_loss, initial_val_loss, epochs, best_epoch, stopped_early };
    Ok((best_model, history))
}
