//! Multi-head scaled dot-product self-attention.

use ndarray::linalg::general_mat_mul;
use ndarray::{s, Array2, ArrayView2};
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::init::glorot;
use super::ModelError;

/// Per-head projections are stored side by side: head `j` owns columns
/// `j*d_k .. (j+1)*d_k` of `w_q`, `w_k` and `w_v`, and rows
/// `j*d_k .. (j+1)*d_k` of `w_o`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttentionParams {
    pub heads: usize,
    /// `d_model × (h·d_k)`
    pub w_q: Array2<f64>,
    pub w_k: Array2<f64>,
    pub w_v: Array2<f64>,
    /// `(h·d_k) × d_out`
    pub w_o: Array2<f64>,
}

impl AttentionParams {
    pub fn zeros(d_model: usize, heads: usize, d_k: usize, d_out: usize) -> Self {
        AttentionParams {
            heads,
            w_q: Array2::zeros((d_model, heads * d_k)),
            w_k: Array2::zeros((d_model, heads * d_k)),
            w_v: Array2::zeros((d_model, heads * d_k)),
            w_o: Array2::zeros((heads * d_k, d_out)),
        }
    }

    pub fn init<R: Rng>(d_model: usize, heads: usize, d_k: usize, d_out: usize, rng: &mut R) -> Self {
        // Glorot bounds use the per-head fan-out.
        AttentionParams {
            heads,
            w_q: glorot_heads(d_model, heads, d_k, rng),
            w_k: glorot_heads(d_model, heads, d_k, rng),
            w_v: glorot_heads(d_model, heads, d_k, rng),
            w_o: glorot(heads * d_k, d_out, rng),
        }
    }

    pub fn d_k(&self) -> usize {
        self.w_q.ncols() / self.heads
    }

    pub fn d_model(&self) -> usize {
        self.w_q.nrows()
    }

    /// Query projection of head `j`, `d_model × d_k`.
    pub fn head_q(&self, j: usize) -> ArrayView2<'_, f64> {
        let dk = self.d_k();
        self.w_q.slice(s![.., j * dk..(j + 1) * dk])
    }
}

fn glorot_heads<R: Rng>(d_model: usize, heads: usize, d_k: usize, rng: &mut R) -> Array2<f64> {
    let mut w = Array2::zeros((d_model, heads * d_k));
    for j in 0..heads {
        w.slice_mut(s![.., j * d_k..(j + 1) * d_k]).assign(&glorot(d_model, d_k, rng));
    }
    w
}

#[derive(Debug, Clone)]
pub struct AttentionCache {
    q: Array2<f64>,
    k: Array2<f64>,
    v: Array2<f64>,
    /// Attention weights per (example, head), each `L × L`.
    weights: Vec<Array2<f64>>,
    concat: Array2<f64>,
    steps: usize,
    batch: usize,
}

impl AttentionCache {
    /// Softmax weights of example `b`, head `j`.
    pub fn weights(&self, b: usize, j: usize, heads: usize) -> &Array2<f64> {
        &self.weights[b * heads + j]
    }
}

fn softmax_rows(m: &mut Array2<f64>) {
    for mut row in m.rows_mut() {
        let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        row.mapv_inplace(|v| (v - max).exp());
        let sum = row.sum();
        row /= sum;
    }
}

/// Time-major batched attention; `x` is `(L·B) × d_model`.
pub fn mha_forward_batch(
    p: &AttentionParams,
    x: ArrayView2<'_, f64>,
    steps: usize,
    batch: usize,
) -> Result<(Array2<f64>, AttentionCache), ModelError> {
    let dk = p.d_k();
    let scale = 1.0 / (dk as f64).sqrt();
    let q = x.dot(&p.w_q);
    let k = x.dot(&p.w_k);
    let v = x.dot(&p.w_v);
    let mut concat = Array2::zeros((steps * batch, p.heads * dk));
    let mut weights = Vec::with_capacity(batch * p.heads);
    for b in 0..batch {
        for j in 0..p.heads {
            let cols = s![b..;batch, j * dk..(j + 1) * dk];
            let qh = q.slice(cols);
            let kh = k.slice(cols);
            let vh = v.slice(cols);
            let mut scores = qh.dot(&kh.t());
            scores *= scale;
            if scores.iter().any(|v| !v.is_finite()) {
                return Err(ModelError::Numeric { layer: "attention".into() });
            }
            softmax_rows(&mut scores);
            let mut out = concat.slice_mut(cols);
            general_mat_mul(1.0, &scores, &vh, 0.0, &mut out);
            weights.push(scores);
        }
    }
    let y = concat.dot(&p.w_o);
    Ok((y, AttentionCache { q, k, v, weights, concat, steps, batch }))
}

/// Accumulates parameter gradients and returns `dX`.
pub fn mha_backward_batch(
    p: &AttentionParams,
    cache: &AttentionCache,
    x: ArrayView2<'_, f64>,
    d_out: ArrayView2<'_, f64>,
    grad: &mut AttentionParams,
) -> Array2<f64> {
    let dk = p.d_k();
    let scale = 1.0 / (dk as f64).sqrt();
    let batch = cache.batch;
    general_mat_mul(1.0, &cache.concat.t(), &d_out, 1.0, &mut grad.w_o);
    let d_concat = d_out.dot(&p.w_o.t());
    let rows = cache.steps * batch;
    let mut dq = Array2::zeros((rows, p.heads * dk));
    let mut dk_m = Array2::zeros((rows, p.heads * dk));
    let mut dv = Array2::zeros((rows, p.heads * dk));
    for b in 0..batch {
        for j in 0..p.heads {
            let cols = s![b..;batch, j * dk..(j + 1) * dk];
            let a = &cache.weights[b * p.heads + j];
            let d_o = d_concat.slice(cols);
            let vh = cache.v.slice(cols);
            let qh = cache.q.slice(cols);
            let kh = cache.k.slice(cols);
            let mut dv_h = dv.slice_mut(cols);
            general_mat_mul(1.0, &a.t(), &d_o, 0.0, &mut dv_h);
            let da = d_o.dot(&vh.t());
            let mut ds = Array2::zeros(a.dim());
            for (i, (a_row, da_row)) in a.rows().into_iter().zip(da.rows()).enumerate() {
                let dot: f64 = a_row.iter().zip(da_row.iter()).map(|(x, y)| x * y).sum();
                for c in 0..a_row.len() {
                    ds[[i, c]] = a_row[c] * (da_row[c] - dot) * scale;
                }
            }
            let mut dq_h = dq.slice_mut(cols);
            general_mat_mul(1.0, &ds, &kh, 0.0, &mut dq_h);
            let mut dk_h = dk_m.slice_mut(cols);
            general_mat_mul(1.0, &ds.t(), &qh, 0.0, &mut dk_h);
        }
    }
    general_mat_mul(1.0, &x.t(), &dq, 1.0, &mut grad.w_q);
    general_mat_mul(1.0, &x.t(), &dk_m, 1.0, &mut grad.w_k);
    general_mat_mul(1.0, &x.t(), &dv, 1.0, &mut grad.w_v);
    let mut dx = dq.dot(&p.w_q.t());
    general_mat_mul(1.0, &dk_m, &p.w_k.t(), 1.0, &mut dx);
    general_mat_mul(1.0, &dv, &p.w_v.t(), 1.0, &mut dx);
    dx
}

/// Single-sequence attention, `L × d_model` to `L × d_out`, plus the
/// per-head attention weights.
pub fn mha_forward(
    p: &AttentionParams,
    h: ArrayView2<'_, f64>,
) -> Result<(Array2<f64>, Vec<Array2<f64>>), ModelError> {
    let (y, cache) = mha_forward_batch(p, h, h.nrows(), 1)?;
    Ok((y, cache.weights))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn random(rows: usize, cols: usize, rng: &mut ChaCha8Rng) -> Array2<f64> {
        Array2::from_shape_simple_fn((rows, cols), || rng.random_range(-1.0..1.0))
    }

    #[test]
    fn zero_query_key_gives_uniform_weights() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut p = AttentionParams::init(6, 2, 3, 6, &mut rng);
        p.w_q.fill(0.0);
        p.w_k.fill(0.0);
        let h = random(5, 6, &mut rng);
        let (y, weights) = mha_forward(&p, h.view()).unwrap();
        for w in &weights {
            assert!(w.iter().all(|v| (v - 0.2).abs() < 1e-15));
        }
        // Each head returns the column mean of its values.
        let v = h.dot(&p.w_v);
        let mean = v.mean_axis(ndarray::Axis(0)).unwrap();
        let expected_row = mean.dot(&p.w_o);
        for row in y.rows() {
            for (a, b) in row.iter().zip(expected_row.iter()) {
                assert!((a - b).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn single_step_weight_is_one() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let p = AttentionParams::init(4, 2, 2, 4, &mut rng);
        let h = random(1, 4, &mut rng);
        let (y, weights) = mha_forward(&p, h.view()).unwrap();
        assert!(weights.iter().all(|w| w[[0, 0]] == 1.0));
        let expected = h.dot(&p.w_v).dot(&p.w_o);
        assert!((&y - &expected).iter().all(|v| v.abs() < 1e-12));
    }

    #[test]
    fn weight_rows_are_distributions() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let p = AttentionParams::init(8, 4, 3, 8, &mut rng);
        let h = random(7, 8, &mut rng);
        let (_, weights) = mha_forward(&p, h.view()).unwrap();
        for w in &weights {
            for row in w.rows() {
                assert!((row.sum() - 1.0).abs() < 1e-9);
                assert!(row.iter().all(|v| *v >= 0.0));
            }
        }
    }

    #[test]
    fn head_slice_shape() {
        let p = AttentionParams::zeros(512, 8, 256, 512);
        assert_eq!(p.head_q(3).dim(), (512, 256));
        assert_eq!(p.w_o.dim(), (2048, 512));
    }

    #[test]
    fn non_finite_scores_are_reported() {
        let mut p = AttentionParams::zeros(2, 1, 2, 2);
        p.w_q.fill(f64::INFINITY);
        p.w_k.fill(1.0);
        let h = Array2::from_elem((2, 2), 1.0);
        assert!(matches!(mha_forward(&p, h.view()), Err(ModelError::Numeric { .. })));
    }
}
