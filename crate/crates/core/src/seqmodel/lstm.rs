//! Batched bidirectional LSTM with manual reverse-mode gradients.
//!
//! Sequences are stored time-major: row `t * batch + b` holds step `t` of
//! example `b`. Gate columns are ordered input, forget, cell, output.

use ndarray::linalg::general_mat_mul;
use ndarray::{s, Array2, ArrayView2, Axis};
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::init::{glorot, uniform};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LstmParams {
    /// `input × 4u`
    pub w_x: Array2<f64>,
    /// `u × 4u`
    pub w_h: Array2<f64>,
    /// `1 × 4u`
    pub b: Array2<f64>,
}

impl LstmParams {
    pub fn zeros(input: usize, units: usize) -> Self {
        LstmParams {
            w_x: Array2::zeros((input, 4 * units)),
            w_h: Array2::zeros((units, 4 * units)),
            b: Array2::zeros((1, 4 * units)),
        }
    }

    pub fn init<R: Rng>(input: usize, units: usize, rng: &mut R) -> Self {
        let mut b = Array2::zeros((1, 4 * units));
        b.slice_mut(s![.., units..2 * units]).fill(1.0);
        let r = 1.0 / (units as f64).sqrt();
        LstmParams {
            w_x: glorot(input, 4 * units, rng),
            w_h: uniform(units, 4 * units, r, rng),
            b,
        }
    }

    pub fn units(&self) -> usize {
        self.w_h.nrows()
    }

    pub fn input(&self) -> usize {
        self.w_x.nrows()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BiLstmParams {
    pub fwd: LstmParams,
    pub bwd: LstmParams,
}

impl BiLstmParams {
    pub fn zeros(input: usize, units: usize) -> Self {
        BiLstmParams { fwd: LstmParams::zeros(input, units), bwd: LstmParams::zeros(input, units) }
    }

    pub fn init<R: Rng>(input: usize, units: usize, rng: &mut R) -> Self {
        let fwd = LstmParams::init(input, units, rng);
        let bwd = LstmParams::init(input, units, rng);
        BiLstmParams { fwd, bwd }
    }

    pub fn units(&self) -> usize {
        self.fwd.units()
    }

    pub fn output(&self) -> usize {
        2 * self.units()
    }
}

/// Layer input: either a full time-major sequence, or one row per example
/// repeated at every step (the tiled instruction embedding).
#[derive(Debug, Clone, Copy)]
pub enum SeqInput<'a> {
    Sequence(ArrayView2<'a, f64>),
    Tiled(ArrayView2<'a, f64>),
}

impl SeqInput<'_> {
    fn width(&self) -> usize {
        match self {
            SeqInput::Sequence(x) | SeqInput::Tiled(x) => x.ncols(),
        }
    }
}

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// Cached activations of one direction.
#[derive(Debug, Clone)]
pub struct DirCache {
    /// Activated gates `[i, f, g, o]`, time-major `(L·B) × 4u`.
    gates: Array2<f64>,
    /// Cell states, `(L·B) × u`.
    cells: Array2<f64>,
    /// Hidden states, `(L·B) × u`.
    hidden: Array2<f64>,
    reverse: bool,
}

fn direction_forward(
    p: &LstmParams,
    input: SeqInput<'_>,
    steps: usize,
    batch: usize,
    reverse: bool,
) -> DirCache {
    let u = p.units();
    let rows = steps * batch;
    // Input projection plus bias, either per step or once per example.
    let xproj = match input {
        SeqInput::Sequence(x) => x.dot(&p.w_x) + &p.b,
        SeqInput::Tiled(x) => x.dot(&p.w_x) + &p.b,
    };
    let tiled = matches!(input, SeqInput::Tiled(_));
    let mut gates = Array2::zeros((rows, 4 * u));
    let mut cells = Array2::zeros((rows, u));
    let mut hidden = Array2::zeros((rows, u));
    let mut h_prev = Array2::<f64>::zeros((batch, u));
    let mut c_prev = Array2::<f64>::zeros((batch, u));
    for s_i in 0..steps {
        let t = if reverse { steps - 1 - s_i } else { s_i };
        let r0 = t * batch;
        let mut g = if tiled {
            xproj.clone()
        } else {
            xproj.slice(s![r0..r0 + batch, ..]).to_owned()
        };
        general_mat_mul(1.0, &h_prev, &p.w_h, 1.0, &mut g);
        let mut c_t = Array2::zeros((batch, u));
        let mut h_t = Array2::zeros((batch, u));
        for b in 0..batch {
            let mut row = g.row_mut(b);
            let row = row.as_slice_mut().expect("contiguous gate row");
            let (ig, rest) = row.split_at_mut(u);
            let (fg, rest) = rest.split_at_mut(u);
            let (gg, og) = rest.split_at_mut(u);
            for k in 0..u {
                let i = sigmoid(ig[k]);
                let f = sigmoid(fg[k]);
                let gv = gg[k].tanh();
                let o = sigmoid(og[k]);
                ig[k] = i;
                fg[k] = f;
                gg[k] = gv;
                og[k] = o;
                let c = f * c_prev[[b, k]] + i * gv;
                c_t[[b, k]] = c;
                h_t[[b, k]] = o * c.tanh();
            }
        }
        gates.slice_mut(s![r0..r0 + batch, ..]).assign(&g);
        cells.slice_mut(s![r0..r0 + batch, ..]).assign(&c_t);
        hidden.slice_mut(s![r0..r0 + batch, ..]).assign(&h_t);
        h_prev = h_t;
        c_prev = c_t;
    }
    DirCache { gates, cells, hidden, reverse }
}

/// Returns pre-activation gate gradients `(L·B) × 4u` and accumulates `dW_h`.
fn direction_backward(
    p: &LstmParams,
    cache: &DirCache,
    d_hidden: ArrayView2<'_, f64>,
    steps: usize,
    batch: usize,
    dw_h: &mut Array2<f64>,
) -> Array2<f64> {
    let u = p.units();
    let mut d_gates = Array2::zeros((steps * batch, 4 * u));
    let mut dh_next = Array2::<f64>::zeros((batch, u));
    let mut dc_next = Array2::<f64>::zeros((batch, u));
    let zeros = Array2::<f64>::zeros((batch, u));
    for s_i in (0..steps).rev() {
        let t = if cache.reverse { steps - 1 - s_i } else { s_i };
        let r0 = t * batch;
        let prev = if s_i == 0 {
            None
        } else {
            Some(if cache.reverse { (t + 1) * batch } else { (t - 1) * batch })
        };
        let c_prev = match prev {
            Some(p0) => cache.cells.slice(s![p0..p0 + batch, ..]),
            None => zeros.view(),
        };
        let h_prev = match prev {
            Some(p0) => cache.hidden.slice(s![p0..p0 + batch, ..]),
            None => zeros.view(),
        };
        let gates = cache.gates.slice(s![r0..r0 + batch, ..]);
        let cells = cache.cells.slice(s![r0..r0 + batch, ..]);
        let mut dg = d_gates.slice_mut(s![r0..r0 + batch, ..]);
        for b in 0..batch {
            for k in 0..u {
                let i = gates[[b, k]];
                let f = gates[[b, u + k]];
                let g = gates[[b, 2 * u + k]];
                let o = gates[[b, 3 * u + k]];
                let tc = cells[[b, k]].tanh();
                let dh = d_hidden[[r0 + b, k]] + dh_next[[b, k]];
                let d_o = dh * tc;
                let dc = dh * o * (1.0 - tc * tc) + dc_next[[b, k]];
                let d_i = dc * g;
                let d_g = dc * i;
                let d_f = dc * c_prev[[b, k]];
                dc_next[[b, k]] = dc * f;
                dg[[b, k]] = d_i * i * (1.0 - i);
                dg[[b, u + k]] = d_f * f * (1.0 - f);
                dg[[b, 2 * u + k]] = d_g * (1.0 - g * g);
                dg[[b, 3 * u + k]] = d_o * o * (1.0 - o);
            }
        }
        if prev.is_some() {
            let dg = d_gates.slice(s![r0..r0 + batch, ..]);
            general_mat_mul(1.0, &h_prev.t(), &dg, 1.0, dw_h);
            dh_next = dg.dot(&p.w_h.t());
        }
    }
    d_gates
}

/// Forward cache for a bidirectional layer.
#[derive(Debug, Clone)]
pub struct BiLstmCache {
    fwd: DirCache,
    bwd: DirCache,
    steps: usize,
    batch: usize,
}

/// Runs both directions and concatenates `[forward, backward]` hidden states.
pub fn bilstm_forward_batch(
    p: &BiLstmParams,
    input: SeqInput<'_>,
    steps: usize,
    batch: usize,
) -> (Array2<f64>, BiLstmCache) {
    assert_eq!(input.width(), p.fwd.input(), "BiLSTM input width mismatch");
    let fwd = direction_forward(&p.fwd, input, steps, batch, false);
    let bwd = direction_forward(&p.bwd, input, steps, batch, true);
    let u = p.units();
    let mut out = Array2::zeros((steps * batch, 2 * u));
    out.slice_mut(s![.., ..u]).assign(&fwd.hidden);
    out.slice_mut(s![.., u..]).assign(&bwd.hidden);
    (out, BiLstmCache { fwd, bwd, steps, batch })
}

/// Accumulates parameter gradients into `grad` and returns the input
/// gradient for sequence inputs (`None` for tiled inputs).
pub fn bilstm_backward_batch(
    p: &BiLstmParams,
    cache: &BiLstmCache,
    input: SeqInput<'_>,
    d_out: ArrayView2<'_, f64>,
    grad: &mut BiLstmParams,
) -> Option<Array2<f64>> {
    let u = p.units();
    let (steps, batch) = (cache.steps, cache.batch);
    let mut d_input: Option<Array2<f64>> = None;
    for (params, dir, g, cols) in [
        (&p.fwd, &cache.fwd, &mut grad.fwd, s![.., ..u]),
        (&p.bwd, &cache.bwd, &mut grad.bwd, s![.., u..]),
    ] {
        let dg = direction_backward(params, dir, d_out.slice(cols), steps, batch, &mut g.w_h);
        g.b += &dg.sum_axis(Axis(0)).insert_axis(Axis(0));
        match input {
            SeqInput::Sequence(x) => {
                general_mat_mul(1.0, &x.t(), &dg, 1.0, &mut g.w_x);
                match d_input.as_mut() {
                    Some(dx) => general_mat_mul(1.0, &dg, &params.w_x.t(), 1.0, dx),
                    None => d_input = Some(dg.dot(&params.w_x.t())),
                }
            }
            SeqInput::Tiled(x) => {
                let mut summed = Array2::<f64>::zeros((batch, 4 * u));
                for t in 0..steps {
                    summed += &dg.slice(s![t * batch..(t + 1) * batch, ..]);
                }
                general_mat_mul(1.0, &x.t(), &summed, 1.0, &mut g.w_x);
            }
        }
    }
    d_input
}

/// Single-sequence BiLSTM: `L × k` input to `L × 2u` output.
pub fn bilstm_forward(p: &BiLstmParams, input: ArrayView2<'_, f64>) -> Array2<f64> {
    bilstm_forward_batch(p, SeqInput::Sequence(input), input.nrows(), 1).0
}
