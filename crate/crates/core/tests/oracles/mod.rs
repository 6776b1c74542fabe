//! Brute-force reference implementations. Nothing here calls into the code
//! it checks beyond plain data accessors.

#![allow(dead_code)]

use ndarray::Array2;
use ran_core::embed::TiledEmbedding;
use ran_core::corpus::OneHotSequence;
use ran_core::seqmodel::{example_loss, SequenceModel};

#[derive(Debug, Clone, PartialEq)]
pub struct OracleReport {
    pub quantity: String,
    pub oracle: f64,
    pub implementation: f64,
    pub relative_error: f64,
}

pub fn relative_error(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1e-15)
}

impl OracleReport {
    pub fn new(quantity: impl Into<String>, oracle: f64, implementation: f64) -> Self {
        OracleReport { quantity: quantity.into(), oracle, implementation, relative_error: relative_error(oracle, implementation) }
    }
}

/// Solves `(ΦᵀΦ + λI) w = Φᵀt` by Gaussian elimination with partial pivoting.
/// `phi` is row-major with `cols` columns.
pub fn normal_equations(phi: &[Vec<f64>], t: &[f64], lambda: f64) -> Result<Vec<f64>, String> {
    let n = phi.first().map_or(0, |r| r.len());
    let mut a = vec![vec![0.0; n + 1]; n];
    for i in 0..n {
        for j in 0..n {
            a[i][j] = phi.iter().map(|r| r[i] * r[j]).sum::<f64>();
        }
        a[i][i] += lambda;
        a[i][n] = phi.iter().zip(t).map(|(r, y)| r[i] * y).sum::<f64>();
    }
    let scale = a.iter().flat_map(|r| r[..n].iter()).fold(0.0f64, |m, v| m.max(v.abs()));
    for col in 0..n {
        let piv = (col..n).max_by(|&x, &y| a[x][col].abs().total_cmp(&a[y][col].abs())).unwrap();
        if a[piv][col].abs() <= scale * 1e-14 || scale == 0.0 {
            return Err("singular system".into());
        }
        a.swap(col, piv);
        for r in col + 1..n {
            let f = a[r][col] / a[col][col];
            for c in col..=n {
                a[r][c] -= f * a[col][c];
            }
        }
    }
    let mut w = vec![0.0; n];
    for i in (0..n).rev() {
        let s: f64 = (i + 1..n).map(|j| a[i][j] * w[j]).sum();
        w[i] = (a[i][n] - s) / a[i][i];
    }
    Ok(w)
}

/// Central difference of a scalar function.
pub fn central_diff(f: impl Fn(f64) -> f64, x: f64, step: f64) -> f64 {
    (f(x + step) - f(x - step)) / (2.0 * step)
}

const STENCIL: [f64; 4] = [4.0 / 5.0, -1.0 / 5.0, 4.0 / 105.0, -1.0 / 280.0];

/// Eighth-order central difference of `f` at 0.
pub fn stencil8(f: &mut impl FnMut(f64) -> f64, h: f64) -> f64 {
    STENCIL
        .iter()
        .enumerate()
        .map(|(k, c)| {
            let d = (k + 1) as f64 * h;
            c * (f(d) - f(-d))
        })
        .sum::<f64>()
        / h
}

/// Evaluates [`stencil8`] on the steps `h`, `h/1.5`, ... (five of them) and
/// returns the smaller-step estimate of the adjacent pair that agrees best.
pub fn ladder_diff(mut f: impl FnMut(f64) -> f64, h: f64) -> f64 {
    let d: Vec<f64> = (0..5).map(|k| stencil8(&mut f, h / 1.5f64.powi(k))).collect();
    let k = (0..4)
        .min_by(|&a, &b| (d[a] - d[a + 1]).abs().total_cmp(&(d[b] - d[b + 1]).abs()))
        .unwrap();
    d[k + 1]
}

/// Central-difference gradient of the combined loss with respect to every
/// parameter, in `SequenceModel::tensors` order. Each entry comes from
/// [`ladder_diff`] with largest step `step`, which resolves both strongly
/// curved directions and gradients near 1e-9.
pub fn finite_diff_grad(
    model: &SequenceModel,
    r: &TiledEmbedding,
    y: &OneHotSequence,
    lambda: f64,
    step: f64,
) -> Vec<Array2<f64>> {
    let shapes: Vec<(usize, usize)> = model.tensors().iter().map(|(_, t)| t.dim()).collect();
    let mut work = model.clone();
    let mut out = Vec::with_capacity(shapes.len());
    for (ti, &(rows, cols)) in shapes.iter().enumerate() {
        let mut g = Array2::zeros((rows, cols));
        for i in 0..rows {
            for j in 0..cols {
                let orig = work.tensors_mut()[ti][(i, j)];
                g[(i, j)] = ladder_diff(
                    |d| {
                        work.tensors_mut()[ti][(i, j)] = orig + d;
                        example_loss(&work, r, y, lambda).unwrap()
                    },
                    step,
                );
                work.tensors_mut()[ti][(i, j)] = orig;
            }
        }
        out.push(g);
    }
    out
}

/// Weighted within-cluster sum of squares when each point goes to its
/// nearest center.
pub fn kmeans_cost(points: &[f64], weights: &[f64], centers: &[f64]) -> f64 {
    points
        .iter()
        .zip(weights)
        .map(|(p, w)| w * centers.iter().map(|c| (p - c).powi(2)).fold(f64::INFINITY, f64::min))
        .sum()
}

/// Optimal weighted 1-D K-Means by trying every assignment of sorted points
/// to `k` contiguous groups. Returns `(cost, sorted centers)`.
pub fn kmeans_exhaustive(points: &[f64], weights: &[f64], k: usize) -> (f64, Vec<f64>) {
    let mut idx: Vec<usize> = (0..points.len()).collect();
    idx.sort_by(|&a, &b| points[a].total_cmp(&points[b]));
    let p: Vec<f64> = idx.iter().map(|&i| points[i]).collect();
    let w: Vec<f64> = idx.iter().map(|&i| weights[i]).collect();
    let n = p.len();
    let mut best = (f64::INFINITY, Vec::new());
    // Each mask over the n-1 gaps with k-1 bits set is one partition.
    for mask in 0u64..(1u64 << (n - 1)) {
        if mask.count_ones() as usize != k - 1 {
            continue;
        }
        let mut centers = Vec::with_capacity(k);
        let mut cost = 0.0;
        let mut start = 0;
        for end in 1..=n {
            if end == n || mask & (1 << (end - 1)) != 0 {
                let ws: f64 = w[start..end].iter().sum();
                let c = if ws > 0.0 {
                    (start..end).map(|i| w[i] * p[i]).sum::<f64>() / ws
                } else {
                    p[start..end].iter().sum::<f64>() / (end - start) as f64
                };
                cost += (start..end).map(|i| w[i] * (p[i] - c).powi(2)).sum::<f64>();
                centers.push(c);
                start = end;
            }
        }
        if cost < best.0 {
            best = (cost, centers);
        }
    }
    best
}

/// Minimum-jerk polynomial `y0 + (g − y0)(10s³ − 15s⁴ + 6s⁵)` at time `t`,
/// written as a blend so both endpoints are reproduced exactly.
pub fn min_jerk_at(y0: [f64; 3], g: [f64; 3], duration: f64, t: f64) -> [f64; 3] {
    let s = (t / duration).clamp(0.0, 1.0);
    let b = s * s * s * (10.0 - 15.0 * s + 6.0 * s * s);
    std::array::from_fn(|a| (1.0 - b) * y0[a] + b * g[a])
}

/// [`min_jerk_at`] sampled every `dt` from `t = 0` to `t = T` inclusive.
pub fn min_jerk(y0: [f64; 3], g: [f64; 3], duration: f64, dt: f64) -> Vec<[f64; 3]> {
    let n = (duration / dt).round() as usize;
    (0..=n).map(|k| min_jerk_at(y0, g, duration, k as f64 * dt)).collect()
}

/// Error after `k` ticks of the discrete PD loop on a static target,
/// `e_{k+1} = (1 − kp·dt − kd) e_k + kd e_{k−1}` with `e_{−1} = e_0`,
/// solved through the roots of its characteristic polynomial.
pub fn servo_decay(kp: f64, kd: f64, dt: f64, e0: f64, k: u32) -> f64 {
    let a = 1.0 - kp * dt - kd;
    if kd == 0.0 {
        return a.powi(k as i32) * e0;
    }
    let disc = a * a + 4.0 * kd;
    assert!(disc > 0.0, "complex roots are not needed for these gains");
    let r1 = (a + disc.sqrt()) / 2.0;
    let r2 = (a - disc.sqrt()) / 2.0;
    // e_0 = c1 + c2, e_1 = a e_0 + kd e_0 = c1 r1 + c2 r2.
    let e1 = (a + kd) * e0;
    let c1 = (e1 - r2 * e0) / (r1 - r2);
    let c2 = e0 - c1;
    c1 * r1.powi(k as i32) + c2 * r2.powi(k as i32)
}
