//! Radial-basis trajectory learner with a goal attractor.
//!
//! Each axis follows the first-order discrete system
//!
//! ```text
//! y[k+1] = y[k] + dt * (-y[k] + w1·φ1(t_k) + u(t_k) w2·φ2(t_k) + tanh(g - y[k]))
//! ```
//!
//! where φ1, φ2 are Gaussian banks over time. The weights come from a single
//! ridge regression on the demonstration, so fitting needs no iteration and
//! the goal `g` can be moved at rollout time.

use std::fmt;
use std::path::Path;
use std::str::FromStr;
use std::time::{Duration, Instant};

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const AXES: [&str; 3] = ["x", "y", "z"];

#[derive(Debug, Error)]
pub enum DatrnError {
    #[error("invalid trajectory: {0}")]
    Trajectory(String),
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("cannot place {requested} centers on {available} distinct time points")]
    TooManyCenters { requested: usize, available: usize },
    #[error("ridge system is singular; use ridge_lambda > 0")]
    Singular,
    #[error("rollout state became non-finite at step {step}")]
    NonFinite { step: usize },
    #[error("trajectory file line {line}: {msg}")]
    Parse { line: usize, msg: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Sampled Cartesian positions in meters, one row per time step.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    pub samples: Vec<[f64; 3]>,
    pub dt: f64,
}

impl Trajectory {
    pub fn new(samples: Vec<[f64; 3]>, dt: f64) -> Result<Self, DatrnError> {
        let t = Trajectory { samples, dt };
        t.validate()?;
        Ok(t)
    }

    pub fn validate(&self) -> Result<(), DatrnError> {
        if self.samples.len() < 2 {
            return Err(DatrnError::Trajectory("need at least two samples".into()));
        }
        if !(self.dt > 0.0 && self.dt.is_finite()) {
            return Err(DatrnError::Trajectory("dt must be positive".into()));
        }
        if self.samples.iter().flatten().any(|v| !v.is_finite()) {
            return Err(DatrnError::Trajectory("samples must be finite".into()));
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    /// Time of the last sample.
    pub fn duration(&self) -> f64 {
        (self.samples.len().saturating_sub(1)) as f64 * self.dt
    }

    pub fn first(&self) -> [f64; 3] {
        self.samples[0]
    }

    pub fn last(&self) -> [f64; 3] {
        self.samples[self.samples.len() - 1]
    }

    pub fn axis(&self, a: usize) -> Vec<f64> {
        self.samples.iter().map(|s| s[a]).collect()
    }

    /// Speed proxy `‖y[k+1] − y[k]‖`; the last sample repeats the previous value.
    pub fn step_lengths(&self) -> Vec<f64> {
        let mut out: Vec<f64> = self
            .samples
            .windows(2)
            .map(|w| (0..3).map(|a| (w[1][a] - w[0][a]).powi(2)).sum::<f64>().sqrt())
            .collect();
        out.push(*out.last().unwrap_or(&0.0));
        out
    }

    pub fn load(path: &Path) -> Result<Self, DatrnError> {
        std::fs::read_to_string(path)?.parse()
    }

    pub fn save(&self, path: &Path) -> Result<(), DatrnError> {
        std::fs::write(path, self.to_string())?;
        Ok(())
    }
}

/// CSV with `#` header lines for `dt` and the sample count, a column line
/// `x,y,z`, then one sample per line.
impl fmt::Display for Trajectory {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "# dt={}", self.dt)?;
        writeln!(f, "# samples={}", self.samples.len())?;
        writeln!(f, "{}", AXES.join(","))?;
        for s in &self.samples {
            writeln!(f, "{},{},{}", s[0], s[1], s[2])?;
        }
        Ok(())
    }
}

impl FromStr for Trajectory {
    type Err = DatrnError;

    fn from_str(text: &str) -> Result<Self, DatrnError> {
        let mut dt = None;
        let mut declared = None;
        let mut samples = Vec::new();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.trim();
            let perr = |msg: String| DatrnError::Parse { line: i + 1, msg };
            if line.is_empty() {
                continue;
            }
            if let Some(h) = line.strip_prefix('#') {
                if let Some((k, v)) = h.trim().split_once('=') {
                    match k.trim() {
                        "dt" => dt = Some(v.trim().parse::<f64>().map_err(|e| perr(e.to_string()))?),
                        "samples" => {
                            declared = Some(v.trim().parse::<usize>().map_err(|e| perr(e.to_string()))?)
                        }
                        _ => {}
                    }
                }
                continue;
            }
            let fields: Vec<&str> =
                line.split(|c: char| c == ',' || c.is_whitespace()).filter(|s| !s.is_empty()).collect();
            if fields.iter().map(|s| s.to_ascii_lowercase()).eq(AXES.iter().map(|s| s.to_string())) {
                continue;
            }
            if fields.len() != 3 {
                return Err(perr(format!("expected 3 values, found {}", fields.len())));
            }
            let mut row = [0.0; 3];
            for (slot, s) in row.iter_mut().zip(&fields) {
                *slot = s.parse().map_err(|_| perr(format!("`{s}` is not a number")))?;
            }
            samples.push(row);
        }
        let dt = dt.ok_or(DatrnError::Parse { line: 1, msg: "missing `# dt=` header".into() })?;
        if let Some(n) = declared {
            if n != samples.len() {
                return Err(DatrnError::Parse {
                    line: 1,
                    msg: format!("header declares {n} samples, found {}", samples.len()),
                });
            }
        }
        Trajectory::new(samples, dt)
    }
}

/// External input multiplying the second basis bank.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InputSignal {
    #[default]
    Zero,
    /// `u(t) = max(0, 1 − t/T)` with `T` the demonstration duration.
    Ramp,
}

impl InputSignal {
    pub fn value(self, t: f64, duration: f64) -> f64 {
        match self {
            InputSignal::Zero => 0.0,
            InputSignal::Ramp => (1.0 - t / duration).max(0.0),
        }
    }
}

impl FromStr for InputSignal {
    type Err = DatrnError;

    fn from_str(s: &str) -> Result<Self, DatrnError> {
        match s {
            "zero" => Ok(InputSignal::Zero),
            "ramp" => Ok(InputSignal::Ramp),
            other => Err(DatrnError::Config(format!("unknown input signal `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DatrnConfig {
    pub n1: usize,
    pub n2: usize,
    pub ridge_lambda: f64,
    pub input: InputSignal,
    pub seed: u64,
    /// Added to every K-Means weight as a fraction of the mean step length,
    /// so that slow stretches still attract some centers.
    pub speed_floor: f64,
}

impl Default for DatrnConfig {
    fn default() -> Self {
        DatrnConfig { n1: 25, n2: 25, ridge_lambda: 1e-6, input: InputSignal::Zero, seed: 0, speed_floor: 0.5 }
    }
}

impl DatrnConfig {
    pub fn validate(&self) -> Result<(), DatrnError> {
        if self.n1 == 0 || self.n2 == 0 {
            return Err(DatrnError::Config("n1 and n2 must be at least 1".into()));
        }
        if !(self.ridge_lambda >= 0.0 && self.ridge_lambda.is_finite()) {
            return Err(DatrnError::Config("ridge_lambda must be non-negative".into()));
        }
        if !(self.speed_floor >= 0.0 && self.speed_floor.is_finite()) {
            return Err(DatrnError::Config("speed_floor must be non-negative".into()));
        }
        Ok(())
    }
}

/// Per-axis affine map to zero mean and unit range.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Normalization {
    pub mean: [f64; 3],
    pub range: [f64; 3],
}

impl Normalization {
    pub fn of(traj: &Trajectory) -> Self {
        let mut mean = [0.0; 3];
        let mut range = [1.0; 3];
        for a in 0..3 {
            let v = traj.axis(a);
            mean[a] = v.iter().sum::<f64>() / v.len() as f64;
            let lo = v.iter().cloned().fold(f64::INFINITY, f64::min);
            let hi = v.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            // A constant axis keeps unit scale.
            if hi - lo > 0.0 {
                range[a] = hi - lo;
            }
        }
        Normalization { mean, range }
    }

    pub fn apply(&self, p: [f64; 3]) -> [f64; 3] {
        std::array::from_fn(|a| (p[a] - self.mean[a]) / self.range[a])
    }

    pub fn invert(&self, p: [f64; 3]) -> [f64; 3] {
        std::array::from_fn(|a| p[a] * self.range[a] + self.mean[a])
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AxisWeights {
    pub w1: Vec<f64>,
    pub w2: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RbfTrajectoryModel {
    pub centers1: Vec<f64>,
    pub centers2: Vec<f64>,
    pub sigma: f64,
    pub weights: [AxisWeights; 3],
    /// Fitted goal in meters.
    pub goal: [f64; 3],
    pub dt: f64,
    pub ridge_lambda: f64,
    pub input: InputSignal,
    /// Duration of the demonstration, used by the ramp input.
    pub duration: f64,
    pub normalization: Normalization,
}

/// Weighted 1-D K-Means (k-means++ seeding, Lloyd iterations). Returns sorted
/// centers.
pub fn kmeans_1d(
    points: &[f64],
    weights: &[f64],
    k: usize,
    seed: u64,
    max_iter: usize,
) -> Result<Vec<f64>, DatrnError> {
    let mut distinct = points.to_vec();
    distinct.sort_by(f64::total_cmp);
    distinct.dedup();
    if k == 0 || k > distinct.len() {
        return Err(DatrnError::TooManyCenters { requested: k, available: distinct.len() });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let total_w: f64 = weights.iter().sum();
    let mut centers = Vec::with_capacity(k);
    centers.push(if total_w > 0.0 {
        points[sample_index(weights, total_w, &mut rng)]
    } else {
        points[rng.random_range(0..points.len())]
    });
    let mut d2: Vec<f64> = points.iter().map(|p| (p - centers[0]).powi(2)).collect();
    while centers.len() < k {
        let score: Vec<f64> = d2.iter().zip(weights).map(|(d, w)| d * w).collect();
        let total: f64 = score.iter().sum();
        let next = if total > 0.0 {
            sample_index(&score, total, &mut rng)
        } else {
            // Every weighted point already sits on a center: take the farthest point.
            (0..points.len()).fold(0, |b, i| if d2[i] > d2[b] { i } else { b })
        };
        let c = points[next];
        centers.push(c);
        for (d, p) in d2.iter_mut().zip(points) {
            *d = d.min((p - c).powi(2));
        }
    }
    centers.sort_by(f64::total_cmp);
    let mut assign = vec![usize::MAX; points.len()];
    for _ in 0..max_iter {
        let mut changed = false;
        for (i, p) in points.iter().enumerate() {
            let mut best = 0;
            for j in 1..k {
                if (p - centers[j]).abs() < (p - centers[best]).abs() {
                    best = j;
                }
            }
            if assign[i] != best {
                assign[i] = best;
                changed = true;
            }
        }
        if !changed {
            break;
        }
        let mut sum = vec![0.0; k];
        let mut wsum = vec![0.0; k];
        for (i, &j) in assign.iter().enumerate() {
            sum[j] += weights[i] * points[i];
            wsum[j] += weights[i];
        }
        for j in 0..k {
            if wsum[j] > 0.0 {
                centers[j] = sum[j] / wsum[j];
            }
        }
        centers.sort_by(f64::total_cmp);
    }
    Ok(centers)
}

fn sample_index(weights: &[f64], total: f64, rng: &mut ChaCha8Rng) -> usize {
    let mut r = rng.random::<f64>() * total;
    for (i, w) in weights.iter().enumerate() {
        if r < *w {
            return i;
        }
        r -= w;
    }
    weights.iter().rposition(|w| *w > 0.0).unwrap_or(0)
}

/// Time-centers for one basis bank, concentrated where the demonstration moves
/// fastest.
pub fn place_centers(traj: &Trajectory, n: usize, seed: u64) -> Result<Vec<f64>, DatrnError> {
    place_centers_with_floor(traj, n, seed, 0.0)
}

pub fn place_centers_with_floor(
    traj: &Trajectory,
    n: usize,
    seed: u64,
    floor: f64,
) -> Result<Vec<f64>, DatrnError> {
    traj.validate()?;
    let times: Vec<f64> = (0..traj.len()).map(|k| k as f64 * traj.dt).collect();
    let mut w = traj.step_lengths();
    let mean = w.iter().sum::<f64>() / w.len() as f64;
    if mean == 0.0 {
        w.fill(1.0);
    } else if floor > 0.0 {
        w.iter_mut().for_each(|v| *v += floor * mean);
    }
    kmeans_1d(&times, &w, n, seed, 100)
}

/// Mean gap between neighboring centers; a single center falls back to
/// `duration / n`.
pub fn compute_width(centers: &[f64], duration: f64, n: usize) -> f64 {
    if centers.len() < 2 {
        return duration / n.max(1) as f64;
    }
    (centers[centers.len() - 1] - centers[0]) / (centers.len() - 1) as f64
}

pub fn activations(t: f64, centers: &[f64], sigma: f64) -> Vec<f64> {
    centers.iter().map(|c| (-(t - c).powi(2) / (2.0 * sigma * sigma)).exp()).collect()
}

/// Solves `min ‖Φw − t‖² + λ‖w‖²` by QR on the stacked system `[Φ; √λ I]`.
pub fn ridge_solve(phi: &DMatrix<f64>, t: &DVector<f64>, lambda: f64) -> Result<DVector<f64>, DatrnError> {
    let w = ridge_solve_many(phi, &DMatrix::from_column_slice(t.len(), 1, t.as_slice()), lambda)?;
    Ok(w.column(0).into_owned())
}

/// [`ridge_solve`] for several right-hand sides sharing one factorization.
pub fn ridge_solve_many(
    phi: &DMatrix<f64>,
    targets: &DMatrix<f64>,
    lambda: f64,
) -> Result<DMatrix<f64>, DatrnError> {
    let (m, n) = phi.shape();
    if targets.nrows() != m {
        return Err(DatrnError::Config("target rows do not match design matrix".into()));
    }
    let mut a = DMatrix::zeros(m + n, n);
    a.view_mut((0, 0), (m, n)).copy_from(phi);
    let root = lambda.sqrt();
    for i in 0..n {
        a[(m + i, i)] = root;
    }
    let mut b = DMatrix::zeros(m + n, targets.ncols());
    b.view_mut((0, 0), (m, targets.ncols())).copy_from(targets);
    let (q, r) = a.qr().unpack();
    let scale = r.diagonal().iter().fold(0.0f64, |acc, v| acc.max(v.abs()));
    if scale == 0.0 || r.diagonal().iter().any(|v| v.abs() <= scale * 1e-13) {
        return Err(DatrnError::Singular);
    }
    let qtb = q.transpose() * b;
    r.solve_upper_triangular(&qtb).ok_or(DatrnError::Singular)
}

/// Design matrix rows `[φ1(t_k) | u(t_k) φ2(t_k)]` for the given times.
fn design(times: &[f64], model: &RbfTrajectoryModel) -> DMatrix<f64> {
    let n1 = model.centers1.len();
    let n2 = model.centers2.len();
    let mut phi = DMatrix::zeros(times.len(), n1 + n2);
    for (r, &t) in times.iter().enumerate() {
        let u = model.input.value(t, model.duration);
        for (j, v) in activations(t, &model.centers1, model.sigma).into_iter().enumerate() {
            phi[(r, j)] = v;
        }
        for (j, v) in activations(t, &model.centers2, model.sigma).into_iter().enumerate() {
            phi[(r, n1 + j)] = v * u;
        }
    }
    phi
}

pub fn fit(demo: &Trajectory, cfg: &DatrnConfig) -> Result<RbfTrajectoryModel, DatrnError> {
    fit_timed(demo, cfg).map(|(m, _)| m)
}

/// Fits the model and reports the wall-clock time spent.
pub fn fit_timed(demo: &Trajectory, cfg: &DatrnConfig) -> Result<(RbfTrajectoryModel, Duration), DatrnError> {
    let start = Instant::now();
    demo.validate()?;
    cfg.validate()?;
    let centers1 = place_centers_with_floor(demo, cfg.n1, cfg.seed, cfg.speed_floor)?;
    let centers2 = place_centers_with_floor(demo, cfg.n2, cfg.seed.wrapping_add(1), cfg.speed_floor)?;
    let duration = demo.duration();
    let sigma = compute_width(&centers1, duration, cfg.n1);
    let norm = Normalization::of(demo);
    let ys: Vec<[f64; 3]> = demo.samples.iter().map(|s| norm.apply(*s)).collect();
    let g = ys[ys.len() - 1];
    let mut model = RbfTrajectoryModel {
        centers1,
        centers2,
        sigma,
        weights: std::array::from_fn(|_| AxisWeights { w1: vec![], w2: vec![] }),
        goal: demo.last(),
        dt: demo.dt,
        ridge_lambda: cfg.ridge_lambda,
        input: cfg.input,
        duration,
        normalization: norm,
    };
    let rows = ys.len() - 1;
    let times: Vec<f64> = (0..rows).map(|k| k as f64 * demo.dt).collect();
    let mut phi = design(&times, &model);
    if cfg.input == InputSignal::Zero {
        // The second bank is multiplied by zero; drop it from the regression.
        phi = phi.columns(0, cfg.n1).into_owned();
    }
    let targets = DMatrix::from_fn(rows, 3, |k, a| {
        let y = ys[k][a];
        (ys[k + 1][a] - y) / demo.dt + y - (g[a] - y).tanh()
    });
    let w = ridge_solve_many(&phi, &targets, cfg.ridge_lambda)?;
    for a in 0..3 {
        let col = w.column(a);
        let w1 = col.rows(0, cfg.n1).iter().copied().collect();
        let w2 = if cfg.input == InputSignal::Zero {
            vec![0.0; cfg.n2]
        } else {
            col.rows(cfg.n1, cfg.n2).iter().copied().collect()
        };
        model.weights[a] = AxisWeights { w1, w2 };
    }
    Ok((model, start.elapsed()))
}

/// Forward-Euler rollout of `n_steps` steps from `y0` toward `goal` (meters).
/// The result has `n_steps + 1` samples including `y0`.
pub fn rollout(
    model: &RbfTrajectoryModel,
    y0: [f64; 3],
    goal: [f64; 3],
    n_steps: usize,
) -> Result<Trajectory, DatrnError> {
    if n_steps == 0 {
        return Err(DatrnError::Config("n_steps must be at least 1".into()));
    }
    let norm = &model.normalization;
    let g = norm.apply(goal);
    let mut y = norm.apply(y0);
    let mut out = Vec::with_capacity(n_steps + 1);
    out.push(y0);
    for k in 0..n_steps {
        let t = k as f64 * model.dt;
        let u = model.input.value(t, model.duration);
        let p1 = activations(t, &model.centers1, model.sigma);
        let p2 = if u != 0.0 { activations(t, &model.centers2, model.sigma) } else { Vec::new() };
        for a in 0..3 {
            let w = &model.weights[a];
            let mut f: f64 = w.w1.iter().zip(&p1).map(|(w, p)| w * p).sum();
            if u != 0.0 {
                f += u * w.w2.iter().zip(&p2).map(|(w, p)| w * p).sum::<f64>();
            }
            y[a] += model.dt * (-y[a] + f + (g[a] - y[a]).tanh());
        }
        if y.iter().any(|v| !v.is_finite()) {
            return Err(DatrnError::NonFinite { step: k + 1 });
        }
        out.push(norm.invert(y));
    }
    Ok(Trajectory { samples: out, dt: model.dt })
}

/// Mean squared error per axis after normalizing both trajectories by the
/// reference's per-axis range.
pub fn normalized_mse(reference: &Trajectory, other: &Trajectory) -> [f64; 3] {
    let norm = Normalization::of(reference);
    let n = reference.len().min(other.len());
    let mut out = [0.0; 3];
    for k in 0..n {
        let a = norm.apply(reference.samples[k]);
        let b = norm.apply(other.samples[k]);
        for i in 0..3 {
            out[i] += (a[i] - b[i]).powi(2);
        }
    }
    out.map(|v| v / n as f64)
}

/// Demonstrations shipped with the crate.
pub mod demos {
    use super::Trajectory;

    pub const MIN_JERK_400: &str = include_str!("../data/demo_min_jerk_400.csv");
    pub const MIN_JERK_900: &str = include_str!("../data/demo_min_jerk_900.csv");

    /// `(name, trajectory)` for every bundled demo.
    pub fn all() -> Vec<(&'static str, Trajectory)> {
        vec![
            ("min_jerk_400", MIN_JERK_400.parse().expect("bundled demo parses")),
            ("min_jerk_900", MIN_JERK_900.parse().expect("bundled demo parses")),
        ]
    }

    pub fn by_name(name: &str) -> Option<Trajectory> {
        all().into_iter().find(|(n, _)| *n == name).map(|(_, t)| t)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn line(n: usize, dt: f64) -> Trajectory {
        Trajectory::new((0..n).map(|k| [k as f64 * 0.01, 0.0, 0.0]).collect(), dt).unwrap()
    }

    #[test]
    fn width_examples() {
        assert_eq!(compute_width(&[0.0, 1.0, 2.0], 2.0, 3), 1.0);
        assert_eq!(compute_width(&[0.0, 1.0, 3.0], 3.0, 3), 1.5);
        assert_eq!(compute_width(&[2.0], 4.0, 1), 4.0);
    }

    #[test]
    fn activation_examples() {
        assert_eq!(activations(1.5, &[1.5], 0.3)[0], 1.0);
        assert!((activations(1.3, &[1.0], 0.3)[0] - (-0.5f64).exp()).abs() < 1e-15);
        let far: Vec<f64> = [1.0, 2.0, 5.0, 50.0].iter().map(|d| activations(*d, &[0.0], 1.0)[0]).collect();
        assert!(far.windows(2).all(|w| w[1] < w[0]));
        assert!(far[3] < 1e-300);
    }

    #[test]
    fn ridge_identity() {
        let phi = DMatrix::identity(2, 2);
        let t = DVector::from_vec(vec![1.0, 2.0]);
        let w = ridge_solve(&phi, &t, 1.0).unwrap();
        assert!((w[0] - 0.5).abs() < 1e-14 && (w[1] - 1.0).abs() < 1e-14);
        let w0 = ridge_solve(&phi, &t, 0.0).unwrap();
        assert!((w0[0] - 1.0).abs() < 1e-14 && (w0[1] - 2.0).abs() < 1e-14);
    }

    #[test]
    fn singular_without_regularization() {
        let phi = DMatrix::from_row_slice(3, 2, &[1.0, 1.0, 2.0, 2.0, 3.0, 3.0]);
        let t = DVector::from_vec(vec![1.0, 2.0, 3.0]);
        assert!(matches!(ridge_solve(&phi, &t, 0.0), Err(DatrnError::Singular)));
        assert!(ridge_solve(&phi, &t, 1e-3).is_ok());
    }

    #[test]
    fn zero_weight_rollouts() {
        let mut model = fit(&line(50, 0.1), &DatrnConfig { n1: 3, n2: 3, ..DatrnConfig::default() }).unwrap();
        for w in model.weights.iter_mut() {
            w.w1.fill(0.0);
        }
        model.normalization = Normalization { mean: [0.0; 3], range: [1.0; 3] };
        model.dt = 0.1;
        let r = rollout(&model, [0.0; 3], [0.0; 3], 20).unwrap();
        assert!(r.samples.iter().flatten().all(|v| *v == 0.0));
        let r = rollout(&model, [0.0; 3], [1.0, 1.0, 1.0], 1).unwrap();
        assert!((r.samples[1][0] - 0.1 * 1f64.tanh()).abs() < 1e-15);
        assert!((r.samples[1][0] - 0.0761594).abs() < 1e-7);
    }

    #[test]
    fn constant_demo_reproduces_constant() {
        let demo = Trajectory::new(vec![[0.2, -0.1, 0.4]; 60], 0.05).unwrap();
        let model = fit(&demo, &DatrnConfig { n1: 5, n2: 5, ..DatrnConfig::default() }).unwrap();
        let r = rollout(&model, demo.first(), demo.last(), 59).unwrap();
        for s in &r.samples {
            for a in 0..3 {
                assert!((s[a] - demo.samples[0][a]).abs() < 1e-6, "{s:?}");
            }
        }
    }

    #[test]
    fn single_center_is_weighted_mean() {
        let pts = [0.0, 1.0, 2.0, 3.0];
        let w = [1.0, 0.0, 0.0, 3.0];
        let c = kmeans_1d(&pts, &w, 1, 4, 100).unwrap();
        assert!((c[0] - 2.25).abs() < 1e-12);
        assert!(matches!(kmeans_1d(&pts, &w, 5, 0, 100), Err(DatrnError::TooManyCenters { .. })));
    }

    #[test]
    fn centers_are_sorted_and_seeded() {
        let demo = line(200, 0.01);
        let a = place_centers(&demo, 10, 3).unwrap();
        let b = place_centers(&demo, 10, 3).unwrap();
        assert_eq!(a, b);
        assert!(a.windows(2).all(|w| w[0] <= w[1]));
    }

    #[test]
    fn file_round_trip() {
        let t = Trajectory::new(vec![[0.1, 0.2, 0.3], [0.123456789012, -1.5, 2.0]], 0.01).unwrap();
        let text = t.to_string();
        assert!(text.starts_with("# dt=0.01\n# samples=2\nx,y,z\n"));
        assert_eq!(text.parse::<Trajectory>().unwrap(), t);
        assert!("# dt=0.1\n1,2\n3,4\n".parse::<Trajectory>().is_err());
        assert!("1,2,3\n4,5,6\n".parse::<Trajectory>().is_err());
        assert!("# dt=0.1\n# samples=3\n1,2,3\n4,5,6\n".parse::<Trajectory>().is_err());
    }

    #[test]
    fn bundled_demos_parse() {
        let all = demos::all();
        assert_eq!(all.len(), 2);
        assert_eq!(all[0].1.len(), 400);
        assert_eq!(all[1].1.len(), 900);
    }
}
