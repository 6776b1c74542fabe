//! Discrete dynamic movement primitive with a genetic-algorithm search over
//! its gain and basis count, used as the comparison baseline for [`crate::datrn`].
//!
//! Transformation system `τ ż = α_y(β_y(g − y) − z) + f(x)`, `τ ẏ = z`;
//! canonical system `τ ẋ = −α_x x`; forcing
//! `f(x) = Σ ψ_i(x) w_i / Σ ψ_i(x) · x (g − y0)`.

use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::datrn::{self, DatrnConfig, DatrnError, Normalization, Trajectory};

pub const ALPHA_X: f64 = 1.0;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DmpParams {
    pub alpha_y: f64,
    pub n_basis: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DmpModel {
    pub alpha_y: f64,
    pub beta_y: f64,
    pub alpha_x: f64,
    pub n_basis: usize,
    pub centers: Vec<f64>,
    pub widths: Vec<f64>,
    pub weights: [Vec<f64>; 3],
    /// Goal and start in meters.
    pub goal: [f64; 3],
    pub y0: [f64; 3],
    pub tau: f64,
    pub dt: f64,
    pub normalization: Normalization,
}

impl DmpModel {
    fn basis(&self, x: f64) -> Vec<f64> {
        self.centers.iter().zip(&self.widths).map(|(c, h)| (-h * (x - c).powi(2)).exp()).collect()
    }
}

fn check_params(p: DmpParams) -> Result<(), DatrnError> {
    if !(p.alpha_y > 0.0 && p.alpha_y.is_finite()) || p.n_basis == 0 {
        return Err(DatrnError::Config("alpha_y must be positive and n_basis at least 1".into()));
    }
    Ok(())
}

/// Central differences in the interior, one-sided at the ends.
fn derivative(v: &[f64], dt: f64) -> Vec<f64> {
    let n = v.len();
    (0..n)
        .map(|k| match k {
            0 => (v[1] - v[0]) / dt,
            k if k == n - 1 => (v[n - 1] - v[n - 2]) / dt,
            k => (v[k + 1] - v[k - 1]) / (2.0 * dt),
        })
        .collect()
}

/// Fits forcing weights per axis by locally weighted regression.
pub fn fit_dmp(demo: &Trajectory, params: DmpParams) -> Result<DmpModel, DatrnError> {
    demo.validate()?;
    check_params(params)?;
    if demo.len() < 3 {
        return Err(DatrnError::Trajectory("a DMP needs at least three samples".into()));
    }
    let tau = demo.duration();
    if tau <= 0.0 {
        return Err(DatrnError::Trajectory("demonstration has zero duration".into()));
    }
    let n = params.n_basis;
    let centers: Vec<f64> = (0..n)
        .map(|i| if n == 1 { 1.0 } else { (-ALPHA_X * i as f64 / (n - 1) as f64).exp() })
        .collect();
    let widths: Vec<f64> = (0..n)
        .map(|i| {
            if n == 1 {
                1.0
            } else {
                let j = if i + 1 < n { i } else { i - 1 };
                1.0 / (centers[j + 1] - centers[j]).powi(2)
            }
        })
        .collect();
    let norm = Normalization::of(demo);
    let ys: Vec<[f64; 3]> = demo.samples.iter().map(|s| norm.apply(*s)).collect();
    let alpha_y = params.alpha_y;
    let beta_y = alpha_y / 4.0;
    let mut model = DmpModel {
        alpha_y,
        beta_y,
        alpha_x: ALPHA_X,
        n_basis: n,
        centers,
        widths,
        weights: std::array::from_fn(|_| vec![0.0; n]),
        goal: demo.last(),
        y0: demo.first(),
        tau,
        dt: demo.dt,
        normalization: norm,
    };
    let xs: Vec<f64> = (0..demo.len()).map(|k| (-ALPHA_X * k as f64 * demo.dt / tau).exp()).collect();
    let psis: Vec<Vec<f64>> = xs.iter().map(|&x| model.basis(x)).collect();
    for a in 0..3 {
        let y: Vec<f64> = ys.iter().map(|s| s[a]).collect();
        let (y0, g) = (y[0], y[y.len() - 1]);
        let yd = derivative(&y, demo.dt);
        let ydd = derivative(&yd, demo.dt);
        let scale = g - y0;
        for i in 0..n {
            let mut num = 0.0;
            let mut den = 0.0;
            for k in 0..y.len() {
                let f = tau * tau * ydd[k] - alpha_y * (beta_y * (g - y[k]) - tau * yd[k]);
                let s = xs[k] * scale;
                num += s * psis[k][i] * f;
                den += s * s * psis[k][i];
            }
            model.weights[a][i] = if den > 1e-300 { num / den } else { 0.0 };
        }
    }
    Ok(model)
}

/// Euler rollout of `n_steps` steps toward `goal` (meters).
pub fn rollout_dmp(model: &DmpModel, goal: [f64; 3], n_steps: usize) -> Result<Trajectory, DatrnError> {
    let norm = &model.normalization;
    let g = norm.apply(goal);
    let y0 = norm.apply(model.y0);
    let mut y = y0;
    let mut z = [0.0; 3];
    let mut out = Vec::with_capacity(n_steps + 1);
    out.push(model.y0);
    for k in 0..n_steps {
        let x = (-model.alpha_x * k as f64 * model.dt / model.tau).exp();
        let psi = model.basis(x);
        let psum: f64 = psi.iter().sum();
        for a in 0..3 {
            let f = if psum > 0.0 {
                psi.iter().zip(&model.weights[a]).map(|(p, w)| p * w).sum::<f64>() / psum * x * (g[a] - y0[a])
            } else {
                0.0
            };
            let zdot = (model.alpha_y * (model.beta_y * (g[a] - y[a]) - z[a]) + f) / model.tau;
            let ydot = z[a] / model.tau;
            z[a] += model.dt * zdot;
            y[a] += model.dt * ydot;
        }
        if y.iter().any(|v| !v.is_finite()) {
            return Err(DatrnError::NonFinite { step: k + 1 });
        }
        out.push(norm.invert(y));
    }
    Ok(Trajectory { samples: out, dt: model.dt })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GaConfig {
    pub population: usize,
    pub generations: usize,
    pub mutation_rate: f64,
    pub crossover_rate: f64,
    pub tournament: usize,
    pub alpha_range: (f64, f64),
    pub basis_range: (usize, usize),
    pub seed: u64,
}

impl Default for GaConfig {
    fn default() -> Self {
        GaConfig {
            population: 20,
            generations: 15,
            mutation_rate: 0.2,
            crossover_rate: 0.7,
            tournament: 3,
            alpha_range: (5.0, 50.0),
            basis_range: (5, 50),
            seed: 0,
        }
    }
}

impl GaConfig {
    pub fn validate(&self) -> Result<(), DatrnError> {
        let bad = |m: &str| Err(DatrnError::Config(m.into()));
        if self.population < 2 || self.generations == 0 || self.tournament == 0 {
            return bad("population must be at least 2, generations and tournament at least 1");
        }
        if !(0.0..=1.0).contains(&self.mutation_rate) || !(0.0..=1.0).contains(&self.crossover_rate) {
            return bad("rates must lie in [0, 1]");
        }
        let (lo, hi) = self.alpha_range;
        if !(lo > 0.0 && lo <= hi && hi.is_finite()) {
            return bad("alpha range must be a non-empty positive interval");
        }
        if self.basis_range.0 == 0 || self.basis_range.0 > self.basis_range.1 {
            return bad("basis range must be a non-empty interval of positive counts");
        }
        Ok(())
    }

    fn degenerate(&self) -> bool {
        self.alpha_range.0 == self.alpha_range.1 && self.basis_range.0 == self.basis_range.1
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GaResult {
    pub best: DmpParams,
    pub best_fitness: f64,
    /// Best fitness after each generation.
    pub history: Vec<f64>,
    /// Fitness of every member of the initial population.
    pub initial_fitness: Vec<f64>,
    pub evaluations: usize,
    pub seconds: f64,
}

/// Negative sum of per-axis normalized rollout MSE against the demo.
pub fn fitness(demo: &Trajectory, params: DmpParams) -> f64 {
    let Ok(model) = fit_dmp(demo, params) else { return f64::NEG_INFINITY };
    match rollout_dmp(&model, demo.last(), demo.len() - 1) {
        Ok(r) => {
            let v = -datrn::normalized_mse(demo, &r).iter().sum::<f64>();
            if v.is_finite() {
                v
            } else {
                f64::NEG_INFINITY
            }
        }
        Err(_) => f64::NEG_INFINITY,
    }
}

pub fn ga_search(demo: &Trajectory, cfg: &GaConfig) -> Result<GaResult, DatrnError> {
    let start = Instant::now();
    cfg.validate()?;
    demo.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let (alo, ahi) = cfg.alpha_range;
    let (blo, bhi) = cfg.basis_range;
    let sample = |rng: &mut ChaCha8Rng| DmpParams {
        alpha_y: if ahi > alo { rng.random_range(alo..=ahi) } else { alo },
        n_basis: rng.random_range(blo..=bhi),
    };
    let mut pop: Vec<DmpParams> = (0..cfg.population).map(|_| sample(&mut rng)).collect();
    let mut evaluations = 0usize;
    let mut eval = |pop: &[DmpParams]| -> Vec<f64> {
        evaluations += pop.len();
        pop.iter().map(|p| fitness(demo, *p)).collect()
    };
    let mut fit = eval(&pop);
    let initial_fitness = fit.clone();
    let best_of = |fit: &[f64]| (0..fit.len()).fold(0, |b, i| if fit[i] > fit[b] { i } else { b });
    let mut history = Vec::with_capacity(cfg.generations);
    let generations = if cfg.degenerate() { 1 } else { cfg.generations };
    let alpha_sd = 0.1 * (ahi - alo);
    let basis_sd = 0.1 * (bhi - blo) as f64;
    for gen in 0..generations {
        let elite = best_of(&fit);
        history.push(fit[elite]);
        if gen + 1 == generations {
            break;
        }
        let tournament = |rng: &mut ChaCha8Rng, fit: &[f64]| -> usize {
            let mut best = rng.random_range(0..fit.len());
            for _ in 1..cfg.tournament {
                let c = rng.random_range(0..fit.len());
                if fit[c] > fit[best] || (fit[c] == fit[best] && c < best) {
                    best = c;
                }
            }
            best
        };
        let mut next = Vec::with_capacity(cfg.population);
        next.push(pop[elite]);
        while next.len() < cfg.population {
            let a = pop[tournament(&mut rng, &fit)];
            let b = pop[tournament(&mut rng, &fit)];
            let mut child = a;
            if rng.random_bool(cfg.crossover_rate) {
                if rng.random_bool(0.5) {
                    child.alpha_y = b.alpha_y;
                }
                if rng.random_bool(0.5) {
                    child.n_basis = b.n_basis;
                }
            }
            if alpha_sd > 0.0 && rng.random_bool(cfg.mutation_rate) {
                let d = Normal::new(0.0, alpha_sd).expect("positive sd").sample(&mut rng);
                child.alpha_y = (child.alpha_y + d).clamp(alo, ahi);
            }
            if basis_sd > 0.0 && rng.random_bool(cfg.mutation_rate) {
                let d = Normal::new(0.0, basis_sd).expect("positive sd").sample(&mut rng);
                child.n_basis = (child.n_basis as f64 + d).round().clamp(blo as f64, bhi as f64) as usize;
            }
            next.push(child);
        }
        pop = next;
        fit = eval(&pop);
    }
    let best = best_of(&fit);
    Ok(GaResult {
        best: pop[best],
        best_fitness: fit[best],
        history,
        initial_fitness,
        evaluations,
        seconds: start.elapsed().as_secs_f64(),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MethodReport {
    pub per_axis_mse: [f64; 3],
    pub fit_seconds: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonReport {
    pub samples: usize,
    pub datrn: MethodReport,
    pub dmp: MethodReport,
    pub dmp_params: DmpParams,
    /// `dmp.fit_seconds / datrn.fit_seconds`.
    pub time_ratio: f64,
}

impl ComparisonReport {
    /// Report without wall-clock fields, for reproducibility checks.
    pub fn without_timing(&self) -> ComparisonReport {
        let mut r = self.clone();
        r.datrn.fit_seconds = 0.0;
        r.dmp.fit_seconds = 0.0;
        r.time_ratio = 0.0;
        r
    }
}

#[derive(Debug, Clone)]
pub struct Comparison {
    pub report: ComparisonReport,
    pub datrn_rollout: Trajectory,
    pub dmp_rollout: Trajectory,
}

/// Fits both methods on `demo` and rolls each out over the demo span.
pub fn compare(demo: &Trajectory, datrn_cfg: &DatrnConfig, ga_cfg: &GaConfig) -> Result<Comparison, DatrnError> {
    let (model, datrn_time): (_, Duration) = datrn::fit_timed(demo, datrn_cfg)?;
    let datrn_rollout = datrn::rollout(&model, demo.first(), demo.last(), demo.len() - 1)?;
    let ga = ga_search(demo, ga_cfg)?;
    let dmp = fit_dmp(demo, ga.best)?;
    let dmp_rollout = rollout_dmp(&dmp, demo.last(), demo.len() - 1)?;
    let datrn_seconds = datrn_time.as_secs_f64();
    let report = ComparisonReport {
        samples: demo.len(),
        datrn: MethodReport { per_axis_mse: datrn::normalized_mse(demo, &datrn_rollout), fit_seconds: datrn_seconds },
        dmp: MethodReport { per_axis_mse: datrn::normalized_mse(demo, &dmp_rollout), fit_seconds: ga.seconds },
        dmp_params: ga.best,
        time_ratio: ga.seconds / datrn_seconds.max(1e-12),
    };
    Ok(Comparison { report, datrn_rollout, dmp_rollout })
}

/// Per-step CSV with the demo and both rollouts side by side.
pub fn overlay_csv(demo: &Trajectory, a: &Trajectory, b: &Trajectory) -> String {
    let mut out = String::from("t,demo_x,demo_y,demo_z,datrn_x,datrn_y,datrn_z,dmp_x,dmp_y,dmp_z\n");
    for k in 0..demo.len().min(a.len()).min(b.len()) {
        let (d, p, q) = (demo.samples[k], a.samples[k], b.samples[k]);
        out.push_str(&format!(
            "{},{},{},{},{},{},{},{},{},{}\n",
            k as f64 * demo.dt,
            d[0],
            d[1],
            d[2],
            p[0],
            p[1],
            p[2],
            q[0],
            q[1],
            q[2]
        ));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn straight(n: usize) -> Trajectory {
        Trajectory::new((0..n).map(|k| [k as f64 / (n - 1) as f64, 0.5, 0.0]).collect(), 0.01).unwrap()
    }

    #[test]
    fn constant_demo_has_zero_forcing() {
        let demo = Trajectory::new(vec![[0.1, 0.2, 0.3]; 50], 0.02).unwrap();
        let m = fit_dmp(&demo, DmpParams { alpha_y: 20.0, n_basis: 10 }).unwrap();
        assert!(m.weights.iter().flatten().all(|w| w.abs() < 1e-12));
        let r = rollout_dmp(&m, demo.last(), 49).unwrap();
        assert!(r.samples.iter().all(|s| s.iter().zip(demo.first()).all(|(a, b)| (a - b).abs() < 1e-12)));
    }

    #[test]
    fn zero_forcing_converges_to_goal() {
        let demo = straight(100);
        let mut m = fit_dmp(&demo, DmpParams { alpha_y: 25.0, n_basis: 5 }).unwrap();
        for w in m.weights.iter_mut() {
            w.fill(0.0);
        }
        // Ten time constants.
        let r = rollout_dmp(&m, demo.last(), 99 * 10).unwrap();
        let end = m.normalization.apply(r.last());
        let g = m.normalization.apply(demo.last());
        assert!((end[0] - g[0]).abs() < 1e-6);
    }

    #[test]
    fn straight_line_endpoint() {
        let demo = straight(300);
        let m = fit_dmp(&demo, DmpParams { alpha_y: 25.0, n_basis: 50 }).unwrap();
        let r = rollout_dmp(&m, demo.last(), 299).unwrap();
        let a = m.normalization.apply(r.last());
        let b = m.normalization.apply(demo.last());
        assert!((a[0] - b[0]).abs() < 1e-3, "{a:?} vs {b:?}");
    }

    #[test]
    fn single_candidate_search() {
        let cfg = GaConfig { alpha_range: (10.0, 10.0), basis_range: (7, 7), ..GaConfig::default() };
        let r = ga_search(&straight(60), &cfg).unwrap();
        assert_eq!(r.best, DmpParams { alpha_y: 10.0, n_basis: 7 });
        assert_eq!(r.history.len(), 1);
    }

    #[test]
    fn elitism_and_monotone_history() {
        let cfg = GaConfig { population: 6, generations: 4, seed: 2, ..GaConfig::default() };
        let demo = datrn::demos::all().remove(0).1;
        let r = ga_search(&demo, &cfg).unwrap();
        assert!(r.initial_fitness.iter().all(|f| r.best_fitness >= *f));
        assert!(r.history.windows(2).all(|w| w[1] >= w[0]));
        assert_eq!(r.evaluations, 24);
    }

    #[test]
    fn invalid_ranges_rejected() {
        let cfg = GaConfig { basis_range: (10, 5), ..GaConfig::default() };
        assert!(ga_search(&straight(20), &cfg).is_err());
        let cfg = GaConfig { population: 1, ..GaConfig::default() };
        assert!(cfg.validate().is_err());
    }
}
