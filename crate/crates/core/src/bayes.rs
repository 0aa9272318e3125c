//! Bayesian optimization of the robust boundary scalings against a
//! closed-loop global cost.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::gpr::{FitOptions, Gpr};

pub const DIVERGENCE_PENALTY: f64 = 1e9;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum BayesError {
    #[error("every evaluation diverged")]
    AllDiverged,
    #[error("invalid tuning configuration: {0}")]
    InvalidConfig(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CostWeights {
    /// Diagonal weights on `(e_x, e_y, e_ψ)`.
    pub tracking: [f64; 3],
    /// Diagonal weights on `(v̇_x, v̇_y)`.
    pub accel: [f64; 2],
    /// Weight on each tire utilization.
    pub utilization: f64,
}

impl Default for CostWeights {
    fn default() -> Self {
        Self { tracking: [1.0, 100.0, 10.0], accel: [0.5, 0.5], utilization: 5.0 }
    }
}

impl CostWeights {
    pub fn scaled(&self, k: f64) -> Self {
        Self {
            tracking: self.tracking.map(|w| w * k),
            accel: self.accel.map(|w| w * k),
            utilization: self.utilization * k,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct CostSample {
    pub error: [f64; 3],
    pub accel: [f64; 2],
    pub utilization: [f64; 4],
}

/// Weighted sum of squared tracking error, acceleration and utilization.
/// Returns the divergence penalty with a flag for diverged or non-finite traces.
pub fn global_cost(samples: &[CostSample], weights: &CostWeights, diverged: bool) -> (f64, bool) {
    if diverged {
        return (DIVERGENCE_PENALTY, true);
    }
    let mut total = 0.0;
    for s in samples {
        let e: f64 = s.error.iter().zip(&weights.tracking).map(|(e, w)| w * e * e).sum();
        let a: f64 = s.accel.iter().zip(&weights.accel).map(|(a, w)| w * a * a).sum();
        let u: f64 = s.utilization.iter().map(|u| weights.utilization * u * u).sum();
        total += e + a + u;
    }
    if total.is_finite() { (total, false) } else { (DIVERGENCE_PENALTY, true) }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TuneConfig {
    pub iterations: usize,
    pub kappa: f64,
    pub lower: f64,
    pub upper: f64,
    pub candidates: usize,
    /// Latin-hypercube points added to the unit-scaling seed.
    pub seed_points: usize,
    pub seed: u64,
    /// Minimize `μ + κσ` as literally written instead of `μ − κσ`.
    pub literal_acquisition: bool,
    /// Fit the surrogate on `ln J`.
    pub log_cost: bool,
}

impl Default for TuneConfig {
    fn default() -> Self {
        Self {
            iterations: 20,
            kappa: 2.0,
            lower: 0.1,
            upper: 5.0,
            candidates: 4096,
            seed_points: 6,
            seed: 11,
            literal_acquisition: false,
            log_cost: true,
        }
    }
}

impl TuneConfig {
    pub fn validate(&self) -> Result<(), BayesError> {
        if !(self.lower > 0.0 && self.upper > self.lower && self.kappa >= 0.0 && self.candidates > 0) {
            return Err(BayesError::InvalidConfig(format!("{self:?}")));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Evaluation {
    pub alpha: Vec<f64>,
    pub cost: f64,
}

/// Index of the candidate minimizing the acquisition.
pub fn select(mean: &[f64], sd: &[f64], kappa: f64, literal: bool) -> usize {
    let sign = if literal { 1.0 } else { -1.0 };
    (0..mean.len())
        .min_by(|&a, &b| (mean[a] + sign * kappa * sd[a]).total_cmp(&(mean[b] + sign * kappa * sd[b])))
        .expect("non-empty candidate set")
}

/// Unit scaling followed by a Latin hypercube over the box.
pub fn seed_design(dim: usize, extra: usize, lower: f64, upper: f64, rng: &mut impl Rng) -> Vec<Vec<f64>> {
    let mut points = vec![vec![1.0f64.clamp(lower, upper); dim]];
    let mut columns: Vec<Vec<f64>> = (0..dim)
        .map(|_| {
            let mut strata: Vec<f64> = (0..extra).map(|k| (k as f64 + rng.gen::<f64>()) / extra as f64).collect();
            for i in (1..strata.len()).rev() {
                let j = rng.gen_range(0..=i);
                strata.swap(i, j);
            }
            strata
        })
        .collect();
    for k in 0..extra {
        points.push(columns.iter_mut().map(|c| lower + c[k] * (upper - lower)).collect());
    }
    points
}

/// Sequential optimizer state.
#[derive(Debug, Clone)]
pub struct Tuner {
    config: TuneConfig,
    dim: usize,
    history: Vec<Evaluation>,
    rng: ChaCha8Rng,
}

impl Tuner {
    pub fn new(config: TuneConfig, dim: usize) -> Result<Self, BayesError> {
        config.validate()?;
        Ok(Self { config, dim, history: Vec::new(), rng: ChaCha8Rng::seed_from_u64(config.seed) })
    }

    pub fn history(&self) -> &[Evaluation] {
        &self.history
    }

    pub fn record(&mut self, alpha: Vec<f64>, cost: f64) {
        self.history.push(Evaluation { alpha, cost });
    }

    pub fn best(&self) -> Option<&Evaluation> {
        self.history.iter().min_by(|a, b| a.cost.total_cmp(&b.cost))
    }

    /// Running minimum of the recorded costs.
    pub fn best_so_far(&self) -> Vec<f64> {
        self.history
            .iter()
            .scan(f64::INFINITY, |m, e| {
                *m = m.min(e.cost);
                Some(*m)
            })
            .collect()
    }

    pub fn seed_design(&mut self) -> Vec<Vec<f64>> {
        seed_design(self.dim, self.config.seed_points, self.config.lower, self.config.upper, &mut self.rng)
    }

    fn random_point(&mut self) -> Vec<f64> {
        let (lo, hi) = (self.config.lower, self.config.upper);
        (0..self.dim).map(|_| self.rng.gen_range(lo..=hi)).collect()
    }

    fn surrogate(&self) -> Option<Gpr> {
        let x: Vec<Vec<f64>> = self.history.iter().map(|e| e.alpha.clone()).collect();
        let y: Vec<f64> = self.history.iter().map(|e| if self.config.log_cost { e.cost.max(1e-12).ln() } else { e.cost }).collect();
        let opts = FitOptions { max_points: 1000, max_fit_points: 1000, restarts: 3, seed: self.config.seed, standardize: true };
        if x.len() >= 2 {
            Gpr::fit(&x, &y, &opts).ok()
        } else {
            let h = crate::gpr::Hyperparameters { length_scale: 0.25 * (self.config.upper - self.config.lower), signal_variance: 1.0, noise_variance: 1e-6 };
            Gpr::with_hyperparameters(x, y, h).ok()
        }
    }

    /// Next candidate: acquisition minimum over random candidates, or a random
    /// point when no surrogate can be fitted.
    pub fn propose(&mut self) -> Vec<f64> {
        let candidates: Vec<Vec<f64>> = (0..self.config.candidates).map(|_| self.random_point()).collect();
        let Some(gp) = self.surrogate() else { return self.random_point() };
        let (mean, sd): (Vec<f64>, Vec<f64>) = candidates
            .iter()
            .map(|c| {
                let p = gp.predict(c);
                (p.mean, p.variance.max(0.0).sqrt())
            })
            .unzip();
        candidates[select(&mean, &sd, self.config.kappa, self.config.literal_acquisition)].clone()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TuneResult {
    pub best: Evaluation,
    pub history: Vec<Evaluation>,
    pub best_so_far: Vec<f64>,
}

/// Seeds, then `iterations` rounds of propose/evaluate. Seed evaluations
/// run in parallel and are recorded in design order.
pub fn tune<F>(config: &TuneConfig, dim: usize, objective: F) -> Result<TuneResult, BayesError>
where
    F: Fn(&[f64]) -> f64 + Sync,
{
    let mut tuner = Tuner::new(*config, dim)?;
    let seeds = tuner.seed_design();
    let costs: Vec<f64> = seeds.par_iter().map(|a| objective(a)).collect();
    for (a, c) in seeds.into_iter().zip(costs) {
        tuner.record(a, c);
    }
    for _ in 0..config.iterations {
        let a = tuner.propose();
        let c = objective(&a);
        tuner.record(a, c);
    }
    let best = tuner.best().cloned().expect("seed design is non-empty");
    if best.cost >= DIVERGENCE_PENALTY {
        return Err(BayesError::AllDiverged);
    }
    Ok(TuneResult { best, best_so_far: tuner.best_so_far(), history: tuner.history })
}
