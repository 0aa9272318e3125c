//! Gaussian-process regression with an RBF kernel, and gridded envelope
//! tables built from model discrepancies.

use nalgebra::{Cholesky, DVector, Dyn};
use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::numerics::{nelder_mead, Mat, NelderMeadOptions};

const JITTER: [f64; 5] = [0.0, 1e-12, 1e-10, 1e-8, 1e-6];

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GprError {
    #[error("need at least {needed} samples, got {got}")]
    TooFewSamples { needed: usize, got: usize },
    #[error("input rows have inconsistent dimension")]
    Dimension,
    #[error("kernel matrix not positive definite after jitter")]
    NotPositiveDefinite,
    #[error("non-finite training data")]
    NonFinite,
    #[error("envelope needs at least one sample")]
    EmptyTrace,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Hyperparameters {
    pub length_scale: f64,
    pub signal_variance: f64,
    pub noise_variance: f64,
}

impl Default for Hyperparameters {
    fn default() -> Self {
        Self { length_scale: 1.0, signal_variance: 1.0, noise_variance: 1e-2 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FitOptions {
    /// Training points kept in the model.
    pub max_points: usize,
    /// Points used for the likelihood search.
    pub max_fit_points: usize,
    pub restarts: usize,
    pub seed: u64,
    /// Standardize inputs and targets before fitting.
    pub standardize: bool,
}

impl Default for FitOptions {
    fn default() -> Self {
        Self { max_points: 500, max_fit_points: 200, restarts: 5, seed: 7, standardize: true }
    }
}

/// `σ_f²·exp(−‖a − b‖²/(2l²))`.
pub fn rbf(a: &[f64], b: &[f64], hyper: &Hyperparameters) -> f64 {
    let d2: f64 = a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum();
    hyper.signal_variance * (-0.5 * d2 / (hyper.length_scale * hyper.length_scale)).exp()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Prediction {
    pub mean: f64,
    pub variance: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct Scaling {
    x_mean: Vec<f64>,
    x_scale: Vec<f64>,
    y_mean: f64,
    y_scale: f64,
}

impl Scaling {
    fn identity(dim: usize) -> Self {
        Self { x_mean: vec![0.0; dim], x_scale: vec![1.0; dim], y_mean: 0.0, y_scale: 1.0 }
    }

    fn from_data(x: &[Vec<f64>], y: &[f64]) -> Self {
        let n = x.len() as f64;
        let dim = x[0].len();
        let stats = |vals: &mut dyn Iterator<Item = f64>| {
            let v: Vec<f64> = vals.collect();
            let mean = v.iter().sum::<f64>() / n;
            let var = v.iter().map(|a| (a - mean) * (a - mean)).sum::<f64>() / n;
            let sd = var.sqrt();
            (mean, if sd > 1e-12 * mean.abs().max(1.0) { sd } else { 1.0 })
        };
        let (x_mean, x_scale) = (0..dim).map(|j| stats(&mut x.iter().map(|r| r[j]))).unzip();
        let (y_mean, y_scale) = stats(&mut y.iter().copied());
        Self { x_mean, x_scale, y_mean, y_scale }
    }

    fn input(&self, x: &[f64]) -> Vec<f64> {
        x.iter().zip(&self.x_mean).zip(&self.x_scale).map(|((v, m), s)| (v - m) / s).collect()
    }
}

/// Fitted GP with cached factorization of `K + σ_ε²I`.
#[derive(Debug, Clone)]
pub struct Gpr {
    x: Vec<Vec<f64>>,
    y: Vec<f64>,
    weights: DVector<f64>,
    chol: Cholesky<f64, Dyn>,
    hyper: Hyperparameters,
    scaling: Scaling,
    jitter: f64,
}

fn validate(x: &[Vec<f64>], y: &[f64], needed: usize) -> Result<(), GprError> {
    if x.len() < needed || y.len() != x.len() {
        return Err(GprError::TooFewSamples { needed, got: x.len().min(y.len()) });
    }
    let dim = x[0].len();
    if dim == 0 || x.iter().any(|r| r.len() != dim) {
        return Err(GprError::Dimension);
    }
    if x.iter().flatten().chain(y).any(|v| !v.is_finite()) {
        return Err(GprError::NonFinite);
    }
    Ok(())
}

fn factor(x: &[Vec<f64>], hyper: &Hyperparameters) -> Result<(Cholesky<f64, Dyn>, f64), GprError> {
    let n = x.len();
    let mut k = Mat::from_fn(n, n, |i, j| rbf(&x[i], &x[j], hyper));
    for i in 0..n {
        k[(i, i)] += hyper.noise_variance;
    }
    for jitter in JITTER {
        let mut kj = k.clone();
        for i in 0..n {
            kj[(i, i)] += jitter;
        }
        if let Some(c) = Cholesky::new(kj) {
            return Ok((c, jitter));
        }
    }
    Err(GprError::NotPositiveDefinite)
}

/// Negative log marginal likelihood.
pub fn negative_log_likelihood(x: &[Vec<f64>], y: &[f64], hyper: &Hyperparameters) -> f64 {
    let Ok((chol, _)) = factor(x, hyper) else { return f64::INFINITY };
    let yv = DVector::from_column_slice(y);
    let alpha = chol.solve(&yv);
    let log_det: f64 = chol.l_dirty().diagonal().iter().map(|d| d.ln()).sum::<f64>() * 2.0;
    0.5 * yv.dot(&alpha) + 0.5 * log_det + 0.5 * y.len() as f64 * (2.0 * std::f64::consts::PI).ln()
}

fn hyper_from_log(v: &[f64]) -> Hyperparameters {
    Hyperparameters {
        length_scale: v[0].clamp(-7.0, 7.0).exp(),
        signal_variance: v[1].clamp(-12.0, 12.0).exp(),
        noise_variance: v[2].clamp(-20.0, 5.0).exp(),
    }
}

impl Gpr {
    /// Model with fixed hyperparameters and no standardization; the
    /// posterior is exactly the textbook formula on the raw data.
    pub fn with_hyperparameters(x: Vec<Vec<f64>>, y: Vec<f64>, hyper: Hyperparameters) -> Result<Self, GprError> {
        validate(&x, &y, 1)?;
        let scaling = Scaling::identity(x[0].len());
        Self::assemble(x, y, hyper, scaling)
    }

    fn assemble(x: Vec<Vec<f64>>, y: Vec<f64>, hyper: Hyperparameters, scaling: Scaling) -> Result<Self, GprError> {
        let (chol, jitter) = factor(&x, &hyper)?;
        let weights = chol.solve(&DVector::from_column_slice(&y));
        Ok(Self { x, y, weights, chol, hyper, scaling, jitter })
    }

    /// Fits hyperparameters by maximum marginal likelihood: a log-spaced
    /// grid seeds `restarts` Nelder–Mead runs.
    pub fn fit(x: &[Vec<f64>], y: &[f64], opts: &FitOptions) -> Result<Self, GprError> {
        validate(x, y, 2)?;
        let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
        let thin = |cap: usize, rng: &mut ChaCha8Rng| -> Vec<usize> {
            if x.len() <= cap {
                (0..x.len()).collect()
            } else {
                let mut idx = sample(rng, x.len(), cap).into_vec();
                idx.sort_unstable();
                idx
            }
        };
        let keep = thin(opts.max_points.max(2), &mut rng);
        let scaling = if opts.standardize { Scaling::from_data(x, y) } else { Scaling::identity(x[0].len()) };
        let xs: Vec<Vec<f64>> = keep.iter().map(|&i| scaling.input(&x[i])).collect();
        let ys: Vec<f64> = keep.iter().map(|&i| (y[i] - scaling.y_mean) / scaling.y_scale).collect();

        let fit_idx: Vec<usize> = if xs.len() <= opts.max_fit_points {
            (0..xs.len()).collect()
        } else {
            let mut idx = sample(&mut rng, xs.len(), opts.max_fit_points).into_vec();
            idx.sort_unstable();
            idx
        };
        let xf: Vec<Vec<f64>> = fit_idx.iter().map(|&i| xs[i].clone()).collect();
        let yf: Vec<f64> = fit_idx.iter().map(|&i| ys[i]).collect();
        let nll = |v: &[f64]| negative_log_likelihood(&xf, &yf, &hyper_from_log(v));

        let mut grid = Vec::new();
        for l in [0.1f64, 0.3, 1.0, 3.0, 10.0] {
            for sf in [0.1f64, 1.0, 10.0] {
                for sn in [1e-6f64, 1e-3, 1e-1] {
                    let v = vec![l.ln(), sf.ln(), sn.ln()];
                    let f = nll(&v);
                    grid.push((v, f));
                }
            }
        }
        grid.sort_by(|a, b| a.1.total_cmp(&b.1));
        let nm = NelderMeadOptions { initial_step: 0.7, max_evals: 300, f_tol: 1e-7, x_tol: 1e-5 };
        let best = grid
            .iter()
            .take(opts.restarts.max(1))
            .map(|(v, _)| nelder_mead(nll, v, &nm))
            .min_by(|a, b| a.1.total_cmp(&b.1))
            .expect("at least one restart");
        if !best.1.is_finite() {
            return Err(GprError::NotPositiveDefinite);
        }
        Self::assemble(xs, ys, hyper_from_log(&best.0), scaling)
    }

    pub fn hyperparameters(&self) -> &Hyperparameters {
        &self.hyper
    }

    pub fn len(&self) -> usize {
        self.x.len()
    }

    pub fn is_empty(&self) -> bool {
        self.x.is_empty()
    }

    pub fn jitter(&self) -> f64 {
        self.jitter
    }

    /// Posterior mean and variance in the original target units.
    pub fn predict(&self, x_star: &[f64]) -> Prediction {
        let xs = self.scaling.input(x_star);
        let k_star = DVector::from_iterator(self.x.len(), self.x.iter().map(|xi| rbf(&xs, xi, &self.hyper)));
        let mean = k_star.dot(&self.weights);
        let v = self.chol.l_dirty().solve_lower_triangular(&k_star).expect("cholesky factor has positive diagonal");
        // cancellation can leave a tiny negative value at training points
        let variance = (self.hyper.signal_variance - v.dot(&v)).max(0.0);
        Prediction {
            mean: self.scaling.y_mean + self.scaling.y_scale * mean,
            variance: variance * self.scaling.y_scale * self.scaling.y_scale,
        }
    }

    /// Training inputs and targets in the original units, followed by the
    /// hyperparameters, as CSV.
    pub fn to_csv(&self) -> String {
        let mut out = String::new();
        let h = &self.hyper;
        out.push_str(&format!("# length_scale={},signal_variance={},noise_variance={}\n", h.length_scale, h.signal_variance, h.noise_variance));
        for (xi, yi) in self.x.iter().zip(&self.y) {
            let raw: Vec<String> = xi
                .iter()
                .zip(&self.scaling.x_mean)
                .zip(&self.scaling.x_scale)
                .map(|((v, m), s)| format!("{}", v * s + m))
                .collect();
            out.push_str(&format!("{},{}\n", raw.join(","), self.scaling.y_mean + self.scaling.y_scale * yi));
        }
        out
    }
}

/// Uniform grid over a box; queries outside snap to the edge cells.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Grid {
    pub lo: Vec<f64>,
    pub hi: Vec<f64>,
    pub cells: Vec<usize>,
}

impl Grid {
    pub fn new(lo: Vec<f64>, hi: Vec<f64>, cells: Vec<usize>) -> Self {
        assert!(lo.len() == hi.len() && hi.len() == cells.len() && cells.iter().all(|&c| c > 0));
        Self { lo, hi, cells }
    }

    pub fn len(&self) -> usize {
        self.cells.iter().product()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn coords(&self, x: &[f64]) -> Vec<usize> {
        (0..self.cells.len())
            .map(|d| {
                let span = self.hi[d] - self.lo[d];
                let t = if span > 0.0 { (x[d] - self.lo[d]) / span } else { 0.0 };
                ((t * self.cells[d] as f64).floor().max(0.0) as usize).min(self.cells[d] - 1)
            })
            .collect()
    }

    pub fn index(&self, x: &[f64]) -> usize {
        self.coords(x).iter().zip(&self.cells).fold(0, |acc, (c, n)| acc * n + c)
    }

    fn unravel(&self, mut idx: usize) -> Vec<usize> {
        let mut out = vec![0; self.cells.len()];
        for d in (0..self.cells.len()).rev() {
            out[d] = idx % self.cells[d];
            idx /= self.cells[d];
        }
        out
    }

    pub fn center(&self, idx: usize) -> Vec<f64> {
        self.unravel(idx)
            .iter()
            .enumerate()
            .map(|(d, &c)| self.lo[d] + (c as f64 + 0.5) * (self.hi[d] - self.lo[d]) / self.cells[d] as f64)
            .collect()
    }

    fn cell_distance(&self, a: usize, b: usize) -> f64 {
        let (ca, cb) = (self.unravel(a), self.unravel(b));
        ca.iter().zip(&cb).zip(&self.cells).map(|((x, y), n)| ((*x as f64 - *y as f64) / *n as f64).powi(2)).sum()
    }
}

/// Model discrepancy at one operating point.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnvelopeSample {
    pub x: Vec<f64>,
    pub gpr: f64,
    pub nominal: f64,
    pub truth: f64,
}

/// Cellwise bounds `α_i·max|gpr − nominal| + α_e·max|truth − gpr|`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnvelopeTable {
    pub grid: Grid,
    pub internal: Vec<f64>,
    pub external: Vec<f64>,
    pub alpha_internal: f64,
    pub alpha_external: f64,
    /// Cells that held at least one sample.
    pub populated: Vec<bool>,
}

pub fn build_envelopes(samples: &[EnvelopeSample], grid: Grid, alpha_internal: f64, alpha_external: f64) -> Result<EnvelopeTable, GprError> {
    if samples.is_empty() {
        return Err(GprError::EmptyTrace);
    }
    let n = grid.len();
    let mut internal = vec![0.0f64; n];
    let mut external = vec![0.0f64; n];
    let mut populated = vec![false; n];
    for s in samples {
        let i = grid.index(&s.x);
        internal[i] = internal[i].max((s.gpr - s.nominal).abs());
        external[i] = external[i].max((s.truth - s.gpr).abs());
        populated[i] = true;
    }
    let filled: Vec<usize> = (0..n).filter(|&i| populated[i]).collect();
    for i in 0..n {
        if !populated[i] {
            let near = *filled
                .iter()
                .min_by(|&&a, &&b| grid.cell_distance(i, a).total_cmp(&grid.cell_distance(i, b)))
                .expect("at least one populated cell");
            internal[i] = internal[near];
            external[i] = external[near];
        }
    }
    Ok(EnvelopeTable { grid, internal, external, alpha_internal, alpha_external, populated })
}

impl EnvelopeTable {
    /// Zero everywhere.
    pub fn zero(grid: Grid) -> Self {
        let n = grid.len();
        Self { grid, internal: vec![0.0; n], external: vec![0.0; n], alpha_internal: 1.0, alpha_external: 1.0, populated: vec![false; n] }
    }

    pub fn bound(&self, x: &[f64]) -> f64 {
        let i = self.grid.index(x);
        self.alpha_internal * self.internal[i] + self.alpha_external * self.external[i]
    }

    pub fn max_bound(&self) -> f64 {
        (0..self.grid.len()).map(|i| self.alpha_internal * self.internal[i] + self.alpha_external * self.external[i]).fold(0.0, f64::max)
    }

    pub fn scaled(&self, factor_internal: f64, factor_external: f64) -> Self {
        Self { alpha_internal: self.alpha_internal * factor_internal, alpha_external: self.alpha_external * factor_external, ..self.clone() }
    }

    /// Fraction of samples whose discrepancy to the nominal model lies within the bound.
    pub fn coverage(&self, held_out: &[EnvelopeSample]) -> f64 {
        if held_out.is_empty() {
            return 1.0;
        }
        let hit = held_out.iter().filter(|s| (s.truth - s.nominal).abs() <= self.bound(&s.x)).count();
        hit as f64 / held_out.len() as f64
    }

    pub fn to_csv(&self) -> String {
        let dims = self.grid.cells.len();
        let mut out: String = (0..dims).map(|d| format!("x{d},")).collect();
        out.push_str("internal,external,bound,populated\n");
        for i in 0..self.grid.len() {
            let c = self.grid.center(i);
            for v in c {
                out.push_str(&format!("{v},"));
            }
            let b = self.alpha_internal * self.internal[i] + self.alpha_external * self.external[i];
            out.push_str(&format!("{},{},{},{}\n", self.internal[i], self.external[i], b, self.populated[i] as u8));
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn kernel_symmetry_and_self_correlation() {
        let h = Hyperparameters { length_scale: 0.7, signal_variance: 2.5, noise_variance: 0.0 };
        assert_eq!(rbf(&[1.0, 2.0], &[1.0, 2.0], &h), 2.5);
        assert_eq!(rbf(&[1.0, 2.0], &[0.3, -1.0], &h), rbf(&[0.3, -1.0], &[1.0, 2.0], &h));
    }

    #[test]
    fn two_point_posterior_matches_hand_inverse() {
        let h = Hyperparameters { length_scale: 0.8, signal_variance: 1.5, noise_variance: 0.1 };
        let gp = Gpr::with_hyperparameters(vec![vec![0.0], vec![1.0]], vec![1.0, -2.0], h).unwrap();
        let k01 = 1.5 * (-0.5f64 / 0.64).exp();
        let (a, b, c) = (1.6, k01, 1.6);
        let det = a * c - b * b;
        let inv = [[c / det, -b / det], [-b / det, a / det]];
        let xs = 0.4;
        let ks = [1.5 * (-0.5 * xs * xs / 0.64f64).exp(), 1.5 * (-0.5 * (xs - 1.0) * (xs - 1.0) / 0.64f64).exp()];
        let w = [inv[0][0] * 1.0 + inv[0][1] * -2.0, inv[1][0] * 1.0 + inv[1][1] * -2.0];
        let mean = ks[0] * w[0] + ks[1] * w[1];
        let var = 1.5 - (ks[0] * (inv[0][0] * ks[0] + inv[0][1] * ks[1]) + ks[1] * (inv[1][0] * ks[0] + inv[1][1] * ks[1]));
        let p = gp.predict(&[xs]);
        assert!((p.mean - mean).abs() < 1e-10);
        assert!((p.variance - var).abs() < 1e-10);
    }

    #[test]
    fn noiseless_interpolation_and_prior_reversion() {
        let h = Hyperparameters { length_scale: 0.5, signal_variance: 1.0, noise_variance: 0.0 };
        let gp = Gpr::with_hyperparameters(vec![vec![0.0], vec![1.0], vec![2.5]], vec![0.3, -0.7, 1.1], h).unwrap();
        assert!((gp.predict(&[1.0]).mean + 0.7).abs() < 1e-6);
        let far = gp.predict(&[100.0]);
        assert!(far.mean.abs() < 1e-12 && (far.variance - 1.0).abs() < 1e-12);
        let single = Gpr::with_hyperparameters(vec![vec![0.2]], vec![4.0], h).unwrap();
        assert!((single.predict(&[0.2]).mean - 4.0).abs() < 1e-12);
    }

    #[test]
    fn constant_targets_predict_constant() {
        let x: Vec<Vec<f64>> = (0..15).map(|i| vec![i as f64 * 0.2]).collect();
        let gp = Gpr::fit(&x, &[3.5; 15], &FitOptions::default()).unwrap();
        for q in [0.1, 1.3, 2.7] {
            assert!((gp.predict(&[q]).mean - 3.5).abs() < 1e-6);
        }
    }

    #[test]
    fn sine_heldout_rmse() {
        let x: Vec<Vec<f64>> = (0..20).map(|i| vec![std::f64::consts::PI * i as f64 / 19.0]).collect();
        let y: Vec<f64> = x.iter().map(|r| r[0].sin()).collect();
        let gp = Gpr::fit(&x, &y, &FitOptions::default()).unwrap();
        let n = 200;
        let mse: f64 = (0..n)
            .map(|k| {
                let q = std::f64::consts::PI * (k as f64 + 0.5) / n as f64;
                (gp.predict(&[q]).mean - q.sin()).powi(2)
            })
            .sum::<f64>()
            / n as f64;
        assert!(mse.sqrt() < 0.05, "rmse {}", mse.sqrt());
    }

    #[test]
    fn envelope_examples() {
        let grid = Grid::new(vec![0.0], vec![1.0], vec![1]);
        let samples: Vec<EnvelopeSample> = [0.1, 0.3, 0.2]
            .iter()
            .map(|&m| EnvelopeSample { x: vec![0.5], gpr: m, nominal: 0.0, truth: m })
            .collect();
        let t = build_envelopes(&samples, grid.clone(), 1.22, 1.0).unwrap();
        assert!((t.bound(&[0.5]) - 0.366).abs() < 1e-12);
        let same: Vec<EnvelopeSample> = samples.iter().map(|s| EnvelopeSample { nominal: s.gpr, ..s.clone() }).collect();
        assert_eq!(build_envelopes(&same, grid.clone(), 1.0, 0.0).unwrap().bound(&[0.5]), 0.0);
        assert_eq!(build_envelopes(&[], grid, 1.0, 1.0), Err(GprError::EmptyTrace));
    }

    #[test]
    fn empty_cells_take_nearest_bound() {
        let grid = Grid::new(vec![0.0], vec![4.0], vec![4]);
        let samples = vec![
            EnvelopeSample { x: vec![0.5], gpr: 1.0, nominal: 0.0, truth: 1.0 },
            EnvelopeSample { x: vec![3.5], gpr: 5.0, nominal: 0.0, truth: 5.0 },
        ];
        let t = build_envelopes(&samples, grid, 1.0, 1.0).unwrap();
        assert_eq!(t.bound(&[1.2]), 1.0);
        assert_eq!(t.bound(&[2.7]), 5.0);
        assert_eq!(t.bound(&[-10.0]), 1.0);
        assert_eq!(t.populated, vec![true, false, false, true]);
    }

    #[test]
    fn grid_index_roundtrip() {
        let grid = Grid::new(vec![-1.0, 0.0], vec![1.0, 2.0], vec![4, 3]);
        for i in 0..grid.len() {
            assert_eq!(grid.index(&grid.center(i)), i);
        }
    }
}
