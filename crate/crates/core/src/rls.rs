//! Recursive least-squares identification of the tire stiffnesses
//! `θ = [C_σ, C_α]` with an error-driven forgetting factor.

use std::collections::VecDeque;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::lmi_ctrl::{Stiffness, StiffnessRange};
use crate::numerics::{min_sym_eigenvalue, symmetrize, Mat};
use crate::plant::{tire_forces, VehicleParams, VehicleState, FL, FR, LOW_SPEED, RL, RR};

pub const STIFFNESS_BOUNDS: (f64, f64) = (1e3, 3e5);

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RlsConfig {
    pub lambda_min: f64,
    pub h: f64,
    /// Residual scale for the forgetting factor.
    pub sigma_eps: f64,
    pub initial_variance: f64,
    /// Overrides the adaptive forgetting factor when set.
    pub fixed_lambda: Option<f64>,
    /// Samples in the excitation window.
    pub excitation_window: usize,
}

impl Default for RlsConfig {
    fn default() -> Self {
        Self { lambda_min: 0.95, h: 0.9, sigma_eps: 0.06, initial_variance: 1e12, fixed_lambda: None, excitation_window: 50 }
    }
}

/// `λ = λ_min + (1 − λ_min)·h^q` with `q = ⌊(ε/σ_ε)²⌋`.
pub fn adapt_lambda(lambda_min: f64, h: f64, sigma_eps: f64, eps: f64) -> f64 {
    let q = ((eps / sigma_eps).powi(2)).floor();
    let decay = if q.is_finite() { h.powf(q) } else { 0.0 };
    (lambda_min + (1.0 - lambda_min) * decay).clamp(lambda_min, 1.0)
}

/// Measurement `y = φ·θ` for one sample.
#[derive(Debug, Clone, PartialEq)]
pub struct Regression {
    pub y: DVector<f64>,
    pub phi: DMatrix<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Rejection {
    LowSpeed,
    Saturated,
    NonFinite,
}

/// Measured chassis accelerations `(v̇_x, v̇_y, ω̇_z)`.
pub type Accelerations = [f64; 3];

/// Rewrites the chassis force balance as `y = φ·θ` in the linear tire region.
///
/// Rows are `v̇_x − v_y·ω_z`, `β̇ + ω_z` and `ω̇_z`. Slip quantities come from
/// the measured state; `params` supplies the geometry and the current
/// stiffness estimate for the saturation test.
pub fn build_regressor(state: &VehicleState, delta: f64, accel: &Accelerations, params: &VehicleParams) -> Result<Regression, Rejection> {
    if state.vx.abs() <= LOW_SPEED {
        return Err(Rejection::LowSpeed);
    }
    let forces = tire_forces(state, delta, params).map_err(|_| Rejection::NonFinite)?;
    if forces.iter().any(|f| f.lambda < 1.0) {
        return Err(Rejection::Saturated);
    }
    let (s, c) = delta.sin_cos();
    // body-frame force per unit stiffness: (x from C_σ, x from C_α, y from C_σ, y from C_α)
    let mut unit = [[0.0; 4]; 4];
    for (i, f) in forces.iter().enumerate() {
        let long = f.sigma / (1.0 + f.sigma);
        let lat = -f.alpha.tan() / (1.0 + f.sigma);
        unit[i] = if i == FL || i == FR { [long * c, -lat * s, long * s, lat * c] } else { [long, 0.0, 0.0, lat] };
    }
    let sum = |k: usize| (unit[FL][k] + unit[FR][k]) + (unit[RL][k] + unit[RR][k]);
    let (fx_s, fx_a, fy_s, fy_a) = (sum(0), sum(1), sum(2), sum(3));
    let d = params.half_track;
    let yaw = |k_x: usize, k_y: usize| {
        d * ((unit[FR][k_x] + unit[RR][k_x]) - (unit[FL][k_x] + unit[RL][k_x]))
            + params.front_axle * (unit[FR][k_y] + unit[FL][k_y])
            - params.rear_axle * (unit[RR][k_y] + unit[RL][k_y])
    };
    let (m, iz) = (params.mass, params.yaw_inertia);
    let (vx, vy, wz) = (state.vx, state.vy, state.yaw_rate);
    let v2 = vx * vx + vy * vy;
    let phi = DMatrix::from_row_slice(3, 2, &[
        fx_s / m,
        fx_a / m,
        (vx * fy_s - vy * fx_s) / (m * v2),
        (vx * fy_a - vy * fx_a) / (m * v2),
        yaw(0, 2) / iz,
        yaw(1, 3) / iz,
    ]);
    let beta_rate = (vx * accel[1] - vy * accel[0]) / v2;
    let y = DVector::from_column_slice(&[accel[0] - vy * wz, beta_rate + wz, accel[2]]);
    if phi.iter().chain(y.iter()).any(|v| !v.is_finite()) {
        return Err(Rejection::NonFinite);
    }
    Ok(Regression { y, phi })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RlsTraceRow {
    pub step: usize,
    pub theta: [f64; 2],
    pub lambda: f64,
    pub eps: f64,
    pub p_diag: [f64; 2],
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum StepOutcome {
    Updated { lambda: f64, eps: f64, clamped: bool },
    /// Innovation covariance was singular.
    Skipped,
}

#[derive(Debug, Clone)]
pub struct Rls {
    config: RlsConfig,
    theta: DVector<f64>,
    p: Mat,
    bounds: Option<(f64, f64)>,
    window: VecDeque<Mat>,
    steps: usize,
}

impl Rls {
    pub fn new(config: RlsConfig, theta0: &[f64]) -> Self {
        let n = theta0.len();
        Self {
            config,
            theta: DVector::from_column_slice(theta0),
            p: Mat::identity(n, n) * config.initial_variance,
            bounds: None,
            window: VecDeque::new(),
            steps: 0,
        }
    }

    /// Stiffness identifier with the physical bounds enforced.
    pub fn for_stiffness(config: RlsConfig, initial: &Stiffness) -> Self {
        let mut rls = Self::new(config, &[initial.slip, initial.cornering]);
        rls.bounds = Some(STIFFNESS_BOUNDS);
        rls
    }

    pub fn theta(&self) -> &DVector<f64> {
        &self.theta
    }

    pub fn covariance(&self) -> &Mat {
        &self.p
    }

    pub fn steps(&self) -> usize {
        self.steps
    }

    pub fn stiffness(&self) -> Stiffness {
        Stiffness { slip: self.theta[0], cornering: self.theta[1] }
    }

    /// `θ̂ ± 3σ` from the covariance, widened to `[lo/scale, hi·scale]`.
    pub fn stiffness_range(&self, scale: f64) -> StiffnessRange {
        let band = |i: usize| {
            let sd = self.p[(i, i)].max(0.0).sqrt();
            let lo = (self.theta[i] - 3.0 * sd).max(STIFFNESS_BOUNDS.0);
            let hi = (self.theta[i] + 3.0 * sd).min(STIFFNESS_BOUNDS.1);
            let (lo, hi) = (lo / scale, hi * scale);
            // a scaling below one can shrink the band past the estimate
            if lo > hi {
                (self.theta[i], self.theta[i])
            } else {
                (lo, hi)
            }
        };
        StiffnessRange { slip: band(0), cornering: band(1) }
    }

    /// Smallest singular value of the stacked regressors in the window.
    pub fn excitation(&self) -> f64 {
        let n = self.theta.len();
        let gram = self.window.iter().fold(Mat::zeros(n, n), |acc, g| acc + g);
        if self.window.is_empty() { 0.0 } else { min_sym_eigenvalue(&gram).max(0.0).sqrt() }
    }

    pub fn residual(&self, reg: &Regression) -> DVector<f64> {
        &reg.y - &reg.phi * &self.theta
    }

    pub fn step(&mut self, reg: &Regression) -> StepOutcome {
        let n = self.theta.len();
        let rows = reg.phi.nrows();
        let innovation = self.residual(reg);
        let eps = innovation.norm();
        let lambda = self
            .config
            .fixed_lambda
            .unwrap_or_else(|| adapt_lambda(self.config.lambda_min, self.config.h, self.config.sigma_eps, eps));
        let pt = &self.p * reg.phi.transpose();
        let s = Mat::identity(rows, rows) * lambda + &reg.phi * &pt;
        let Some(s_inv) = s.try_inverse() else { return StepOutcome::Skipped };
        let k = &pt * s_inv;
        self.theta += &k * innovation;
        self.p = symmetrize(&((Mat::identity(n, n) - &k * &reg.phi) * &self.p / lambda));
        let mut clamped = false;
        if let Some((lo, hi)) = self.bounds {
            for v in self.theta.iter_mut() {
                if *v < lo || *v > hi {
                    *v = v.clamp(lo, hi);
                    clamped = true;
                }
            }
            if clamped {
                self.p = Mat::identity(n, n) * self.config.initial_variance;
            }
        }
        self.window.push_back(reg.phi.transpose() * &reg.phi);
        while self.window.len() > self.config.excitation_window.max(1) {
            self.window.pop_front();
        }
        self.steps += 1;
        StepOutcome::Updated { lambda, eps, clamped }
    }

    pub fn trace_row(&self, lambda: f64, eps: f64) -> RlsTraceRow {
        RlsTraceRow {
            step: self.steps,
            theta: [self.theta[0], self.theta.get(1).copied().unwrap_or(0.0)],
            lambda,
            eps,
            p_diag: [self.p[(0, 0)], if self.p.nrows() > 1 { self.p[(1, 1)] } else { 0.0 }],
        }
    }
}
