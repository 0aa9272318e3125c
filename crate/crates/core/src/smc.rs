//! Sliding-mode yaw-stability controller on the `(β, ω_z)` plane, with a
//! differential-slip allocation of the commanded yaw moment.
//!
//! The yaw-moment command is expressed in kN·m.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::plant::{dugoff_force, VehicleParams, VehicleState, LOW_SPEED};
use crate::lmi_ctrl::Stiffness;
use crate::tracking::PhaseTrajectory;

/// Newton·metres per unit of yaw-moment command.
pub const MOMENT_UNIT: f64 = 1000.0;
pub const MIN_INPUT_GAIN: f64 = 1e-3;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SmcError {
    #[error("input gain {0} is below the bypass threshold")]
    Bypass(f64),
    #[error("invalid sliding-mode gains: {0}")]
    InvalidGains(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SmcGains {
    /// Surface slope on the sideslip error.
    pub xi: f64,
    /// Constant reaching gain.
    pub eps: f64,
    /// Proportional reaching gain.
    pub eta: f64,
    /// Margin added to the mismatch envelope.
    pub kappa0: f64,
    pub boundary_layer: f64,
}

impl Default for SmcGains {
    fn default() -> Self {
        Self { xi: 3.0, eps: 0.05, eta: 2.0, kappa0: 0.02, boundary_layer: 0.01 }
    }
}

impl SmcGains {
    pub fn validate(&self) -> Result<(), SmcError> {
        if !(self.xi > 0.0 && self.eta > 0.0 && self.eps >= 0.0 && self.kappa0 >= 0.0 && self.boundary_layer > 0.0) {
            return Err(SmcError::InvalidGains(format!("{self:?}")));
        }
        Ok(())
    }
}

/// `sign(s)` smoothed linearly inside `±layer`.
pub fn sat(s: f64, layer: f64) -> f64 {
    (s / layer).clamp(-1.0, 1.0)
}

/// `s = (ω_z − ω_z_des) + ξ(β − β_des)`.
pub fn surface(beta: f64, yaw_rate: f64, traj: &PhaseTrajectory, xi: f64) -> f64 {
    (yaw_rate - traj.yaw_rate) + xi * (beta - traj.beta)
}

/// Nominal surface dynamics `ṡ = ĥ + k̂·u_s`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SurfaceModel {
    pub drift: f64,
    pub input_gain: f64,
}

/// Nominal surface drift from the bicycle lateral/yaw rows, with the front
/// slip angle taken from the commanded `alpha_front`.
pub fn surface_model(state: &VehicleState, traj: &PhaseTrajectory, alpha_front: f64, theta: &Stiffness, params: &VehicleParams, xi: f64) -> SurfaceModel {
    let p = theta.apply(params);
    let fz = p.static_load();
    let vx = if state.vx.abs() > LOW_SPEED { state.vx } else { LOW_SPEED.copysign(state.vx) };
    let alpha_rear = (state.vy - p.rear_axle * state.yaw_rate) / vx;
    let lateral = |alpha: f64| -dugoff_force(0.0, alpha, fz, &p).map(|f| f.fy).unwrap_or(0.0);
    let (front, rear) = (lateral(alpha_front), lateral(alpha_rear));
    let yaw_accel = 2.0 * (p.front_axle * front - p.rear_axle * rear) / p.yaw_inertia;
    let beta_rate = 2.0 * (front + rear) / (p.mass * vx) - state.yaw_rate;
    SurfaceModel {
        drift: yaw_accel - traj.yaw_accel + xi * (beta_rate - traj.beta_rate),
        input_gain: MOMENT_UNIT / p.yaw_inertia,
    }
}

/// Reaching law with envelope compensation:
/// `u_s = (−ε·sat(s) − η·s − ĥ)/k̂ − (Δ + κ₀)·sat(s)`.
///
/// `envelope` is in command units.
pub fn control_law(s: f64, model: &SurfaceModel, envelope: f64, gains: &SmcGains) -> Result<f64, SmcError> {
    if !(model.input_gain > MIN_INPUT_GAIN) {
        return Err(SmcError::Bypass(model.input_gain));
    }
    let sw = sat(s, gains.boundary_layer);
    let equivalent = (-gains.eps * sw - gains.eta * s - model.drift) / model.input_gain;
    Ok(equivalent - (envelope.max(0.0) + gains.kappa0) * sw)
}

/// Outcome of a sign-condition scan over a trace.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct DecreaseReport {
    pub samples: usize,
    /// Samples outside the boundary layer.
    pub checked: usize,
    pub violations: usize,
}

impl DecreaseReport {
    pub fn violation_fraction(&self) -> f64 {
        if self.checked == 0 { 0.0 } else { self.violations as f64 / self.checked as f64 }
    }

    pub fn merge(&mut self, other: &DecreaseReport) {
        self.samples += other.samples;
        self.checked += other.checked;
        self.violations += other.violations;
    }
}

pub(crate) fn scan(trace: &[(f64, f64)], layer: f64, violated: impl Fn(f64) -> bool) -> DecreaseReport {
    let mut report = DecreaseReport { samples: trace.len(), ..Default::default() };
    for &(s, ds) in trace {
        if s.abs() > layer {
            report.checked += 1;
            if violated(s * ds) {
                report.violations += 1;
            }
        }
    }
    report
}

/// Counts samples outside the layer where `s·ṡ < 0` fails.
pub fn reaching_check(trace: &[(f64, f64)], layer: f64) -> DecreaseReport {
    scan(trace, layer, |p| !(p < 0.0))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SlipAllocation {
    pub left: f64,
    pub right: f64,
    pub failed: bool,
    pub iterations: usize,
}

/// Slip angles of the left and right wheel pair: front from the command,
/// rear from the state.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AxleAngles {
    pub front: f64,
    pub rear: f64,
}

impl AxleAngles {
    pub fn new(state: &VehicleState, alpha_front: f64, params: &VehicleParams) -> Self {
        let vx = if state.vx.abs() > LOW_SPEED { state.vx } else { LOW_SPEED.copysign(state.vx) };
        Self { front: alpha_front, rear: (state.vy - params.rear_axle * state.yaw_rate) / vx }
    }
}

fn side_force(sigma: f64, angles: &AxleAngles, params: &VehicleParams) -> (f64, f64) {
    let fz = params.static_load();
    let sigma = sigma.max(-0.999);
    let f = dugoff_force(sigma, angles.front, fz, params).expect("slip clamped, load positive");
    let r = dugoff_force(sigma, angles.rear, fz, params).expect("slip clamped, load positive");
    (f.fx + r.fx, f.lambda.min(r.lambda))
}

/// Residuals of the allocation: total longitudinal force relative to the
/// symmetric command, and differential yaw moment minus the request (N, N·m).
pub fn allocation_residuals(left: f64, right: f64, sigma_des: f64, yaw_moment: f64, angles: &AxleAngles, params: &VehicleParams) -> [f64; 2] {
    let (fl, _) = side_force(left, angles, params);
    let (fr, _) = side_force(right, angles, params);
    let (f0, _) = side_force(sigma_des, angles, params);
    [(fl + fr) - 2.0 * f0, params.half_track * (fr - fl) - yaw_moment * MOMENT_UNIT]
}

/// Splits the symmetric slip command into left/right values realizing the
/// yaw moment `yaw_moment` (kN·m) at unchanged total longitudinal force.
pub fn allocate_slip(yaw_moment: f64, sigma_des: f64, angles: &AxleAngles, params: &VehicleParams) -> SlipAllocation {
    const TOL: f64 = 1e-6;
    const MAX_ITER: usize = 30;
    let failed = |iterations| SlipAllocation { left: sigma_des, right: sigma_des, failed: true, iterations };
    if side_force(sigma_des, angles, params).1 < 1.0 {
        return failed(0);
    }
    let res = |l: f64, r: f64| allocation_residuals(l, r, sigma_des, yaw_moment, angles, params);
    let norm = |v: [f64; 2]| v[0].abs().max(v[1].abs());
    let (mut l, mut r) = (sigma_des, sigma_des);
    let mut f = res(l, r);
    for it in 0..MAX_ITER {
        if norm(f) <= TOL {
            return SlipAllocation { left: l, right: r, failed: false, iterations: it };
        }
        let h = 1e-7;
        let (fl_p, fl_m) = (res(l + h, r), res(l - h, r));
        let (fr_p, fr_m) = (res(l, r + h), res(l, r - h));
        let j = [
            [(fl_p[0] - fl_m[0]) / (2.0 * h), (fr_p[0] - fr_m[0]) / (2.0 * h)],
            [(fl_p[1] - fl_m[1]) / (2.0 * h), (fr_p[1] - fr_m[1]) / (2.0 * h)],
        ];
        let det = j[0][0] * j[1][1] - j[0][1] * j[1][0];
        if !(det.abs() > 1e-12) {
            return failed(it);
        }
        let dl = -(j[1][1] * f[0] - j[0][1] * f[1]) / det;
        let dr = -(-j[1][0] * f[0] + j[0][0] * f[1]) / det;
        let mut step = 1.0;
        loop {
            let (nl, nr) = ((l + step * dl).max(-0.99), (r + step * dr).max(-0.99));
            let nf = res(nl, nr);
            if norm(nf) < norm(f) || step < 1e-4 {
                l = nl;
                r = nr;
                f = nf;
                break;
            }
            step *= 0.5;
        }
    }
    if norm(f) <= TOL {
        SlipAllocation { left: l, right: r, failed: false, iterations: MAX_ITER }
    } else {
        failed(MAX_ITER)
    }
}

/// Largest yaw moment (kN·m) available from differential slip when the
/// tires on each side can still add `reserve` of their friction capacity.
pub fn moment_capacity(params: &VehicleParams, reserve: f64) -> f64 {
    2.0 * params.half_track * 2.0 * reserve * params.friction * params.static_load() / MOMENT_UNIT
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn surface_examples() {
        let traj = PhaseTrajectory { beta: 0.01, yaw_rate: 0.2, ..Default::default() };
        assert_eq!(surface(0.01, 0.2, &traj, 3.0), 0.0);
        assert!((surface(-0.01, 0.3, &traj, 2.0) - 0.06).abs() < 1e-15);
        assert!((surface(0.5, 0.3, &traj, 0.0) - 0.1).abs() < 1e-15);
    }

    #[test]
    fn control_law_examples() {
        let gains = SmcGains { xi: 1.0, eps: 0.2, eta: 1.0, kappa0: 0.05, boundary_layer: 1e-6 };
        let on = SurfaceModel { drift: 0.0, input_gain: 2.0 };
        assert_eq!(control_law(0.0, &on, 0.3, &gains).unwrap(), 0.0);
        let m = SurfaceModel { drift: 0.05, input_gain: 2.0 };
        assert!((control_law(0.1, &m, 0.3, &gains).unwrap() + 0.525).abs() < 1e-12);
        let bypass = SurfaceModel { drift: 0.0, input_gain: 1e-3 };
        assert_eq!(control_law(0.1, &bypass, 0.3, &gains), Err(SmcError::Bypass(1e-3)));
    }

    #[test]
    fn robust_term_linear_inside_layer() {
        let gains = SmcGains { eps: 0.0, eta: 1e-9, ..Default::default() };
        let m = SurfaceModel { drift: 0.0, input_gain: 1.0 };
        let a = control_law(0.002, &m, 0.3, &gains).unwrap();
        let b = control_law(0.004, &m, 0.3, &gains).unwrap();
        assert!((b / a - 2.0).abs() < 1e-6);
    }

    #[test]
    fn reaching_check_counterexample() {
        let r = reaching_check(&[(1.0, 1.0), (-0.5, -0.2), (0.005, 1.0)], 0.01);
        assert_eq!((r.checked, r.violations), (2, 2));
        assert_eq!(r.violation_fraction(), 1.0);
        let ok = reaching_check(&[(1.0, -1.0), (-0.5, 0.2)], 0.01);
        assert_eq!(ok.violations, 0);
    }

    #[test]
    fn model_input_gain_clears_bypass() {
        let p = VehicleParams::default();
        let s = VehicleState::straight(16.67, &p);
        let m = surface_model(&s, &PhaseTrajectory::default(), 0.0, &Stiffness::nominal(&p), &p, 3.0);
        assert!(m.input_gain > MIN_INPUT_GAIN);
        assert_eq!(m.drift, 0.0);
    }

    fn straight_angles() -> (VehicleParams, AxleAngles) {
        let p = VehicleParams::default();
        (p, AxleAngles { front: 0.0, rear: 0.0 })
    }

    #[test]
    fn zero_moment_keeps_symmetric_slip() {
        let (p, angles) = straight_angles();
        let a = allocate_slip(0.0, 0.02, &angles, &p);
        assert!(!a.failed);
        assert!((a.left - 0.02).abs() < 1e-12 && (a.right - 0.02).abs() < 1e-12);
    }

    #[test]
    fn allocation_meets_residual_tolerance() {
        let (p, _) = straight_angles();
        let angles = AxleAngles { front: -0.02, rear: 0.01 };
        let a = allocate_slip(0.8, 0.01, &angles, &p);
        assert!(!a.failed);
        let r = allocation_residuals(a.left, a.right, 0.01, 0.8, &angles, &p);
        assert!(r[0].abs() <= 1e-6 && r[1].abs() <= 1e-6);
    }

    #[test]
    fn differential_sign_follows_jacobian() {
        let (p, angles) = straight_angles();
        // ∂M/∂σ_r = d·∂F_x/∂σ > 0 and ∂M/∂σ_l < 0 at the symmetric point
        let h = 1e-6;
        let base = allocation_residuals(0.01, 0.01, 0.01, 0.0, &angles, &p)[1];
        let dm_dr = (allocation_residuals(0.01, 0.01 + h, 0.01, 0.0, &angles, &p)[1] - base) / h;
        let dm_dl = (allocation_residuals(0.01 + h, 0.01, 0.01, 0.0, &angles, &p)[1] - base) / h;
        assert!(dm_dr > 0.0 && dm_dl < 0.0);
        for u in [0.05, -0.05] {
            let a = allocate_slip(u, 0.01, &angles, &p);
            assert!(!a.failed);
            // first-order prediction of the split
            let predicted = u * MOMENT_UNIT / (dm_dr - dm_dl) * 2.0;
            assert_eq!((a.right - a.left).signum(), predicted.signum());
            assert!(((a.right - a.left) - predicted).abs() < 0.05 * predicted.abs());
        }
    }

    #[test]
    fn saturated_tires_fail() {
        let (p, _) = straight_angles();
        let angles = AxleAngles { front: 0.12, rear: 0.12 };
        let a = allocate_slip(0.5, 0.1, &angles, &p);
        assert!(a.failed);
        assert_eq!((a.left, a.right), (0.1, 0.1));
    }

    #[test]
    fn unreachable_moment_fails() {
        let (p, angles) = straight_angles();
        let a = allocate_slip(50.0, 0.0, &angles, &p);
        assert!(a.failed);
    }
}
