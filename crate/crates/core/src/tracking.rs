//! Path-tracking layer: tracking error in the vehicle frame, LQR feedback on
//! the linearized error kinematics, side-slip rate allocation and the
//! desired `(v_x, β, ω_z)` trajectory handed to the robust controllers.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::numerics::{closed_loop_is_hurwitz, golden_section_min, solve_care, Mat, NumericsError};
use crate::plant::{wrap_angle, TireForces, VehicleParams, VehicleState, FL, FR, RL, RR};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum TrackingError {
    #[error("error kinematics are uncontrollable with zero reference speed and yaw rate")]
    Uncontrollable,
    #[error("closed-loop tracking error dynamics are not Hurwitz")]
    NotHurwitz,
    #[error(transparent)]
    Synthesis(#[from] NumericsError),
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct ReferencePoint {
    pub x: f64,
    pub y: f64,
    pub psi: f64,
    pub speed: f64,
    pub yaw_rate: f64,
    pub curvature: f64,
}

/// Pose error `R(ψ)(z − z_ref)` expressed in the vehicle frame.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct PoseError {
    pub e_x: f64,
    pub e_y: f64,
    pub e_psi: f64,
}

impl PoseError {
    pub fn as_vec(&self) -> [f64; 3] {
        [self.e_x, self.e_y, self.e_psi]
    }
}

/// Desired motion for the robust layer.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct PhaseTrajectory {
    pub vx: f64,
    pub beta: f64,
    pub yaw_rate: f64,
    pub vx_rate: f64,
    pub yaw_accel: f64,
    pub beta_rate: f64,
    /// False until the first update; derivatives are zero on that update.
    pub primed: bool,
}

pub const BETA_LIMIT: f64 = 0.12;
pub const BETA_RATE_LIMIT: f64 = 0.5;

pub fn compute_error(state: &VehicleState, reference: &ReferencePoint) -> PoseError {
    let (s, c) = state.psi.sin_cos();
    let dx = state.x - reference.x;
    let dy = state.y - reference.y;
    PoseError { e_x: c * dx + s * dy, e_y: -s * dx + c * dy, e_psi: wrap_angle(state.psi - reference.psi) }
}

/// Linearized error kinematics `(A_e, B_e)` about a reference point.
pub fn error_model(reference: &ReferencePoint) -> (Mat, Mat) {
    let (v, w) = (reference.speed, reference.yaw_rate);
    let a = Mat::from_row_slice(3, 3, &[0.0, w, 0.0, -w, 0.0, v, 0.0, 0.0, 0.0]);
    let b = Mat::from_row_slice(3, 2, &[1.0, 0.0, 0.0, 0.0, 0.0, 1.0]);
    (a, b)
}

/// Continuous-time LQR gain `K = R⁻¹BᵀP` for the error kinematics.
pub fn lqr_gain(reference: &ReferencePoint, q: &Mat, r: &Mat) -> Result<Mat, TrackingError> {
    if reference.speed == 0.0 && reference.yaw_rate == 0.0 {
        return Err(TrackingError::Uncontrollable);
    }
    let (a, b) = error_model(reference);
    let p = solve_care(&a, &b, q, r)?;
    let r_inv = r.clone().try_inverse().ok_or(TrackingError::Synthesis(NumericsError::InvalidArgument(
        "R must be invertible".into(),
    )))?;
    let k = r_inv * b.transpose() * p;
    if !closed_loop_is_hurwitz(&(&a - &b * &k)) {
        return Err(TrackingError::NotHurwitz);
    }
    Ok(k)
}

/// `u = −K z_e + [v_ref, ω_ref]`, with the speed floored at zero.
pub fn desired_motion(error: &PoseError, gain: &Mat, reference: &ReferencePoint) -> (f64, f64) {
    let z = error.as_vec();
    let fb = |row: usize| -(0..3).map(|j| gain[(row, j)] * z[j]).sum::<f64>();
    ((reference.speed + fb(0)).max(0.0), reference.yaw_rate + fb(1))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BetaAllocation {
    pub rate: f64,
    /// Set when no rate in the admissible range keeps every utilization ≤ 1.
    pub saturated: bool,
    pub utilization: [f64; 4],
}

/// Minimizes `Σφᵢ(β̇) + W·β̇²` over `|β̇| ≤ 0.5` subject to `φᵢ ≤ 1`.
///
/// `utilization` predicts the four friction utilizations for a candidate
/// rate. When the constraint cannot be met, the rate minimizing the total
/// excess is returned with `saturated` set.
pub fn allocate_beta<F>(utilization: F, weight: f64) -> BetaAllocation
where
    F: Fn(f64) -> [f64; 4],
{
    let excess = |phi: &[f64; 4]| phi.iter().map(|p| (p - 1.0).max(0.0)).sum::<f64>();
    let cost = |b: f64| {
        let phi = utilization(b);
        phi.iter().sum::<f64>() + weight * b * b + 1e3 * excess(&phi)
    };
    let (rate, _) = golden_section_min(cost, -BETA_RATE_LIMIT, BETA_RATE_LIMIT, 1e-7);
    let phi = utilization(rate);
    if excess(&phi) == 0.0 {
        return BetaAllocation { rate, saturated: false, utilization: phi };
    }
    let (rate, _) = golden_section_min(|b| excess(&utilization(b)), -BETA_RATE_LIMIT, BETA_RATE_LIMIT, 1e-7);
    BetaAllocation { rate, saturated: true, utilization: utilization(rate) }
}

/// One-period prediction of tire utilizations under a candidate `β̇`.
///
/// The rear slip angle follows from the predicted side slip and yaw rate
/// `ω_z = ω_des − β̇`; the front axle supplies the rest of the lateral force
/// needed for `m·v·ω_des`. Longitudinal forces are held at their current
/// values and lateral forces use the small-angle linear tire.
pub fn predicted_utilization(
    state: &VehicleState,
    forces: &TireForces,
    params: &VehicleParams,
    yaw_rate_des: f64,
    beta_rate: f64,
    period: f64,
) -> [f64; 4] {
    let v = state.vx.max(crate::plant::LOW_SPEED);
    let beta = state.beta() + beta_rate * period;
    let yaw = yaw_rate_des - beta_rate;
    let alpha_r = beta - params.rear_axle * yaw / v;
    let rear_each = -params.cornering_stiffness * alpha_r;
    let total = params.mass * v * yaw_rate_des;
    let front_each = 0.5 * (total - 2.0 * rear_each);
    let lateral = [front_each, front_each, rear_each, rear_each];
    let mut out = [0.0; 4];
    for i in [FL, FR, RL, RR] {
        let cap = params.friction * forces[i].fz;
        out[i] = (forces[i].fx.powi(2) + lateral[i].powi(2)) / (cap * cap);
    }
    out
}

/// Integrates the side-slip rate and forms the desired trajectory.
pub fn phase_trajectory(prev: &PhaseTrajectory, speed_des: f64, yaw_rate_des: f64, beta_rate: f64, period: f64) -> PhaseTrajectory {
    let beta = (prev.beta + beta_rate * period).clamp(-BETA_LIMIT, BETA_LIMIT);
    let vx = speed_des * beta.cos();
    let yaw_rate = yaw_rate_des - beta_rate;
    let (vx_rate, yaw_accel) = if prev.primed {
        ((vx - prev.vx) / period, (yaw_rate - prev.yaw_rate) / period)
    } else {
        (0.0, 0.0)
    };
    PhaseTrajectory { vx, beta, yaw_rate, vx_rate, yaw_accel, beta_rate, primed: true }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrackingConfig {
    pub q_diag: [f64; 3],
    pub r_diag: [f64; 2],
    /// Re-synthesize when the reference speed moves by more than this.
    pub resolve_speed: f64,
    pub resolve_yaw_rate: f64,
    pub beta_weight: f64,
    /// Largest gap kept between the side-slip reference and the measured
    /// side slip; stops the reference from winding up when the vehicle
    /// cannot follow it.
    pub beta_lead: f64,
}

impl Default for TrackingConfig {
    fn default() -> Self {
        Self { q_diag: [8.0, 12.0, 6.0], r_diag: [1.0, 2.0], resolve_speed: 0.5, resolve_yaw_rate: 0.02, beta_weight: 20.0, beta_lead: 0.005 }
    }
}

/// LQR tracker with a gain cache keyed on the reference operating point.
#[derive(Debug, Clone)]
pub struct LqrTracker {
    config: TrackingConfig,
    cached: Option<(f64, f64, Mat)>,
    syntheses: usize,
}

impl LqrTracker {
    pub fn new(config: TrackingConfig) -> Self {
        Self { config, cached: None, syntheses: 0 }
    }

    pub fn config(&self) -> &TrackingConfig {
        &self.config
    }

    pub fn syntheses(&self) -> usize {
        self.syntheses
    }

    pub fn gain(&mut self, reference: &ReferencePoint) -> Result<&Mat, TrackingError> {
        let stale = match &self.cached {
            Some((v, w, _)) => {
                (reference.speed - v).abs() > self.config.resolve_speed
                    || (reference.yaw_rate - w).abs() > self.config.resolve_yaw_rate
            }
            None => true,
        };
        if stale {
            let q = Mat::from_diagonal(&nalgebra::DVector::from_column_slice(&self.config.q_diag));
            let r = Mat::from_diagonal(&nalgebra::DVector::from_column_slice(&self.config.r_diag));
            let k = lqr_gain(reference, &q, &r)?;
            self.cached = Some((reference.speed, reference.yaw_rate, k));
            self.syntheses += 1;
        }
        Ok(&self.cached.as_ref().expect("gain cached above").2)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::care_residual;
    use std::f64::consts::FRAC_PI_2;

    fn reference(v: f64, w: f64) -> ReferencePoint {
        ReferencePoint { speed: v, yaw_rate: w, ..Default::default() }
    }

    #[test]
    fn error_examples() {
        let s = VehicleState { x: 3.0, y: 4.0, psi: 0.2, ..Default::default() };
        let r = ReferencePoint { x: 3.0, y: 4.0, psi: 0.2, ..Default::default() };
        assert_eq!(compute_error(&s, &r), PoseError::default());

        let s = VehicleState { x: 1.0, psi: FRAC_PI_2, ..Default::default() };
        let r = ReferencePoint { psi: FRAC_PI_2, ..Default::default() };
        let e = compute_error(&s, &r);
        assert!(e.e_x.abs() < 1e-15 && (e.e_y + 1.0).abs() < 1e-15 && e.e_psi == 0.0);

        let s = VehicleState { x: 0.5, y: -0.2, psi: 0.0, ..Default::default() };
        let r = ReferencePoint { psi: -0.1, ..Default::default() };
        let e = compute_error(&s, &r);
        assert_eq!((e.e_x, e.e_y), (0.5, -0.2));
        assert!((e.e_psi - 0.1).abs() < 1e-15);
    }

    #[test]
    fn lqr_gain_residual_and_homogeneity() {
        let r = reference(16.67, 0.0);
        let q = Mat::identity(3, 3);
        let rr = Mat::identity(2, 2);
        let k = lqr_gain(&r, &q, &rr).unwrap();
        let (a, b) = error_model(&r);
        let p = solve_care(&a, &b, &q, &rr).unwrap();
        assert!(care_residual(&a, &b, &q, &rr, &p) <= 1e-8 * (1.0 + p.norm()));
        assert!((&k - b.transpose() * &p).norm() < 1e-12);

        let k2 = lqr_gain(&r, &(q * 2.0), &(rr * 2.0)).unwrap();
        assert!((&k - k2).norm() < 1e-8);
    }

    #[test]
    fn lqr_rejects_zero_reference() {
        assert_eq!(lqr_gain(&reference(0.0, 0.0), &Mat::identity(3, 3), &Mat::identity(2, 2)), Err(TrackingError::Uncontrollable));
    }

    #[test]
    fn desired_motion_examples() {
        let r = reference(16.67, 0.0);
        let k = Mat::from_row_slice(2, 3, &[1.0, 0.0, 0.0, 0.0, 0.5, 1.0]);
        assert_eq!(desired_motion(&PoseError::default(), &k, &r), (16.67, 0.0));
        let (v, _) = desired_motion(&PoseError { e_x: 0.1, ..Default::default() }, &k, &r);
        assert!((v - 16.57).abs() < 1e-12);
        let (_, w) = desired_motion(&PoseError { e_y: 0.2, e_psi: 0.05, ..Default::default() }, &k, &r);
        assert!((w + 0.15).abs() < 1e-12);
    }

    #[test]
    fn allocation_synthetic_quadratic() {
        let a = allocate_beta(|b| [(b - 0.1).powi(2), 0.0, 0.0, 0.0], 1.0);
        assert!((a.rate - 0.05).abs() < 1e-6);
        assert!(!a.saturated);
    }

    #[test]
    fn allocation_penalty_dominance() {
        let a = allocate_beta(|b| [(b - 0.1).powi(2), 0.0, 0.0, 0.0], 1e9);
        assert!(a.rate.abs() < 1e-6);
    }

    #[test]
    fn allocation_straight_driving_is_zero() {
        let params = VehicleParams::default();
        let s = VehicleState::straight(16.67, &params);
        let forces = crate::plant::tire_forces(&s, 0.0, &params).unwrap();
        let a = allocate_beta(|b| predicted_utilization(&s, &forces, &params, 0.0, b, 0.01), 20.0);
        assert!(a.rate.abs() < 1e-6, "rate {}", a.rate);
        assert!(a.utilization.iter().all(|p| (0.0..=1.0).contains(p)));
    }

    #[test]
    fn allocation_reports_saturation() {
        let a = allocate_beta(|b| [2.0 + b * b, 0.0, 0.0, 0.0], 1.0);
        assert!(a.saturated);
        assert!(a.rate.abs() < 1e-6);
    }

    #[test]
    fn phase_trajectory_examples() {
        let mut t = PhaseTrajectory::default();
        for _ in 0..3 {
            t = phase_trajectory(&t, 16.67, 0.1, 0.0, 0.01);
        }
        assert_eq!((t.vx_rate, t.yaw_accel), (0.0, 0.0));

        let prev = PhaseTrajectory { beta: 0.02, ..Default::default() };
        let t = phase_trajectory(&prev, 16.67, 0.0, 0.0, 0.01);
        assert!((t.vx - 16.67 * 0.02f64.cos()).abs() < 1e-12);
        // 60 km/h exactly
        let t = phase_trajectory(&prev, 60.0 / 3.6, 0.0, 0.0, 0.01);
        assert!((t.vx - 16.6634).abs() < 1e-4);

        let t = phase_trajectory(&PhaseTrajectory::default(), 16.67, 0.3, 0.05, 0.01);
        assert!((t.yaw_rate - 0.25).abs() < 1e-15);
    }

    #[test]
    fn beta_integration_is_reversible() {
        let prev = PhaseTrajectory { beta: 0.0371, ..Default::default() };
        let fwd = phase_trajectory(&prev, 16.0, 0.0, 0.123, 0.01);
        let back = phase_trajectory(&fwd, 16.0, 0.0, -0.123, 0.01);
        assert!((back.beta - prev.beta).abs() < 1e-17 + f64::EPSILON * prev.beta.abs());
    }

    #[test]
    fn gain_cache_resolves_on_threshold() {
        let mut tr = LqrTracker::new(TrackingConfig::default());
        tr.gain(&reference(16.67, 0.0)).unwrap();
        tr.gain(&reference(16.9, 0.01)).unwrap();
        assert_eq!(tr.syntheses(), 1);
        tr.gain(&reference(16.9, 0.05)).unwrap();
        assert_eq!(tr.syntheses(), 2);
    }
}
