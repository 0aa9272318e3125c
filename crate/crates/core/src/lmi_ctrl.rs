//! Robust longitudinal/yaw controller. The `(v_x, ω_z)` dynamics are
//! linearized about the desired trajectory, tire-stiffness uncertainty is
//! described by a four-corner polytope, and a guaranteed-cost gain is
//! synthesized from the robust LMI.

use nalgebra::DVector;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::numerics::{
    robust_block, solve_dare, solve_lmi, spectral_radius, max_sym_eigenvalue, Mat, NumericsError, SdpOutcome, SdpProblem,
};
use crate::plant::{dugoff_force, VehicleParams, VehicleState, LOW_SPEED};
use crate::tracking::PhaseTrajectory;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum LmiError {
    #[error("gain is stale for {0} controller periods")]
    Degraded(usize),
    #[error("no stabilizing gain: {0}")]
    NoGain(String),
    #[error(transparent)]
    Numerics(#[from] NumericsError),
}

/// Tire stiffness pair `(C_σ, C_α)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Stiffness {
    pub slip: f64,
    pub cornering: f64,
}

impl Stiffness {
    pub fn nominal(params: &VehicleParams) -> Self {
        Self { slip: params.slip_stiffness, cornering: params.cornering_stiffness }
    }

    pub fn apply(&self, params: &VehicleParams) -> VehicleParams {
        VehicleParams { slip_stiffness: self.slip, cornering_stiffness: self.cornering, ..*params }
    }

    /// Largest relative change of either component.
    pub fn relative_change(&self, other: &Stiffness) -> f64 {
        ((self.slip - other.slip) / other.slip).abs().max(((self.cornering - other.cornering) / other.cornering).abs())
    }
}

/// Box of admissible stiffnesses.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StiffnessRange {
    pub slip: (f64, f64),
    pub cornering: (f64, f64),
}

impl StiffnessRange {
    pub fn around(center: &Stiffness, fraction: f64) -> Self {
        Self {
            slip: (center.slip * (1.0 - fraction), center.slip * (1.0 + fraction)),
            cornering: (center.cornering * (1.0 - fraction), center.cornering * (1.0 + fraction)),
        }
    }

    /// Expands the box so that it contains `center`.
    pub fn containing(&self, center: &Stiffness) -> Self {
        Self {
            slip: (self.slip.0.min(center.slip), self.slip.1.max(center.slip)),
            cornering: (self.cornering.0.min(center.cornering), self.cornering.1.max(center.cornering)),
        }
    }

    pub fn corners(&self) -> [Stiffness; 4] {
        let (s, c) = (self.slip, self.cornering);
        [
            Stiffness { slip: s.0, cornering: c.0 },
            Stiffness { slip: s.1, cornering: c.0 },
            Stiffness { slip: s.0, cornering: c.1 },
            Stiffness { slip: s.1, cornering: c.1 },
        ]
    }

    pub fn contains(&self, other: &StiffnessRange) -> bool {
        self.slip.0 <= other.slip.0 && other.slip.1 <= self.slip.1 && self.cornering.0 <= other.cornering.0 && other.cornering.1 <= self.cornering.1
    }
}

/// Equal-slip longitudinal/yaw model: all wheels at slip `u[0]`, front
/// slip angle `u[1]`, rear slip angle from the state. Returns `(v̇_x, ω̇_z)`
/// and the smallest adhesion reserve over the tires.
pub fn yaw_plane_rates(params: &VehicleParams, theta: &Stiffness, x: &[f64; 2], u: &[f64; 2], lateral_speed: f64) -> ([f64; 2], f64) {
    let p = theta.apply(params);
    let fz = p.static_load();
    let vx = if x[0].abs() > LOW_SPEED { x[0] } else { LOW_SPEED.copysign(x[0]) };
    let alpha_r = (lateral_speed - p.rear_axle * x[1]) / vx;
    let sigma = u[0].max(-0.999);
    let front = dugoff_force(sigma, u[1], fz, &p).expect("slip clamped above -1, static load positive");
    let rear = dugoff_force(sigma, alpha_r, fz, &p).expect("slip clamped above -1, static load positive");
    let dvx = 2.0 * (front.fx + rear.fx) / p.mass + lateral_speed * x[1];
    let dwz = (2.0 * p.front_axle * -front.fy - 2.0 * p.rear_axle * -rear.fy) / p.yaw_inertia;
    ([dvx, dwz], front.lambda.min(rear.lambda))
}

#[derive(Debug, Clone, PartialEq)]
pub struct Linearization {
    pub a: Mat,
    pub b: Mat,
    /// Set when the reference point lies past the tire adhesion limit.
    pub saturated: bool,
}

/// Discrete linearization `A = I + T·∂f/∂x`, `B = T·∂f/∂u` by central
/// differences with relative step 1e-6.
pub fn linearize<F>(f: F, x: &[f64; 2], u: &[f64; 2], period: f64) -> (Mat, Mat)
where
    F: Fn(&[f64; 2], &[f64; 2]) -> [f64; 2],
{
    let step = |v: f64| 1e-6 * v.abs().max(1.0);
    let mut a = Mat::identity(2, 2);
    let mut b = Mat::zeros(2, 2);
    for j in 0..2 {
        let h = step(x[j]);
        let (mut xp, mut xm) = (*x, *x);
        xp[j] += h;
        xm[j] -= h;
        let (fp, fm) = (f(&xp, u), f(&xm, u));
        for i in 0..2 {
            a[(i, j)] += period * (fp[i] - fm[i]) / (2.0 * h);
        }
        let h = step(u[j]);
        let (mut up, mut um) = (*u, *u);
        up[j] += h;
        um[j] -= h;
        let (fp, fm) = (f(x, &up), f(x, &um));
        for i in 0..2 {
            b[(i, j)] = period * (fp[i] - fm[i]) / (2.0 * h);
        }
    }
    (a, b)
}

/// Operating point shared by the linearization and the polytope.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OperatingPoint {
    pub x: [f64; 2],
    pub u: [f64; 2],
    pub lateral_speed: f64,
}

pub fn linearize_at(params: &VehicleParams, theta: &Stiffness, op: &OperatingPoint, period: f64) -> Linearization {
    let (a, b) = linearize(|x, u| yaw_plane_rates(params, theta, x, u, op.lateral_speed).0, &op.x, &op.u, period);
    let (_, lambda) = yaw_plane_rates(params, theta, &op.x, &op.u, op.lateral_speed);
    Linearization { a, b, saturated: lambda < 1.0 }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PolytopicModel {
    pub a_hat: Mat,
    pub b_hat: Mat,
    /// Error matrices `(A_el, B_el)` at the four stiffness corners.
    pub vertices: Vec<(Mat, Mat)>,
    pub theta_hat: Stiffness,
    pub range: StiffnessRange,
}

impl PolytopicModel {
    /// Vertex systems `(Â + A_el, B̂ + B_el)`.
    pub fn vertex_systems(&self) -> Vec<(Mat, Mat)> {
        self.vertices.iter().map(|(ae, be)| (&self.a_hat + ae, &self.b_hat + be)).collect()
    }

    /// Elementwise check that the nominal system lies within the vertex hull.
    pub fn nominal_in_hull(&self) -> bool {
        let check = |nom: &Mat, pick: &dyn Fn(&(Mat, Mat)) -> Mat| {
            let verts: Vec<Mat> = self.vertices.iter().map(pick).collect();
            nom.iter().enumerate().all(|(idx, v)| {
                let vals = verts.iter().map(|m| v + m[idx]);
                let (lo, hi) = vals.fold((f64::INFINITY, f64::NEG_INFINITY), |(l, h), x| (l.min(x), h.max(x)));
                lo - 1e-12 * v.abs().max(1.0) <= *v && *v <= hi + 1e-12 * v.abs().max(1.0)
            })
        };
        check(&self.a_hat, &|v| v.0.clone()) && check(&self.b_hat, &|v| v.1.clone())
    }
}

pub fn build_polytope(
    params: &VehicleParams,
    theta_hat: &Stiffness,
    range: &StiffnessRange,
    op: &OperatingPoint,
    period: f64,
) -> Result<PolytopicModel, LmiError> {
    if range.slip.0 > range.slip.1 || range.cornering.0 > range.cornering.1 {
        return Err(LmiError::NoGain("stiffness range has lo > hi".into()));
    }
    let range = range.containing(theta_hat);
    let nominal = linearize_at(params, theta_hat, op, period);
    let vertices = range
        .corners()
        .iter()
        .map(|corner| {
            let lin = linearize_at(params, corner, op, period);
            (&lin.a - &nominal.a, &lin.b - &nominal.b)
        })
        .collect();
    Ok(PolytopicModel { a_hat: nominal.a, b_hat: nominal.b, vertices, theta_hat: *theta_hat, range })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum GainSource {
    Lmi,
    /// Discrete LQR on the vertex-averaged system.
    AveragedLqr,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LmiGain {
    pub k: Mat,
    pub p: Mat,
    pub y: Mat,
    pub eps: f64,
    pub synthesized_at: usize,
    pub source: GainSource,
    pub guaranteed_cost: Option<f64>,
}

fn diag(values: &[f64]) -> Mat {
    Mat::from_diagonal(&DVector::from_column_slice(values))
}

/// Max spectral radius of the closed loops `A_v + B_v K` over the vertices.
pub fn vertex_spectral_radius(model: &PolytopicModel, k: &Mat) -> f64 {
    model.vertex_systems().iter().map(|(a, b)| spectral_radius(&(a + b * k))).fold(0.0, f64::max)
}

/// Robust gain from the LMI; `Ok(None)` when the LMI is infeasible or the
/// result fails the vertex check.
pub fn synthesize(
    model: &PolytopicModel,
    q: &Mat,
    r: &Mat,
    cost_state: Option<&[f64]>,
    tick: usize,
) -> Result<Option<LmiGain>, LmiError> {
    let mut problem = SdpProblem::robust(&model.a_hat, &model.b_hat, &model.vertices, q, r);
    problem.cost_state = cost_state.map(|c| c.to_vec());
    match solve_lmi(&problem)? {
        SdpOutcome::Feasible(sol) => {
            let block = robust_block(&problem, &sol.p, &sol.y, sol.eps);
            if max_sym_eigenvalue(&block) > -problem.tol {
                return Ok(None);
            }
            let k = sol.gain();
            if !(vertex_spectral_radius(model, &k) < 1.0) {
                return Ok(None);
            }
            Ok(Some(LmiGain {
                k,
                p: sol.p,
                y: sol.y,
                eps: sol.eps,
                synthesized_at: tick,
                source: GainSource::Lmi,
                guaranteed_cost: sol.cost,
            }))
        }
        SdpOutcome::Infeasible { .. } => Ok(None),
    }
}

/// Discrete LQR (`u = Kx`) on the average of the vertex systems.
pub fn averaged_lqr(model: &PolytopicModel, q: &Mat, r: &Mat, tick: usize) -> Result<LmiGain, LmiError> {
    let systems = model.vertex_systems();
    let count = systems.len() as f64;
    let a = systems.iter().fold(Mat::zeros(2, 2), |acc, (a, _)| acc + a) / count;
    let b = systems.iter().fold(Mat::zeros(2, 2), |acc, (_, b)| acc + b) / count;
    let p = solve_dare(&a, &b, q, r)?;
    let k = -(r + b.transpose() * &p * &b)
        .try_inverse()
        .ok_or_else(|| LmiError::NoGain("singular LQR gain".into()))?
        * b.transpose()
        * &p
        * &a;
    Ok(LmiGain { k, p, y: Mat::zeros(2, 2), eps: 0.0, synthesized_at: tick, source: GainSource::AveragedLqr, guaranteed_cost: None })
}

pub const SLIP_LIMIT: f64 = 0.15;
pub const SLIP_ANGLE_LIMIT: f64 = 0.12;

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct Command {
    pub sigma: f64,
    pub alpha: f64,
    pub saturated: bool,
}

/// `u = K(x − x_ref) + u_ref` with actuator clamps.
pub fn control(gain: &LmiGain, staleness: usize, max_staleness: usize, x: &[f64; 2], x_ref: &[f64; 2], u_ref: &[f64; 2]) -> Result<Command, LmiError> {
    if staleness > max_staleness {
        return Err(LmiError::Degraded(staleness));
    }
    let e = [x[0] - x_ref[0], x[1] - x_ref[1]];
    let raw = [
        u_ref[0] + gain.k[(0, 0)] * e[0] + gain.k[(0, 1)] * e[1],
        u_ref[1] + gain.k[(1, 0)] * e[0] + gain.k[(1, 1)] * e[1],
    ];
    let sigma = raw[0].clamp(-SLIP_LIMIT, SLIP_LIMIT);
    let alpha = raw[1].clamp(-SLIP_ANGLE_LIMIT, SLIP_ANGLE_LIMIT);
    Ok(Command { sigma, alpha, saturated: sigma != raw[0] || alpha != raw[1] })
}

/// Steering angle that realizes front slip angle `alpha_des`; holds
/// `previous` below the low-speed guard.
pub fn steering_command(state: &VehicleState, alpha_des: f64, params: &VehicleParams, previous: f64) -> f64 {
    if state.vx.abs() <= LOW_SPEED {
        return previous;
    }
    (state.vy + state.yaw_rate * params.front_axle) / state.vx - alpha_des
}

/// Reference input solving `f(x_ref, u) = ẋ_ref` by damped Newton, warm
/// started from `guess`.
pub fn reference_input(params: &VehicleParams, theta: &Stiffness, x_ref: &[f64; 2], rates: &[f64; 2], lateral_speed: f64, guess: &[f64; 2]) -> [f64; 2] {
    let f = |u: &[f64; 2]| yaw_plane_rates(params, theta, x_ref, u, lateral_speed).0;
    let limits = [SLIP_LIMIT, SLIP_ANGLE_LIMIT];
    let mut u = [guess[0].clamp(-limits[0], limits[0]), guess[1].clamp(-limits[1], limits[1])];
    for _ in 0..20 {
        let fu = f(&u);
        let r = [fu[0] - rates[0], fu[1] - rates[1]];
        if r[0].abs() < 1e-9 && r[1].abs() < 1e-9 {
            break;
        }
        let (_, b) = linearize(|_, uu| f(uu), x_ref, &u, 1.0);
        let Some(inv) = b.try_inverse() else { break };
        let du = [-(inv[(0, 0)] * r[0] + inv[(0, 1)] * r[1]), -(inv[(1, 0)] * r[0] + inv[(1, 1)] * r[1])];
        let mut next = u;
        for i in 0..2 {
            next[i] = (u[i] + du[i]).clamp(-limits[i], limits[i]);
        }
        if next == u {
            break;
        }
        u = next;
    }
    u
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LmiConfig {
    pub q_diag: [f64; 2],
    pub r_diag: [f64; 2],
    /// Controller periods between routine re-syntheses.
    pub cadence: usize,
    /// Relative stiffness change that forces a re-synthesis.
    pub stiffness_change: f64,
    pub max_staleness: usize,
    /// Reference error for the guaranteed-cost objective.
    pub cost_state: [f64; 2],
}

impl Default for LmiConfig {
    fn default() -> Self {
        Self {
            q_diag: [4.0, 10.0],
            r_diag: [2.0, 2.0],
            cadence: 50,
            stiffness_change: 0.1,
            max_staleness: 5,
            cost_state: [0.5, 0.05],
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct LmiFlags {
    pub synthesized: bool,
    pub infeasible: bool,
    pub stale: bool,
    pub conservative: bool,
    pub degraded: bool,
    pub saturated: bool,
    pub linearization_invalid: bool,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LmiOutput {
    pub sigma: f64,
    pub alpha: f64,
    pub u_ref: [f64; 2],
    pub flags: LmiFlags,
}

/// Stateful robust controller: gain cache, synthesis cadence and fallbacks.
#[derive(Debug, Clone)]
pub struct LmiController {
    config: LmiConfig,
    params: VehicleParams,
    gain: Option<LmiGain>,
    staleness: usize,
    synthesized_theta: Option<Stiffness>,
    u_ref: [f64; 2],
}

impl LmiController {
    pub fn new(config: LmiConfig, params: VehicleParams) -> Self {
        Self { config, params, gain: None, staleness: 0, synthesized_theta: None, u_ref: [0.0; 2] }
    }

    pub fn gain(&self) -> Option<&LmiGain> {
        self.gain.as_ref()
    }

    pub fn step(
        &mut self,
        tick: usize,
        state: &VehicleState,
        traj: &PhaseTrajectory,
        theta_hat: &Stiffness,
        range: &StiffnessRange,
        period: f64,
    ) -> Result<LmiOutput, LmiError> {
        let mut flags = LmiFlags::default();
        let x = [state.vx, state.yaw_rate];
        let x_ref = [traj.vx, traj.yaw_rate];
        let u_ref = reference_input(&self.params, theta_hat, &x_ref, &[traj.vx_rate, traj.yaw_accel], state.vy, &self.u_ref);
        self.u_ref = u_ref;

        let due = match (&self.gain, &self.synthesized_theta) {
            (Some(g), Some(th)) => {
                self.staleness > 0
                    || g.source != GainSource::Lmi
                    || tick >= g.synthesized_at + self.config.cadence
                    || theta_hat.relative_change(th) > self.config.stiffness_change
            }
            _ => true,
        };
        if due {
            let op = OperatingPoint { x: x_ref, u: u_ref, lateral_speed: state.vy };
            let model = build_polytope(&self.params, theta_hat, range, &op, period)?;
            flags.linearization_invalid = linearize_at(&self.params, theta_hat, &op, period).saturated;
            let q = diag(&self.config.q_diag);
            let r = diag(&self.config.r_diag);
            match synthesize(&model, &q, &r, Some(&self.config.cost_state), tick)? {
                Some(g) => {
                    self.gain = Some(g);
                    self.staleness = 0;
                    self.synthesized_theta = Some(*theta_hat);
                    flags.synthesized = true;
                }
                None => {
                    flags.infeasible = true;
                    if self.gain.as_ref().is_some_and(|g| g.source == GainSource::Lmi) {
                        self.staleness += 1;
                        flags.stale = true;
                    } else {
                        self.gain = Some(averaged_lqr(&model, &q, &r, tick)?);
                        self.synthesized_theta = Some(*theta_hat);
                        flags.conservative = true;
                    }
                }
            }
        }

        let gain = self.gain.as_ref().expect("a gain is always installed above");
        let source = gain.source;
        let cmd = match control(gain, self.staleness, self.config.max_staleness, &x, &x_ref, &u_ref) {
            Ok(c) => c,
            Err(LmiError::Degraded(_)) => {
                flags.degraded = true;
                let op = OperatingPoint { x: x_ref, u: u_ref, lateral_speed: state.vy };
                let model = build_polytope(&self.params, theta_hat, range, &op, period)?;
                let fallback = averaged_lqr(&model, &diag(&self.config.q_diag), &diag(&self.config.r_diag), tick)?;
                let c = control(&fallback, 0, self.config.max_staleness, &x, &x_ref, &u_ref)?;
                self.gain = Some(fallback);
                self.staleness = 0;
                flags.conservative = true;
                c
            }
            Err(e) => return Err(e),
        };
        if source == GainSource::AveragedLqr {
            flags.conservative = true;
        }
        flags.saturated = cmd.saturated;
        Ok(LmiOutput { sigma: cmd.sigma, alpha: cmd.alpha, u_ref, flags })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn params() -> VehicleParams {
        VehicleParams::default()
    }

    fn op() -> OperatingPoint {
        OperatingPoint { x: [16.67, 0.0], u: [0.0, 0.0], lateral_speed: 0.0 }
    }

    #[test]
    fn linearize_exact_on_linear_map() {
        let (a, b) = linearize(|x, u| [2.0 * x[0] - x[1] + 3.0 * u[0], 0.5 * x[1] + u[0] - 4.0 * u[1]], &[1.0, 2.0], &[0.1, -0.2], 0.01);
        let a_true = Mat::from_row_slice(2, 2, &[1.02, -0.01, 0.0, 1.005]);
        let b_true = Mat::from_row_slice(2, 2, &[0.03, 0.0, 0.01, -0.04]);
        assert!((a - a_true).amax() < 1e-9);
        assert!((b - b_true).amax() < 1e-9);
    }

    #[test]
    fn zero_dynamics_gives_identity() {
        let (a, _) = linearize(|_, _| [0.0, 0.0], &[16.0, 0.1], &[0.0, 0.0], 0.01);
        assert_eq!(a, Mat::identity(2, 2));
    }

    #[test]
    fn small_slip_input_matrix_matches_tire_slopes() {
        let p = params();
        let lin = linearize_at(&p, &Stiffness::nominal(&p), &op(), 0.01);
        // d(4·Cσ·σ/(1+σ))/dσ at 0 = 4·Cσ; d(−2a·Cα·tan α)/dα at 0 = −2a·Cα
        let b_sigma = 0.01 * 4.0 * p.slip_stiffness / p.mass;
        let b_alpha = -0.01 * 2.0 * p.front_axle * p.cornering_stiffness / p.yaw_inertia;
        assert!((lin.b[(0, 0)] / b_sigma - 1.0).abs() < 1e-6);
        assert!((lin.b[(1, 1)] / b_alpha - 1.0).abs() < 1e-6);
        assert!(lin.b[(0, 1)].abs() < 1e-6 && lin.b[(1, 0)].abs() < 1e-6);
        assert!(!lin.saturated);
    }

    #[test]
    fn degenerate_range_has_zero_vertices() {
        let p = params();
        let th = Stiffness::nominal(&p);
        let range = StiffnessRange::around(&th, 0.0);
        let model = build_polytope(&p, &th, &range, &op(), 0.01).unwrap();
        assert_eq!(model.vertices.len(), 4);
        for (a, b) in &model.vertices {
            assert_eq!(a.amax(), 0.0);
            assert_eq!(b.amax(), 0.0);
        }
    }

    #[test]
    fn single_axis_range_duplicates_vertices() {
        let p = params();
        let th = Stiffness::nominal(&p);
        let range = StiffnessRange { slip: (th.slip, th.slip), cornering: (0.8 * th.cornering, 1.2 * th.cornering) };
        let model = build_polytope(&p, &th, &range, &op(), 0.01).unwrap();
        let v = &model.vertices;
        assert_eq!(v[0], v[1]);
        assert_eq!(v[2], v[3]);
        assert_ne!(v[0], v[2]);
    }

    #[test]
    fn nominal_lies_in_hull() {
        let p = params();
        let th = Stiffness::nominal(&p);
        let op = OperatingPoint { x: [16.67, 0.2], u: [0.02, 0.01], lateral_speed: 0.1 };
        let model = build_polytope(&p, &th, &StiffnessRange::around(&th, 0.2), &op, 0.01).unwrap();
        assert!(model.nominal_in_hull());
    }

    #[test]
    fn twenty_percent_polytope_is_robustly_stabilized() {
        let p = params();
        let th = Stiffness::nominal(&p);
        let model = build_polytope(&p, &th, &StiffnessRange::around(&th, 0.2), &op(), 0.01).unwrap();
        let gain = synthesize(&model, &diag(&[4.0, 10.0]), &diag(&[2.0, 2.0]), None, 0).unwrap().expect("feasible");
        assert!(vertex_spectral_radius(&model, &gain.k) < 1.0);
    }

    #[test]
    fn zero_uncertainty_stabilizes_nominal() {
        let p = params();
        let th = Stiffness::nominal(&p);
        let model = build_polytope(&p, &th, &StiffnessRange::around(&th, 0.0), &op(), 0.01).unwrap();
        let gain = synthesize(&model, &Mat::identity(2, 2), &Mat::identity(2, 2), None, 0).unwrap().expect("feasible");
        assert!(spectral_radius(&(&model.a_hat + &model.b_hat * &gain.k)) < 1.0);
    }

    #[test]
    fn uncontrollable_nominal_is_infeasible() {
        let model = PolytopicModel {
            a_hat: Mat::identity(2, 2) * 1.05,
            b_hat: Mat::zeros(2, 2),
            vertices: vec![(Mat::zeros(2, 2), Mat::zeros(2, 2)); 4],
            theta_hat: Stiffness::nominal(&params()),
            range: StiffnessRange::around(&Stiffness::nominal(&params()), 0.0),
        };
        assert!(synthesize(&model, &Mat::identity(2, 2), &Mat::identity(2, 2), None, 0).unwrap().is_none());
    }

    #[test]
    fn control_examples() {
        let gain = LmiGain {
            k: Mat::identity(2, 2) * 0.01,
            p: Mat::identity(2, 2),
            y: Mat::zeros(2, 2),
            eps: 1.0,
            synthesized_at: 0,
            source: GainSource::Lmi,
            guaranteed_cost: None,
        };
        let u_ref = [0.01, -0.02];
        let c = control(&gain, 0, 5, &[16.0, 0.1], &[16.0, 0.1], &u_ref).unwrap();
        assert_eq!((c.sigma, c.alpha), (0.01, -0.02));
        let c = control(&gain, 0, 5, &[16.5, 0.12], &[16.0, 0.1], &[0.0, 0.0]).unwrap();
        assert!((c.sigma - 0.005).abs() < 1e-15 && (c.alpha - 0.0002).abs() < 1e-15);
        let c = control(&gain, 0, 5, &[16.0, 0.0], &[16.0, 0.0], &[0.2, 0.0]).unwrap();
        assert_eq!(c.sigma, 0.15);
        assert!(c.saturated);
        assert_eq!(control(&gain, 6, 5, &[0.0; 2], &[0.0; 2], &[0.0; 2]), Err(LmiError::Degraded(6)));
    }

    #[test]
    fn steering_examples() {
        let p = params();
        let mut s = VehicleState::straight(16.67, &p);
        assert_eq!(steering_command(&s, 0.0, &p, 0.3), 0.0);
        s.vy = 0.2;
        s.yaw_rate = 0.1;
        let d = steering_command(&s, 0.01, &p, 0.0);
        assert!((d - ((0.2 + 0.1402) / 16.67 - 0.01)).abs() < 1e-15);
        assert!((d - 0.010409).abs() < 2e-6);
        let d2 = steering_command(&s, 0.01 + 0.003, &p, 0.0);
        assert!((d - d2 - 0.003).abs() < 1e-15);
        s.vx = 0.2;
        assert_eq!(steering_command(&s, 0.01, &p, 0.07), 0.07);
    }

    #[test]
    fn reference_input_inverts_model() {
        let p = params();
        let th = Stiffness::nominal(&p);
        let x = [16.67, 0.3];
        let rates = [0.4, 0.5];
        let u = reference_input(&p, &th, &x, &rates, 0.05, &[0.0, 0.0]);
        let f = yaw_plane_rates(&p, &th, &x, &u, 0.05).0;
        assert!((f[0] - rates[0]).abs() < 1e-8 && (f[1] - rates[1]).abs() < 1e-8);
    }

    #[test]
    fn unreachable_rates_stay_within_limits() {
        let p = params();
        let th = Stiffness::nominal(&p);
        // front force needed here exceeds μ·F_z
        let u = reference_input(&p, &th, &[16.67, 0.3], &[0.4, 1.5], 0.05, &[0.0, 0.0]);
        assert!(u[0].abs() <= SLIP_LIMIT && u[1].abs() <= SLIP_ANGLE_LIMIT);
        assert!(u.iter().all(|v| v.is_finite()));
    }

    #[test]
    fn controller_falls_back_without_feasible_lmi() {
        let p = params();
        let th = Stiffness::nominal(&p);
        let mut ctrl = LmiController::new(LmiConfig::default(), p);
        let s = VehicleState::straight(16.67, &p);
        let traj = PhaseTrajectory { vx: 16.67, primed: true, ..Default::default() };
        let out = ctrl.step(0, &s, &traj, &th, &StiffnessRange::around(&th, 0.2), 0.01).unwrap();
        assert!(out.flags.synthesized);
        assert_eq!(ctrl.gain().unwrap().source, GainSource::Lmi);
        assert_eq!((out.sigma, out.alpha), (0.0, 0.0));
    }
}
