//! Seven-degree-of-freedom vehicle model: planar chassis, four spinning
//! wheels and Dugoff tires under static, evenly distributed vertical load.

mod tire;

pub use tire::{dugoff_force, side_slip_angles, slip_ratio, TireForce};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::numerics::{integrate_rk4, NumericsError};

/// Below this longitudinal speed slip quantities are frozen at zero.
pub const LOW_SPEED: f64 = 0.5;
pub const STEER_LIMIT: f64 = 0.6;
pub const TORQUE_LIMIT: f64 = 1500.0;
/// Rolling-resistance sign is smoothed over this wheel-speed band (rad/s).
const ROLLING_SIGN_BAND: f64 = 0.5;
/// Lower clamp on slip so that `1 + σ` stays positive.
const MIN_SLIP: f64 = -0.999;

pub const FL: usize = 0;
pub const FR: usize = 1;
pub const RL: usize = 2;
pub const RR: usize = 3;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum PlantError {
    #[error("longitudinal speed {vx} m/s is below the low-speed guard")]
    LowSpeed { vx: f64 },
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("invalid vehicle parameters: {0}")]
    InvalidParams(String),
    #[error(transparent)]
    Integration(#[from] NumericsError),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct VehicleParams {
    pub mass: f64,
    pub yaw_inertia: f64,
    /// CoM to front axle.
    pub front_axle: f64,
    /// CoM to rear axle.
    pub rear_axle: f64,
    pub half_track: f64,
    pub wheel_radius: f64,
    pub wheel_inertia: f64,
    pub wheel_damping: f64,
    /// Longitudinal slip stiffness per tire (N per unit slip).
    pub slip_stiffness: f64,
    /// Cornering stiffness per tire (N/rad).
    pub cornering_stiffness: f64,
    pub friction: f64,
    pub cg_height: f64,
    pub rolling_resistance: f64,
    pub gravity: f64,
}

impl Default for VehicleParams {
    fn default() -> Self {
        Self {
            mass: 1653.0,
            yaw_inertia: 3234.0,
            front_axle: 1.402,
            rear_axle: 1.646,
            half_track: 0.8,
            wheel_radius: 0.3,
            wheel_inertia: 1.2,
            wheel_damping: 0.05,
            slip_stiffness: 63292.5,
            cornering_stiffness: 64934.5,
            friction: 0.85,
            cg_height: 0.57,
            rolling_resistance: 0.012,
            gravity: 9.81,
        }
    }
}

impl VehicleParams {
    pub fn validate(&self) -> Result<(), PlantError> {
        let positive = [
            ("mass", self.mass),
            ("yaw_inertia", self.yaw_inertia),
            ("front_axle", self.front_axle),
            ("rear_axle", self.rear_axle),
            ("half_track", self.half_track),
            ("wheel_radius", self.wheel_radius),
            ("wheel_inertia", self.wheel_inertia),
            ("wheel_damping", self.wheel_damping),
            ("slip_stiffness", self.slip_stiffness),
            ("cornering_stiffness", self.cornering_stiffness),
            ("cg_height", self.cg_height),
            ("gravity", self.gravity),
        ];
        for (name, v) in positive {
            if !(v > 0.0 && v.is_finite()) {
                return Err(PlantError::InvalidParams(format!("{name} must be positive, got {v}")));
            }
        }
        if !(self.friction > 0.0 && self.friction <= 1.2) {
            return Err(PlantError::InvalidParams(format!("friction must lie in (0, 1.2], got {}", self.friction)));
        }
        if !(self.rolling_resistance >= 0.0) {
            return Err(PlantError::InvalidParams("rolling_resistance must be non-negative".into()));
        }
        Ok(())
    }

    /// Per-wheel vertical load `m·g/4`.
    pub fn static_load(&self) -> f64 {
        self.mass * self.gravity / 4.0
    }

    pub fn wheelbase(&self) -> f64 {
        self.front_axle + self.rear_axle
    }

    /// Lateral offset of each wheel in the body frame (left positive).
    fn wheel_offset(&self, wheel: usize) -> f64 {
        if wheel == FL || wheel == RL { self.half_track } else { -self.half_track }
    }

    fn axle_offset(&self, wheel: usize) -> f64 {
        if wheel == FL || wheel == FR { self.front_axle } else { -self.rear_axle }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct VehicleState {
    pub x: f64,
    pub y: f64,
    /// Course angle: direction of the CoM velocity in the global frame.
    pub psi: f64,
    pub vx: f64,
    pub vy: f64,
    pub yaw_rate: f64,
    /// Wheel speeds ordered FL, FR, RL, RR.
    pub wheel: [f64; 4],
}

impl VehicleState {
    /// Straight running at speed `v` with free-rolling wheels.
    pub fn straight(v: f64, params: &VehicleParams) -> Self {
        Self { vx: v, wheel: [v / params.wheel_radius; 4], ..Default::default() }
    }

    pub fn beta(&self) -> f64 {
        if self.vx == 0.0 && self.vy == 0.0 { 0.0 } else { self.vy.atan2(self.vx) }
    }

    pub fn speed(&self) -> f64 {
        self.vx.hypot(self.vy)
    }

    fn to_array(self) -> [f64; 10] {
        let w = self.wheel;
        [self.x, self.y, self.psi, self.vx, self.vy, self.yaw_rate, w[0], w[1], w[2], w[3]]
    }

    fn from_array(a: &[f64; 10]) -> Self {
        Self {
            x: a[0],
            y: a[1],
            psi: a[2],
            vx: a[3],
            vy: a[4],
            yaw_rate: a[5],
            wheel: [a[6], a[7], a[8], a[9]],
        }
    }

    /// Mirror image about the global x axis.
    pub fn mirrored(&self) -> Self {
        let w = self.wheel;
        Self { y: -self.y, psi: -self.psi, vy: -self.vy, yaw_rate: -self.yaw_rate, wheel: [w[FR], w[FL], w[RR], w[RL]], ..*self }
    }

    pub fn kinetic_energy(&self, params: &VehicleParams) -> f64 {
        0.5 * params.mass * (self.vx * self.vx + self.vy * self.vy)
            + 0.5 * params.yaw_inertia * self.yaw_rate * self.yaw_rate
            + 0.5 * params.wheel_inertia * self.wheel.iter().map(|w| w * w).sum::<f64>()
    }
}

/// Actuator commands and external disturbances applied over one plant step.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct PlantInput {
    pub delta: f64,
    /// Drive torques ordered FL, FR, RL, RR.
    pub torque: [f64; 4],
    pub force_x: f64,
    pub force_y: f64,
    pub yaw_moment: f64,
    /// Extra friction moment on every wheel, added to rolling resistance.
    pub friction_torque: f64,
}

impl PlantInput {
    /// Applies the steering and torque actuator limits.
    pub fn clamped(&self) -> Self {
        let mut out = *self;
        out.delta = self.delta.clamp(-STEER_LIMIT, STEER_LIMIT);
        for t in &mut out.torque {
            *t = t.clamp(-TORQUE_LIMIT, TORQUE_LIMIT);
        }
        out
    }

    pub fn mirrored(&self) -> Self {
        let t = self.torque;
        Self {
            delta: -self.delta,
            torque: [t[FR], t[FL], t[RR], t[RL]],
            force_y: -self.force_y,
            yaw_moment: -self.yaw_moment,
            ..*self
        }
    }
}

/// Per-wheel tire quantities in the tire frame.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct WheelForce {
    pub fx: f64,
    pub fy: f64,
    pub fz: f64,
    pub sigma: f64,
    pub alpha: f64,
    pub lambda: f64,
}

impl WheelForce {
    /// `(F_x² + F_y²)/(μF_z)²`.
    pub fn utilization(&self, friction: f64) -> f64 {
        (self.fx * self.fx + self.fy * self.fy) / (friction * self.fz).powi(2)
    }
}

pub type TireForces = [WheelForce; 4];

/// Longitudinal ground speed of each wheel along its own heading.
pub fn wheel_ground_speeds(state: &VehicleState, delta: f64, params: &VehicleParams) -> [f64; 4] {
    let (s, c) = delta.sin_cos();
    let mut out = [0.0; 4];
    for (i, v) in out.iter_mut().enumerate() {
        let along = state.vx - params.wheel_offset(i) * state.yaw_rate;
        *v = if i == FL || i == FR {
            let across = state.vy + params.front_axle * state.yaw_rate;
            along * c + across * s
        } else {
            along
        };
    }
    out
}

/// Evaluates slip quantities and Dugoff forces for every tire.
pub fn tire_forces(state: &VehicleState, delta: f64, params: &VehicleParams) -> Result<TireForces, PlantError> {
    let fz = params.static_load();
    let (alpha_f, alpha_r) = side_slip_angles(state, delta, params).unwrap_or((0.0, 0.0));
    let ground = wheel_ground_speeds(state, delta, params);
    let moving = state.vx.abs() > LOW_SPEED;
    let mut out = [WheelForce::default(); 4];
    for i in 0..4 {
        let (sigma, alpha) = if moving {
            let sigma = slip_ratio(state.wheel[i], ground[i], params.wheel_radius).max(MIN_SLIP);
            (sigma, if params.axle_offset(i) > 0.0 { alpha_f } else { alpha_r })
        } else {
            (0.0, 0.0)
        };
        let f = dugoff_force(sigma, alpha, fz, params)?;
        // the Dugoff lateral force is reported along +tan α; the tire pushes back against the slip
        out[i] = WheelForce { fx: f.fx, fy: -f.fy, fz, sigma, alpha, lambda: f.lambda };
    }
    Ok(out)
}

/// Tire forces rotated into the body frame (front wheels by the steering angle).
pub fn body_forces(forces: &TireForces, delta: f64) -> [(f64, f64); 4] {
    let (s, c) = delta.sin_cos();
    let mut out = [(0.0, 0.0); 4];
    for (i, f) in forces.iter().enumerate() {
        out[i] = if i == FL || i == FR { (f.fx * c - f.fy * s, f.fx * s + f.fy * c) } else { (f.fx, f.fy) };
    }
    out
}

/// `(v̇_x, v̇_y, ω̇_z)` from the body-frame force balance.
pub fn chassis_derivatives(
    state: &VehicleState,
    forces: &TireForces,
    input: &PlantInput,
    params: &VehicleParams,
) -> [f64; 3] {
    let b = body_forces(forces, input.delta);
    let fx = (b[FL].0 + b[FR].0) + (b[RL].0 + b[RR].0) + input.force_x;
    let fy = (b[FL].1 + b[FR].1) + (b[RL].1 + b[RR].1) + input.force_y;
    let right = b[FR].0 + b[RR].0;
    let left = b[FL].0 + b[RL].0;
    let mz = params.half_track * (right - left) + params.front_axle * (b[FR].1 + b[FL].1)
        - params.rear_axle * (b[RR].1 + b[RL].1)
        + input.yaw_moment;
    [
        fx / params.mass + state.vy * state.yaw_rate,
        fy / params.mass - state.vx * state.yaw_rate,
        mz / params.yaw_inertia,
    ]
}

/// Wheel spin acceleration from drive torque, tire force, friction moment and damping.
pub fn wheel_derivative(w: f64, torque: f64, fx: f64, friction_torque: f64, params: &VehicleParams) -> f64 {
    (torque + friction_torque - params.wheel_radius * fx - params.wheel_damping * w) / params.wheel_inertia
}

/// Ground-truth rolling-resistance moment, opposing wheel rotation.
pub fn rolling_resistance(w: f64, params: &VehicleParams) -> f64 {
    let sign = (w / ROLLING_SIGN_BAND).clamp(-1.0, 1.0);
    -params.rolling_resistance * sign * params.static_load() * params.wheel_radius
}

/// Full state derivative together with the tire forces it was built from.
pub fn derivatives(
    state: &VehicleState,
    input: &PlantInput,
    params: &VehicleParams,
) -> Result<([f64; 10], TireForces), PlantError> {
    let forces = tire_forces(state, input.delta, params)?;
    let [dvx, dvy, dwz] = chassis_derivatives(state, &forces, input, params);
    let v2 = state.vx * state.vx + state.vy * state.vy;
    let beta_rate = if v2 > 1e-12 { (state.vx * dvy - state.vy * dvx) / v2 } else { 0.0 };
    let speed = v2.sqrt();
    let mut d = [0.0; 10];
    d[0] = speed * state.psi.cos();
    d[1] = speed * state.psi.sin();
    d[2] = state.yaw_rate + beta_rate;
    d[3] = dvx;
    d[4] = dvy;
    d[5] = dwz;
    for i in 0..4 {
        let tf = rolling_resistance(state.wheel[i], params) + input.friction_torque;
        d[6 + i] = wheel_derivative(state.wheel[i], input.torque[i], forces[i].fx, tf, params);
    }
    Ok((d, forces))
}

/// Wraps an angle to `(−π, π]`.
pub fn wrap_angle(a: f64) -> f64 {
    use std::f64::consts::PI;
    let mut r = a % (2.0 * PI);
    if r <= -PI {
        r += 2.0 * PI;
    } else if r > PI {
        r -= 2.0 * PI;
    }
    r
}

/// Advances the vehicle by one RK4 step of length `dt` with the input held.
pub fn step(state: &VehicleState, input: &PlantInput, params: &VehicleParams, dt: f64) -> Result<VehicleState, PlantError> {
    if !(dt > 0.0 && dt <= 0.01) {
        return Err(PlantError::InvalidArgument(format!("plant step must lie in (0, 0.01], got {dt}")));
    }
    let input = input.clamped();
    let mut failure = None;
    let next = integrate_rk4(
        |x: &[f64; 10]| match derivatives(&VehicleState::from_array(x), &input, params) {
            Ok((d, _)) => d,
            Err(e) => {
                failure.get_or_insert(e);
                [f64::NAN; 10]
            }
        },
        &state.to_array(),
        dt,
    );
    if let Some(e) = failure {
        return Err(e);
    }
    let mut out = VehicleState::from_array(&next?);
    out.psi = wrap_angle(out.psi);
    Ok(out)
}

/// Owned plant instance: parameters, state and the last evaluated tire forces.
#[derive(Debug, Clone)]
pub struct Plant {
    params: VehicleParams,
    state: VehicleState,
    forces: TireForces,
}

impl Plant {
    pub fn new(params: VehicleParams, state: VehicleState) -> Result<Self, PlantError> {
        params.validate()?;
        let forces = tire_forces(&state, 0.0, &params)?;
        Ok(Self { params, state, forces })
    }

    pub fn params(&self) -> &VehicleParams {
        &self.params
    }

    pub fn state(&self) -> &VehicleState {
        &self.state
    }

    pub fn forces(&self) -> &TireForces {
        &self.forces
    }

    /// Derivatives at the current state under `input`, without stepping.
    pub fn rates(&self, input: &PlantInput) -> Result<([f64; 10], TireForces), PlantError> {
        derivatives(&self.state, &input.clamped(), &self.params)
    }

    pub fn step(&mut self, input: &PlantInput, dt: f64) -> Result<&VehicleState, PlantError> {
        self.state = step(&self.state, input, &self.params, dt)?;
        self.forces = tire_forces(&self.state, input.clamped().delta, &self.params)?;
        Ok(&self.state)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn p() -> VehicleParams {
        VehicleParams::default()
    }

    #[test]
    fn chassis_equilibrium() {
        let params = p();
        let s = VehicleState::straight(10.0, &params);
        let d = chassis_derivatives(&s, &[WheelForce::default(); 4], &PlantInput::default(), &params);
        assert_eq!(d, [0.0, 0.0, 0.0]);
    }

    #[test]
    fn chassis_front_drive() {
        let params = p();
        let s = VehicleState::straight(10.0, &params);
        let mut f = [WheelForce::default(); 4];
        f[FL].fx = 500.0;
        f[FR].fx = 500.0;
        let d = chassis_derivatives(&s, &f, &PlantInput::default(), &params);
        // the front pair alone gives 1000 N; the all-wheel 2000 N case is checked below
        assert!((d[0] - 1000.0 / 1653.0).abs() < 1e-12);
        for w in &mut f {
            w.fx = 500.0;
        }
        let d = chassis_derivatives(&s, &f, &PlantInput::default(), &params);
        assert!((d[0] - 2000.0 / 1653.0).abs() < 1e-12);
        assert!((d[0] - 1.2099).abs() < 1e-4);
    }

    #[test]
    fn chassis_differential_yaw() {
        let params = p();
        let s = VehicleState::straight(10.0, &params);
        let mut f = [WheelForce::default(); 4];
        f[FR].fx = 500.0;
        f[RR].fx = 500.0;
        let d = chassis_derivatives(&s, &f, &PlantInput::default(), &params);
        assert!((d[2] - 0.8 * 1000.0 / 3234.0).abs() < 1e-12);
    }

    #[test]
    fn wheel_examples() {
        let params = p();
        let w = 30.0;
        let fx = 200.0;
        let t = params.wheel_radius * fx + params.wheel_damping * w;
        assert!(wheel_derivative(w, t, fx, 0.0, &params).abs() < 1e-12);
        assert!((wheel_derivative(0.0, 100.0, 0.0, 0.0, &params) - 83.333_333).abs() < 1e-5);
        assert!((wheel_derivative(50.0, 0.0, 0.0, 0.0, &params) + 2.083_333).abs() < 1e-5);
    }

    #[test]
    fn rest_is_equilibrium() {
        let params = p();
        let s = VehicleState::default();
        let next = step(&s, &PlantInput::default(), &params, 1e-3).unwrap();
        assert_eq!(next, s);
    }

    #[test]
    fn rejects_large_step() {
        let params = p();
        assert!(step(&VehicleState::default(), &PlantInput::default(), &params, 0.02).is_err());
    }

    #[test]
    fn wrap_angle_range() {
        use std::f64::consts::PI;
        assert_eq!(wrap_angle(PI), PI);
        assert!((wrap_angle(-PI) - PI).abs() < 1e-15);
        assert!((wrap_angle(3.0 * PI / 2.0) + PI / 2.0).abs() < 1e-12);
    }

    #[test]
    fn validate_rejects_bad_friction() {
        let params = VehicleParams { friction: 1.5, ..p() };
        assert!(params.validate().is_err());
    }
}
