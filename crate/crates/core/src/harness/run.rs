//! The closed loop: tracking, robust longitudinal/yaw control, sliding-mode
//! yaw moment, wheel-speed control and the plant.

use serde::{Deserialize, Serialize};

use super::config::Config;
use super::metrics::{MetricsBuilder, RunMetrics};
use super::scenario::{generate_reference, DisturbanceSchedule};
use super::HarnessError;
use crate::bayes::CostSample;
use crate::bsc::{nominal_drift, torque_law, wheel_ref_from_slip, WheelNominal};
use crate::gpr::EnvelopeTable;
use crate::lmi_ctrl::{steering_command, LmiController, Stiffness, StiffnessRange};
use crate::plant::{
    dugoff_force, side_slip_angles, wheel_ground_speeds, Plant, PlantInput, TireForces, VehicleParams, VehicleState, FL, FR, RL, RR,
    STEER_LIMIT,
};
use crate::rls::{build_regressor, Rls};
use crate::smc::{allocate_slip, control_law, moment_capacity, surface, surface_model, AxleAngles};
use crate::tracking::{allocate_beta, compute_error, desired_motion, phase_trajectory, predicted_utilization, LqrTracker, PhaseTrajectory};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Mode {
    /// Identified stiffness, regression envelopes and tuned scalings.
    Arc,
    /// Nominal stiffness with static conservative boundaries.
    #[serde(alias = "lmi")]
    LmiFixed,
}

impl std::fmt::Display for Mode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Mode::Arc => "arc",
            Mode::LmiFixed => "lmi-fixed",
        })
    }
}

/// Model and uncertainty description handed to the controllers.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Boundaries {
    pub stiffness: Stiffness,
    pub range: StiffnessRange,
    /// Surface-rate mismatch bound over `(β, ω_z)`.
    pub yaw_envelope: EnvelopeTable,
    /// Wheel torque mismatch bound over the wheel-speed error.
    pub wheel_envelope: EnvelopeTable,
}

pub mod flags {
    pub const LMI_SYNTHESIZED: u32 = 1;
    pub const LMI_INFEASIBLE: u32 = 1 << 1;
    pub const LMI_STALE: u32 = 1 << 2;
    pub const LMI_CONSERVATIVE: u32 = 1 << 3;
    pub const LMI_DEGRADED: u32 = 1 << 4;
    pub const LMI_SATURATED: u32 = 1 << 5;
    pub const LINEARIZATION_INVALID: u32 = 1 << 6;
    pub const SMC_BYPASS: u32 = 1 << 7;
    pub const ALLOCATION_FAILED: u32 = 1 << 8;
    pub const BETA_SATURATED: u32 = 1 << 9;
    pub const MOMENT_CLIPPED: u32 = 1 << 10;
    pub const DIVERGED: u32 = 1 << 11;
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct TraceRow {
    pub t: f64,
    pub x: f64,
    pub y: f64,
    pub psi: f64,
    pub vx: f64,
    pub vy: f64,
    pub yaw_rate: f64,
    pub beta: f64,
    pub delta: f64,
    pub sigma: [f64; 4],
    pub torque: [f64; 4],
    pub e_x: f64,
    pub e_y: f64,
    pub e_psi: f64,
    pub s: f64,
    pub flags: u32,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunOutput {
    pub trace: Vec<TraceRow>,
    pub metrics: RunMetrics,
    /// `(s, ṡ)` per controller tick, `ṡ` by forward difference.
    pub surface: Vec<(f64, f64)>,
    /// Per wheel `(e_ω, ė_ω)` per controller tick.
    pub wheel_errors: [Vec<(f64, f64)>; 4],
}

/// Controller-side command for one tick.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct Command {
    pub delta: f64,
    pub torque: [f64; 4],
    pub surface: f64,
    pub wheel_error: [f64; 4],
    pub yaw_moment: f64,
    pub flags: u32,
}

/// Everything the controllers keep between ticks.
pub struct ControlStack {
    params: VehicleParams,
    config: Config,
    boundaries: Boundaries,
    tracker: LqrTracker,
    lmi: LmiController,
    traj: PhaseTrajectory,
    delta: f64,
    omega_ref: Option<[f64; 4]>,
    rls: Option<Rls>,
    range_scale: f64,
}

impl ControlStack {
    pub fn new(config: &Config, boundaries: Boundaries, rls: Option<Rls>) -> Self {
        Self {
            params: config.vehicle,
            config: config.clone(),
            tracker: LqrTracker::new(config.tracking),
            lmi: LmiController::new(config.lmi.clone(), config.vehicle),
            boundaries,
            traj: PhaseTrajectory::default(),
            delta: 0.0,
            omega_ref: None,
            rls,
            range_scale: config.arc.alpha[0],
        }
    }

    pub fn boundaries(&self) -> &Boundaries {
        &self.boundaries
    }

    /// Feeds one measurement to the online identifier, if any.
    pub fn observe(&mut self, state: &VehicleState, delta: f64, accel: &[f64; 3]) {
        let Some(rls) = self.rls.as_mut() else { return };
        let guess = rls.stiffness().apply(&self.params);
        if let Ok(reg) = build_regressor(state, delta, accel, &guess) {
            rls.step(&reg);
            self.boundaries.stiffness = rls.stiffness();
            self.boundaries.range = rls.stiffness_range(self.range_scale);
        }
    }

    pub fn step(
        &mut self,
        tick: usize,
        state: &VehicleState,
        forces: &TireForces,
        steering: f64,
        reference: &crate::tracking::ReferencePoint,
    ) -> Result<Command, HarnessError> {
        let cfg = &self.config;
        let period = cfg.scenario.period;
        let p = &self.params;
        let theta = self.boundaries.stiffness;
        let mut flags_out = 0u32;

        let error = compute_error(state, reference);
        let gain = self.tracker.gain(reference).map_err(|e| HarnessError::Control(e.to_string()))?.clone();
        let (speed_des, yaw_rate_des) = desired_motion(&error, &gain, reference);

        let model = theta.apply(p);
        let beta = allocate_beta(|b| predicted_utilization(state, forces, &model, yaw_rate_des, b, period), cfg.tracking.beta_weight);
        if beta.saturated {
            flags_out |= flags::BETA_SATURATED;
        }
        self.traj = phase_trajectory(&self.traj, speed_des, yaw_rate_des, beta.rate, period);
        let lead = cfg.tracking.beta_lead;
        self.traj.beta = self.traj.beta.clamp(state.beta() - lead, state.beta() + lead);
        let traj = self.traj;

        // the steering loop follows the yaw rate on the sliding manifold so
        // that it never pulls against the yaw-moment loop
        let manifold = PhaseTrajectory { yaw_rate: traj.yaw_rate - cfg.smc.xi * (state.beta() - traj.beta), ..traj };
        let lmi = self
            .lmi
            .step(tick, state, &manifold, &theta, &self.boundaries.range, period)
            .map_err(|e| HarnessError::Control(e.to_string()))?;
        let f = lmi.flags;
        for (set, bit) in [
            (f.synthesized, flags::LMI_SYNTHESIZED),
            (f.infeasible, flags::LMI_INFEASIBLE),
            (f.stale, flags::LMI_STALE),
            (f.conservative, flags::LMI_CONSERVATIVE),
            (f.degraded, flags::LMI_DEGRADED),
            (f.saturated, flags::LMI_SATURATED),
            (f.linearization_invalid, flags::LINEARIZATION_INVALID),
        ] {
            if set {
                flags_out |= bit;
            }
        }
        self.delta = steering_command(state, lmi.alpha, p, self.delta).clamp(-STEER_LIMIT, STEER_LIMIT);

        // yaw moment from the sliding surface
        let gains = cfg.smc;
        let beta_now = state.beta();
        let s = surface(beta_now, state.yaw_rate, &traj, gains.xi);
        // drift along the feedforward steering only; the steering feedback acts on
        // the same surface and is left to help the reaching law
        let sm = surface_model(state, &traj, lmi.u_ref[1], &theta, p, gains.xi);
        let envelope = self.boundaries.yaw_envelope.bound(&[beta_now, state.yaw_rate]) / sm.input_gain;
        let mut moment = match control_law(s, &sm, envelope, &gains) {
            Ok(u) => u,
            Err(_) => {
                flags_out |= flags::SMC_BYPASS;
                0.0
            }
        };
        let cap = moment_capacity(p, cfg.allocation.moment_reserve);
        if moment.abs() > cap {
            moment = moment.clamp(-cap, cap);
            flags_out |= flags::MOMENT_CLIPPED;
        }
        let angles = AxleAngles::new(state, lmi.alpha, p);
        let split = allocate_slip(moment, lmi.sigma, &angles, &model);
        if split.failed {
            flags_out |= flags::ALLOCATION_FAILED;
        }

        // wheel-speed loop
        let sigma_ref = [split.left, split.right, split.left, split.right];
        let ground = wheel_ground_speeds(state, steering, p);
        let prev_ref = self.omega_ref.unwrap_or([0.0; 4]);
        let mut omega_ref = [0.0; 4];
        for i in 0..4 {
            let hold = if self.omega_ref.is_some() { prev_ref[i] } else { state.wheel[i] };
            omega_ref[i] = wheel_ref_from_slip(sigma_ref[i], ground[i], p.wheel_radius, hold);
        }
        let ref_rate = match self.omega_ref {
            Some(prev) => std::array::from_fn(|i| (omega_ref[i] - prev[i]) / period),
            None => [0.0; 4],
        };
        self.omega_ref = Some(omega_ref);
        let (alpha_f, alpha_r) = side_slip_angles(state, steering, p).unwrap_or((0.0, 0.0));
        let nominal = WheelNominal { inertia: p.wheel_inertia, damping: p.wheel_damping, radius: p.wheel_radius };
        let mut torque = [0.0; 4];
        let mut wheel_error = [0.0; 4];
        for i in [FL, FR, RL, RR] {
            let alpha = if i == FL || i == FR { alpha_f } else { alpha_r };
            let fx_hat = dugoff_force(sigma_ref[i].max(-0.999), alpha, model.static_load(), &model).map(|t| t.fx).unwrap_or(0.0);
            let e = state.wheel[i] - omega_ref[i];
            let g_hat = nominal_drift(fx_hat, state.wheel[i], ref_rate[i], &nominal);
            let rho = self.boundaries.wheel_envelope.bound(&[e]);
            torque[i] = torque_law(e, g_hat, rho, &cfg.bsc);
            wheel_error[i] = e;
        }

        Ok(Command { delta: self.delta, torque, surface: s, wheel_error, yaw_moment: moment, flags: flags_out })
    }
}

/// First-order actuator lag, exact for a held command.
pub fn lag_step(current: f64, command: f64, tau: f64, dt: f64) -> f64 {
    if tau <= 0.0 {
        command
    } else {
        current + (1.0 - (-dt / tau).exp()) * (command - current)
    }
}

/// Runs one scenario with the given boundaries.
pub fn run(config: &Config, boundaries: &Boundaries, mode: Mode, seed: u64) -> Result<RunOutput, HarnessError> {
    run_with_identifier(config, boundaries, mode, seed, None)
}

pub fn run_with_identifier(config: &Config, boundaries: &Boundaries, mode: Mode, seed: u64, rls: Option<Rls>) -> Result<RunOutput, HarnessError> {
    config.validate()?;
    let started = std::time::Instant::now();
    let sc = &config.scenario;
    let duration = sc.duration();
    let period = sc.period;
    let substeps = sc.substeps();
    let dt = period / substeps as f64;
    let reference = generate_reference(&sc.geometry, sc.speed, period, duration);
    let disturbance = DisturbanceSchedule::generate(&sc.disturbance, duration, seed);
    let truth = config.plant_params();

    let mut initial = VehicleState::straight(sc.speed, &truth);
    for w in initial.wheel.iter_mut() {
        *w += sc.initial_wheel_error;
    }
    let mut plant = Plant::new(truth, initial).map_err(|e| HarnessError::Plant(e.to_string()))?;
    let mut stack = ControlStack::new(config, boundaries.clone(), if mode == Mode::Arc && config.arc.online_rls { rls } else { None });
    let mut steering = 0.0;
    let mut trace = Vec::with_capacity(reference.len());
    let mut surface_trace: Vec<f64> = Vec::with_capacity(reference.len());
    let mut wheel_trace: [Vec<f64>; 4] = Default::default();
    let mut metrics = MetricsBuilder::new(mode, seed, config);
    let steps = reference.len() - 1;

    for (tick, reference_point) in reference.iter().enumerate().take(steps) {
        let t = tick as f64 * period;
        let state = *plant.state();
        let error = compute_error(&state, reference_point);
        if error.e_y.abs() > sc.max_lateral_error || state.beta().abs() > sc.max_beta || !state.vx.is_finite() {
            metrics.diverged(t);
            if let Some(last) = trace.last_mut() {
                let last: &mut TraceRow = last;
                last.flags |= flags::DIVERGED;
            }
            break;
        }
        let forces = *plant.forces();
        let cmd = stack.step(tick, &state, &forces, steering, reference_point)?;
        let [fy, mz, tf] = disturbance.at(t);

        let measured_sigma = std::array::from_fn(|i| forces[i].sigma);
        trace.push(TraceRow {
            t,
            x: state.x,
            y: state.y,
            psi: state.psi,
            vx: state.vx,
            vy: state.vy,
            yaw_rate: state.yaw_rate,
            beta: state.beta(),
            delta: steering,
            sigma: measured_sigma,
            torque: cmd.torque,
            e_x: error.e_x,
            e_y: error.e_y,
            e_psi: error.e_psi,
            s: cmd.surface,
            flags: cmd.flags,
        });
        surface_trace.push(cmd.surface);
        for i in 0..4 {
            wheel_trace[i].push(cmd.wheel_error[i]);
        }

        let mut accel = [0.0; 3];
        for sub in 0..substeps {
            steering = lag_step(steering, cmd.delta, config.mismatch.steering_lag, dt);
            let input = PlantInput { delta: steering, torque: cmd.torque, force_x: 0.0, force_y: fy, yaw_moment: mz, friction_torque: tf }
                .clamped();
            if sub == 0 {
                let (d, _) = plant.rates(&input).map_err(|e| HarnessError::Plant(e.to_string()))?;
                accel = [d[3], d[4], d[5]];
            }
            if let Err(e) = plant.step(&input, dt) {
                metrics.diverged(t);
                metrics.note(format!("plant failure: {e}"));
                break;
            }
        }
        stack.observe(&state, steering, &accel);
        let forces_now = plant.forces();
        metrics.sample(
            &error,
            &state,
            cmd.delta,
            stack.traj.yaw_rate,
            &CostSample {
                error: error.as_vec(),
                accel: [accel[0], accel[1]],
                utilization: std::array::from_fn(|i| forces_now[i].utilization(truth.friction)),
            },
            cmd.flags,
        );
        if metrics.is_diverged() {
            break;
        }
    }

    let surface: Vec<(f64, f64)> = surface_trace
        .windows(2)
        .map(|w| (w[0], (w[1] - w[0]) / period))
        .collect();
    let wheel_errors = wheel_trace.map(|tr| tr.windows(2).map(|w| (w[0], (w[1] - w[0]) / period)).collect::<Vec<_>>());
    let metrics = metrics.finish(&surface, &wheel_errors, config, started.elapsed().as_secs_f64());
    Ok(RunOutput { trace, metrics, surface, wheel_errors })
}
