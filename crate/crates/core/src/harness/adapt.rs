//! Offline adaptation: excitation runs on the simulated vehicle, stiffness
//! identification, regression envelopes and the scaling search.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::config::Config;
use super::run::{lag_step, run, Boundaries, Mode};
use super::scenario::{DisturbanceConfig, DisturbanceKind, DisturbanceSchedule};
use super::HarnessError;
use crate::bayes::{tune, TuneResult, DIVERGENCE_PENALTY};
use crate::bsc::{nominal_drift, torque_law, wheel_ref_from_slip, WheelNominal};
use crate::gpr::{build_envelopes, EnvelopeSample, EnvelopeTable, Gpr, Grid};
use crate::lmi_ctrl::{Stiffness, StiffnessRange};
use crate::plant::{
    derivatives, dugoff_force, side_slip_angles, wheel_ground_speeds, Plant, PlantInput, TireForces, VehicleParams, VehicleState, FL, FR,
};
use crate::rls::{build_regressor, Rls, RlsTraceRow, StepOutcome};

/// One controller tick of an excitation run.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ExcitationSample {
    pub state: VehicleState,
    /// Applied (lagged) steering angle.
    pub delta: f64,
    pub torque: [f64; 4],
    /// Disturbances applied during the tick: lateral force, yaw moment, wheel friction.
    pub disturbance: [f64; 3],
    /// Measured state derivative of the simulated vehicle.
    pub rates: [f64; 10],
    /// Measured tire slip ratios.
    pub sigma: [f64; 4],
    /// Wheel-speed tracking error.
    pub wheel_error: [f64; 4],
}

fn square(t: f64, period: f64) -> f64 {
    if (t / period).fract() < 0.5 { 1.0 } else { -1.0 }
}

/// Sine-sweep steering with slip pulses, tracked by the wheel-speed law
/// and a speed-holding slip offset, on the mismatched vehicle.
pub fn excitation_run(config: &Config, duration: f64, seed: u64, disturbed: bool) -> Result<Vec<ExcitationSample>, HarnessError> {
    let sc = &config.scenario;
    let id = &config.identification;
    let period = sc.period;
    let substeps = sc.substeps();
    let dt = period / substeps as f64;
    let truth = config.plant_params();
    let p = &config.vehicle;
    let steps = (duration / period).round() as usize;
    let schedule = if disturbed {
        DisturbanceSchedule::generate(&sc.disturbance, duration, seed)
    } else {
        DisturbanceSchedule::generate(&DisturbanceConfig { kind: DisturbanceKind::None, ..sc.disturbance }, duration, seed)
    };
    let mut plant = Plant::new(truth, VehicleState::straight(sc.speed, &truth)).map_err(|e| HarnessError::Plant(e.to_string()))?;
    let nominal = WheelNominal { inertia: p.wheel_inertia, damping: p.wheel_damping, radius: p.wheel_radius };
    let mut steering = 0.0;
    let mut omega_ref: Option<[f64; 4]> = None;
    let mut out = Vec::with_capacity(steps);
    // sweep from 0.1 Hz to 1.2 Hz; phase is the integral of the frequency
    let (f0, f1) = (0.1, 1.2);
    let phase_offset = (seed % 17) as f64 * 0.37;
    for k in 0..steps {
        let t = k as f64 * period;
        let state = *plant.state();
        let phase = 2.0 * std::f64::consts::PI * (f0 * t + 0.5 * (f1 - f0) * t * t / duration) + phase_offset;
        let delta_cmd = id.steer_amplitude * phase.sin();
        let speed_hold = (0.02 * (sc.speed - state.vx)).clamp(-0.01, 0.01);
        let common = id.slip_amplitude * square(t + phase_offset, 2.0) + speed_hold;
        let diff = id.differential_slip * square(t, 1.3);
        let sigma_ref = [common + diff, common - diff, common + diff, common - diff];

        let ground = wheel_ground_speeds(&state, steering, p);
        let prev = omega_ref.unwrap_or(state.wheel);
        let reference: [f64; 4] = std::array::from_fn(|i| wheel_ref_from_slip(sigma_ref[i], ground[i], p.wheel_radius, prev[i]));
        let ref_rate: [f64; 4] = match omega_ref {
            Some(prev) => std::array::from_fn(|i| (reference[i] - prev[i]) / period),
            None => [0.0; 4],
        };
        omega_ref = Some(reference);
        let (alpha_f, alpha_r) = side_slip_angles(&state, steering, p).unwrap_or((0.0, 0.0));
        let mut torque = [0.0; 4];
        let mut wheel_error = [0.0; 4];
        for i in 0..4 {
            let alpha = if i == FL || i == FR { alpha_f } else { alpha_r };
            let fx_hat = dugoff_force(sigma_ref[i], alpha, p.static_load(), p).map(|f| f.fx).unwrap_or(0.0);
            let e = state.wheel[i] - reference[i];
            torque[i] = torque_law(e, nominal_drift(fx_hat, state.wheel[i], ref_rate[i], &nominal), 0.0, &config.bsc);
            wheel_error[i] = e;
        }

        let [fy, mz, tf] = schedule.at(t);
        let forces: TireForces = *plant.forces();
        let mut rates = [0.0; 10];
        let mut applied = steering;
        for sub in 0..substeps {
            steering = lag_step(steering, delta_cmd, config.mismatch.steering_lag, dt);
            let input = PlantInput { delta: steering, torque, force_x: 0.0, force_y: fy, yaw_moment: mz, friction_torque: tf }.clamped();
            if sub == 0 {
                rates = plant.rates(&input).map_err(|e| HarnessError::Plant(e.to_string()))?.0;
                applied = steering;
            }
            plant.step(&input, dt).map_err(|e| HarnessError::Plant(format!("excitation run at t={t}: {e}")))?;
        }
        out.push(ExcitationSample {
            state,
            delta: applied,
            torque,
            disturbance: [fy, mz, tf],
            rates,
            sigma: std::array::from_fn(|i| forces[i].sigma),
            wheel_error,
        });
    }
    Ok(out)
}

/// Identified stiffness and the identifier trace.
#[derive(Debug, Clone)]
pub struct Identification {
    pub rls: Rls,
    pub trace: Vec<RlsTraceRow>,
    pub rejected: usize,
}

/// Runs the stiffness identifier over excitation data, starting from the
/// nominal model. Accelerations get multiplicative noise when configured.
pub fn identify(config: &Config, samples: &[ExcitationSample]) -> Identification {
    let mut rls = Rls::for_stiffness(config.rls, &Stiffness::nominal(&config.vehicle));
    let mut rng = ChaCha8Rng::seed_from_u64(config.identification.seed ^ 0x1d);
    let noise = Normal::new(0.0, config.identification.noise.max(0.0)).expect("finite noise level");
    let mut trace = Vec::with_capacity(samples.len());
    let mut rejected = 0;
    for s in samples {
        let mut accel = [s.rates[3], s.rates[4], s.rates[5]];
        if config.identification.noise > 0.0 {
            for a in accel.iter_mut() {
                *a *= 1.0 + noise.sample(&mut rng);
            }
        }
        let guess = rls.stiffness().apply(&config.vehicle);
        match build_regressor(&s.state, s.delta, &accel, &guess) {
            Ok(reg) => {
                if let StepOutcome::Updated { lambda, eps, .. } = rls.step(&reg) {
                    trace.push(rls.trace_row(lambda, eps));
                }
            }
            Err(_) => rejected += 1,
        }
    }
    Identification { rls, trace, rejected }
}

/// Rate of the surface-relevant combination `ω̇_z + ξ·β̇`.
fn yaw_projection(rates: &[f64; 10], state: &VehicleState, xi: f64) -> f64 {
    rates[5] + xi * (rates[2] - state.yaw_rate)
}

fn yaw_features(s: &ExcitationSample) -> Vec<f64> {
    let mean = s.sigma.iter().sum::<f64>() / 4.0;
    let diff = 0.5 * ((s.sigma[1] + s.sigma[3]) - (s.sigma[0] + s.sigma[2]));
    vec![s.state.beta(), s.state.yaw_rate, s.delta, s.state.vx, mean, diff]
}

fn wheel_features(s: &ExcitationSample, wheel: usize, params: &VehicleParams) -> Vec<f64> {
    let (af, ar) = side_slip_angles(&s.state, s.delta, params).unwrap_or((0.0, 0.0));
    let alpha = if wheel == FL || wheel == FR { af } else { ar };
    vec![s.sigma[wheel], alpha, s.torque[wheel], s.state.wheel[wheel]]
}

/// Derivative predicted by the controller-side model with stiffness `theta`,
/// without disturbances.
fn nominal_rates(s: &ExcitationSample, theta: &Stiffness, vehicle: &VehicleParams) -> [f64; 10] {
    let input = PlantInput { delta: s.delta, torque: s.torque, ..Default::default() };
    derivatives(&s.state, &input, &theta.apply(vehicle)).map(|(d, _)| d).unwrap_or([f64::NAN; 10])
}

/// Everything the controllers need from the offline stage.
#[derive(Debug, Clone)]
pub struct Adaptation {
    pub stiffness: Stiffness,
    pub identifier: Rls,
    pub identification_trace: Vec<RlsTraceRow>,
    pub yaw_gpr: Gpr,
    pub wheel_gpr: Gpr,
    /// Unscaled envelopes.
    pub yaw_envelope: EnvelopeTable,
    pub wheel_envelope: EnvelopeTable,
    pub yaw_coverage: f64,
    pub wheel_coverage: f64,
}

pub struct GprTargets {
    pub yaw_x: Vec<Vec<f64>>,
    pub yaw_y: Vec<f64>,
    pub wheel_x: Vec<Vec<f64>>,
    pub wheel_y: Vec<f64>,
}

/// Regression data: surface-rate combination for the chassis, wheel
/// acceleration in torque units (scaled by nominal inertia) for the wheels.
pub fn gpr_targets(config: &Config, samples: &[ExcitationSample]) -> GprTargets {
    let xi = config.smc.xi;
    let j = config.vehicle.wheel_inertia;
    let mut t = GprTargets { yaw_x: Vec::new(), yaw_y: Vec::new(), wheel_x: Vec::new(), wheel_y: Vec::new() };
    for s in samples {
        t.yaw_x.push(yaw_features(s));
        t.yaw_y.push(yaw_projection(&s.rates, &s.state, xi));
        for w in 0..4 {
            t.wheel_x.push(wheel_features(s, w, &config.vehicle));
            t.wheel_y.push(j * s.rates[6 + w]);
        }
    }
    t
}

pub fn yaw_grid(config: &Config) -> Grid {
    let g = &config.gpr;
    Grid::new(vec![-g.beta_span, -g.yaw_rate_span], vec![g.beta_span, g.yaw_rate_span], vec![g.beta_cells, g.yaw_rate_cells])
}

pub fn wheel_grid(config: &Config) -> Grid {
    let g = &config.gpr;
    Grid::new(vec![-g.wheel_error_span], vec![g.wheel_error_span], vec![g.wheel_error_cells])
}

/// Envelope samples for the chassis and the wheels.
pub fn envelope_samples(
    config: &Config,
    samples: &[ExcitationSample],
    theta: &Stiffness,
    yaw_gpr: &Gpr,
    wheel_gpr: &Gpr,
) -> (Vec<EnvelopeSample>, Vec<EnvelopeSample>) {
    let xi = config.smc.xi;
    let j = config.vehicle.wheel_inertia;
    let mut yaw = Vec::with_capacity(samples.len());
    let mut wheel = Vec::with_capacity(4 * samples.len());
    for s in samples {
        let nominal = nominal_rates(s, theta, &config.vehicle);
        yaw.push(EnvelopeSample {
            x: vec![s.state.beta(), s.state.yaw_rate],
            gpr: yaw_gpr.predict(&yaw_features(s)).mean,
            nominal: yaw_projection(&nominal, &s.state, xi),
            truth: yaw_projection(&s.rates, &s.state, xi),
        });
        for w in 0..4 {
            wheel.push(EnvelopeSample {
                x: vec![s.wheel_error[w]],
                gpr: wheel_gpr.predict(&wheel_features(s, w, &config.vehicle)).mean,
                nominal: j * nominal[6 + w],
                truth: j * s.rates[6 + w],
            });
        }
    }
    (yaw, wheel)
}

/// The undisturbed excitation run feeds both the identifier and the
/// regressions, so the regressions learn the vehicle rather than the
/// disturbance. A disturbed run then sizes the envelopes and a held-out
/// disturbed run with another seed measures coverage.
pub fn adapt(config: &Config) -> Result<Adaptation, HarnessError> {
    config.validate()?;
    let id = &config.identification;
    let clean = excitation_run(config, id.duration, id.seed, false)?;
    let ident = identify(config, &clean);
    let theta = ident.rls.stiffness();

    let targets = gpr_targets(config, &clean);
    let yaw_gpr = Gpr::fit(&targets.yaw_x, &targets.yaw_y, &config.gpr.fit)?;
    let wheel_gpr = Gpr::fit(&targets.wheel_x, &targets.wheel_y, &config.gpr.fit)?;
    let disturbed = excitation_run(config, id.duration, id.seed.wrapping_add(1), true)?;
    let (yaw_samples, wheel_samples) = envelope_samples(config, &disturbed, &theta, &yaw_gpr, &wheel_gpr);
    let yaw_envelope = build_envelopes(&yaw_samples, yaw_grid(config), 1.0, 1.0)?;
    let wheel_envelope = build_envelopes(&wheel_samples, wheel_grid(config), 1.0, 1.0)?;

    let heldout = excitation_run(config, config.gpr.heldout_duration, id.seed.wrapping_add(2), true)?;
    let (yaw_held, wheel_held) = envelope_samples(config, &heldout, &theta, &yaw_gpr, &wheel_gpr);
    Ok(Adaptation {
        stiffness: theta,
        yaw_coverage: yaw_envelope.coverage(&yaw_held),
        wheel_coverage: wheel_envelope.coverage(&wheel_held),
        identifier: ident.rls,
        identification_trace: ident.trace,
        yaw_gpr,
        wheel_gpr,
        yaw_envelope,
        wheel_envelope,
    })
}

/// Scaled boundaries: stiffness range by `alpha[0]`, internal and external
/// envelope parts by `alpha[1]` and `alpha[2]`.
pub fn boundaries(adaptation: &Adaptation, alpha: &[f64; 3]) -> Boundaries {
    Boundaries {
        stiffness: adaptation.stiffness,
        range: adaptation.identifier.stiffness_range(alpha[0]),
        yaw_envelope: adaptation.yaw_envelope.scaled(alpha[1], alpha[2]),
        wheel_envelope: adaptation.wheel_envelope.scaled(alpha[1], alpha[2]),
    }
}

/// Nominal stiffness with a wide fixed range and envelopes at a fixed
/// multiple of the adaptive ones.
pub fn baseline_boundaries(config: &Config, adaptation: &Adaptation) -> Boundaries {
    let nominal = Stiffness::nominal(&config.vehicle);
    let k = config.baseline.envelope_factor;
    Boundaries {
        stiffness: nominal,
        range: StiffnessRange::around(&nominal, config.baseline.stiffness_fraction),
        yaw_envelope: adaptation.yaw_envelope.scaled(k, k),
        wheel_envelope: adaptation.wheel_envelope.scaled(k, k),
    }
}

/// Nominal stiffness and zero envelopes.
pub fn nominal_boundaries(config: &Config) -> Boundaries {
    let nominal = Stiffness::nominal(&config.vehicle);
    Boundaries {
        stiffness: nominal,
        range: StiffnessRange::around(&nominal, config.baseline.stiffness_fraction),
        yaw_envelope: EnvelopeTable::zero(yaw_grid(config)),
        wheel_envelope: EnvelopeTable::zero(wheel_grid(config)),
    }
}

/// Scaling search over the configured scenario with a fixed disturbance seed.
pub fn tune_scalings(config: &Config, adaptation: &Adaptation, seed: u64) -> Result<TuneResult, HarnessError> {
    let objective = |alpha: &[f64]| {
        let a = [alpha[0], alpha[1], alpha[2]];
        match run(config, &boundaries(adaptation, &a), Mode::Arc, seed) {
            Ok(out) => out.metrics.cost,
            Err(_) => DIVERGENCE_PENALTY,
        }
    };
    Ok(super::thread_pool().install(|| tune(&config.tune, 3, objective))?)
}

pub fn tuning_csv(result: &TuneResult) -> String {
    let mut out = String::from("iteration,alpha_range,alpha_internal,alpha_external,cost,best_so_far\n");
    for (i, (e, b)) in result.history.iter().zip(&result.best_so_far).enumerate() {
        out.push_str(&format!("{i},{},{},{},{},{b}\n", e.alpha[0], e.alpha[1], e.alpha[2], e.cost));
    }
    out
}

pub fn identification_csv(trace: &[RlsTraceRow]) -> String {
    let mut out = String::from("step,slip_stiffness,cornering_stiffness,lambda,eps,p_slip,p_cornering\n");
    for r in trace {
        out.push_str(&format!("{},{},{},{},{},{},{}\n", r.step, r.theta[0], r.theta[1], r.lambda, r.eps, r.p_diag[0], r.p_diag[1]));
    }
    out
}
