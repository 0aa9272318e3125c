use serde::{Deserialize, Serialize};

use super::config::Config;
use super::run::{flags, Mode};
use super::HarnessError;
use crate::bayes::{global_cost, CostSample};
use crate::bsc::lyapunov_check;
use crate::plant::VehicleState;
use crate::smc::{reaching_check, DecreaseReport};
use crate::tracking::PoseError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunMetrics {
    pub mode: Mode,
    pub seed: u64,
    /// Fingerprint of the scenario and plant settings.
    pub scenario: String,
    pub completed: bool,
    pub diverged: bool,
    pub simulated_time: f64,
    pub max_lateral_error: f64,
    pub rms_lateral_error: f64,
    pub max_beta: f64,
    pub max_yaw_rate_error: f64,
    pub steering_smoothness: f64,
    pub cost: f64,
    pub lmi_syntheses: usize,
    pub lmi_infeasible: usize,
    pub lmi_stale: usize,
    pub lmi_degraded: usize,
    pub smc_bypass: usize,
    pub allocation_failures: usize,
    pub moment_clipped: usize,
    pub beta_saturated: usize,
    pub reaching: DecreaseReport,
    pub wheel: DecreaseReport,
    pub wall_seconds: f64,
    pub notes: Vec<String>,
}

fn fnv1a(text: &str) -> String {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in text.bytes() {
        h ^= b as u64;
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    format!("{h:016x}")
}

pub fn scenario_fingerprint(config: &Config) -> String {
    let scenario = toml::to_string(&config.scenario).expect("scenario serializes");
    let mismatch = toml::to_string(&config.mismatch).expect("mismatch serializes");
    let vehicle = toml::to_string(&config.vehicle).expect("vehicle serializes");
    fnv1a(&format!("{scenario}\n{mismatch}\n{vehicle}"))
}

pub(crate) struct MetricsBuilder {
    m: RunMetrics,
    samples: Vec<CostSample>,
    sum_sq: f64,
    count: usize,
    last_delta: Option<f64>,
    diverged_at: Option<f64>,
    duration: f64,
    period: f64,
}

impl MetricsBuilder {
    pub fn new(mode: Mode, seed: u64, config: &Config) -> Self {
        Self {
            m: RunMetrics {
                mode,
                seed,
                scenario: scenario_fingerprint(config),
                completed: false,
                diverged: false,
                simulated_time: 0.0,
                max_lateral_error: 0.0,
                rms_lateral_error: 0.0,
                max_beta: 0.0,
                max_yaw_rate_error: 0.0,
                steering_smoothness: 0.0,
                cost: 0.0,
                lmi_syntheses: 0,
                lmi_infeasible: 0,
                lmi_stale: 0,
                lmi_degraded: 0,
                smc_bypass: 0,
                allocation_failures: 0,
                moment_clipped: 0,
                beta_saturated: 0,
                reaching: DecreaseReport::default(),
                wheel: DecreaseReport::default(),
                wall_seconds: 0.0,
                notes: Vec::new(),
            },
            samples: Vec::new(),
            sum_sq: 0.0,
            count: 0,
            last_delta: None,
            diverged_at: None,
            duration: config.scenario.duration(),
            period: config.scenario.period,
        }
    }

    pub fn diverged(&mut self, t: f64) {
        self.diverged_at.get_or_insert(t);
    }

    pub fn is_diverged(&self) -> bool {
        self.diverged_at.is_some()
    }

    pub fn note(&mut self, text: String) {
        self.m.notes.push(text);
    }

    pub fn sample(&mut self, error: &PoseError, state: &VehicleState, delta: f64, yaw_rate_des: f64, cost: &CostSample, bits: u32) {
        let m = &mut self.m;
        m.max_lateral_error = m.max_lateral_error.max(error.e_y.abs());
        m.max_beta = m.max_beta.max(state.beta().abs());
        m.max_yaw_rate_error = m.max_yaw_rate_error.max((state.yaw_rate - yaw_rate_des).abs());
        if let Some(prev) = self.last_delta {
            m.steering_smoothness += (delta - prev).abs();
        }
        self.last_delta = Some(delta);
        self.sum_sq += error.e_y * error.e_y;
        self.count += 1;
        self.samples.push(*cost);
        for (bit, counter) in [
            (flags::LMI_SYNTHESIZED, &mut m.lmi_syntheses),
            (flags::LMI_INFEASIBLE, &mut m.lmi_infeasible),
            (flags::LMI_STALE, &mut m.lmi_stale),
            (flags::LMI_DEGRADED, &mut m.lmi_degraded),
            (flags::SMC_BYPASS, &mut m.smc_bypass),
            (flags::ALLOCATION_FAILED, &mut m.allocation_failures),
            (flags::MOMENT_CLIPPED, &mut m.moment_clipped),
            (flags::BETA_SATURATED, &mut m.beta_saturated),
        ] {
            if bits & bit != 0 {
                *counter += 1;
            }
        }
    }

    pub fn finish(mut self, surface: &[(f64, f64)], wheels: &[Vec<(f64, f64)>; 4], config: &Config, wall: f64) -> RunMetrics {
        let m = &mut self.m;
        m.diverged = self.diverged_at.is_some();
        m.simulated_time = self.diverged_at.unwrap_or(self.count as f64 * self.period);
        m.completed = !m.diverged && m.simulated_time + 0.5 * self.period >= self.duration - self.period;
        m.rms_lateral_error = if self.count > 0 { (self.sum_sq / self.count as f64).sqrt() } else { 0.0 };
        m.cost = global_cost(&self.samples, &config.cost, m.diverged).0;
        m.reaching = reaching_check(surface, config.smc.boundary_layer);
        let mut wheel = DecreaseReport::default();
        for w in wheels {
            wheel.merge(&lyapunov_check(w, config.bsc.boundary_layer));
        }
        m.wheel = wheel;
        m.wall_seconds = wall;
        self.m
    }
}

fn median(values: &mut [f64]) -> f64 {
    values.sort_by(f64::total_cmp);
    let n = values.len();
    if n == 0 {
        f64::NAN
    } else if n % 2 == 1 {
        values[n / 2]
    } else {
        0.5 * (values[n / 2 - 1] + values[n / 2])
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricDelta {
    pub name: String,
    pub a: f64,
    pub b: f64,
    /// `a − b`; positive when `a` is lower.
    pub improvement: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Comparison {
    pub label_a: String,
    pub label_b: String,
    pub seeds: Vec<u64>,
    pub rows: Vec<MetricDelta>,
}

impl Comparison {
    pub fn get(&self, name: &str) -> Option<&MetricDelta> {
        self.rows.iter().find(|r| r.name == name)
    }

    pub fn table(&self) -> String {
        let mut out = format!("{:<24} {:>14} {:>14} {:>14}\n", "metric (median)", self.label_a, self.label_b, "a - b");
        for r in &self.rows {
            out.push_str(&format!("{:<24} {:>14.6} {:>14.6} {:>14.6}\n", r.name, r.a, r.b, r.improvement));
        }
        out
    }
}

/// Median of each metric over the seeds of `a` and `b`. Both sets must
/// share the scenario and seed list.
pub fn compare(a: &[RunMetrics], b: &[RunMetrics]) -> Result<Comparison, HarnessError> {
    if a.is_empty() || b.is_empty() {
        return Err(HarnessError::Comparison("empty metric set".into()));
    }
    let mut seeds_a: Vec<u64> = a.iter().map(|m| m.seed).collect();
    let mut seeds_b: Vec<u64> = b.iter().map(|m| m.seed).collect();
    seeds_a.sort_unstable();
    seeds_b.sort_unstable();
    if seeds_a != seeds_b {
        return Err(HarnessError::Comparison(format!("seed sets differ: {seeds_a:?} vs {seeds_b:?}")));
    }
    let scenario = &a[0].scenario;
    if a.iter().chain(b).any(|m| &m.scenario != scenario) {
        return Err(HarnessError::Comparison("runs come from different scenarios".into()));
    }
    let pick: [(&str, fn(&RunMetrics) -> f64); 7] = [
        ("max_lateral_error", |m| m.max_lateral_error),
        ("rms_lateral_error", |m| m.rms_lateral_error),
        ("max_beta", |m| m.max_beta),
        ("max_yaw_rate_error", |m| m.max_yaw_rate_error),
        ("steering_smoothness", |m| m.steering_smoothness),
        ("cost", |m| m.cost),
        ("diverged", |m| m.diverged as u8 as f64),
    ];
    let rows = pick
        .iter()
        .map(|(name, f)| {
            let ma = median(&mut a.iter().map(f).collect::<Vec<_>>());
            let mb = median(&mut b.iter().map(f).collect::<Vec<_>>());
            MetricDelta { name: name.to_string(), a: ma, b: mb, improvement: ma - mb }
        })
        .collect();
    Ok(Comparison { label_a: a[0].mode.to_string(), label_b: b[0].mode.to_string(), seeds: seeds_a, rows })
}
