use std::path::Path;

use serde::{Deserialize, Serialize};

use super::scenario::{DisturbanceConfig, DlcGeometry};
use super::HarnessError;
use crate::bayes::{CostWeights, TuneConfig};
use crate::bsc::BscGains;
use crate::gpr::FitOptions;
use crate::lmi_ctrl::LmiConfig;
use crate::plant::VehicleParams;
use crate::rls::RlsConfig;
use crate::smc::SmcGains;
use crate::tracking::TrackingConfig;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ScenarioConfig {
    pub geometry: DlcGeometry,
    pub speed: f64,
    /// Simulated time; defaults to the time needed to cover the path.
    pub duration: Option<f64>,
    pub period: f64,
    pub plant_step: f64,
    pub disturbance: DisturbanceConfig,
    /// Abort when the lateral error exceeds this.
    pub max_lateral_error: f64,
    /// Abort when the side slip exceeds this.
    pub max_beta: f64,
    /// Added to every wheel speed at start.
    pub initial_wheel_error: f64,
}

impl Default for ScenarioConfig {
    fn default() -> Self {
        Self {
            geometry: DlcGeometry::default(),
            speed: 16.67,
            duration: None,
            period: 0.01,
            plant_step: 0.001,
            disturbance: DisturbanceConfig::default(),
            max_lateral_error: 5.0,
            max_beta: 0.5,
            initial_wheel_error: 0.0,
        }
    }
}

impl ScenarioConfig {
    pub fn duration(&self) -> f64 {
        self.duration.unwrap_or(self.geometry.length() / self.speed)
    }

    /// Plant steps per controller period.
    pub fn substeps(&self) -> usize {
        (self.period / self.plant_step).round() as usize
    }
}

/// Differences between the simulated vehicle and the controller's model.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MismatchConfig {
    pub slip_stiffness: f64,
    pub cornering_stiffness: f64,
    pub wheel_inertia: f64,
    pub wheel_damping: f64,
    /// First-order steering actuator time constant (s).
    pub steering_lag: f64,
}

impl Default for MismatchConfig {
    fn default() -> Self {
        Self { slip_stiffness: 1.15, cornering_stiffness: 0.85, wheel_inertia: 1.1, wheel_damping: 1.5, steering_lag: 0.03 }
    }
}

impl MismatchConfig {
    pub fn none() -> Self {
        Self { slip_stiffness: 1.0, cornering_stiffness: 1.0, wheel_inertia: 1.0, wheel_damping: 1.0, steering_lag: 0.0 }
    }

    pub fn apply(&self, nominal: &VehicleParams) -> VehicleParams {
        VehicleParams {
            slip_stiffness: nominal.slip_stiffness * self.slip_stiffness,
            cornering_stiffness: nominal.cornering_stiffness * self.cornering_stiffness,
            wheel_inertia: nominal.wheel_inertia * self.wheel_inertia,
            wheel_damping: nominal.wheel_damping * self.wheel_damping,
            ..*nominal
        }
    }
}

/// Excitation runs that feed identification and regression.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct IdentificationConfig {
    pub duration: f64,
    pub seed: u64,
    pub steer_amplitude: f64,
    pub slip_amplitude: f64,
    pub differential_slip: f64,
    /// Multiplicative noise on measured accelerations (standard deviation).
    pub noise: f64,
}

impl Default for IdentificationConfig {
    fn default() -> Self {
        Self { duration: 20.0, seed: 1, steer_amplitude: 0.02, slip_amplitude: 0.008, differential_slip: 0.005, noise: 0.0 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GprConfig {
    pub fit: FitOptions,
    pub beta_span: f64,
    pub beta_cells: usize,
    pub yaw_rate_span: f64,
    pub yaw_rate_cells: usize,
    pub wheel_error_span: f64,
    pub wheel_error_cells: usize,
    /// Held-out excitation time used for coverage.
    pub heldout_duration: f64,
}

impl Default for GprConfig {
    fn default() -> Self {
        Self {
            fit: FitOptions::default(),
            beta_span: 0.05,
            beta_cells: 6,
            yaw_rate_span: 0.5,
            yaw_rate_cells: 8,
            wheel_error_span: 2.0,
            wheel_error_cells: 8,
            heldout_duration: 10.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ArcConfig {
    /// Scalings of the stiffness range, internal and external envelopes.
    pub alpha: [f64; 3],
    /// Keep identifying stiffness during the run.
    pub online_rls: bool,
}

impl Default for ArcConfig {
    fn default() -> Self {
        Self { alpha: [1.0; 3], online_rls: false }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BaselineConfig {
    /// Relative stiffness range around the nominal model.
    pub stiffness_fraction: f64,
    /// Multiple of the adaptive envelopes.
    pub envelope_factor: f64,
}

impl Default for BaselineConfig {
    fn default() -> Self {
        Self { stiffness_fraction: 0.4, envelope_factor: 2.0 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AllocationConfig {
    /// Share of each tire's friction capacity available for yaw moment.
    pub moment_reserve: f64,
}

impl Default for AllocationConfig {
    fn default() -> Self {
        Self { moment_reserve: 0.5 }
    }
}

/// Every tunable of the framework. Unknown keys are rejected.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Config {
    /// Controller-side vehicle model.
    pub vehicle: VehicleParams,
    pub scenario: ScenarioConfig,
    pub mismatch: MismatchConfig,
    pub tracking: TrackingConfig,
    pub lmi: LmiConfig,
    pub smc: SmcGains,
    pub allocation: AllocationConfig,
    pub bsc: BscGains,
    pub rls: RlsConfig,
    pub identification: IdentificationConfig,
    pub gpr: GprConfig,
    pub arc: ArcConfig,
    pub baseline: BaselineConfig,
    pub tune: TuneConfig,
    pub cost: CostWeights,
}

impl Config {
    pub fn from_toml_str(text: &str) -> Result<Self, HarnessError> {
        let cfg: Config = toml::from_str(text).map_err(|e| HarnessError::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, HarnessError> {
        let text = std::fs::read_to_string(path).map_err(|e| HarnessError::io(path, e))?;
        Self::from_toml_str(&text)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn plant_params(&self) -> VehicleParams {
        self.mismatch.apply(&self.vehicle)
    }

    pub fn validate(&self) -> Result<(), HarnessError> {
        let bad = |m: String| Err(HarnessError::Config(m));
        self.vehicle.validate().map_err(|e| HarnessError::Config(e.to_string()))?;
        self.scenario.geometry.validate().map_err(HarnessError::Config)?;
        let s = &self.scenario;
        if !(s.speed > 0.0) {
            return bad(format!("speed must be positive, got {}", s.speed));
        }
        if !(s.period > 0.0 && s.plant_step > 0.0 && s.plant_step <= 0.01) {
            return bad("period and plant_step must be positive, plant_step at most 0.01".into());
        }
        let ratio = s.period / s.plant_step;
        if (ratio - ratio.round()).abs() > 1e-9 {
            return bad(format!("period {} is not a multiple of plant_step {}", s.period, s.plant_step));
        }
        if !(s.duration() > 0.0) {
            return bad("duration must be positive".into());
        }
        if !(s.disturbance.hold > 0.0) {
            return bad("disturbance hold must be positive".into());
        }
        if !(self.tracking.beta_lead > 0.0) {
            return bad(format!("beta_lead must be positive, got {}", self.tracking.beta_lead));
        }
        self.smc.validate().map_err(|e| HarnessError::Config(e.to_string()))?;
        if !(self.bsc.k_omega > 0.0 && self.bsc.gamma0 >= 0.0 && self.bsc.boundary_layer > 0.0) {
            return bad(format!("invalid wheel-controller gains {:?}", self.bsc));
        }
        if !(self.mismatch.steering_lag >= 0.0) {
            return bad("steering lag must be non-negative".into());
        }
        if self.arc.alpha.iter().any(|a| !(*a > 0.0)) {
            return bad(format!("scalings must be positive, got {:?}", self.arc.alpha));
        }
        if !(self.rls.lambda_min > 0.0 && self.rls.lambda_min <= 1.0 && self.rls.h > 0.0 && self.rls.h < 1.0 && self.rls.sigma_eps > 0.0) {
            return bad(format!("invalid identification settings {:?}", self.rls));
        }
        self.tune.validate().map_err(|e| HarnessError::Config(e.to_string()))?;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_roundtrips_through_toml() {
        let cfg = Config::default();
        let back = Config::from_toml_str(&cfg.to_toml()).unwrap();
        assert_eq!(back, cfg);
    }

    #[test]
    fn partial_file_keeps_defaults() {
        let cfg = Config::from_toml_str("[scenario]\nspeed = 15.0\n").unwrap();
        assert_eq!(cfg.scenario.speed, 15.0);
        assert_eq!(cfg.smc, SmcGains::default());
    }

    #[test]
    fn unknown_keys_rejected() {
        assert!(Config::from_toml_str("[scenario]\nsped = 15.0\n").is_err());
        assert!(Config::from_toml_str("bogus = 1\n").is_err());
    }

    #[test]
    fn invalid_values_rejected() {
        assert!(Config::from_toml_str("[scenario]\nspeed = -1.0\n").is_err());
        assert!(Config::from_toml_str("[scenario]\nplant_step = 0.003\n").is_err());
    }
}
