//! Double-lane-change reference path and disturbance schedules.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::tracking::ReferencePoint;

/// Lane-change geometry: entry straight, transition out, hold in the
/// adjacent lane, transition back, exit straight.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DlcGeometry {
    pub entry: f64,
    pub change_out: f64,
    pub hold: f64,
    pub change_back: f64,
    pub exit: f64,
    pub offset: f64,
}

impl Default for DlcGeometry {
    fn default() -> Self {
        Self { entry: 20.0, change_out: 45.0, hold: 25.0, change_back: 45.0, exit: 30.0, offset: 3.5 }
    }
}

impl DlcGeometry {
    /// Straight road of the same length.
    pub fn straight(&self) -> Self {
        Self { offset: 0.0, ..*self }
    }

    pub fn length(&self) -> f64 {
        self.entry + self.change_out + self.hold + self.change_back + self.exit
    }

    pub fn validate(&self) -> Result<(), String> {
        let parts = [self.entry, self.change_out, self.hold, self.change_back, self.exit];
        if parts.iter().any(|p| !(*p >= 0.0)) || !(self.change_out > 0.0 && self.change_back > 0.0) || !self.offset.is_finite() {
            return Err(format!("invalid lane-change geometry {self:?}"));
        }
        Ok(())
    }

    /// Lateral offset and its first two derivatives with respect to the
    /// longitudinal coordinate.
    pub fn lateral(&self, x: f64) -> (f64, f64, f64) {
        let blend = |u: f64, len: f64, sign: f64| {
            let u = u.clamp(0.0, 1.0);
            let y = 35.0 * u.powi(4) - 84.0 * u.powi(5) + 70.0 * u.powi(6) - 20.0 * u.powi(7);
            let dy = (140.0 * u.powi(3) - 420.0 * u.powi(4) + 420.0 * u.powi(5) - 140.0 * u.powi(6)) / len;
            let ddy = (420.0 * u.powi(2) - 1680.0 * u.powi(3) + 2100.0 * u.powi(4) - 840.0 * u.powi(5)) / (len * len);
            (sign * y, sign * dy, sign * ddy)
        };
        let x1 = self.entry;
        let x2 = x1 + self.change_out;
        let x3 = x2 + self.hold;
        let x4 = x3 + self.change_back;
        let (y, dy, ddy) = if x < x1 {
            (0.0, 0.0, 0.0)
        } else if x < x2 {
            blend((x - x1) / self.change_out, self.change_out, 1.0)
        } else if x < x3 {
            (1.0, 0.0, 0.0)
        } else if x < x4 {
            let (y, dy, ddy) = blend((x - x3) / self.change_back, self.change_back, -1.0);
            (1.0 + y, dy, ddy)
        } else {
            (0.0, 0.0, 0.0)
        };
        (self.offset * y, self.offset * dy, self.offset * ddy)
    }
}

/// Reference sampled by time for a point moving along the path at `speed`.
pub fn generate_reference(geometry: &DlcGeometry, speed: f64, period: f64, duration: f64) -> Vec<ReferencePoint> {
    // arc-length table on a fine grid in the longitudinal coordinate
    let dx = 0.01;
    let span = geometry.length() + speed * duration + 1.0;
    let n = (span / dx).ceil() as usize + 1;
    let mut arc = Vec::with_capacity(n);
    let mut s = 0.0;
    let mut prev = geometry.lateral(0.0).1.hypot(1.0);
    for i in 0..n {
        let x = i as f64 * dx;
        let g = geometry.lateral(x).1.hypot(1.0);
        if i > 0 {
            s += 0.5 * (prev + g) * dx;
        }
        prev = g;
        arc.push(s);
    }
    let steps = (duration / period).round() as usize;
    let mut out = Vec::with_capacity(steps + 1);
    let mut j = 0;
    for k in 0..=steps {
        let target = speed * k as f64 * period;
        while j + 2 < arc.len() && arc[j + 1] < target {
            j += 1;
        }
        let t = ((target - arc[j]) / (arc[j + 1] - arc[j])).clamp(0.0, 1.0);
        let x = (j as f64 + t) * dx;
        let (y, dy, ddy) = geometry.lateral(x);
        let curvature = ddy / (1.0 + dy * dy).powf(1.5);
        out.push(ReferencePoint { x, y, psi: dy.atan(), speed, yaw_rate: speed * curvature, curvature });
    }
    out
}

pub const DISTURBANCE_LIMIT: f64 = 1000.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DisturbanceKind {
    None,
    /// Uniform random levels rescaled so the largest magnitude hits the limit.
    Random,
    /// Every level at plus or minus the limit.
    Edge,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DisturbanceConfig {
    pub kind: DisturbanceKind,
    /// Hold time of each level.
    pub hold: f64,
    /// Lateral force limit.
    pub force: f64,
    /// Yaw moment limit.
    pub moment: f64,
    /// Wheel friction moment limit.
    pub wheel_torque: f64,
}

impl Default for DisturbanceConfig {
    fn default() -> Self {
        Self { kind: DisturbanceKind::Random, hold: 0.5, force: DISTURBANCE_LIMIT, moment: DISTURBANCE_LIMIT, wheel_torque: 0.0 }
    }
}

/// Piecewise-constant `(F_y, M_z, T_f)` levels.
#[derive(Debug, Clone, PartialEq)]
pub struct DisturbanceSchedule {
    pub hold: f64,
    pub levels: Vec<[f64; 3]>,
}

impl DisturbanceSchedule {
    pub fn generate(config: &DisturbanceConfig, duration: f64, seed: u64) -> Self {
        let count = ((duration / config.hold).ceil() as usize).max(1);
        let limits = [config.force, config.moment, config.wheel_torque];
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed_d157);
        let mut levels = vec![[0.0; 3]; count];
        for (c, limit) in limits.iter().enumerate() {
            match config.kind {
                DisturbanceKind::None => {}
                DisturbanceKind::Edge => {
                    for l in levels.iter_mut() {
                        l[c] = if rng.gen::<bool>() { *limit } else { -*limit };
                    }
                }
                DisturbanceKind::Random => {
                    let raw: Vec<f64> = (0..count).map(|_| rng.gen_range(-1.0..=1.0)).collect();
                    let peak = raw.iter().fold(0.0f64, |m, v| m.max(v.abs()));
                    for (l, r) in levels.iter_mut().zip(&raw) {
                        l[c] = if peak > 0.0 { (r / peak * limit).clamp(-limit, *limit) } else { 0.0 };
                    }
                    // the rescale can land a hair off the limit
                    if let Some(i) = raw.iter().position(|r| r.abs() == peak) {
                        levels[i][c] = limit.copysign(raw[i]);
                    }
                }
            }
        }
        for l in &levels {
            for (v, limit) in l.iter().zip(&limits) {
                assert!(v.abs() <= *limit, "disturbance level {v} exceeds {limit}");
            }
        }
        Self { hold: config.hold, levels }
    }

    pub fn at(&self, t: f64) -> [f64; 3] {
        let i = ((t / self.hold).floor().max(0.0) as usize).min(self.levels.len() - 1);
        self.levels[i]
    }

    pub fn peak(&self) -> [f64; 3] {
        let mut out = [0.0f64; 3];
        for l in &self.levels {
            for c in 0..3 {
                out[c] = out[c].max(l[c].abs());
            }
        }
        out
    }
}
