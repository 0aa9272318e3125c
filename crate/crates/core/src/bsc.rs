//! Back-stepping wheel-speed controller: slip references become wheel-speed
//! references, tracked by a per-wheel torque law.

use serde::{Deserialize, Serialize};

use crate::plant::{LOW_SPEED, TORQUE_LIMIT};
use crate::smc::{scan, sat, DecreaseReport};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BscGains {
    pub k_omega: f64,
    /// Margin added to the wheel envelope.
    pub gamma0: f64,
    pub boundary_layer: f64,
}

impl Default for BscGains {
    fn default() -> Self {
        Self { k_omega: 8.0, gamma0: 0.2, boundary_layer: 0.5 }
    }
}

/// Nominal wheel parameters used by the drift estimate.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WheelNominal {
    pub inertia: f64,
    pub damping: f64,
    pub radius: f64,
}

/// Wheel speed that produces `sigma_ref` at ground speed `v_wx`; returns
/// `previous` below the low-speed guard.
pub fn wheel_ref_from_slip(sigma_ref: f64, v_wx: f64, r_w: f64, previous: f64) -> f64 {
    if v_wx.abs() <= LOW_SPEED {
        return previous;
    }
    if sigma_ref >= 0.0 {
        v_wx / (r_w * (1.0 - sigma_ref))
    } else {
        v_wx * (1.0 + sigma_ref) / r_w
    }
}

/// Nominal drift of the wheel error, `ĝ_e = −r·F̂_x − B̂·ω − Ĵ·ω̇_ref`.
pub fn nominal_drift(fx_hat: f64, omega: f64, omega_ref_rate: f64, wheel: &WheelNominal) -> f64 {
    -wheel.radius * fx_hat - wheel.damping * omega - wheel.inertia * omega_ref_rate
}

/// `T = −k_ω·e − ĝ_e − (ϱ + Γ₀)·sat(e)`, clamped to the torque limit.
pub fn torque_law(e_omega: f64, g_hat: f64, envelope: f64, gains: &BscGains) -> f64 {
    let robust = (envelope.max(0.0) + gains.gamma0) * sat(e_omega, gains.boundary_layer);
    (-gains.k_omega * e_omega - g_hat - robust).clamp(-TORQUE_LIMIT, TORQUE_LIMIT)
}

/// Counts samples outside the layer where `e·ė ≤ 0` fails.
pub fn lyapunov_check(trace: &[(f64, f64)], layer: f64) -> DecreaseReport {
    scan(trace, layer, |p| p > 0.0)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::plant::slip_ratio;

    #[test]
    fn wheel_ref_examples() {
        assert_eq!(wheel_ref_from_slip(0.0, 15.0, 0.3, 0.0), 50.0);
        let w = wheel_ref_from_slip(0.1, 15.0, 0.3, 0.0);
        assert!((w - 55.556).abs() < 1e-3);
        assert!((slip_ratio(w, 15.0, 0.3) - 0.1).abs() < 1e-12);
        let w = wheel_ref_from_slip(-0.1, 15.0, 0.3, 0.0);
        assert!((w - 45.0).abs() < 1e-12);
        assert!((slip_ratio(w, 15.0, 0.3) + 0.1).abs() < 1e-12);
        assert_eq!(wheel_ref_from_slip(0.1, 0.2, 0.3, 7.0), 7.0);
    }

    #[test]
    fn torque_law_examples() {
        let g = BscGains { k_omega: 5.0, gamma0: 0.5, boundary_layer: 1e-6 };
        assert_eq!(torque_law(0.0, 0.0, 3.0, &BscGains::default()), 0.0);
        assert!((torque_law(2.0, 1.0, 3.0, &g) + 14.5).abs() < 1e-12);
        assert_eq!(torque_law(250.0, 0.0, 0.0, &BscGains::default()), -TORQUE_LIMIT);
    }

    #[test]
    fn lyapunov_check_flags_divergence() {
        let r = lyapunov_check(&[(1.0, 0.5), (-2.0, -0.1), (0.1, 5.0)], 0.5);
        assert_eq!((r.checked, r.violations), (2, 2));
        assert_eq!(lyapunov_check(&[(1.0, 0.0), (-2.0, 0.1)], 0.5).violations, 0);
    }
}
