use super::{PlantError, VehicleParams, VehicleState, LOW_SPEED};

/// Longitudinal and lateral force produced by one tire, in the tire frame.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct TireForce {
    pub fx: f64,
    pub fy: f64,
    /// Adhesion reserve; the tire is saturated when this is below one.
    pub lambda: f64,
}

impl TireForce {
    pub fn is_saturated(&self) -> bool {
        self.lambda < 1.0
    }
}

/// Signed longitudinal slip of a wheel spinning at `w` over ground speed `v_wx`.
///
/// Positive when driving (`w·r > v_wx`), negative when braking. Degenerate
/// cases with a vanishing denominator return zero.
pub fn slip_ratio(w: f64, v_wx: f64, r_w: f64) -> f64 {
    let rolling = w * r_w;
    let s = rolling - v_wx;
    if rolling > v_wx && rolling != 0.0 {
        s / rolling
    } else if rolling < v_wx && v_wx != 0.0 {
        s / v_wx
    } else {
        0.0
    }
}

/// Front and rear axle slip angles, shared by the two tires of an axle.
pub fn side_slip_angles(state: &VehicleState, delta: f64, params: &VehicleParams) -> Result<(f64, f64), PlantError> {
    if state.vx.abs() <= LOW_SPEED {
        return Err(PlantError::LowSpeed { vx: state.vx });
    }
    let front = (state.vy + params.front_axle * state.yaw_rate) / state.vx - delta;
    let rear = (state.vy - params.rear_axle * state.yaw_rate) / state.vx;
    Ok((front, rear))
}

/// Dugoff combined-slip tire model.
///
/// Inside the adhesion limit the forces are linear in the stiffnesses; past
/// it they are weighted by `λ(2 − λ)`. The saturated branch is evaluated in
/// a form that does not divide by `1 + σ`.
pub fn dugoff_force(sigma: f64, alpha: f64, fz: f64, params: &VehicleParams) -> Result<TireForce, PlantError> {
    if !(fz > 0.0) {
        return Err(PlantError::InvalidArgument(format!("vertical load must be positive, got {fz}")));
    }
    if !(sigma > -1.0) {
        return Err(PlantError::InvalidArgument(format!("slip ratio must exceed -1, got {sigma}")));
    }
    let long = params.slip_stiffness * sigma;
    let lat = params.cornering_stiffness * alpha.tan();
    let demand = long.hypot(lat);
    if demand == 0.0 {
        return Ok(TireForce { fx: 0.0, fy: 0.0, lambda: f64::INFINITY });
    }
    let capacity = params.friction * fz;
    let lambda = capacity * (1.0 + sigma) / (2.0 * demand);
    if lambda >= 1.0 {
        let scale = 1.0 / (1.0 + sigma);
        Ok(TireForce { fx: long * scale, fy: lat * scale, lambda })
    } else {
        let scale = capacity * (2.0 - lambda) / (2.0 * demand);
        Ok(TireForce { fx: long * scale, fy: lat * scale, lambda })
    }
}
