use robust_track::bsc::{lyapunov_check, torque_law, BscGains};
use robust_track::smc::{control_law, reaching_check, SmcGains, SurfaceModel};

/// `ṡ = h + k·u + d` with `|d| ≤ k·Δ`, integrated by explicit Euler.
#[test]
fn sliding_law_reaches_layer_under_bounded_mismatch() {
    let gains = SmcGains::default();
    let dt = 1e-4;
    let k = 0.4;
    let envelope = 0.5;
    for s0 in [-1.0, -0.2, 0.3, 2.0] {
        let mut s = s0;
        let mut trace = Vec::new();
        let mut t = 0.0f64;
        while t < 3.0 {
            let drift = 0.8 * (3.0 * t).sin();
            let disturbance = k * envelope * (7.0 * t).cos();
            let u = control_law(s, &SurfaceModel { drift, input_gain: k }, envelope, &gains).unwrap();
            let ds = drift + k * u + disturbance;
            trace.push((s, ds));
            s += dt * ds;
            t += dt;
        }
        let report = reaching_check(&trace, gains.boundary_layer);
        assert_eq!(report.violations, 0, "start {s0}: {report:?}");
        assert!(s.abs() <= gains.boundary_layer, "start {s0}: final s {s}");
    }
}

#[test]
fn sliding_law_refuses_vanishing_input_gain() {
    assert!(control_law(0.1, &SurfaceModel { drift: 0.0, input_gain: 0.0 }, 0.0, &SmcGains::default()).is_err());
}

/// `J·ė = T + g + d` with the drift compensated and `|d| ≤ ϱ`.
#[test]
fn wheel_law_enters_layer_from_large_error() {
    let gains = BscGains::default();
    let inertia = 1.2;
    let dt = 1e-4;
    let envelope = 15.0;
    let mut e = 20.0;
    let mut trace = Vec::new();
    let mut entered = None;
    for i in 0..20_000 {
        let t = i as f64 * dt;
        let g = -40.0 + 10.0 * (5.0 * t).sin();
        let d = envelope * (11.0 * t).sin();
        let torque = torque_law(e, g, envelope, &gains);
        let de = (torque + g + d) / inertia;
        trace.push((e, de));
        e += dt * de;
        if entered.is_none() && e.abs() <= gains.boundary_layer {
            entered = Some(t);
        }
    }
    let report = lyapunov_check(&trace, gains.boundary_layer);
    assert_eq!(report.violations, 0, "{report:?}");
    assert!(e.abs() <= gains.boundary_layer, "final error {e}");
    assert!(entered.is_some());
}
