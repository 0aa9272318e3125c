use robust_track::plant::{self, PlantInput, VehicleParams, VehicleState, FL, FR, RL, RR};

const DT: f64 = 1e-3;

fn run(mut s: VehicleState, steps: usize, input: impl Fn(usize, &VehicleState) -> PlantInput, params: &VehicleParams) -> Vec<VehicleState> {
    let mut out = vec![s];
    for k in 0..steps {
        s = plant::step(&s, &input(k, &s), params, DT).unwrap();
        out.push(s);
    }
    out
}

fn holding_torque(w: f64, params: &VehicleParams) -> f64 {
    -plant::rolling_resistance(w, params) + params.wheel_damping * w
}

#[test]
fn straight_line_has_no_lateral_drift() {
    let params = VehicleParams::default();
    let trace = run(VehicleState::straight(16.67, &params), 1000, |_, s| PlantInput {
        torque: s.wheel.map(|w| holding_torque(w, &params)),
        ..Default::default()
    }, &params);
    let last = trace.last().unwrap();
    assert!(last.y.abs() < 1e-6, "drift {}", last.y);
    assert!((last.x - 16.67).abs() < 0.05);
}

#[test]
fn steady_yaw_rate_matches_bicycle_model() {
    let params = VehicleParams::default();
    let delta = 0.02;
    let v = 16.67;
    let trace = run(VehicleState::straight(v, &params), 4000, |_, s| PlantInput {
        delta,
        torque: s.wheel.map(|w| holding_torque(w, &params)),
        ..Default::default()
    }, &params);
    let last = trace.last().unwrap();
    let axle = 2.0 * params.cornering_stiffness;
    let l = params.wheelbase();
    let understeer = params.mass * (params.rear_axle - params.front_axle) / (l * axle);
    let gain = last.vx / (l + understeer * last.vx * last.vx);
    let expected = gain * delta;
    assert!((gain / 5.004 - 1.0).abs() < 0.01, "analytic gain {gain}");
    let rel = (last.yaw_rate - expected).abs() / expected;
    assert!(rel < 0.05, "yaw rate {} vs {expected}", last.yaw_rate);
}

#[test]
fn friction_circle_holds_every_step() {
    let params = VehicleParams::default();
    let mut s = VehicleState::straight(16.67, &params);
    for k in 0..3000 {
        let t = k as f64 * DT;
        let input = PlantInput {
            delta: 0.15 * (3.0 * t).sin(),
            torque: [900.0 * (5.0 * t).sin(), -700.0, 1200.0 * (2.0 * t).cos(), 300.0],
            force_y: 1000.0 * (7.0 * t).sin(),
            yaw_moment: -1000.0,
            ..Default::default()
        };
        let (_, forces) = plant::derivatives(&s, &input.clamped(), &params).unwrap();
        for f in &forces {
            assert!(f.fx.hypot(f.fy) <= params.friction * f.fz + 1e-6);
        }
        s = plant::step(&s, &input, &params, DT).unwrap();
    }
}

#[test]
fn coasting_never_gains_energy() {
    let params = VehicleParams::default();
    let mut s = VehicleState::straight(16.67, &params);
    s.vy = 0.4;
    s.yaw_rate = 0.3;
    s.wheel[FL] *= 1.05;
    s.wheel[RR] *= 0.9;
    let trace = run(s, 3000, |_, _| PlantInput::default(), &params);
    for pair in trace.windows(2) {
        let (e0, e1) = (pair[0].kinetic_energy(&params), pair[1].kinetic_energy(&params));
        assert!(e1 <= e0 * (1.0 + 1e-12), "energy rose from {e0} to {e1}");
    }
}

#[test]
fn mirrored_maneuver_mirrors_exactly() {
    let params = VehicleParams::default();
    let mut s = VehicleState::straight(16.67, &params);
    s.vy = 0.1;
    s.yaw_rate = 0.05;
    let input = |k: usize| {
        let t = k as f64 * DT;
        PlantInput {
            delta: 0.05 * (2.0 * t).sin() + 0.01,
            torque: [100.0, 300.0 * t, -50.0, 20.0],
            force_y: 400.0,
            yaw_moment: 250.0 * t,
            ..Default::default()
        }
    };
    let a = run(s, 1500, |k, _| input(k), &params);
    let b = run(s.mirrored(), 1500, |k, _| input(k).mirrored(), &params);
    for (sa, sb) in a.iter().zip(&b) {
        assert_eq!(sa.mirrored(), *sb);
    }
    assert!(a.last().unwrap().y.abs() > 0.01);
    let _ = (FR, RL);
}
