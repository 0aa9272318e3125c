use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use robust_track::harness::adapt::{excitation_run, ExcitationSample};
use robust_track::harness::Config;
use robust_track::lmi_ctrl::Stiffness;
use robust_track::rls::{build_regressor, Regression, Rls, RlsConfig};

fn clean_samples(cfg: &Config, duration: f64) -> Vec<ExcitationSample> {
    excitation_run(cfg, duration, 0, false).unwrap()
}

fn regressions(cfg: &Config, samples: &[ExcitationSample], noise: f64, seed: u64) -> Vec<Regression> {
    let truth = cfg.plant_params();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let normal = Normal::new(0.0, noise.max(1e-300)).unwrap();
    samples
        .iter()
        .filter_map(|s| {
            let mut accel = [s.rates[3], s.rates[4], s.rates[5]];
            if noise > 0.0 {
                for a in accel.iter_mut() {
                    *a *= 1.0 + normal.sample(&mut rng);
                }
            }
            build_regressor(&s.state, s.delta, &accel, &truth).ok()
        })
        .collect()
}

fn relative_errors(theta: &DVector<f64>, truth: &Stiffness) -> [f64; 2] {
    [((theta[0] - truth.slip) / truth.slip).abs(), ((theta[1] - truth.cornering) / truth.cornering).abs()]
}

fn median(mut v: Vec<f64>) -> f64 {
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 { v[n / 2] } else { 0.5 * (v[n / 2 - 1] + v[n / 2]) }
}

#[test]
fn noiseless_excitation_identifies_stiffness() {
    let cfg = Config::default();
    let truth = cfg.plant_params();
    let truth = Stiffness { slip: truth.slip_stiffness, cornering: truth.cornering_stiffness };
    let regs = regressions(&cfg, &clean_samples(&cfg, 5.5), 0.0, 0);
    assert!(regs.len() >= 500);
    let mut rls = Rls::for_stiffness(cfg.rls, &Stiffness::nominal(&cfg.vehicle));
    for r in regs.iter().take(500) {
        rls.step(r);
    }
    let err = relative_errors(rls.theta(), &truth);
    assert!(err[0] < 1e-3 && err[1] < 1e-3, "relative errors {err:?}");
}

#[test]
fn noisy_identification_median_within_two_percent() {
    let cfg = Config::default();
    let p = cfg.plant_params();
    let truth = Stiffness { slip: p.slip_stiffness, cornering: p.cornering_stiffness };
    let samples = clean_samples(&cfg, 12.0);
    let mut early = Vec::new();
    let mut late = Vec::new();
    for seed in 0..20 {
        let regs = regressions(&cfg, &samples, 0.01, seed);
        assert!(regs.len() >= 1000);
        let mut rls = Rls::for_stiffness(cfg.rls, &Stiffness::nominal(&cfg.vehicle));
        for (k, r) in regs.iter().take(1000).enumerate() {
            rls.step(r);
            if k + 1 == 100 {
                let e = relative_errors(rls.theta(), &truth);
                early.push(e[0].hypot(e[1]));
            }
        }
        let e = relative_errors(rls.theta(), &truth);
        late.push(e[0].max(e[1]));
    }
    let m = median(late.clone());
    assert!(m <= 0.02, "median worst-axis error {m}");
    assert!(m <= median(early), "error grew between step 100 and 1000");
}

#[test]
fn unit_forgetting_matches_batch_least_squares() {
    let cfg = Config::default();
    let regs = regressions(&cfg, &clean_samples(&cfg, 6.0), 0.01, 7);
    let theta0 = [6.0e4, 6.0e4];
    let p0 = 1e12;
    let mut rls = Rls::new(RlsConfig { fixed_lambda: Some(1.0), initial_variance: p0, ..Default::default() }, &theta0);
    // batch solution of the same problem including the prior term
    let mut normal = DMatrix::<f64>::identity(2, 2) / p0;
    let mut rhs = DVector::from_column_slice(&theta0) / p0;
    for r in &regs {
        rls.step(r);
        normal += r.phi.transpose() * &r.phi;
        rhs += r.phi.transpose() * &r.y;
    }
    let batch = normal.lu().solve(&rhs).unwrap();
    for i in 0..2 {
        let rel = ((rls.theta()[i] - batch[i]) / batch[i]).abs();
        assert!(rel < 1e-6, "axis {i}: recursive {} batch {} rel {rel}", rls.theta()[i], batch[i]);
    }
}
