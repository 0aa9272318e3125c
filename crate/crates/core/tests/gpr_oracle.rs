use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use robust_track::gpr::{build_envelopes, rbf, EnvelopeSample, FitOptions, Gpr, Grid, Hyperparameters};

fn random_data(rng: &mut ChaCha8Rng, n: usize, dim: usize) -> (Vec<Vec<f64>>, Vec<f64>) {
    let x: Vec<Vec<f64>> = (0..n).map(|_| (0..dim).map(|_| rng.gen_range(-2.0..2.0)).collect()).collect();
    let y = x.iter().map(|r| r.iter().map(|v| v.sin()).sum::<f64>() + rng.gen_range(-0.1..0.1)).collect();
    (x, y)
}

/// Posterior from an explicitly inverted Gram matrix.
fn direct_posterior(x: &[Vec<f64>], y: &[f64], hyper: &Hyperparameters, jitter: f64, x_star: &[f64]) -> (f64, f64) {
    let n = x.len();
    let gram = DMatrix::from_fn(n, n, |i, j| rbf(&x[i], &x[j], hyper) + if i == j { hyper.noise_variance + jitter } else { 0.0 });
    let inv = gram.try_inverse().unwrap();
    let k = DVector::from_iterator(n, x.iter().map(|xi| rbf(x_star, xi, hyper)));
    let mean = (k.transpose() * &inv * DVector::from_column_slice(y))[0];
    let var = hyper.signal_variance - (k.transpose() * &inv * &k)[0];
    (mean, var)
}

#[test]
fn posterior_matches_gram_matrix_oracle() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for trial in 0..30 {
        let n = rng.gen_range(1..=50);
        let dim = rng.gen_range(1..=4);
        let (x, y) = random_data(&mut rng, n, dim);
        let hyper = Hyperparameters {
            length_scale: rng.gen_range(0.3..2.0),
            signal_variance: rng.gen_range(0.5..2.0),
            noise_variance: rng.gen_range(1e-3..1e-1),
        };
        let gp = Gpr::with_hyperparameters(x.clone(), y.clone(), hyper).unwrap();
        for _ in 0..10 {
            let x_star: Vec<f64> = (0..dim).map(|_| rng.gen_range(-3.0..3.0)).collect();
            let (mean, var) = direct_posterior(&x, &y, &hyper, gp.jitter(), &x_star);
            let p = gp.predict(&x_star);
            assert!((p.mean - mean).abs() <= 1e-10, "trial {trial}: mean {} vs {mean}", p.mean);
            assert!((p.variance - var.max(0.0)).abs() <= 1e-10, "trial {trial}: variance {} vs {var}", p.variance);
        }
    }
}

#[test]
fn variance_is_never_negative() {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let (x, y) = random_data(&mut rng, 40, 2);
    let gp = Gpr::with_hyperparameters(x.clone(), y, Hyperparameters { length_scale: 1.5, signal_variance: 1.0, noise_variance: 1e-8 }).unwrap();
    for xi in &x {
        assert!(gp.predict(xi).variance >= 0.0);
    }
    for _ in 0..200 {
        let x_star = vec![rng.gen_range(-4.0..4.0), rng.gen_range(-4.0..4.0)];
        assert!(gp.predict(&x_star).variance >= 0.0);
    }
}

#[test]
fn mean_is_linear_in_targets() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let (x, y1) = random_data(&mut rng, 25, 3);
    let (_, y2) = random_data(&mut rng, 25, 3);
    let hyper = Hyperparameters { length_scale: 0.8, signal_variance: 1.2, noise_variance: 0.05 };
    let (a, b) = (2.5, -0.7);
    let combined: Vec<f64> = y1.iter().zip(&y2).map(|(u, v)| a * u + b * v).collect();
    let g1 = Gpr::with_hyperparameters(x.clone(), y1, hyper).unwrap();
    let g2 = Gpr::with_hyperparameters(x.clone(), y2, hyper).unwrap();
    let g = Gpr::with_hyperparameters(x, combined, hyper).unwrap();
    for _ in 0..20 {
        let x_star: Vec<f64> = (0..3).map(|_| rng.gen_range(-2.0..2.0)).collect();
        let lhs = g.predict(&x_star).mean;
        let rhs = a * g1.predict(&x_star).mean + b * g2.predict(&x_star).mean;
        assert!((lhs - rhs).abs() < 1e-10);
    }
}

#[test]
fn fitted_envelope_covers_held_out_mismatch() {
    // smooth "true" dynamics against a biased nominal model, with bounded noise
    let truth = |x: &[f64]| 1.3 * x[0].sin() + 0.4 * x[1];
    let nominal = |x: &[f64]| x[0] + 0.4 * x[1];
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    let mut draw = |n: usize| -> Vec<(Vec<f64>, f64)> {
        (0..n)
            .map(|_| {
                let x = vec![rng.gen_range(-1.5..1.5), rng.gen_range(-1.0..1.0)];
                let y = truth(&x) + rng.gen_range(-0.05..0.05);
                (x, y)
            })
            .collect()
    };
    let train = draw(200);
    let envelope_set = draw(400);
    let held_out = draw(400);
    let xs: Vec<Vec<f64>> = train.iter().map(|(x, _)| x.clone()).collect();
    let ys: Vec<f64> = train.iter().map(|(_, y)| *y).collect();
    let gp = Gpr::fit(&xs, &ys, &FitOptions::default()).unwrap();
    let sample = |(x, y): &(Vec<f64>, f64)| EnvelopeSample {
        x: x.clone(),
        gpr: gp.predict(x).mean,
        nominal: nominal(x),
        truth: *y,
    };
    let grid = Grid::new(vec![-1.5, -1.0], vec![1.5, 1.0], vec![6, 4]);
    let table = build_envelopes(&envelope_set.iter().map(sample).collect::<Vec<_>>(), grid, 1.0, 1.0).unwrap();
    let coverage = table.coverage(&held_out.iter().map(sample).collect::<Vec<_>>());
    assert!(coverage >= 0.95, "coverage {coverage}");
}
