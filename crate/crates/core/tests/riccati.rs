use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use robust_track::numerics::{care_residual, closed_loop_is_hurwitz, solve_care, solve_dare, spectral_radius, Mat};

fn random_matrix(rng: &mut ChaCha8Rng, rows: usize, cols: usize, scale: f64) -> Mat {
    Mat::from_fn(rows, cols, |_, _| rng.gen_range(-scale..scale))
}

fn random_spd(rng: &mut ChaCha8Rng, n: usize) -> Mat {
    let c = random_matrix(rng, n, n, 1.0);
    c.transpose() * &c + Mat::identity(n, n) * 0.1
}

/// Random `(A, B, Q, R)` with a generic full-column `B`, so the pair is
/// controllable with probability one.
fn random_system(rng: &mut ChaCha8Rng) -> (Mat, Mat, Mat, Mat) {
    let n = rng.gen_range(1..=6);
    let m = rng.gen_range(1..=n.min(3));
    let a = random_matrix(rng, n, n, 2.0);
    let b = random_matrix(rng, n, m, 1.0);
    (a, b, random_spd(rng, n), random_spd(rng, m))
}

#[test]
fn continuous_riccati_residual_on_random_systems() {
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let systems: Vec<_> = (0..100).map(|_| random_system(&mut rng)).collect();
    let started = Instant::now();
    let mut worst = 0.0f64;
    for (a, b, q, r) in &systems {
        let p = solve_care(a, b, q, r).unwrap();
        let rel = care_residual(a, b, q, r, &p) / (1.0 + p.norm());
        worst = worst.max(rel);
        assert!(rel <= 1e-8, "relative residual {rel:e} for n = {}", a.nrows());
        let k = r.clone().try_inverse().unwrap() * b.transpose() * &p;
        assert!(closed_loop_is_hurwitz(&(a - b * k)), "closed loop not stable");
    }
    let elapsed = started.elapsed().as_secs_f64();
    assert!(elapsed < 1.0, "100 solves took {elapsed:.3} s");
    println!("worst relative residual {worst:e}, {elapsed:.3} s");
}

#[test]
fn solution_is_symmetric_positive_semidefinite() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    for _ in 0..20 {
        let (a, b, q, r) = random_system(&mut rng);
        let p = solve_care(&a, &b, &q, &r).unwrap();
        assert!((&p - p.transpose()).norm() <= 1e-10 * (1.0 + p.norm()));
        assert!(p.clone().symmetric_eigenvalues().iter().all(|&l| l > -1e-9 * (1.0 + p.norm())));
    }
}

#[test]
fn scalar_system_matches_closed_form() {
    // a·p·2 + q − p²b²/r = 0  →  p = r(a + √(a² + b²q/r))/b²
    for (a, b, q, r) in [(1.0, 1.0, 1.0, 1.0), (-2.0, 0.5, 3.0, 0.2), (0.3, 2.0, 0.1, 5.0)] {
        let p = solve_care(&Mat::from_element(1, 1, a), &Mat::from_element(1, 1, b), &Mat::from_element(1, 1, q), &Mat::from_element(1, 1, r))
            .unwrap()[(0, 0)];
        let exact = r * (a + (a * a + b * b * q / r).sqrt()) / (b * b);
        assert!((p - exact).abs() <= 1e-10 * exact.abs().max(1.0), "{p} vs {exact}");
    }
}

#[test]
fn discrete_riccati_stabilizes_random_systems() {
    let mut rng = ChaCha8Rng::seed_from_u64(99);
    for _ in 0..50 {
        let (a, b, q, r) = random_system(&mut rng);
        let a = a * 0.5;
        let p = solve_dare(&a, &b, &q, &r).unwrap();
        let gain_inv = (&r + b.transpose() * &p * &b).try_inverse().unwrap();
        let res = a.transpose() * &p * &a - &p + &q - a.transpose() * &p * &b * &gain_inv * b.transpose() * &p * &a;
        assert!(res.norm() <= 1e-8 * (1.0 + p.norm()), "DARE residual {}", res.norm());
        let k = gain_inv * b.transpose() * &p * &a;
        assert!(spectral_radius(&(&a - &b * k)) < 1.0);
    }
}
