use nalgebra::linalg::SVD;

use super::{ensure_finite, ensure_square, symmetrize, Mat, NumericsError, Result};

const SIGN_MAX_ITERS: usize = 100;
const KLEINMAN_MAX_ITERS: usize = 8;

/// Residual `‖AᵀP + PA + Q − PBR⁻¹BᵀP‖_F`.
pub fn care_residual(a: &Mat, b: &Mat, q: &Mat, r: &Mat, p: &Mat) -> f64 {
    let r_inv = match r.clone().try_inverse() {
        Some(m) => m,
        None => return f64::INFINITY,
    };
    let res = a.transpose() * p + p * a + q - p * b * r_inv * b.transpose() * p;
    res.norm()
}

pub fn closed_loop_is_hurwitz(a_cl: &Mat) -> bool {
    a_cl.complex_eigenvalues().iter().all(|z| z.re < 0.0)
}

/// Solves `AᵀX + XA + C = 0` through the Kronecker-product form.
pub fn solve_lyapunov(a: &Mat, c: &Mat) -> Result<Mat> {
    let n = ensure_square(a, "A")?;
    if c.shape() != (n, n) {
        return Err(NumericsError::Dimension(format!("C must be {n}x{n}")));
    }
    let eye = Mat::identity(n, n);
    let at = a.transpose();
    let op = eye.kronecker(&at) + at.kronecker(&eye);
    let rhs = -Mat::from_column_slice(n * n, 1, c.as_slice());
    let x = op
        .lu()
        .solve(&rhs)
        .ok_or_else(|| NumericsError::Synthesis("singular Lyapunov operator".into()))?;
    Ok(symmetrize(&Mat::from_column_slice(n, n, x.as_slice())))
}

/// Stabilizing solution of the continuous algebraic Riccati equation
/// `AᵀP + PA + Q − PBR⁻¹BᵀP = 0`.
///
/// The stable invariant subspace of the Hamiltonian `[[A, −S], [−Q, −Aᵀ]]`
/// is extracted with the scaled Newton iteration for the matrix sign
/// function, then polished with Newton–Kleinman steps.
pub fn solve_care(a: &Mat, b: &Mat, q: &Mat, r: &Mat) -> Result<Mat> {
    let n = ensure_square(a, "A")?;
    let m = ensure_square(r, "R")?;
    if b.shape() != (n, m) {
        return Err(NumericsError::Dimension(format!("B must be {n}x{m}, got {:?}", b.shape())));
    }
    if q.shape() != (n, n) {
        return Err(NumericsError::Dimension(format!("Q must be {n}x{n}")));
    }
    for (mat, name) in [(a, "A"), (b, "B"), (q, "Q"), (r, "R")] {
        ensure_finite(mat, name)?;
    }
    if symmetrize(r).cholesky().is_none() {
        return Err(NumericsError::InvalidArgument("R must be positive definite".into()));
    }
    let r_inv = r.clone().try_inverse().expect("R is positive definite");
    let s = b * &r_inv * b.transpose();

    let mut h = Mat::zeros(2 * n, 2 * n);
    h.view_mut((0, 0), (n, n)).copy_from(a);
    h.view_mut((0, n), (n, n)).copy_from(&(-&s));
    h.view_mut((n, 0), (n, n)).copy_from(&(-q));
    h.view_mut((n, n), (n, n)).copy_from(&(-a.transpose()));

    let w = matrix_sign(&h)?;
    let eye = Mat::identity(n, n);
    let mut lhs = Mat::zeros(2 * n, n);
    lhs.view_mut((0, 0), (n, n)).copy_from(&w.view((0, n), (n, n)));
    lhs.view_mut((n, 0), (n, n)).copy_from(&(w.view((n, n), (n, n)) + &eye));
    let mut rhs = Mat::zeros(2 * n, n);
    rhs.view_mut((0, 0), (n, n)).copy_from(&(-(w.view((0, 0), (n, n)) + &eye)));
    rhs.view_mut((n, 0), (n, n)).copy_from(&(-w.view((n, 0), (n, n))));

    let svd = SVD::new(lhs, true, true);
    let smax = svd.singular_values.max();
    let smin = svd.singular_values.min();
    if !(smin > 1e-12 * smax.max(1.0)) {
        return Err(NumericsError::Synthesis(
            "Hamiltonian stable subspace is not a graph; pair not stabilizable".into(),
        ));
    }
    let mut p = symmetrize(
        &svd.solve(&rhs, 1e-14)
            .map_err(|e| NumericsError::Synthesis(format!("subspace solve failed: {e}")))?,
    );

    // Newton–Kleinman refinement from the (stabilizing) sign-function estimate.
    let scale = 1.0 + p.norm();
    for _ in 0..KLEINMAN_MAX_ITERS {
        if care_residual(a, b, q, r, &p) <= 1e-13 * scale {
            break;
        }
        let k = &r_inv * b.transpose() * &p;
        let a_cl = a - b * &k;
        if !closed_loop_is_hurwitz(&a_cl) {
            break;
        }
        let c = q + k.transpose() * r * &k;
        p = solve_lyapunov(&a_cl, &c)?;
    }

    let k = &r_inv * b.transpose() * &p;
    if !closed_loop_is_hurwitz(&(a - b * k)) {
        return Err(NumericsError::Synthesis("no stabilizing Riccati solution".into()));
    }
    if !p.iter().all(|v| v.is_finite()) {
        return Err(NumericsError::Synthesis("non-finite Riccati solution".into()));
    }
    Ok(p)
}

fn matrix_sign(h: &Mat) -> Result<Mat> {
    let dim = h.nrows();
    let mut z = h.clone();
    let mut scaling = true;
    for _ in 0..SIGN_MAX_ITERS {
        let det = z.determinant();
        let z_inv = z
            .clone()
            .try_inverse()
            .ok_or_else(|| NumericsError::Synthesis("Hamiltonian has eigenvalues on the imaginary axis".into()))?;
        let c = if scaling && det.is_finite() && det != 0.0 {
            det.abs().powf(1.0 / dim as f64)
        } else {
            1.0
        };
        let next = (&z / c + z_inv * c) * 0.5;
        let change = (&next - &z).norm();
        let size = next.norm();
        if !size.is_finite() {
            return Err(NumericsError::Synthesis("sign iteration diverged".into()));
        }
        z = next;
        if change <= 1e-2 * size {
            scaling = false;
        }
        if change <= 1e-13 * size {
            return Ok(z);
        }
    }
    Err(NumericsError::Synthesis("sign iteration did not converge".into()))
}

/// Stabilizing solution of the discrete algebraic Riccati equation
/// `P = AᵀPA − AᵀPB(R + BᵀPB)⁻¹BᵀPA + Q`, by structure-preserving doubling.
pub fn solve_dare(a: &Mat, b: &Mat, q: &Mat, r: &Mat) -> Result<Mat> {
    let n = ensure_square(a, "A")?;
    let m = ensure_square(r, "R")?;
    if b.shape() != (n, m) || q.shape() != (n, n) {
        return Err(NumericsError::Dimension("inconsistent DARE operands".into()));
    }
    let r_inv = r
        .clone()
        .try_inverse()
        .ok_or_else(|| NumericsError::InvalidArgument("R must be invertible".into()))?;
    let eye = Mat::identity(n, n);
    let mut ak = a.clone();
    let mut gk = b * r_inv * b.transpose();
    let mut hk = q.clone();
    for _ in 0..60 {
        let w = (&eye + &gk * &hk)
            .try_inverse()
            .ok_or_else(|| NumericsError::Synthesis("doubling step singular".into()))?;
        let a_next = &ak * &w * &ak;
        let g_next = &gk + &ak * &w * &gk * ak.transpose();
        let h_next = &hk + ak.transpose() * &hk * &w * &ak;
        let change = (&h_next - &hk).norm();
        ak = a_next;
        gk = g_next;
        hk = symmetrize(&h_next);
        if !hk.iter().all(|v| v.is_finite()) {
            break;
        }
        if change <= 1e-12 * (1.0 + hk.norm()) {
            let p = hk;
            let k = (r + b.transpose() * &p * b)
                .try_inverse()
                .ok_or_else(|| NumericsError::Synthesis("singular DARE gain".into()))?
                * b.transpose()
                * &p
                * a;
            if super::spectral_radius(&(a - b * k)) >= 1.0 {
                return Err(NumericsError::Synthesis("DARE solution not stabilizing".into()));
            }
            return Ok(p);
        }
    }
    Err(NumericsError::Synthesis("DARE doubling did not converge".into()))
}
