//! Shared numerical kernels: fixed-step integration, Riccati and Lyapunov
//! solvers, a small barrier-method LMI solver and derivative-free searches.

mod care;
mod ode;
mod optim;
mod sdp;

pub use care::{closed_loop_is_hurwitz, care_residual, solve_care, solve_dare, solve_lyapunov};
pub use ode::integrate_rk4;
pub use optim::{golden_section_min, nelder_mead, NelderMeadOptions};
pub use sdp::{robust_block, solve_lmi, LmiSolution, SdpProblem, SdpOutcome};

use nalgebra::DMatrix;
use thiserror::Error;

/// Dense real matrix used for every system matrix in the crate.
pub type Mat = DMatrix<f64>;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum NumericsError {
    #[error("non-finite derivative component {component}: {value}")]
    Integration { component: usize, value: f64 },
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("dimension mismatch: {0}")]
    Dimension(String),
    #[error("synthesis failed: {0}")]
    Synthesis(String),
}

pub type Result<T> = std::result::Result<T, NumericsError>;

pub(crate) fn ensure_square(m: &Mat, name: &str) -> Result<usize> {
    if m.nrows() == 0 || m.nrows() != m.ncols() {
        return Err(NumericsError::Dimension(format!(
            "{name} must be square and non-empty, got {}x{}",
            m.nrows(),
            m.ncols()
        )));
    }
    Ok(m.nrows())
}

pub(crate) fn ensure_finite(m: &Mat, name: &str) -> Result<()> {
    if m.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(NumericsError::InvalidArgument(format!("{name} has non-finite entries")))
    }
}

/// `(M + Mᵀ)/2`.
pub fn symmetrize(m: &Mat) -> Mat {
    (m + m.transpose()) * 0.5
}

/// Largest eigenvalue of a symmetric matrix.
pub fn max_sym_eigenvalue(m: &Mat) -> f64 {
    symmetrize(m)
        .symmetric_eigenvalues()
        .iter()
        .copied()
        .fold(f64::NEG_INFINITY, f64::max)
}

/// Smallest eigenvalue of a symmetric matrix.
pub fn min_sym_eigenvalue(m: &Mat) -> f64 {
    symmetrize(m)
        .symmetric_eigenvalues()
        .iter()
        .copied()
        .fold(f64::INFINITY, f64::min)
}

/// Spectral radius of a general square matrix.
pub fn spectral_radius(m: &Mat) -> f64 {
    m.complex_eigenvalues()
        .iter()
        .map(|z| z.norm())
        .fold(0.0, f64::max)
}
