use super::{NumericsError, Result};

/// One classical fourth-order Runge–Kutta step of `ẋ = deriv(x)`.
///
/// Every stage derivative is checked for finiteness; the first offending
/// component is reported in the error.
pub fn integrate_rk4<const N: usize, F>(mut deriv: F, x0: &[f64; N], dt: f64) -> Result<[f64; N]>
where
    F: FnMut(&[f64; N]) -> [f64; N],
{
    if !(dt > 0.0 && dt.is_finite()) {
        return Err(NumericsError::InvalidArgument(format!("dt must be positive, got {dt}")));
    }
    let mut stage = |x: &[f64; N]| -> Result<[f64; N]> {
        let k = deriv(x);
        match k.iter().position(|v| !v.is_finite()) {
            Some(component) => Err(NumericsError::Integration { component, value: k[component] }),
            None => Ok(k),
        }
    };
    let offset = |x: &[f64; N], k: &[f64; N], h: f64| -> [f64; N] {
        let mut out = *x;
        for i in 0..N {
            out[i] += h * k[i];
        }
        out
    };

    let k1 = stage(x0)?;
    let k2 = stage(&offset(x0, &k1, 0.5 * dt))?;
    let k3 = stage(&offset(x0, &k2, 0.5 * dt))?;
    let k4 = stage(&offset(x0, &k3, dt))?;

    let mut out = *x0;
    for i in 0..N {
        out[i] += dt / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]);
    }
    Ok(out)
}
