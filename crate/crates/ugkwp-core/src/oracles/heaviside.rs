//! Closed-form steady solution of the pure-absorber slab with a unit
//! per-angle source on x > 1/2, zero inflow on the left and `1/sigma` inflow
//! on the right. Domain is the unit interval.

use crate::error::{Error, Result};
use crate::quad;

/// Angular flux of the steady Heaviside-source problem.
///
/// `xi = 0` sits between the decaying and saturated branches and is rejected.
pub fn phi(x: f64, xi: f64, sigma: f64) -> Result<f64> {
    if xi == 0.0 {
        return Err(Error::numerics("heaviside phi is undefined at xi = 0"));
    }
    let u = -sigma * (x - 0.5) / xi;
    Ok(if xi < 0.0 {
        if x <= 0.5 {
            u.exp() / sigma
        } else {
            1.0 / sigma
        }
    } else if x <= 0.5 {
        0.0
    } else {
        (1.0 - u.exp()) / sigma
    })
}

/// Scalar flux approximated with the same Gauss-Legendre nodes the
/// deterministic solver uses, so discrete solutions can be compared
/// node-for-node.
pub fn psi_reference(x: f64, n: usize, sigma: f64) -> f64 {
    let (mu, w) = quad::gauss_legendre(n);
    mu.iter()
        .zip(&w)
        .map(|(&m, &wk)| wk * phi(x, m, sigma).expect("nonzero node"))
        .sum()
}
