//! Exact time-dependent solution on the periodic unit slab with a forcing
//! term chosen so that `phi_exact` solves the single-group transport equation
//! for any total/scattering cross-section pair.

use std::f64::consts::PI;

/// Angular flux `phi(x, xi, t) = xi^2 cos^4(pi (x+t)) + 1`.
pub fn phi_exact(x: f64, xi: f64, t: f64) -> f64 {
    let c = (PI * (x + t)).cos();
    xi * xi * c.powi(4) + 1.0
}

/// Scalar flux `psi = int_{-1}^{1} phi dxi = (2/3) cos^4(pi (x+t)) + 2`.
pub fn psi_exact(x: f64, t: f64) -> f64 {
    let c = (PI * (x + t)).cos();
    2.0 / 3.0 * c.powi(4) + 2.0
}

/// Per-angle forcing that makes `phi_exact` satisfy
/// `d_t phi + xi d_x phi = (sigma_s/2) psi + q - sigma phi` (v = 1).
pub fn forcing(x: f64, xi: f64, t: f64, sigma: f64, sigma_s: f64) -> f64 {
    let a = PI * (x + t);
    let (s, c) = a.sin_cos();
    -4.0 * PI * xi * xi * (1.0 + xi) * c.powi(3) * s
        + (xi * xi * sigma - sigma_s / 3.0) * c.powi(4)
        + (sigma - sigma_s)
}

/// Convenience bundle returning `(phi, psi, q)` at one phase point.
pub fn fields(x: f64, xi: f64, t: f64, sigma: f64, sigma_s: f64) -> (f64, f64, f64) {
    (
        phi_exact(x, xi, t),
        psi_exact(x, t),
        forcing(x, xi, t, sigma, sigma_s),
    )
}
