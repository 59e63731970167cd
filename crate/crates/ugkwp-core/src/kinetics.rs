//! Interface flux coefficients, source moments, limited reconstruction and
//! the time-step rule shared by every solver mode.
//!
//! All macroscopic face formulas are written at the angular-integrated
//! level, where the 1-D slab and 3-D isotropic conventions coincide: a
//! value jump across a face contributes `c * v * (left - right) / 4` and
//! an upwinded slope pair contributes `c * v^2 * (slope_l + slope_r) / 6`.

use crate::error::{Error, Result};
use crate::geometry::{MaterialMap, StructuredMesh};
use crate::xs::CrossSectionSet;

/// Relaxation inputs for one cell, group and step.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RelaxationParams {
    pub tau: f64,
    pub dt: f64,
}

/// Time-integrated interface flux coefficients over one step.
///
/// `a0 = exp(-dt/tau)`, `a1 = 1 - a0`; `c1..c3` weight the local
/// equilibrium source and its time and space derivatives, `c4..c5` weight
/// the transported initial distribution, and `c0 = dt / a1` is the
/// equivalent closure time. `c1 + c4 = 1` holds identically.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FluxCoefficients {
    pub a0: f64,
    pub a1: f64,
    pub c0: f64,
    pub c1: f64,
    pub c2: f64,
    pub c3: f64,
    pub c4: f64,
    pub c5: f64,
}

pub fn compute_coefficients(p: RelaxationParams) -> FluxCoefficients {
    let RelaxationParams { tau, dt } = p;
    debug_assert!(tau > 0.0 && dt > 0.0);
    let r = dt / tau;
    let a0 = (-r).exp();
    let a1 = -(-r).exp_m1();
    if r < 1e-5 {
        // Series in r; the closed forms lose all digits to cancellation
        // here. `tau * r^k` is written as `dt * r^(k-1)` so the expressions
        // stay finite for true voids (sigma = 0, tau = infinity, r = 0).
        let c1 = r * (0.5 - r / 6.0 + r * r / 24.0 - r * r * r / 120.0);
        let c2 = dt * r * (1.0 / 6.0 - r / 24.0 + r * r / 120.0 - r * r * r / 720.0);
        let c3 = dt * r * (-1.0 / 6.0 + r / 12.0 - r * r / 40.0);
        let c5 = dt * (-0.5 + r / 3.0 - r * r / 8.0 + r * r * r / 30.0);
        return FluxCoefficients {
            a0,
            a1,
            c0: dt / a1,
            c1,
            c2,
            c3,
            c4: 1.0 - c1,
            c5,
        };
    }
    let c4 = tau * a1 / dt;
    let c1 = 1.0 - c4;
    let c2 = 0.5 * dt - tau * c1;
    let c3 = tau * (2.0 * c4 - a0 - 1.0);
    let c5 = tau * (a0 - c4);
    FluxCoefficients {
        a0,
        a1,
        c0: dt / a1,
        c1,
        c2,
        c3,
        c4,
        c5,
    }
}

/// Upwind source data on one face, at the angular-integrated level:
/// reconstructed edge values from both sides, their time derivatives, and
/// the two half-cell slopes feeding the second-order term.
#[derive(Debug, Clone, Copy, Default)]
pub struct SourceMoments {
    pub left: f64,
    pub right: f64,
    pub dt_left: f64,
    pub dt_right: f64,
    /// `(edge_left - center_left) / (dx/2)`
    pub slope_left: f64,
    /// `(center_right - edge_right) / (dx/2)`
    pub slope_right: f64,
}

impl SourceMoments {
    /// Angular-integrated equilibrium flux through the face, positive along
    /// the axis: `c1 v (L - R)/4 + c2 v (dtL - dtR)/4 + c3 v^2 (sL + sR)/6`.
    #[inline]
    pub fn face_flux(&self, c: &FluxCoefficients, v: f64) -> f64 {
        self.face_flux_sided(c, v, 1.0, 1.0)
    }

    /// Same flux with per-side activity factors; a domain face with nothing
    /// incoming (vacuum, inflow handled by particles) zeroes the exterior
    /// half-range.
    #[inline]
    pub fn face_flux_sided(
        &self,
        c: &FluxCoefficients,
        v: f64,
        active_l: f64,
        active_r: f64,
    ) -> f64 {
        0.25 * v
            * (c.c1 * (self.left * active_l - self.right * active_r)
                + c.c2 * (self.dt_left * active_l - self.dt_right * active_r))
            + c.c3 * v * v * (self.slope_left * active_l + self.slope_right * active_r) / 6.0
    }
}

/// Van Leer limited slope from the three cell averages around `u0`.
#[inline]
pub fn van_leer_slope(um: f64, u0: f64, up: f64, dx: f64) -> f64 {
    let a = (u0 - um) / dx;
    let b = (up - u0) / dx;
    let ab = a * b;
    if ab > 0.0 {
        2.0 * ab / (a + b)
    } else {
        0.0
    }
}

/// Limited slopes for a 1-D array with one ghost value on each end:
/// `u.len() == n + 2`, returns `n` slopes.
pub fn reconstruct_limited(u: &[f64], dx: f64) -> Vec<f64> {
    assert!(u.len() >= 3);
    (1..u.len() - 1)
        .map(|i| van_leer_slope(u[i - 1], u[i], u[i + 1], dx))
        .collect()
}

/// Per-interface source moments from cell-center values `g` (with one ghost
/// on each end), their limited slopes, and the backward-difference time
/// derivatives `dgdt` (same layout). Interface `f` sits between ghosted
/// cells `f` and `f + 1`; there are `n + 1` interfaces.
pub fn interface_source_derivatives(
    g: &[f64],
    dgdt: &[f64],
    slopes_ghosted: &[f64],
    dx: f64,
) -> Vec<SourceMoments> {
    let n2 = g.len();
    assert_eq!(dgdt.len(), n2);
    assert_eq!(slopes_ghosted.len(), n2);
    let half = 0.5 * dx;
    (0..n2 - 1)
        .map(|i| {
            let left = g[i] + half * slopes_ghosted[i];
            let right = g[i + 1] - half * slopes_ghosted[i + 1];
            SourceMoments {
                left,
                right,
                dt_left: dgdt[i],
                dt_right: dgdt[i + 1],
                slope_left: (left - g[i]) / half,
                slope_right: (g[i + 1] - right) / half,
            }
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DtPolicy {
    /// Reference cross section = the domain maximum (default; resolves the
    /// thickest material's diffusive limit).
    MaxSigma,
    /// Reference cross section = the domain minimum.
    MinSigma,
    /// Caller-specified step, no CFL logic.
    Fixed,
}

/// `dt = cfl * min_g min(delta / v_g, 3 delta^2 sigma_ref_g v_g^-1 / 2)`
/// with `delta` the smallest cell spacing and `sigma_ref` chosen per
/// policy over the painted cells.
pub fn compute_dt(
    mesh: &StructuredMesh,
    map: &MaterialMap,
    xs: &CrossSectionSet,
    policy: DtPolicy,
    cfl: f64,
    fixed: Option<f64>,
) -> Result<f64> {
    if let DtPolicy::Fixed = policy {
        return fixed.ok_or_else(|| Error::config("dt_policy `fixed` needs an explicit dt"));
    }
    let delta = mesh.min_spacing();
    let mut dt = f64::INFINITY;
    for g in 0..xs.groups {
        let mut sigma_ref: Option<f64> = None;
        let mut v_max = 0.0f64;
        for &id in &map.ids {
            let m = xs.at(id);
            let s = m.sigma_t[g];
            sigma_ref = Some(match (sigma_ref, policy) {
                (None, _) => s,
                (Some(cur), DtPolicy::MaxSigma) => cur.max(s),
                (Some(cur), DtPolicy::MinSigma) => cur.min(s),
                (Some(cur), DtPolicy::Fixed) => cur,
            });
            v_max = v_max.max(m.v[g]);
        }
        let sigma_ref = sigma_ref.expect("non-empty material map");
        let streaming = delta / v_max;
        // A transparent reference material has no diffusive scale.
        let diffusive = if sigma_ref > 0.0 {
            1.5 * delta * delta * sigma_ref / v_max
        } else {
            f64::INFINITY
        };
        dt = dt.min(streaming.min(diffusive));
    }
    Ok(cfl * dt)
}
