//! Power iteration for k-eigenvalue problems.
//!
//! The transient solver is marched with a frozen fission source
//! `chi_g * sum_g' nu_sigma_f_g' psi_g' / k`, refreshed every step. A
//! stationary point of that march satisfies the k-eigenvalue balance on
//! the discrete operators, so the loop is plain power iteration with the
//! transport step as the inner solve. After each step the field is
//! renormalized to a fixed production level; the eigenvalue guess absorbs
//! the growth ratio instead.
//!
//! Particle-mode runs give noisy per-step ratios, so the estimate is
//! reported as the mean over the trailing statistics windows and its
//! standard error. Deterministic runs collapse the same machinery: the
//! window means agree to machine precision and the quoted error is ~0.

use crate::config::Problem;
use crate::error::{Error, Result};
use crate::solver::{FissionTreatment, TransportSolver};

#[derive(Debug, Clone)]
pub struct EigenOptions {
    /// Pseudo-time step for the inner transport march.
    pub dt: f64,
    /// Steps per statistics window.
    pub window: usize,
    /// Leading windows excluded from statistics while the source shape
    /// converges.
    pub discard: usize,
    /// Trailing windows that form the estimate and its standard error.
    pub stat_windows: usize,
    /// Converged when both the standard error and the drift between the
    /// last two window means fall below this.
    pub tol_k: f64,
    pub max_steps: u64,
}

impl Default for EigenOptions {
    fn default() -> Self {
        EigenOptions {
            dt: 0.0,
            window: 200,
            discard: 2,
            stat_windows: 5,
            tol_k: 1e-5,
            max_steps: 200_000,
        }
    }
}

#[derive(Debug, Clone)]
pub struct EigenResult {
    pub k_eff: f64,
    /// Standard error of the window means behind `k_eff`.
    pub sigma_k: f64,
    pub steps: u64,
    pub windows: usize,
    pub converged: bool,
    /// Final field, normalized to the flat-start production level.
    pub psi: Vec<f64>,
    /// Per-window means of the running eigenvalue.
    pub k_trace: Vec<f64>,
}

/// Static reactivity in pcm, `(k - 1)/k * 1e5`.
pub fn reactivity_pcm(k: f64) -> f64 {
    (k - 1.0) / k * 1e5
}

fn production(problem: &Problem, psi: &[f64]) -> f64 {
    let gg = problem.groups;
    let mut p = 0.0;
    for c in 0..problem.mesh.cell_count() {
        let m = problem.material(c);
        for g in 0..gg {
            p += m.nu_sigma_f[g] * psi[c * gg + g];
        }
    }
    p
}

fn emission(problem: &Problem, psi: &[f64], k: f64) -> Vec<f64> {
    let gg = problem.groups;
    let nc = problem.mesh.cell_count();
    let mut e = vec![0.0; nc * gg];
    for c in 0..nc {
        let m = problem.material(c);
        let mut f = 0.0;
        for g in 0..gg {
            f += m.nu_sigma_f[g] * psi[c * gg + g];
        }
        if f != 0.0 {
            for g in 0..gg {
                e[c * gg + g] = m.chi[g] * f / k;
            }
        }
    }
    e
}

fn mean_and_se(tail: &[f64]) -> (f64, f64) {
    let n = tail.len() as f64;
    let mean = tail.iter().sum::<f64>() / n;
    if tail.len() < 2 {
        return (mean, f64::NAN);
    }
    let var = tail.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, (var / n).sqrt())
}

pub fn power_iteration(
    solver: &mut dyn TransportSolver,
    problem: &Problem,
    opts: &EigenOptions,
) -> Result<EigenResult> {
    if !(opts.dt > 0.0 && opts.dt.is_finite()) {
        return Err(Error::config(format!("bad eigen step {}", opts.dt)));
    }
    if opts.window == 0 || opts.stat_windows < 2 {
        return Err(Error::config(
            "need window >= 1 and at least 2 statistics windows",
        ));
    }
    let gg = problem.groups;
    let nc = problem.mesh.cell_count();

    // Flat start over the fissile region, unit level in every group.
    let mut psi0 = vec![0.0; nc * gg];
    let mut fissile = false;
    for c in 0..nc {
        if problem.material(c).nu_sigma_f.iter().any(|&f| f > 0.0) {
            fissile = true;
            psi0[c * gg..(c + 1) * gg].fill(1.0);
        }
    }
    if !fissile {
        return Err(Error::config("no fissile material on the mesh"));
    }
    solver.reset_field(&psi0)?;
    let p_target = production(problem, &psi0);

    let mut k = 1.0f64;
    let mut window_means: Vec<f64> = Vec::new();
    let mut acc = 0.0;
    let mut in_window = 0usize;
    let mut steps = 0u64;
    let mut converged = false;

    while steps < opts.max_steps {
        solver.set_fission(FissionTreatment::Frozen {
            emission: emission(problem, solver.psi(), k),
        });
        solver.step(opts.dt)?;
        steps += 1;
        let p_new = production(problem, solver.psi());
        if !(p_new > 0.0 && p_new.is_finite()) {
            return Err(Error::numerics(format!(
                "fission production went to {p_new} during power iteration",
            )));
        }
        k *= p_new / p_target;
        solver.rescale(p_target / p_new);
        acc += k;
        in_window += 1;
        if in_window == opts.window {
            window_means.push(acc / in_window as f64);
            acc = 0.0;
            in_window = 0;
            let nw = window_means.len();
            if nw >= opts.discard + opts.stat_windows {
                let (_, se) = mean_and_se(&window_means[nw - opts.stat_windows..]);
                let drift = (window_means[nw - 1] - window_means[nw - 2]).abs();
                if se < opts.tol_k && drift < opts.tol_k {
                    converged = true;
                    break;
                }
            }
        }
    }

    let nw = window_means.len();
    let (k_eff, sigma_k) = if nw >= opts.stat_windows {
        mean_and_se(&window_means[nw - opts.stat_windows..])
    } else if nw > 0 {
        (window_means[nw - 1], f64::NAN)
    } else {
        (k, f64::NAN)
    };
    Ok(EigenResult {
        k_eff,
        sigma_k,
        steps,
        windows: nw,
        converged,
        psi: solver.psi().to_vec(),
        k_trace: window_means,
    })
}

/// Infinite-medium eigenvalue of one material: the dominant k of
/// `(T - S) psi = F psi / k` on the group matrices, by power iteration on
/// the G x G system. Used as an independent check for reflective boxes.
pub fn k_infinity(mat: &crate::xs::Material, groups: usize) -> Result<f64> {
    let g = groups;
    // A = T - S (removal minus in-scatter), F = chi nu_sigma_f^T.
    let mut a = vec![0.0; g * g];
    for r in 0..g {
        for c in 0..g {
            let d = if r == c { mat.sigma_t[r] } else { 0.0 };
            a[r * g + c] = d - mat.scatter_into(r, c, g);
        }
    }
    let mut psi = vec![1.0; g];
    let mut k = 1.0f64;
    for _ in 0..10_000 {
        // b = F psi / k
        let fp: f64 = (0..g).map(|j| mat.nu_sigma_f[j] * psi[j]).sum();
        if !(fp > 0.0 && fp.is_finite()) {
            return Err(Error::numerics("material has no fission production"));
        }
        let b: Vec<f64> = (0..g).map(|r| mat.chi[r] * fp / k).collect();
        let x = solve_dense(&a, &b, g)?;
        let fx: f64 = (0..g).map(|j| mat.nu_sigma_f[j] * x[j]).sum();
        let k_new = k * fx / fp;
        let norm = fx.max(1e-300);
        for (p, v) in psi.iter_mut().zip(&x) {
            *p = v / norm;
        }
        if (k_new - k).abs() < 1e-13 * k.abs() {
            return Ok(k_new);
        }
        k = k_new;
    }
    Err(Error::numerics("infinite-medium iteration did not settle"))
}

/// Gaussian elimination with partial pivoting; n is tiny (group count).
fn solve_dense(a: &[f64], b: &[f64], n: usize) -> Result<Vec<f64>> {
    let mut m = a.to_vec();
    let mut x = b.to_vec();
    for col in 0..n {
        let piv = (col..n)
            .max_by(|&r, &s| {
                m[r * n + col]
                    .abs()
                    .partial_cmp(&m[s * n + col].abs())
                    .unwrap()
            })
            .unwrap();
        if m[piv * n + col].abs() < 1e-300 {
            return Err(Error::numerics("singular group matrix"));
        }
        if piv != col {
            for j in 0..n {
                m.swap(col * n + j, piv * n + j);
            }
            x.swap(col, piv);
        }
        for row in col + 1..n {
            let f = m[row * n + col] / m[col * n + col];
            if f == 0.0 {
                continue;
            }
            for j in col..n {
                m[row * n + j] -= f * m[col * n + j];
            }
            x[row] -= f * x[col];
        }
    }
    for col in (0..n).rev() {
        let mut s = x[col];
        for j in col + 1..n {
            s -= m[col * n + j] * x[j];
        }
        x[col] = s / m[col * n + col];
    }
    Ok(x)
}
