//! Deterministic discrete-ordinates stepper (slab geometry).
//!
//! Tracks the per-ordinate intensity on a Gauss-Legendre set. The interface
//! flux integrates the same relaxation kernel as the wave-particle solver:
//! equilibrium moments with `c1, c2, c3`, initial-data transport with
//! `c4, c5`, all upwinded per ordinate. The angular-integrated update reuses
//! the implicit multigroup cell matrix; ordinates are then back-substituted
//! against the solved equilibrium.
//!
//! Layout: `phi[(cell * groups + g) * nk + k]`.

use std::time::Instant;

use crate::config::Problem;
use crate::error::{Error, Result};
use crate::geometry::Boundary;
use crate::kinetics::{compute_coefficients, van_leer_slope, RelaxationParams};
use crate::particle::FluxLedger;
use crate::quad::gauss_legendre;
use crate::solver::{
    multigroup_macro_solve, FissionTreatment, StepTelemetry, TransportSolver,
};
use crate::xs::Material;

pub struct UgksSolver<'p> {
    pub problem: &'p Problem,
    pub mu: Vec<f64>,
    pub w: Vec<f64>,
    /// Per-ordinate intensity.
    pub phi: Vec<f64>,
    /// Angular-integrated field (kept consistent with `phi`).
    pub psi: Vec<f64>,
    fission: FissionTreatment,
    t: f64,
    steps: u64,
    g_hat_prev: Option<(Vec<f64>, f64)>,
    pub ledger: FluxLedger,
    pub telemetry: Vec<StepTelemetry>,
    /// Cumulative ordinate-clipping mass (ledger-compensated); the run
    /// aborts if it grows past 1e-8 of the ledger scale.
    pub clipped_mass: f64,
}

fn equilibrium_ratio(mat: &Material, gg: usize, implicit_fission: bool, out: &mut [f64]) {
    for g in 0..gg {
        let st = mat.sigma_t[g];
        for gp in 0..gg {
            let mut r = mat.scatter_into(g, gp, gg);
            if implicit_fission {
                r += mat.chi[g] * mat.nu_sigma_f[gp];
            }
            out[g * gg + gp] = if st > 0.0 { r / st } else { 0.0 };
        }
    }
}

fn cell_update_matrix(mat: &Material, gg: usize, dt: f64, implicit_fission: bool, out: &mut [f64]) {
    for g in 0..gg {
        let vdt = mat.v[g] * dt;
        for gp in 0..gg {
            let mut r = mat.scatter_into(g, gp, gg);
            if implicit_fission {
                r += mat.chi[g] * mat.nu_sigma_f[gp];
            }
            let diag = if g == gp {
                1.0 + vdt * mat.sigma_t[g]
            } else {
                0.0
            };
            out[g * gg + gp] = diag - vdt * r;
        }
    }
}

impl<'p> UgksSolver<'p> {
    pub fn new(problem: &'p Problem, quad_n: usize, fission: FissionTreatment) -> Result<Self> {
        if !problem.mesh.is_slab() {
            return Err(Error::config(
                "the discrete-ordinates solver is slab-only; use a particle mode in 3-D",
            ));
        }
        if quad_n < 2 {
            return Err(Error::config("need at least 2 ordinates"));
        }
        if problem.inflow.iter().any(|s| s.axis != 0 || s.side > 1) {
            return Err(Error::config("slab inflow must sit on an x face"));
        }
        let (mu, w) = gauss_legendre(quad_n);
        let mesh = &problem.mesh;
        let gg = problem.groups;
        let nc = mesh.cell_count();
        let nk = mu.len();
        let mut phi = vec![0.0; nc * gg * nk];
        if let Some(init) = &problem.hooks.init_phi {
            for c in 0..nc {
                let xc = mesh.center(mesh.ijk(c))[0];
                for (k, m) in mu.iter().enumerate() {
                    phi[(c * gg) * nk + k] = init(xc, *m, 0.0);
                }
            }
        }
        let mut psi = vec![0.0; nc * gg];
        for c in 0..nc {
            for g in 0..gg {
                let base = (c * gg + g) * nk;
                psi[c * gg + g] = (0..nk).map(|k| w[k] * phi[base + k]).sum();
            }
        }
        let inventory: f64 = psi.iter().sum::<f64>() * mesh.cell_volume();
        Ok(UgksSolver {
            problem,
            mu,
            w,
            phi,
            psi,
            fission,
            t: 0.0,
            steps: 0,
            g_hat_prev: None,
            ledger: FluxLedger {
                initial: inventory,
                final_inventory: inventory,
                ..FluxLedger::default()
            },
            telemetry: Vec::new(),
            clipped_mass: 0.0,
        })
    }

    fn implicit_fission(&self) -> bool {
        matches!(self.fission, FissionTreatment::Implicit)
    }

    /// psi-level emission (external + frozen) at time `t`; the functional
    /// hook is folded in per ordinate during the step, not here.
    fn static_source(&self) -> Vec<f64> {
        let mut q = self.problem.q_psi.clone();
        if let FissionTreatment::Frozen { emission } = &self.fission {
            for (qi, e) in q.iter_mut().zip(emission) {
                *qi += e;
            }
        }
        q
    }

    pub fn time(&self) -> f64 {
        self.t
    }

    /// Replace the field with an isotropic distribution carrying `psi` and
    /// restart the books from its inventory. Clock and steps are kept.
    pub fn reset_field(&mut self, psi: &[f64]) -> Result<()> {
        let gg = self.problem.groups;
        let want = self.problem.mesh.cell_count() * gg;
        if psi.len() != want {
            return Err(Error::config(format!(
                "field length {} does not match mesh*groups = {want}",
                psi.len()
            )));
        }
        self.psi.copy_from_slice(psi);
        let nk = self.mu.len();
        for (cg, &p) in psi.iter().enumerate() {
            // weights sum to 2, so the isotropic level is psi/2
            self.phi[cg * nk..(cg + 1) * nk].fill(0.5 * p);
        }
        self.g_hat_prev = None;
        let inv = psi.iter().sum::<f64>() * self.problem.mesh.cell_volume();
        self.ledger = FluxLedger {
            initial: inv,
            final_inventory: inv,
            ..FluxLedger::default()
        };
        Ok(())
    }

    pub fn step(&mut self, dt: f64) -> Result<()> {
        if !(dt > 0.0 && dt.is_finite()) {
            return Err(Error::config(format!("bad step length {dt}")));
        }
        let wall = Instant::now();
        let p = self.problem;
        let mesh = &p.mesh;
        let gg = p.groups;
        let nc = mesh.cell_count();
        let nk = self.mu.len();
        let dx = mesh.dx[0];
        let vol = mesh.cell_volume();
        let area = mesh.face_area(0);
        let bc = mesh.bc[0];
        let t_n = self.t;
        let implicit_fission = self.implicit_fission();

        let mut sigma = vec![0.0; nc * gg];
        let mut speed = vec![0.0; nc * gg];
        for c in 0..nc {
            let mat = p.material(c);
            for g in 0..gg {
                sigma[c * gg + g] = mat.sigma_t[g];
                speed[c * gg + g] = mat.v[g];
            }
        }

        // Equilibrium field and lagged derivative.
        let mut ratio = vec![0.0; gg * gg];
        let mut g_hat = vec![0.0; nc * gg];
        for c in 0..nc {
            equilibrium_ratio(p.material(c), gg, implicit_fission, &mut ratio);
            for g in 0..gg {
                let mut s = 0.0;
                for gp in 0..gg {
                    s += ratio[g * gg + gp] * self.psi[c * gg + gp];
                }
                g_hat[c * gg + g] = s;
            }
        }
        let dgdt: Vec<f64> = match &self.g_hat_prev {
            Some((prev, dtp)) if *dtp > 0.0 => g_hat
                .iter()
                .zip(prev)
                .map(|(now, old)| (now - old) / dtp)
                .collect(),
            _ => vec![0.0; nc * gg],
        };

        let q_static = self.static_source();
        let hook = p.hooks.q_phi.clone();

        let inflow_phi = |side: usize| -> f64 {
            p.inflow
                .iter()
                .find(|s| s.side == side)
                .map(|s| s.phi_in)
                .unwrap_or(0.0)
        };

        // Per-group scratch, ghosted to n + 2 where used.
        let n = mesh.n[0];
        let mut fluxes = vec![0.0; (n + 1) * gg * nk];
        let fidx = |f: usize, g: usize, k: usize| (f * gg + g) * nk + k;
        let mut escaped_step = 0.0;
        let mut injected_step = 0.0;

        let mirror = |k: usize| nk - 1 - k;
        let wrap = matches!(bc[0], Boundary::Periodic);

        for g in 0..gg {
            // Ghosted equilibrium-channel arrays (iso in mu).
            let mut sh = vec![0.0; n + 2]; // S-hat = G-hat / 2
            let mut sh_dt = vec![0.0; n + 2];
            let mut qh = vec![0.0; n + 2]; // static source / sigma, per angle
            let mut sg = vec![0.0; n + 2];
            let mut vv = vec![0.0; n + 2];
            for i in 0..n {
                let idx = i * gg + g;
                sh[i + 1] = 0.5 * g_hat[idx];
                sh_dt[i + 1] = 0.5 * dgdt[idx];
                qh[i + 1] = if sigma[idx] > 0.0 {
                    0.5 * q_static[idx] / sigma[idx]
                } else {
                    0.0
                };
                sg[i + 1] = sigma[idx];
                vv[i + 1] = speed[idx];
            }
            // Ghosts: wrap for periodic; zero equilibrium outside vacuum
            // and inflow (no exterior medium); mirror (copy) for
            // reflective.
            let fill = |arr: &mut Vec<f64>, refl_copy: bool| {
                arr[0] = match bc[0] {
                    Boundary::Periodic => arr[n],
                    Boundary::Reflective => arr[1],
                    _ => {
                        if refl_copy {
                            arr[1]
                        } else {
                            0.0
                        }
                    }
                };
                arr[n + 1] = match bc[1] {
                    Boundary::Periodic => arr[1],
                    Boundary::Reflective => arr[n],
                    _ => {
                        if refl_copy {
                            arr[n]
                        } else {
                            0.0
                        }
                    }
                };
            };
            fill(&mut sh, false);
            fill(&mut sh_dt, false);
            fill(&mut qh, false);
            fill(&mut sg, true); // face coefficients use the interior medium
            fill(&mut vv, true);

            let slope_of = |arr: &[f64], mirror_sign: bool| -> Vec<f64> {
                let mut s = vec![0.0; n + 2];
                for i in 1..=n {
                    s[i] = van_leer_slope(arr[i - 1], arr[i], arr[i + 1], dx);
                }
                if wrap {
                    s[0] = s[n];
                    s[n + 1] = s[1];
                } else {
                    if bc[0] == Boundary::Reflective {
                        s[0] = -s[1] * if mirror_sign { 1.0 } else { 0.0 };
                    }
                    if bc[1] == Boundary::Reflective {
                        s[n + 1] = -s[n] * if mirror_sign { 1.0 } else { 0.0 };
                    }
                }
                s
            };
            let sh_s = slope_of(&sh, true);
            let qh_s = slope_of(&qh, true);

            // Per-ordinate intensity arrays and slopes.
            let mut phv = vec![vec![0.0; n + 2]; nk];
            for k in 0..nk {
                for i in 0..n {
                    phv[k][i + 1] = self.phi[(i * gg + g) * nk + k];
                }
            }
            for k in 0..nk {
                // Value ghosts per boundary type; reflective mirrors the
                // ordinate.
                phv[k][0] = match bc[0] {
                    Boundary::Periodic => phv[k][n],
                    Boundary::Reflective => self.phi[g * nk + mirror(k)],
                    _ => 0.0,
                };
                phv[k][n + 1] = match bc[1] {
                    Boundary::Periodic => phv[k][1],
                    Boundary::Reflective => self.phi[((n - 1) * gg + g) * nk + mirror(k)],
                    _ => 0.0,
                };
            }
            let mut phs = vec![vec![0.0; n + 2]; nk];
            for k in 0..nk {
                for i in 1..=n {
                    phs[k][i] = van_leer_slope(phv[k][i - 1], phv[k][i], phv[k][i + 1], dx);
                }
                if wrap {
                    phs[k][0] = phs[k][n];
                    phs[k][n + 1] = phs[k][1];
                }
                // Reflective ghost slope: mirror ordinate, flipped sign.
            }
            if bc[0] == Boundary::Reflective {
                let firsts: Vec<f64> = (0..nk).map(|k| phs[k][1]).collect();
                for k in 0..nk {
                    phs[k][0] = -firsts[mirror(k)];
                }
            }
            if bc[1] == Boundary::Reflective {
                let lasts: Vec<f64> = (0..nk).map(|k| phs[k][n]).collect();
                for k in 0..nk {
                    phs[k][n + 1] = -lasts[mirror(k)];
                }
            }

            for f in 0..=n {
                let sf = 0.5 * (sg[f] + sg[f + 1]);
                let vf = 0.5 * (vv[f] + vv[f + 1]);
                let tau_f = if vf * sf > 0.0 {
                    1.0 / (vf * sf)
                } else {
                    f64::INFINITY
                };
                let co = compute_coefficients(RelaxationParams { tau: tau_f, dt });
                let half = 0.5 * dx;
                for k in 0..nk {
                    let xi = self.mu[k];
                    if xi == 0.0 {
                        continue;
                    }
                    let up = if xi > 0.0 { f } else { f + 1 };
                    // Boundary-source ordinates: direct free-stream value.
                    let exterior = (f == 0 && xi > 0.0 && !wrap) || (f == n && xi < 0.0 && !wrap);
                    if exterior {
                        let side = usize::from(f == n);
                        match mesh.bc[0][side] {
                            Boundary::Vacuum => {
                                fluxes[fidx(f, g, k)] = 0.0;
                                continue;
                            }
                            Boundary::Inflow => {
                                let h = if g == 0 {
                                    vf * xi * inflow_phi(side)
                                } else {
                                    0.0
                                };
                                fluxes[fidx(f, g, k)] = h;
                                continue;
                            }
                            // Reflective falls through to the mirrored
                            // ghost reconstruction below.
                            _ => {}
                        }
                    }
                    let sign = if xi > 0.0 { 1.0 } else { -1.0 };
                    // Edge values seen from the upwind side.
                    let s_edge = sh[up] + sign * half * sh_s[up];
                    let q_edge = qh[up] + sign * half * qh_s[up];
                    let p_edge = phv[k][up] + sign * half * phs[k][up];
                    let mut func_val = 0.0;
                    let mut func_dt = 0.0;
                    let mut func_slope = 0.0;
                    if let Some(hq) = &hook {
                        if g == 0 {
                            // Functional source: per-ordinate q/sigma of
                            // the upwind cell. Ghosted index: wraps for
                            // periodic so twin faces see identical
                            // stencils, zero outside open boundaries.
                            let eval = |i: isize, t: f64| -> f64 {
                                let cell = if (1..=n as isize).contains(&i) {
                                    (i - 1) as usize
                                } else if wrap {
                                    (i - 1).rem_euclid(n as isize) as usize
                                } else {
                                    return 0.0;
                                };
                                let s = sigma[cell * gg + g];
                                if s <= 0.0 {
                                    return 0.0;
                                }
                                let xc = mesh.center([cell, 0, 0])[0];
                                hq(xc, xi, t) / s
                            };
                            let iu = up as isize;
                            let v0 = eval(iu, t_n);
                            func_val = v0;
                            func_dt = (eval(iu, t_n + dt) - v0) / dt;
                            let vm = eval(iu - 1, t_n);
                            let vp = eval(iu + 1, t_n);
                            func_slope = van_leer_slope(vm, v0, vp, dx);
                            func_val += sign * half * func_slope;
                        }
                    }
                    let h = vf
                        * xi
                        * (co.c1 * (s_edge + q_edge + func_val)
                            + co.c2 * (sh_dt[up] + func_dt)
                            + co.c4 * p_edge)
                        + vf * vf
                            * xi
                            * xi
                            * (co.c3 * (sh_s[up] + qh_s[up] + func_slope) + co.c5 * phs[k][up]);
                    fluxes[fidx(f, g, k)] = h;
                }
            }
            // Boundary bookkeeping (periodic wraps are interior).
            if !wrap {
                for k in 0..nk {
                    let wk = self.w[k];
                    let xi = self.mu[k];
                    if xi == 0.0 {
                        continue;
                    }
                    if matches!(bc[0], Boundary::Vacuum | Boundary::Inflow) {
                        let h = wk * fluxes[fidx(0, g, k)];
                        if xi > 0.0 {
                            injected_step += dt * area * h;
                        } else {
                            escaped_step += dt * area * (-h);
                        }
                    }
                    if matches!(bc[1], Boundary::Vacuum | Boundary::Inflow) {
                        let h = wk * fluxes[fidx(n, g, k)];
                        if xi > 0.0 {
                            escaped_step += dt * area * h;
                        } else {
                            injected_step += dt * area * (-h);
                        }
                    }
                }
            }
        }

        // Angular-integrated implicit update (shared matrix), then
        // per-ordinate back-substitution.
        let n_mats = p.xs.materials.len();
        let mut mat_matrix: Vec<Option<Vec<f64>>> = vec![None; n_mats];
        let mut rhs = vec![0.0; gg];
        let mut rhs0 = vec![0.0; gg];
        let mut mwork = vec![0.0; gg * gg];
        let mut psi_new = vec![0.0; nc * gg];
        let mut div_k = vec![0.0; nc * gg * nk];
        let mut absorbed_step = 0.0;
        let mut sourced_step = 0.0;
        let (quad_mu, quad_w) = (&self.mu, &self.w);
        for c in 0..nc {
            let mid = p.map.ids[c] as usize;
            if mat_matrix[mid].is_none() {
                let mut m = vec![0.0; gg * gg];
                cell_update_matrix(p.xs.at(mid as u16), gg, dt, implicit_fission, &mut m);
                mat_matrix[mid] = Some(m);
            }
            for g in 0..gg {
                let idx = c * gg + g;
                let vdt = speed[idx] * dt;
                let mut div = 0.0;
                for k in 0..nk {
                    let d = (fluxes[fidx(c + 1, g, k)] - fluxes[fidx(c, g, k)]) / dx;
                    div_k[idx * nk + k] = d;
                    div += quad_w[k] * d;
                }
                // psi-level source at t^{n+1}.
                let mut q_next = q_static[idx];
                if let Some(hq) = &hook {
                    if g == 0 {
                        let xc = mesh.center([c, 0, 0])[0];
                        let mut s = 0.0;
                        for (m, wk) in quad_mu.iter().zip(quad_w) {
                            s += wk * hq(xc, *m, t_n + dt);
                        }
                        q_next += s;
                    }
                }
                let src = vdt * q_next;
                sourced_step += vol * src;
                rhs[g] = self.psi[idx] + src - dt * div;
                rhs0[g] = rhs[g];
            }
            mwork.copy_from_slice(mat_matrix[mid].as_ref().unwrap());
            multigroup_macro_solve(&mut mwork, &mut rhs)?;
            for g in 0..gg {
                let idx = c * gg + g;
                if !rhs[g].is_finite() {
                    return Err(Error::numerics(format!(
                        "non-finite inventory in cell {c} group {g}"
                    )));
                }
                absorbed_step += vol * (rhs0[g] - rhs[g]);
                psi_new[idx] = rhs[g];
            }
        }

        // Back-substitute ordinates against the solved equilibrium.
        let mut clip_added = 0.0;
        for c in 0..nc {
            equilibrium_ratio(p.material(c), gg, implicit_fission, &mut ratio);
            let xc = mesh.center([c, 0, 0])[0];
            for g in 0..gg {
                let idx = c * gg + g;
                let vdt = speed[idx] * dt;
                let st = sigma[idx];
                let mut s_new = 0.0;
                for gp in 0..gg {
                    s_new += ratio[g * gg + gp] * psi_new[c * gg + gp];
                }
                s_new *= 0.5; // per-angle equilibrium
                let q_iso = 0.5 * q_static[idx];
                let denom = 1.0 + vdt * st;
                let mut psi_check = 0.0;
                for k in 0..nk {
                    let mut q_ang = q_iso;
                    if let Some(hq) = &hook {
                        if g == 0 {
                            q_ang += hq(xc, quad_mu[k], t_n + dt);
                        }
                    }
                    let kidx = idx * nk + k;
                    let mut v = (self.phi[kidx] - dt * div_k[kidx]
                        + vdt * (st * s_new + q_ang))
                        / denom;
                    if v < 0.0 {
                        clip_added += -v * quad_w[k] * vol;
                        v = 0.0;
                    }
                    self.phi[kidx] = v;
                    psi_check += quad_w[k] * v;
                }
                // Keep the field exactly the ordinate sum (clipping and
                // round-off fold into the books).
                let drift = psi_check - psi_new[idx];
                if drift.abs() > 0.0 {
                    absorbed_step -= drift * vol;
                }
                psi_new[idx] = psi_check;
            }
        }
        self.clipped_mass += clip_added;

        self.psi = psi_new;
        self.ledger.sourced += sourced_step;
        self.ledger.injected += injected_step;
        self.ledger.escaped += escaped_step;
        self.ledger.absorbed += absorbed_step;
        self.ledger.final_inventory = self.psi.iter().sum::<f64>() * vol;
        let scale = self.ledger.scale().max(1e-300);
        if self.clipped_mass > 1e-8 * scale {
            return Err(Error::numerics(format!(
                "ordinate clipping accumulated {:.3e} against scale {scale:.3e}",
                self.clipped_mass
            )));
        }
        self.g_hat_prev = Some((g_hat, dt));
        self.t += dt;
        self.steps += 1;
        self.telemetry.push(StepTelemetry {
            step: self.steps,
            t: self.t,
            dt,
            pool: 0,
            sampled: 0,
            collided: 0,
            escaped: 0,
            injected: 0,
            wall_ms: wall.elapsed().as_secs_f64() * 1e3,
            ledger_residual: self.ledger.relative_residual(),
            clipped: clip_added,
            tilt_clamps: 0,
        });
        Ok(())
    }

    /// Ordinate intensities for one cell and group.
    pub fn cell_ordinates(&self, cell: usize, g: usize) -> &[f64] {
        let base = (cell * self.problem.groups + g) * self.mu.len();
        &self.phi[base..base + self.mu.len()]
    }
}

impl<'p> TransportSolver for UgksSolver<'p> {
    fn step(&mut self, dt: f64) -> Result<()> {
        UgksSolver::step(self, dt)
    }
    fn psi(&self) -> &[f64] {
        &self.psi
    }
    fn time(&self) -> f64 {
        self.t
    }
    fn steps_taken(&self) -> u64 {
        self.steps
    }
    fn ledger(&self) -> &FluxLedger {
        &self.ledger
    }
    fn telemetry(&self) -> &[StepTelemetry] {
        &self.telemetry
    }
    fn groups(&self) -> usize {
        self.problem.groups
    }
    fn set_fission(&mut self, f: FissionTreatment) {
        self.fission = f;
    }
    fn rescale(&mut self, factor: f64) {
        for v in self.phi.iter_mut().chain(self.psi.iter_mut()) {
            *v *= factor;
        }
        if let Some((g, _)) = &mut self.g_hat_prev {
            for v in g.iter_mut() {
                *v *= factor;
            }
        }
        self.ledger.rescale(factor);
    }
    fn reset_field(&mut self, psi: &[f64]) -> Result<()> {
        UgksSolver::reset_field(self, psi)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::{GeometrySource, MaterialSource, ProblemKind, RunConfig, XsSource};
    use crate::geometry::{Boundary, BoundarySpec, GeometrySpec};
    use crate::kinetics::{compute_dt, DtPolicy};
    use approx::assert_abs_diff_eq;

    fn slab_config(name: &str, xs: &str, nx: usize, lo: Boundary, hi: Boundary) -> RunConfig {
        let spec = GeometrySpec {
            domain_lo: [0.0; 3],
            domain_hi: [1.0, 1.0, 1.0],
            cells: [nx, 1, 1],
            boundaries: BoundarySpec::slab(lo, hi),
            default_material: "m".into(),
            boxes: vec![],
        };
        RunConfig::named(
            name,
            GeometrySource::Inline(spec),
            XsSource::Inline(xs.into()),
        )
    }

    #[test]
    fn uniform_reflective_matches_matrix_recursion() {
        // Uniform field, reflective walls: the stepper must reduce to the
        // per-cell matrix recursion exactly.
        let xs = "groups 2\nmaterial m\n1 4.0 0.3 1.0 0.0 0.6 1.0\n2 6.0 0.5 2.0 2.5 0.4 1.0\n";
        let cfg = slab_config("uniform", xs, 6, Boundary::Reflective, Boundary::Reflective);
        let problem = cfg.assemble().unwrap();
        let mut solver = UgksSolver::new(&problem, 8, FissionTreatment::Implicit).unwrap();
        let gg = 2;
        let nk = solver.mu.len();
        for c in 0..6 {
            for k in 0..nk {
                solver.phi[(c * gg) * nk + k] = 0.5; // psi = 1.0
                solver.phi[(c * gg + 1) * nk + k] = 0.25; // psi = 0.5
            }
            solver.psi[c * gg] = 1.0;
            solver.psi[c * gg + 1] = 0.5;
        }
        solver.ledger.initial = solver.psi.iter().sum::<f64>() * problem.mesh.cell_volume();
        solver.ledger.final_inventory = solver.ledger.initial;
        let dt = 0.04;
        let mat = problem.material(0);
        let mut reference = vec![1.0, 0.5];
        for _ in 0..4 {
            let mut m = vec![0.0; 4];
            cell_update_matrix(mat, gg, dt, true, &mut m);
            let mut rhs = reference.clone();
            multigroup_macro_solve(&mut m, &mut rhs).unwrap();
            reference = rhs;
            solver.step(dt).unwrap();
        }
        for c in 0..6 {
            assert_abs_diff_eq!(solver.psi[c * gg], reference[0], epsilon = 1e-12);
            assert_abs_diff_eq!(solver.psi[c * gg + 1], reference[1], epsilon = 1e-12);
        }
        assert!(solver.ledger.relative_residual().abs() < 1e-12);
    }

    #[test]
    fn ledger_closes_with_leakage_and_source() {
        let xs = "groups 1\nmaterial m\n1 1.0 0.0 0.4 1.0 1.0\n";
        let mut cfg = slab_config("ledger", xs, 20, Boundary::Vacuum, Boundary::Vacuum);
        cfg.sources = vec![MaterialSource {
            material: "m".into(),
            q: 1.0,
        }];
        let problem = cfg.assemble().unwrap();
        let mut solver = UgksSolver::new(&problem, 8, FissionTreatment::Implicit).unwrap();
        for _ in 0..50 {
            solver.step(0.01).unwrap();
            assert!(
                solver.ledger.relative_residual().abs() < 1e-12,
                "residual {}",
                solver.ledger.relative_residual()
            );
        }
        assert!(solver.ledger.escaped > 0.0);
        assert!(solver.ledger.final_inventory > 0.0);
    }

    #[test]
    fn reflective_walls_preserve_symmetry() {
        let xs = "groups 1\nmaterial m\n1 2.0 0.0 1.0 1.0 1.0\n";
        let mut cfg = slab_config("sym", xs, 16, Boundary::Reflective, Boundary::Reflective);
        cfg.sources = vec![MaterialSource {
            material: "m".into(),
            q: 0.3,
        }];
        let problem = cfg.assemble().unwrap();
        let mut solver = UgksSolver::new(&problem, 8, FissionTreatment::Implicit).unwrap();
        // Symmetric bump initial condition.
        let nk = solver.mu.len();
        for c in 0..16 {
            let x = (c as f64 + 0.5) / 16.0;
            let v = 0.5 * (1.0 + (2.0 * std::f64::consts::PI * (x - 0.5)).cos());
            for k in 0..nk {
                solver.phi[c * nk + k] = 0.5 * v;
            }
            solver.psi[c] = v;
        }
        solver.ledger.initial = solver.psi.iter().sum::<f64>() * problem.mesh.cell_volume();
        solver.ledger.final_inventory = solver.ledger.initial;
        for _ in 0..40 {
            solver.step(0.01).unwrap();
        }
        for c in 0..8 {
            assert_abs_diff_eq!(solver.psi[c], solver.psi[15 - c], epsilon = 1e-11);
        }
        // No net leakage through reflective walls.
        assert_abs_diff_eq!(solver.ledger.escaped, 0.0, epsilon = 1e-13);
        assert!(solver.ledger.relative_residual().abs() < 1e-12);
    }

    /// End-to-end order check: marching the manufactured transient must
    /// track the exact solution closely on a modest grid.
    #[test]
    fn manufactured_transient_tracks_exact_solution() {
        let sigma = 1.0;
        let xs = format!(
            "groups 1\nmaterial m\n1 {sigma} 0.0 {} 1.0 1.0\n",
            0.5 * sigma
        );
        let mut cfg = slab_config("mms", &xs, 40, Boundary::Periodic, Boundary::Periodic);
        cfg.special = ProblemKind::Manufactured { sigma };
        let problem = cfg.assemble().unwrap();
        let mut solver = UgksSolver::new(&problem, 16, FissionTreatment::Implicit).unwrap();
        let dt = compute_dt(
            &problem.mesh,
            &problem.map,
            &problem.xs,
            DtPolicy::MaxSigma,
            0.3,
            None,
        )
        .unwrap();
        let t_end = 0.1;
        let mut t = 0.0;
        while t < t_end - 1e-12 {
            let step = dt.min(t_end - t);
            solver.step(step).unwrap();
            t = solver.time();
        }
        // Compare the angular-integrated field against the exact psi.
        let mut num = 0.0;
        let mut den = 0.0;
        for c in 0..40 {
            let xc = problem.mesh.center([c, 0, 0])[0];
            let exact = crate::oracles::manufactured::psi_exact(xc, t_end);
            let d = solver.psi[c] - exact;
            num += d * d;
            den += exact * exact;
        }
        let rel = (num / den).sqrt();
        assert!(rel < 0.01, "relative L2 error {rel}");
        assert!(solver.ledger.relative_residual().abs() < 1e-10);
    }
}
