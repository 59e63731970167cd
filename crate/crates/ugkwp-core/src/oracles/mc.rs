//! Minimal analog Monte Carlo solver for steady problems, used as an
//! independent cross-check of the transport solvers. History-based with a
//! track-length flux estimator; batch statistics give a standard error.

use rayon::prelude::*;

use crate::config::Problem;
use crate::error::{Error, Result};
use crate::geometry::Boundary;
use crate::quad::sample_isotropic_direction;
use crate::rng::{Purpose, RngStream};

pub struct McOptions {
    pub n_hist: u64,
    pub batches: usize,
    pub seed: u64,
}

impl Default for McOptions {
    fn default() -> Self {
        Self {
            n_hist: 200_000,
            batches: 20,
            seed: 1,
        }
    }
}

pub struct McResult {
    /// Mean scalar flux per cell and group.
    pub psi: Vec<f64>,
    /// Standard error of the mean, same layout.
    pub stderr: Vec<f64>,
    /// Half-range fluxes (mu > 0 / mu < 0), slab runs only.
    pub psi_pos: Option<Vec<f64>>,
    pub psi_neg: Option<Vec<f64>>,
    pub histories: u64,
}

enum SourceSite {
    Cell { cell: usize, group: usize },
    InflowRight { group: usize },
    InflowLeft { group: usize },
}

struct SourceTable {
    sites: Vec<SourceSite>,
    cum: Vec<f64>,
    total_rate: f64,
}

fn build_source_table(problem: &Problem) -> Result<SourceTable> {
    let mesh = &problem.mesh;
    let groups = problem.groups;
    let vol = mesh.cell_volume();
    let mut sites = Vec::new();
    let mut cum = Vec::new();
    let mut total = 0.0;
    for cell in 0..mesh.cell_count() {
        for g in 0..groups {
            let rate = problem.q_psi[problem.field_index(cell, g)] * vol;
            if rate > 0.0 {
                total += rate;
                sites.push(SourceSite::Cell { cell, group: g });
                cum.push(total);
            }
        }
    }
    for spec in &problem.inflow {
        let area = mesh.face_area(0);
        let rate = 0.5 * spec.phi_in * area;
        if rate > 0.0 {
            total += rate;
            sites.push(if spec.side == 1 {
                SourceSite::InflowRight { group: 0 }
            } else {
                SourceSite::InflowLeft { group: 0 }
            });
            cum.push(total);
        }
    }
    if total <= 0.0 {
        return Err(Error::config("analog MC needs a nonzero steady source"));
    }
    Ok(SourceTable {
        sites,
        cum,
        total_rate: total,
    })
}

struct Tally {
    psi: Vec<f64>,
    pos: Vec<f64>,
    neg: Vec<f64>,
}

/// One slab history in reduced (x, mu) coordinates; path lengths carry the
/// 1/|mu| obliquity factor.
fn slab_history(
    problem: &Problem,
    table: &SourceTable,
    rng: &mut impl rand::Rng,
    tally: &mut Tally,
) {
    let mesh = &problem.mesh;
    let groups = problem.groups;
    let nx = mesh.n[0];
    let dx = mesh.dx[0];
    let pick = rng.gen::<f64>() * table.total_rate;
    let idx = table.cum.partition_point(|&c| c < pick).min(table.sites.len() - 1);
    let (mut x, mut mu, mut g) = match table.sites[idx] {
        SourceSite::Cell { cell, group } => {
            let i = mesh.ijk(cell)[0];
            let x = mesh.lo[0] + (i as f64 + rng.gen::<f64>()) * dx;
            (x, 2.0 * rng.gen::<f64>() - 1.0, group)
        }
        SourceSite::InflowRight { group } => {
            (mesh.hi[0], -rng.gen::<f64>().sqrt(), group)
        }
        SourceSite::InflowLeft { group } => (mesh.lo[0], rng.gen::<f64>().sqrt(), group),
    };
    if mu.abs() < 1e-12 {
        mu = 1e-12f64.copysign(if rng.gen::<bool>() { 1.0 } else { -1.0 });
    }
    let inv_vol = 1.0 / mesh.cell_volume();
    // The cell index is tracked incrementally: recomputing it from a
    // position that sits exactly on a face is a coin flip.
    let mut i = (((x - mesh.lo[0]) / dx).floor() as isize).clamp(0, nx as isize - 1) as usize;
    for _ in 0..1_000_000u64 {
        let mut lambda = -(1.0 - rng.gen::<f64>()).ln();
        // March through cells until the sampled optical depth is spent.
        loop {
            let cell = mesh.index([i, 0, 0]);
            let sigma = problem.material(cell).sigma_t[g];
            let x_face = if mu > 0.0 {
                mesh.lo[0] + (i as f64 + 1.0) * dx
            } else {
                mesh.lo[0] + i as f64 * dx
            };
            let path_to_face = ((x_face - x) / mu).max(0.0);
            let path_to_collision = if sigma > 0.0 { lambda / sigma } else { f64::INFINITY };
            let fi = cell * groups + g;
            if path_to_collision < path_to_face {
                let score = path_to_collision * inv_vol;
                tally.psi[fi] += score;
                if mu > 0.0 {
                    tally.pos[fi] += score;
                } else {
                    tally.neg[fi] += score;
                }
                x += mu * path_to_collision;
                break;
            }
            let score = path_to_face * inv_vol;
            tally.psi[fi] += score;
            if mu > 0.0 {
                tally.pos[fi] += score;
            } else {
                tally.neg[fi] += score;
            }
            lambda -= path_to_face * sigma;
            x = x_face;
            let side = if mu > 0.0 { 1 } else { 0 };
            let at_boundary = (mu > 0.0 && i + 1 == nx) || (mu < 0.0 && i == 0);
            if at_boundary {
                match mesh.bc[0][side] {
                    Boundary::Vacuum | Boundary::Inflow => return,
                    Boundary::Reflective => mu = -mu,
                    Boundary::Periodic => {
                        x = if side == 1 { mesh.lo[0] } else { mesh.hi[0] };
                        i = if side == 1 { 0 } else { nx - 1 };
                    }
                }
            } else if mu > 0.0 {
                i += 1;
            } else {
                i -= 1;
            }
        }
        // Collision: scatter or absorb.
        let mat = problem.material(mesh.index([i, 0, 0]));
        let sigma_t = mat.sigma_t[g];
        let scatter_out = mat.sigma_s_out(g, groups);
        if rng.gen::<f64>() * sigma_t >= scatter_out {
            return;
        }
        let pick = rng.gen::<f64>() * scatter_out;
        let mut acc = 0.0;
        let mut g_next = groups - 1;
        for gd in 0..groups {
            acc += mat.scatter_into(gd, g, groups);
            if pick < acc {
                g_next = gd;
                break;
            }
        }
        g = g_next;
        mu = 2.0 * rng.gen::<f64>() - 1.0;
        if mu.abs() < 1e-12 {
            mu = 1e-12f64.copysign(mu + 1e-300);
        }
    }
}

fn full_3d_history(
    problem: &Problem,
    table: &SourceTable,
    rng: &mut impl rand::Rng,
    tally: &mut Tally,
) {
    let mesh = &problem.mesh;
    let groups = problem.groups;
    let pick = rng.gen::<f64>() * table.total_rate;
    let idx = table.cum.partition_point(|&c| c < pick).min(table.sites.len() - 1);
    let (mut pos, mut dir, mut g) = match table.sites[idx] {
        SourceSite::Cell { cell, group } => {
            let ijk = mesh.ijk(cell);
            let p = [
                mesh.lo[0] + (ijk[0] as f64 + rng.gen::<f64>()) * mesh.dx[0],
                mesh.lo[1] + (ijk[1] as f64 + rng.gen::<f64>()) * mesh.dx[1],
                mesh.lo[2] + (ijk[2] as f64 + rng.gen::<f64>()) * mesh.dx[2],
            ];
            (p, sample_isotropic_direction(rng), group)
        }
        _ => unreachable!("inflow is slab-only by config validation"),
    };
    let inv_vol = 1.0 / mesh.cell_volume();
    let mut ijk = mesh.cell_of_point(pos);
    'history: for _ in 0..1_000_000u64 {
        let mut lambda = -(1.0 - rng.gen::<f64>()).ln();
        loop {
            let cell = mesh.index(ijk);
            let sigma = problem.material(cell).sigma_t[g];
            // Nearest face along the flight direction.
            let mut t_face = f64::INFINITY;
            let mut axis = 0;
            let mut step = 0isize;
            for a in 0..3 {
                if dir[a] > 1e-300 {
                    let face = mesh.lo[a] + (ijk[a] as f64 + 1.0) * mesh.dx[a];
                    let t = (face - pos[a]) / dir[a];
                    if t < t_face {
                        t_face = t;
                        axis = a;
                        step = 1;
                    }
                } else if dir[a] < -1e-300 {
                    let face = mesh.lo[a] + ijk[a] as f64 * mesh.dx[a];
                    let t = (face - pos[a]) / dir[a];
                    if t < t_face {
                        t_face = t;
                        axis = a;
                        step = -1;
                    }
                }
            }
            let t_coll = if sigma > 0.0 { lambda / sigma } else { f64::INFINITY };
            if t_coll < t_face {
                tally.psi[cell * groups + g] += t_coll * inv_vol;
                for a in 0..3 {
                    pos[a] += dir[a] * t_coll;
                }
                break;
            }
            tally.psi[cell * groups + g] += t_face * inv_vol;
            for a in 0..3 {
                pos[a] += dir[a] * t_face;
            }
            // Snap the crossed coordinate onto the face.
            pos[axis] = mesh.lo[axis]
                + (ijk[axis] as f64 + if step > 0 { 1.0 } else { 0.0 }) * mesh.dx[axis];
            lambda -= t_face * sigma;
            let next = ijk[axis] as isize + step;
            if next < 0 || next as usize >= mesh.n[axis] {
                let side = if step > 0 { 1 } else { 0 };
                match mesh.bc[axis][side] {
                    Boundary::Vacuum | Boundary::Inflow => return,
                    Boundary::Reflective => dir[axis] = -dir[axis],
                    Boundary::Periodic => {
                        pos[axis] = if side == 1 { mesh.lo[axis] } else { mesh.hi[axis] };
                        ijk[axis] = if side == 1 { 0 } else { mesh.n[axis] - 1 };
                    }
                }
            } else {
                ijk[axis] = next as usize;
            }
        }
        let cell = mesh.index(mesh.cell_of_point(pos));
        let mat = problem.material(cell);
        let sigma_t = mat.sigma_t[g];
        let scatter_out = mat.sigma_s_out(g, groups);
        if rng.gen::<f64>() * sigma_t >= scatter_out {
            return;
        }
        let pick = rng.gen::<f64>() * scatter_out;
        let mut acc = 0.0;
        for gd in 0..groups {
            acc += mat.scatter_into(gd, g, groups);
            if pick < acc {
                g = gd;
                dir = sample_isotropic_direction(rng);
                ijk = mesh.cell_of_point(pos);
                continue 'history;
            }
        }
        g = groups - 1;
        dir = sample_isotropic_direction(rng);
        ijk = mesh.cell_of_point(pos);
    }
}

/// Steady analog Monte Carlo solve. Rejects multiplying media and
/// time-dependent (functional) sources, which are outside this oracle's
/// remit.
pub fn analog_mc_solve(problem: &Problem, opts: &McOptions) -> Result<McResult> {
    for m in &problem.xs.materials {
        if m.nu_sigma_f.iter().any(|&f| f > 0.0) {
            return Err(Error::config(
                "analog MC oracle does not treat fission; use it on non-multiplying media",
            ));
        }
    }
    if problem.hooks.q_phi.is_some() || problem.hooks.init_phi.is_some() {
        return Err(Error::config(
            "analog MC oracle is steady-state only; functional hooks unsupported",
        ));
    }
    let table = build_source_table(problem)?;
    let slab = problem.mesh.is_slab();
    let n_field = problem.mesh.cell_count() * problem.groups;
    let batches = opts.batches.max(2);
    let per_batch = (opts.n_hist / batches as u64).max(1);
    let stream = RngStream::new(opts.seed);

    let batch_tallies: Vec<Tally> = (0..batches)
        .into_par_iter()
        .map(|b| {
            let mut tally = Tally {
                psi: vec![0.0; n_field],
                pos: vec![0.0; if slab { n_field } else { 0 }],
                neg: vec![0.0; if slab { n_field } else { 0 }],
            };
            for h in 0..per_batch {
                let mut rng = stream.at(b as u64, h, Purpose::Oracle);
                if slab {
                    slab_history(problem, &table, &mut rng, &mut tally);
                } else {
                    full_3d_history(problem, &table, &mut rng, &mut tally);
                }
            }
            tally
        })
        .collect();

    let histories = per_batch * batches as u64;
    let scale = table.total_rate / per_batch as f64;
    let nb = batches as f64;
    let mut psi = vec![0.0; n_field];
    let mut stderr = vec![0.0; n_field];
    let mut pos = vec![0.0; if slab { n_field } else { 0 }];
    let mut neg = vec![0.0; if slab { n_field } else { 0 }];
    for i in 0..n_field {
        let mean = batch_tallies.iter().map(|t| t.psi[i] * scale).sum::<f64>() / nb;
        let var = batch_tallies
            .iter()
            .map(|t| {
                let d = t.psi[i] * scale - mean;
                d * d
            })
            .sum::<f64>()
            / (nb - 1.0);
        psi[i] = mean;
        stderr[i] = (var / nb).sqrt();
        if slab {
            pos[i] = batch_tallies.iter().map(|t| t.pos[i] * scale).sum::<f64>() / nb;
            neg[i] = batch_tallies.iter().map(|t| t.neg[i] * scale).sum::<f64>() / nb;
        }
    }
    Ok(McResult {
        psi,
        stderr,
        psi_pos: if slab { Some(pos) } else { None },
        psi_neg: if slab { Some(neg) } else { None },
        histories,
    })
}
