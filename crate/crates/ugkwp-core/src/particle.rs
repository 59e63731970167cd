//! Particle pool: free-flight sampling, exact grid streaming with boundary
//! handling, interface tallies, resampling kernels, and the conservation
//! ledger.
//!
//! Particle weights live at the angular-integrated level: the weights in a
//! cell sum to `psi_mi * V`. Slab particles store the direction cosine in
//! `dir[0]`; 3-D particles carry a unit vector.

use rand::Rng;

use crate::error::{Error, Result};
use crate::geometry::{Boundary, StructuredMesh};

#[derive(Debug, Clone, Copy)]
pub struct Particle {
    pub pos: [f64; 3],
    pub dir: [f64; 3],
    pub group: u16,
    pub weight: f64,
    /// Stable identity for counter-based RNG substreams.
    pub id: u64,
}

/// One interface crossing; `weight` is signed toward the +axis direction.
#[derive(Debug, Clone, Copy)]
pub struct FaceEvent {
    pub axis: u8,
    pub face: u32,
    pub weight: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StreamOutcome {
    /// Still in the domain; carries the cell the walk ended in, which is
    /// authoritative even when the position sits exactly on a face.
    Alive { ijk: [usize; 3] },
    Escaped { axis: usize, side: usize },
}

/// Censored exponential free-flight time: `min(-tau ln r, dt)` with
/// `r` uniform on (0, 1].
pub fn sample_free_flight(tau: f64, dt: f64, rng: &mut impl Rng) -> f64 {
    let r: f64 = 1.0 - rng.gen::<f64>();
    (-tau * r.ln()).min(dt)
}

/// Advance a particle for `t_f` at `speed`, recording every interface
/// crossing. Uses incremental face-to-face traversal, exact on the uniform
/// grid; periodic crossings tally both twin faces so per-cell flux
/// differences telescope.
pub fn stream(
    p: &mut Particle,
    speed: f64,
    t_f: f64,
    mesh: &StructuredMesh,
    events: &mut Vec<FaceEvent>,
) -> StreamOutcome {
    let mut vel = [
        speed * p.dir[0],
        speed * p.dir[1],
        speed * p.dir[2],
    ];
    let mut ijk = mesh.cell_of_point(p.pos);
    let mut t_rem = t_f;
    loop {
        let mut hit_axis = usize::MAX;
        let mut t_hit = t_rem;
        for a in 0..3 {
            if vel[a] == 0.0 {
                continue;
            }
            let face_coord = if vel[a] > 0.0 {
                mesh.lo[a] + (ijk[a] + 1) as f64 * mesh.dx[a]
            } else {
                mesh.lo[a] + ijk[a] as f64 * mesh.dx[a]
            };
            let t = (face_coord - p.pos[a]) / vel[a];
            if t < t_hit {
                t_hit = t;
                hit_axis = a;
            }
        }
        let t_hit = t_hit.max(0.0);
        for a in 0..3 {
            p.pos[a] += vel[a] * t_hit;
        }
        t_rem -= t_hit;
        if hit_axis == usize::MAX {
            return StreamOutcome::Alive { ijk };
        }
        let a = hit_axis;
        let positive = vel[a] > 0.0;
        let side = positive as usize;
        let mut f = ijk;
        f[a] = if positive { ijk[a] + 1 } else { ijk[a] };
        p.pos[a] = mesh.lo[a] + f[a] as f64 * mesh.dx[a];
        let sign = if positive { 1.0 } else { -1.0 };
        let leaving = (positive && ijk[a] + 1 == mesh.n[a]) || (!positive && ijk[a] == 0);
        if !leaving {
            events.push(FaceEvent {
                axis: a as u8,
                face: mesh.face_index(a, f) as u32,
                weight: sign * p.weight,
            });
            ijk[a] = if positive { ijk[a] + 1 } else { ijk[a] - 1 };
            continue;
        }
        match apply_boundary(p, &mut vel, mesh, a, side) {
            BoundaryAction::Terminate => {
                events.push(FaceEvent {
                    axis: a as u8,
                    face: mesh.face_index(a, f) as u32,
                    weight: sign * p.weight,
                });
                return StreamOutcome::Escaped { axis: a, side };
            }
            BoundaryAction::Reflected => {
                // A bounce is an outgoing and an incoming crossing at the
                // same instant: net zero, so nothing is tallied.
            }
            BoundaryAction::Wrapped => {
                events.push(FaceEvent {
                    axis: a as u8,
                    face: mesh.face_index(a, f) as u32,
                    weight: sign * p.weight,
                });
                let mut twin = f;
                twin[a] = if positive { 0 } else { mesh.n[a] };
                events.push(FaceEvent {
                    axis: a as u8,
                    face: mesh.face_index(a, twin) as u32,
                    weight: sign * p.weight,
                });
                ijk[a] = if positive { 0 } else { mesh.n[a] - 1 };
            }
        }
    }
}

pub enum BoundaryAction {
    Reflected,
    Wrapped,
    Terminate,
}

/// Boundary dispatch for a particle sitting on the domain face `(axis,
/// side)` and moving outward. Vacuum and inflow faces terminate it (inflow
/// re-injection is a separate sampling pass); reflective flips the normal
/// component; periodic wraps the coordinate.
pub fn apply_boundary(
    p: &mut Particle,
    vel: &mut [f64; 3],
    mesh: &StructuredMesh,
    axis: usize,
    side: usize,
) -> BoundaryAction {
    match mesh.bc[axis][side] {
        Boundary::Vacuum | Boundary::Inflow => BoundaryAction::Terminate,
        Boundary::Reflective => {
            p.dir[axis] = -p.dir[axis];
            vel[axis] = -vel[axis];
            BoundaryAction::Reflected
        }
        Boundary::Periodic => {
            p.pos[axis] = if side == 1 {
                mesh.lo[axis]
            } else {
                mesh.hi[axis]
            };
            BoundaryAction::Wrapped
        }
    }
}

/// Angular sampling law for resampled slab particles.
pub enum AngularLaw<'a> {
    Isotropic,
    /// `p(mu) = (1 + b mu) / 2` on [-1, 1], requires `|b| <= 1`.
    Tilted { b: f64 },
    /// Arbitrary nonnegative shape with a known bound for rejection.
    Functional {
        f: &'a (dyn Fn(f64) -> f64 + Sync),
        bound: f64,
    },
}

pub fn sample_mu(law: &AngularLaw, rng: &mut impl Rng) -> Result<f64> {
    match law {
        AngularLaw::Isotropic => Ok(rng.gen_range(-1.0..=1.0)),
        AngularLaw::Tilted { b } => {
            let b = b.clamp(-1.0, 1.0);
            if b.abs() < 1e-8 {
                return Ok(rng.gen_range(-1.0..=1.0));
            }
            let r: f64 = rng.gen();
            let c = 0.5 - 0.25 * b - r;
            let disc = (0.25 - b * c).max(0.0);
            Ok(((disc.sqrt() - 0.5) / (0.5 * b)).clamp(-1.0, 1.0))
        }
        AngularLaw::Functional { f, bound } => {
            for _ in 0..100_000 {
                let mu = rng.gen_range(-1.0..=1.0);
                let u: f64 = rng.gen_range(0.0..*bound);
                if u <= f(mu) {
                    return Ok(mu);
                }
            }
            Err(Error::numerics(
                "rejection sampling failed: envelope far above target law",
            ))
        }
    }
}

/// Integer particle count for a weight budget: `floor` plus a Bernoulli
/// trial on the fraction, so the expected count is exactly `w / m_e`.
pub fn stochastic_count(w: f64, m_e: f64, rng: &mut impl Rng) -> usize {
    if w <= 0.0 || m_e <= 0.0 {
        return 0;
    }
    let x = w / m_e;
    let base = x.floor();
    let frac = x - base;
    base as usize + usize::from(rng.gen::<f64>() < frac)
}

/// Materialize `total_weight` of cell inventory as particles of equal mass
/// `m_e`, positions uniform in the cell, directions from `law` (slab) or
/// isotropic on the sphere (3-D). The count is `floor + Bernoulli`, so the
/// expected sampled weight equals the target for any budget; the signed
/// remainder `total_weight - n m_e` stays with the caller's wave field.
/// A target below `-1e-12` signals an upstream conservation bug.
#[allow(clippy::too_many_arguments)]
pub fn resample_cell(
    mesh: &StructuredMesh,
    ijk: [usize; 3],
    group: u16,
    total_weight: f64,
    m_e: f64,
    law: &AngularLaw,
    rng: &mut impl Rng,
    next_id: &mut u64,
) -> Result<Vec<Particle>> {
    if total_weight < -1e-12 {
        return Err(Error::numerics(format!(
            "resample target weight {total_weight:.3e} is negative"
        )));
    }
    let n = stochastic_count(total_weight, m_e, rng);
    if n == 0 {
        return Ok(Vec::new());
    }
    let slab = mesh.is_slab();
    let mut out = Vec::with_capacity(n);
    for _ in 0..n {
        let mut pos = [0.0; 3];
        for a in 0..3 {
            pos[a] = mesh.lo[a] + (ijk[a] as f64 + rng.gen::<f64>()) * mesh.dx[a];
        }
        let dir = if slab {
            [sample_mu(law, rng)?, 0.0, 0.0]
        } else {
            crate::quad::sample_isotropic_direction(rng)
        };
        out.push(Particle {
            pos,
            dir,
            group,
            weight: m_e,
            id: *next_id,
        });
        *next_id += 1;
    }
    Ok(out)
}

/// Inflow injection for one slab face over one step: `n_target` equal
/// particles carrying `J_in dt A` total weight, entry times uniform in the
/// step, angles from `P(mu) ∝ |mu| phi_in`. For constant `phi_in` the
/// inverse CDF is `|mu| = sqrt(r)`.
pub fn sample_inflow(
    mesh: &StructuredMesh,
    side: usize,
    phi_in: f64,
    dt: f64,
    n_target: usize,
    group: u16,
    rng: &mut impl Rng,
    next_id: &mut u64,
) -> Vec<(Particle, f64)> {
    if phi_in <= 0.0 || n_target == 0 {
        return Vec::new();
    }
    let area = mesh.face_area(0);
    let j_in = 0.5 * phi_in;
    let w = j_in * dt * area / n_target as f64;
    let x = if side == 0 { mesh.lo[0] } else { mesh.hi[0] };
    let mu_sign = if side == 0 { 1.0 } else { -1.0 };
    (0..n_target)
        .map(|_| {
            let mu = mu_sign * rng.gen::<f64>().sqrt();
            let pos = [
                x,
                mesh.lo[1] + rng.gen::<f64>() * (mesh.hi[1] - mesh.lo[1]),
                mesh.lo[2] + rng.gen::<f64>() * (mesh.hi[2] - mesh.lo[2]),
            ];
            let t_entry = rng.gen::<f64>() * dt;
            let p = Particle {
                pos,
                dir: [mu, 0.0, 0.0],
                group,
                weight: w,
                id: {
                    let id = *next_id;
                    *next_id += 1;
                    id
                },
            };
            (p, t_entry)
        })
        .collect()
}

/// Global conservation bookkeeping, all terms in cell-inventory units
/// (`psi * V` summed over groups).
#[derive(Debug, Clone, Copy, Default)]
pub struct FluxLedger {
    pub initial: f64,
    pub sourced: f64,
    pub injected: f64,
    pub escaped: f64,
    pub absorbed: f64,
    pub final_inventory: f64,
}

impl FluxLedger {
    /// `initial + sourced + injected - escaped - absorbed - final`.
    pub fn residual(&self) -> f64 {
        self.initial + self.sourced + self.injected
            - self.escaped
            - self.absorbed
            - self.final_inventory
    }

    pub fn scale(&self) -> f64 {
        self.initial.abs()
            + self.sourced.abs()
            + self.injected.abs()
            + self.escaped.abs()
            + self.absorbed.abs()
            + self.final_inventory.abs()
    }

    pub fn relative_residual(&self) -> f64 {
        let s = self.scale();
        if s == 0.0 {
            0.0
        } else {
            self.residual() / s
        }
    }

    /// Multiply every entry by `f`; used when the field and the pool are
    /// renormalized together (power iteration) so the books stay balanced.
    pub fn rescale(&mut self, f: f64) {
        self.initial *= f;
        self.sourced *= f;
        self.injected *= f;
        self.escaped *= f;
        self.absorbed *= f;
        self.final_inventory *= f;
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{Boundary, StructuredMesh};
    use crate::rng::{Purpose, RngStream};
    use approx::assert_abs_diff_eq;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn rng(seed: u64) -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(seed)
    }

    #[test]
    fn free_flight_censors_at_dt() {
        let mut r = rng(3);
        let mut hits = 0;
        let n = 100_000;
        let tau = 2.0;
        let dt = 1.0;
        let mut sum = 0.0;
        for _ in 0..n {
            let t = sample_free_flight(tau, dt, &mut r);
            assert!(t > 0.0 && t <= dt);
            if t == dt {
                hits += 1;
            }
            sum += t;
        }
        // P(t_f = dt) = exp(-dt/tau).
        let p = (hits as f64) / (n as f64);
        assert!((p - (-0.5f64).exp()).abs() < 5e-3, "censoring prob {p}");
        // E[t_f] = tau (1 - exp(-dt/tau)).
        let expect = tau * (1.0 - (-0.5f64).exp());
        assert!((sum / n as f64 - expect).abs() < 5e-3);
    }

    #[test]
    fn slab_streaming_counts_crossings_and_escapes() {
        let mesh = StructuredMesh::slab(0.0, 1.0, 10, Boundary::Vacuum, Boundary::Vacuum).unwrap();
        let mut p = Particle {
            pos: [0.25, 0.5, 0.5],
            dir: [1.0, 0.0, 0.0],
            group: 0,
            weight: 2.0,
            id: 0,
        };
        let mut ev = Vec::new();
        // Travels 0.07: crosses x=0.3 only.
        let out = stream(&mut p, 1.0, 0.07, &mesh, &mut ev);
        assert_eq!(out, StreamOutcome::Alive { ijk: [3, 0, 0] });
        assert_eq!(ev.len(), 1);
        assert_eq!(ev[0].face, 3);
        assert_abs_diff_eq!(ev[0].weight, 2.0);
        assert_abs_diff_eq!(p.pos[0], 0.32, epsilon = 1e-12);

        // Run it off the right end.
        let out = stream(&mut p, 1.0, 10.0, &mesh, &mut ev);
        assert_eq!(out, StreamOutcome::Escaped { axis: 0, side: 1 });
        // Crossed faces 4 through 9 and the boundary face 10.
        assert_eq!(ev.len(), 8);
        assert_eq!(ev.last().unwrap().face, 10);
    }

    #[test]
    fn reflective_boundary_preserves_weight_and_flips() {
        let mesh =
            StructuredMesh::slab(0.0, 1.0, 4, Boundary::Reflective, Boundary::Reflective).unwrap();
        let mut p = Particle {
            pos: [0.72, 0.5, 0.5],
            dir: [1.0, 0.0, 0.0],
            group: 0,
            weight: 1.0,
            id: 0,
        };
        let mut ev = Vec::new();
        let out = stream(&mut p, 1.0, 0.6, &mesh, &mut ev);
        assert_eq!(out, StreamOutcome::Alive { ijk: [2, 0, 0] });
        assert!(p.dir[0] < 0.0);
        // 0.72 + 0.28 hits the wall, the remaining 0.32 walks back to 0.68.
        assert_abs_diff_eq!(p.pos[0], 0.68, epsilon = 1e-12);
        // Wall face not tallied; face 3 (x=0.75) crossed twice with
        // opposite signs.
        let net: f64 = ev.iter().map(|e| e.weight).sum();
        assert_abs_diff_eq!(net, 0.0);
        assert_eq!(ev.len(), 2);
        assert!(ev.iter().all(|e| e.face == 3));
    }

    #[test]
    fn periodic_wrap_tallies_twin_faces() {
        let mesh = StructuredMesh::slab(0.0, 1.0, 4, Boundary::Periodic, Boundary::Periodic).unwrap();
        let mut p = Particle {
            pos: [0.9, 0.5, 0.5],
            dir: [1.0, 0.0, 0.0],
            group: 0,
            weight: 1.0,
            id: 0,
        };
        let mut ev = Vec::new();
        let out = stream(&mut p, 1.0, 0.2, &mesh, &mut ev);
        assert_eq!(out, StreamOutcome::Alive { ijk: [0, 0, 0] });
        assert_abs_diff_eq!(p.pos[0], 0.1, epsilon = 1e-12);
        let faces: Vec<u32> = ev.iter().map(|e| e.face).collect();
        assert_eq!(faces, vec![4, 0]);
        assert!(ev.iter().all(|e| e.weight == 1.0));
    }

    #[test]
    fn streaming_is_reversible() {
        // Forward for t then backward for t returns to the start, and the
        // tallies cancel exactly.
        let mesh = StructuredMesh::new(
            [0.0; 3],
            [1.0, 1.0, 1.0],
            [7, 5, 3],
            [[Boundary::Reflective; 2]; 3],
        )
        .unwrap();
        let mut r = rng(11);
        for _ in 0..200 {
            let dir = crate::quad::sample_isotropic_direction(&mut r);
            let start = [
                0.05 + 0.9 * r.gen::<f64>(),
                0.05 + 0.9 * r.gen::<f64>(),
                0.05 + 0.9 * r.gen::<f64>(),
            ];
            let mut p = Particle {
                pos: start,
                dir,
                group: 0,
                weight: 1.0,
                id: 0,
            };
            let mut ev = Vec::new();
            let t = 0.8 * r.gen::<f64>();
            assert!(matches!(
                stream(&mut p, 1.0, t, &mesh, &mut ev),
                StreamOutcome::Alive { .. }
            ));
            p.dir = [-p.dir[0], -p.dir[1], -p.dir[2]];
            assert!(matches!(
                stream(&mut p, 1.0, t, &mesh, &mut ev),
                StreamOutcome::Alive { .. }
            ));
            for a in 0..3 {
                assert_abs_diff_eq!(p.pos[a], start[a], epsilon = 1e-9);
            }
            let net: f64 = ev.iter().map(|e| e.weight).sum();
            assert_abs_diff_eq!(net, 0.0, epsilon = 1e-12);
        }
    }

    #[test]
    fn three_d_crossing_count_matches_path_length() {
        // A diagonal ray on a uniform grid crosses a predictable set of
        // planes: moving from (0.5, 0.5, 0.5) by (3.3, 2.2, 1.1) cells'
        // worth of distance crosses 3 + 2 + 1 faces.
        let mesh = StructuredMesh::new(
            [0.0; 3],
            [10.0, 10.0, 10.0],
            [10, 10, 10],
            [[Boundary::Vacuum; 2]; 3],
        )
        .unwrap();
        let d = [3.3f64, 2.2, 1.1];
        let len = (d[0] * d[0] + d[1] * d[1] + d[2] * d[2]).sqrt();
        let mut p = Particle {
            pos: [0.5, 0.5, 0.5],
            dir: [d[0] / len, d[1] / len, d[2] / len],
            group: 0,
            weight: 1.0,
            id: 0,
        };
        let mut ev = Vec::new();
        assert_eq!(
            stream(&mut p, 1.0, len, &mesh, &mut ev),
            StreamOutcome::Alive { ijk: [3, 2, 1] }
        );
        assert_eq!(ev.len(), 6);
        assert_abs_diff_eq!(p.pos[0], 3.8, epsilon = 1e-12);
        assert_abs_diff_eq!(p.pos[1], 2.7, epsilon = 1e-12);
        assert_abs_diff_eq!(p.pos[2], 1.6, epsilon = 1e-12);
    }

    #[test]
    fn tilted_law_moments() {
        let mut r = RngStream::new(5).at(0, 0, Purpose::Resample);
        let b = 0.6;
        let law = AngularLaw::Tilted { b };
        let n = 400_000;
        let mut m1 = 0.0;
        let mut m2 = 0.0;
        for _ in 0..n {
            let mu = sample_mu(&law, &mut r).unwrap();
            assert!((-1.0..=1.0).contains(&mu));
            m1 += mu;
            m2 += mu * mu;
        }
        // E[mu] = b/3, E[mu^2] = 1/3 for p = (1 + b mu)/2.
        assert!((m1 / n as f64 - b / 3.0).abs() < 3e-3);
        assert!((m2 / n as f64 - 1.0 / 3.0).abs() < 3e-3);
    }

    #[test]
    fn tilted_law_chi_square_against_density() {
        let mut r = rng(17);
        let b = -0.8;
        let law = AngularLaw::Tilted { b };
        let bins = 20;
        let n = 200_000usize;
        let mut counts = vec![0usize; bins];
        for _ in 0..n {
            let mu = sample_mu(&law, &mut r).unwrap();
            let k = (((mu + 1.0) / 2.0) * bins as f64) as usize;
            counts[k.min(bins - 1)] += 1;
        }
        let mut chi2 = 0.0;
        for k in 0..bins {
            let lo = -1.0 + 2.0 * k as f64 / bins as f64;
            let hi = lo + 2.0 / bins as f64;
            // Integral of (1 + b mu)/2.
            let p = 0.5 * (hi - lo) + 0.25 * b * (hi * hi - lo * lo);
            let e = p * n as f64;
            chi2 += (counts[k] as f64 - e).powi(2) / e;
        }
        // 19 dof: the 0.999 quantile is ~43.8.
        assert!(chi2 < 43.8, "chi2 = {chi2}");
    }

    #[test]
    fn functional_law_matches_tilted_reference() {
        let mut r = rng(23);
        let f = |mu: f64| 1.0 + 0.5 * mu;
        let law = AngularLaw::Functional { f: &f, bound: 1.5 };
        let n = 300_000;
        let mut m1 = 0.0;
        for _ in 0..n {
            m1 += sample_mu(&law, &mut r).unwrap();
        }
        assert!((m1 / n as f64 - 0.5 / 3.0).abs() < 3e-3);
    }

    #[test]
    fn stochastic_count_is_unbiased_and_bounded() {
        let mut r = rng(31);
        let w = 7.3;
        let m_e = 1.0;
        let n = 200_000;
        let mut sum = 0usize;
        for _ in 0..n {
            let c = stochastic_count(w, m_e, &mut r);
            assert!(c == 7 || c == 8);
            sum += c;
        }
        assert!((sum as f64 / n as f64 - 7.3).abs() < 5e-3);
        assert_eq!(stochastic_count(0.0, 1.0, &mut r), 0);
    }

    #[test]
    fn resample_cell_unbiased_with_equal_mass() {
        let mesh = StructuredMesh::slab(0.0, 2.0, 8, Boundary::Vacuum, Boundary::Vacuum).unwrap();
        let mut r = rng(41);
        let mut id = 0;
        let target = 5.5;
        let m_e = 0.7;
        let ps = resample_cell(
            &mesh,
            [3, 0, 0],
            0,
            target,
            m_e,
            &AngularLaw::Isotropic,
            &mut r,
            &mut id,
        )
        .unwrap();
        assert!(!ps.is_empty());
        let total: f64 = ps.iter().map(|p| p.weight).sum();
        // Equal masses, so the signed residual is below one particle.
        assert!((total - target).abs() < m_e);
        for p in &ps {
            assert!(p.pos[0] >= 0.75 && p.pos[0] <= 1.0);
            assert!((p.weight - m_e).abs() < 1e-15);
            assert!(p.dir[0].abs() <= 1.0);
        }
        assert_eq!(id, ps.len() as u64);

        // E[sampled] = target over repeated draws, including sub-m_e
        // budgets where the count is a pure Bernoulli trial.
        for &t in &[5.5, 0.3 * m_e] {
            let mut sum = 0.0;
            let trials = 10_000;
            for _ in 0..trials {
                let ps = resample_cell(
                    &mesh,
                    [3, 0, 0],
                    0,
                    t,
                    m_e,
                    &AngularLaw::Isotropic,
                    &mut r,
                    &mut id,
                )
                .unwrap();
                sum += ps.len() as f64 * m_e;
            }
            let mean = sum / trials as f64;
            assert!((mean - t).abs() < 0.03 * m_e, "mean {mean} target {t}");
        }
        assert!(resample_cell(
            &mesh,
            [3, 0, 0],
            0,
            -1e-9,
            m_e,
            &AngularLaw::Isotropic,
            &mut r,
            &mut id,
        )
        .is_err());
    }

    #[test]
    fn inflow_weights_and_angles() {
        let mesh = StructuredMesh::slab(0.0, 1.0, 10, Boundary::Vacuum, Boundary::Inflow).unwrap();
        let mut r = rng(43);
        let mut id = 0;
        let phi_in = 2.0;
        let dt = 0.25;
        let ps = sample_inflow(&mesh, 1, phi_in, dt, 400, 0, &mut r, &mut id);
        assert_eq!(ps.len(), 400);
        let total: f64 = ps.iter().map(|(p, _)| p.weight).sum();
        // J_in dt A = (phi/2) * 0.25 * 1.
        assert_abs_diff_eq!(total, 0.5 * phi_in * dt, epsilon = 1e-12);
        let mut mean_mu = 0.0;
        for (p, t) in &ps {
            assert!(p.dir[0] < 0.0 && p.dir[0] >= -1.0);
            assert!(*t >= 0.0 && *t <= dt);
            assert_abs_diff_eq!(p.pos[0], 1.0);
            mean_mu += p.dir[0];
        }
        // E[mu] = -2/3 under P(mu) ∝ |mu|.
        assert!((mean_mu / 400.0 + 2.0 / 3.0).abs() < 0.05);
    }

    #[test]
    fn ledger_residual_is_zero_for_balanced_books() {
        let l = FluxLedger {
            initial: 1.0,
            sourced: 2.0,
            injected: 0.5,
            escaped: 0.7,
            absorbed: 1.3,
            final_inventory: 1.5,
        };
        assert_abs_diff_eq!(l.residual(), 0.0);
        assert_abs_diff_eq!(l.relative_residual(), 0.0);
    }
}
