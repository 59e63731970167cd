//! Built-in benchmark registry and the generic run/compare drivers.
//!
//! Each entry couples a geometry, a cross-section table, sources and a
//! drive into a ready [`RunConfig`]; the heavier 3-D decks live as plain
//! text under `data/` so the transcription stays auditable. `run` executes
//! any config (built-in or hand-rolled), extracts line profiles, and
//! optionally writes the CSV/field/summary artifacts.

use std::path::Path;
use std::time::Instant;

use crate::config::{
    DriveConfig, GeometrySource, InflowSpec, LineSpec, MaterialSource, Problem, ProblemKind,
    RunConfig, SolverMode, XsSource,
};
use crate::eigen::{self, EigenOptions};
use crate::error::{Error, Result};
use crate::geometry::{Boundary, BoundarySpec, GeometrySpec, StructuredMesh};
use crate::kinetics::compute_dt;
use crate::output::{self, LineSeries, RegionAverage, Summary};
use crate::solver::{
    transient_drive, DriveOutcome, DriveUntil, FissionTreatment, SolverOptions, TransportSolver,
    WaveParticleSolver,
};
use crate::ugks::UgksSolver;

const KUCA_XS: &str = include_str!("../data/kuca.xs");
const FBR_XS: &str = include_str!("../data/fbr.xs");
const THREE_REGION_ABS_XS: &str = include_str!("../data/three_region_abs.xs");
const THREE_REGION_SCA_XS: &str = include_str!("../data/three_region_sca.xs");
const THREE_CUBIC_GEOM: &str = include_str!("../data/three_cubic.geom.json");
const TOPHAT_GEOM: &str = include_str!("../data/tophat.geom.json");
const KUCA_ROD_IN_GEOM: &str = include_str!("../data/kuca_rod_in.geom.json");
const KUCA_ROD_OUT_GEOM: &str = include_str!("../data/kuca_rod_out.geom.json");
const FBR_ROD_IN_GEOM: &str = include_str!("../data/fbr_rod_in.geom.json");
const FBR_ROD_OUT_GEOM: &str = include_str!("../data/fbr_rod_out.geom.json");

pub const BENCH_IDS: &[&str] = &[
    "heaviside",
    "isoscatter",
    "unsteady",
    "three_cubic_abs",
    "three_cubic_sca",
    "tophat_abs",
    "tophat_sca",
    "kuca_rod_in",
    "kuca_rod_out",
    "fbr_rod_in",
    "fbr_rod_out",
];

pub fn bench_registry() -> Vec<&'static str> {
    BENCH_IDS.to_vec()
}

/// Knobs a caller may vary without editing the deck itself.
#[derive(Debug, Clone)]
pub struct BenchTweaks {
    /// Family parameter for `isoscatter` / `unsteady` (total cross section).
    pub sigma: Option<f64>,
    pub mode: Option<SolverMode>,
    pub seed: Option<u64>,
    pub n_ref: Option<usize>,
    pub quad: Option<usize>,
    /// Mesh override, e.g. a coarse grid for smoke runs.
    pub cells: Option<[usize; 3]>,
    pub workers: Option<usize>,
}

impl Default for BenchTweaks {
    fn default() -> Self {
        BenchTweaks {
            sigma: None,
            mode: None,
            seed: None,
            n_ref: None,
            quad: None,
            cells: None,
            workers: None,
        }
    }
}

fn single_group_xs(sigma_t: f64, sigma_s: f64) -> String {
    format!(
        "groups 1\nmaterial medium\n1  {sigma_t:.12e}  0.0  {sigma_s:.12e}  1.0  1.0\n"
    )
}

fn slab_geom(nx: usize, bc: BoundarySpec) -> GeometrySpec {
    GeometrySpec {
        domain_lo: [0.0, 0.0, 0.0],
        domain_hi: [1.0, 1.0, 1.0],
        cells: [nx, 1, 1],
        boundaries: bc,
        default_material: "medium".into(),
        boxes: Vec::new(),
    }
}

/// Build the ready-to-run config for a registry id.
pub fn config_for(id: &str, tweaks: &BenchTweaks) -> Result<RunConfig> {
    let mut cfg = match id {
        "heaviside" => {
            // Slab 0..1, sigma_t = 1 pure absorber, unit source on x > 0.5,
            // zero inflow on the left, unit incident intensity on the right.
            let mut geom = slab_geom(50, BoundarySpec::slab(Boundary::Vacuum, Boundary::Inflow));
            geom.default_material = "bg".into();
            geom.boxes.push(crate::geometry::BoxRegion {
                lo: [0.5, 0.0, 0.0],
                hi: [1.0, 1.0, 1.0],
                material: "src".into(),
            });
            let xs = "groups 1\nmaterial bg\n1  1.0  0.0  0.0  1.0  1.0\nmaterial src\n1  1.0  0.0  0.0  1.0  1.0\n";
            let mut c = RunConfig::named(
                "heaviside",
                GeometrySource::Inline(geom),
                XsSource::Inline(xs.into()),
            );
            c.sources = vec![MaterialSource {
                material: "src".into(),
                q: 1.0,
            }];
            c.inflow = vec![InflowSpec {
                axis: 0,
                side: 1,
                phi_in: 1.0,
            }];
            c.cfl = 0.4;
            c.quad = 32;
            c.n_ref = 100;
            c.drive = DriveConfig::Transient {
                t_end: 5.0,
                average_after: Some(3.0),
            };
            c.outputs.lines = vec![LineSpec {
                name: "psi_x".into(),
                origin: [0.0, 0.5, 0.5],
                direction: [1.0, 0.0, 0.0],
            }];
            c
        }
        "isoscatter" => {
            let sigma = tweaks.sigma.unwrap_or(1.0);
            if !(sigma > 0.0) {
                return Err(Error::config("isoscatter needs sigma > 0"));
            }
            let mut c = RunConfig::named(
                "isoscatter",
                GeometrySource::Inline(slab_geom(
                    40,
                    BoundarySpec::slab(Boundary::Vacuum, Boundary::Vacuum),
                )),
                XsSource::Inline(single_group_xs(sigma, sigma)),
            );
            c.sources = vec![MaterialSource {
                material: "medium".into(),
                q: 0.5,
            }];
            c.cfl = 0.2;
            c.quad = 32;
            c.drive = DriveConfig::Steady {
                tol: 2e-7,
                window: 50,
                max_steps: 400_000,
                average: 100,
            };
            c.outputs.lines = vec![LineSpec {
                name: "psi_x".into(),
                origin: [0.0, 0.5, 0.5],
                direction: [1.0, 0.0, 0.0],
            }];
            c
        }
        "unsteady" => {
            let sigma = tweaks.sigma.unwrap_or(1.0);
            if !(sigma > 0.0) {
                return Err(Error::config("unsteady needs sigma > 0"));
            }
            let mut c = RunConfig::named(
                "unsteady",
                GeometrySource::Inline(slab_geom(
                    40,
                    BoundarySpec::slab(Boundary::Periodic, Boundary::Periodic),
                )),
                XsSource::Inline(single_group_xs(sigma, sigma)),
            );
            c.cfl = 0.3;
            c.quad = 8;
            c.special = ProblemKind::Manufactured { sigma };
            c.drive = DriveConfig::Transient {
                t_end: 1.0,
                average_after: None,
            };
            c.outputs.lines = vec![LineSpec {
                name: "psi_x".into(),
                origin: [0.0, 0.5, 0.5],
                direction: [1.0, 0.0, 0.0],
            }];
            c
        }
        "three_cubic_abs" | "three_cubic_sca" => {
            let xs = if id.ends_with("abs") {
                THREE_REGION_ABS_XS
            } else {
                THREE_REGION_SCA_XS
            };
            let geom = GeometrySpec::from_json(THREE_CUBIC_GEOM)?;
            let mut c = RunConfig::named(
                id,
                GeometrySource::Inline(geom),
                XsSource::Inline(xs.into()),
            );
            // Unit isotropic volume source: 1/(4 pi) per steradian.
            c.sources = vec![MaterialSource {
                material: "source".into(),
                q: 0.25 * std::f64::consts::FRAC_1_PI,
            }];
            c.cfl = 0.2;
            c.drive = DriveConfig::Steady {
                tol: 1e-6,
                window: 20,
                max_steps: 20_000,
                average: 20,
            };
            c.outputs.lines = vec![
                LineSpec {
                    name: "x5z5".into(),
                    origin: [5.0, 0.0, 5.0],
                    direction: [0.0, 1.0, 0.0],
                },
                LineSpec {
                    name: "diag".into(),
                    origin: [0.0, 0.0, 0.0],
                    direction: [1.0, 1.0, 1.0],
                },
                LineSpec {
                    name: "y55z5".into(),
                    origin: [0.0, 55.0, 5.0],
                    direction: [1.0, 0.0, 0.0],
                },
            ];
            c
        }
        "tophat_abs" | "tophat_sca" => {
            let xs = if id.ends_with("abs") {
                THREE_REGION_ABS_XS
            } else {
                THREE_REGION_SCA_XS
            };
            let geom = GeometrySpec::from_json(TOPHAT_GEOM)?;
            let mut c = RunConfig::named(
                id,
                GeometrySource::Inline(geom),
                XsSource::Inline(xs.into()),
            );
            c.sources = vec![MaterialSource {
                material: "source".into(),
                q: 0.25 * std::f64::consts::FRAC_1_PI,
            }];
            c.cfl = 0.2;
            c.drive = DriveConfig::Steady {
                tol: 1e-6,
                window: 20,
                max_steps: 20_000,
                average: 20,
            };
            c.outputs.lines = vec![
                LineSpec {
                    name: "x5z5".into(),
                    origin: [5.0, 0.0, 5.0],
                    direction: [0.0, 1.0, 0.0],
                },
                LineSpec {
                    name: "y55z5".into(),
                    origin: [0.0, 55.0, 5.0],
                    direction: [1.0, 0.0, 0.0],
                },
                LineSpec {
                    name: "y95z5".into(),
                    origin: [0.0, 95.0, 5.0],
                    direction: [1.0, 0.0, 0.0],
                },
            ];
            c
        }
        "kuca_rod_in" | "kuca_rod_out" => {
            let geom = GeometrySpec::from_json(if id.ends_with("in") {
                KUCA_ROD_IN_GEOM
            } else {
                KUCA_ROD_OUT_GEOM
            })?;
            let mut c = RunConfig::named(
                id,
                GeometrySource::Inline(geom),
                XsSource::Inline(KUCA_XS.into()),
            );
            c.cfl = 0.8;
            c.drive = DriveConfig::Eigen {
                k_tol: 3e-5,
                window: 200,
                discard: 2,
                stat_windows: 5,
                max_steps: 60_000,
            };
            c.outputs.region_averages = true;
            c.outputs.lines = vec![
                LineSpec {
                    name: "diag".into(),
                    origin: [0.0, 0.0, 0.0],
                    direction: [1.0, 1.0, 1.0],
                },
                LineSpec {
                    name: "x16y5".into(),
                    origin: [16.0, 5.0, 0.0],
                    direction: [0.0, 0.0, 1.0],
                },
            ];
            c
        }
        "fbr_rod_in" | "fbr_rod_out" => {
            let geom = GeometrySpec::from_json(if id.ends_with("in") {
                FBR_ROD_IN_GEOM
            } else {
                FBR_ROD_OUT_GEOM
            })?;
            let mut c = RunConfig::named(
                id,
                GeometrySource::Inline(geom),
                XsSource::Inline(FBR_XS.into()),
            );
            c.cfl = 0.4;
            c.drive = DriveConfig::Eigen {
                k_tol: 3e-5,
                window: 200,
                discard: 2,
                stat_windows: 5,
                max_steps: 60_000,
            };
            c.outputs.region_averages = true;
            c.outputs.lines = vec![
                LineSpec {
                    name: "y0z0".into(),
                    origin: [0.0, 0.0, 0.0],
                    direction: [1.0, 0.0, 0.0],
                },
                LineSpec {
                    name: "xyz37".into(),
                    origin: [0.0, 0.0, 37.5],
                    direction: [1.0, 1.0, 0.0],
                },
            ];
            c
        }
        other => {
            return Err(Error::config(format!(
                "unknown benchmark `{other}`; valid ids: {}",
                BENCH_IDS.join(", ")
            )))
        }
    };

    if let Some(m) = tweaks.mode {
        cfg.mode = m;
    }
    if let Some(s) = tweaks.seed {
        cfg.seed = s;
    }
    if let Some(n) = tweaks.n_ref {
        cfg.n_ref = n;
    }
    if let Some(q) = tweaks.quad {
        cfg.quad = q;
    }
    if let Some(w) = tweaks.workers {
        cfg.workers = Some(w);
    }
    if let Some(cells) = tweaks.cells {
        match &mut cfg.geometry {
            GeometrySource::Inline(g) => g.cells = cells,
            GeometrySource::Path(_) => {
                return Err(Error::config("cell override needs an inline geometry"))
            }
        }
    }
    Ok(cfg)
}

#[derive(Debug, Clone)]
pub struct ResultBundle {
    pub config_hash: u64,
    pub seed: u64,
    pub mesh: StructuredMesh,
    pub groups: usize,
    /// Final field (time-averaged when the drive asks for it).
    pub psi: Vec<f64>,
    /// `(series name, per-group profile)`, one series per line and group.
    pub lines: Vec<(String, LineSeries)>,
    pub summary: Summary,
    pub k_trace: Option<Vec<f64>>,
}

fn mode_name(mode: SolverMode) -> &'static str {
    match mode {
        SolverMode::Ugks => "ugks",
        SolverMode::Ugkp => "ugkp",
        SolverMode::Ugkwp => "ugkwp",
    }
}

/// Execute a config end to end. When `out_dir` is given, writes
/// `<name>_<line>_g<g>.csv` per extracted profile, `<name>_field.vtk` when
/// the config asks for a dump, and `<name>_summary.json`.
pub fn run(config: &RunConfig, out_dir: Option<&Path>) -> Result<ResultBundle> {
    match config.workers {
        Some(n) => {
            let pool = rayon::ThreadPoolBuilder::new()
                .num_threads(n)
                .build()
                .map_err(|e| Error::config(format!("worker pool: {e}")))?;
            pool.install(|| run_inner(config, out_dir))
        }
        None => run_inner(config, out_dir),
    }
}

fn run_inner(config: &RunConfig, out_dir: Option<&Path>) -> Result<ResultBundle> {
    let canonical = config.to_json()?;
    let hash = output::config_hash(&canonical);
    let problem = config.assemble()?;
    let dt = compute_dt(
        &problem.mesh,
        &problem.map,
        &problem.xs,
        config.dt_policy,
        config.cfl,
        config.fixed_dt,
    )?;

    let fissile = problem
        .xs
        .materials
        .iter()
        .any(|m| m.nu_sigma_f.iter().any(|&f| f > 0.0));
    let fission = if fissile {
        FissionTreatment::Implicit
    } else {
        FissionTreatment::Frozen {
            emission: vec![0.0; problem.mesh.cell_count() * problem.groups],
        }
    };

    let mut solver: Box<dyn TransportSolver> = match config.mode {
        SolverMode::Ugks => Box::new(UgksSolver::new(&problem, config.quad, fission)?),
        SolverMode::Ugkp | SolverMode::Ugkwp => {
            let opts = SolverOptions {
                mode: config.mode,
                n_ref: config.n_ref,
                seed: config.seed,
                quad_n: config.quad,
                tilt: false,
            };
            Box::new(WaveParticleSolver::new(&problem, opts, fission)?)
        }
    };

    let wall = Instant::now();
    let mut summary = Summary::new(&config.name, mode_name(config.mode), hash, config.seed);
    let mut k_trace = None;

    let psi: Vec<f64> = match &config.drive {
        DriveConfig::Transient {
            t_end,
            average_after,
        } => {
            let out = transient_drive(
                solver.as_mut(),
                dt,
                DriveUntil::Time {
                    t_end: *t_end,
                    average_after: *average_after,
                },
            )?;
            finish_field(&out, solver.as_ref())
        }
        DriveConfig::Steady {
            tol,
            window,
            max_steps,
            average,
        } => {
            let out = transient_drive(
                solver.as_mut(),
                dt,
                DriveUntil::Steady {
                    tol: *tol,
                    window: *window,
                    max_steps: *max_steps as u64,
                    average: *average,
                },
            )?;
            if !out.steady {
                return Err(Error::numerics(format!(
                    "`{}` did not reach steady state in {} steps",
                    config.name, out.steps
                )));
            }
            finish_field(&out, solver.as_ref())
        }
        DriveConfig::Eigen {
            k_tol,
            window,
            discard,
            stat_windows,
            max_steps,
        } => {
            let opts = EigenOptions {
                dt,
                window: *window,
                discard: *discard,
                stat_windows: *stat_windows,
                tol_k: *k_tol,
                max_steps: *max_steps,
            };
            let out = eigen::power_iteration(solver.as_mut(), &problem, &opts)?;
            summary.k_eff = Some(out.k_eff);
            summary.sigma_k = Some(out.sigma_k);
            k_trace = Some(out.k_trace.clone());
            out.psi
        }
    };

    summary.wall_seconds = wall.elapsed().as_secs_f64();
    summary.t_end = solver.time();
    summary.steps = solver.steps_taken();
    summary.ledger_residual = solver.ledger().relative_residual();
    let tel = solver.telemetry();
    if !tel.is_empty() {
        summary.mean_step_seconds =
            Some(tel.iter().map(|t| t.wall_ms).sum::<f64>() / 1e3 / tel.len() as f64);
        summary.sampled_particles_mean =
            Some(tel.iter().map(|t| t.sampled as f64).sum::<f64>() / tel.len() as f64);
    }

    // Region averages under the unit-production normalization.
    let psi_reported = if config.outputs.region_averages && fissile {
        let (scaled, avgs) = region_averages(&problem, &psi)?;
        summary.region_averages = Some(avgs);
        scaled
    } else {
        psi.clone()
    };

    let mut lines = Vec::new();
    for spec in &config.outputs.lines {
        for (g, series) in extract_line(&problem.mesh, &psi_reported, problem.groups, spec)?
            .into_iter()
            .enumerate()
        {
            lines.push((format!("{}_g{g}", spec.name), series));
        }
    }

    if let Some(dir) = out_dir {
        std::fs::create_dir_all(dir)
            .map_err(|e| Error::config(format!("creating {}: {e}", dir.display())))?;
        for (name, series) in &lines {
            let path = dir.join(format!("{}_{}.csv", config.name, name));
            output::write_line_csv(&path, series, hash, config.seed)?;
        }
        if config.outputs.field_dump {
            let path = dir.join(format!("{}_field.vtk", config.name));
            output::write_field_vtk(
                &path,
                &problem.mesh,
                &psi_reported,
                problem.groups,
                hash,
                config.seed,
            )?;
        }
        summary.write(&dir.join(format!("{}_summary.json", config.name)))?;
    }

    Ok(ResultBundle {
        config_hash: hash,
        seed: config.seed,
        mesh: problem.mesh.clone(),
        groups: problem.groups,
        psi: psi_reported,
        lines,
        summary,
        k_trace,
    })
}

fn finish_field(out: &DriveOutcome, solver: &dyn TransportSolver) -> Vec<f64> {
    match &out.averaged_psi {
        Some(avg) if out.samples > 0 => avg.clone(),
        _ => solver.psi().to_vec(),
    }
}

/// Normalize so total production over volume and angle is one, then
/// average the scaled flux over each material region. Returns the scaled
/// field and the per-material, per-group means.
pub fn region_averages(problem: &Problem, psi: &[f64]) -> Result<(Vec<f64>, Vec<RegionAverage>)> {
    let gg = problem.groups;
    let nc = problem.mesh.cell_count();
    let vol = problem.mesh.cell_volume();
    let angle = if problem.mesh.is_slab() {
        2.0
    } else {
        4.0 * std::f64::consts::PI
    };
    let mut production = 0.0;
    for c in 0..nc {
        let m = problem.material(c);
        for g in 0..gg {
            production += m.nu_sigma_f[g] * psi[c * gg + g] * vol * angle;
        }
    }
    if !(production > 0.0) {
        return Err(Error::numerics("no fission production to normalize by"));
    }
    let scale = 1.0 / production;
    let scaled: Vec<f64> = psi.iter().map(|v| v * scale).collect();

    let nm = problem.xs.materials.len();
    let mut sums = vec![0.0; nm * gg];
    let mut counts = vec![0usize; nm];
    for c in 0..nc {
        let id = problem.map.ids[c] as usize;
        counts[id] += 1;
        for g in 0..gg {
            sums[id * gg + g] += scaled[c * gg + g];
        }
    }
    let mut avgs = Vec::new();
    for (id, mat) in problem.xs.materials.iter().enumerate() {
        if counts[id] == 0 {
            continue;
        }
        for g in 0..gg {
            avgs.push(RegionAverage {
                region: mat.name.clone(),
                group: g,
                mean_psi: sums[id * gg + g] / counts[id] as f64,
            });
        }
    }
    Ok((scaled, avgs))
}

/// Sample the field at the cell centers a line hits, one series per group.
/// The abscissa is the distance of each cell center's projection along the
/// unit direction, measured from `origin`.
pub fn extract_line(
    mesh: &StructuredMesh,
    psi: &[f64],
    groups: usize,
    spec: &LineSpec,
) -> Result<Vec<LineSeries>> {
    let d = spec.direction;
    let norm = (d[0] * d[0] + d[1] * d[1] + d[2] * d[2]).sqrt();
    if !(norm > 0.0) {
        return Err(Error::config(format!(
            "line `{}` has a zero direction",
            spec.name
        )));
    }
    let u = [d[0] / norm, d[1] / norm, d[2] / norm];
    let step = 0.25 * mesh.min_spacing();
    let mut cells: Vec<usize> = Vec::new();
    let mut t = step * 0.5;
    loop {
        let p = [
            spec.origin[0] + t * u[0],
            spec.origin[1] + t * u[1],
            spec.origin[2] + t * u[2],
        ];
        let inside = (0..3).all(|a| p[a] >= mesh.lo[a] - 1e-12 && p[a] <= mesh.hi[a] + 1e-12);
        if !inside {
            break;
        }
        let idx = mesh.index(mesh.cell_of_point(p));
        if cells.last() != Some(&idx) {
            cells.push(idx);
        }
        t += step;
    }
    if cells.is_empty() {
        return Err(Error::config(format!(
            "line `{}` misses the domain",
            spec.name
        )));
    }
    let mut out = Vec::with_capacity(groups);
    for g in 0..groups {
        let mut abscissa = Vec::with_capacity(cells.len());
        let mut value = Vec::with_capacity(cells.len());
        for &c in &cells {
            let ctr = mesh.center(mesh.ijk(c));
            let proj = (0..3).map(|a| (ctr[a] - spec.origin[a]) * u[a]).sum::<f64>();
            abscissa.push(proj);
            value.push(psi[c * groups + g]);
        }
        out.push(LineSeries::new(abscissa, value, None)?);
    }
    Ok(out)
}

#[derive(Debug, Clone)]
pub struct CompareReport {
    pub n: usize,
    /// `max |a-b| / max |oracle|`.
    pub linf_rel: f64,
    /// `||a-b||_2 / ||oracle||_2`.
    pub l2_rel: f64,
    pub tolerance: f64,
    pub pass: bool,
}

/// Compare a result profile against an oracle profile on the same grid.
pub fn compare(result: &LineSeries, oracle: &LineSeries, tolerance: f64) -> Result<CompareReport> {
    if result.len() != oracle.len() {
        return Err(Error::config(format!(
            "grid mismatch: {} points vs {}",
            result.len(),
            oracle.len()
        )));
    }
    let mut ref_max = 0.0f64;
    for (a, b) in result.abscissa.iter().zip(&oracle.abscissa) {
        let scale = a.abs().max(b.abs()).max(1.0);
        if (a - b).abs() > 1e-9 * scale {
            return Err(Error::config(format!(
                "grid mismatch: abscissa {a} vs {b}"
            )));
        }
    }
    for v in &oracle.value {
        ref_max = ref_max.max(v.abs());
    }
    let mut dmax = 0.0f64;
    let mut d2 = 0.0;
    let mut r2 = 0.0;
    for (a, b) in result.value.iter().zip(&oracle.value) {
        let d = a - b;
        dmax = dmax.max(d.abs());
        d2 += d * d;
        r2 += b * b;
    }
    let linf_rel = if ref_max > 0.0 { dmax / ref_max } else { dmax };
    let l2_rel = if r2 > 0.0 {
        (d2 / r2).sqrt()
    } else {
        d2.sqrt()
    };
    Ok(CompareReport {
        n: result.len(),
        linf_rel,
        l2_rel,
        tolerance,
        pass: linf_rel <= tolerance,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn registry_lists_every_deck_and_rejects_unknown_ids() {
        for id in bench_registry() {
            let cfg = config_for(id, &BenchTweaks::default()).unwrap();
            // every built-in deck must assemble into a solvable problem
            let p = cfg.assemble().unwrap();
            assert!(p.mesh.cell_count() > 0, "{id}");
        }
        let err = config_for("nonesuch", &BenchTweaks::default()).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("nonesuch") && msg.contains("heaviside"), "{msg}");
    }

    #[test]
    fn built_in_decks_paint_the_expected_materials() {
        // three-cubic: cell at (5,5,5) is source, (30,30,30) void,
        // (80,80,80) shield
        let cfg = config_for("three_cubic_abs", &BenchTweaks::default()).unwrap();
        let p = cfg.assemble().unwrap();
        let at = |x: f64, y: f64, z: f64| {
            let ijk = p.mesh.cell_of_point([x, y, z]);
            p.xs.at(p.map.ids[p.mesh.index(ijk)]).name.clone()
        };
        assert_eq!(at(5.0, 5.0, 5.0), "source");
        assert_eq!(at(30.0, 30.0, 30.0), "void");
        assert_eq!(at(80.0, 80.0, 80.0), "shield");
        // source emits 1/(4 pi) per steradian at the cell level
        let c = p.mesh.index(p.mesh.cell_of_point([5.0, 5.0, 5.0]));
        assert!((p.q_psi[c] - 0.25 * std::f64::consts::FRAC_1_PI).abs() < 1e-15);

        // kuca rod-in: rod channel holds control_rod, rod-out holds void
        for (id, want) in [("kuca_rod_in", "control_rod"), ("kuca_rod_out", "void")] {
            let cfg = config_for(id, &BenchTweaks::default()).unwrap();
            let p = cfg.assemble().unwrap();
            let ijk = p.mesh.cell_of_point([17.5, 2.5, 12.5]);
            assert_eq!(p.xs.at(p.map.ids[p.mesh.index(ijk)]).name, want, "{id}");
            let core = p.mesh.cell_of_point([7.5, 7.5, 7.5]);
            assert_eq!(p.xs.at(p.map.ids[p.mesh.index(core)]).name, "core");
        }
    }

    #[test]
    fn cells_override_reshapes_the_mesh() {
        let tweaks = BenchTweaks {
            cells: Some([20, 20, 20]),
            ..Default::default()
        };
        let cfg = config_for("three_cubic_abs", &tweaks).unwrap();
        let p = cfg.assemble().unwrap();
        assert_eq!(p.mesh.n, [20, 20, 20]);
    }

    #[test]
    fn xs_decks_round_trip_verbatim() {
        for (text, file) in [
            (KUCA_XS, "kuca.xs"),
            (FBR_XS, "fbr.xs"),
            (THREE_REGION_ABS_XS, "three_region_abs.xs"),
            (THREE_REGION_SCA_XS, "three_region_sca.xs"),
        ] {
            let set = crate::xs::CrossSectionSet::parse_str(text, file).unwrap();
            assert_eq!(set.write_str(), text, "{file}");
        }
    }

    #[test]
    fn fbr_deck_has_eight_materials_and_correct_chi() {
        let set = crate::xs::CrossSectionSet::parse_str(FBR_XS, "fbr.xs").unwrap();
        assert_eq!(set.groups, 4);
        assert_eq!(set.materials.len(), 8);
        let core = set.at(set.id_of("core").unwrap());
        assert_eq!(core.chi, vec![0.583319, 0.405450, 0.011231, 0.0]);
        let chi_sum: f64 = core.chi.iter().sum();
        assert!((chi_sum - 1.0).abs() < 1e-12);
    }

    #[test]
    fn line_extraction_walks_cell_centers() {
        let mesh = StructuredMesh::new(
            [0.0; 3],
            [4.0, 4.0, 4.0],
            [4, 4, 4],
            [[Boundary::Vacuum; 2]; 3],
        )
        .unwrap();
        let mut psi = vec![0.0; 64];
        for c in 0..64 {
            psi[c] = c as f64;
        }
        let spec = LineSpec {
            name: "x".into(),
            origin: [0.0, 0.5, 0.5],
            direction: [1.0, 0.0, 0.0],
        };
        let series = extract_line(&mesh, &psi, 1, &spec).unwrap();
        assert_eq!(series.len(), 1);
        let s = &series[0];
        assert_eq!(s.abscissa, vec![0.5, 1.5, 2.5, 3.5]);
        assert_eq!(s.value, vec![0.0, 1.0, 2.0, 3.0]);

        // the diagonal of the same mesh hits the four diagonal cells
        let diag = LineSpec {
            name: "d".into(),
            origin: [0.0, 0.0, 0.0],
            direction: [1.0, 1.0, 1.0],
        };
        let d = &extract_line(&mesh, &psi, 1, &diag).unwrap()[0];
        assert_eq!(d.value.len(), 4);
        assert_eq!(d.value[0], 0.0);
        assert_eq!(d.value[3], 63.0);
    }

    #[test]
    fn comparator_scores_identity_and_scaling() {
        let a = LineSeries::new(vec![0.0, 1.0, 2.0], vec![1.0, 2.0, 4.0], None).unwrap();
        let same = compare(&a, &a, 0.01).unwrap();
        assert_eq!(same.linf_rel, 0.0);
        assert_eq!(same.l2_rel, 0.0);
        assert!(same.pass);

        let scaled =
            LineSeries::new(vec![0.0, 1.0, 2.0], vec![1.1, 2.2, 4.4], None).unwrap();
        let rep = compare(&scaled, &a, 0.01).unwrap();
        assert!(!rep.pass);
        assert!((rep.linf_rel - 0.1).abs() < 1e-12);

        let other_grid = LineSeries::new(vec![0.0, 1.5, 2.0], vec![1.0, 2.0, 4.0], None).unwrap();
        assert!(compare(&other_grid, &a, 0.01).is_err());
    }

    #[test]
    fn heaviside_runs_transient_and_extracts_lines() {
        let tweaks = BenchTweaks {
            mode: Some(SolverMode::Ugks),
            quad: Some(8),
            ..Default::default()
        };
        let mut cfg = config_for("heaviside", &tweaks).unwrap();
        // short smoke horizon; the acceptance suite runs the full deck
        cfg.drive = DriveConfig::Transient {
            t_end: 0.5,
            average_after: None,
        };
        let bundle = run(&cfg, None).unwrap();
        assert_eq!(bundle.lines.len(), 1);
        assert_eq!(bundle.lines[0].1.len(), 50);
        assert!(bundle.summary.ledger_residual.abs() < 1e-10);
        assert!(bundle.psi.iter().all(|v| v.is_finite()));

        // determinism: identical config, identical output
        let again = run(&cfg, None).unwrap();
        assert_eq!(bundle.psi, again.psi);
        assert_eq!(bundle.config_hash, again.config_hash);
    }

    #[test]
    fn worker_count_does_not_change_results() {
        let tweaks = BenchTweaks {
            sigma: Some(1.0),
            seed: Some(11),
            n_ref: Some(64),
            ..Default::default()
        };
        let mut cfg = config_for("unsteady", &tweaks).unwrap();
        cfg.drive = DriveConfig::Transient {
            t_end: 0.2,
            average_after: None,
        };
        cfg.workers = Some(1);
        let one = run(&cfg, None).unwrap();
        cfg.workers = Some(4);
        let four = run(&cfg, None).unwrap();
        assert_eq!(one.psi, four.psi);
    }
}
