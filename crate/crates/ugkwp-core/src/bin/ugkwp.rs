use std::path::PathBuf;

use anyhow::{bail, Context};
use clap::{Parser, Subcommand, ValueEnum};

use ugkwp_core::bench::{self, BenchTweaks};
use ugkwp_core::config::{DriveConfig, ProblemKind, RunConfig, SolverMode};
use ugkwp_core::oracles::{heaviside, manufactured, raytrace};
use ugkwp_core::output::{self, LineSeries};

#[derive(Parser)]
#[command(
    name = "ugkwp",
    version,
    about = "Multiscale neutron transport: deterministic, particle, and wave-particle solvers"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Copy, Clone, ValueEnum)]
enum ModeArg {
    Ugks,
    Ugkp,
    Ugkwp,
}

impl From<ModeArg> for SolverMode {
    fn from(m: ModeArg) -> Self {
        match m {
            ModeArg::Ugks => SolverMode::Ugks,
            ModeArg::Ugkp => SolverMode::Ugkp,
            ModeArg::Ugkwp => SolverMode::Ugkwp,
        }
    }
}

#[derive(Subcommand)]
enum Command {
    /// List the built-in benchmark ids.
    List,
    /// Run a built-in benchmark or a JSON config file.
    Run {
        /// Built-in benchmark id (see `list`).
        #[arg(long, conflicts_with = "config")]
        bench: Option<String>,
        /// Path to a JSON run config.
        #[arg(long)]
        config: Option<PathBuf>,
        /// Output directory (default: $UGKWP_OUT_DIR or ./out).
        #[arg(long)]
        out: Option<PathBuf>,
        /// Skip writing artifacts; print the summary only.
        #[arg(long)]
        no_write: bool,
        #[arg(long)]
        mode: Option<ModeArg>,
        /// Family parameter for isoscatter/unsteady.
        #[arg(long)]
        sigma: Option<f64>,
        #[arg(long)]
        seed: Option<u64>,
        /// Reference particle count per cell for the particle modes.
        #[arg(long)]
        n_ref: Option<usize>,
        /// Velocity quadrature order (deterministic slab mode).
        #[arg(long)]
        quad: Option<usize>,
        /// Mesh override as NX,NY,NZ.
        #[arg(long, value_delimiter = ',', num_args = 3)]
        cells: Option<Vec<usize>>,
        /// Rayon worker threads (default: all cores).
        #[arg(long)]
        workers: Option<usize>,
        /// Shorten a transient drive to this horizon.
        #[arg(long)]
        t_end: Option<f64>,
    },
    /// Write the reference profile a benchmark's first line is judged
    /// against (closed-form or ray-traced; only some decks have one).
    Oracle {
        #[arg(long)]
        bench: String,
        /// Line name from the deck's output spec (default: first line).
        #[arg(long)]
        line: Option<String>,
        #[arg(long)]
        sigma: Option<f64>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Compare two profile CSVs; exits nonzero when they disagree.
    Compare {
        result: PathBuf,
        oracle: PathBuf,
        /// Relative max-norm tolerance.
        #[arg(long, default_value_t = 0.05)]
        tol: f64,
    },
}

fn out_dir(flag: Option<PathBuf>) -> PathBuf {
    flag.or_else(|| std::env::var_os("UGKWP_OUT_DIR").map(PathBuf::from))
        .unwrap_or_else(|| PathBuf::from("out"))
}

fn main() -> anyhow::Result<()> {
    let cli = Cli::parse();
    match cli.command {
        Command::List => {
            for id in bench::bench_registry() {
                println!("{id}");
            }
            Ok(())
        }
        Command::Run {
            bench: bench_id,
            config,
            out,
            no_write,
            mode,
            sigma,
            seed,
            n_ref,
            quad,
            cells,
            workers,
            t_end,
        } => {
            let tweaks = BenchTweaks {
                sigma,
                mode: mode.map(Into::into),
                seed,
                n_ref,
                quad,
                cells: cells.map(|c| [c[0], c[1], c[2]]),
                workers,
            };
            let mut cfg = match (bench_id, config) {
                (Some(id), None) => bench::config_for(&id, &tweaks)?,
                (None, Some(path)) => {
                    let text = std::fs::read_to_string(&path)
                        .with_context(|| format!("reading {}", path.display()))?;
                    let mut c = RunConfig::from_json(&text)?;
                    if let Some(m) = tweaks.mode {
                        c.mode = m;
                    }
                    if let Some(s) = tweaks.seed {
                        c.seed = s;
                    }
                    if let Some(n) = tweaks.n_ref {
                        c.n_ref = n;
                    }
                    if let Some(q) = tweaks.quad {
                        c.quad = q;
                    }
                    if let Some(w) = tweaks.workers {
                        c.workers = Some(w);
                    }
                    c
                }
                _ => bail!("pass exactly one of --bench or --config"),
            };
            if let Some(t) = t_end {
                if let DriveConfig::Transient { t_end, .. } = &mut cfg.drive {
                    *t_end = t;
                } else {
                    bail!("--t-end only applies to transient drives");
                }
            }
            let dir = out_dir(out);
            let bundle = bench::run(&cfg, if no_write { None } else { Some(&dir) })?;
            println!("{}", bundle.summary.to_json());
            Ok(())
        }
        Command::Oracle {
            bench: id,
            line,
            sigma,
            out,
        } => {
            let tweaks = BenchTweaks {
                sigma,
                ..Default::default()
            };
            let cfg = bench::config_for(&id, &tweaks)?;
            let problem = cfg.assemble()?;
            let spec = match &line {
                Some(name) => cfg
                    .outputs
                    .lines
                    .iter()
                    .find(|l| &l.name == name)
                    .with_context(|| format!("deck `{id}` has no line `{name}`"))?,
                None => cfg
                    .outputs
                    .lines
                    .first()
                    .with_context(|| format!("deck `{id}` defines no lines"))?,
            };
            // Reference values on the same cell-center abscissae the run
            // itself reports, so `compare` sees matching grids.
            let grid = bench::extract_line(&problem.mesh, &vec![0.0; problem.mesh.cell_count()], 1, spec)?
                .remove(0);
            let value: Vec<f64> = match id.as_str() {
                "heaviside" => grid
                    .abscissa
                    .iter()
                    .map(|&x| heaviside::psi_reference(x, cfg.quad, 1.0))
                    .collect(),
                "unsteady" => {
                    let t = match cfg.drive {
                        DriveConfig::Transient { t_end, .. } => t_end,
                        _ => bail!("unsteady deck should be transient"),
                    };
                    grid.abscissa
                        .iter()
                        .map(|&x| manufactured::psi_exact(x, t))
                        .collect()
                }
                "three_cubic_abs" | "tophat_abs" => {
                    raytrace::require_pure_absorber(&problem.xs)?;
                    let gg = problem.groups;
                    let q: Vec<f64> = (0..problem.mesh.cell_count())
                        .map(|c| problem.q_psi[c * gg])
                        .collect();
                    let sigma_of = |c: usize| problem.material(c).sigma_t[0];
                    let u = unit(spec.direction);
                    grid.abscissa
                        .iter()
                        .map(|&s| {
                            let p = [
                                spec.origin[0] + s * u[0],
                                spec.origin[1] + s * u[1],
                                spec.origin[2] + s * u[2],
                            ];
                            raytrace::uncollided_psi_converged(
                                &problem.mesh,
                                &sigma_of,
                                &q,
                                p,
                                1e-4,
                            )
                            .0
                        })
                        .collect()
                }
                other => bail!(
                    "deck `{other}` has no independent reference profile; \
                     scattering and eigenvalue decks are judged on integral \
                     quantities instead"
                ),
            };
            let series = LineSeries::new(grid.abscissa, value, None)?;
            let dir = out_dir(out);
            std::fs::create_dir_all(&dir)?;
            let sig_tag = match cfg.special {
                ProblemKind::Manufactured { sigma } => format!("_s{sigma}"),
                _ => String::new(),
            };
            let path = dir.join(format!("{id}{sig_tag}_{}_oracle.csv", spec.name));
            let hash = output::config_hash(&cfg.to_json()?);
            output::write_line_csv(&path, &series, hash, cfg.seed)?;
            println!("{}", path.display());
            Ok(())
        }
        Command::Compare {
            result,
            oracle,
            tol,
        } => {
            let a = output::read_line_csv(&result)?;
            let b = output::read_line_csv(&oracle)?;
            let report = bench::compare(&a, &b, tol)?;
            println!(
                "n={} linf_rel={:.3e} l2_rel={:.3e} tol={:.3e} => {}",
                report.n,
                report.linf_rel,
                report.l2_rel,
                report.tolerance,
                if report.pass { "PASS" } else { "FAIL" }
            );
            if !report.pass {
                std::process::exit(1);
            }
            Ok(())
        }
    }
}

fn unit(d: [f64; 3]) -> [f64; 3] {
    let n = (d[0] * d[0] + d[1] * d[1] + d[2] * d[2]).sqrt();
    [d[0] / n, d[1] / n, d[2] / n]
}
