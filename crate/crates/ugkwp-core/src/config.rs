//! Run configuration: serializable description of a problem plus the
//! assembled, solver-ready form.

use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{build_mesh, Boundary, GeometrySpec, MaterialMap, StructuredMesh};
use crate::kinetics::DtPolicy;
use crate::xs::CrossSectionSet;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SolverMode {
    Ugks,
    Ugkp,
    Ugkwp,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DriveConfig {
    /// March to `t_end` with the CFL step (last step truncated); when
    /// `average_after` is set the reported field is the time average of
    /// the samples taken once `t` passes it.
    Transient {
        t_end: f64,
        #[serde(default)]
        average_after: Option<f64>,
    },
    /// March until the windowed relative flux change drops below `tol`,
    /// then keep averaging over `average` further steps.
    Steady {
        tol: f64,
        window: usize,
        max_steps: usize,
        #[serde(default)]
        average: usize,
    },
    /// k-eigenvalue power iteration with windowed statistics.
    Eigen {
        k_tol: f64,
        /// Steps per statistics window.
        window: usize,
        /// Leading windows excluded while the source shape settles.
        discard: usize,
        /// Trailing windows behind the estimate and its standard error.
        stat_windows: usize,
        max_steps: u64,
    },
}

/// Isotropic emission density for one material, at the per-angle level
/// (per direction cosine in slabs, per steradian in 3-D).
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MaterialSource {
    pub material: String,
    pub q: f64,
}

/// Constant isotropic incoming intensity on one domain face.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct InflowSpec {
    pub axis: usize,
    /// 0 = low face, 1 = high face.
    pub side: usize,
    pub phi_in: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GeometrySource {
    Inline(GeometrySpec),
    Path(String),
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum XsSource {
    /// Verbatim cross-section file text.
    Inline(String),
    Path(String),
}

/// Built-in problems that need functional data (manufactured sources,
/// anisotropic initial conditions) beyond what the generic files carry.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ProblemKind {
    Generic,
    /// Travelling-wave manufactured solution on a periodic slab.
    Manufactured { sigma: f64 },
}

impl Default for ProblemKind {
    fn default() -> Self {
        ProblemKind::Generic
    }
}

/// Line probe through the field: points walk from `origin` along
/// `direction`, sampled at the cell centers hit.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct LineSpec {
    pub name: String,
    pub origin: [f64; 3],
    pub direction: [f64; 3],
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct OutputConfig {
    #[serde(default)]
    pub lines: Vec<LineSpec>,
    #[serde(default)]
    pub region_averages: bool,
    #[serde(default)]
    pub field_dump: bool,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunConfig {
    pub name: String,
    pub geometry: GeometrySource,
    pub xs: XsSource,
    #[serde(default)]
    pub sources: Vec<MaterialSource>,
    #[serde(default)]
    pub inflow: Vec<InflowSpec>,
    pub mode: SolverMode,
    /// Ordinate count for the deterministic solver and for angular moments
    /// of functional sources.
    #[serde(default = "default_quad")]
    pub quad: usize,
    /// Particle resolution target per cell and group.
    #[serde(default = "default_n_ref")]
    pub n_ref: usize,
    pub cfl: f64,
    #[serde(default = "default_dt_policy")]
    pub dt_policy: DtPolicy,
    #[serde(default)]
    pub fixed_dt: Option<f64>,
    #[serde(default)]
    pub seed: u64,
    /// Rayon worker threads; `None` keeps the global default.
    #[serde(default)]
    pub workers: Option<usize>,
    pub drive: DriveConfig,
    #[serde(default)]
    pub special: ProblemKind,
    #[serde(default)]
    pub outputs: OutputConfig,
}

fn default_quad() -> usize {
    8
}

fn default_n_ref() -> usize {
    16
}

fn default_dt_policy() -> DtPolicy {
    DtPolicy::MaxSigma
}

impl RunConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    /// Skeleton config with library defaults; callers adjust fields as
    /// needed before assembling.
    pub fn named(name: &str, geometry: GeometrySource, xs: XsSource) -> Self {
        Self {
            name: name.into(),
            geometry,
            xs,
            sources: Vec::new(),
            inflow: Vec::new(),
            mode: SolverMode::Ugkwp,
            quad: default_quad(),
            n_ref: default_n_ref(),
            cfl: 0.5,
            dt_policy: default_dt_policy(),
            fixed_dt: None,
            seed: 0,
            workers: None,
            drive: DriveConfig::Transient {
                t_end: 1.0,
                average_after: None,
            },
            special: ProblemKind::Generic,
            outputs: OutputConfig::default(),
        }
    }

    pub fn assemble(&self) -> Result<Problem> {
        assemble(self)
    }
}

/// Slab angular profile hook: `f(x, mu, t)` at the per-angle level.
pub type SlabProfile = Arc<dyn Fn(f64, f64, f64) -> f64 + Send + Sync>;

/// Functional pieces a built-in problem can attach; only meaningful on
/// slab meshes.
#[derive(Clone, Default)]
pub struct SpecialHooks {
    /// External source `q(x, mu, t)`.
    pub q_phi: Option<SlabProfile>,
    /// Initial angular flux `phi(x, mu)` (`t` ignored).
    pub init_phi: Option<SlabProfile>,
}

/// Solver-ready problem: mesh, paint, cross sections, and source data in
/// the angular-integrated convention used throughout the solvers.
pub struct Problem {
    pub mesh: StructuredMesh,
    pub map: MaterialMap,
    pub xs: CrossSectionSet,
    /// Per cell and group emission at the angular-integrated level.
    pub q_psi: Vec<f64>,
    pub inflow: Vec<InflowSpec>,
    pub hooks: SpecialHooks,
    pub groups: usize,
}

impl Problem {
    #[inline]
    pub fn field_index(&self, cell: usize, g: usize) -> usize {
        cell * self.groups + g
    }

    pub fn material(&self, cell: usize) -> &crate::xs::Material {
        self.xs.at(self.map.ids[cell])
    }

    /// Angular measure of the problem: 2 for slabs (mu in [-1,1]), 1 for
    /// 3-D fields in the per-steradian-average convention.
    pub fn angular_measure(&self) -> f64 {
        if self.mesh.is_slab() {
            2.0
        } else {
            1.0
        }
    }
}

pub fn load_geometry(src: &GeometrySource) -> Result<GeometrySpec> {
    match src {
        GeometrySource::Inline(spec) => Ok(spec.clone()),
        GeometrySource::Path(p) => GeometrySpec::from_json(&std::fs::read_to_string(p)?),
    }
}

pub fn load_xs(src: &XsSource) -> Result<CrossSectionSet> {
    match src {
        XsSource::Inline(text) => CrossSectionSet::parse_str(text, "<inline>"),
        XsSource::Path(p) => {
            let text = std::fs::read_to_string(p)?;
            CrossSectionSet::parse_str(&text, p)
        }
    }
}

/// Resolve files, paint the mesh, and convert sources to the
/// angular-integrated level.
pub fn assemble(config: &RunConfig) -> Result<Problem> {
    let geom = load_geometry(&config.geometry)?;
    let xs = load_xs(&config.xs)?;
    let (mesh, map) = build_mesh(&geom, |name| xs.id_of(name))?;
    let groups = xs.groups;

    let mut per_material_q = vec![0.0; xs.materials.len()];
    for s in &config.sources {
        let id = xs
            .id_of(&s.material)
            .ok_or_else(|| Error::config(format!("source names unknown material `{}`", s.material)))?;
        per_material_q[id as usize] = s.q;
    }
    let measure = if mesh.is_slab() { 2.0 } else { 1.0 };
    let mut q_psi = vec![0.0; mesh.cell_count() * groups];
    for c in 0..mesh.cell_count() {
        let q = per_material_q[map.ids[c] as usize] * measure;
        // File-driven sources emit into the fastest group; multigroup
        // benchmarks with distributed spectra use the fission machinery.
        if q != 0.0 {
            q_psi[c * groups] = q;
        }
    }

    for f in &config.inflow {
        if f.axis > 2 || f.side > 1 {
            return Err(Error::config("inflow face out of range"));
        }
        if mesh.bc[f.axis][f.side] != Boundary::Inflow {
            return Err(Error::config(
                "inflow spec on a face not tagged `inflow` in the geometry",
            ));
        }
        if !mesh.is_slab() {
            return Err(Error::config("inflow boundaries are slab-only"));
        }
    }
    for a in 0..3 {
        for s in 0..2 {
            if mesh.bc[a][s] == Boundary::Inflow
                && !config.inflow.iter().any(|f| f.axis == a && f.side == s)
            {
                return Err(Error::config(format!(
                    "face ({a},{s}) tagged inflow but no inflow spec given"
                )));
            }
        }
    }

    let hooks = build_hooks(&config.special, &xs)?;
    if (hooks.q_phi.is_some() || hooks.init_phi.is_some()) && !mesh.is_slab() {
        return Err(Error::config("functional problems are slab-only"));
    }

    Ok(Problem {
        mesh,
        map,
        xs,
        q_psi,
        inflow: config.inflow.clone(),
        hooks,
        groups,
    })
}

fn build_hooks(kind: &ProblemKind, xs: &CrossSectionSet) -> Result<SpecialHooks> {
    match *kind {
        ProblemKind::Generic => Ok(SpecialHooks::default()),
        ProblemKind::Manufactured { sigma } => {
            if xs.groups != 1 {
                return Err(Error::config("manufactured problem is single-group"));
            }
            let sigma_s = xs.materials[0].scatter[0];
            Ok(SpecialHooks {
                q_phi: Some(Arc::new(move |x, mu, t| {
                    crate::oracles::manufactured::forcing(x, mu, t, sigma, sigma_s)
                })),
                init_phi: Some(Arc::new(move |x, mu, _| {
                    crate::oracles::manufactured::phi_exact(x, mu, 0.0)
                })),
            })
        }
    }
}
