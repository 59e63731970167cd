//! Result serialization: CSV line extractions, legacy-text structured-grid
//! fields, and a versioned JSON summary. Every artifact embeds the config
//! hash and the seed so a file on disk can be traced back to the exact run
//! that produced it.

use crate::error::{Error, Result};
use crate::geometry::StructuredMesh;
use serde::{Deserialize, Serialize};
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

/// 64-bit FNV-1a over the canonical config text.
pub fn config_hash(text: &str) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in text.as_bytes() {
        h ^= *b as u64;
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h
}

/// One extracted profile: `value` (and optional `stderr`) against a single
/// abscissa, e.g. psi(x) along a line through the mesh.
#[derive(Debug, Clone, PartialEq)]
pub struct LineSeries {
    pub abscissa: Vec<f64>,
    pub value: Vec<f64>,
    pub stderr: Option<Vec<f64>>,
}

impl LineSeries {
    pub fn new(abscissa: Vec<f64>, value: Vec<f64>, stderr: Option<Vec<f64>>) -> Result<Self> {
        if abscissa.len() != value.len() {
            return Err(Error::config(format!(
                "series length mismatch: {} abscissae, {} values",
                abscissa.len(),
                value.len()
            )));
        }
        if let Some(s) = &stderr {
            if s.len() != value.len() {
                return Err(Error::config("stderr column length mismatch"));
            }
        }
        Ok(LineSeries {
            abscissa,
            value,
            stderr,
        })
    }

    pub fn len(&self) -> usize {
        self.abscissa.len()
    }

    pub fn is_empty(&self) -> bool {
        self.abscissa.is_empty()
    }
}

/// CSV with `#` provenance comments, then `abscissa,value[,stderr]` rows.
/// Numbers are printed with 17 significant digits so a write/read cycle is
/// exact and repeated runs diff byte-for-byte.
pub fn line_csv_string(series: &LineSeries, hash: u64, seed: u64) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "# config={hash:016x} seed={seed}");
    let mut wtr = csv::Writer::from_writer(Vec::new());
    if series.stderr.is_some() {
        wtr.write_record(["abscissa", "value", "stderr"]).unwrap();
    } else {
        wtr.write_record(["abscissa", "value"]).unwrap();
    }
    for i in 0..series.len() {
        let a = format!("{:.17e}", series.abscissa[i]);
        let v = format!("{:.17e}", series.value[i]);
        match &series.stderr {
            Some(s) => wtr
                .write_record([a, v, format!("{:.17e}", s[i])])
                .unwrap(),
            None => wtr.write_record([a, v]).unwrap(),
        }
    }
    out.push_str(&String::from_utf8(wtr.into_inner().unwrap()).unwrap());
    out
}

pub fn write_line_csv(path: &Path, series: &LineSeries, hash: u64, seed: u64) -> Result<()> {
    fs::write(path, line_csv_string(series, hash, seed))
        .map_err(|e| Error::config(format!("writing {}: {e}", path.display())))
}

pub fn parse_line_csv(text: &str, what: &str) -> Result<LineSeries> {
    let mut rdr = csv::ReaderBuilder::new()
        .comment(Some(b'#'))
        .flexible(true)
        .from_reader(text.as_bytes());
    let headers = rdr
        .headers()
        .map_err(|e| Error::parse(what, 0, e.to_string()))?
        .clone();
    let with_err = headers.len() >= 3;
    let mut abscissa = Vec::new();
    let mut value = Vec::new();
    let mut stderr = Vec::new();
    for (i, rec) in rdr.records().enumerate() {
        let rec = rec.map_err(|e| Error::parse(what, i + 2, e.to_string()))?;
        let num = |j: usize| -> Result<f64> {
            rec.get(j)
                .ok_or_else(|| Error::parse(what, i + 2, format!("missing column {j}")))?
                .trim()
                .parse::<f64>()
                .map_err(|e| Error::parse(what, i + 2, e.to_string()))
        };
        abscissa.push(num(0)?);
        value.push(num(1)?);
        if with_err {
            stderr.push(num(2)?);
        }
    }
    LineSeries::new(abscissa, value, if with_err { Some(stderr) } else { None })
}

pub fn read_line_csv(path: &Path) -> Result<LineSeries> {
    let text = fs::read_to_string(path)
        .map_err(|e| Error::config(format!("reading {}: {e}", path.display())))?;
    parse_line_csv(&text, &path.display().to_string())
}

/// Legacy-text structured-points field file: one scalar block per group on
/// the cell-centered data, x-fastest ordering (matching the mesh layout).
pub fn field_vtk_string(
    mesh: &StructuredMesh,
    psi: &[f64],
    groups: usize,
    hash: u64,
    seed: u64,
) -> Result<String> {
    let nc = mesh.cell_count();
    if psi.len() != nc * groups {
        return Err(Error::config(format!(
            "field length {} does not match {} cells x {groups} groups",
            psi.len(),
            nc
        )));
    }
    let mut out = String::new();
    let _ = writeln!(out, "# vtk DataFile Version 3.0");
    let _ = writeln!(out, "psi fields config={hash:016x} seed={seed}");
    let _ = writeln!(out, "ASCII");
    let _ = writeln!(out, "DATASET STRUCTURED_POINTS");
    let _ = writeln!(
        out,
        "DIMENSIONS {} {} {}",
        mesh.n[0] + 1,
        mesh.n[1] + 1,
        mesh.n[2] + 1
    );
    let _ = writeln!(out, "ORIGIN {:e} {:e} {:e}", mesh.lo[0], mesh.lo[1], mesh.lo[2]);
    let _ = writeln!(out, "SPACING {:e} {:e} {:e}", mesh.dx[0], mesh.dx[1], mesh.dx[2]);
    let _ = writeln!(out, "CELL_DATA {nc}");
    for g in 0..groups {
        let _ = writeln!(out, "SCALARS psi_g{g} double 1");
        let _ = writeln!(out, "LOOKUP_TABLE default");
        for c in 0..nc {
            let _ = writeln!(out, "{:.17e}", psi[c * groups + g]);
        }
    }
    Ok(out)
}

pub fn write_field_vtk(
    path: &Path,
    mesh: &StructuredMesh,
    psi: &[f64],
    groups: usize,
    hash: u64,
    seed: u64,
) -> Result<()> {
    let text = field_vtk_string(mesh, psi, groups, hash, seed)?;
    fs::write(path, text).map_err(|e| Error::config(format!("writing {}: {e}", path.display())))
}

pub const SUMMARY_SCHEMA: u32 = 1;

/// Scalar run summary. `schema` gates downstream readers; bump it on any
/// field change.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct Summary {
    pub schema: u32,
    pub benchmark: String,
    pub solver: String,
    pub config_hash: String,
    pub seed: u64,
    pub t_end: f64,
    pub steps: u64,
    pub ledger_residual: f64,
    pub wall_seconds: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub k_eff: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub sigma_k: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub cr_worth_pcm: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub region_averages: Option<Vec<RegionAverage>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub mean_step_seconds: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub sampled_particles_mean: Option<f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct RegionAverage {
    pub region: String,
    pub group: usize,
    pub mean_psi: f64,
}

impl Summary {
    pub fn new(benchmark: &str, solver: &str, hash: u64, seed: u64) -> Self {
        Summary {
            schema: SUMMARY_SCHEMA,
            benchmark: benchmark.to_string(),
            solver: solver.to_string(),
            config_hash: format!("{hash:016x}"),
            seed,
            t_end: 0.0,
            steps: 0,
            ledger_residual: 0.0,
            wall_seconds: 0.0,
            k_eff: None,
            sigma_k: None,
            cr_worth_pcm: None,
            region_averages: None,
            mean_step_seconds: None,
            sampled_particles_mean: None,
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("summary serializes")
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_json())
            .map_err(|e| Error::config(format!("writing {}: {e}", path.display())))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::Boundary;

    // Published FNV-1a 64-bit vectors.
    #[test]
    fn fnv1a_known_vectors() {
        assert_eq!(config_hash(""), 0xcbf2_9ce4_8422_2325);
        assert_eq!(config_hash("a"), 0xaf63_dc4c_8601_ec8c);
        assert_eq!(config_hash("foobar"), 0x8594_4171_f739_67e8);
    }

    #[test]
    fn csv_round_trip_is_exact_and_deterministic() {
        let s = LineSeries::new(
            vec![0.25, 0.75, 1.25],
            vec![1.0 / 3.0, 2.0f64.sqrt(), 1e-300],
            Some(vec![0.01, 0.02, 0.03]),
        )
        .unwrap();
        let text = line_csv_string(&s, 0xdead_beef, 42);
        assert!(text.starts_with("# config=00000000deadbeef seed=42\n"));
        assert!(text.contains("abscissa,value,stderr"));
        let back = parse_line_csv(&text, "mem").unwrap();
        assert_eq!(back, s);
        assert_eq!(line_csv_string(&s, 0xdead_beef, 42), text);
    }

    #[test]
    fn csv_without_stderr_has_two_columns() {
        let s = LineSeries::new(vec![0.0, 1.0], vec![5.0, 6.0], None).unwrap();
        let text = line_csv_string(&s, 1, 2);
        assert!(text.contains("abscissa,value\n"));
        let back = parse_line_csv(&text, "mem").unwrap();
        assert_eq!(back.stderr, None);
        assert_eq!(back.value, vec![5.0, 6.0]);
    }

    #[test]
    fn vtk_structured_points_layout() {
        let mesh = StructuredMesh::new(
            [0.0; 3],
            [2.0, 2.0, 2.0],
            [2, 2, 2],
            [[Boundary::Vacuum; 2]; 3],
        )
        .unwrap();
        let psi: Vec<f64> = (0..16).map(|i| i as f64).collect();
        let text = field_vtk_string(&mesh, &psi, 2, 7, 9).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines[0], "# vtk DataFile Version 3.0");
        assert_eq!(lines[3], "DATASET STRUCTURED_POINTS");
        assert_eq!(lines[4], "DIMENSIONS 3 3 3");
        assert_eq!(lines[7], "CELL_DATA 8");
        assert_eq!(lines[8], "SCALARS psi_g0 double 1");
        // 8 values per group, two groups, three header lines per block
        assert_eq!(lines.len(), 8 + 2 * (2 + 8));
        // first value row is cell 0, the next is cell 1 = psi[1*2+0] = 2
        assert_eq!(lines[10].parse::<f64>().unwrap(), 0.0);
        assert_eq!(lines[11].parse::<f64>().unwrap(), 2.0);
    }

    #[test]
    fn vtk_rejects_wrong_length() {
        let mesh = StructuredMesh::new(
            [0.0; 3],
            [1.0, 1.0, 1.0],
            [2, 1, 1],
            [[Boundary::Vacuum; 2]; 3],
        )
        .unwrap();
        assert!(field_vtk_string(&mesh, &[1.0; 3], 2, 0, 0).is_err());
    }

    #[test]
    fn summary_json_round_trips_with_schema() {
        let mut s = Summary::new("heaviside", "ugkwp", 0xabc, 7);
        s.t_end = 5.0;
        s.steps = 123;
        s.k_eff = Some(0.9774);
        let j = s.to_json();
        assert!(j.contains("\"schema\": 1"));
        assert!(j.contains("0000000000000abc"));
        let back: Summary = serde_json::from_str(&j).unwrap();
        assert_eq!(back, s);
        // absent optionals are omitted, not null
        assert!(!j.contains("cr_worth_pcm"));
    }
}
