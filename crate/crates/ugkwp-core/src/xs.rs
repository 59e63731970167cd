//! Multigroup cross-section tables and their on-disk text format.
//!
//! One file holds one table per material:
//!
//! ```text
//! # comments
//! groups 2
//! bounds 1.0E+7 6.8256E-01 1.0E-5
//! material core
//! 1  2.23775E-01  9.09319E-03  1.92123E-01  0.00000E+00  1.0  1.0
//! 2  1.03864E+00  2.90183E-01  2.28253E-02  8.80439E-01  0.0  1.0
//! ```
//!
//! Row columns: group index, total cross section, nu * fission cross
//! section, the scattering row `sigma_s[g' -> g]` for every source group
//! `g'`, the fission spectrum fraction chi, and the group speed. Scattering
//! is stored destination-major, so row `g` lists arrivals into group `g`.
//! Parsed files keep their original text, and `write_str` returns it
//! verbatim, so a parse/write cycle is byte-exact.

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct Material {
    pub name: String,
    pub sigma_t: Vec<f64>,
    pub nu_sigma_f: Vec<f64>,
    /// Row-major `[destination][source]`, length `G * G`.
    pub scatter: Vec<f64>,
    pub chi: Vec<f64>,
    pub v: Vec<f64>,
}

impl Material {
    /// `sigma_s[g_src -> g_dst]`.
    #[inline]
    pub fn scatter_into(&self, g_dst: usize, g_src: usize, groups: usize) -> f64 {
        self.scatter[g_dst * groups + g_src]
    }

    /// Total scattering out of group `g` (column sum).
    pub fn sigma_s_out(&self, g: usize, groups: usize) -> f64 {
        (0..groups).map(|d| self.scatter[d * groups + g]).sum()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CrossSectionSet {
    pub groups: usize,
    /// Optional energy group edges, `G + 1` values in decreasing order.
    pub bounds: Option<Vec<f64>>,
    pub materials: Vec<Material>,
    source: Option<String>,
}

impl CrossSectionSet {
    pub fn new(groups: usize, materials: Vec<Material>) -> Result<Self> {
        let set = CrossSectionSet {
            groups,
            bounds: None,
            materials,
            source: None,
        };
        set.validate()?;
        Ok(set)
    }

    /// One-group convenience: `(name, sigma_t, sigma_s, nu_sigma_f)`, with
    /// chi = 1 and unit speed.
    pub fn single_group(materials: &[(&str, f64, f64, f64)]) -> Self {
        let mats = materials
            .iter()
            .map(|&(name, st, ss, nsf)| Material {
                name: name.to_string(),
                sigma_t: vec![st],
                nu_sigma_f: vec![nsf],
                scatter: vec![ss],
                chi: vec![1.0],
                v: vec![1.0],
            })
            .collect();
        CrossSectionSet::new(1, mats).expect("single-group table is well-formed")
    }

    pub fn id_of(&self, name: &str) -> Option<u16> {
        self.materials
            .iter()
            .position(|m| m.name == name)
            .map(|i| i as u16)
    }

    #[inline]
    pub fn at(&self, id: u16) -> &Material {
        &self.materials[id as usize]
    }

    pub fn parse_str(text: &str, file: &str) -> Result<Self> {
        let mut groups: Option<usize> = None;
        let mut bounds: Option<Vec<f64>> = None;
        let mut materials: Vec<Material> = Vec::new();
        let mut current: Option<(String, usize, Vec<Vec<f64>>)> = None;

        let finish = |materials: &mut Vec<Material>,
                      current: Option<(String, usize, Vec<Vec<f64>>)>,
                      groups: usize|
         -> Result<()> {
            if let Some((name, start_line, rows)) = current {
                if rows.len() != groups {
                    return Err(Error::parse(
                        file,
                        start_line,
                        format!(
                            "material `{name}` has {} rows, expected {groups}",
                            rows.len()
                        ),
                    ));
                }
                let mut m = Material {
                    name,
                    sigma_t: vec![0.0; groups],
                    nu_sigma_f: vec![0.0; groups],
                    scatter: vec![0.0; groups * groups],
                    chi: vec![0.0; groups],
                    v: vec![0.0; groups],
                };
                for (g, row) in rows.iter().enumerate() {
                    m.sigma_t[g] = row[0];
                    m.nu_sigma_f[g] = row[1];
                    for gs in 0..groups {
                        m.scatter[g * groups + gs] = row[2 + gs];
                    }
                    m.chi[g] = row[2 + groups];
                    m.v[g] = row[3 + groups];
                }
                materials.push(m);
            }
            Ok(())
        };

        for (lineno, raw) in text.lines().enumerate() {
            let lineno = lineno + 1;
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let tokens: Vec<&str> = line.split_whitespace().collect();
            match tokens[0] {
                "groups" => {
                    if tokens.len() != 2 {
                        return Err(Error::parse(file, lineno, "expected `groups N`"));
                    }
                    groups = Some(tokens[1].parse().map_err(|_| {
                        Error::parse(file, lineno, format!("bad group count `{}`", tokens[1]))
                    })?);
                }
                "bounds" => {
                    let vals = parse_floats(&tokens[1..], file, lineno)?;
                    bounds = Some(vals);
                }
                "material" => {
                    if tokens.len() != 2 {
                        return Err(Error::parse(file, lineno, "expected `material NAME`"));
                    }
                    let g = groups
                        .ok_or_else(|| Error::parse(file, lineno, "`groups` must come first"))?;
                    finish(&mut materials, current.take(), g)?;
                    current = Some((tokens[1].to_string(), lineno, Vec::new()));
                }
                _ => {
                    let g = groups
                        .ok_or_else(|| Error::parse(file, lineno, "`groups` must come first"))?;
                    let (_, _, rows) = current.as_mut().ok_or_else(|| {
                        Error::parse(file, lineno, "data row outside a material block")
                    })?;
                    let vals = parse_floats(&tokens, file, lineno)?;
                    if vals.len() != g + 5 {
                        return Err(Error::parse(
                            file,
                            lineno,
                            format!("expected {} columns, found {}", g + 5, vals.len()),
                        ));
                    }
                    let expect = rows.len() + 1;
                    if vals[0] as usize != expect {
                        return Err(Error::parse(
                            file,
                            lineno,
                            format!("expected group {expect}, found {}", vals[0]),
                        ));
                    }
                    rows.push(vals[1..].to_vec());
                }
            }
        }
        let groups = groups.ok_or_else(|| Error::parse(file, 0, "missing `groups`"))?;
        finish(&mut materials, current.take(), groups)?;

        if let Some(b) = &bounds {
            if b.len() != groups + 1 {
                return Err(Error::parse(
                    file,
                    0,
                    format!("bounds needs {} edges, found {}", groups + 1, b.len()),
                ));
            }
            if !b.windows(2).all(|p| p[0] > p[1]) {
                return Err(Error::parse(file, 0, "bounds must decrease"));
            }
        }

        let set = CrossSectionSet {
            groups,
            bounds,
            materials,
            source: Some(text.to_string()),
        };
        set.validate()?;
        Ok(set)
    }

    /// Parsed sets reproduce their input byte for byte; constructed sets get
    /// the canonical layout.
    pub fn write_str(&self) -> String {
        if let Some(s) = &self.source {
            return s.clone();
        }
        let mut out = String::new();
        out.push_str(&format!("groups {}\n", self.groups));
        if let Some(b) = &self.bounds {
            out.push_str("bounds");
            for e in b {
                out.push_str(&format!(" {e:E}"));
            }
            out.push('\n');
        }
        for m in &self.materials {
            out.push_str(&format!("material {}\n", m.name));
            for g in 0..self.groups {
                out.push_str(&format!("{}  {:E}  {:E}", g + 1, m.sigma_t[g], m.nu_sigma_f[g]));
                for gs in 0..self.groups {
                    out.push_str(&format!("  {:E}", m.scatter[g * self.groups + gs]));
                }
                out.push_str(&format!("  {:E}  {:E}\n", m.chi[g], m.v[g]));
            }
        }
        out
    }

    fn validate(&self) -> Result<()> {
        if self.groups == 0 {
            return Err(Error::config("group count must be >= 1"));
        }
        if self.materials.is_empty() {
            return Err(Error::config("cross-section set has no materials"));
        }
        for m in &self.materials {
            let g = self.groups;
            if m.sigma_t.len() != g
                || m.nu_sigma_f.len() != g
                || m.scatter.len() != g * g
                || m.chi.len() != g
                || m.v.len() != g
            {
                return Err(Error::config(format!(
                    "material `{}` has inconsistent group dimensions",
                    m.name
                )));
            }
            let all = m
                .sigma_t
                .iter()
                .chain(&m.nu_sigma_f)
                .chain(&m.scatter)
                .chain(&m.chi)
                .chain(&m.v);
            for &x in all {
                if !x.is_finite() || x < 0.0 {
                    return Err(Error::config(format!(
                        "material `{}` has a negative or non-finite entry",
                        m.name
                    )));
                }
            }
            for gi in 0..g {
                if m.sigma_t[gi] <= 0.0 {
                    return Err(Error::config(format!(
                        "material `{}` group {} has non-positive total cross section",
                        m.name,
                        gi + 1
                    )));
                }
                if m.v[gi] <= 0.0 {
                    return Err(Error::config(format!(
                        "material `{}` group {} has non-positive speed",
                        m.name,
                        gi + 1
                    )));
                }
            }
        }
        Ok(())
    }
}

fn parse_floats(tokens: &[&str], file: &str, lineno: usize) -> Result<Vec<f64>> {
    tokens
        .iter()
        .map(|t| {
            t.parse::<f64>()
                .map_err(|_| Error::parse(file, lineno, format!("bad number `{t}`")))
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    const SAMPLE: &str = "# two-group sample\n\
groups 2\n\
bounds 1.0E+7 6.8256E-01 1.0E-5\n\
material core\n\
1  2.23775E-01  9.09319E-03  1.92123E-01  0.00000E+00  1.0  1.0\n\
2  1.03864E+00  2.90183E-01  2.28253E-02  8.80439E-01  0.0  1.0\n\
material reflector\n\
1  2.50367E-01  0.0  1.93446E-01  0.00000E+00  1.0  1.0\n\
2  1.64482E+00  0.0  5.65042E-02  1.62452E+00  0.0  1.0\n";

    #[test]
    fn parses_two_group_table() {
        let set = CrossSectionSet::parse_str(SAMPLE, "sample").unwrap();
        assert_eq!(set.groups, 2);
        assert_eq!(set.materials.len(), 2);
        let core = set.at(set.id_of("core").unwrap());
        assert_abs_diff_eq!(core.sigma_t[0], 2.23775e-1);
        assert_abs_diff_eq!(core.nu_sigma_f[1], 2.90183e-1);
        // Downscatter 1 -> 2 sits in the destination-2 row, source column 1.
        assert_abs_diff_eq!(core.scatter_into(1, 0, 2), 2.28253e-2);
        assert_abs_diff_eq!(core.scatter_into(0, 1, 2), 0.0);
        assert_abs_diff_eq!(core.sigma_s_out(0, 2), 1.92123e-1 + 2.28253e-2);
        assert_eq!(set.bounds.as_ref().unwrap().len(), 3);
    }

    #[test]
    fn round_trip_is_byte_exact() {
        let set = CrossSectionSet::parse_str(SAMPLE, "sample").unwrap();
        let text = set.write_str();
        assert_eq!(text, SAMPLE);
        let again = CrossSectionSet::parse_str(&text, "sample").unwrap();
        assert_eq!(again.materials, set.materials);
    }

    #[test]
    fn canonical_writer_round_trips_values() {
        let set = CrossSectionSet::single_group(&[("m", 10.0, 9.5, 0.25)]);
        let text = set.write_str();
        let back = CrossSectionSet::parse_str(&text, "canon").unwrap();
        assert_eq!(back.materials, set.materials);
    }

    #[test]
    fn rejects_malformed_rows() {
        let bad = "groups 2\nmaterial m\n1 0.1 0.0 0.05 0.0 1.0\n";
        assert!(CrossSectionSet::parse_str(bad, "bad").is_err());
        let wrong_order = "groups 1\nmaterial m\n2 0.1 0.0 0.05 1.0 1.0\n";
        assert!(CrossSectionSet::parse_str(wrong_order, "bad").is_err());
        let no_groups = "material m\n1 0.1 0.0 0.05 1.0 1.0\n";
        assert!(CrossSectionSet::parse_str(no_groups, "bad").is_err());
    }
}
