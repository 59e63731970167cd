//! Structured Cartesian meshes, box-painted material maps, boundary tags.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Boundary {
    Vacuum,
    Reflective,
    Periodic,
    /// Prescribed incoming angular flux; the profile itself lives in the
    /// run configuration, the mesh only carries the tag.
    Inflow,
}

/// Uniform Cartesian mesh. Slab problems use `n = [nx, 1, 1]` with unit
/// transverse extent; `is_slab` gates the 1-D code paths.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StructuredMesh {
    pub lo: [f64; 3],
    pub hi: [f64; 3],
    pub n: [usize; 3],
    pub dx: [f64; 3],
    /// `bc[axis][side]`, side 0 = low face, side 1 = high face.
    pub bc: [[Boundary; 2]; 3],
}

impl StructuredMesh {
    pub fn new(lo: [f64; 3], hi: [f64; 3], n: [usize; 3], bc: [[Boundary; 2]; 3]) -> Result<Self> {
        for a in 0..3 {
            if !(hi[a] > lo[a]) {
                return Err(Error::config(format!(
                    "domain extent must be positive on axis {a}: [{}, {}]",
                    lo[a], hi[a]
                )));
            }
            if n[a] == 0 {
                return Err(Error::config(format!("cell count must be >= 1 on axis {a}")));
            }
            let both = [bc[a][0], bc[a][1]];
            if both.contains(&Boundary::Periodic) && both[0] != both[1] {
                return Err(Error::config(format!(
                    "periodic boundaries must be paired on axis {a}"
                )));
            }
        }
        let dx = [
            (hi[0] - lo[0]) / n[0] as f64,
            (hi[1] - lo[1]) / n[1] as f64,
            (hi[2] - lo[2]) / n[2] as f64,
        ];
        Ok(StructuredMesh { lo, hi, n, dx, bc })
    }

    pub fn slab(x_lo: f64, x_hi: f64, nx: usize, bc_lo: Boundary, bc_hi: Boundary) -> Result<Self> {
        StructuredMesh::new(
            [x_lo, 0.0, 0.0],
            [x_hi, 1.0, 1.0],
            [nx, 1, 1],
            [
                [bc_lo, bc_hi],
                [Boundary::Reflective, Boundary::Reflective],
                [Boundary::Reflective, Boundary::Reflective],
            ],
        )
    }

    pub fn is_slab(&self) -> bool {
        self.n[1] == 1 && self.n[2] == 1
    }

    pub fn cell_count(&self) -> usize {
        self.n[0] * self.n[1] * self.n[2]
    }

    pub fn cell_volume(&self) -> f64 {
        self.dx[0] * self.dx[1] * self.dx[2]
    }

    pub fn face_area(&self, axis: usize) -> f64 {
        self.cell_volume() / self.dx[axis]
    }

    pub fn min_spacing(&self) -> f64 {
        if self.is_slab() {
            self.dx[0]
        } else {
            self.dx[0].min(self.dx[1]).min(self.dx[2])
        }
    }

    #[inline]
    pub fn index(&self, ijk: [usize; 3]) -> usize {
        debug_assert!(ijk[0] < self.n[0] && ijk[1] < self.n[1] && ijk[2] < self.n[2]);
        ijk[0] + self.n[0] * (ijk[1] + self.n[1] * ijk[2])
    }

    #[inline]
    pub fn ijk(&self, idx: usize) -> [usize; 3] {
        let i = idx % self.n[0];
        let rest = idx / self.n[0];
        [i, rest % self.n[1], rest / self.n[1]]
    }

    pub fn center(&self, ijk: [usize; 3]) -> [f64; 3] {
        [
            self.lo[0] + (ijk[0] as f64 + 0.5) * self.dx[0],
            self.lo[1] + (ijk[1] as f64 + 0.5) * self.dx[1],
            self.lo[2] + (ijk[2] as f64 + 0.5) * self.dx[2],
        ]
    }

    /// Cell containing `p`, clamped onto the domain so that points sitting
    /// exactly on the outer faces resolve to the adjacent interior cell.
    pub fn cell_of_point(&self, p: [f64; 3]) -> [usize; 3] {
        let mut ijk = [0usize; 3];
        for a in 0..3 {
            let f = ((p[a] - self.lo[a]) / self.dx[a]).floor();
            ijk[a] = (f.max(0.0) as usize).min(self.n[a] - 1);
        }
        ijk
    }

    /// Number of faces orthogonal to `axis`.
    pub fn face_count(&self, axis: usize) -> usize {
        let mut c = self.n[axis] + 1;
        for a in 0..3 {
            if a != axis {
                c *= self.n[a];
            }
        }
        c
    }

    /// Flat index of the face orthogonal to `axis` at face-coordinate
    /// `f[axis] in 0..=n[axis]` and cell coordinates on the other axes.
    #[inline]
    pub fn face_index(&self, axis: usize, f: [usize; 3]) -> usize {
        match axis {
            0 => f[0] + (self.n[0] + 1) * (f[1] + self.n[1] * f[2]),
            1 => f[1] + (self.n[1] + 1) * (f[0] + self.n[0] * f[2]),
            2 => f[2] + (self.n[2] + 1) * (f[0] + self.n[0] * f[1]),
            _ => unreachable!(),
        }
    }
}

/// Per-cell material ids resolved against a cross-section table.
#[derive(Debug, Clone, PartialEq)]
pub struct MaterialMap {
    pub ids: Vec<u16>,
}

pub fn material_of(map: &MaterialMap, cell: usize) -> u16 {
    map.ids[cell]
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BoxRegion {
    pub lo: [f64; 3],
    pub hi: [f64; 3],
    pub material: String,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BoundarySpec {
    pub x: [Boundary; 2],
    pub y: [Boundary; 2],
    pub z: [Boundary; 2],
}

impl BoundarySpec {
    pub fn uniform(b: Boundary) -> Self {
        BoundarySpec {
            x: [b, b],
            y: [b, b],
            z: [b, b],
        }
    }

    /// Slab tags on x; transverse axes reflective.
    pub fn slab(lo: Boundary, hi: Boundary) -> Self {
        BoundarySpec {
            x: [lo, hi],
            y: [Boundary::Reflective; 2],
            z: [Boundary::Reflective; 2],
        }
    }
}

/// On-disk geometry description: a domain box, cell counts, face boundary
/// tags, and a list of material boxes painted in order over a default.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GeometrySpec {
    pub domain_lo: [f64; 3],
    pub domain_hi: [f64; 3],
    pub cells: [usize; 3],
    pub boundaries: BoundarySpec,
    pub default_material: String,
    #[serde(default)]
    pub boxes: Vec<BoxRegion>,
}

impl GeometrySpec {
    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }
}

/// Build the mesh and paint the material map. `resolve` maps material names
/// to ids in the active cross-section set.
pub fn build_mesh(
    spec: &GeometrySpec,
    resolve: impl Fn(&str) -> Option<u16>,
) -> Result<(StructuredMesh, MaterialMap)> {
    let mesh = StructuredMesh::new(
        spec.domain_lo,
        spec.domain_hi,
        spec.cells,
        [spec.boundaries.x, spec.boundaries.y, spec.boundaries.z],
    )?;
    let default = resolve(&spec.default_material)
        .ok_or_else(|| Error::config(format!("unknown material `{}`", spec.default_material)))?;
    let mut ids = vec![default; mesh.cell_count()];
    let tol = 1e-9 * mesh.min_spacing();
    for b in &spec.boxes {
        let id = resolve(&b.material)
            .ok_or_else(|| Error::config(format!("unknown material `{}`", b.material)))?;
        for idx in 0..mesh.cell_count() {
            let c = mesh.center(mesh.ijk(idx));
            if (0..3).all(|a| c[a] > b.lo[a] - tol && c[a] < b.hi[a] + tol) {
                ids[idx] = id;
            }
        }
    }
    Ok((mesh, MaterialMap { ids }))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn resolve(name: &str) -> Option<u16> {
        match name {
            "a" => Some(0),
            "b" => Some(1),
            "c" => Some(2),
            _ => None,
        }
    }

    #[test]
    fn indexing_round_trips() {
        let m = StructuredMesh::new(
            [0.0; 3],
            [6.0, 5.0, 4.0],
            [6, 5, 4],
            [[Boundary::Vacuum; 2]; 3],
        )
        .unwrap();
        for idx in 0..m.cell_count() {
            assert_eq!(m.index(m.ijk(idx)), idx);
        }
        assert_eq!(m.cell_count(), 120);
        assert_eq!(m.face_count(0), 7 * 5 * 4);
        assert_eq!(m.face_count(2), 6 * 5 * 5);
    }

    #[test]
    fn paint_order_wins() {
        let spec = GeometrySpec {
            domain_lo: [0.0; 3],
            domain_hi: [10.0, 10.0, 10.0],
            cells: [10, 10, 10],
            boundaries: BoundarySpec {
                x: [Boundary::Reflective, Boundary::Vacuum],
                y: [Boundary::Reflective, Boundary::Vacuum],
                z: [Boundary::Reflective, Boundary::Vacuum],
            },
            default_material: "a".into(),
            boxes: vec![
                BoxRegion {
                    lo: [0.0; 3],
                    hi: [5.0, 10.0, 10.0],
                    material: "b".into(),
                },
                BoxRegion {
                    lo: [0.0; 3],
                    hi: [2.0, 2.0, 10.0],
                    material: "c".into(),
                },
            ],
        };
        let (mesh, map) = build_mesh(&spec, resolve).unwrap();
        assert_eq!(material_of(&map, mesh.index([0, 0, 0])), 2);
        assert_eq!(material_of(&map, mesh.index([3, 0, 0])), 1);
        assert_eq!(material_of(&map, mesh.index([3, 3, 0])), 1);
        assert_eq!(material_of(&map, mesh.index([7, 3, 0])), 0);
    }

    #[test]
    fn geometry_spec_json_round_trip() {
        let spec = GeometrySpec {
            domain_lo: [0.0; 3],
            domain_hi: [1.0, 2.0, 3.0],
            cells: [4, 5, 6],
            boundaries: BoundarySpec {
                x: [Boundary::Inflow, Boundary::Vacuum],
                y: [Boundary::Periodic, Boundary::Periodic],
                z: [Boundary::Reflective, Boundary::Vacuum],
            },
            default_material: "a".into(),
            boxes: vec![],
        };
        let text = spec.to_json().unwrap();
        let back = GeometrySpec::from_json(&text).unwrap();
        assert_eq!(back.cells, spec.cells);
        assert_eq!(back.boundaries.y, [Boundary::Periodic; 2]);
    }

    #[test]
    fn cell_of_point_clamps_outer_faces() {
        let m = StructuredMesh::slab(0.0, 1.0, 10, Boundary::Vacuum, Boundary::Vacuum).unwrap();
        assert_eq!(m.cell_of_point([0.0, 0.5, 0.5])[0], 0);
        assert_eq!(m.cell_of_point([1.0, 0.5, 0.5])[0], 9);
        assert_eq!(m.cell_of_point([0.55, 0.5, 0.5])[0], 5);
    }
}
