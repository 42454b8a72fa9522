use std::collections::HashMap;

use nalgebra::{Point3, Vector3};

/// An indexed triangle mesh.
///
/// Faces store counter-clockwise vertex indices when viewed from outside;
/// all cage machinery assumes (and [`TriMesh::validate`] checks) that the
/// mesh is a closed, consistently oriented 2-manifold enclosing a positive
/// volume.
#[derive(Debug, Clone, PartialEq)]
pub struct TriMesh {
    pub vertices: Vec<Point3<f64>>,
    pub faces: Vec<[usize; 3]>,
}

/// Result of [`TriMesh::validate`]: the individual structural checks plus
/// the quantities they were derived from.
#[derive(Debug, Clone, PartialEq)]
pub struct MeshReport {
    pub vertex_count: usize,
    pub edge_count: usize,
    pub face_count: usize,
    /// Every face references in-range, pairwise distinct vertices.
    pub faces_well_formed: bool,
    /// Every undirected edge borders exactly two faces.
    pub closed: bool,
    /// No undirected edge borders more than two faces.
    pub manifold: bool,
    /// The two faces at each edge traverse it in opposite directions.
    pub consistently_oriented: bool,
    pub euler_characteristic: i64,
    pub signed_volume: f64,
}

impl MeshReport {
    /// True when the mesh can serve as a deformation cage: closed oriented
    /// manifold, sphere topology, outward-facing (positive enclosed
    /// volume).
    pub fn is_valid_cage(&self) -> bool {
        self.faces_well_formed
            && self.closed
            && self.manifold
            && self.consistently_oriented
            && self.euler_characteristic == 2
            && self.signed_volume > 0.0
    }
}

impl TriMesh {
    pub fn new(vertices: Vec<Point3<f64>>, faces: Vec<[usize; 3]>) -> Self {
        Self { vertices, faces }
    }

    pub fn vertex_count(&self) -> usize {
        self.vertices.len()
    }

    pub fn face_count(&self) -> usize {
        self.faces.len()
    }

    /// Structural health check; see [`MeshReport`] for the exact checks.
    pub fn validate(&self) -> MeshReport {
        let mut faces_well_formed = true;
        for f in &self.faces {
            let in_range = f.iter().all(|&v| v < self.vertices.len());
            let distinct = f[0] != f[1] && f[1] != f[2] && f[0] != f[2];
            if !(in_range && distinct) {
                faces_well_formed = false;
            }
        }

        // For each undirected edge count total incidences and the
        // direction balance; a consistently oriented closed manifold has
        // exactly two incidences per edge that cancel directionally.
        let mut edges: HashMap<(usize, usize), (u32, i32)> = HashMap::new();
        if faces_well_formed {
            for f in &self.faces {
                for (u, v) in [(f[0], f[1]), (f[1], f[2]), (f[2], f[0])] {
                    let key = (u.min(v), u.max(v));
                    let entry = edges.entry(key).or_insert((0, 0));
                    entry.0 += 1;
                    entry.1 += if u < v { 1 } else { -1 };
                }
            }
        }

        let closed = faces_well_formed && edges.values().all(|&(n, _)| n == 2);
        let manifold = faces_well_formed && edges.values().all(|&(n, _)| n <= 2);
        let consistently_oriented =
            faces_well_formed && edges.values().all(|&(n, bal)| n != 2 || bal == 0);

        MeshReport {
            vertex_count: self.vertices.len(),
            edge_count: edges.len(),
            face_count: self.faces.len(),
            faces_well_formed,
            closed,
            manifold,
            consistently_oriented,
            euler_characteristic: self.vertices.len() as i64 - edges.len() as i64
                + self.faces.len() as i64,
            signed_volume: self.signed_volume(),
        }
    }

    /// Signed enclosed volume, `sum det(a, b, c) / 6` over faces. Positive
    /// for a closed mesh whose faces wind counter-clockwise seen from
    /// outside.
    pub fn signed_volume(&self) -> f64 {
        self.faces
            .iter()
            .map(|f| {
                let a = self.vertices[f[0]].coords;
                let b = self.vertices[f[1]].coords;
                let c = self.vertices[f[2]].coords;
                a.dot(&b.cross(&c)) / 6.0
            })
            .sum()
    }

    pub fn face_area(&self, face: usize) -> f64 {
        let [i, j, k] = self.faces[face];
        let ab = self.vertices[j] - self.vertices[i];
        let ac = self.vertices[k] - self.vertices[i];
        ab.cross(&ac).norm() / 2.0
    }

    pub fn areas(&self) -> Vec<f64> {
        (0..self.faces.len()).map(|f| self.face_area(f)).collect()
    }

    pub fn surface_area(&self) -> f64 {
        (0..self.faces.len()).map(|f| self.face_area(f)).sum()
    }

    pub fn face_centroid(&self, face: usize) -> Point3<f64> {
        let [i, j, k] = self.faces[face];
        Point3::from(
            (self.vertices[i].coords + self.vertices[j].coords + self.vertices[k].coords) / 3.0,
        )
    }

    /// One-ring vertex adjacency, each ring sorted ascending.
    pub fn vertex_neighbors(&self) -> Vec<Vec<usize>> {
        let mut rings: Vec<Vec<usize>> = vec![Vec::new(); self.vertices.len()];
        for f in &self.faces {
            for (u, v) in [(f[0], f[1]), (f[1], f[2]), (f[2], f[0])] {
                rings[u].push(v);
                rings[v].push(u);
            }
        }
        for ring in &mut rings {
            ring.sort_unstable();
            ring.dedup();
        }
        rings
    }

    /// Generalized winding number of `p`: ~1 inside a closed outward mesh,
    /// ~0 outside. Sum of signed solid angles over faces, normalised by 4π.
    pub fn winding_number(&self, p: &Point3<f64>) -> f64 {
        let mut total = 0.0;
        for f in &self.faces {
            total += solid_angle(
                &(self.vertices[f[0]] - p),
                &(self.vertices[f[1]] - p),
                &(self.vertices[f[2]] - p),
            );
        }
        total / (4.0 * std::f64::consts::PI)
    }

    /// Whether `p` lies inside the enclosed volume (winding test).
    pub fn contains(&self, p: &Point3<f64>) -> bool {
        self.winding_number(p) > 0.5
    }
}

/// Signed solid angle subtended by triangle `(a, b, c)` (vectors relative
/// to the observer), via the van Oosterom–Strackee formula.
fn solid_angle(a: &Vector3<f64>, b: &Vector3<f64>, c: &Vector3<f64>) -> f64 {
    let la = a.norm();
    let lb = b.norm();
    let lc = c.norm();
    let numer = a.dot(&b.cross(c));
    let denom = la * lb * lc + a.dot(b) * lc + b.dot(c) * la + c.dot(a) * lb;
    2.0 * numer.atan2(denom)
}
