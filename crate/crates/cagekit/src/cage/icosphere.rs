use std::collections::HashMap;

use nalgebra::Point3;

use crate::geometry::{PointCloud, TriMesh};

use super::CageError;

/// Golden-ratio icosahedron subdivided `level` times, every vertex on the
/// unit sphere.
///
/// Level 0 is the icosahedron itself (12 vertices, 20 faces); each level
/// quadruples the face count by splitting every edge at its midpoint and
/// re-projecting onto the sphere: level 1 has 42 vertices and 80 faces,
/// level 2 has 162 and 320. Faces wind counter-clockwise seen from
/// outside.
pub fn icosphere(level: u32) -> TriMesh {
    let phi = (1.0 + 5.0f64.sqrt()) / 2.0;
    let raw = [
        (-1.0, phi, 0.0),
        (1.0, phi, 0.0),
        (-1.0, -phi, 0.0),
        (1.0, -phi, 0.0),
        (0.0, -1.0, phi),
        (0.0, 1.0, phi),
        (0.0, -1.0, -phi),
        (0.0, 1.0, -phi),
        (phi, 0.0, -1.0),
        (phi, 0.0, 1.0),
        (-phi, 0.0, -1.0),
        (-phi, 0.0, 1.0),
    ];
    let mut vertices: Vec<Point3<f64>> = raw
        .iter()
        .map(|&(x, y, z)| {
            let v = nalgebra::Vector3::new(x, y, z).normalize();
            Point3::from(v)
        })
        .collect();

    let mut faces: Vec<[usize; 3]> = vec![
        [0, 11, 5],
        [0, 5, 1],
        [0, 1, 7],
        [0, 7, 10],
        [0, 10, 11],
        [1, 5, 9],
        [5, 11, 4],
        [11, 10, 2],
        [10, 7, 6],
        [7, 1, 8],
        [3, 9, 4],
        [3, 4, 2],
        [3, 2, 6],
        [3, 6, 8],
        [3, 8, 9],
        [4, 9, 5],
        [2, 4, 11],
        [6, 2, 10],
        [8, 6, 7],
        [9, 8, 1],
    ];

    for _ in 0..level {
        let mut midpoints: HashMap<(usize, usize), usize> = HashMap::new();
        let mut next_faces = Vec::with_capacity(faces.len() * 4);
        for f in &faces {
            let m01 = midpoint(&mut vertices, &mut midpoints, f[0], f[1]);
            let m12 = midpoint(&mut vertices, &mut midpoints, f[1], f[2]);
            let m20 = midpoint(&mut vertices, &mut midpoints, f[2], f[0]);
            next_faces.push([f[0], m01, m20]);
            next_faces.push([f[1], m12, m01]);
            next_faces.push([f[2], m20, m12]);
            next_faces.push([m01, m12, m20]);
        }
        faces = next_faces;
    }

    TriMesh::new(vertices, faces)
}

fn midpoint(
    vertices: &mut Vec<Point3<f64>>,
    cache: &mut HashMap<(usize, usize), usize>,
    a: usize,
    b: usize,
) -> usize {
    let key = (a.min(b), a.max(b));
    if let Some(&idx) = cache.get(&key) {
        return idx;
    }
    let mid = (vertices[a].coords + vertices[b].coords) / 2.0;
    vertices.push(Point3::from(mid.normalize()));
    let idx = vertices.len() - 1;
    cache.insert(key, idx);
    idx
}

/// Smallest distance from the origin to any supporting face plane of a
/// star-shaped mesh around the origin — the radius of the largest origin
/// ball guaranteed to fit inside.
pub(crate) fn inscribed_radius(mesh: &TriMesh) -> f64 {
    let mut min_d = f64::INFINITY;
    for f in &mesh.faces {
        let a = mesh.vertices[f[0]];
        let n = (mesh.vertices[f[1]] - a).cross(&(mesh.vertices[f[2]] - a));
        let norm = n.norm();
        if norm > 0.0 {
            min_d = min_d.min(a.coords.dot(&n).abs() / norm);
        }
    }
    min_d
}

/// Icosphere cage strictly enclosing a cloud centred on the origin.
///
/// The sphere is scaled so its *inscribed* radius is `margin` times the
/// cloud's outermost point: because the faces of an icosphere sag below
/// its circumscribed sphere, scaling the circumradius alone would let
/// extreme points poke through a face. With `margin > 1` every cloud point
/// is strictly inside by construction.
pub fn init_sphere_cage(
    cloud: &PointCloud,
    level: u32,
    margin: f64,
) -> Result<TriMesh, CageError> {
    if margin <= 1.0 {
        return Err(CageError::MarginTooSmall { margin });
    }
    let unit = icosphere(level);
    let rho = inscribed_radius(&unit);
    let radius = margin * cloud.max_norm() / rho;
    let mut cage = unit;
    for v in &mut cage.vertices {
        v.coords *= radius;
    }
    Ok(cage)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cage::tests::blob_cloud;

    #[test]
    fn icosphere_counts_follow_subdivision_arithmetic() {
        for (level, verts, faces) in [(0u32, 12, 20), (1, 42, 80), (2, 162, 320)] {
            let mesh = icosphere(level);
            assert_eq!(mesh.vertex_count(), verts, "level {level} vertices");
            assert_eq!(mesh.face_count(), faces, "level {level} faces");
            let report = mesh.validate();
            assert!(report.is_valid_cage(), "level {level}: {report:?}");
        }
    }

    #[test]
    fn icosphere_vertices_sit_on_the_unit_sphere() {
        let mesh = icosphere(2);
        for v in &mesh.vertices {
            assert!((v.coords.norm() - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn inscribed_radius_is_between_icosahedron_inradius_and_one() {
        // The icosahedron inradius/circumradius ratio is about 0.7947;
        // subdividing pushes faces closer to the sphere.
        let rho0 = inscribed_radius(&icosphere(0));
        let rho1 = inscribed_radius(&icosphere(1));
        let rho2 = inscribed_radius(&icosphere(2));
        assert!((rho0 - 0.7947).abs() < 1e-3);
        assert!(rho0 < rho1 && rho1 < rho2 && rho2 < 1.0);
    }

    #[test]
    fn cage_strictly_contains_every_point() {
        let cloud = blob_cloud(300, 99);
        let cage = init_sphere_cage(&cloud, 1, 1.05).unwrap();
        // Convexity makes the plane test exact: every point must be on the
        // inner side of every face plane.
        for (pi, p) in cloud.points.iter().enumerate() {
            for f in &cage.faces {
                let a = cage.vertices[f[0]];
                let n = (cage.vertices[f[1]] - a).cross(&(cage.vertices[f[2]] - a));
                let signed = (p - a).dot(&n);
                assert!(signed < 0.0, "point {pi} on or outside a cage face");
            }
        }
    }

    #[test]
    fn unit_margin_is_rejected() {
        let cloud = blob_cloud(10, 1);
        assert!(matches!(
            init_sphere_cage(&cloud, 1, 1.0),
            Err(CageError::MarginTooSmall { .. })
        ));
    }
}
