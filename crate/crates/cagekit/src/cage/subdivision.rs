use std::collections::HashMap;

use crate::geometry::TriMesh;

use super::CageError;

/// Refines the faces whose scores fall in the top `fraction` of the mesh.
///
/// The flag set is the `round(fraction * F)` highest-scoring faces (score
/// ties broken toward lower indices), restricted to faces scoring strictly
/// above the minimum — so a constant score vector flags nothing and the
/// mesh is returned unchanged. Returns the refined mesh and the flagged
/// face indices (ascending).
pub fn subdivide(
    cage: &TriMesh,
    scores: &[f64],
    fraction: f64,
) -> Result<(TriMesh, Vec<usize>), CageError> {
    if scores.len() != cage.faces.len() {
        return Err(CageError::ScoreLengthMismatch {
            scores: scores.len(),
            faces: cage.faces.len(),
        });
    }
    let f = cage.faces.len();
    let quota = ((fraction * f as f64).round() as usize).min(f);

    let min_score = scores.iter().cloned().fold(f64::INFINITY, f64::min);
    let mut order: Vec<usize> = (0..f).collect();
    order.sort_by(|&a, &b| {
        scores[b]
            .partial_cmp(&scores[a])
            .unwrap()
            .then(a.cmp(&b))
    });

    let mut flagged: Vec<usize> = order
        .into_iter()
        .take(quota)
        .filter(|&i| scores[i] > min_score)
        .collect();
    flagged.sort_unstable();

    let mut flags = vec![false; f];
    for &i in &flagged {
        flags[i] = true;
    }
    Ok((subdivide_flagged(cage, &flags), flagged))
}

/// One conforming red–green refinement round.
///
/// Every flagged face is split 1→4 through its edge midpoints (red);
/// an unflagged face adjacent to `k` split edges is split into `k + 1`
/// triangles (green) so the mesh stays watertight. Midpoints are *not*
/// re-projected anywhere: splitting is planar per face, so the total
/// surface area is unchanged. Sub-faces inherit the parent winding.
pub fn subdivide_flagged(cage: &TriMesh, flags: &[bool]) -> TriMesh {
    assert_eq!(flags.len(), cage.faces.len(), "one flag per face");

    let mut vertices = cage.vertices.clone();
    let mut midpoints: HashMap<(usize, usize), usize> = HashMap::new();

    // Red pass first: creates all split-edge midpoints in face order.
    for (fi, face) in cage.faces.iter().enumerate() {
        if !flags[fi] {
            continue;
        }
        for (a, b) in [(face[0], face[1]), (face[1], face[2]), (face[2], face[0])] {
            let key = (a.min(b), a.max(b));
            midpoints.entry(key).or_insert_with(|| {
                let mid = (vertices[a].coords + vertices[b].coords) / 2.0;
                vertices.push(nalgebra::Point3::from(mid));
                vertices.len() - 1
            });
        }
    }

    let lookup = |a: usize, b: usize| -> Option<usize> {
        midpoints.get(&(a.min(b), a.max(b))).copied()
    };

    let mut faces: Vec<[usize; 3]> = Vec::with_capacity(cage.faces.len());
    for (fi, face) in cage.faces.iter().enumerate() {
        let [v0, v1, v2] = *face;
        if flags[fi] {
            let m01 = lookup(v0, v1).unwrap();
            let m12 = lookup(v1, v2).unwrap();
            let m20 = lookup(v2, v0).unwrap();
            faces.push([v0, m01, m20]);
            faces.push([v1, m12, m01]);
            faces.push([v2, m20, m12]);
            faces.push([m01, m12, m20]);
            continue;
        }

        let split = [lookup(v0, v1), lookup(v1, v2), lookup(v2, v0)];
        match split.iter().filter(|s| s.is_some()).count() {
            0 => faces.push(*face),
            1 => {
                // Rotate so the split edge is (a, b).
                let (a, b, c, m) = if let Some(m) = split[0] {
                    (v0, v1, v2, m)
                } else if let Some(m) = split[1] {
                    (v1, v2, v0, m)
                } else {
                    (v2, v0, v1, split[2].unwrap())
                };
                faces.push([a, m, c]);
                faces.push([m, b, c]);
            }
            2 => {
                // Rotate so the split edges are (a, b) and (b, c).
                let (a, b, c, mab, mbc) = if split[0].is_some() && split[1].is_some() {
                    (v0, v1, v2, split[0].unwrap(), split[1].unwrap())
                } else if split[1].is_some() && split[2].is_some() {
                    (v1, v2, v0, split[1].unwrap(), split[2].unwrap())
                } else {
                    (v2, v0, v1, split[2].unwrap(), split[0].unwrap())
                };
                faces.push([mab, b, mbc]);
                faces.push([a, mab, mbc]);
                faces.push([a, mbc, c]);
            }
            3 => {
                // All edges split by red neighbours: same 1->4 pattern.
                let m01 = split[0].unwrap();
                let m12 = split[1].unwrap();
                let m20 = split[2].unwrap();
                faces.push([v0, m01, m20]);
                faces.push([v1, m12, m01]);
                faces.push([v2, m20, m12]);
                faces.push([m01, m12, m20]);
            }
            _ => unreachable!(),
        }
    }

    TriMesh::new(vertices, faces)
}
