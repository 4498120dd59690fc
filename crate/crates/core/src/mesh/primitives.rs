//! Small analytic meshes used by the synthetic generator and by tests.

use std::collections::HashMap;

use nalgebra::{Point3, Vector3};

use super::TriMesh;
use crate::error::{Error, Result};

/// Corner ordering for [`hexahedron`]: bottom ring then top ring, each ring
/// counter-clockwise when viewed from above (+z in the axis-aligned case).
///
/// ```text
///     7-------6          z
///    /|      /|          |
///   4-------5 |          +--> x (ring order 0,1,2,3)
///   | 3.....|.2
///   |/      |/
///   0-------1
/// ```
const HEX_FACES: [[usize; 3]; 12] = [
    [0, 2, 1],
    [0, 3, 2], // bottom
    [4, 5, 6],
    [4, 6, 7], // top
    [0, 1, 5],
    [0, 5, 4], // front
    [3, 7, 6],
    [3, 6, 2], // back
    [0, 4, 7],
    [0, 7, 3], // left
    [1, 2, 6],
    [1, 6, 5], // right
];

/// Triangulates an eight-corner solid with outward-facing triangles.
///
/// Corners follow the documented ring order; the solid need not be a box
/// (the generator uses mildly wedge-shaped elements), but it must not be
/// inverted.
pub fn hexahedron(corners: [Point3<f64>; 8]) -> Result<TriMesh> {
    let mesh = TriMesh::new(corners.to_vec(), HEX_FACES.to_vec())?;
    if mesh.signed_volume() <= 0.0 {
        return Err(Error::Structural(
            "hexahedron corners describe an inverted or flat solid".into(),
        ));
    }
    Ok(mesh)
}

/// Axis-aligned box centred at `center` with the given half extents.
pub fn cuboid(center: Point3<f64>, half_extents: Vector3<f64>) -> Result<TriMesh> {
    let h = half_extents;
    if !(h.x > 0.0 && h.y > 0.0 && h.z > 0.0) {
        return Err(Error::Parameter(format!(
            "cuboid half extents must be positive, got ({}, {}, {})",
            h.x, h.y, h.z
        )));
    }
    let ring = [(-1.0, -1.0), (1.0, -1.0), (1.0, 1.0), (-1.0, 1.0)];
    let mut corners = [Point3::origin(); 8];
    for (i, &(sx, sy)) in ring.iter().enumerate() {
        corners[i] = center + Vector3::new(sx * h.x, sy * h.y, -h.z);
        corners[i + 4] = center + Vector3::new(sx * h.x, sy * h.y, h.z);
    }
    hexahedron(corners)
}

/// Unit-sphere triangulation by icosahedron subdivision, scaled to
/// `radius` and centred at the origin. `subdivisions = 0` is the bare
/// icosahedron (12 vertices); each level quadruples the face count.
pub fn icosphere(radius: f64, subdivisions: u32) -> Result<TriMesh> {
    if !(radius > 0.0) {
        return Err(Error::Parameter(format!(
            "icosphere radius must be positive, got {radius}"
        )));
    }
    let t = (1.0 + 5.0_f64.sqrt()) / 2.0;
    let mut vertices: Vec<Vector3<f64>> = [
        (-1.0, t, 0.0),
        (1.0, t, 0.0),
        (-1.0, -t, 0.0),
        (1.0, -t, 0.0),
        (0.0, -1.0, t),
        (0.0, 1.0, t),
        (0.0, -1.0, -t),
        (0.0, 1.0, -t),
        (t, 0.0, -1.0),
        (t, 0.0, 1.0),
        (-t, 0.0, -1.0),
        (-t, 0.0, 1.0),
    ]
    .iter()
    .map(|&(x, y, z)| Vector3::new(x, y, z).normalize())
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

    for _ in 0..subdivisions {
        let mut midpoint: HashMap<(usize, usize), usize> = HashMap::new();
        let mut next = Vec::with_capacity(faces.len() * 4);
        for &[a, b, c] in &faces {
            let mut mid = |i: usize, j: usize, vertices: &mut Vec<Vector3<f64>>| {
                let key = (i.min(j), i.max(j));
                *midpoint.entry(key).or_insert_with(|| {
                    let m = ((vertices[i] + vertices[j]) / 2.0).normalize();
                    vertices.push(m);
                    vertices.len() - 1
                })
            };
            let ab = mid(a, b, &mut vertices);
            let bc = mid(b, c, &mut vertices);
            let ca = mid(c, a, &mut vertices);
            next.push([a, ab, ca]);
            next.push([b, bc, ab]);
            next.push([c, ca, bc]);
            next.push([ab, bc, ca]);
        }
        faces = next;
    }

    TriMesh::new(
        vertices
            .into_iter()
            .map(|v| Point3::from(v * radius))
            .collect(),
        faces,
    )
}

/// Planar grid of `nx` by `ny` vertices in the xy-plane with the given
/// spacing, triangles facing +z. Useful as a mesh with a known interior.
pub fn grid(nx: usize, ny: usize, spacing: f64) -> Result<TriMesh> {
    if nx < 2 || ny < 2 {
        return Err(Error::Parameter(format!(
            "grid needs at least 2x2 vertices, got {nx}x{ny}"
        )));
    }
    if !(spacing > 0.0) {
        return Err(Error::Parameter(format!(
            "grid spacing must be positive, got {spacing}"
        )));
    }
    let mut vertices = Vec::with_capacity(nx * ny);
    for j in 0..ny {
        for i in 0..nx {
            vertices.push(Point3::new(i as f64 * spacing, j as f64 * spacing, 0.0));
        }
    }
    let at = |i: usize, j: usize| j * nx + i;
    let mut faces = Vec::with_capacity((nx - 1) * (ny - 1) * 2);
    for j in 0..ny - 1 {
        for i in 0..nx - 1 {
            faces.push([at(i, j), at(i + 1, j), at(i + 1, j + 1)]);
            faces.push([at(i, j), at(i + 1, j + 1), at(i, j + 1)]);
        }
    }
    TriMesh::new(vertices, faces)
}
