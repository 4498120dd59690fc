//! Triangle meshes and the discrete operators built on them.
//!
//! Everything downstream (registration, deformation, surface fitting,
//! angle measurement) works on [`TriMesh`] plus the derived
//! [`Adjacency`] / [`VertexWeights`] structures. Coordinates are
//! millimetres throughout.

mod io;
mod primitives;

pub use io::{load_mesh, load_obj, load_ply, save_obj, save_ply};
pub use primitives::{cuboid, grid, hexahedron, icosphere};

use nalgebra::{Point3, Vector3};

use crate::error::{Error, Result};

/// Indexed triangle mesh: vertex positions in mm plus counter-clockwise
/// (outward-facing) triangles.
///
/// Construction validates the structural invariants once; everything else
/// in the crate may then assume them.
#[derive(Debug, Clone, PartialEq)]
pub struct TriMesh {
    vertices: Vec<Point3<f64>>,
    faces: Vec<[usize; 3]>,
}

impl TriMesh {
    /// Builds a mesh, rejecting non-finite coordinates, out-of-range face
    /// indices and faces that repeat a vertex.
    pub fn new(vertices: Vec<Point3<f64>>, faces: Vec<[usize; 3]>) -> Result<Self> {
        for (i, v) in vertices.iter().enumerate() {
            if !(v.x.is_finite() && v.y.is_finite() && v.z.is_finite()) {
                return Err(Error::Structural(format!(
                    "vertex {i} has a non-finite coordinate: ({}, {}, {})",
                    v.x, v.y, v.z
                )));
            }
        }
        let n = vertices.len();
        for (f, idx) in faces.iter().enumerate() {
            for &i in idx {
                if i >= n {
                    return Err(Error::Structural(format!(
                        "face {f} references vertex {i}, but the mesh has {n} vertices"
                    )));
                }
            }
            if idx[0] == idx[1] || idx[1] == idx[2] || idx[0] == idx[2] {
                return Err(Error::Structural(format!(
                    "face {f} repeats a vertex: ({}, {}, {})",
                    idx[0], idx[1], idx[2]
                )));
            }
        }
        Ok(TriMesh { vertices, faces })
    }

    pub fn vertices(&self) -> &[Point3<f64>] {
        &self.vertices
    }

    pub fn faces(&self) -> &[[usize; 3]] {
        &self.faces
    }

    pub fn vertex_count(&self) -> usize {
        self.vertices.len()
    }

    pub fn face_count(&self) -> usize {
        self.faces.len()
    }

    /// Replaces the vertex positions, keeping connectivity. Lengths must match.
    pub fn with_positions(&self, positions: Vec<Point3<f64>>) -> Result<Self> {
        if positions.len() != self.vertices.len() {
            return Err(Error::Structural(format!(
                "position count {} does not match vertex count {}",
                positions.len(),
                self.vertices.len()
            )));
        }
        TriMesh::new(positions, self.faces.clone())
    }

    /// Area of face `f` in mm².
    pub fn face_area(&self, f: usize) -> f64 {
        let [a, b, c] = self.faces[f];
        let ab = self.vertices[b] - self.vertices[a];
        let ac = self.vertices[c] - self.vertices[a];
        ab.cross(&ac).norm() * 0.5
    }

    /// Sum of all face areas in mm².
    pub fn total_area(&self) -> f64 {
        (0..self.faces.len()).map(|f| self.face_area(f)).sum()
    }

    /// Centroid of the vertex positions (unweighted mean).
    pub fn vertex_centroid(&self) -> Point3<f64> {
        let mut acc = Vector3::zeros();
        for v in &self.vertices {
            acc += v.coords;
        }
        Point3::from(acc / self.vertices.len().max(1) as f64)
    }

    /// True when every undirected edge is shared by exactly two faces with
    /// opposite orientation — i.e. the mesh bounds a solid.
    pub fn is_watertight(&self) -> bool {
        use std::collections::HashMap;
        if self.faces.is_empty() {
            return false;
        }
        // count directed half-edges; watertight <=> every (i,j) appears
        // exactly once and so does its twin (j,i)
        let mut half: HashMap<(usize, usize), u32> = HashMap::new();
        for f in &self.faces {
            for k in 0..3 {
                let e = (f[k], f[(k + 1) % 3]);
                *half.entry(e).or_insert(0) += 1;
            }
        }
        half.iter()
            .all(|(&(i, j), &c)| c == 1 && half.get(&(j, i)) == Some(&1))
    }

    /// Signed volume enclosed by the mesh (divergence theorem); positive for
    /// a watertight mesh with outward-facing triangles.
    pub fn signed_volume(&self) -> f64 {
        self.faces
            .iter()
            .map(|&[a, b, c]| {
                self.vertices[a]
                    .coords
                    .dot(&self.vertices[b].coords.cross(&self.vertices[c].coords))
                    / 6.0
            })
            .sum()
    }

    /// Axis-aligned bounding box as `(min, max)` corners.
    pub fn bounding_box(&self) -> Option<(Point3<f64>, Point3<f64>)> {
        let first = *self.vertices.first()?;
        let mut lo = first;
        let mut hi = first;
        for v in &self.vertices {
            for k in 0..3 {
                lo[k] = lo[k].min(v[k]);
                hi[k] = hi[k].max(v[k]);
            }
        }
        Some((lo, hi))
    }
}

/// Per-vertex neighbour and incident-face lists.
///
/// Can be derived from a mesh or assembled from bare edges, so deformation
/// can run on graphs that also contain non-mesh links.
#[derive(Debug, Clone)]
pub struct Adjacency {
    neighbors: Vec<Vec<usize>>,
    incident_faces: Vec<Vec<usize>>,
}

impl Adjacency {
    /// One-ring neighbours of vertex `i`, sorted ascending.
    pub fn neighbors(&self, i: usize) -> &[usize] {
        &self.neighbors[i]
    }

    /// Faces incident to vertex `i` (empty when built from bare edges).
    pub fn incident_faces(&self, i: usize) -> &[usize] {
        &self.incident_faces[i]
    }

    pub fn vertex_count(&self) -> usize {
        self.neighbors.len()
    }

    /// Builds adjacency from an undirected edge list over `n` vertices.
    pub fn from_edges(n: usize, edges: &[(usize, usize)]) -> Result<Self> {
        let mut neighbors = vec![Vec::new(); n];
        for &(i, j) in edges {
            if i >= n || j >= n {
                return Err(Error::Structural(format!(
                    "edge ({i}, {j}) references a vertex outside 0..{n}"
                )));
            }
            if i == j {
                return Err(Error::Structural(format!("edge ({i}, {j}) is a self-loop")));
            }
            neighbors[i].push(j);
            neighbors[j].push(i);
        }
        for list in &mut neighbors {
            list.sort_unstable();
            list.dedup();
        }
        Ok(Adjacency {
            neighbors,
            incident_faces: vec![Vec::new(); n],
        })
    }

    /// Merges another edge set into this adjacency (used to link otherwise
    /// disconnected mesh components into one deformation graph).
    pub fn add_edges(&mut self, edges: &[(usize, usize)]) -> Result<()> {
        let n = self.neighbors.len();
        for &(i, j) in edges {
            if i >= n || j >= n {
                return Err(Error::Structural(format!(
                    "edge ({i}, {j}) references a vertex outside 0..{n}"
                )));
            }
            if i == j {
                return Err(Error::Structural(format!("edge ({i}, {j}) is a self-loop")));
            }
            self.neighbors[i].push(j);
            self.neighbors[j].push(i);
        }
        for list in &mut self.neighbors {
            list.sort_unstable();
            list.dedup();
        }
        Ok(())
    }

    /// Connected components as a vertex -> component-id map plus the count.
    pub fn components(&self) -> (Vec<usize>, usize) {
        let n = self.neighbors.len();
        let mut comp = vec![usize::MAX; n];
        let mut count = 0;
        let mut stack = Vec::new();
        for start in 0..n {
            if comp[start] != usize::MAX {
                continue;
            }
            comp[start] = count;
            stack.push(start);
            while let Some(v) = stack.pop() {
                for &w in &self.neighbors[v] {
                    if comp[w] == usize::MAX {
                        comp[w] = count;
                        stack.push(w);
                    }
                }
            }
            count += 1;
        }
        (comp, count)
    }
}

/// Derives vertex adjacency and incident faces from mesh connectivity.
pub fn build_adjacency(mesh: &TriMesh) -> Adjacency {
    let n = mesh.vertex_count();
    let mut neighbors = vec![Vec::new(); n];
    let mut incident_faces = vec![Vec::new(); n];
    for (f, &[a, b, c]) in mesh.faces().iter().enumerate() {
        neighbors[a].push(b);
        neighbors[a].push(c);
        neighbors[b].push(a);
        neighbors[b].push(c);
        neighbors[c].push(a);
        neighbors[c].push(b);
        incident_faces[a].push(f);
        incident_faces[b].push(f);
        incident_faces[c].push(f);
    }
    for list in &mut neighbors {
        list.sort_unstable();
        list.dedup();
    }
    Adjacency {
        neighbors,
        incident_faces,
    }
}

/// Which discrete edge weights to use for Laplacians and deformation.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum WeightScheme {
    /// Every edge weighs 1. Robust on poorly shaped or non-mesh graphs.
    Uniform,
    /// Cotangent weights `(cot α + cot β)/2` over the angles opposite the
    /// edge, clamped below at `COTAN_CLAMP` so spiky triangulations cannot
    /// produce non-positive weights.
    Cotangent,
}

/// Lower clamp applied to cotangent edge weights.
pub const COTAN_CLAMP: f64 = 1e-6;

/// Symmetric per-edge weights plus per-vertex mixed Voronoi areas.
///
/// `weights(i)[k]` corresponds to `adjacency.neighbors(i)[k]`; the
/// structure is built against a specific [`Adjacency`] and must be used
/// with position arrays of the same length.
#[derive(Debug, Clone)]
pub struct VertexWeights {
    scheme: WeightScheme,
    weights: Vec<Vec<f64>>,
    areas: Vec<f64>,
}

impl VertexWeights {
    /// Computes edge weights for `scheme` and mixed Voronoi areas from the
    /// mesh geometry. `adjacency` must come from the same mesh.
    pub fn build(mesh: &TriMesh, adjacency: &Adjacency, scheme: WeightScheme) -> Result<Self> {
        if adjacency.vertex_count() != mesh.vertex_count() {
            return Err(Error::Structural(format!(
                "adjacency covers {} vertices but the mesh has {}",
                adjacency.vertex_count(),
                mesh.vertex_count()
            )));
        }
        let weights = match scheme {
            WeightScheme::Uniform => uniform_weights(adjacency),
            WeightScheme::Cotangent => cotangent_weights(mesh, adjacency),
        };
        Ok(VertexWeights {
            scheme,
            weights,
            areas: voronoi_areas(mesh),
        })
    }

    /// Uniform weights over a bare graph (no areas meaningful; all set to 1).
    pub fn uniform_for_graph(adjacency: &Adjacency) -> Self {
        VertexWeights {
            scheme: WeightScheme::Uniform,
            weights: uniform_weights(adjacency),
            areas: vec![1.0; adjacency.vertex_count()],
        }
    }

    pub fn scheme(&self) -> WeightScheme {
        self.scheme
    }

    /// Weights aligned with `adjacency.neighbors(i)`.
    pub fn weights(&self, i: usize) -> &[f64] {
        &self.weights[i]
    }

    /// Mixed Voronoi area of vertex `i` in mm².
    pub fn area(&self, i: usize) -> f64 {
        self.areas[i]
    }

    pub fn areas(&self) -> &[f64] {
        &self.areas
    }

    pub fn vertex_count(&self) -> usize {
        self.weights.len()
    }
}

fn uniform_weights(adjacency: &Adjacency) -> Vec<Vec<f64>> {
    (0..adjacency.vertex_count())
        .map(|i| vec![1.0; adjacency.neighbors(i).len()])
        .collect()
}

fn cotangent_weights(mesh: &TriMesh, adjacency: &Adjacency) -> Vec<Vec<f64>> {
    let n = mesh.vertex_count();
    // accumulate cot(angle opposite edge)/2 per directed edge via a map of
    // neighbour slots; meshes here are small enough for a per-vertex scan
    let mut weights: Vec<Vec<f64>> = (0..n)
        .map(|i| vec![0.0; adjacency.neighbors(i).len()])
        .collect();
    let slot = |i: usize, j: usize| -> usize {
        adjacency.neighbors(i).binary_search(&j).expect("edge from face must be in adjacency")
    };
    let vs = mesh.vertices();
    for &[a, b, c] in mesh.faces() {
        for (i, j, k) in [(a, b, c), (b, c, a), (c, a, b)] {
            // angle at k, opposite edge (i, j)
            let u = vs[i] - vs[k];
            let v = vs[j] - vs[k];
            let cross = u.cross(&v).norm();
            if cross <= f64::EPSILON * u.norm() * v.norm() {
                continue; // degenerate corner contributes nothing
            }
            let w = 0.5 * u.dot(&v) / cross;
            weights[i][slot(i, j)] += w;
            weights[j][slot(j, i)] += w;
        }
    }
    for row in &mut weights {
        for w in row {
            *w = w.max(COTAN_CLAMP);
        }
    }
    weights
}

/// Per-vertex area normals. `undefined` lists vertices whose normal could
/// not be established (isolated, or only degenerate incident faces); their
/// entry in `normals` is the zero vector.
#[derive(Debug, Clone)]
pub struct VertexNormals {
    pub normals: Vec<Vector3<f64>>,
    pub undefined: Vec<usize>,
}

/// Area-weighted vertex normals (unit length where defined).
pub fn vertex_normals(mesh: &TriMesh) -> VertexNormals {
    let mut acc = vec![Vector3::zeros(); mesh.vertex_count()];
    let vs = mesh.vertices();
    for &[a, b, c] in mesh.faces() {
        // cross product has magnitude 2*area, so summing it area-weights
        let n = (vs[b] - vs[a]).cross(&(vs[c] - vs[a]));
        acc[a] += n;
        acc[b] += n;
        acc[c] += n;
    }
    let mut undefined = Vec::new();
    let normals = acc
        .into_iter()
        .enumerate()
        .map(|(i, n)| {
            let len = n.norm();
            if len <= 1e-20 {
                undefined.push(i);
                Vector3::zeros()
            } else {
                n / len
            }
        })
        .collect();
    VertexNormals { normals, undefined }
}

/// Mixed Voronoi vertex areas (Voronoi areas inside non-obtuse triangles,
/// the ½/¼/¼ split for obtuse ones). Sums exactly to the surface area.
pub fn voronoi_areas(mesh: &TriMesh) -> Vec<f64> {
    let mut areas = vec![0.0; mesh.vertex_count()];
    let vs = mesh.vertices();
    for &[a, b, c] in mesh.faces() {
        let pa = vs[a];
        let pb = vs[b];
        let pc = vs[c];
        let area = (pb - pa).cross(&(pc - pa)).norm() * 0.5;
        if area <= 0.0 {
            continue;
        }
        // cotangent of the interior angle at each corner
        let cot = |p: Point3<f64>, q: Point3<f64>, r: Point3<f64>| {
            let u = q - p;
            let v = r - p;
            u.dot(&v) / u.cross(&v).norm()
        };
        let cot_a = cot(pa, pb, pc);
        let cot_b = cot(pb, pc, pa);
        let cot_c = cot(pc, pa, pb);
        if cot_a >= 0.0 && cot_b >= 0.0 && cot_c >= 0.0 {
            // non-obtuse: true Voronoi cell areas
            let l_ab = (pb - pa).norm_squared();
            let l_bc = (pc - pb).norm_squared();
            let l_ca = (pa - pc).norm_squared();
            areas[a] += (l_ab * cot_c + l_ca * cot_b) / 8.0;
            areas[b] += (l_ab * cot_c + l_bc * cot_a) / 8.0;
            areas[c] += (l_ca * cot_b + l_bc * cot_a) / 8.0;
        } else {
            // obtuse: half to the obtuse corner, quarter to the others
            let (wa, wb, wc) = if cot_a < 0.0 {
                (0.5, 0.25, 0.25)
            } else if cot_b < 0.0 {
                (0.25, 0.5, 0.25)
            } else {
                (0.25, 0.25, 0.5)
            };
            areas[a] += wa * area;
            areas[b] += wb * area;
            areas[c] += wc * area;
        }
    }
    areas
}

/// Discrete Laplacian `Δx_i = Σ_j w_ij (x_j − x_i)` evaluated at the given
/// positions. `positions` may differ from the mesh the weights were built
/// on (same vertex count) so deformed states can be measured against rest
/// connectivity.
pub fn laplacian(
    adjacency: &Adjacency,
    weights: &VertexWeights,
    positions: &[Point3<f64>],
) -> Vec<Vector3<f64>> {
    assert_eq!(adjacency.vertex_count(), positions.len());
    assert_eq!(weights.vertex_count(), positions.len());
    (0..positions.len())
        .map(|i| {
            let mut acc = Vector3::zeros();
            for (&j, &w) in adjacency.neighbors(i).iter().zip(weights.weights(i)) {
                acc += w * (positions[j] - positions[i]);
            }
            acc
        })
        .collect()
}
