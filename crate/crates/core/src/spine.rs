//! Spine domain model: labelled vertebra meshes with endplate markings and
//! a body frame, plus Cobb-angle measurement between endplate lines.
//!
//! The Cobb angle here is the signed angle between two endplate directions
//! after projection into a measurement plane. In the sagittal plane the
//! sign follows the radiographic convention: posterior convexity
//! (kyphotic) positive, anterior convexity (lordotic) negative.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use nalgebra::{Point3, Vector2, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mesh::{build_adjacency, load_mesh, save_obj, Adjacency, TriMesh};
use crate::registration::{Landmark, LandmarkSet};
use crate::transform::SimilarityTransform;

/// Canonical craniocaudal label order.
pub const ANATOMICAL_ORDER: [&str; 26] = [
    "C1", "C2", "C3", "C4", "C5", "C6", "C7", "T1", "T2", "T3", "T4", "T5", "T6", "T7", "T8",
    "T9", "T10", "T11", "T12", "L1", "L2", "L3", "L4", "L5", "sacrum", "pelvis",
];

/// Position of `label` in the canonical order, if it is a known label.
pub fn label_rank(label: &str) -> Option<usize> {
    ANATOMICAL_ORDER.iter().position(|&l| l == label)
}

/// Right-handed anatomical frame: `anterior × left = superior`.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct BodyFrame {
    #[serde(with = "vec3_as_array")]
    pub origin: Point3<f64>,
    #[serde(with = "dir_as_array")]
    pub anterior: Vector3<f64>,
    #[serde(with = "dir_as_array")]
    pub left: Vector3<f64>,
    #[serde(with = "dir_as_array")]
    pub superior: Vector3<f64>,
}

mod vec3_as_array {
    use nalgebra::Point3;
    use serde::{Deserialize, Deserializer, Serialize, Serializer};

    pub fn serialize<S: Serializer>(p: &Point3<f64>, s: S) -> Result<S::Ok, S::Error> {
        [p.x, p.y, p.z].serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Point3<f64>, D::Error> {
        let [x, y, z] = <[f64; 3]>::deserialize(d)?;
        Ok(Point3::new(x, y, z))
    }
}

mod dir_as_array {
    use nalgebra::Vector3;
    use serde::{Deserialize, Deserializer, Serialize, Serializer};

    pub fn serialize<S: Serializer>(v: &Vector3<f64>, s: S) -> Result<S::Ok, S::Error> {
        [v.x, v.y, v.z].serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Vector3<f64>, D::Error> {
        let [x, y, z] = <[f64; 3]>::deserialize(d)?;
        Ok(Vector3::new(x, y, z))
    }
}

const FRAME_TOL: f64 = 1e-9;

impl BodyFrame {
    /// The canonical frame: anterior = +x, left = +y, superior = +z,
    /// origin at zero.
    pub fn canonical() -> Self {
        BodyFrame {
            origin: Point3::origin(),
            anterior: Vector3::x(),
            left: Vector3::y(),
            superior: Vector3::z(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("anterior", self.anterior),
            ("left", self.left),
            ("superior", self.superior),
        ] {
            if (v.norm() - 1.0).abs() > FRAME_TOL {
                return Err(Error::Parameter(format!(
                    "frame axis {name} is not unit length (‖v‖ = {})",
                    v.norm()
                )));
            }
        }
        for ((na, a), (nb, b)) in [
            (("anterior", self.anterior), ("left", self.left)),
            (("anterior", self.anterior), ("superior", self.superior)),
            (("left", self.left), ("superior", self.superior)),
        ] {
            if a.dot(&b).abs() > FRAME_TOL {
                return Err(Error::Parameter(format!(
                    "frame axes {na} and {nb} are not orthogonal (dot = {:.3e})",
                    a.dot(&b)
                )));
            }
        }
        if (self.anterior.cross(&self.left) - self.superior).norm() > FRAME_TOL {
            return Err(Error::Parameter(
                "frame is not right-handed: anterior × left must equal superior".into(),
            ));
        }
        if !self.origin.iter().all(|v| v.is_finite()) {
            return Err(Error::Parameter("frame origin is not finite".into()));
        }
        Ok(())
    }

    /// Maps the frame through a similarity transform (axes rotate, origin
    /// moves with the full transform).
    pub fn transformed(&self, t: &SimilarityTransform) -> BodyFrame {
        BodyFrame {
            origin: t.apply_point(&self.origin),
            anterior: t.apply_direction(&self.anterior),
            left: t.apply_direction(&self.left),
            superior: t.apply_direction(&self.superior),
        }
    }
}

/// Which endplate of a vertebra.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EndplateSide {
    Superior,
    Inferior,
}

/// Projection plane for angle measurement.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MeasurementPlane {
    /// Spanned by the anterior and superior axes.
    Sagittal,
    /// Spanned by the left and superior axes.
    Coronal,
}

/// One labelled vertebra: its mesh plus endplate vertex index sets.
/// Endplate sets may be empty for elements never measured (e.g. pelvis).
#[derive(Debug, Clone)]
pub struct Vertebra {
    pub label: String,
    pub mesh: TriMesh,
    pub superior_endplate: Vec<usize>,
    pub inferior_endplate: Vec<usize>,
}

impl Vertebra {
    fn endplate(&self, side: EndplateSide) -> &[usize] {
        match side {
            EndplateSide::Superior => &self.superior_endplate,
            EndplateSide::Inferior => &self.inferior_endplate,
        }
    }
}

/// A measured, signed endplate-to-endplate angle.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CobbMeasurement {
    pub angle_deg: f64,
    pub upper: (String, EndplateSide),
    pub lower: (String, EndplateSide),
    pub plane: MeasurementPlane,
    /// Set when the magnitude leaves the anatomically plausible range
    /// (|angle| ≥ 90°).
    pub flagged: bool,
}

/// Ordered vertebra list plus the frame angles are measured in.
#[derive(Debug, Clone)]
pub struct SpineModel {
    vertebrae: Vec<Vertebra>,
    frame: BodyFrame,
}

impl SpineModel {
    /// Validates label uniqueness and anatomical ordering, endplate index
    /// ranges, and the frame.
    pub fn new(vertebrae: Vec<Vertebra>, frame: BodyFrame) -> Result<Self> {
        frame.validate()?;
        if vertebrae.is_empty() {
            return Err(Error::Structural("spine model has no vertebrae".into()));
        }
        let mut last_rank: Option<usize> = None;
        for v in &vertebrae {
            let rank = label_rank(&v.label).ok_or_else(|| {
                Error::Structural(format!("unknown vertebra label {:?}", v.label))
            })?;
            if let Some(prev) = last_rank {
                if rank <= prev {
                    return Err(Error::Structural(format!(
                        "vertebra {:?} is out of anatomical order",
                        v.label
                    )));
                }
            }
            last_rank = Some(rank);
            for (side, set) in [
                ("superior", &v.superior_endplate),
                ("inferior", &v.inferior_endplate),
            ] {
                for &i in set.iter() {
                    if i >= v.mesh.vertex_count() {
                        return Err(Error::Structural(format!(
                            "{} endplate of {:?} references vertex {i}, mesh has {}",
                            side,
                            v.label,
                            v.mesh.vertex_count()
                        )));
                    }
                }
            }
        }
        Ok(SpineModel { vertebrae, frame })
    }

    pub fn frame(&self) -> &BodyFrame {
        &self.frame
    }

    pub fn vertebrae(&self) -> &[Vertebra] {
        &self.vertebrae
    }

    pub fn labels(&self) -> Vec<&str> {
        self.vertebrae.iter().map(|v| v.label.as_str()).collect()
    }

    pub fn get(&self, label: &str) -> Result<&Vertebra> {
        self.vertebrae
            .iter()
            .find(|v| v.label == label)
            .ok_or_else(|| Error::Lookup(format!("no vertebra labelled {label:?}")))
    }

    /// Arithmetic mean of the sub-mesh vertex positions.
    pub fn vertebra_centroid(&self, label: &str) -> Result<Point3<f64>> {
        let v = self.get(label)?;
        if v.mesh.vertex_count() == 0 {
            return Err(Error::Structural(format!("vertebra {label:?} has no vertices")));
        }
        Ok(v.mesh.vertex_centroid())
    }

    /// Builds a landmark set from vertebra centroids, tagged with `frame`
    /// and a common `sigma`.
    pub fn landmark_set(&self, names: &[String], frame: &str, sigma: f64) -> Result<LandmarkSet> {
        let landmarks = names
            .iter()
            .map(|name| {
                Ok(Landmark {
                    name: name.clone(),
                    position: self.vertebra_centroid(name)?,
                    sigma,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        let set = LandmarkSet {
            frame: frame.to_string(),
            landmarks,
        };
        set.validate()?;
        Ok(set)
    }

    fn project(&self, p: &Point3<f64>, plane: MeasurementPlane) -> Vector2<f64> {
        let rel = p - self.frame.origin;
        match plane {
            MeasurementPlane::Sagittal => {
                Vector2::new(rel.dot(&self.frame.anterior), rel.dot(&self.frame.superior))
            }
            MeasurementPlane::Coronal => {
                Vector2::new(rel.dot(&self.frame.left), rel.dot(&self.frame.superior))
            }
        }
    }

    /// Principal direction of the projected endplate vertices, canonically
    /// oriented into the positive half-plane of the first projection axis.
    pub fn endplate_direction(
        &self,
        label: &str,
        side: EndplateSide,
        plane: MeasurementPlane,
    ) -> Result<Vector2<f64>> {
        let v = self.get(label)?;
        let set = v.endplate(side);
        if set.len() < 2 {
            return Err(Error::Structural(format!(
                "{side:?} endplate of {label:?} has {} vertices, need at least 2",
                set.len()
            )));
        }
        // accumulate in sorted-index order so the result does not depend
        // on how the endplate set happens to be ordered
        let mut sorted = set.to_vec();
        sorted.sort_unstable();
        let projected: Vec<Vector2<f64>> = sorted
            .iter()
            .map(|&i| self.project(&v.mesh.vertices()[i], plane))
            .collect();
        let mean = projected.iter().sum::<Vector2<f64>>() / projected.len() as f64;
        let (mut a, mut b, mut c) = (0.0, 0.0, 0.0);
        for p in &projected {
            let d = p - mean;
            a += d.x * d.x;
            b += d.x * d.y;
            c += d.y * d.y;
        }
        if a + c <= 1e-12 {
            return Err(Error::Degenerate(format!(
                "{side:?} endplate of {label:?} projects to a single point"
            )));
        }
        // largest eigen-pair of [[a, b], [b, c]], closed form
        let lambda = 0.5 * ((a + c) + ((a - c) * (a - c) + 4.0 * b * b).sqrt());
        let cand1 = Vector2::new(b, lambda - a);
        let cand2 = Vector2::new(lambda - c, b);
        let mut dir = if cand1.norm() >= cand2.norm() { cand1 } else { cand2 };
        dir /= dir.norm();
        // canonical orientation
        if dir.x < 0.0 || (dir.x == 0.0 && dir.y < 0.0) {
            dir = -dir;
        }
        Ok(dir)
    }

    /// Signed angle between the `upper` and `lower` endplate directions in
    /// the given plane. In the sagittal plane, positive means posterior
    /// convexity (kyphotic), negative anterior convexity (lordotic); the
    /// sign is the orientation of `upper × lower`.
    pub fn cobb_angle(
        &self,
        upper: (&str, EndplateSide),
        lower: (&str, EndplateSide),
        plane: MeasurementPlane,
    ) -> Result<CobbMeasurement> {
        let u = self.endplate_direction(upper.0, upper.1, plane)?;
        let l = self.endplate_direction(lower.0, lower.1, plane)?;
        let dot = u.dot(&l).clamp(-1.0, 1.0);
        let cross = u.x * l.y - u.y * l.x;
        let magnitude = dot.acos().to_degrees();
        let angle_deg = if cross >= 0.0 { magnitude } else { -magnitude };
        Ok(CobbMeasurement {
            angle_deg,
            upper: (upper.0.to_string(), upper.1),
            lower: (lower.0.to_string(), lower.1),
            plane,
            flagged: !(angle_deg.abs() < 90.0),
        })
    }

    /// All vertex positions concatenated in vertebra order, plus the range
    /// each vertebra occupies.
    pub fn combined_positions(&self) -> (Vec<Point3<f64>>, Vec<std::ops::Range<usize>>) {
        let mut positions = Vec::new();
        let mut ranges = Vec::with_capacity(self.vertebrae.len());
        for v in &self.vertebrae {
            let start = positions.len();
            positions.extend_from_slice(v.mesh.vertices());
            ranges.push(start..positions.len());
        }
        (positions, ranges)
    }

    /// One mesh containing every vertebra (faces re-indexed).
    pub fn combined_mesh(&self) -> TriMesh {
        let (positions, ranges) = self.combined_positions();
        let mut faces = Vec::new();
        for (v, range) in self.vertebrae.iter().zip(&ranges) {
            for f in v.mesh.faces() {
                faces.push([f[0] + range.start, f[1] + range.start, f[2] + range.start]);
            }
        }
        TriMesh::new(positions, faces).expect("sub-meshes were valid")
    }

    /// Deformation graph over the combined vertices: every mesh edge, plus
    /// up to four link edges per adjacent vertebra pair connecting their
    /// facing endplates, so the otherwise disconnected sub-meshes form one
    /// graph.
    pub fn deform_graph(&self) -> Result<(Vec<Point3<f64>>, Adjacency)> {
        let combined = self.combined_mesh();
        let (positions, ranges) = self.combined_positions();
        let mut adjacency = build_adjacency(&combined);
        let mut links: Vec<(usize, usize)> = Vec::new();
        for k in 0..self.vertebrae.len().saturating_sub(1) {
            let upper = &self.vertebrae[k];
            let lower = &self.vertebrae[k + 1];
            let upper_set: Vec<usize> = if upper.inferior_endplate.is_empty() {
                (0..upper.mesh.vertex_count()).collect()
            } else {
                upper.inferior_endplate.clone()
            };
            let lower_set: Vec<usize> = if lower.superior_endplate.is_empty() {
                (0..lower.mesh.vertex_count()).collect()
            } else {
                lower.superior_endplate.clone()
            };
            let mut pairs: Vec<(f64, usize, usize)> = Vec::new();
            for &a in &upper_set {
                let pa = ranges[k].start + a;
                for &b in &lower_set {
                    let pb = ranges[k + 1].start + b;
                    pairs.push(((positions[pa] - positions[pb]).norm(), pa, pb));
                }
            }
            pairs.sort_by(|x, y| x.0.total_cmp(&y.0).then(x.1.cmp(&y.1)).then(x.2.cmp(&y.2)));
            let mut used_a = std::collections::BTreeSet::new();
            let mut used_b = std::collections::BTreeSet::new();
            for (_, a, b) in pairs {
                if used_a.contains(&a) || used_b.contains(&b) {
                    continue;
                }
                used_a.insert(a);
                used_b.insert(b);
                links.push((a, b));
                if used_a.len() == 4 {
                    break;
                }
            }
        }
        adjacency.add_edges(&links)?;
        Ok((positions, adjacency))
    }

    /// Rebuilds the model with new combined positions (same order and
    /// connectivity), e.g. after a deformation.
    pub fn with_combined_positions(&self, positions: &[Point3<f64>]) -> Result<SpineModel> {
        let (_, ranges) = self.combined_positions();
        let total = ranges.last().map(|r| r.end).unwrap_or(0);
        if positions.len() != total {
            return Err(Error::Structural(format!(
                "expected {total} combined positions, got {}",
                positions.len()
            )));
        }
        let vertebrae = self
            .vertebrae
            .iter()
            .zip(&ranges)
            .map(|(v, range)| {
                Ok(Vertebra {
                    label: v.label.clone(),
                    mesh: v.mesh.with_positions(positions[range.clone()].to_vec())?,
                    superior_endplate: v.superior_endplate.clone(),
                    inferior_endplate: v.inferior_endplate.clone(),
                })
            })
            .collect::<Result<Vec<_>>>()?;
        SpineModel::new(vertebrae, self.frame)
    }

    /// Applies a similarity transform to every vertebra and to the frame.
    pub fn transformed(&self, t: &SimilarityTransform) -> SpineModel {
        let vertebrae = self
            .vertebrae
            .iter()
            .map(|v| Vertebra {
                label: v.label.clone(),
                mesh: crate::registration::apply_transform(&v.mesh, t),
                superior_endplate: v.superior_endplate.clone(),
                inferior_endplate: v.inferior_endplate.clone(),
            })
            .collect();
        SpineModel {
            vertebrae,
            frame: self.frame.transformed(t),
        }
    }

    /// Writes `manifest.json` plus one OBJ per vertebra into `dir`.
    pub fn save(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let mut endplates = BTreeMap::new();
        for v in &self.vertebrae {
            if !v.superior_endplate.is_empty() || !v.inferior_endplate.is_empty() {
                endplates.insert(
                    v.label.clone(),
                    EndplateEntry {
                        superior: v.superior_endplate.clone(),
                        inferior: v.inferior_endplate.clone(),
                    },
                );
            }
            save_obj(&v.mesh, &dir.join(format!("{}.obj", v.label)))?;
        }
        let manifest = Manifest {
            order: self.vertebrae.iter().map(|v| v.label.clone()).collect(),
            endplates,
            frame: self.frame,
        };
        let text = serde_json::to_string_pretty(&manifest).expect("manifest serialises");
        fs::write(dir.join("manifest.json"), text).map_err(|e| Error::io(dir.join("manifest.json"), e))
    }

    /// Loads a model saved by [`SpineModel::save`] (accepts `.obj` or
    /// `.ply` per vertebra).
    pub fn load(dir: &Path) -> Result<SpineModel> {
        let manifest_path = dir.join("manifest.json");
        let text = fs::read_to_string(&manifest_path).map_err(|e| Error::io(&manifest_path, e))?;
        let manifest: Manifest = serde_json::from_str(&text).map_err(|e| {
            Error::parse(
                &manifest_path,
                crate::registration::byte_offset(&text, e.line(), e.column()),
                e.to_string(),
            )
        })?;
        let mut vertebrae = Vec::with_capacity(manifest.order.len());
        for label in &manifest.order {
            let obj = dir.join(format!("{label}.obj"));
            let ply = dir.join(format!("{label}.ply"));
            let mesh = if obj.exists() {
                load_mesh(&obj)?
            } else if ply.exists() {
                load_mesh(&ply)?
            } else {
                return Err(Error::Io {
                    path: obj,
                    source: std::io::Error::new(
                        std::io::ErrorKind::NotFound,
                        "no mesh file for vertebra",
                    ),
                });
            };
            let plates = manifest.endplates.get(label);
            vertebrae.push(Vertebra {
                label: label.clone(),
                mesh,
                superior_endplate: plates.map(|p| p.superior.clone()).unwrap_or_default(),
                inferior_endplate: plates.map(|p| p.inferior.clone()).unwrap_or_default(),
            });
        }
        SpineModel::new(vertebrae, manifest.frame)
    }
}

#[derive(Serialize, Deserialize)]
struct EndplateEntry {
    superior: Vec<usize>,
    inferior: Vec<usize>,
}

#[derive(Serialize, Deserialize)]
struct Manifest {
    order: Vec<String>,
    endplates: BTreeMap<String, EndplateEntry>,
    frame: BodyFrame,
}
