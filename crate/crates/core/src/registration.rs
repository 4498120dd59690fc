//! Landmark-based coarse registration and an ICP refinement baseline.
//!
//! Coarse registration recovers the similarity transform between two
//! labelled landmark sets by name matching; ICP aligns a point set to a
//! target mesh rigidly (scale fixed at 1) from whatever initial pose the
//! points are in, and reports whether it plateaued.

use std::collections::BTreeSet;
use std::fs;
use std::path::Path;

use nalgebra::Point3;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mesh::TriMesh;
use crate::spatial::KdTree;
use crate::transform::{fit_rotation, weighted_similarity, SimilarityTransform};

/// A named anatomical point with measurement uncertainty `sigma` (mm).
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Landmark {
    pub name: String,
    #[serde(with = "point_as_array")]
    pub position: Point3<f64>,
    #[serde(default = "default_sigma")]
    pub sigma: f64,
}

fn default_sigma() -> f64 {
    1.0
}

mod point_as_array {
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

/// A set of landmarks tagged with the coordinate frame they live in
/// (e.g. `"ct"` or `"body"`).
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct LandmarkSet {
    pub frame: String,
    pub landmarks: Vec<Landmark>,
}

impl LandmarkSet {
    /// Validates name uniqueness, positive sigmas and finite positions.
    pub fn validate(&self) -> Result<()> {
        let mut seen = BTreeSet::new();
        for lm in &self.landmarks {
            if !seen.insert(lm.name.as_str()) {
                return Err(Error::Structural(format!(
                    "duplicate landmark name {:?}",
                    lm.name
                )));
            }
            if !(lm.sigma.is_finite() && lm.sigma > 0.0) {
                return Err(Error::Parameter(format!(
                    "landmark {:?} has non-positive sigma {}",
                    lm.name, lm.sigma
                )));
            }
            if !lm.position.iter().all(|v| v.is_finite()) {
                return Err(Error::Structural(format!(
                    "landmark {:?} has a non-finite position",
                    lm.name
                )));
            }
        }
        Ok(())
    }

    pub fn get(&self, name: &str) -> Option<&Landmark> {
        self.landmarks.iter().find(|lm| lm.name == name)
    }

    pub fn names(&self) -> Vec<String> {
        self.landmarks.iter().map(|lm| lm.name.clone()).collect()
    }

    pub fn load(path: &Path) -> Result<LandmarkSet> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let set: LandmarkSet = serde_json::from_str(&text).map_err(|e| {
            Error::parse(path, byte_offset(&text, e.line(), e.column()), e.to_string())
        })?;
        set.validate()?;
        Ok(set)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string_pretty(self).expect("landmark sets serialise");
        fs::write(path, text).map_err(|e| Error::io(path, e))
    }
}

/// Converts serde_json's 1-based line/column into a byte offset.
pub(crate) fn byte_offset(text: &str, line: usize, column: usize) -> u64 {
    let mut offset = 0usize;
    for (ln, l) in text.split_inclusive('\n').enumerate() {
        if ln + 1 == line {
            return (offset + column.saturating_sub(1).min(l.len())) as u64;
        }
        offset += l.len();
    }
    offset as u64
}

/// Per-landmark alignment residual in mm.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct LandmarkResidual {
    pub name: String,
    pub residual_mm: f64,
}

/// Outcome of a registration step.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RegistrationReport {
    pub transform: SimilarityTransform,
    /// Per-landmark residuals (empty for ICP, which has no named pairs).
    pub residuals: Vec<LandmarkResidual>,
    /// Root of the weighted mean of squared residuals, in mm.
    pub rms_mm: f64,
    /// Landmark names actually used, in the order they were matched.
    pub subset: Vec<String>,
    /// Iterations executed (1 for the closed-form coarse step).
    pub iterations: usize,
    /// ICP only: the RMS change dropped below tolerance before the
    /// iteration budget ran out.
    pub plateaued: bool,
}

/// Estimates the similarity transform carrying `source` landmarks onto
/// `target` landmarks, matched by name.
///
/// `subset` restricts the match to the given names (empty means every name
/// present in both sets). Weighting uses the target-side sigmas, since the
/// measurement noise lives on the target points.
pub fn coarse_register(
    source: &LandmarkSet,
    target: &LandmarkSet,
    subset: &[String],
) -> Result<RegistrationReport> {
    source.validate()?;
    target.validate()?;
    let names: Vec<String> = if subset.is_empty() {
        source
            .landmarks
            .iter()
            .map(|lm| lm.name.clone())
            .filter(|n| target.get(n).is_some())
            .collect()
    } else {
        subset.to_vec()
    };
    if names.len() < 3 {
        return Err(Error::Parameter(format!(
            "coarse registration needs at least 3 common landmarks, got {}",
            names.len()
        )));
    }
    let mut src = Vec::with_capacity(names.len());
    let mut dst = Vec::with_capacity(names.len());
    let mut sigmas = Vec::with_capacity(names.len());
    for name in &names {
        let s = source
            .get(name)
            .ok_or_else(|| Error::Lookup(format!("landmark {name:?} missing from source set")))?;
        let t = target
            .get(name)
            .ok_or_else(|| Error::Lookup(format!("landmark {name:?} missing from target set")))?;
        src.push(s.position);
        dst.push(t.position);
        sigmas.push(t.sigma);
    }

    let fit = weighted_similarity(&src, &dst, &sigmas)?;
    let mut wsum = 0.0;
    let mut acc = 0.0;
    let mut residuals = Vec::with_capacity(names.len());
    for ((name, r), sigma) in names.iter().zip(&fit.residuals).zip(&sigmas) {
        let w = 1.0 / (sigma * sigma);
        wsum += w;
        acc += w * r * r;
        residuals.push(LandmarkResidual {
            name: name.clone(),
            residual_mm: *r,
        });
    }
    Ok(RegistrationReport {
        transform: fit.transform,
        residuals,
        rms_mm: (acc / wsum).sqrt(),
        subset: names,
        iterations: 1,
        plateaued: false,
    })
}

/// Applies a similarity transform to every vertex of a mesh.
pub fn apply_transform(mesh: &TriMesh, transform: &SimilarityTransform) -> TriMesh {
    let positions = mesh
        .vertices()
        .iter()
        .map(|v| transform.apply_point(v))
        .collect();
    mesh.with_positions(positions)
        .expect("vertex count unchanged by a transform")
}

/// Settings for [`icp_register`].
#[derive(Debug, Clone)]
pub struct IcpConfig {
    pub max_iters: usize,
    /// Stop when the RMS improves by less than this many mm per iteration.
    pub tol_mm: f64,
    /// Upper bound on source points used per iteration (uniform subsample).
    pub max_points: usize,
}

impl Default for IcpConfig {
    fn default() -> Self {
        IcpConfig {
            max_iters: 50,
            tol_mm: 1e-6,
            max_points: 5000,
        }
    }
}

/// Rigid point-to-point ICP from `source` points onto the vertices of
/// `target`. Scale is fixed at 1; the RMS over matched pairs is
/// non-increasing per iteration by construction, and `plateaued` reports
/// whether the run stopped on tolerance rather than the iteration budget.
pub fn icp_register(
    source: &[Point3<f64>],
    target: &TriMesh,
    config: &IcpConfig,
) -> Result<RegistrationReport> {
    if source.is_empty() {
        return Err(Error::Parameter("icp needs at least one source point".into()));
    }
    if config.max_iters == 0 {
        return Err(Error::Parameter("icp iteration budget must be positive".into()));
    }
    if target.vertex_count() == 0 {
        return Err(Error::Parameter("icp target mesh has no vertices".into()));
    }
    let tree = KdTree::build(target.vertices())?;

    // deterministic uniform subsample by stride
    let stride = source.len().div_ceil(config.max_points).max(1);
    let sample: Vec<Point3<f64>> = source.iter().step_by(stride).copied().collect();

    let mut transform = SimilarityTransform::identity();
    let mut prev_rms = f64::INFINITY;
    let mut rms = f64::INFINITY;
    let mut plateaued = false;
    let mut iterations = 0usize;

    for _ in 0..config.max_iters {
        iterations += 1;
        let moved: Vec<Point3<f64>> = sample.iter().map(|p| transform.apply_point(p)).collect();
        let matched: Vec<Point3<f64>> = moved
            .iter()
            .map(|p| {
                let (idx, _) = tree.nearest(p);
                target.vertices()[idx]
            })
            .collect();
        rms = (moved
            .iter()
            .zip(&matched)
            .map(|(a, b)| (a - b).norm_squared())
            .sum::<f64>()
            / moved.len() as f64)
            .sqrt();
        // fresh correspondences can only be at least as close as the pairs
        // the previous step optimised against
        assert!(
            rms <= prev_rms * (1.0 + 1e-12) + 1e-12,
            "icp rms increased: {prev_rms} -> {rms}"
        );
        if prev_rms - rms < config.tol_mm {
            plateaued = true;
            break;
        }
        prev_rms = rms;

        // best rigid motion for the current pairs
        let mut s_bar = nalgebra::Vector3::zeros();
        let mut t_bar = nalgebra::Vector3::zeros();
        for (s, t) in moved.iter().zip(&matched) {
            s_bar += s.coords;
            t_bar += t.coords;
        }
        s_bar /= moved.len() as f64;
        t_bar /= moved.len() as f64;
        let src_centered: Vec<nalgebra::Vector3<f64>> =
            moved.iter().map(|p| p.coords - s_bar).collect();
        let dst_centered: Vec<nalgebra::Vector3<f64>> =
            matched.iter().map(|p| p.coords - t_bar).collect();
        let weights = vec![1.0; src_centered.len()];
        let fit = fit_rotation(&src_centered, &dst_centered, &weights)?;
        let step = SimilarityTransform {
            scale: 1.0,
            rotation: fit.rotation,
            translation: t_bar - fit.rotation * s_bar,
        };
        transform = step.compose(&transform);
    }

    Ok(RegistrationReport {
        transform,
        residuals: Vec::new(),
        rms_mm: rms,
        subset: Vec::new(),
        iterations,
        plateaued,
    })
}
