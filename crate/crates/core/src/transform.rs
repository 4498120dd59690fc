//! Similarity transforms (`x ↦ l·R·x + f`) and the weighted closed-form
//! estimators used for coarse registration and local rotation fitting.

use nalgebra::{Matrix3, Point3, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Orthonormality tolerance accepted for rotation matrices.
const ROTATION_TOL: f64 = 1e-9;

/// Relative singular-value threshold below which a point configuration is
/// treated as rank deficient.
const RANK_TOL: f64 = 1e-9;

/// Orientation-preserving similarity transform: scale `l > 0`, rotation
/// `R` (det +1), translation `f` in mm. Maps `x` to `l·R·x + f`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SimilarityTransform {
    pub scale: f64,
    pub rotation: Matrix3<f64>,
    pub translation: Vector3<f64>,
}

impl SimilarityTransform {
    pub fn identity() -> Self {
        SimilarityTransform {
            scale: 1.0,
            rotation: Matrix3::identity(),
            translation: Vector3::zeros(),
        }
    }

    /// Checks the invariants: positive finite scale, orthonormal rotation
    /// with determinant +1, finite translation.
    pub fn validate(&self) -> Result<()> {
        if !(self.scale.is_finite() && self.scale > 0.0) {
            return Err(Error::Parameter(format!(
                "similarity scale must be positive and finite, got {}",
                self.scale
            )));
        }
        let r = self.rotation;
        let ortho = (r.transpose() * r - Matrix3::identity()).norm();
        if !(ortho < ROTATION_TOL) {
            return Err(Error::Parameter(format!(
                "rotation is not orthonormal (‖RᵀR − I‖ = {ortho:.3e})"
            )));
        }
        if !((r.determinant() - 1.0).abs() < ROTATION_TOL) {
            return Err(Error::Parameter(format!(
                "rotation determinant is {}, expected +1",
                r.determinant()
            )));
        }
        if !self.translation.iter().all(|v| v.is_finite()) {
            return Err(Error::Parameter("translation is not finite".into()));
        }
        Ok(())
    }

    /// True only for the exact identity (no tolerance), so callers can
    /// skip applying it without perturbing positions in the last bit.
    pub fn is_identity(&self) -> bool {
        self.scale == 1.0
            && self.rotation == Matrix3::identity()
            && self.translation == Vector3::zeros()
    }

    pub fn apply_point(&self, p: &Point3<f64>) -> Point3<f64> {
        Point3::from(self.scale * (self.rotation * p.coords) + self.translation)
    }

    /// Applies only the rotational part (unit directions stay unit).
    pub fn apply_direction(&self, d: &Vector3<f64>) -> Vector3<f64> {
        self.rotation * d
    }

    /// `self ∘ other`: apply `other` first, then `self`.
    pub fn compose(&self, other: &SimilarityTransform) -> SimilarityTransform {
        SimilarityTransform {
            scale: self.scale * other.scale,
            rotation: self.rotation * other.rotation,
            translation: self.scale * (self.rotation * other.translation) + self.translation,
        }
    }

    pub fn inverse(&self) -> SimilarityTransform {
        let rot_t = self.rotation.transpose();
        SimilarityTransform {
            scale: 1.0 / self.scale,
            rotation: rot_t,
            translation: -(rot_t * self.translation) / self.scale,
        }
    }

    /// Rotation about a unit `axis` by `angle_deg` degrees (no scale or
    /// translation).
    pub fn rotation_about(axis: &Vector3<f64>, angle_deg: f64) -> SimilarityTransform {
        SimilarityTransform {
            scale: 1.0,
            rotation: *nalgebra::Rotation3::from_axis_angle(
                &nalgebra::Unit::new_normalize(*axis),
                angle_deg.to_radians(),
            )
            .matrix(),
            translation: Vector3::zeros(),
        }
    }
}

/// On-disk form: rotation as nine row-major entries.
#[derive(Serialize, Deserialize)]
struct TransformRepr {
    scale: f64,
    rotation: [f64; 9],
    translation: [f64; 3],
}

impl Serialize for SimilarityTransform {
    fn serialize<S: serde::Serializer>(&self, serializer: S) -> std::result::Result<S::Ok, S::Error> {
        let r = &self.rotation;
        TransformRepr {
            scale: self.scale,
            rotation: [
                r[(0, 0)],
                r[(0, 1)],
                r[(0, 2)],
                r[(1, 0)],
                r[(1, 1)],
                r[(1, 2)],
                r[(2, 0)],
                r[(2, 1)],
                r[(2, 2)],
            ],
            translation: [self.translation.x, self.translation.y, self.translation.z],
        }
        .serialize(serializer)
    }
}

impl<'de> Deserialize<'de> for SimilarityTransform {
    fn deserialize<D: serde::Deserializer<'de>>(
        deserializer: D,
    ) -> std::result::Result<Self, D::Error> {
        let repr = TransformRepr::deserialize(deserializer)?;
        let m = repr.rotation;
        let t = SimilarityTransform {
            scale: repr.scale,
            rotation: Matrix3::new(m[0], m[1], m[2], m[3], m[4], m[5], m[6], m[7], m[8]),
            translation: Vector3::new(repr.translation[0], repr.translation[1], repr.translation[2]),
        };
        t.validate().map_err(serde::de::Error::custom)?;
        Ok(t)
    }
}

/// Result of a least-squares rotation fit.
#[derive(Debug, Clone)]
pub struct RotationFit {
    pub rotation: Matrix3<f64>,
    /// Set when the vector configuration was rank deficient (rank ≤ 1), in
    /// which case the returned rotation is one of many minimisers.
    pub ambiguous: bool,
}

/// Finds the rotation `R` minimising `Σ wᵢ ‖tᵢ − R sᵢ‖²` over paired
/// direction vectors, resolving reflections so `det R = +1`.
///
/// Weights must be non-negative, finite, and not all zero.
pub fn fit_rotation(
    source: &[Vector3<f64>],
    target: &[Vector3<f64>],
    weights: &[f64],
) -> Result<RotationFit> {
    if source.len() != target.len() || source.len() != weights.len() {
        return Err(Error::Structural(format!(
            "fit_rotation input lengths differ: {} source, {} target, {} weights",
            source.len(),
            target.len(),
            weights.len()
        )));
    }
    if source.is_empty() {
        return Err(Error::Parameter("fit_rotation needs at least one pair".into()));
    }
    let mut wsum = 0.0;
    for &w in weights {
        if !(w.is_finite() && w >= 0.0) {
            return Err(Error::Parameter(format!("invalid weight {w}")));
        }
        wsum += w;
    }
    if wsum <= 0.0 {
        return Err(Error::Parameter("all fit_rotation weights are zero".into()));
    }

    let mut cov = Matrix3::zeros();
    for ((s, t), &w) in source.iter().zip(target).zip(weights) {
        cov += w * t * s.transpose();
    }
    let (rotation, rank) = polar_rotation(&cov);
    Ok(RotationFit {
        rotation,
        ambiguous: rank <= 1,
    })
}

/// Proper rotation closest to maximising `tr(Rᵀ·cov)`, plus the numerical
/// rank of `cov`.
fn polar_rotation(cov: &Matrix3<f64>) -> (Matrix3<f64>, usize) {
    let svd = nalgebra::SVD::new(*cov, true, true);
    let u = svd.u.expect("svd of 3x3 with vectors requested");
    let v_t = svd.v_t.expect("svd of 3x3 with vectors requested");
    let s = svd.singular_values;
    let rank = s.iter().filter(|&&x| x > RANK_TOL * s[0].max(f64::MIN_POSITIVE)).count();
    // the singular values come back sorted descending, so the sign fix for
    // a reflection goes on the smallest one
    let det = (u * v_t).determinant();
    let d = Matrix3::from_diagonal(&Vector3::new(1.0, 1.0, det.signum()));
    (u * d * v_t, rank)
}

/// Similarity transform fit, with per-pair residuals in mm.
#[derive(Debug, Clone)]
pub struct SimilarityFit {
    pub transform: SimilarityTransform,
    pub residuals: Vec<f64>,
}

/// Recovers the similarity transform minimising
/// `Σᵢ (1/σᵢ²) ‖tᵢ − (l·R·sᵢ + f)‖²` over paired points.
///
/// Needs at least three pairs; collinear configurations (on either side)
/// are rejected as degenerate. Planar configurations are fine.
pub fn weighted_similarity(
    source: &[Point3<f64>],
    target: &[Point3<f64>],
    sigmas: &[f64],
) -> Result<SimilarityFit> {
    if source.len() != target.len() || source.len() != sigmas.len() {
        return Err(Error::Structural(format!(
            "weighted_similarity input lengths differ: {} source, {} target, {} sigmas",
            source.len(),
            target.len(),
            sigmas.len()
        )));
    }
    if source.len() < 3 {
        return Err(Error::Parameter(format!(
            "similarity fit needs at least 3 point pairs, got {}",
            source.len()
        )));
    }
    let mut weights = Vec::with_capacity(sigmas.len());
    for &s in sigmas {
        if !(s.is_finite() && s > 0.0) {
            return Err(Error::Parameter(format!("sigma must be positive, got {s}")));
        }
        weights.push(1.0 / (s * s));
    }
    let wsum: f64 = weights.iter().sum();

    let mut s_bar = Vector3::zeros();
    let mut t_bar = Vector3::zeros();
    for ((s, t), &w) in source.iter().zip(target).zip(&weights) {
        s_bar += w * s.coords;
        t_bar += w * t.coords;
    }
    s_bar /= wsum;
    t_bar /= wsum;

    // weighted scatter ranks decide degeneracy before any fitting
    for (pts, bar, side) in [(source, s_bar, "source"), (target, t_bar, "target")] {
        let mut scatter = Matrix3::zeros();
        for (p, &w) in pts.iter().zip(&weights) {
            let d = p.coords - bar;
            scatter += w * d * d.transpose();
        }
        let sv = nalgebra::SVD::new(scatter, false, false).singular_values;
        if sv[1] <= RANK_TOL * sv[0].max(f64::MIN_POSITIVE) {
            return Err(Error::Degenerate(format!(
                "{side} landmarks are collinear; the rotation is not determined"
            )));
        }
    }

    let mut cov = Matrix3::zeros();
    let mut src_var = 0.0;
    for ((s, t), &w) in source.iter().zip(target).zip(&weights) {
        let ds = s.coords - s_bar;
        let dt = t.coords - t_bar;
        cov += w * dt * ds.transpose();
        src_var += w * ds.norm_squared();
    }

    let svd = nalgebra::SVD::new(cov, true, true);
    let u = svd.u.expect("svd of 3x3 with vectors requested");
    let v_t = svd.v_t.expect("svd of 3x3 with vectors requested");
    let sv = svd.singular_values;
    let det = (u * v_t).determinant();
    let d = Vector3::new(1.0, 1.0, det.signum());
    let rotation = u * Matrix3::from_diagonal(&d) * v_t;

    let scale = sv.dot(&d) / src_var;
    if !(scale.is_finite() && scale > 0.0) {
        return Err(Error::Degenerate(format!(
            "similarity fit recovered a non-positive scale ({scale})"
        )));
    }
    let translation = t_bar - scale * (rotation * s_bar);

    let transform = SimilarityTransform {
        scale,
        rotation,
        translation,
    };
    let residuals = source
        .iter()
        .zip(target)
        .map(|(s, t)| (t - transform.apply_point(s)).norm())
        .collect();
    Ok(SimilarityFit {
        transform,
        residuals,
    })
}
