//! Synthetic spine generator with known ground truth, plus a perturbation
//! model that simulates a scan of the same anatomy in a different frame
//! and posture.
//!
//! The column is a stack of labelled hexahedral vertebra boxes whose
//! endplates are tangent-aligned to a circular arc. The arc angle is
//! normalised so that the sagittal angle between the superior endplate of
//! L1 and the inferior endplate of L5 equals `theta_gt_deg` exactly,
//! which makes the generator its own measurement oracle.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use nalgebra::{Matrix3, Point3, Rotation3, Unit, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mesh::hexahedron;
use crate::registration::{byte_offset, LandmarkSet};
use crate::spine::{BodyFrame, EndplateSide, MeasurementPlane, SpineModel, Vertebra, ANATOMICAL_ORDER};
use crate::transform::SimilarityTransform;

/// Landmarks used for coarse registration: skull base, cervicothoracic
/// junction, mid-thoracic, and the two lowest lumbar bodies.
pub const DEFAULT_LANDMARKS: [&str; 5] = ["C1", "C7", "T7", "L4", "L5"];

/// Labels treated as the rigid pelvic unit (scan-time posture handle).
pub const ANCHOR_LABELS: [&str; 2] = ["sacrum", "pelvis"];

/// Parameters of the synthetic column. Sizes are `[width, depth, height]`
/// in mm (width along `left`, depth along `anterior`, height along the
/// column). The vertebra roster is the fixed anatomical one (C1–C7,
/// T1–T12, L1–L5, sacrum, pelvis); only sizes and curvature vary.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct SynthSpec {
    /// Sagittal arc angle between L1-superior and L5-inferior endplates,
    /// in degrees; positive bows the column posteriorly convex.
    pub theta_gt_deg: f64,
    /// Optional lateral bow, same normalisation, 0 keeps the column planar.
    pub coronal_arc_deg: f64,
    pub cervical_size_mm: [f64; 3],
    pub thoracic_size_mm: [f64; 3],
    pub lumbar_size_mm: [f64; 3],
    pub sacrum_size_mm: [f64; 3],
    pub pelvis_size_mm: [f64; 3],
    /// Disc gap between adjacent boxes along the arc, mm.
    pub spacing_mm: f64,
    /// Default landmark noise handed to the perturbation stage, mm.
    pub noise_sigma_mm: f64,
    pub seed: u64,
}

impl Default for SynthSpec {
    fn default() -> Self {
        SynthSpec {
            theta_gt_deg: 31.8,
            coronal_arc_deg: 0.0,
            cervical_size_mm: [26.0, 18.0, 14.0],
            thoracic_size_mm: [34.0, 24.0, 20.0],
            lumbar_size_mm: [44.0, 32.0, 26.0],
            sacrum_size_mm: [54.0, 36.0, 32.0],
            pelvis_size_mm: [120.0, 80.0, 50.0],
            spacing_mm: 4.0,
            noise_sigma_mm: 0.5,
            seed: 0,
        }
    }
}

impl SynthSpec {
    pub fn validate(&self) -> Result<()> {
        if !self.theta_gt_deg.is_finite() || self.theta_gt_deg.abs() >= 90.0 {
            return Err(Error::Parameter(format!(
                "theta_gt_deg must lie in (-90, 90), got {}",
                self.theta_gt_deg
            )));
        }
        if !self.coronal_arc_deg.is_finite() || self.coronal_arc_deg.abs() >= 90.0 {
            return Err(Error::Parameter(format!(
                "coronal_arc_deg must lie in (-90, 90), got {}",
                self.coronal_arc_deg
            )));
        }
        for (name, size) in [
            ("cervical_size_mm", self.cervical_size_mm),
            ("thoracic_size_mm", self.thoracic_size_mm),
            ("lumbar_size_mm", self.lumbar_size_mm),
            ("sacrum_size_mm", self.sacrum_size_mm),
            ("pelvis_size_mm", self.pelvis_size_mm),
        ] {
            if size.iter().any(|&v| !v.is_finite() || v <= 0.0) {
                return Err(Error::Parameter(format!(
                    "{name} must be positive and finite, got {size:?}"
                )));
            }
        }
        if !self.spacing_mm.is_finite() || self.spacing_mm <= 0.0 {
            return Err(Error::Parameter(format!(
                "spacing_mm must be positive, got {}",
                self.spacing_mm
            )));
        }
        if !self.noise_sigma_mm.is_finite() || self.noise_sigma_mm < 0.0 {
            return Err(Error::Parameter(format!(
                "noise_sigma_mm must be non-negative, got {}",
                self.noise_sigma_mm
            )));
        }
        Ok(())
    }

    fn size_for(&self, label: &str) -> [f64; 3] {
        match label {
            "sacrum" => self.sacrum_size_mm,
            "pelvis" => self.pelvis_size_mm,
            l if l.starts_with('C') => self.cervical_size_mm,
            l if l.starts_with('T') => self.thoracic_size_mm,
            _ => self.lumbar_size_mm,
        }
    }
}

/// Circular-arc centreline in the canonical body frame. Arc length `s`
/// is measured from the inferior endplate of L5, positive upward.
struct Arc {
    kappa_sagittal: f64,
    kappa_coronal: f64,
}

impl Arc {
    /// Frame rotation at arc length `s`: sagittal bend about `left`
    /// composed with lateral bend about `anterior`.
    fn rotation(&self, s: f64) -> Matrix3<f64> {
        let sagittal = Rotation3::from_axis_angle(&Vector3::y_axis(), self.kappa_sagittal * s);
        if self.kappa_coronal == 0.0 {
            return *sagittal.matrix();
        }
        let coronal = Rotation3::from_axis_angle(&Vector3::x_axis(), self.kappa_coronal * s);
        *(coronal * sagittal).matrix()
    }

    fn tangent(&self, s: f64) -> Vector3<f64> {
        self.rotation(s) * Vector3::z()
    }

    fn position(&self, s: f64) -> Point3<f64> {
        if self.kappa_coronal == 0.0 {
            let k = self.kappa_sagittal;
            if k == 0.0 {
                return Point3::new(0.0, 0.0, s);
            }
            let phi = k * s;
            // 2·sin²(φ/2) avoids the cancellation in 1 − cos φ
            let half = 0.5 * phi;
            return Point3::new(2.0 * half.sin().powi(2) / k, 0.0, phi.sin() / k);
        }
        // no closed form once both bends are active; composite Simpson
        let n = ((s.abs() / 0.25).ceil() as usize).max(8);
        let n = n + n % 2;
        let h = s / n as f64;
        let mut acc = self.tangent(0.0) + self.tangent(s);
        for i in 1..n {
            let w = if i % 2 == 1 { 4.0 } else { 2.0 };
            acc += w * self.tangent(h * i as f64);
        }
        Point3::origin() + acc * (h / 3.0)
    }
}

/// Builds the labelled column described by `spec`. The result lives in the
/// canonical body frame and carries four-vertex endplate sets per box, so
/// the measured sagittal angle between tangent-aligned endplates
/// reproduces `theta_gt_deg` exactly. Construction is deterministic: no
/// randomness is consumed here.
pub fn make_spine(spec: &SynthSpec) -> Result<SpineModel> {
    spec.validate()?;
    let gap = spec.spacing_mm;
    let h_lumbar = spec.lumbar_size_mm[2];
    let lumbar_span = 5.0 * h_lumbar + 4.0 * gap;
    let arc = Arc {
        kappa_sagittal: spec.theta_gt_deg.to_radians() / lumbar_span,
        kappa_coronal: spec.coronal_arc_deg.to_radians() / lumbar_span,
    };
    let turn_rate = arc.kappa_sagittal.hypot(arc.kappa_coronal);
    let max_depth = ANATOMICAL_ORDER
        .iter()
        .map(|l| spec.size_for(l)[1])
        .fold(0.0_f64, f64::max);
    if turn_rate * max_depth / 2.0 >= 0.95 {
        return Err(Error::Parameter(format!(
            "arc is too tight for the box depths: curvature {turn_rate:.4}/mm would \
             interpenetrate adjacent endplates"
        )));
    }

    // arc-length interval occupied by each vertebra
    let mut intervals: BTreeMap<&str, (f64, f64)> = BTreeMap::new();
    for k in 1..=5u32 {
        let bottom = (5 - k) as f64 * (h_lumbar + gap);
        intervals.insert(ANATOMICAL_ORDER[18 + k as usize], (bottom, bottom + h_lumbar));
    }
    let mut cursor = lumbar_span;
    for label in ANATOMICAL_ORDER[..19].iter().rev() {
        let h = spec.size_for(label)[2];
        let bottom = cursor + gap;
        intervals.insert(label, (bottom, bottom + h));
        cursor = bottom + h;
    }
    cursor = 0.0;
    for label in ["sacrum", "pelvis"] {
        let h = spec.size_for(label)[2];
        let top = cursor - gap;
        intervals.insert(label, (top - h, top));
        cursor = top - h;
    }

    // corner pattern, counter-clockwise seen from above: (depth, width)
    const RING: [(f64, f64); 4] = [(-1.0, -1.0), (1.0, -1.0), (1.0, 1.0), (-1.0, 1.0)];
    let mut vertebrae = Vec::with_capacity(ANATOMICAL_ORDER.len());
    for label in ANATOMICAL_ORDER {
        let (s_lo, s_hi) = intervals[label];
        let [width, depth, _] = spec.size_for(label);
        let mut corners = [Point3::origin(); 8];
        for (plate, s) in [(0, s_lo), (4, s_hi)] {
            let rot = arc.rotation(s);
            let centre = arc.position(s);
            let anterior = rot * Vector3::x();
            let left = rot * Vector3::y();
            for (i, (da, dl)) in RING.iter().enumerate() {
                corners[plate + i] = centre + anterior * (da * depth / 2.0) + left * (dl * width / 2.0);
            }
        }
        vertebrae.push(Vertebra {
            label: label.to_string(),
            mesh: hexahedron(corners)?,
            inferior_endplate: vec![0, 1, 2, 3],
            superior_endplate: vec![4, 5, 6, 7],
        });
    }
    SpineModel::new(vertebrae, BodyFrame::canonical())
}

/// How the scan differs from the reference anatomy.
#[derive(Debug, Clone)]
pub struct PerturbConfig {
    /// Frame change applied to the whole column (body → scan).
    pub transform: SimilarityTransform,
    /// Rigid translation of the pelvic unit before the frame change, in
    /// body components `[anterior, left, superior]`, mm.
    pub handle_offset: Vector3<f64>,
    /// Pitch of the pelvic unit about its centroid (about `left`),
    /// degrees; blended up the lumbar chain with halving weights so the
    /// column stays connected.
    pub posture_pitch_deg: f64,
    /// Standard deviation of the landmark measurement noise, mm.
    pub noise_sigma_mm: f64,
    pub seed: u64,
}

impl Default for PerturbConfig {
    fn default() -> Self {
        PerturbConfig {
            transform: SimilarityTransform::identity(),
            handle_offset: Vector3::zeros(),
            posture_pitch_deg: 0.0,
            noise_sigma_mm: 0.0,
            seed: 0,
        }
    }
}

/// Everything needed to score a reconstruction of the perturbed scan.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GroundTruth {
    /// Sagittal L1-superior / L5-inferior angle of the column in the scanned
    /// posture (after the postural bend; the similarity map cannot change it).
    pub theta_gt_deg: f64,
    pub transform: SimilarityTransform,
    pub handle_offset: [f64; 3],
    pub posture_pitch_deg: f64,
    pub noise_sigma_mm: f64,
    pub seed: u64,
}

impl GroundTruth {
    pub fn save(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string_pretty(self).expect("ground truth serialises");
        fs::write(path, text).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<GroundTruth> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        serde_json::from_str(&text)
            .map_err(|e| Error::parse(path, byte_offset(&text, e.line(), e.column()), e.to_string()))
    }
}

/// A simulated scan: the column in the scan frame, plus body-side
/// landmark measurements and the record of what was done.
#[derive(Debug, Clone)]
pub struct Perturbed {
    pub spine: SpineModel,
    pub landmarks: LandmarkSet,
    pub truth: GroundTruth,
}

/// Weight of the posture motion per label: the pelvic unit moves rigidly,
/// the lower lumbar levels follow with halving weights, everything above
/// L2 stays put.
fn posture_weight(label: &str) -> f64 {
    match label {
        "pelvis" | "sacrum" => 1.0,
        "L5" => 0.5,
        "L4" => 0.25,
        "L3" => 0.125,
        "L2" => 0.0625,
        _ => 0.0,
    }
}

/// Simulates scanning `spine` under `config`: the pelvic unit is moved
/// (offset plus pitch, blended up the lumbar chain), the whole column is
/// mapped through the similarity transform, and noisy body-side landmark
/// measurements are drawn with `seed`. With the identity transform, zero
/// offset, zero pitch and zero noise the output equals the input exactly.
pub fn perturb(spine: &SpineModel, config: &PerturbConfig) -> Result<Perturbed> {
    config.transform.validate()?;
    if !config.handle_offset.iter().all(|v| v.is_finite()) {
        return Err(Error::Parameter("handle_offset is not finite".into()));
    }
    if !config.posture_pitch_deg.is_finite() || config.posture_pitch_deg.abs() >= 90.0 {
        return Err(Error::Parameter(format!(
            "posture_pitch_deg must lie in (-90, 90), got {}",
            config.posture_pitch_deg
        )));
    }
    if !config.noise_sigma_mm.is_finite() || config.noise_sigma_mm < 0.0 {
        return Err(Error::Parameter(format!(
            "noise_sigma_mm must be non-negative, got {}",
            config.noise_sigma_mm
        )));
    }
    let frame = *spine.frame();
    let offset_world = frame.anterior * config.handle_offset.x
        + frame.left * config.handle_offset.y
        + frame.superior * config.handle_offset.z;
    let pitch = config.posture_pitch_deg.to_radians();

    let bent = if pitch == 0.0 && offset_world == Vector3::zeros() {
        spine.clone()
    } else {
        let mut unit_points = Vec::new();
        for label in ANCHOR_LABELS {
            unit_points.extend_from_slice(spine.get(label)?.mesh.vertices());
        }
        let centre = unit_points
            .iter()
            .fold(Vector3::zeros(), |acc, p| acc + p.coords)
            / unit_points.len() as f64;
        let centre = Point3::from(centre);
        let axis = Unit::new_normalize(frame.left);
        let vertebrae = spine
            .vertebrae()
            .iter()
            .map(|v| {
                let w = posture_weight(&v.label);
                let mesh = if w == 0.0 {
                    v.mesh.clone()
                } else {
                    let rot = Rotation3::from_axis_angle(&axis, w * pitch);
                    let moved = v
                        .mesh
                        .vertices()
                        .iter()
                        .map(|p| centre + rot * (p - centre) + offset_world * w)
                        .collect();
                    v.mesh.with_positions(moved)?
                };
                Ok(Vertebra {
                    label: v.label.clone(),
                    mesh,
                    superior_endplate: v.superior_endplate.clone(),
                    inferior_endplate: v.inferior_endplate.clone(),
                })
            })
            .collect::<Result<Vec<_>>>()?;
        SpineModel::new(vertebrae, frame)?
    };

    // Ground truth is the lumbar angle in the scanned posture: posture change is
    // part of the subject, not of the measurement chain under test.
    let theta_gt_deg = bent
        .cobb_angle(
            ("L1", EndplateSide::Superior),
            ("L5", EndplateSide::Inferior),
            MeasurementPlane::Sagittal,
        )?
        .angle_deg;

    let scanned = if config.transform.is_identity() {
        bent
    } else {
        bent.transformed(&config.transform)
    };

    let sigma = if config.noise_sigma_mm > 0.0 {
        config.noise_sigma_mm
    } else {
        1.0
    };
    let names: Vec<String> = DEFAULT_LANDMARKS.iter().map(|s| s.to_string()).collect();
    let mut landmarks = scanned.landmark_set(&names, "scan", sigma)?;
    if config.noise_sigma_mm > 0.0 {
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        for lm in &mut landmarks.landmarks {
            for i in 0..3 {
                let z: f64 = rng.sample(StandardNormal);
                lm.position[i] += config.noise_sigma_mm * z;
            }
        }
    }

    Ok(Perturbed {
        spine: scanned,
        landmarks,
        truth: GroundTruth {
            theta_gt_deg,
            transform: config.transform,
            handle_offset: [
                config.handle_offset.x,
                config.handle_offset.y,
                config.handle_offset.z,
            ],
            posture_pitch_deg: config.posture_pitch_deg,
            noise_sigma_mm: config.noise_sigma_mm,
            seed: config.seed,
        },
    })
}

/// Deformation handles pinning the listed vertebrae of a scan to their
/// positions in `reference`, keyed by combined-mesh vertex index. Both
/// models must share topology (the scan is a perturbed copy of the
/// reference).
pub fn anchor_handles(
    reference: &SpineModel,
    labels: &[&str],
) -> Result<BTreeMap<usize, Point3<f64>>> {
    let (positions, ranges) = reference.combined_positions();
    let order = reference.labels();
    let mut handles = BTreeMap::new();
    for label in labels {
        let idx = order
            .iter()
            .position(|l| l == label)
            .ok_or_else(|| Error::Lookup(format!("no vertebra labelled {label:?}")))?;
        for i in ranges[idx].clone() {
            handles.insert(i, positions[i]);
        }
    }
    Ok(handles)
}
