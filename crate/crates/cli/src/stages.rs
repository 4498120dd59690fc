//! Stage verbs: each one reads files, runs a single library operation and
//! writes its artifacts, so a pipeline can be resumed from any point.

use std::fs;
use std::path::{Path, PathBuf};

use nalgebra::{Matrix3, Rotation3, Unit, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use spinefuse_core::arap::{arap_deform_graph, load_handles, save_handles, ArapConfig};
use spinefuse_core::mesh::{load_mesh, save_obj, VertexWeights};
use spinefuse_core::registration::{coarse_register, LandmarkSet};
use spinefuse_core::transform::SimilarityTransform;
use spinefuse_core::skinfit::{fit_surface, resolve_fixed_pairs, SkinFitConfig};
use spinefuse_core::spine::{MeasurementPlane, SpineModel};
use spinefuse_core::synth::{
    anchor_handles, make_spine, perturb, PerturbConfig, SynthSpec, ANCHOR_LABELS,
    DEFAULT_LANDMARKS,
};

use crate::cli::{ArapArgs, CoarseArgs, CobbArgs, SkinfitArgs, SynthArgs};
use crate::{io_err, CliError};

/// Paths of one materialised synthetic case.
pub struct CasePaths {
    pub model_dir: PathBuf,
    pub scan_dir: PathBuf,
    /// Landmarks measured on the scan (noisy).
    pub landmarks: PathBuf,
    /// The model's own landmark set, for stage-wise registration runs.
    pub model_landmarks: PathBuf,
    pub handles: PathBuf,
    pub truth: PathBuf,
    /// Ground-truth angle of the scanned posture, degrees.
    pub theta_gt_deg: f64,
}

/// Generates a case and writes the artifacts every later stage needs:
/// the clean model, the perturbed scan, its landmarks, anchor handle
/// targets taken from the scan, and the ground truth.
pub fn materialize_case(
    spec: &SynthSpec,
    config: &PerturbConfig,
    dir: &Path,
) -> Result<CasePaths, CliError> {
    let model = make_spine(spec)?;
    let scanned = perturb(&model, config)?;

    fs::create_dir_all(dir).map_err(|e| io_err(dir, e))?;
    let paths = CasePaths {
        model_dir: dir.join("model"),
        scan_dir: dir.join("scan"),
        landmarks: dir.join("landmarks.json"),
        model_landmarks: dir.join("model_landmarks.json"),
        handles: dir.join("handles.json"),
        truth: dir.join("truth.json"),
        theta_gt_deg: scanned.truth.theta_gt_deg,
    };
    model.save(&paths.model_dir)?;
    scanned.spine.save(&paths.scan_dir)?;
    scanned.landmarks.save(&paths.landmarks)?;
    let names: Vec<String> = DEFAULT_LANDMARKS.iter().map(|s| s.to_string()).collect();
    model
        .landmark_set(&names, "model", 1.0)?
        .save(&paths.model_landmarks)?;
    let handles = anchor_handles(&scanned.spine, &ANCHOR_LABELS)?;
    save_handles(&handles, &paths.handles)?;
    scanned.truth.save(&paths.truth)?;
    Ok(paths)
}

/// Builds the similarity map of a synthetic scan: the axis is drawn from the
/// seed (stream 1, so it never collides with the landmark-noise stream), the
/// magnitudes are explicit.
pub fn scan_similarity(
    rot_deg: f64,
    scale: f64,
    translate: [f64; 3],
    seed: u64,
) -> SimilarityTransform {
    let rotation: Matrix3<f64> = if rot_deg == 0.0 {
        Matrix3::identity()
    } else {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(1);
        let axis = Unit::new_normalize(Vector3::new(
            rng.random_range(-1.0..1.0),
            rng.random_range(-1.0..1.0),
            rng.random_range(-1.0..1.0),
        ));
        *Rotation3::from_axis_angle(&axis, rot_deg.to_radians()).matrix()
    };
    SimilarityTransform {
        scale,
        rotation,
        translation: Vector3::new(translate[0], translate[1], translate[2]),
    }
}

pub fn run_synth(args: &SynthArgs) -> Result<(), CliError> {
    let spec = SynthSpec {
        theta_gt_deg: args.theta,
        coronal_arc_deg: args.coronal,
        noise_sigma_mm: args.noise,
        seed: args.seed,
        ..SynthSpec::default()
    };
    let config = PerturbConfig {
        transform: scan_similarity(args.rot, args.scale, args.translate, args.seed),
        handle_offset: Vector3::new(args.offset[0], args.offset[1], args.offset[2]),
        posture_pitch_deg: args.pitch,
        noise_sigma_mm: args.noise,
        seed: args.seed,
    };
    let paths = materialize_case(&spec, &config, &args.out)?;
    println!("theta_gt_deg = {}", paths.theta_gt_deg);
    println!("wrote {}", args.out.display());
    Ok(())
}

pub fn run_coarse(args: &CoarseArgs) -> Result<(), CliError> {
    let source = LandmarkSet::load(&args.source)?;
    let target = LandmarkSet::load(&args.target)?;
    let report = coarse_register(&source, &target, &args.subset.names())?;

    fs::create_dir_all(&args.out).map_err(|e| io_err(&args.out, e))?;
    write_json(&args.out.join("transform.json"), &report.transform)?;
    write_json(&args.out.join("coarse_report.json"), &report)?;
    println!("rms_mm = {}", report.rms_mm);
    println!("wrote {}", args.out.display());
    Ok(())
}

pub fn run_arap(args: &ArapArgs) -> Result<(), CliError> {
    let model = SpineModel::load(&args.model)?;
    let model = match &args.transform {
        Some(path) => {
            let transform: SimilarityTransform = read_json(path)?;
            transform.validate()?;
            model.transformed(&transform)
        }
        None => model,
    };
    let handles = load_handles(&args.handles)?;
    let (rest, adjacency) = model.deform_graph()?;
    let weights = VertexWeights::uniform_for_graph(&adjacency);
    let config = ArapConfig {
        max_iters: args.iters,
        energy_rel_tol: args.tol,
        ..ArapConfig::default()
    };
    let result = arap_deform_graph(&rest, &adjacency, &weights, &handles, &config)?;
    let fused = model.with_combined_positions(&result.positions)?;

    fs::create_dir_all(&args.out).map_err(|e| io_err(&args.out, e))?;
    fused.save(&args.out.join("fused"))?;
    let trace = args.out.join("energy_trace.csv");
    fs::write(&trace, result.trace_csv()).map_err(|e| io_err(&trace, e))?;
    write_json(
        &args.out.join("arap_report.json"),
        &ArapSummary::of(&result),
    )?;
    println!(
        "iterations = {}, final_energy_mm2 = {}",
        result.iterations,
        result.energy_trace.last().copied().unwrap_or(f64::NAN)
    );
    println!("wrote {}", args.out.display());
    Ok(())
}

pub fn run_skinfit(args: &SkinfitArgs) -> Result<(), CliError> {
    let template = load_mesh(&args.template)?;
    let wrap = load_mesh(&args.wrap)?;
    let fixed = match (&args.template_landmarks, &args.wrap_landmarks) {
        (Some(on_template), Some(on_wrap)) => {
            let a = LandmarkSet::load(on_template)?;
            let b = LandmarkSet::load(on_wrap)?;
            resolve_fixed_pairs(&template, &a, &b)?
        }
        _ => Default::default(),
    };
    let config = SkinFitConfig {
        w_fit: args.w_fit,
        w_reg: args.w_reg,
        outer_iters: args.iters,
        margin_mm: args.margin,
        ..SkinFitConfig::default()
    };
    let result = fit_surface(&template, &wrap, &config, &fixed)?;

    fs::create_dir_all(&args.out).map_err(|e| io_err(&args.out, e))?;
    save_obj(&result.mesh, &args.out.join("fitted.obj"))?;
    let trace = args.out.join("energy_trace.csv");
    fs::write(&trace, result.trace_csv()).map_err(|e| io_err(&trace, e))?;

    let last = result.iterations.last();
    write_json(
        &args.out.join("skinfit_report.json"),
        &SkinfitSummary {
            iterations: result.iterations.len(),
            converged: result.converged,
            final_energy: last.map(|it| it.energy_after),
            final_fit_term: last.map(|it| it.fit_term),
            final_reg_term: last.map(|it| it.reg_term),
            final_collision_count: last.map(|it| it.collision_count),
        },
    )?;
    println!(
        "iterations = {}, collisions = {}",
        result.iterations.len(),
        last.map(|it| it.collision_count).unwrap_or(0)
    );
    println!("wrote {}", args.out.display());
    Ok(())
}

pub fn run_cobb(args: &CobbArgs) -> Result<(), CliError> {
    let model = SpineModel::load(&args.model)?;
    let plane = parse_plane(&args.plane)?;
    let measurement = model.cobb_angle(
        (&args.upper.label, args.upper.side),
        (&args.lower.label, args.lower.side),
        plane,
    )?;

    fs::create_dir_all(&args.out).map_err(|e| io_err(&args.out, e))?;
    write_json(&args.out.join("cobb.json"), &measurement)?;
    println!("angle_deg = {}", measurement.angle_deg);
    if measurement.flagged {
        println!("flagged = true");
    }
    Ok(())
}

pub(crate) fn parse_plane(s: &str) -> Result<MeasurementPlane, CliError> {
    match s {
        "sagittal" => Ok(MeasurementPlane::Sagittal),
        "coronal" => Ok(MeasurementPlane::Coronal),
        other => Err(CliError::Input(format!(
            "expected sagittal or coronal, got {other:?}"
        ))),
    }
}

pub(crate) fn write_json<T: serde::Serialize>(path: &Path, value: &T) -> Result<(), CliError> {
    let mut text = serde_json::to_string_pretty(value)
        .map_err(|e| CliError::Input(format!("cannot serialise {}: {e}", path.display())))?;
    text.push('\n');
    fs::write(path, text).map_err(|e| io_err(path, e))
}

pub(crate) fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T, CliError> {
    let text = fs::read_to_string(path).map_err(|e| io_err(path, e))?;
    serde_json::from_str(&text).map_err(|e| {
        CliError::Input(format!("parse error in {}: {e}", path.display()))
    })
}

#[derive(Debug, Clone, serde::Serialize, serde::Deserialize)]
pub struct ArapSummary {
    pub iterations: usize,
    pub converged: bool,
    pub initial_energy_mm2: f64,
    pub final_energy_mm2: f64,
}

impl ArapSummary {
    pub fn of(result: &spinefuse_core::arap::ArapResult) -> ArapSummary {
        ArapSummary {
            iterations: result.iterations,
            converged: result.converged,
            initial_energy_mm2: result.energy_trace.first().copied().unwrap_or(f64::NAN),
            final_energy_mm2: result.energy_trace.last().copied().unwrap_or(f64::NAN),
        }
    }
}

#[derive(serde::Serialize)]
struct SkinfitSummary {
    iterations: usize,
    converged: bool,
    final_energy: Option<f64>,
    final_fit_term: Option<f64>,
    final_reg_term: Option<f64>,
    final_collision_count: Option<usize>,
}
