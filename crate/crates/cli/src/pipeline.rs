//! One method arm end to end: align the reference model to the scan, refine
//! the anchored region, measure the lumbar angle, write every artifact.

use std::fs;
use std::path::{Path, PathBuf};

use spinefuse_core::arap::{arap_deform_graph, load_handles, ArapConfig};
use spinefuse_core::mesh::VertexWeights;
use spinefuse_core::registration::{
    coarse_register, icp_register, IcpConfig, LandmarkSet, RegistrationReport,
};
use spinefuse_core::spine::{CobbMeasurement, EndplateSide, MeasurementPlane, SpineModel};
use spinefuse_core::synth::GroundTruth;

use crate::cli::{Method, PipelineArgs, Subset};
use crate::stages::{write_json, ArapSummary};
use crate::{io_err, CliError};

/// Sweep budget of the fine stage. The anchors pull the lower column onto
/// the scan within a few sweeps; a much longer relaxation lets the
/// unconstrained upper column drift after them into a whole-body rigid
/// motion that erases the postural correction the anchors encode, so the
/// refinement is deliberately short.
pub const FINE_SWEEPS: usize = 10;

/// File-level inputs and knobs of one pipeline run.
#[derive(Debug, Clone)]
pub struct PipelineConfig {
    /// Reference spine model directory.
    pub model_dir: PathBuf,
    /// Scan landmarks (ours, feature-only).
    pub landmarks: Option<PathBuf>,
    /// Anchor targets on the scan (ours, icp-arap).
    pub handles: Option<PathBuf>,
    /// Scan model directory (icp-arap).
    pub scan_model_dir: Option<PathBuf>,
    pub method: Method,
    pub subset: Subset,
    pub seed: u64,
    /// Fine-stage configuration (deforming arms only).
    pub arap: ArapConfig,
    /// Optional ground truth; adds the error to the run report.
    pub truth: Option<PathBuf>,
    pub out: PathBuf,
}

impl PipelineConfig {
    pub fn from_args(args: &PipelineArgs) -> PipelineConfig {
        PipelineConfig {
            model_dir: args.model.clone(),
            landmarks: args.landmarks.clone(),
            handles: args.handles.clone(),
            scan_model_dir: args.scan_model.clone(),
            method: args.method,
            subset: args.subset.clone(),
            seed: args.seed,
            arap: ArapConfig {
                max_iters: args.iters,
                energy_rel_tol: args.tol,
                ..ArapConfig::default()
            },
            truth: args.truth.clone(),
            out: args.out.clone(),
        }
    }
}

/// What a run measured, echoed into `pipeline_report.json`.
#[derive(Debug, Clone, serde::Serialize, serde::Deserialize)]
pub struct PipelineOutcome {
    pub method: String,
    pub subset: String,
    pub seed: u64,
    pub measured_deg: f64,
    pub flagged: bool,
    pub registration_rms_mm: f64,
    pub theta_gt_deg: Option<f64>,
    pub abs_error_deg: Option<f64>,
    pub arap: Option<ArapSummary>,
}

/// The clinical default: lumbar angle from the superior border of L1 to the
/// inferior border of L5, in the sagittal projection.
pub fn lumbar_angle(model: &SpineModel) -> spinefuse_core::Result<CobbMeasurement> {
    model.cobb_angle(
        ("L1", EndplateSide::Superior),
        ("L5", EndplateSide::Inferior),
        MeasurementPlane::Sagittal,
    )
}

fn required<'a>(path: &'a Option<PathBuf>, flag: &str, method: Method) -> Result<&'a Path, CliError> {
    path.as_deref().ok_or_else(|| {
        CliError::Input(format!(
            "--{flag} is required for method {}",
            method.id()
        ))
    })
}

/// Runs one method arm, writing `transform.json`, `registration_report.json`,
/// `aligned/`, and for the deforming arms `fused/` plus `energy_trace.csv`,
/// then `cobb.json` and `pipeline_report.json`.
pub fn run_pipeline(config: &PipelineConfig) -> Result<PipelineOutcome, CliError> {
    let out = &config.out;
    fs::create_dir_all(out).map_err(|e| io_err(out, e))?;
    let model = SpineModel::load(&config.model_dir)?;

    let registration: RegistrationReport = match config.method {
        Method::Ours | Method::FeatureOnly => {
            let path = required(&config.landmarks, "landmarks", config.method)?;
            let target = LandmarkSet::load(path)?;
            let source = model.landmark_set(&target.names(), "model", 1.0)?;
            coarse_register(&source, &target, &config.subset.names())?
        }
        Method::IcpArap => {
            let dir = required(&config.scan_model_dir, "scan-model", config.method)?;
            let scan = SpineModel::load(dir)?;
            icp_register(
                model.combined_mesh().vertices(),
                &scan.combined_mesh(),
                &IcpConfig::default(),
            )?
        }
    };
    write_json(&out.join("transform.json"), &registration.transform)?;
    write_json(&out.join("registration_report.json"), &registration)?;

    let aligned = model.transformed(&registration.transform);
    aligned.save(&out.join("aligned"))?;

    let (measured_model, arap_summary) = match config.method {
        Method::FeatureOnly => (aligned, None),
        Method::Ours | Method::IcpArap => {
            let path = required(&config.handles, "handles", config.method)?;
            let handles = load_handles(path)?;
            let (rest, adjacency) = aligned.deform_graph()?;
            let weights = VertexWeights::uniform_for_graph(&adjacency);
            let result = arap_deform_graph(&rest, &adjacency, &weights, &handles, &config.arap)?;
            let trace = out.join("energy_trace.csv");
            fs::write(&trace, result.trace_csv()).map_err(|e| io_err(&trace, e))?;
            let fused = aligned.with_combined_positions(&result.positions)?;
            fused.save(&out.join("fused"))?;
            (fused, Some(ArapSummary::of(&result)))
        }
    };

    let measurement = lumbar_angle(&measured_model)?;
    write_json(&out.join("cobb.json"), &measurement)?;

    let (theta_gt_deg, abs_error_deg) = match &config.truth {
        Some(path) => {
            let truth = GroundTruth::load(path)?;
            (
                Some(truth.theta_gt_deg),
                Some((measurement.angle_deg - truth.theta_gt_deg).abs()),
            )
        }
        None => (None, None),
    };

    let outcome = PipelineOutcome {
        method: config.method.id().to_string(),
        subset: config.subset.id().to_string(),
        seed: config.seed,
        measured_deg: measurement.angle_deg,
        flagged: measurement.flagged,
        registration_rms_mm: registration.rms_mm,
        theta_gt_deg,
        abs_error_deg,
        arap: arap_summary,
    };
    write_json(&out.join("pipeline_report.json"), &outcome)?;
    Ok(outcome)
}

pub fn run_pipeline_verb(args: &PipelineArgs) -> Result<(), CliError> {
    let outcome = run_pipeline(&PipelineConfig::from_args(args))?;
    println!(
        "method = {}, subset = {}, measured_deg = {}",
        outcome.method, outcome.subset, outcome.measured_deg
    );
    if let Some(err) = outcome.abs_error_deg {
        println!("abs_error_deg = {err}");
    }
    println!("wrote {}", args.out.display());
    Ok(())
}
