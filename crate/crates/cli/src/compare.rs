//! Comparison batch: synthetic cases crossed with every method and landmark
//! subset, run concurrently, assembled into one deterministic report.
//!
//! All randomness flows from the single `--seed`: the master stream issues
//! one sub-seed per case, and each case derives its similarity map and its
//! landmark noise from that sub-seed alone, so any cell can be reproduced
//! in isolation.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use nalgebra::{Rotation3, Unit, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use spinefuse_core::arap::ArapConfig;
use spinefuse_core::transform::SimilarityTransform;
use spinefuse_core::synth::{PerturbConfig, SynthSpec};

use crate::cli::{CompareArgs, Method, Subset};
use crate::pipeline::{run_pipeline, PipelineConfig, PipelineOutcome};
use crate::report::{
    ArmSummary, BatteryParams, CaseRow, CellOutcome, CellStatus, ComparisonReport,
};
use crate::stages::materialize_case;
use crate::{io_err, CliError};

/// Grid column order: methods within the full subset, then within the
/// reduced one.
const GRID: [(Method, Subset); 6] = [
    (Method::Ours, Subset::Full),
    (Method::FeatureOnly, Subset::Full),
    (Method::IcpArap, Subset::Full),
    (Method::Ours, Subset::Reduced),
    (Method::FeatureOnly, Subset::Reduced),
    (Method::IcpArap, Subset::Reduced),
];

fn arm_id(method: Method, subset: &Subset) -> String {
    format!("{}-{}", method.id(), subset.id())
}

/// Number of cells allowed to run at once: `SPINEFUSE_THREADS` when set,
/// otherwise the machine's parallelism.
fn thread_cap() -> Result<usize, CliError> {
    match std::env::var("SPINEFUSE_THREADS") {
        Ok(v) => v.trim().parse::<usize>().ok().filter(|n| *n >= 1).ok_or_else(|| {
            CliError::Input(format!(
                "SPINEFUSE_THREADS must be a positive integer, got {v:?}"
            ))
        }),
        Err(std::env::VarError::NotPresent) => Ok(std::thread::available_parallelism()
            .map(|n| n.get())
            .unwrap_or(1)),
        Err(e) => Err(CliError::Input(format!("SPINEFUSE_THREADS: {e}"))),
    }
}

/// Draws one case's similarity map from its sub-seed stream.
fn draw_case_transform(
    rng: &mut ChaCha8Rng,
    max_rot_deg: f64,
    exact_rot_deg: Option<f64>,
) -> SimilarityTransform {
    let angle_deg = exact_rot_deg.unwrap_or_else(|| rng.random_range(0.0..=max_rot_deg));
    let axis = Unit::new_normalize(Vector3::new(
        rng.random_range(-1.0..1.0),
        rng.random_range(-1.0..1.0),
        rng.random_range(-1.0..1.0),
    ));
    SimilarityTransform {
        scale: rng.random_range(0.9..1.1),
        rotation: *Rotation3::from_axis_angle(&axis, angle_deg.to_radians()).matrix(),
        translation: Vector3::new(
            rng.random_range(-50.0..50.0),
            rng.random_range(-50.0..50.0),
            rng.random_range(-50.0..50.0),
        ),
    }
}

struct Job {
    row: usize,
    arm: String,
    config: PipelineConfig,
}

pub fn run_comparison(args: &CompareArgs, out: &Path) -> Result<ComparisonReport, CliError> {
    let arms: Vec<String> = GRID.iter().map(|(m, s)| arm_id(*m, s)).collect();

    // Phase 1, single-threaded: draw every case up front and materialise its
    // artifacts, so the parallel phase starts from files alone.
    let mut master = ChaCha8Rng::seed_from_u64(args.seed);
    let mut rows: Vec<CaseRow> = Vec::new();
    let mut jobs: Vec<Job> = Vec::new();
    for (ci, &theta) in args.thetas.0.iter().enumerate() {
        for rep in 0..args.reps {
            let case_seed: u64 = master.random();
            let case_id = format!("case{ci}-seed{rep}");
            let case_dir = out.join("cells").join(&case_id);

            let mut case_rng = ChaCha8Rng::seed_from_u64(case_seed);
            case_rng.set_stream(1);
            let spec = SynthSpec {
                theta_gt_deg: theta,
                noise_sigma_mm: args.noise,
                seed: case_seed,
                ..SynthSpec::default()
            };
            let config = PerturbConfig {
                transform: draw_case_transform(&mut case_rng, args.max_rot, args.exact_rot),
                handle_offset: Vector3::new(args.offset[0], args.offset[1], args.offset[2]),
                posture_pitch_deg: args.pitch,
                noise_sigma_mm: args.noise,
                seed: case_seed,
            };
            // A case that cannot even be generated still occupies its row:
            // every arm is recorded as failed and the batch moves on.
            let case = match materialize_case(&spec, &config, &case_dir.join("case")) {
                Ok(case) => case,
                Err(e) => {
                    let cell = CellOutcome {
                        status: CellStatus::Failed,
                        measured_deg: None,
                        abs_error_deg: None,
                        message: Some(e.to_string()),
                    };
                    rows.push(CaseRow {
                        case_id,
                        theta_gt_deg: theta,
                        cells: arms.iter().map(|a| (a.clone(), cell.clone())).collect(),
                    });
                    continue;
                }
            };

            for (method, subset) in &GRID {
                let arm = arm_id(*method, subset);
                jobs.push(Job {
                    row: rows.len(),
                    arm: arm.clone(),
                    config: PipelineConfig {
                        model_dir: case.model_dir.clone(),
                        landmarks: Some(case.landmarks.clone()),
                        handles: Some(case.handles.clone()),
                        scan_model_dir: Some(case.scan_dir.clone()),
                        method: *method,
                        subset: subset.clone(),
                        seed: case_seed,
                        arap: ArapConfig {
                            max_iters: args.iters,
                            energy_rel_tol: 1e-6,
                            ..ArapConfig::default()
                        },
                        truth: Some(case.truth.clone()),
                        out: case_dir.join(&arm),
                    },
                });
            }
            rows.push(CaseRow {
                case_id,
                theta_gt_deg: case.theta_gt_deg,
                cells: BTreeMap::new(),
            });
        }
    }

    // Phase 2: run the cells, at most `thread_cap` at a time. Each cell
    // writes only its own directory; the results vector keeps job order.
    let workers = thread_cap()?.min(jobs.len()).max(1);
    let next = AtomicUsize::new(0);
    let results: Mutex<Vec<Option<Result<PipelineOutcome, CliError>>>> =
        Mutex::new((0..jobs.len()).map(|_| None).collect());
    std::thread::scope(|scope| {
        for _ in 0..workers {
            scope.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::Relaxed);
                if i >= jobs.len() {
                    break;
                }
                let outcome = run_pipeline(&jobs[i].config);
                results.lock().unwrap()[i] = Some(outcome);
            });
        }
    });

    // Phase 3, single-threaded: assemble rows in job order.
    let results = results.into_inner().unwrap();
    for (job, result) in jobs.iter().zip(results) {
        let row = &mut rows[job.row];
        let cell = match result.expect("every job ran") {
            Ok(outcome) => CellOutcome {
                status: CellStatus::Ok,
                measured_deg: Some(outcome.measured_deg),
                abs_error_deg: Some((outcome.measured_deg - row.theta_gt_deg).abs()),
                message: None,
            },
            Err(e) => CellOutcome {
                status: CellStatus::Failed,
                measured_deg: None,
                abs_error_deg: None,
                message: Some(e.to_string()),
            },
        };
        row.cells.insert(job.arm.clone(), cell);
    }

    let summary: BTreeMap<String, ArmSummary> = ComparisonReport::summarise(&arms, &rows);
    Ok(ComparisonReport {
        params: BatteryParams {
            seed: args.seed,
            reps: args.reps,
            thetas_deg: args.thetas.0.clone(),
            noise_sigma_mm: args.noise,
            pitch_deg: args.pitch,
            offset_mm: args.offset,
            max_rot_deg: args.max_rot,
            exact_rot_deg: args.exact_rot,
            fine_sweeps: args.iters,
        },
        arms,
        rows,
        summary,
    })
}

pub fn run_compare_verb(args: &CompareArgs) -> Result<(), CliError> {
    fs::create_dir_all(&args.out).map_err(|e| io_err(&args.out, e))?;

    // --render: re-derive the CSV from an existing JSON report and stop.
    if let Some(json_path) = &args.render {
        let report = ComparisonReport::load(json_path)?;
        let csv = args.out.join("report.csv");
        fs::write(&csv, report.render_csv()).map_err(|e| io_err(&csv, e))?;
        println!("wrote {}", csv.display());
        return Ok(());
    }

    let report = run_comparison(args, &args.out)?;
    report.save(&args.out)?;
    let failed = report.failed_cells();
    let total = report.total_cells();
    println!("cells = {total}, failed = {failed}");
    println!("wrote {}", args.out.join("report.json").display());
    if failed > 0 {
        return Err(CliError::PartialBatch { failed, total });
    }
    Ok(())
}
