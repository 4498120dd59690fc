//! Command-line surface: verbs, flags and the small parsers behind them.

use std::path::PathBuf;
use std::str::FromStr;

use clap::{Args, Parser, Subcommand, ValueEnum};
use spinefuse_core::spine::EndplateSide;

#[derive(Parser, Debug)]
#[command(
    name = "spinefuse",
    version,
    about = "Spine-model fusion and curvature measurement pipeline"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Generate a synthetic case: clean model, perturbed scan, landmarks,
    /// anchor handles and ground truth
    Synth(SynthArgs),
    /// Landmark-based similarity registration between two landmark sets
    Coarse(CoarseArgs),
    /// Handle-anchored deformation of a spine model
    Arap(ArapArgs),
    /// Fit a template surface to a wrap surface
    Skinfit(SkinfitArgs),
    /// Measure an endplate-to-endplate angle on a spine model
    Cobb(CobbArgs),
    /// Run one method arm end to end: register, refine, measure
    Pipeline(PipelineArgs),
    /// Run a batch of synthetic cases over all methods and landmark subsets
    Compare(CompareArgs),
}

/// Registration method arm.
#[derive(ValueEnum, Debug, Clone, Copy, PartialEq, Eq)]
pub enum Method {
    /// Landmark registration followed by anchored deformation
    Ours,
    /// Landmark registration alone
    FeatureOnly,
    /// Rigid closest-point registration followed by anchored deformation
    IcpArap,
}

impl Method {
    pub fn id(self) -> &'static str {
        match self {
            Method::Ours => "ours",
            Method::FeatureOnly => "feature-only",
            Method::IcpArap => "icp-arap",
        }
    }
}

/// The reduced landmark subset offered next to the full set.
pub const REDUCED_LANDMARKS: [&str; 3] = ["C1", "T7", "L5"];

/// Landmark subset selection: `full`, `reduced`, or `custom:<name,...>`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Subset {
    /// Every landmark common to both sets.
    Full,
    /// The three-point subset C1, T7, L5.
    Reduced,
    Custom(Vec<String>),
}

impl Subset {
    /// Names handed to the registration (empty means "all common").
    pub fn names(&self) -> Vec<String> {
        match self {
            Subset::Full => Vec::new(),
            Subset::Reduced => REDUCED_LANDMARKS.iter().map(|s| s.to_string()).collect(),
            Subset::Custom(names) => names.clone(),
        }
    }

    pub fn id(&self) -> &'static str {
        match self {
            Subset::Full => "full",
            Subset::Reduced => "reduced",
            Subset::Custom(_) => "custom",
        }
    }
}

impl FromStr for Subset {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "full" => Ok(Subset::Full),
            "reduced" => Ok(Subset::Reduced),
            _ => match s.strip_prefix("custom:") {
                Some(list) => {
                    let names: Vec<String> = list
                        .split(',')
                        .map(|n| n.trim().to_string())
                        .filter(|n| !n.is_empty())
                        .collect();
                    if names.len() < 3 {
                        return Err(format!(
                            "custom subset needs at least 3 landmark names, got {:?}",
                            names
                        ));
                    }
                    Ok(Subset::Custom(names))
                }
                None => Err(format!(
                    "expected full, reduced or custom:<name,name,...>, got {s:?}"
                )),
            },
        }
    }
}

/// One side of a measurement: `LABEL:superior` or `LABEL:inferior`.
#[derive(Debug, Clone, PartialEq)]
pub struct EndplateRef {
    pub label: String,
    pub side: EndplateSide,
}

impl FromStr for EndplateRef {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let (label, side) = s
            .split_once(':')
            .ok_or_else(|| format!("expected LABEL:superior or LABEL:inferior, got {s:?}"))?;
        let side = match side {
            "superior" => EndplateSide::Superior,
            "inferior" => EndplateSide::Inferior,
            other => return Err(format!("expected superior or inferior, got {other:?}")),
        };
        if label.is_empty() {
            return Err("empty vertebra label".into());
        }
        Ok(EndplateRef {
            label: label.to_string(),
            side,
        })
    }
}

pub fn parse_vec3(s: &str) -> Result<[f64; 3], String> {
    let parts: Vec<&str> = s.split(',').collect();
    if parts.len() != 3 {
        return Err(format!("expected x,y,z, got {s:?}"));
    }
    let mut out = [0.0; 3];
    for (slot, part) in out.iter_mut().zip(&parts) {
        *slot = part
            .trim()
            .parse::<f64>()
            .map_err(|e| format!("bad component {part:?}: {e}"))?;
    }
    Ok(out)
}

/// Comma-separated angle list; an empty string is an empty batch.
#[derive(Debug, Clone, PartialEq)]
pub struct AngleList(pub Vec<f64>);

impl FromStr for AngleList {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        if s.trim().is_empty() {
            return Ok(AngleList(Vec::new()));
        }
        s.split(',')
            .map(|p| {
                p.trim()
                    .parse::<f64>()
                    .map_err(|e| format!("bad angle {p:?}: {e}"))
            })
            .collect::<Result<Vec<f64>, String>>()
            .map(AngleList)
    }
}

#[derive(Args, Debug)]
pub struct SynthArgs {
    /// Output directory for the case artifacts
    #[arg(long)]
    pub out: PathBuf,
    /// Sagittal curvature of the generated column, degrees
    #[arg(long, default_value_t = 31.8)]
    pub theta: f64,
    /// Lateral bow of the generated column, degrees
    #[arg(long, default_value_t = 0.0)]
    pub coronal: f64,
    /// Postural pitch of the pelvic unit in the scan, degrees
    #[arg(long, default_value_t = 0.0, allow_negative_numbers = true)]
    pub pitch: f64,
    /// Pelvic-unit offset in the scan, body components anterior,left,superior mm
    #[arg(long, value_parser = parse_vec3, default_value = "0,0,0", allow_hyphen_values = true)]
    pub offset: [f64; 3],
    /// Landmark noise sigma, mm
    #[arg(long, default_value_t = 0.0)]
    pub noise: f64,
    /// Rotation magnitude of the scan's similarity map, degrees (axis from seed)
    #[arg(long, default_value_t = 0.0)]
    pub rot: f64,
    /// Uniform scale of the scan's similarity map
    #[arg(long, default_value_t = 1.0)]
    pub scale: f64,
    /// Translation of the scan's similarity map, mm
    #[arg(long, value_parser = parse_vec3, default_value = "0,0,0", allow_hyphen_values = true)]
    pub translate: [f64; 3],
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

#[derive(Args, Debug)]
pub struct CoarseArgs {
    /// Landmark set being moved (JSON)
    #[arg(long)]
    pub source: PathBuf,
    /// Landmark set being matched (JSON)
    #[arg(long)]
    pub target: PathBuf,
    #[arg(long, default_value = "full")]
    pub subset: Subset,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args, Debug)]
pub struct ArapArgs {
    /// Spine model directory (manifest + meshes)
    #[arg(long)]
    pub model: PathBuf,
    /// Similarity transform JSON applied before deforming
    #[arg(long)]
    pub transform: Option<PathBuf>,
    /// Handle file pinning combined-mesh vertices to targets
    #[arg(long)]
    pub handles: PathBuf,
    /// Local/global sweep budget
    #[arg(long, default_value_t = 100)]
    pub iters: usize,
    /// Relative energy-change stop tolerance
    #[arg(long, default_value_t = 1e-6)]
    pub tol: f64,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args, Debug)]
pub struct SkinfitArgs {
    /// Template surface being deformed (OBJ or PLY)
    #[arg(long)]
    pub template: PathBuf,
    /// Closed wrap surface being fitted to (OBJ or PLY)
    #[arg(long)]
    pub wrap: PathBuf,
    /// Landmarks on the template, paired by name with --wrap-landmarks
    #[arg(long, requires = "wrap_landmarks")]
    pub template_landmarks: Option<PathBuf>,
    /// Landmark targets on the wrap
    #[arg(long, requires = "template_landmarks")]
    pub wrap_landmarks: Option<PathBuf>,
    #[arg(long, default_value_t = 1.0)]
    pub w_fit: f64,
    #[arg(long, default_value_t = 1.0)]
    pub w_reg: f64,
    #[arg(long, default_value_t = 20)]
    pub iters: usize,
    /// Collision margin, mm
    #[arg(long, default_value_t = 0.0)]
    pub margin: f64,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args, Debug)]
pub struct CobbArgs {
    /// Spine model directory (manifest + meshes)
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long, default_value = "L1:superior")]
    pub upper: EndplateRef,
    #[arg(long, default_value = "L5:inferior")]
    pub lower: EndplateRef,
    /// Measurement plane: sagittal or coronal
    #[arg(long, default_value = "sagittal")]
    pub plane: String,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args, Debug)]
pub struct PipelineArgs {
    /// Reference spine model directory
    #[arg(long)]
    pub model: PathBuf,
    /// Scan landmark set (JSON); required for ours and feature-only
    #[arg(long)]
    pub landmarks: Option<PathBuf>,
    /// Handle file with scan anchor targets; required for ours and icp-arap
    #[arg(long)]
    pub handles: Option<PathBuf>,
    /// Scan model directory; required for icp-arap
    #[arg(long)]
    pub scan_model: Option<PathBuf>,
    #[arg(long, value_enum)]
    pub method: Method,
    #[arg(long, default_value = "full")]
    pub subset: Subset,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Fine-stage sweep budget
    #[arg(long, default_value_t = crate::pipeline::FINE_SWEEPS)]
    pub iters: usize,
    /// Fine-stage relative energy-change stop tolerance
    #[arg(long, default_value_t = 1e-6)]
    pub tol: f64,
    /// Ground-truth JSON; when given, the report includes the absolute error
    #[arg(long)]
    pub truth: Option<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args, Debug)]
pub struct CompareArgs {
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Seeds per case
    #[arg(long, default_value_t = 1)]
    pub reps: u32,
    /// Ground-truth curvatures of the generated cases, degrees
    #[arg(long, default_value = "31.8,25.6,22.5,38.2,33.5,28.1")]
    pub thetas: AngleList,
    /// Landmark noise sigma, mm
    #[arg(long, default_value_t = 0.5)]
    pub noise: f64,
    /// Postural pitch of the pelvic unit, degrees
    #[arg(long, default_value_t = 2.4, allow_negative_numbers = true)]
    pub pitch: f64,
    /// Pelvic-unit offset, body components anterior,left,superior mm
    #[arg(long, value_parser = parse_vec3, default_value = "10,0,0", allow_hyphen_values = true)]
    pub offset: [f64; 3],
    /// Rotation magnitude of each case's similarity map is drawn from [0, max-rot]
    #[arg(long, default_value_t = 45.0)]
    pub max_rot: f64,
    /// Pin every case's rotation magnitude to this value instead
    #[arg(long)]
    pub exact_rot: Option<f64>,
    /// Fine-stage sweep budget for the deforming arms
    #[arg(long, default_value_t = crate::pipeline::FINE_SWEEPS)]
    pub iters: usize,
    /// Re-render report.csv from an existing report.json instead of running a batch
    #[arg(long)]
    pub render: Option<PathBuf>,
}
