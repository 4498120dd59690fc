//! Comparison report: one row per synthetic case, one column per
//! method/subset arm, rendered as JSON and CSV.
//!
//! The CSV renderer recomputes every absolute error and the summary from the
//! measured values and the ground truth, so a report re-rendered from its
//! JSON is byte-identical to the one written by the original run.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use crate::stages::read_json;
use crate::{io_err, CliError};

/// Battery knobs, echoed into the report so a run is self-describing.
#[derive(Debug, Clone, serde::Serialize, serde::Deserialize)]
pub struct BatteryParams {
    pub seed: u64,
    pub reps: u32,
    pub thetas_deg: Vec<f64>,
    pub noise_sigma_mm: f64,
    pub pitch_deg: f64,
    pub offset_mm: [f64; 3],
    pub max_rot_deg: f64,
    pub exact_rot_deg: Option<f64>,
    pub fine_sweeps: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CellStatus {
    Ok,
    Failed,
}

/// One grid cell: a method/subset arm run on one case.
#[derive(Debug, Clone, serde::Serialize, serde::Deserialize)]
pub struct CellOutcome {
    pub status: CellStatus,
    pub measured_deg: Option<f64>,
    pub abs_error_deg: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub message: Option<String>,
}

#[derive(Debug, Clone, serde::Serialize, serde::Deserialize)]
pub struct CaseRow {
    pub case_id: String,
    pub theta_gt_deg: f64,
    pub cells: BTreeMap<String, CellOutcome>,
}

#[derive(Debug, Clone, serde::Serialize, serde::Deserialize)]
pub struct ArmSummary {
    pub mean_abs_error_deg: Option<f64>,
    pub max_abs_error_deg: Option<f64>,
    pub cells_ok: usize,
    pub cells_failed: usize,
}

#[derive(Debug, Clone, serde::Serialize, serde::Deserialize)]
pub struct ComparisonReport {
    pub params: BatteryParams,
    /// Column order of the grid.
    pub arms: Vec<String>,
    pub rows: Vec<CaseRow>,
    pub summary: BTreeMap<String, ArmSummary>,
}

impl ComparisonReport {
    pub fn failed_cells(&self) -> usize {
        self.summary.values().map(|s| s.cells_failed).sum()
    }

    pub fn total_cells(&self) -> usize {
        self.rows.len() * self.arms.len()
    }

    /// Recomputes the per-arm summary from the rows; used both when
    /// assembling a report and when rendering one, so the two never drift.
    pub fn summarise(arms: &[String], rows: &[CaseRow]) -> BTreeMap<String, ArmSummary> {
        let mut out = BTreeMap::new();
        for arm in arms {
            let mut errors = Vec::new();
            let mut failed = 0usize;
            for row in rows {
                match row.cells.get(arm) {
                    Some(cell) if cell.status == CellStatus::Ok => {
                        if let Some(m) = cell.measured_deg {
                            errors.push((m - row.theta_gt_deg).abs());
                        }
                    }
                    Some(_) => failed += 1,
                    None => {}
                }
            }
            let mean = (!errors.is_empty())
                .then(|| errors.iter().sum::<f64>() / errors.len() as f64);
            let max = errors.iter().copied().fold(None, |acc: Option<f64>, e| {
                Some(acc.map_or(e, |a| a.max(e)))
            });
            out.insert(
                arm.clone(),
                ArmSummary {
                    mean_abs_error_deg: mean,
                    max_abs_error_deg: max,
                    cells_ok: errors.len(),
                    cells_failed: failed,
                },
            );
        }
        out
    }

    /// Renders the grid as CSV: the case table, a blank line, then the
    /// per-arm summary table. Errors and the summary are recomputed from
    /// the measured values, not read back from the stored fields.
    pub fn render_csv(&self) -> String {
        let mut out = String::from("case_id,theta_gt_deg");
        for arm in &self.arms {
            let _ = write!(out, ",{arm}_measured_deg");
        }
        for arm in &self.arms {
            let _ = write!(out, ",{arm}_abs_error_deg");
        }
        out.push('\n');

        for row in &self.rows {
            let _ = write!(out, "{},{}", row.case_id, row.theta_gt_deg);
            for arm in &self.arms {
                match row.cells.get(arm).and_then(|c| c.measured_deg) {
                    Some(m) => {
                        let _ = write!(out, ",{m}");
                    }
                    None => out.push_str(",failed"),
                }
            }
            for arm in &self.arms {
                match row.cells.get(arm).and_then(|c| c.measured_deg) {
                    Some(m) => {
                        let _ = write!(out, ",{}", (m - row.theta_gt_deg).abs());
                    }
                    None => out.push(','),
                }
            }
            out.push('\n');
        }

        out.push('\n');
        out.push_str("arm,mean_abs_error_deg,max_abs_error_deg,cells_ok,cells_failed\n");
        let summary = Self::summarise(&self.arms, &self.rows);
        for arm in &self.arms {
            let s = &summary[arm];
            let _ = write!(out, "{arm}");
            match s.mean_abs_error_deg {
                Some(v) => {
                    let _ = write!(out, ",{v}");
                }
                None => out.push(','),
            }
            match s.max_abs_error_deg {
                Some(v) => {
                    let _ = write!(out, ",{v}");
                }
                None => out.push(','),
            }
            let _ = writeln!(out, ",{},{}", s.cells_ok, s.cells_failed);
        }
        out
    }

    pub fn save(&self, dir: &Path) -> Result<(), CliError> {
        crate::stages::write_json(&dir.join("report.json"), self)?;
        let csv = dir.join("report.csv");
        fs::write(&csv, self.render_csv()).map_err(|e| io_err(&csv, e))
    }

    pub fn load(path: &Path) -> Result<ComparisonReport, CliError> {
        read_json(path)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small_report() -> ComparisonReport {
        let arms = vec!["ours-full".to_string(), "feature-only-full".to_string()];
        let mut cells = BTreeMap::new();
        cells.insert(
            "ours-full".to_string(),
            CellOutcome {
                status: CellStatus::Ok,
                measured_deg: Some(31.25),
                abs_error_deg: Some(0.55),
                message: None,
            },
        );
        cells.insert(
            "feature-only-full".to_string(),
            CellOutcome {
                status: CellStatus::Failed,
                measured_deg: None,
                abs_error_deg: None,
                message: Some("boom".into()),
            },
        );
        let rows = vec![CaseRow {
            case_id: "case0-seed0".into(),
            theta_gt_deg: 31.8,
            cells,
        }];
        let summary = ComparisonReport::summarise(&arms, &rows);
        ComparisonReport {
            params: BatteryParams {
                seed: 7,
                reps: 1,
                thetas_deg: vec![31.8],
                noise_sigma_mm: 0.5,
                pitch_deg: 2.4,
                offset_mm: [10.0, 0.0, 0.0],
                max_rot_deg: 45.0,
                exact_rot_deg: None,
                fine_sweeps: 10,
            },
            arms,
            rows,
            summary,
        }
    }

    #[test]
    fn csv_recomputes_errors_from_measured_values() {
        let mut report = small_report();
        // corrupt the stored error; the CSV must not echo it
        report.rows[0].cells.get_mut("ours-full").unwrap().abs_error_deg = Some(99.0);
        let csv = report.render_csv();
        let err = (31.25f64 - 31.8).abs();
        assert!(csv.contains(&format!(",{err}")), "{csv}");
        assert!(!csv.contains("99"), "{csv}");
    }

    #[test]
    fn csv_marks_failed_cells_and_summarises_the_rest() {
        let report = small_report();
        let csv = report.render_csv();
        let mut lines = csv.lines();
        let header = lines.next().unwrap();
        assert_eq!(
            header,
            "case_id,theta_gt_deg,ours-full_measured_deg,feature-only-full_measured_deg,\
             ours-full_abs_error_deg,feature-only-full_abs_error_deg"
        );
        let row = lines.next().unwrap();
        assert!(row.starts_with("case0-seed0,31.8,31.25,failed,"), "{row}");
        assert!(csv.contains("feature-only-full,,,0,1"), "{csv}");

        let s = &report.summary["ours-full"];
        assert_eq!(s.cells_ok, 1);
        assert_eq!(s.mean_abs_error_deg, Some((31.25f64 - 31.8).abs()));
        assert_eq!(report.failed_cells(), 1);
        assert_eq!(report.total_cells(), 2);
    }

    #[test]
    fn json_round_trip_preserves_csv_bytes() {
        let report = small_report();
        let json = serde_json::to_string_pretty(&report).unwrap();
        let back: ComparisonReport = serde_json::from_str(&json).unwrap();
        assert_eq!(report.render_csv(), back.render_csv());
    }
}
