//! Report emission: CSV tables, JSON mirrors with the full config echo, and
//! two-column plot-data files.

use crate::error::{Error, Result};
use crate::harness::ScenarioReport;
use crate::io::ExperimentConfig;
use serde::{Deserialize, Serialize};
use std::io::Write;
use std::path::{Path, PathBuf};

/// Fixed column order: model, attack, scenario, target_acc, defense_acc_mean,
/// defense_acc_runs, n_images. Accuracies print as percentages with one
/// decimal; the runs column joins per-run percentages with ';'.
pub fn reports_to_csv(reports: &[ScenarioReport]) -> String {
    let mut out = String::from(
        "model,attack,scenario,target_acc,defense_acc_mean,defense_acc_runs,n_images\n",
    );
    for r in reports {
        let runs = r
            .defense_accuracy_runs
            .iter()
            .map(|a| format!("{:.1}", a * 100.0))
            .collect::<Vec<_>>()
            .join(";");
        out.push_str(&format!(
            "{},{},{},{:.1},{:.1},{},{}\n",
            r.model_id,
            r.attack_id,
            r.scenario_id,
            r.target_accuracy * 100.0,
            r.defense_accuracy_mean * 100.0,
            runs,
            r.n_images
        ));
    }
    out
}

#[derive(Debug, Serialize, Deserialize)]
pub struct ReportDocument {
    pub config: ExperimentConfig,
    pub reports: Vec<ScenarioReport>,
}

/// JSON mirror of the CSV with raw doubles and the resolved config echo.
pub fn reports_to_json(reports: &[ScenarioReport], config: &ExperimentConfig) -> Result<String> {
    let doc = ReportDocument {
        config: config.clone(),
        reports: reports.to_vec(),
    };
    serde_json::to_string_pretty(&doc).map_err(|e| Error::Format(format!("report json: {e}")))
}

/// Writes `<stem>.csv` and `<stem>.json` under `dir`.
pub fn write_report_files(
    dir: &Path,
    stem: &str,
    reports: &[ScenarioReport],
    config: &ExperimentConfig,
) -> Result<(PathBuf, PathBuf)> {
    std::fs::create_dir_all(dir)?;
    let csv_path = dir.join(format!("{stem}.csv"));
    let json_path = dir.join(format!("{stem}.json"));
    std::fs::write(&csv_path, reports_to_csv(reports))?;
    std::fs::write(&json_path, reports_to_json(reports, config)?)?;
    Ok((csv_path, json_path))
}

/// Two-column numeric text: one `x y` pair per line.
pub fn write_plot_data(path: &Path, points: &[(f64, f64)]) -> Result<()> {
    let mut file = std::io::BufWriter::new(std::fs::File::create(path)?);
    for (x, y) in points {
        writeln!(file, "{x} {y}")?;
    }
    file.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample_report() -> ScenarioReport {
        ScenarioReport {
            model_id: "m".into(),
            attack_id: "fgsm-0.0392".into(),
            scenario_id: "vanilla".into(),
            target_accuracy: 0.3315,
            defense_accuracy_mean: 0.65155,
            defense_accuracy_runs: vec![0.651, 0.6521],
            defense_correct_runs: vec![651, 652],
            defense_correct_bits: vec![vec![true; 3], vec![false; 3]],
            n_images: 1000,
            attack_failures: 0,
            timing_seconds: 1.25,
        }
    }

    #[test]
    fn csv_has_one_row_per_report_plus_header() {
        let csv = reports_to_csv(&[sample_report()]);
        let lines: Vec<&str> = csv.trim().lines().collect();
        assert_eq!(lines.len(), 2);
        assert_eq!(
            lines[0],
            "model,attack,scenario,target_acc,defense_acc_mean,defense_acc_runs,n_images"
        );
        assert_eq!(lines[1], "m,fgsm-0.0392,vanilla,33.2,65.2,65.1;65.2,1000");
    }

    #[test]
    fn csv_parse_back_recovers_values_within_formatting_precision() {
        let report = sample_report();
        let csv = reports_to_csv(&[report.clone()]);
        let row: Vec<&str> = csv.trim().lines().nth(1).unwrap().split(',').collect();
        let target: f64 = row[3].parse().unwrap();
        let mean: f64 = row[4].parse().unwrap();
        assert!((target / 100.0 - report.target_accuracy).abs() < 0.0005);
        assert!((mean / 100.0 - report.defense_accuracy_mean).abs() < 0.0005);
        let n: usize = row[6].parse().unwrap();
        assert_eq!(n, report.n_images);
    }

    #[test]
    fn json_round_trips_and_echoes_config() {
        let cfg = ExperimentConfig::default();
        let json = reports_to_json(&[sample_report()], &cfg).unwrap();
        let doc: ReportDocument = serde_json::from_str(&json).unwrap();
        assert_eq!(doc.config, cfg);
        assert_eq!(doc.reports.len(), 1);
        // Raw doubles preserved exactly in JSON.
        assert_eq!(doc.reports[0].target_accuracy, 0.3315);
        // Timing is runtime-only and never lands in files.
        assert_eq!(doc.reports[0].timing_seconds, 0.0);
        assert!(!json.contains("timing"));
    }

    #[test]
    fn plot_data_is_two_column_text() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("sweep.dat");
        write_plot_data(&path, &[(1.0, 0.97), (5.0, 0.975)]).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        assert_eq!(text, "1 0.97\n5 0.975\n");
    }
}
