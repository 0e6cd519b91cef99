//! Report emission: a stable CSV schema plus a JSON mirror.

use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::experiment::MetricsReport;

/// Fixed column order; a golden-file test pins it.
pub const CSV_COLUMNS: [&str; 15] = [
    "task",
    "noise",
    "beta_or_psi",
    "n",
    "p",
    "one_plus_eps",
    "arm",
    "metric",
    "mean",
    "se",
    "sd",
    "alpha",
    "rho",
    "seed",
    "reps",
];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ReportFormat {
    Csv,
    Json,
}

impl ReportFormat {
    pub fn from_name(name: &str) -> Result<Self> {
        match name {
            "csv" => Ok(ReportFormat::Csv),
            "json" => Ok(ReportFormat::Json),
            _ => Err(Error::Config(format!("unknown report format: {name}"))),
        }
    }
}

/// One CSV row (or JSON record): a single arm of a single run.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ReportRow {
    pub task: String,
    pub noise: String,
    pub beta_or_psi: f64,
    pub n: usize,
    pub p: usize,
    pub one_plus_eps: f64,
    pub arm: String,
    pub metric: String,
    pub mean: f64,
    pub se: f64,
    pub sd: f64,
    pub alpha: Option<f64>,
    pub rho: f64,
    pub seed: u64,
    pub reps: usize,
}

pub fn report_rows(reports: &[MetricsReport]) -> Vec<ReportRow> {
    let mut rows = Vec::with_capacity(2 * reports.len());
    for r in reports {
        for arm in [&r.truncated, &r.untruncated] {
            rows.push(ReportRow {
                task: r.task.clone(),
                noise: r.noise.clone(),
                beta_or_psi: r.beta_or_psi,
                n: r.n,
                p: r.p,
                one_plus_eps: r.one_plus_eps,
                arm: arm.arm.clone(),
                metric: r.metric.clone(),
                mean: arm.mean,
                se: arm.se,
                sd: arm.sd,
                alpha: arm.alpha,
                rho: arm.rho,
                seed: r.seed,
                reps: r.reps,
            });
        }
    }
    rows
}

pub fn render_csv(rows: &[ReportRow]) -> String {
    let mut out = String::new();
    out.push_str(&CSV_COLUMNS.join(","));
    out.push('\n');
    for row in rows {
        let alpha = row.alpha.map_or_else(|| "".to_string(), |a| format!("{a}"));
        out.push_str(&format!(
            "{},{},{},{},{},{},{},{},{},{},{},{},{},{},{}\n",
            row.task,
            row.noise,
            row.beta_or_psi,
            row.n,
            row.p,
            row.one_plus_eps,
            row.arm,
            row.metric,
            row.mean,
            row.se,
            row.sd,
            alpha,
            row.rho,
            row.seed,
            row.reps
        ));
    }
    out
}

/// Write the report file in the requested format.
pub fn emit_report(reports: &[MetricsReport], format: ReportFormat, path: &Path) -> Result<()> {
    let rows = report_rows(reports);
    let mut file = std::fs::File::create(path)?;
    match format {
        ReportFormat::Csv => file.write_all(render_csv(&rows).as_bytes())?,
        ReportFormat::Json => {
            let text = serde_json::to_string_pretty(&rows)
                .map_err(|e| Error::Data(format!("json render: {e}")))?;
            file.write_all(text.as_bytes())?;
        }
    }
    Ok(())
}

/// Parse back a CSV report; used by the round-trip tests and by downstream
/// tooling that aggregates multiple runs.
pub fn parse_csv(text: &str) -> Result<Vec<ReportRow>> {
    let mut lines = text.lines();
    let header = lines.next().ok_or_else(|| Error::Data("empty report".into()))?;
    if header != CSV_COLUMNS.join(",") {
        return Err(Error::Data(format!("unexpected report header: {header}")));
    }
    let mut rows = Vec::new();
    for (k, line) in lines.enumerate() {
        if line.is_empty() {
            continue;
        }
        let cells: Vec<&str> = line.split(',').collect();
        if cells.len() != CSV_COLUMNS.len() {
            return Err(Error::CsvParse {
                line: k + 2,
                message: format!("expected {} cells, found {}", CSV_COLUMNS.len(), cells.len()),
            });
        }
        let parse_f = |s: &str, what: &str| -> Result<f64> {
            s.parse().map_err(|_| Error::CsvParse {
                line: k + 2,
                message: format!("bad {what}: '{s}'"),
            })
        };
        rows.push(ReportRow {
            task: cells[0].to_string(),
            noise: cells[1].to_string(),
            beta_or_psi: parse_f(cells[2], "beta_or_psi")?,
            n: parse_f(cells[3], "n")? as usize,
            p: parse_f(cells[4], "p")? as usize,
            one_plus_eps: parse_f(cells[5], "one_plus_eps")?,
            arm: cells[6].to_string(),
            metric: cells[7].to_string(),
            mean: parse_f(cells[8], "mean")?,
            se: parse_f(cells[9], "se")?,
            sd: parse_f(cells[10], "sd")?,
            alpha: if cells[11].is_empty() {
                None
            } else {
                Some(parse_f(cells[11], "alpha")?)
            },
            rho: parse_f(cells[12], "rho")?,
            seed: parse_f(cells[13], "seed")? as u64,
            reps: parse_f(cells[14], "reps")? as usize,
        });
    }
    Ok(rows)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::experiment::ArmStats;

    fn sample_report() -> MetricsReport {
        let arm = |name: &str, mean: f64, alpha: Option<f64>| ArmStats {
            arm: name.to_string(),
            values: vec![Some(mean)],
            mean,
            sd: 0.1,
            se: 0.05,
            diverged: 0,
            alpha,
            rho: 0.001,
        };
        MetricsReport {
            task: "logistic".into(),
            noise: "pareto".into(),
            beta_or_psi: 2.01,
            n: 200,
            p: 100,
            one_plus_eps: 2.0,
            metric: "l2_error".into(),
            truncated: arm("truncated", 0.4, Some(0.8)),
            untruncated: arm("untruncated", 0.6, None),
            seed: 7,
            reps: 20,
            wall_secs: 1.0,
            flagged_invalid: false,
            flag_reason: None,
        }
    }

    #[test]
    fn empty_report_is_header_only() {
        let text = render_csv(&report_rows(&[]));
        assert_eq!(text.trim_end(), CSV_COLUMNS.join(","));
    }

    #[test]
    fn one_run_is_two_rows() {
        let text = render_csv(&report_rows(&[sample_report()]));
        assert_eq!(text.trim_end().lines().count(), 3);
    }

    #[test]
    fn golden_schema() {
        // pins the exact column order
        assert_eq!(
            CSV_COLUMNS.join(","),
            "task,noise,beta_or_psi,n,p,one_plus_eps,arm,metric,mean,se,sd,alpha,rho,seed,reps"
        );
    }

    #[test]
    fn csv_round_trip() {
        let rows = report_rows(&[sample_report()]);
        let parsed = parse_csv(&render_csv(&rows)).unwrap();
        assert_eq!(parsed.len(), rows.len());
        for (a, b) in rows.iter().zip(parsed.iter()) {
            assert_eq!(a.task, b.task);
            assert_eq!(a.arm, b.arm);
            assert_eq!(a.mean, b.mean);
            assert_eq!(a.alpha, b.alpha);
            assert_eq!(a.reps, b.reps);
        }
    }

    #[test]
    fn json_mirrors_schema() {
        let rows = report_rows(&[sample_report()]);
        let text = serde_json::to_string(&rows).unwrap();
        let parsed: Vec<ReportRow> = serde_json::from_str(&text).unwrap();
        assert_eq!(parsed[0].task, "logistic");
        assert_eq!(parsed[1].arm, "untruncated");
    }
}
