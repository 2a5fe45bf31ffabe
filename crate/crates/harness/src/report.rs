//! JSON, CSV and markdown renderings of a [`MetricsReport`].

use std::fmt::Write as _;
use std::path::Path;
use std::str::FromStr;

use thiserror::Error;

use crate::experiment::{MetricsReport, RunReport, RunStatus, StepRow};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, clap::ValueEnum)]
pub enum Format {
    Json,
    Csv,
    #[default]
    Markdown,
}

impl FromStr for Format {
    type Err = ReportError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "json" => Ok(Self::Json),
            "csv" => Ok(Self::Csv),
            "markdown" | "md" => Ok(Self::Markdown),
            other => Err(ReportError::UnknownFormat(other.into())),
        }
    }
}

#[derive(Debug, Error)]
pub enum ReportError {
    #[error("unknown report format {0:?}")]
    UnknownFormat(String),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

const CSV_HEADER: [&str; 12] = [
    "repetition",
    "round",
    "status",
    "r1",
    "r2",
    "step",
    "server_seconds",
    "user_seconds",
    "server_bytes",
    "user_bytes",
    "user_bytes_mean",
    "messages",
];

fn status_text(status: &RunStatus) -> String {
    match status {
        RunStatus::Completed => "completed".into(),
        RunStatus::Failed { error } => format!("failed: {error}"),
    }
}

/// One row per step plus a totals row for every run.
fn render_csv(report: &MetricsReport) -> Result<String, ReportError> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(CSV_HEADER)?;
    for run in &report.runs {
        for row in run.steps.iter().chain([&run.total]) {
            w.write_record([
                run.repetition.to_string(),
                run.round.to_string(),
                status_text(&run.status),
                run.r1.to_string(),
                run.r2.to_string(),
                row.step.clone(),
                row.server_seconds.to_string(),
                row.user_seconds.to_string(),
                row.server_bytes.to_string(),
                row.user_bytes.to_string(),
                row.user_bytes_mean.to_string(),
                row.messages.to_string(),
            ])?;
        }
    }
    let bytes = w.into_inner().map_err(|e| e.into_error())?;
    Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
}

fn percent(r: f64) -> String {
    let p = r * 100.0;
    if (p - p.round()).abs() < 1e-9 {
        format!("{}%", p.round())
    } else {
        format!("{p:.1}%")
    }
}

fn cells(run: &RunReport, f: impl Fn(&StepRow) -> f64, digits: usize) -> String {
    run.steps
        .iter()
        .chain([&run.total])
        .map(|s| format!(" {:.*} |", digits, f(s)))
        .collect()
}

fn render_markdown(report: &MetricsReport) -> String {
    let mut out = String::new();
    let header = "| n | R1 | R2 | Role | Init | ComE | PoKE | PoKM | WAgg | Total |\n\
                  |---|----|----|------|------|------|------|------|------|-------|\n";
    let mb = |b: f64| b / 1e6;
    let tables: [(&str, [(&str, Box<dyn Fn(&StepRow) -> f64>); 2], usize); 2] = [
        (
            "Run time (s)",
            [
                ("User", Box::new(|s: &StepRow| s.user_seconds)),
                ("Server", Box::new(|s: &StepRow| s.server_seconds)),
            ],
            3,
        ),
        (
            "Communication (MB)",
            [
                ("User", Box::new(move |s: &StepRow| mb(s.user_bytes_mean))),
                ("Server", Box::new(move |s: &StepRow| mb(s.bytes() as f64))),
            ],
            4,
        ),
    ];
    for (title, roles, digits) in &tables {
        let _ = writeln!(out, "### {title}\n");
        out.push_str(header);
        for run in &report.runs {
            for (role, f) in roles {
                let _ = writeln!(
                    out,
                    "| {} | {} | {} | {role} |{}",
                    report.clients,
                    percent(run.r1),
                    percent(run.r2),
                    cells(run, f, *digits)
                );
            }
        }
        out.push('\n');
    }
    let notes: Vec<String> = report
        .runs
        .iter()
        .filter(|r| !r.completed() || !r.excluded.is_empty() || r.baseline.is_some())
        .map(|r| {
            let mut line = format!(
                "- run {} round {}: {}",
                r.repetition,
                r.round,
                status_text(&r.status)
            );
            if !r.excluded.is_empty() {
                let ids: Vec<String> = r
                    .excluded
                    .iter()
                    .map(|e| format!("{} ({})", e.id, e.reason))
                    .collect();
                let _ = write!(line, "; excluded {}", ids.join(", "));
            }
            if let Some(b) = &r.baseline {
                let _ = write!(
                    line,
                    "; vs baseline bytes x{:.3}, time x{:.3}",
                    b.bytes, b.seconds
                );
            }
            line
        })
        .collect();
    if !notes.is_empty() {
        out.push_str("### Notes\n\n");
        out.push_str(&notes.join("\n"));
        out.push('\n');
    }
    out
}

pub fn render(report: &MetricsReport, format: Format) -> Result<String, ReportError> {
    match format {
        Format::Json => Ok(serde_json::to_string_pretty(report)? + "\n"),
        Format::Csv => render_csv(report),
        Format::Markdown => Ok(render_markdown(report)),
    }
}

pub fn emit_report(report: &MetricsReport, format: Format, path: &Path) -> Result<(), ReportError> {
    std::fs::write(path, render(report, format)?)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn percentages() {
        assert_eq!(percent(0.1), "10%");
        assert_eq!(percent(0.0), "0%");
        assert_eq!(percent(0.125), "12.5%");
    }

    #[test]
    fn format_names() {
        assert_eq!("md".parse::<Format>().unwrap(), Format::Markdown);
        assert!("xml".parse::<Format>().is_err());
    }
}
