//! Report files for a finished suite.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use thiserror::Error;

use super::{SuiteMetrics, SuiteResult, RECOVERABLE};

#[derive(Debug, Error)]
pub enum ReportError {
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: {source}")]
    Csv {
        path: String,
        #[source]
        source: csv::Error,
    },
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> ReportError + '_ {
    move |source| ReportError::Io {
        path: path.display().to_string(),
        source,
    }
}

fn csv_err(path: &Path) -> impl FnOnce(csv::Error) -> ReportError + '_ {
    move |source| ReportError::Csv {
        path: path.display().to_string(),
        source,
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ReportPaths {
    pub metrics: PathBuf,
    pub trials: PathBuf,
    pub transitions: PathBuf,
    pub plot_data: PathBuf,
}

impl ReportPaths {
    pub fn in_dir(dir: &Path) -> Self {
        Self {
            metrics: dir.join("metrics.json"),
            trials: dir.join("trials.csv"),
            transitions: dir.join("transitions.csv"),
            plot_data: dir.join("success_rates.dat"),
        }
    }
}

/// Deterministic pretty JSON of the metrics, newline terminated.
pub fn metrics_json(metrics: &SuiteMetrics) -> String {
    let mut s = serde_json::to_string_pretty(metrics).expect("metrics serialize");
    s.push('\n');
    s
}

pub fn emit_reports(result: &SuiteResult, dir: &Path) -> Result<ReportPaths, ReportError> {
    fs::create_dir_all(dir).map_err(io_err(dir))?;
    let paths = ReportPaths::in_dir(dir);
    fs::write(&paths.metrics, metrics_json(&result.metrics)).map_err(io_err(&paths.metrics))?;
    write_trials(result, &paths.trials)?;
    write_transitions(&result.metrics, &paths.transitions)?;
    write_plot_data(std::slice::from_ref(&result.metrics), &paths.plot_data)?;
    Ok(paths)
}

fn write_trials(result: &SuiteResult, path: &Path) -> Result<(), ReportError> {
    let mut w = csv::Writer::from_path(path).map_err(csv_err(path))?;
    let mut header = vec![
        "index", "trial_id", "seed", "grasp_angle_deg", "hole_shift", "friction_factor", "success_f", "success_g",
        "timed_out", "aborted",
    ];
    let exec: Vec<String> = crate::scene::ContactFormation::ALL
        .iter()
        .map(|cf| format!("exec_{}", cf.name()))
        .collect();
    header.extend(exec.iter().map(String::as_str));
    header.extend(["recovery_invocations", "fallbacks", "final_depth", "transitions"]);
    w.write_record(&header).map_err(csv_err(path))?;
    for t in &result.trials {
        let mut row = vec![
            t.index.to_string(),
            t.trial_id.clone(),
            t.seed.to_string(),
            t.draws.grasp_angle_deg.to_string(),
            t.draws.hole_shift.to_string(),
            t.draws.friction_factor.to_string(),
            t.framework_success.to_string(),
            t.ground_truth_success.to_string(),
            t.timed_out.to_string(),
            t.aborted.clone().unwrap_or_default(),
        ];
        row.extend(t.executions.iter().map(u32::to_string));
        row.push(t.recovery_invocations.to_string());
        row.push(t.fallbacks.to_string());
        row.push(t.final_depth.to_string());
        row.push(
            t.transitions
                .iter()
                .map(|(a, b)| format!("{}>{}", a.name(), b.name()))
                .collect::<Vec<_>>()
                .join(" "),
        );
        w.write_record(&row).map_err(csv_err(path))?;
    }
    w.flush().map_err(io_err(path))
}

fn write_transitions(m: &SuiteMetrics, path: &Path) -> Result<(), ReportError> {
    let mut w = csv::Writer::from_path(path).map_err(csv_err(path))?;
    let names: Vec<&str> = RECOVERABLE.iter().map(|c| c.name()).collect();
    let mut header = vec!["from".to_string()];
    header.extend(names.iter().map(|n| format!("to_{n}_pct")));
    header.extend(names.iter().map(|n| format!("to_{n}_count")));
    w.write_record(&header).map_err(csv_err(path))?;
    for (i, name) in names.iter().enumerate() {
        let mut row = vec![name.to_string()];
        row.extend(m.transition_matrix[i].iter().map(|v| format!("{v:.3}")));
        row.extend(m.transition_counts[i].iter().map(u32::to_string));
        w.write_record(&row).map_err(csv_err(path))?;
    }
    w.flush().map_err(io_err(path))
}

/// Whitespace-separated table readable by gnuplot (`using 4:5`) and most plotting tools.
pub fn write_plot_data(metrics: &[SuiteMetrics], path: &Path) -> Result<(), ReportError> {
    let mut f = fs::File::create(path).map_err(io_err(path))?;
    let mut text = String::from("# shape condition recovery success_f success_g trials\n");
    for m in metrics {
        text.push_str(&format!(
            "{} {} {} {:.3} {:.3} {}\n",
            m.shape, m.condition, m.recovery, m.success_f, m.success_g, m.trials
        ));
    }
    f.write_all(text.as_bytes()).map_err(io_err(path))
}
