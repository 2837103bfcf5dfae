use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use super::config::{Approach, ExperimentConfig};
use crate::error::{Error, Result};
use crate::metrics::DistanceMetric;

/// Host description attached to every report; absolute seconds depend on it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnvironmentNote {
    pub os: String,
    pub arch: String,
    pub logical_cpus: usize,
    pub accelerator: String,
    pub note: String,
}

impl EnvironmentNote {
    pub fn current() -> Self {
        EnvironmentNote {
            os: std::env::consts::OS.to_string(),
            arch: std::env::consts::ARCH.to_string(),
            logical_cpus: std::thread::available_parallelism().map(|n| n.get()).unwrap_or(1),
            accelerator: "none (CPU only)".to_string(),
            note: "timings are specific to this host; compare ratios and sample counts, not absolute seconds".to_string(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ApproachReport {
    pub approach: Approach,
    /// Networks trained: C for the proposed approach, 1 otherwise.
    pub networks: usize,
    pub train_per_class: Vec<usize>,
    pub test_per_class: Vec<usize>,
    pub per_class_correct: Vec<usize>,
    pub accuracy_percent: f64,
    /// Sum of per-network training times.
    pub training_seconds_serial: f64,
    /// Elapsed time of the training stage as run.
    pub training_seconds_wall: f64,
    pub parallel_training: bool,
    pub minibatch_size: usize,
    pub epochs: usize,
    pub planned_iterations_per_net: Vec<usize>,
    pub iterations_per_net: Vec<usize>,
    pub total_iterations: usize,
    /// Training samples processed per epoch, summed over networks.
    pub samples_per_epoch: usize,
    pub early_stopped_networks: usize,
    pub mean_query_seconds: f64,
}

impl ApproachReport {
    pub fn correct(&self) -> usize {
        self.per_class_correct.iter().sum()
    }

    pub fn tested(&self) -> usize {
        self.test_per_class.iter().sum()
    }

    /// `100 × correct / tested` from the stored counts.
    pub fn recomputed_accuracy(&self) -> f64 {
        accuracy(self.correct(), self.tested())
    }
}

pub(crate) fn accuracy(correct: usize, total: usize) -> f64 {
    if total == 0 {
        0.0
    } else {
        100.0 * correct as f64 / total as f64
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentReport {
    pub dataset: String,
    pub synthetic_data: bool,
    pub class_names: Vec<String>,
    pub metric: DistanceMetric,
    pub k_neighbors: usize,
    pub approaches: Vec<ApproachReport>,
    pub config: ExperimentConfig,
    pub environment: EnvironmentNote,
}

impl ExperimentReport {
    pub fn approach(&self, approach: Approach) -> Option<&ApproachReport> {
        self.approaches.iter().find(|a| a.approach == approach)
    }

    /// Copy with every timing set to zero, for byte comparisons across runs.
    pub fn masked_timings(&self) -> ExperimentReport {
        let mut r = self.clone();
        for a in &mut r.approaches {
            a.training_seconds_serial = 0.0;
            a.training_seconds_wall = 0.0;
            a.mean_query_seconds = 0.0;
        }
        r
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ReportFormat {
    Table,
    Json,
}

impl std::str::FromStr for ReportFormat {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "table" => Ok(ReportFormat::Table),
            "json" => Ok(ReportFormat::Json),
            other => Err(Error::Config(format!("unknown report format '{other}'"))),
        }
    }
}

pub fn render_report(report: &ExperimentReport, format: ReportFormat) -> String {
    match format {
        ReportFormat::Json => {
            let mut s = serde_json::to_string_pretty(report).expect("report is serializable");
            s.push('\n');
            s
        }
        ReportFormat::Table => render_table(report),
    }
}

fn render_table(report: &ExperimentReport) -> String {
    let mut out = String::new();
    let data_kind = if report.synthetic_data { "synthetic" } else { "directory" };
    let _ = writeln!(out, "dataset: {} ({data_kind}, {} classes)", report.dataset, report.class_names.len());
    let _ = writeln!(out, "classifier: metric={} k={}", report.metric, report.k_neighbors);
    let env = &report.environment;
    let _ = writeln!(
        out,
        "environment: {}/{}, {} logical cpus, accelerator: {}",
        env.os, env.arch, env.logical_cpus, env.accelerator
    );
    let _ = writeln!(out, "note: {}", env.note);
    out.push('\n');

    let header = [
        "approach",
        "nets",
        "train/class",
        "test/class",
        "minibatch",
        "epochs",
        "iters/net",
        "total iters",
        "samples/epoch",
        "accuracy (%)",
        "train time serial (s)",
        "train time wall (s)",
        "query (ms)",
    ];
    let mut rows: Vec<Vec<String>> = vec![header.iter().map(|s| s.to_string()).collect()];
    for a in &report.approaches {
        rows.push(vec![
            a.approach.to_string(),
            a.networks.to_string(),
            summarize(&a.train_per_class),
            summarize(&a.test_per_class),
            a.minibatch_size.to_string(),
            a.epochs.to_string(),
            summarize(&a.iterations_per_net),
            a.total_iterations.to_string(),
            a.samples_per_epoch.to_string(),
            format!("{:.1}", a.accuracy_percent),
            format!("{:.2}", a.training_seconds_serial),
            format!("{:.2}", a.training_seconds_wall),
            format!("{:.3}", a.mean_query_seconds * 1e3),
        ]);
    }
    write_aligned(&mut out, &rows);
    out.push('\n');

    let _ = writeln!(out, "correctly classified per class");
    let mut rows = vec![std::iter::once("class".to_string())
        .chain(report.approaches.iter().map(|a| a.approach.to_string()))
        .collect::<Vec<_>>()];
    for (c, name) in report.class_names.iter().enumerate() {
        let mut row = vec![name.clone()];
        for a in &report.approaches {
            row.push(format!("{}/{}", a.per_class_correct[c], a.test_per_class[c]));
        }
        rows.push(row);
    }
    write_aligned(&mut out, &rows);
    out
}

/// `80` when all entries agree, otherwise `min-max`.
fn summarize(values: &[usize]) -> String {
    match (values.iter().min(), values.iter().max()) {
        (Some(lo), Some(hi)) if lo == hi => lo.to_string(),
        (Some(lo), Some(hi)) => format!("{lo}-{hi}"),
        _ => "-".to_string(),
    }
}

fn write_aligned(out: &mut String, rows: &[Vec<String>]) {
    let cols = rows.iter().map(Vec::len).max().unwrap_or(0);
    let widths: Vec<usize> = (0..cols)
        .map(|c| rows.iter().filter_map(|r| r.get(c)).map(|s| s.chars().count()).max().unwrap_or(0))
        .collect();
    for row in rows {
        let line: Vec<String> = row
            .iter()
            .enumerate()
            .map(|(c, cell)| if c == 0 { format!("{cell:<w$}", w = widths[c]) } else { format!("{cell:>w$}", w = widths[c]) })
            .collect();
        let _ = writeln!(out, "{}", line.join("  ").trim_end());
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationRow {
    pub metric: DistanceMetric,
    pub correct: usize,
    pub tested: usize,
    pub accuracy_percent: f64,
}

/// Accuracy of the proposed approach per distance metric over fixed models.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationTable {
    pub k_neighbors: usize,
    pub rows: Vec<AblationRow>,
}

impl AblationTable {
    pub fn render(&self, format: ReportFormat) -> String {
        match format {
            ReportFormat::Json => {
                let mut s = serde_json::to_string_pretty(self).expect("table is serializable");
                s.push('\n');
                s
            }
            ReportFormat::Table => {
                let mut rows = vec![vec![
                    "metric".to_string(),
                    format!("correct (k={})", self.k_neighbors),
                    "accuracy (%)".to_string(),
                ]];
                for r in &self.rows {
                    rows.push(vec![
                        r.metric.to_string(),
                        format!("{}/{}", r.correct, r.tested),
                        format!("{:.1}", r.accuracy_percent),
                    ]);
                }
                let mut out = String::new();
                write_aligned(&mut out, &rows);
                out
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    pub(crate) fn sample_report(correct: Vec<usize>, tested: Vec<usize>) -> ExperimentReport {
        let acc = accuracy(correct.iter().sum(), tested.iter().sum());
        ExperimentReport {
            dataset: "faces".into(),
            synthetic_data: true,
            class_names: (0..correct.len()).map(|c| format!("face_{c}")).collect(),
            metric: DistanceMetric::Cosine,
            k_neighbors: 1,
            approaches: vec![ApproachReport {
                approach: Approach::Proposed,
                networks: correct.len(),
                train_per_class: vec![80; correct.len()],
                test_per_class: tested,
                per_class_correct: correct,
                accuracy_percent: acc,
                training_seconds_serial: 1.5,
                training_seconds_wall: 0.5,
                parallel_training: true,
                minibatch_size: 40,
                epochs: 1,
                planned_iterations_per_net: vec![2; 4],
                iterations_per_net: vec![2; 4],
                total_iterations: 8,
                samples_per_epoch: 320,
                early_stopped_networks: 0,
                mean_query_seconds: 0.001,
            }],
            config: ExperimentConfig::default(),
            environment: EnvironmentNote::current(),
        }
    }

    #[test]
    fn accuracy_prints_one_decimal() {
        // 97.1% of 1000 test items
        let r = sample_report(vec![250, 250, 250, 221], vec![250; 4]);
        let text = render_report(&r, ReportFormat::Table);
        assert!(text.lines().any(|l| l.starts_with("proposed") && l.contains("97.1")), "{text}");
        assert!((r.approaches[0].recomputed_accuracy() - r.approaches[0].accuracy_percent).abs() < 0.05);
    }

    #[test]
    fn rendering_is_deterministic() {
        let r = sample_report(vec![40, 39, 38, 40], vec![40; 4]);
        for f in [ReportFormat::Table, ReportFormat::Json] {
            assert_eq!(render_report(&r, f), render_report(&r, f));
        }
        let back: ExperimentReport = serde_json::from_str(&render_report(&r, ReportFormat::Json)).unwrap();
        assert_eq!(back, r);
    }

    #[test]
    fn masking_zeroes_timings() {
        let r = sample_report(vec![1], vec![1]).masked_timings();
        let a = &r.approaches[0];
        assert_eq!((a.training_seconds_serial, a.training_seconds_wall, a.mean_query_seconds), (0.0, 0.0, 0.0));
    }
}
