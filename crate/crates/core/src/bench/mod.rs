//! Experiment runner comparing the one-class ensemble with the two multiclass
//! baselines, plus report rendering and the distance metric ablation.

mod config;
mod report;
mod runner;

pub use self::config::{
    Approach, ApproachOverride, DatasetConfig, ExperimentConfig, Overrides, Protocol, TrainingSection, PRESET_SYNTHETIC_DIM,
};
pub use self::report::{
    render_report, AblationRow, AblationTable, ApproachReport, EnvironmentNote, ExperimentReport, ReportFormat,
};
pub use self::runner::{
    ablate_embeddings, ablate_trained, metric_ablation, run_experiment, run_experiment_full, EmbeddedQuery, ExperimentRun,
    MulticlassRun, PreparedData, ProposedRun, REFERENCES_FILE, REPORT_JSON_FILE, REPORT_TABLE_FILE,
};
