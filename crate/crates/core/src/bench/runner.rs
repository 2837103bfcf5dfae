use std::fs;
use std::path::Path;
use std::time::Instant;

use rayon::prelude::*;

use super::config::{Approach, ExperimentConfig};
use super::report::{accuracy, render_report, AblationRow, AblationTable, ApproachReport, EnvironmentNote, ExperimentReport, ReportFormat};
use crate::classifier::{
    decide, query_embeddings, score_db_with_index, ClassifierConfig, EnsembleClassifier, MulticlassKnnBaseline,
    MulticlassSoftmaxBaseline, SearchIndex,
};
use crate::datasets::synthetic::generate_synthetic_dataset;
use crate::datasets::{load_image, make_split, scan_directory, select_classes, DatasetManifest, Image, InputShape, Split};
use crate::embedding::{
    load_backbone, sample_negatives, save_model_bundle, train_multiclass, train_one_class, Backbone, ClassLabel,
    MulticlassNetwork, OneClassModel, OneClassStrategy, TrainingPlan,
};
use crate::error::{Error, Result};
use crate::metrics::{DistanceMetric, FeatureVector};
use crate::reference_store::{build_reference_set, save_reference_set, ReferenceSet};

/// Split plus the decoded images it names.
#[derive(Debug, Clone)]
pub struct PreparedData {
    pub split: Split,
    pub train: Vec<Vec<Image>>,
    pub test: Vec<Vec<Image>>,
}

impl PreparedData {
    fn train_counts(&self) -> Vec<usize> {
        self.train.iter().map(Vec::len).collect()
    }

    fn test_counts(&self) -> Vec<usize> {
        self.test.iter().map(Vec::len).collect()
    }
}

/// Trained one-class ensemble with the data it was trained and tested on.
#[derive(Debug, Clone)]
pub struct ProposedRun {
    pub data: PreparedData,
    pub models: Vec<OneClassModel>,
    pub references: ReferenceSet,
    pub training_seconds_wall: f64,
}

/// One multiclass fine-tune serving one or both baselines.
#[derive(Debug, Clone)]
pub struct MulticlassRun {
    pub approaches: Vec<Approach>,
    pub data: PreparedData,
    pub network: MulticlassNetwork,
}

/// Everything one experiment produced.
#[derive(Debug, Clone)]
pub struct ExperimentRun {
    pub report: ExperimentReport,
    pub proposed: Option<ProposedRun>,
    pub multiclass: Vec<MulticlassRun>,
}

pub fn run_experiment(cfg: &ExperimentConfig) -> Result<ExperimentReport> {
    Ok(run_experiment_full(cfg)?.report)
}

fn load_manifest(cfg: &ExperimentConfig) -> Result<(DatasetManifest, String)> {
    let root = cfg.dataset.root.as_deref().expect("validated");
    let manifest = match &cfg.dataset.synthetic {
        Some(spec) => {
            let m = generate_synthetic_dataset(root, spec)?;
            if m.class_count() != spec.classes || m.total_images() != spec.classes * spec.images_per_class {
                return Err(Error::Dataset(format!(
                    "{} holds data besides the generated dataset",
                    root.display()
                )));
            }
            m
        }
        None => scan_directory(root)?,
    };
    Ok((manifest, root.display().to_string()))
}

fn load_images(split: &Split, paths: &[Vec<std::path::PathBuf>], shape: InputShape) -> Result<Vec<Vec<Image>>> {
    paths
        .iter()
        .map(|class| class.par_iter().map(|p| load_image(&split.absolute(p), shape)).collect())
        .collect()
}

fn prepare(cfg: &ExperimentConfig, manifest: &DatasetManifest, approach: Approach, shape: InputShape) -> Result<PreparedData> {
    let selected = select_classes(manifest, cfg.dataset.class_count, cfg.per_class_count_for(approach), cfg.seed)?;
    let split = make_split(&selected, cfg.split_for(approach))?;
    let train = load_images(&split, &split.train, shape)?;
    let test = load_images(&split, &split.test, shape)?;
    Ok(PreparedData { split, train, test })
}

fn same_data(cfg: &ExperimentConfig, a: Approach, b: Approach) -> bool {
    cfg.per_class_count_for(a) == cfg.per_class_count_for(b) && cfg.split_for(a) == cfg.split_for(b)
}

/// Runs every selected approach. All data and configuration checks happen
/// before the first network is trained.
pub fn run_experiment_full(cfg: &ExperimentConfig) -> Result<ExperimentRun> {
    cfg.validate()?;
    let backbone = load_backbone(&cfg.backbone)?;
    let (manifest, dataset_label) = load_manifest(cfg)?;
    let shape = backbone.input_shape();

    let proposed_data = if cfg.runs(Approach::Proposed) {
        let data = prepare(cfg, &manifest, Approach::Proposed, shape).map_err(|e| e.context("proposed data"))?;
        for (c, images) in data.train.iter().enumerate() {
            let negatives = if cfg.strategy == OneClassStrategy::BinaryVsOtherClasses { images.len() } else { 0 };
            TrainingPlan::one_class(cfg.strategy, images.len(), negatives, &cfg.training.proposed)
                .map_err(|e| e.context(format!("one-class network {c}")))?;
        }
        Some(data)
    } else {
        None
    };

    let mut groups: Vec<(Vec<Approach>, PreparedData)> = Vec::new();
    for approach in cfg.selected_approaches().into_iter().filter(|a| *a != Approach::Proposed) {
        if let Some(group) = groups.iter_mut().find(|(members, _)| same_data(cfg, members[0], approach)) {
            group.0.push(approach);
            continue;
        }
        let data = prepare(cfg, &manifest, approach, shape).map_err(|e| e.context(format!("{approach} data")))?;
        if data.split.class_count() < 2 {
            return Err(Error::Config("multiclass baselines need at least two classes".into()));
        }
        TrainingPlan::multiclass(data.split.train_total(), &cfg.training.multiclass).map_err(|e| e.context(approach.to_string()))?;
        groups.push((vec![approach], data));
    }

    let mut approaches = Vec::new();
    let mut class_names = Vec::new();

    let proposed = match proposed_data {
        Some(data) => {
            let run = train_proposed(cfg, &backbone, data)?;
            class_names = run.data.split.class_names.clone();
            approaches.push(evaluate_proposed(cfg, &run)?);
            Some(run)
        }
        None => None,
    };

    let mut multiclass = Vec::new();
    for (members, data) in groups {
        let network = train_multiclass(&backbone, &data.train, &cfg.training.multiclass)
            .map_err(|e| e.context(format!("training {}", members[0])))?;
        let run = MulticlassRun {
            approaches: members,
            data,
            network,
        };
        if class_names.is_empty() {
            class_names = run.data.split.class_names.clone();
        }
        for &approach in &run.approaches {
            approaches.push(evaluate_multiclass(cfg, approach, &run)?);
        }
        multiclass.push(run);
    }
    approaches.sort_by_key(|a| a.approach);

    let report = ExperimentReport {
        dataset: dataset_label,
        synthetic_data: cfg.dataset.synthetic.is_some(),
        class_names,
        metric: cfg.classifier.metric,
        k_neighbors: cfg.classifier.k_neighbors,
        approaches,
        config: cfg.clone(),
        environment: EnvironmentNote::current(),
    };
    Ok(ExperimentRun {
        report,
        proposed,
        multiclass,
    })
}

fn train_proposed(cfg: &ExperimentConfig, backbone: &Backbone, data: PreparedData) -> Result<ProposedRun> {
    let train_one = |c: usize| -> Result<OneClassModel> {
        let label = ClassLabel::new(c, data.split.class_names[c].clone());
        let negatives = match cfg.strategy {
            OneClassStrategy::BinaryVsOtherClasses => {
                Some(sample_negatives(&data.train, c, data.train[c].len(), cfg.seed)?)
            }
            _ => None,
        };
        train_one_class(backbone, &data.train[c], &label, cfg.strategy, &cfg.training.proposed, negatives.as_deref())
            .map_err(|e| e.context(format!("training one-class network {c}")))
    };
    let start = Instant::now();
    let classes = data.split.class_count();
    let models = if cfg.parallel_training {
        (0..classes).into_par_iter().map(train_one).collect::<Result<Vec<_>>>()?
    } else {
        (0..classes).map(train_one).collect::<Result<Vec<_>>>()?
    };
    let training_seconds_wall = start.elapsed().as_secs_f64();
    let mut references = build_reference_set(&models, &data.train)?;
    references.set_metric(cfg.classifier.metric);
    Ok(ProposedRun {
        data,
        models,
        references,
        training_seconds_wall,
    })
}

/// Per-class correct counts and mean seconds per query.
fn tally(test: &[Vec<Image>], predict: impl Fn(&Image) -> Result<u32> + Sync) -> Result<(Vec<usize>, f64)> {
    let items: Vec<(usize, &Image)> = test.iter().enumerate().flat_map(|(c, imgs)| imgs.iter().map(move |i| (c, i))).collect();
    let outcomes = items
        .par_iter()
        .map(|&(c, img)| {
            let start = Instant::now();
            let p = predict(img)?;
            Ok((c, p as usize == c, start.elapsed().as_secs_f64()))
        })
        .collect::<Result<Vec<_>>>()?;
    let mut correct = vec![0; test.len()];
    let mut seconds = 0.0;
    for (c, ok, s) in &outcomes {
        correct[*c] += usize::from(*ok);
        seconds += s;
    }
    let mean = if outcomes.is_empty() { 0.0 } else { seconds / outcomes.len() as f64 };
    Ok((correct, mean))
}

fn evaluate_proposed(cfg: &ExperimentConfig, run: &ProposedRun) -> Result<ApproachReport> {
    let ensemble = EnsembleClassifier::new(run.models.clone(), &run.references, cfg.classifier)?;
    let (per_class_correct, mean_query_seconds) =
        tally(&run.data.test, |img| Ok(ensemble.classify(img)?.predicted_class)).map_err(|e| e.context("evaluating proposed"))?;
    let correct: usize = per_class_correct.iter().sum();
    let iterations_per_net: Vec<usize> = run.models.iter().map(|m| m.iterations_run()).collect();
    Ok(ApproachReport {
        approach: Approach::Proposed,
        networks: run.models.len(),
        train_per_class: run.data.train_counts(),
        test_per_class: run.data.test_counts(),
        accuracy_percent: accuracy(correct, run.data.split.test_total()),
        per_class_correct,
        training_seconds_serial: run.models.iter().map(|m| m.training_seconds()).sum(),
        training_seconds_wall: run.training_seconds_wall,
        parallel_training: cfg.parallel_training,
        minibatch_size: cfg.training.proposed.minibatch_size,
        epochs: cfg.training.proposed.epochs,
        planned_iterations_per_net: run.models.iter().map(|m| m.plan().iterations).collect(),
        total_iterations: iterations_per_net.iter().sum(),
        iterations_per_net,
        samples_per_epoch: run.models.iter().map(|m| m.plan().effective).sum(),
        early_stopped_networks: run.models.iter().filter(|m| m.early_stopped()).count(),
        mean_query_seconds,
    })
}

fn evaluate_multiclass(cfg: &ExperimentConfig, approach: Approach, run: &MulticlassRun) -> Result<ApproachReport> {
    let (per_class_correct, mean_query_seconds) = match approach {
        Approach::Conventional => {
            let baseline = MulticlassSoftmaxBaseline::from_network(run.network.clone());
            tally(&run.data.test, |img| baseline.predict(img))
        }
        Approach::MulticlassKnn => {
            let baseline =
                MulticlassKnnBaseline::from_network(run.network.clone(), &run.data.split.class_names, &run.data.train, &cfg.classifier)?;
            tally(&run.data.test, |img| baseline.predict(img))
        }
        Approach::Proposed => unreachable!("handled by evaluate_proposed"),
    }
    .map_err(|e| e.context(format!("evaluating {approach}")))?;
    let correct: usize = per_class_correct.iter().sum();
    let seconds = run.network.training_seconds();
    Ok(ApproachReport {
        approach,
        networks: 1,
        train_per_class: run.data.train_counts(),
        test_per_class: run.data.test_counts(),
        accuracy_percent: accuracy(correct, run.data.split.test_total()),
        per_class_correct,
        training_seconds_serial: seconds,
        training_seconds_wall: seconds,
        parallel_training: false,
        minibatch_size: cfg.training.multiclass.minibatch_size,
        epochs: cfg.training.multiclass.epochs,
        planned_iterations_per_net: vec![run.network.plan().iterations],
        iterations_per_net: vec![run.network.iterations_run()],
        total_iterations: run.network.iterations_run(),
        samples_per_epoch: run.network.plan().effective,
        early_stopped_networks: 0,
        mean_query_seconds,
    })
}

/// Query embeddings of one test image under every network, with its class.
#[derive(Debug, Clone)]
pub struct EmbeddedQuery {
    pub class: u32,
    pub embeddings: Vec<FeatureVector>,
}

/// Accuracy per metric over fixed query embeddings and reference rows.
pub fn ablate_embeddings(
    queries: &[EmbeddedQuery],
    references: &ReferenceSet,
    metrics: &[DistanceMetric],
    base: &ClassifierConfig,
) -> Result<AblationTable> {
    if metrics.is_empty() {
        return Err(Error::Config("no metrics given for the ablation".into()));
    }
    let mut rows = Vec::with_capacity(metrics.len());
    for &metric in metrics {
        let cfg = ClassifierConfig { metric, ..*base };
        let index = SearchIndex::new(references, metric)?;
        let hits = queries
            .par_iter()
            .map(|q| {
                let db = score_db_with_index(&q.embeddings, &index, &cfg)?;
                Ok(usize::from(decide(db)?.predicted_class == q.class))
            })
            .collect::<Result<Vec<_>>>()
            .map_err(|e| e.context(format!("{metric} ablation")))?;
        let correct = hits.iter().sum();
        rows.push(AblationRow {
            metric,
            correct,
            tested: queries.len(),
            accuracy_percent: accuracy(correct, queries.len()),
        });
    }
    Ok(AblationTable {
        k_neighbors: base.k_neighbors,
        rows,
    })
}

/// Re-evaluates a trained ensemble under each metric without retraining.
pub fn ablate_trained(run: &ProposedRun, metrics: &[DistanceMetric], base: &ClassifierConfig) -> Result<AblationTable> {
    let items: Vec<(u32, &Image)> = run
        .data
        .test
        .iter()
        .enumerate()
        .flat_map(|(c, imgs)| imgs.iter().map(move |i| (c as u32, i)))
        .collect();
    let queries = items
        .par_iter()
        .map(|&(class, img)| {
            Ok(EmbeddedQuery {
                class,
                embeddings: query_embeddings(&run.models, img)?,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    ablate_embeddings(&queries, &run.references, metrics, base)
}

/// Trains the proposed approach once and scores it under every metric.
pub fn metric_ablation(cfg: &ExperimentConfig, metrics: &[DistanceMetric]) -> Result<AblationTable> {
    if metrics.is_empty() {
        return Err(Error::Config("no metrics given for the ablation".into()));
    }
    let cfg = ExperimentConfig {
        approaches: vec![Approach::Proposed],
        ..cfg.clone()
    };
    let run = run_experiment_full(&cfg)?;
    let proposed = run.proposed.expect("proposed approach selected");
    ablate_trained(&proposed, metrics, &cfg.classifier)
}

pub const REPORT_TABLE_FILE: &str = "report.txt";
pub const REPORT_JSON_FILE: &str = "report.json";
pub const REFERENCES_FILE: &str = "references.bin";

impl ExperimentRun {
    /// Writes reports, split listings, the reference set and model bundles.
    pub fn write_outputs(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let write = |name: &str, text: String| {
            let p = dir.join(name);
            fs::write(&p, text).map_err(|e| Error::io(&p, e))
        };
        write(REPORT_TABLE_FILE, render_report(&self.report, ReportFormat::Table))?;
        write(REPORT_JSON_FILE, render_report(&self.report, ReportFormat::Json))?;
        if let Some(p) = &self.proposed {
            write("split_proposed.tsv", p.data.split.to_listing())?;
            save_reference_set(&p.references, &dir.join(REFERENCES_FILE))?;
            for m in &p.models {
                save_model_bundle(m, &dir.join("models").join(&m.class().name))?;
            }
        }
        for m in &self.multiclass {
            let names: Vec<&str> = m.approaches.iter().map(|a| a.as_str()).collect();
            write(&format!("split_{}.tsv", names.join("+")), m.data.split.to_listing())?;
        }
        Ok(())
    }
}
