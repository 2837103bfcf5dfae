//! `oneclass` command-line tool.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use oneclass_core::bench::{
    metric_ablation, render_report, run_experiment_full, Approach, ExperimentConfig, Protocol, ReportFormat,
};
use oneclass_core::classifier::{EnsembleClassifier, SearchScope};
use oneclass_core::datasets::synthetic::{generate_synthetic_dataset, SyntheticSpec};
use oneclass_core::datasets::{load_image, make_split, scan_directory, select_classes, Image, Split, SplitSpec};
use oneclass_core::embedding::{
    load_backbone, load_model_directory, sample_negatives, save_model_bundle, train_one_class, BackboneSpec, ClassLabel,
    OneClassStrategy,
};
use oneclass_core::metrics::DistanceMetric;
use oneclass_core::reference_store::{build_reference_set, load_reference_set, save_reference_set};
use oneclass_core::{Error, ErrorKind, Result};

#[derive(Parser)]
#[command(name = "oneclass", version, about = "One-class network ensembles with a nearest-neighbor decision rule")]
struct Cli {
    /// Experiment config file (TOML); flags override its values.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Seed for every random choice.
    #[arg(long, global = true)]
    seed: Option<u64>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// List the classes and image counts of a dataset directory.
    Scan { root: PathBuf },
    /// Write a seeded train/test split listing.
    Split(SplitArgs),
    /// Train one network per class and save the bundles.
    Train(TrainArgs),
    /// Embed the training images and save the reference set.
    BuildRefs(BuildRefsArgs),
    /// Classify one image with trained models and a reference set.
    Classify(ClassifyArgs),
    /// Run a full comparison and print the report.
    Run(RunArgs),
    /// Accuracy of the proposed approach under several distance metrics.
    Ablate(AblateArgs),
    /// Generate a synthetic class-per-directory dataset.
    Synth(SynthArgs),
}

#[derive(Args)]
struct DataArgs {
    /// Dataset root: one subdirectory per class.
    #[arg(long)]
    root: Option<PathBuf>,
    #[arg(long)]
    class_count: Option<usize>,
    #[arg(long)]
    per_class_count: Option<usize>,
}

#[derive(Args)]
struct SplitArgs {
    #[command(flatten)]
    data: DataArgs,
    #[arg(long, conflicts_with = "train_fraction")]
    train_count: Option<usize>,
    #[arg(long)]
    train_fraction: Option<f64>,
    /// Listing destination; stdout when absent.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct ModelArgs {
    /// One-class training: positive_only_literal, binary_vs_other_classes or compactness.
    #[arg(long, value_parser = parse_strategy)]
    strategy: Option<OneClassStrategy>,
    /// `fc7-surrogate` or `synthetic`.
    #[arg(long)]
    backbone: Option<String>,
    /// Embedding width of the synthetic backbone.
    #[arg(long)]
    dim: Option<usize>,
    #[arg(long)]
    minibatch: Option<usize>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    learn_rate: Option<f64>,
}

#[derive(Args)]
struct TrainArgs {
    /// Split listing written by `split`.
    #[arg(long)]
    split: PathBuf,
    /// Dataset root the listing is relative to.
    #[arg(long)]
    root: Option<PathBuf>,
    #[command(flatten)]
    model: ModelArgs,
    /// Directory receiving one bundle per class.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct BuildRefsArgs {
    #[arg(long)]
    models: PathBuf,
    #[arg(long)]
    split: PathBuf,
    #[arg(long)]
    root: Option<PathBuf>,
    /// Distance metric: cosine, correlation or spearman.
    #[arg(long, value_parser = parse_metric)]
    metric: Option<DistanceMetric>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Clone, Copy, ValueEnum)]
enum Scope {
    FullR,
    RestrictedToRi,
}

#[derive(Args)]
struct ClassifyArgs {
    #[arg(long)]
    models: PathBuf,
    #[arg(long)]
    refs: PathBuf,
    /// Distance metric: cosine, correlation or spearman.
    #[arg(long, value_parser = parse_metric)]
    metric: Option<DistanceMetric>,
    #[arg(long)]
    k: Option<usize>,
    #[arg(long, value_enum)]
    scope: Option<Scope>,
    /// Image to classify.
    image: PathBuf,
}

#[derive(Clone, Copy, ValueEnum)]
enum Format {
    Table,
    Json,
}

impl From<Format> for ReportFormat {
    fn from(f: Format) -> Self {
        match f {
            Format::Table => ReportFormat::Table,
            Format::Json => ReportFormat::Json,
        }
    }
}

#[derive(Args)]
struct ExperimentArgs {
    /// Built-in protocol on generated data, used when no config is given.
    #[arg(long, value_parser = parse_protocol)]
    protocol: Option<Protocol>,
    /// Where the protocol's generated data goes.
    #[arg(long)]
    data_root: Option<PathBuf>,
    /// Comma-separated subset of conventional, proposed, multiclass_knn.
    #[arg(long, value_delimiter = ',', value_parser = parse_approach)]
    approaches: Option<Vec<Approach>>,
    /// One-class training: positive_only_literal, binary_vs_other_classes or compactness.
    #[arg(long, value_parser = parse_strategy)]
    strategy: Option<OneClassStrategy>,
    /// Distance metric: cosine, correlation or spearman.
    #[arg(long, value_parser = parse_metric)]
    metric: Option<DistanceMetric>,
    /// Train one-class networks one at a time.
    #[arg(long)]
    serial: bool,
    #[arg(long, value_enum, default_value = "table")]
    format: Format,
}

#[derive(Args)]
struct RunArgs {
    #[command(flatten)]
    experiment: ExperimentArgs,
    /// Directory for reports, split listings, references and models.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct AblateArgs {
    #[command(flatten)]
    experiment: ExperimentArgs,
    #[arg(long, value_delimiter = ',', value_parser = parse_metric, default_value = "cosine,correlation,spearman")]
    metrics: Vec<DistanceMetric>,
}

#[derive(Args)]
struct SynthArgs {
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 4)]
    classes: usize,
    #[arg(long, default_value_t = 40)]
    images: usize,
    #[arg(long, default_value_t = 32)]
    size: usize,
    #[arg(long, default_value_t = 0.02)]
    noise: f32,
    #[arg(long, default_value_t = 0.0)]
    confusion: f32,
    #[arg(long, default_value = "class")]
    prefix: String,
}

fn parse_metric(s: &str) -> std::result::Result<DistanceMetric, String> {
    s.parse().map_err(|e: Error| e.to_string())
}

fn parse_strategy(s: &str) -> std::result::Result<OneClassStrategy, String> {
    s.parse().map_err(|e: Error| e.to_string())
}

fn parse_approach(s: &str) -> std::result::Result<Approach, String> {
    s.parse().map_err(|e: Error| e.to_string())
}

fn parse_protocol(s: &str) -> std::result::Result<Protocol, String> {
    s.parse().map_err(|e: Error| e.to_string())
}

/// `print!` that exits quietly when stdout is closed early, e.g. by `head`.
macro_rules! out {
    ($($arg:tt)*) => {{
        use std::io::Write;
        if let Err(e) = write!(std::io::stdout().lock(), $($arg)*) {
            if e.kind() == std::io::ErrorKind::BrokenPipe {
                std::process::exit(0);
            }
            return Err(oneclass_core::Error::Io { path: "<stdout>".into(), source: e });
        }
    }};
}

macro_rules! outln {
    ($fmt:literal $($arg:tt)*) => { out!(concat!($fmt, "\n") $($arg)*) };
}

fn exit_code(kind: ErrorKind) -> u8 {
    match kind {
        ErrorKind::Config | ErrorKind::Input | ErrorKind::DegenerateVector => 2,
        ErrorKind::Dataset => 3,
        ErrorKind::Training => 4,
        ErrorKind::Integrity | ErrorKind::Corruption => 5,
        ErrorKind::Io => 1,
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(e.kind()))
        }
    }
}

/// Config file when given, defaults otherwise; `--seed` wins over both.
fn base_config(cli: &Cli) -> Result<ExperimentConfig> {
    let mut cfg = match &cli.config {
        Some(path) => ExperimentConfig::load(path)?,
        None => ExperimentConfig::default(),
    };
    if let Some(seed) = cli.seed {
        cfg.apply_seed(seed);
    }
    Ok(cfg)
}

fn write_or_print(out: Option<&Path>, text: &str) -> Result<()> {
    match out {
        Some(p) => fs::write(p, text).map_err(|e| Error::Input(format!("cannot write {}: {e}", p.display()))),
        None => {
            out!("{text}");
            Ok(())
        }
    }
}

fn dataset_root(cfg: &ExperimentConfig, flag: Option<&PathBuf>) -> Result<PathBuf> {
    flag.cloned()
        .or_else(|| cfg.dataset.root.clone())
        .ok_or_else(|| Error::Config("no dataset root: pass --root or set dataset.root".into()))
}

fn read_split(cfg: &ExperimentConfig, listing: &Path, root: Option<&PathBuf>) -> Result<Split> {
    let text = fs::read_to_string(listing).map_err(|e| Error::Input(format!("cannot read {}: {e}", listing.display())))?;
    Split::from_listing(&dataset_root(cfg, root)?, &text)
}

fn apply_model_args(cfg: &mut ExperimentConfig, m: &ModelArgs) -> Result<()> {
    if let Some(s) = m.strategy {
        cfg.strategy = s;
    }
    if let Some(name) = &m.backbone {
        let seed = cfg.seed;
        cfg.backbone = match name.as_str() {
            oneclass_core::embedding::SYNTHETIC => BackboneSpec::synthetic(seed, m.dim.unwrap_or(64)),
            oneclass_core::embedding::FC7_SURROGATE => BackboneSpec { seed, ..BackboneSpec::fc7_surrogate() },
            other => return Err(Error::Config(format!("unknown backbone '{other}'"))),
        };
    } else if let Some(dim) = m.dim {
        cfg.backbone.embedding_dim = dim;
    }
    let t = &mut cfg.training.proposed;
    if let Some(v) = m.minibatch {
        t.minibatch_size = v;
    }
    if let Some(v) = m.epochs {
        t.epochs = v;
    }
    if let Some(v) = m.learn_rate {
        t.initial_learn_rate = v;
    }
    Ok(())
}

fn load_split_images(split: &Split, paths: &[Vec<PathBuf>], shape: oneclass_core::datasets::InputShape) -> Result<Vec<Vec<Image>>> {
    paths
        .iter()
        .map(|class| class.iter().map(|p| load_image(&split.absolute(p), shape)).collect())
        .collect()
}

fn apply_experiment_args(cli: &Cli, args: &ExperimentArgs) -> Result<ExperimentConfig> {
    let mut cfg = match (&cli.config, args.protocol) {
        (None, Some(p)) => {
            let root = args
                .data_root
                .clone()
                .ok_or_else(|| Error::Config("--protocol needs --data-root".into()))?;
            ExperimentConfig::protocol(p, root, cli.seed.unwrap_or(0))
        }
        (Some(_), Some(_)) => return Err(Error::Config("pass either --config or --protocol, not both".into())),
        _ => base_config(cli)?,
    };
    if let Some(a) = &args.approaches {
        cfg.approaches = a.clone();
    }
    if let Some(s) = args.strategy {
        cfg.strategy = s;
    }
    if let Some(m) = args.metric {
        cfg.classifier.metric = m;
    }
    if args.serial {
        cfg.parallel_training = false;
    }
    if args.protocol.is_none() {
        if let Some(root) = &args.data_root {
            cfg.dataset.root = Some(root.clone());
        }
    }
    Ok(cfg)
}

fn run(cli: Cli) -> Result<()> {
    match &cli.command {
        Command::Scan { root } => {
            let m = scan_directory(root)?;
            for (c, class) in m.classes().iter().enumerate() {
                outln!("{}\t{}", class.name, m.image_count(c));
            }
            outln!("# {} classes, {} images", m.class_count(), m.total_images());
        }
        Command::Split(a) => {
            let cfg = base_config(&cli)?;
            let root = dataset_root(&cfg, a.data.root.as_ref())?;
            let spec = match (a.train_count, a.train_fraction) {
                (Some(n), _) => SplitSpec::count_per_class(n, cfg.seed),
                (None, Some(f)) => SplitSpec::fraction(f, cfg.seed),
                (None, None) => cfg.split.clone(),
            };
            let manifest = scan_directory(&root)?;
            let selected = select_classes(
                &manifest,
                a.data.class_count.or(cfg.dataset.class_count),
                a.data.per_class_count.or(cfg.dataset.per_class_count),
                cfg.seed,
            )?;
            let split = make_split(&selected, &spec)?;
            write_or_print(a.out.as_deref(), &split.to_listing())?;
            eprintln!("{} classes, {} train / {} test images", split.class_count(), split.train_total(), split.test_total());
        }
        Command::Train(a) => {
            let mut cfg = base_config(&cli)?;
            apply_model_args(&mut cfg, &a.model)?;
            let split = read_split(&cfg, &a.split, a.root.as_ref())?;
            let backbone = load_backbone(&cfg.backbone)?;
            let train = load_split_images(&split, &split.train, backbone.input_shape())?;
            for (c, images) in train.iter().enumerate() {
                let negatives = match cfg.strategy {
                    OneClassStrategy::BinaryVsOtherClasses => Some(sample_negatives(&train, c, images.len(), cfg.seed)?),
                    _ => None,
                };
                let label = ClassLabel::new(c, split.class_names[c].clone());
                let model = train_one_class(&backbone, images, &label, cfg.strategy, &cfg.training.proposed, negatives.as_deref())?;
                save_model_bundle(&model, &a.out.join(&label.name))?;
                outln!(
                    "{}\titerations={}\tseconds={:.3}{}",
                    label.name,
                    model.iterations_run(),
                    model.training_seconds(),
                    if model.early_stopped() { "\tearly_stopped" } else { "" }
                );
            }
        }
        Command::BuildRefs(a) => {
            let cfg = base_config(&cli)?;
            let models = load_model_directory(&a.models)?;
            let split = read_split(&cfg, &a.split, a.root.as_ref())?;
            let shape = models[0].network().input_shape();
            let train = load_split_images(&split, &split.train, shape)?;
            let mut refs = build_reference_set(&models, &train)?;
            refs.set_metric(a.metric.unwrap_or(cfg.classifier.metric));
            save_reference_set(&refs, &a.out)?;
            outln!("{} rows x {} dims -> {}", refs.len(), refs.dim(), a.out.display());
        }
        Command::Classify(a) => {
            let cfg = base_config(&cli)?;
            let models = load_model_directory(&a.models)?;
            let refs = load_reference_set(&a.refs)?;
            let mut ccfg = cfg.classifier;
            ccfg.metric = a.metric.unwrap_or(refs.metric());
            if let Some(k) = a.k {
                ccfg.k_neighbors = k;
            }
            if let Some(s) = a.scope {
                ccfg.search_scope = match s {
                    Scope::FullR => SearchScope::FullR,
                    Scope::RestrictedToRi => SearchScope::RestrictedToRi,
                };
            }
            let roi = load_image(&a.image, models[0].network().input_shape())?;
            let ensemble = EnsembleClassifier::new(models, &refs, ccfg)?;
            out!("{}", ensemble.classify(&roi)?.to_text(refs.class_names()));
        }
        Command::Run(a) => {
            let mut cfg = apply_experiment_args(&cli, &a.experiment)?;
            if let Some(out) = &a.out {
                cfg.output = Some(out.clone());
            }
            let run = run_experiment_full(&cfg)?;
            if let Some(out) = &cfg.output {
                run.write_outputs(out)?;
            }
            out!("{}", render_report(&run.report, a.experiment.format.into()));
        }
        Command::Ablate(a) => {
            let cfg = apply_experiment_args(&cli, &a.experiment)?;
            let table = metric_ablation(&cfg, &a.metrics)?;
            out!("{}", table.render(a.experiment.format.into()));
        }
        Command::Synth(a) => {
            let spec = SyntheticSpec {
                image_size: a.size,
                noise: a.noise,
                confusion: a.confusion,
                class_prefix: a.prefix.clone(),
                ..SyntheticSpec::new(a.classes, a.images, cli.seed.unwrap_or(0))
            };
            let m = generate_synthetic_dataset(&a.out, &spec)?;
            outln!("{} classes x {} images -> {}", m.class_count(), a.images, a.out.display());
        }
    }
    Ok(())
}
