//! Fine-tuning of the embedding layer with minibatch SGD with momentum.

use std::fmt;
use std::str::FromStr;
use std::time::Instant;

use ndarray::{Array1, Array2, Axis};
use rand::seq::SliceRandom;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::network::DenseLayer;
use super::{Backbone, ClassLabel};
use crate::datasets::{seeded_rng, Image};
use crate::error::{Error, Result};

/// Stream offset separating training randomness from data randomness.
const TRAINING_STREAM: u64 = 1 << 40;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainingConfig {
    pub initial_learn_rate: f64,
    pub l2_regularization: f64,
    pub momentum: f64,
    pub validation_frequency: usize,
    pub validation_patience: usize,
    pub minibatch_size: usize,
    pub epochs: usize,
    pub seed: u64,
}

impl Default for TrainingConfig {
    fn default() -> Self {
        TrainingConfig {
            initial_learn_rate: 0.01,
            l2_regularization: 0.0001,
            momentum: 0.9,
            validation_frequency: 50,
            validation_patience: 5,
            minibatch_size: 16,
            epochs: 1,
            seed: 0,
        }
    }
}

impl TrainingConfig {
    pub fn with_minibatch(minibatch_size: usize, epochs: usize) -> Self {
        TrainingConfig {
            minibatch_size,
            epochs,
            ..TrainingConfig::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let rates = [self.initial_learn_rate, self.l2_regularization, self.momentum];
        if rates.iter().any(|r| !r.is_finite() || *r < 0.0) {
            return Err(Error::Config("learning rate, L2 factor and momentum must be non-negative".into()));
        }
        if self.momentum >= 1.0 {
            return Err(Error::Config("momentum must be below 1".into()));
        }
        if self.minibatch_size == 0 || self.epochs == 0 {
            return Err(Error::Config("minibatch_size and epochs must be positive".into()));
        }
        if self.validation_frequency == 0 || self.validation_patience == 0 {
            return Err(Error::Config("validation frequency and patience must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OneClassStrategy {
    /// Single-output softmax head: the loss is identically zero, so the
    /// backbone leaves training unchanged.
    #[default]
    PositiveOnlyLiteral,
    /// Sigmoid head separating the class from negatives drawn from other classes.
    BinaryVsOtherClasses,
    /// Pulls embeddings toward their running centroid using positives only.
    Compactness,
}

impl OneClassStrategy {
    pub fn as_str(self) -> &'static str {
        match self {
            OneClassStrategy::PositiveOnlyLiteral => "positive_only_literal",
            OneClassStrategy::BinaryVsOtherClasses => "binary_vs_other_classes",
            OneClassStrategy::Compactness => "compactness",
        }
    }

    fn has_constant_loss(self) -> bool {
        self == OneClassStrategy::PositiveOnlyLiteral
    }
}

impl fmt::Display for OneClassStrategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for OneClassStrategy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "positive_only_literal" => Ok(OneClassStrategy::PositiveOnlyLiteral),
            "binary_vs_other_classes" => Ok(OneClassStrategy::BinaryVsOtherClasses),
            "compactness" => Ok(OneClassStrategy::Compactness),
            other => Err(Error::Config(format!("unknown one-class strategy '{other}'"))),
        }
    }
}

/// `epochs × ceil(effective / minibatch)`.
pub fn planned_iterations(effective: usize, minibatch_size: usize, epochs: usize) -> usize {
    epochs * effective.div_ceil(minibatch_size)
}

/// Sample accounting for one training run.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct TrainingPlan {
    /// Samples after strategy expansion (positives plus any negatives).
    pub expanded: usize,
    /// Samples held out for early stopping.
    pub holdout: usize,
    /// Samples seen per epoch.
    pub effective: usize,
    pub iterations: usize,
}

impl TrainingPlan {
    /// Non-constant objectives hold out 10% (rounded down) for validation.
    pub fn one_class(strategy: OneClassStrategy, positives: usize, negatives: usize, cfg: &TrainingConfig) -> Result<Self> {
        let expanded = positives + negatives;
        let holdout = if strategy.has_constant_loss() { 0 } else { expanded / 10 };
        Self::build(expanded, holdout, cfg)
    }

    /// Multiclass fine-tuning trains on every image, no holdout.
    pub fn multiclass(total: usize, cfg: &TrainingConfig) -> Result<Self> {
        Self::build(total, 0, cfg)
    }

    fn build(expanded: usize, holdout: usize, cfg: &TrainingConfig) -> Result<Self> {
        cfg.validate()?;
        let effective = expanded - holdout;
        if cfg.minibatch_size > effective {
            return Err(Error::Config(format!(
                "minibatch size {} exceeds the {effective} training samples",
                cfg.minibatch_size
            )));
        }
        Ok(TrainingPlan {
            expanded,
            holdout,
            effective,
            iterations: planned_iterations(effective, cfg.minibatch_size, cfg.epochs),
        })
    }
}

/// One network fine-tuned on a single class.
#[derive(Debug, Clone)]
pub struct OneClassModel {
    pub(crate) class: ClassLabel,
    pub(crate) network: Backbone,
    pub(crate) strategy: OneClassStrategy,
    pub(crate) seed: u64,
    pub(crate) training_seconds: f64,
    pub(crate) iterations_run: usize,
    pub(crate) early_stopped: bool,
    pub(crate) plan: TrainingPlan,
}

impl OneClassModel {
    pub fn class(&self) -> &ClassLabel {
        &self.class
    }

    pub fn network(&self) -> &Backbone {
        &self.network
    }

    pub fn strategy(&self) -> OneClassStrategy {
        self.strategy
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn training_seconds(&self) -> f64 {
        self.training_seconds
    }

    pub fn iterations_run(&self) -> usize {
        self.iterations_run
    }

    pub fn early_stopped(&self) -> bool {
        self.early_stopped
    }

    pub fn plan(&self) -> &TrainingPlan {
        &self.plan
    }
}

/// Round-robin over the other classes, each visited in its own seeded order,
/// until `count` negatives are collected.
pub fn sample_negatives(per_class: &[Vec<Image>], class: usize, count: usize, seed: u64) -> Result<Vec<Image>> {
    let mut orders: Vec<(usize, Vec<usize>)> = per_class
        .iter()
        .enumerate()
        .filter(|(c, imgs)| *c != class && !imgs.is_empty())
        .map(|(c, imgs)| {
            let mut order: Vec<usize> = (0..imgs.len()).collect();
            order.shuffle(&mut seeded_rng(seed, (class as u64) << 20 | c as u64));
            (c, order)
        })
        .collect();
    if orders.is_empty() {
        return Err(Error::Config("binary_vs_other_classes needs images from at least one other class".into()));
    }
    let mut out = Vec::with_capacity(count);
    let mut round = 0;
    while out.len() < count {
        for (c, order) in orders.iter_mut() {
            if out.len() == count {
                break;
            }
            out.push(per_class[*c][order[round % order.len()]].clone());
        }
        round += 1;
    }
    Ok(out)
}

/// Fine-tunes a copy of `backbone` on the images of one class.
///
/// `negatives` must be given exactly when the strategy is
/// `binary_vs_other_classes`; they are used as-is.
pub fn train_one_class(
    backbone: &Backbone,
    images: &[Image],
    class: &ClassLabel,
    strategy: OneClassStrategy,
    cfg: &TrainingConfig,
    negatives: Option<&[Image]>,
) -> Result<OneClassModel> {
    let start = Instant::now();
    if images.is_empty() {
        return Err(Error::Input(format!("no training images for class '{}'", class.name)));
    }
    let negatives = match (strategy, negatives) {
        (OneClassStrategy::BinaryVsOtherClasses, Some(n)) if !n.is_empty() => n,
        (OneClassStrategy::BinaryVsOtherClasses, _) => {
            return Err(Error::Config("binary_vs_other_classes requires negative images".into()))
        }
        (_, Some(n)) if !n.is_empty() => {
            return Err(Error::Config(format!("strategy {strategy} does not take negative images")))
        }
        _ => &[][..],
    };
    let plan = TrainingPlan::one_class(strategy, images.len(), negatives.len(), cfg)?;
    let mut rng = seeded_rng(cfg.seed, TRAINING_STREAM + class.id as u64);

    let mut x = backbone.feature_matrix(images);
    let mut labels = vec![1usize; images.len()];
    if !negatives.is_empty() {
        x.append(Axis(0), backbone.feature_matrix(negatives).view())
            .expect("feature widths agree");
        labels.extend(std::iter::repeat_n(0, negatives.len()));
    }

    let objective = match strategy {
        OneClassStrategy::PositiveOnlyLiteral => Objective::Constant,
        OneClassStrategy::BinaryVsOtherClasses => Objective::Binary,
        OneClassStrategy::Compactness => Objective::Compactness,
    };
    let data = Dataset::with_holdout(x, labels, plan.holdout, &mut rng);
    let outcome = run_sgd(backbone, &data, objective, cfg, &mut rng);
    let network = match outcome.layer {
        Some(layer) => backbone.replace_layer(layer),
        None => backbone.clone(),
    };
    Ok(OneClassModel {
        class: class.clone(),
        network,
        strategy,
        seed: cfg.seed,
        training_seconds: start.elapsed().as_secs_f64(),
        iterations_run: outcome.iterations,
        early_stopped: outcome.early_stopped,
        plan,
    })
}

/// A backbone fine-tuned with a C-way softmax head.
#[derive(Debug, Clone)]
pub struct MulticlassNetwork {
    network: Backbone,
    head: DenseLayer,
    training_seconds: f64,
    iterations_run: usize,
    plan: TrainingPlan,
}

impl MulticlassNetwork {
    pub fn network(&self) -> &Backbone {
        &self.network
    }

    pub fn class_count(&self) -> usize {
        self.head.out_dim()
    }

    pub fn training_seconds(&self) -> f64 {
        self.training_seconds
    }

    pub fn iterations_run(&self) -> usize {
        self.iterations_run
    }

    pub fn plan(&self) -> &TrainingPlan {
        &self.plan
    }

    pub fn logits(&self, image: &Image) -> Result<Vec<f32>> {
        let e = self.network.embed(image)?;
        let e = Array1::from(e.into_inner());
        Ok(self.head.forward_one(&e).to_vec())
    }

    /// Arg-max class index; ties go to the lowest index.
    pub fn predict(&self, image: &Image) -> Result<usize> {
        let logits = self.logits(image)?;
        let mut best = 0;
        for (i, &v) in logits.iter().enumerate() {
            if v > logits[best] {
                best = i;
            }
        }
        Ok(best)
    }
}

/// Fine-tunes one backbone copy on all classes with a softmax head.
pub fn train_multiclass(backbone: &Backbone, per_class: &[Vec<Image>], cfg: &TrainingConfig) -> Result<MulticlassNetwork> {
    let start = Instant::now();
    if per_class.len() < 2 {
        return Err(Error::Config("multiclass training needs at least two classes".into()));
    }
    if let Some(c) = per_class.iter().position(Vec::is_empty) {
        return Err(Error::Input(format!("class {c} has no training images")));
    }
    let total: usize = per_class.iter().map(Vec::len).sum();
    let plan = TrainingPlan::multiclass(total, cfg)?;
    let mut rng = seeded_rng(cfg.seed, TRAINING_STREAM - 1);

    let mut x = Array2::<f32>::zeros((0, backbone.layer().in_dim()));
    let mut labels = Vec::with_capacity(total);
    for (c, images) in per_class.iter().enumerate() {
        x.append(Axis(0), backbone.feature_matrix(images).view())
            .expect("feature widths agree");
        labels.extend(std::iter::repeat_n(c, images.len()));
    }
    let data = Dataset::with_holdout(x, labels, 0, &mut rng);
    let outcome = run_sgd(backbone, &data, Objective::Softmax(per_class.len()), cfg, &mut rng);
    Ok(MulticlassNetwork {
        network: backbone.replace_layer(outcome.layer.expect("softmax objective always trains")),
        head: outcome.head.expect("softmax objective has a head"),
        training_seconds: start.elapsed().as_secs_f64(),
        iterations_run: outcome.iterations,
        plan,
    })
}

#[derive(Debug, Clone, Copy)]
enum Objective {
    Constant,
    Binary,
    Compactness,
    Softmax(usize),
}

struct Dataset {
    train_x: Array2<f32>,
    train_labels: Vec<usize>,
    val: Option<(Array2<f32>, Vec<usize>)>,
}

impl Dataset {
    fn with_holdout(x: Array2<f32>, labels: Vec<usize>, holdout: usize, rng: &mut ChaCha8Rng) -> Dataset {
        if holdout == 0 {
            return Dataset {
                train_x: x,
                train_labels: labels,
                val: None,
            };
        }
        let mut order: Vec<usize> = (0..labels.len()).collect();
        order.shuffle(rng);
        let (val_idx, train_idx) = order.split_at(holdout);
        let pick = |idx: &[usize]| (x.select(Axis(0), idx), idx.iter().map(|&i| labels[i]).collect::<Vec<_>>());
        let (train_x, train_labels) = pick(train_idx);
        Dataset {
            train_x,
            train_labels,
            val: Some(pick(val_idx)),
        }
    }
}

struct Outcome {
    layer: Option<DenseLayer>,
    head: Option<DenseLayer>,
    iterations: usize,
    early_stopped: bool,
}

/// Parameters of a dense layer and their momentum buffers.
struct Trainable {
    layer: DenseLayer,
    vel_w: Array2<f32>,
    vel_b: Array1<f32>,
}

impl Trainable {
    fn new(layer: DenseLayer) -> Self {
        let vel_w = Array2::zeros(layer.weights.raw_dim());
        let vel_b = Array1::zeros(layer.bias.raw_dim());
        Trainable { layer, vel_w, vel_b }
    }

    /// `v = momentum·v − lr·(g + λ·w); w += v`. L2 applies to weights only.
    fn step(&mut self, grad_w: &Array2<f32>, grad_b: &Array1<f32>, cfg: &TrainingConfig) {
        let (lr, l2, mom) = (cfg.initial_learn_rate as f32, cfg.l2_regularization as f32, cfg.momentum as f32);
        ndarray::Zip::from(&mut self.vel_w)
            .and(&self.layer.weights)
            .and(grad_w)
            .for_each(|v, &w, &g| *v = mom * *v - lr * (g + l2 * w));
        self.layer.weights += &self.vel_w;
        ndarray::Zip::from(&mut self.vel_b)
            .and(grad_b)
            .for_each(|v, &g| *v = mom * *v - lr * g);
        self.layer.bias += &self.vel_b;
    }
}

struct State<'a> {
    backbone: &'a Backbone,
    body: Trainable,
    head: Option<Trainable>,
    centroid: Option<Array1<f32>>,
}

/// Gradient of the classification head: weights, then bias.
type HeadGrad = (Array2<f32>, Array1<f32>);

impl State<'_> {
    fn embed(&self, x: &Array2<f32>) -> Array2<f32> {
        let mut z = self.body.layer.forward(&x.view());
        self.backbone.activation().apply(&mut z);
        z
    }

    /// Mean loss over the batch and its gradient with respect to the embeddings.
    fn loss(&self, objective: Objective, e: &Array2<f32>, labels: &[usize]) -> (f32, Array2<f32>, Option<HeadGrad>) {
        let n = e.nrows() as f32;
        match objective {
            Objective::Constant => (0.0, Array2::zeros(e.raw_dim()), None),
            Objective::Compactness => {
                let mu = self.centroid.as_ref().expect("compactness keeps a centroid");
                let diff = e - &mu.view().insert_axis(Axis(0));
                let loss = diff.iter().map(|d| d * d).sum::<f32>() / n;
                (loss, diff * (2.0 / n), None)
            }
            Objective::Binary => {
                let head = &self.head.as_ref().expect("binary objective has a head").layer;
                let logits = head.forward(&e.view()).column(0).to_owned();
                let mut loss = 0.0;
                let mut dlogit = Array2::<f32>::zeros((e.nrows(), 1));
                for (i, (&s, &y)) in logits.iter().zip(labels).enumerate() {
                    let y = y as f32;
                    // log(1 + exp(-|s|)) form keeps the loss finite for large logits
                    loss += s.max(0.0) - s * y + (-s.abs()).exp().ln_1p();
                    let p = 1.0 / (1.0 + (-s).exp());
                    dlogit[[i, 0]] = (p - y) / n;
                }
                let de = dlogit.dot(&head.weights);
                let gw = dlogit.t().dot(e);
                let gb = dlogit.sum_axis(Axis(0));
                (loss / n, de, Some((gw, gb)))
            }
            Objective::Softmax(_) => {
                let head = &self.head.as_ref().expect("softmax objective has a head").layer;
                let mut logits = head.forward(&e.view());
                let mut loss = 0.0;
                for (mut row, &y) in logits.axis_iter_mut(Axis(0)).zip(labels) {
                    let max = row.fold(f32::NEG_INFINITY, |a, &b| a.max(b));
                    row.mapv_inplace(|v| (v - max).exp());
                    let sum = row.sum();
                    row /= sum;
                    loss -= row[y].max(f32::MIN_POSITIVE).ln();
                    row[y] -= 1.0;
                }
                logits /= n;
                let de = logits.dot(&head.weights);
                let gw = logits.t().dot(e);
                let gb = logits.sum_axis(Axis(0));
                (loss / n, de, Some((gw, gb)))
            }
        }
    }
}

fn init_head(out: usize, dim: usize, rng: &mut ChaCha8Rng) -> Trainable {
    let weights = Array2::from_shape_simple_fn((out, dim), || rng.sample::<f32, _>(StandardNormal) * 0.01);
    Trainable::new(DenseLayer {
        weights,
        bias: Array1::zeros(out),
    })
}

fn run_sgd(backbone: &Backbone, data: &Dataset, objective: Objective, cfg: &TrainingConfig, rng: &mut ChaCha8Rng) -> Outcome {
    let dim = backbone.embedding_dim();
    let head = match objective {
        Objective::Binary => Some(init_head(1, dim, rng)),
        Objective::Softmax(classes) => Some(init_head(classes, dim, rng)),
        _ => None,
    };
    let mut state = State {
        backbone,
        body: Trainable::new(backbone.layer().clone()),
        head,
        centroid: None,
    };
    if let Objective::Compactness = objective {
        state.centroid = Some(state.embed(&data.train_x).mean_axis(Axis(0)).expect("non-empty training set"));
    }

    let n = data.train_labels.len();
    let mut iterations = 0;
    let mut best_val = f32::INFINITY;
    let mut stale_checks = 0;
    let mut early_stopped = false;
    'epochs: for _ in 0..cfg.epochs {
        let mut order: Vec<usize> = (0..n).collect();
        order.shuffle(rng);
        for batch in order.chunks(cfg.minibatch_size) {
            let xb = data.train_x.select(Axis(0), batch);
            let labels: Vec<usize> = batch.iter().map(|&i| data.train_labels[i]).collect();
            let e = state.embed(&xb);
            iterations += 1;
            if let Objective::Constant = objective {
                // the single-output head has zero loss and zero gradient
                continue;
            }
            let (_, mut de, head_grads) = state.loss(objective, &e, &labels);
            backbone.activation().backprop(&mut de, &e);
            let gw = de.t().dot(&xb);
            let gb = de.sum_axis(Axis(0));
            state.body.step(&gw, &gb, cfg);
            if let (Some(head), Some((hw, hb))) = (state.head.as_mut(), head_grads) {
                head.step(&hw, &hb, cfg);
            }
            if let Some(mu) = state.centroid.as_mut() {
                let batch_mean = e.mean_axis(Axis(0)).expect("non-empty batch");
                *mu = &*mu * 0.9 + &(batch_mean * 0.1);
            }

            if let Some((vx, vl)) = &data.val {
                if iterations % cfg.validation_frequency == 0 {
                    let (val_loss, _, _) = state.loss(objective, &state.embed(vx), vl);
                    if val_loss < best_val {
                        best_val = val_loss;
                        stale_checks = 0;
                    } else {
                        stale_checks += 1;
                        if stale_checks >= cfg.validation_patience {
                            early_stopped = true;
                            break 'epochs;
                        }
                    }
                }
            }
        }
    }

    let trained = !matches!(objective, Objective::Constant);
    Outcome {
        layer: trained.then_some(state.body.layer),
        head: state.head.map(|h| h.layer),
        iterations,
        early_stopped,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::embedding::synthetic_backbone;
    use crate::ErrorKind;

    fn images(n: usize, seed: u64) -> Vec<Image> {
        let mut rng = seeded_rng(seed, 3);
        (0..n)
            .map(|_| Image::from_fn(32, 32, |_, _, _| rng.random::<f32>()))
            .collect()
    }

    fn class0() -> ClassLabel {
        ClassLabel::new(0, "a")
    }

    #[test]
    fn iteration_formula() {
        assert_eq!(planned_iterations(80, 40, 1), 2);
        assert_eq!(planned_iterations(15, 15, 1), 1);
        assert_eq!(planned_iterations(560, 16, 1), 35);
        assert_eq!(planned_iterations(750, 15, 1), 50);
        assert_eq!(planned_iterations(952, 56, 1), 17);
        assert_eq!(planned_iterations(81, 40, 3), 9);
    }

    #[test]
    fn literal_strategy_counts_iterations_and_preserves_backbone() {
        let b = synthetic_backbone(4, 16).unwrap();
        let imgs = images(80, 1);
        let cfg = TrainingConfig::with_minibatch(40, 1);
        let m = train_one_class(&b, &imgs, &class0(), OneClassStrategy::PositiveOnlyLiteral, &cfg, None).unwrap();
        assert_eq!(m.iterations_run(), 2);
        assert!(m.training_seconds() >= 0.0);
        assert!(m.network().shares_weights_with(&b));
        for img in &imgs[..5] {
            assert_eq!(m.network().embed(img).unwrap(), b.embed(img).unwrap());
        }

        let imgs = images(15, 2);
        let cfg = TrainingConfig::with_minibatch(15, 1);
        let m = train_one_class(&b, &imgs, &class0(), OneClassStrategy::PositiveOnlyLiteral, &cfg, None).unwrap();
        assert_eq!(m.iterations_run(), 1);
    }

    #[test]
    fn training_errors() {
        let b = synthetic_backbone(4, 8).unwrap();
        let cfg = TrainingConfig::with_minibatch(4, 1);
        let e = train_one_class(&b, &[], &class0(), OneClassStrategy::PositiveOnlyLiteral, &cfg, None).unwrap_err();
        assert_eq!(e.kind(), ErrorKind::Input);
        let imgs = images(8, 1);
        let e = train_one_class(&b, &imgs, &class0(), OneClassStrategy::BinaryVsOtherClasses, &cfg, None).unwrap_err();
        assert_eq!(e.kind(), ErrorKind::Config);
        let big = TrainingConfig::with_minibatch(9, 1);
        let e = train_one_class(&b, &imgs, &class0(), OneClassStrategy::PositiveOnlyLiteral, &big, None).unwrap_err();
        assert_eq!(e.kind(), ErrorKind::Config);
    }

    #[test]
    fn binary_strategy_trains_and_follows_plan() {
        let b = synthetic_backbone(4, 8).unwrap();
        let pos = images(20, 1);
        let neg = images(20, 2);
        let cfg = TrainingConfig::with_minibatch(8, 2);
        let m = train_one_class(&b, &pos, &class0(), OneClassStrategy::BinaryVsOtherClasses, &cfg, Some(&neg)).unwrap();
        // 40 expanded, 4 held out, 36 effective -> 5 per epoch
        assert_eq!(m.plan().effective, 36);
        assert_eq!(m.iterations_run(), 10);
        assert!(!m.network().shares_weights_with(&b));
        assert_ne!(m.network().embed(&pos[0]).unwrap(), b.embed(&pos[0]).unwrap());
    }

    #[test]
    fn compactness_reduces_spread() {
        let b = synthetic_backbone(4, 8).unwrap();
        let pos = images(30, 5);
        let cfg = TrainingConfig {
            initial_learn_rate: 0.05,
            ..TrainingConfig::with_minibatch(9, 20)
        };
        let spread = |net: &Backbone| {
            let x = net.feature_matrix(&pos);
            let e = net.embed_features(&x);
            let mu = e.mean_axis(Axis(0)).unwrap();
            (&e - &mu.insert_axis(Axis(0))).mapv(|v| v * v).sum()
        };
        let m = train_one_class(&b, &pos, &class0(), OneClassStrategy::Compactness, &cfg, None).unwrap();
        assert!(spread(m.network()) < spread(&b));
    }

    #[test]
    fn seeded_training_is_reproducible() {
        let b = synthetic_backbone(4, 8).unwrap();
        let pos = images(12, 1);
        let neg = images(12, 2);
        let cfg = TrainingConfig::with_minibatch(4, 2);
        let a = train_one_class(&b, &pos, &class0(), OneClassStrategy::BinaryVsOtherClasses, &cfg, Some(&neg)).unwrap();
        let c = train_one_class(&b, &pos, &class0(), OneClassStrategy::BinaryVsOtherClasses, &cfg, Some(&neg)).unwrap();
        for img in &pos {
            let (x, y) = (a.network().embed(img).unwrap(), c.network().embed(img).unwrap());
            assert!(x.iter().zip(y.iter()).all(|(p, q)| (p - q).abs() <= 1e-4));
        }
    }

    #[test]
    fn early_stopping_triggers_on_flat_validation() {
        let b = synthetic_backbone(4, 8).unwrap();
        let pos = images(10, 1);
        let neg = images(10, 2);
        // lr 0 keeps the validation loss constant, so every check after the first is stale
        let cfg = TrainingConfig {
            initial_learn_rate: 0.0,
            validation_frequency: 1,
            validation_patience: 2,
            ..TrainingConfig::with_minibatch(2, 5)
        };
        let m = train_one_class(&b, &pos, &class0(), OneClassStrategy::BinaryVsOtherClasses, &cfg, Some(&neg)).unwrap();
        assert!(m.early_stopped());
        assert_eq!(m.iterations_run(), 3);
    }

    #[test]
    fn multiclass_iterations_and_learning() {
        let b = synthetic_backbone(4, 8).unwrap();
        let per_class: Vec<Vec<Image>> = (0..3).map(|c| images(10, c)).collect();
        let cfg = TrainingConfig::with_minibatch(4, 1);
        let net = train_multiclass(&b, &per_class, &cfg).unwrap();
        assert_eq!(net.iterations_run(), 8);
        assert_eq!(net.class_count(), 3);
        assert!(net.predict(&per_class[0][0]).unwrap() < 3);
        let e = train_multiclass(&b, &per_class[..1], &cfg).unwrap_err();
        assert_eq!(e.kind(), ErrorKind::Config);
    }

    #[test]
    fn negatives_are_spread_over_other_classes() {
        let per_class: Vec<Vec<Image>> = (0..4).map(|c| images(5, c)).collect();
        let neg = sample_negatives(&per_class, 1, 9, 0).unwrap();
        assert_eq!(neg.len(), 9);
        let from = |c: usize| neg.iter().filter(|n| per_class[c].contains(n)).count();
        assert_eq!((from(0), from(1), from(2), from(3)), (3, 0, 3, 3));
        assert!(sample_negatives(&per_class[..1], 0, 3, 0).is_err());
    }
}
