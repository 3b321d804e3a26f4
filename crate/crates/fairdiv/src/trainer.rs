//! Alternating min-max training: a sigmoid-output classifier minimizes
//! binary cross-entropy plus a lambda-weighted divergence penalty between
//! the soft-output distributions of population groups, while per-pair
//! critics (for the variational estimator) maximize the divergence bound in
//! an inner loop.
//!
//! Runs are deterministic given the seed: classifier init, critic init, and
//! batch shuffling each draw from their own seeded stream.

use rand::seq::SliceRandom;

use crate::config::{DatasetConfig, FairnessNotion, RunConfig};
use crate::data::{
    balance_undersample, generate_moons, load_csv, split, split_fixed, standardize, Dataset,
};
use crate::divergence::{conjugate_value, f_derivative, DivergenceKind};
use crate::error::{Error, Result};
use crate::estimators::{
    conventional_estimate, conventional_regularizer_gradient, dre_regularizer_gradient,
    variational_regularizer_gradient, Critic, EstimatorKind, GroupSamples, HistogramRatio,
    RegularizerGrad,
};
use crate::metrics::{accuracy, delta_dp, delta_eo, groupwise_roc_auc, Mode, PredictionSet};
use crate::nn::{Activation, AdamState, DenseNet, ForwardCache, Gradients};
use crate::rng::{seeded, STREAM_CLASSIFIER_INIT, STREAM_CRITIC_INIT, STREAM_SHUFFLE};

/// Soft outputs are kept this far away from 0 and 1 inside the logarithms
/// of the cross-entropy.
pub const BCE_CLIP: f64 = 1e-12;

/// Objective decreases smaller than this still count as non-decreasing when
/// scoring critic ascent runs.
const ASCENT_TOLERANCE: f64 = 1e-12;

/// Fully resolved hyperparameters for one training run.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainSettings {
    pub lambda: f64,
    pub notion: FairnessNotion,
    pub divergence: DivergenceKind,
    pub estimator: EstimatorKind,
    pub epochs: usize,
    pub critic_steps: usize,
    pub batch_size: usize,
    pub classifier_lr: f64,
    pub critic_lr: f64,
    pub seed: u64,
    pub threshold: f64,
    pub eo_include_y0: bool,
    pub dre_bins: usize,
    pub classifier_hidden: Vec<usize>,
    pub critic_hidden: Vec<usize>,
}

impl TrainSettings {
    pub fn from_config(cfg: &RunConfig) -> Result<TrainSettings> {
        cfg.validate()?;
        Ok(TrainSettings {
            lambda: cfg.train.lambda,
            notion: cfg.train.notion()?,
            divergence: cfg.train.divergence()?,
            estimator: cfg.train.estimator()?,
            epochs: cfg.train.epochs,
            critic_steps: cfg.train.critic_steps,
            batch_size: cfg.train.batch_size,
            classifier_lr: cfg.train.classifier_lr,
            critic_lr: cfg.train.critic_lr,
            seed: cfg.train.seed,
            threshold: cfg.train.threshold,
            eo_include_y0: cfg.train.eo_include_y0,
            dre_bins: cfg.train.dre_bins,
            classifier_hidden: cfg.model.classifier_hidden.clone(),
            critic_hidden: cfg.model.critic_hidden.clone(),
        })
    }

    /// Same settings with the sweep-varied fields replaced.
    pub fn with_run(mut self, lambda: f64, seed: u64) -> TrainSettings {
        self.lambda = lambda;
        self.seed = seed;
        self
    }

    /// Short id naming the regularizer setup, e.g. "chi2-nn-dp".
    pub fn method_id(&self) -> String {
        format!("{}-{}-{}", self.divergence, self.estimator, self.notion)
    }

    /// Checks the settings against the datasets they will train on.
    pub fn validate_for(&self, train: &Dataset, test: &Dataset) -> Result<()> {
        let mut issues = Vec::new();
        if !(self.lambda.is_finite() && self.lambda >= 0.0) {
            issues.push(format!("lambda must be a non-negative real, got {}", self.lambda));
        }
        if self.epochs == 0 {
            issues.push("epochs must be at least 1".to_string());
        }
        if self.critic_steps == 0 {
            issues.push("critic_steps must be at least 1".to_string());
        }
        let floor = 2 * train.n_groups();
        if self.batch_size < floor {
            issues.push(format!(
                "batch_size {} is below twice the group count ({floor})",
                self.batch_size
            ));
        }
        for (name, lr) in [("classifier_lr", self.classifier_lr), ("critic_lr", self.critic_lr)] {
            if !(lr.is_finite() && lr > 0.0) {
                issues.push(format!("{name} must be a positive real, got {lr}"));
            }
        }
        if !(self.threshold.is_finite() && (0.0..=1.0).contains(&self.threshold)) {
            issues.push(format!("threshold must lie in [0, 1], got {}", self.threshold));
        }
        if self.dre_bins < 2 {
            issues.push(format!("dre_bins must be at least 2, got {}", self.dre_bins));
        }
        if train.width() != test.width() {
            issues.push(format!(
                "train width {} does not match test width {}",
                train.width(),
                test.width()
            ));
        }
        if issues.is_empty() {
            Ok(())
        } else {
            Err(Error::Config(issues))
        }
    }
}

/// One conditional output population: a group, optionally restricted to one
/// true-label slice.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Condition {
    pub group: usize,
    pub y_slice: Option<bool>,
}

impl Condition {
    pub fn label(&self) -> String {
        match self.y_slice {
            None => format!("z{}", self.group),
            Some(y) => format!("z{}|y={}", self.group, y as u8),
        }
    }

    fn contains(&self, group: usize, label: bool) -> bool {
        self.group == group && self.y_slice.map_or(true, |y| y == label)
    }
}

/// The conditions a notion compares: one per group under demographic
/// parity; one per group restricted to positives under equalized odds, plus
/// the negative slices when `eo_include_y0` is set.
pub fn conditions_for(
    notion: FairnessNotion,
    n_groups: usize,
    eo_include_y0: bool,
) -> Vec<Condition> {
    match notion {
        FairnessNotion::Dp => {
            (0..n_groups).map(|group| Condition { group, y_slice: None }).collect()
        }
        FairnessNotion::Eo => {
            let mut conditions: Vec<Condition> =
                (0..n_groups).map(|group| Condition { group, y_slice: Some(true) }).collect();
            if eo_include_y0 {
                conditions
                    .extend((0..n_groups).map(|group| Condition { group, y_slice: Some(false) }));
            }
            conditions
        }
    }
}

/// An unordered pair of conditions whose divergence is penalized; `i` and
/// `j` index into the condition list.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PairSpec {
    pub i: usize,
    pub j: usize,
}

/// All unordered pairs of distinct groups within the same label slice.
pub fn pair_specs(conditions: &[Condition]) -> Vec<PairSpec> {
    let mut pairs = Vec::new();
    for i in 0..conditions.len() {
        for j in i + 1..conditions.len() {
            if conditions[i].y_slice == conditions[j].y_slice
                && conditions[i].group < conditions[j].group
            {
                pairs.push(PairSpec { i, j });
            }
        }
    }
    pairs
}

pub fn pair_label(conditions: &[Condition], pair: PairSpec) -> String {
    let (a, b) = (conditions[pair.i], conditions[pair.j]);
    match a.y_slice {
        None => format!("d(z{},z{})", a.group, b.group),
        Some(y) => format!("d(z{},z{}|y={})", a.group, b.group, y as u8),
    }
}

/// Sorts each batch position into the condition sets it belongs to.
/// Positions index into `batch_rows`, not into the dataset.
pub fn partition_groups(
    batch_rows: &[usize],
    ds: &Dataset,
    conditions: &[Condition],
) -> Vec<Vec<usize>> {
    let mut sets = vec![Vec::new(); conditions.len()];
    for (pos, &row) in batch_rows.iter().enumerate() {
        let (group, label) = (ds.groups()[row], ds.labels()[row]);
        for (c, cond) in conditions.iter().enumerate() {
            if cond.contains(group, label) {
                sets[c].push(pos);
            }
        }
    }
    sets
}

/// Mean binary cross-entropy of the outputs plus lambda times the summed
/// pair divergence estimates.
pub fn regularized_loss(
    outputs: &[f64],
    labels: &[bool],
    estimates: &[f64],
    lambda: f64,
) -> Result<f64> {
    if outputs.is_empty() || outputs.len() != labels.len() {
        return Err(Error::shape(format!(
            "loss needs matching non-empty outputs and labels, got {} and {}",
            outputs.len(),
            labels.len()
        )));
    }
    if let Some(e) = estimates.iter().find(|e| !e.is_finite()) {
        return Err(Error::Numeric(format!("non-finite divergence estimate {e}")));
    }
    let mut sum = 0.0;
    for (&p, &y) in outputs.iter().zip(labels) {
        let p = p.clamp(BCE_CLIP, 1.0 - BCE_CLIP);
        sum -= if y { p.ln() } else { (1.0 - p).ln() };
    }
    Ok(sum / outputs.len() as f64 + lambda * estimates.iter().sum::<f64>())
}

/// Reusable buffers for one batch step.
#[derive(Debug, Default)]
pub(crate) struct Workspace {
    cache: ForwardCache,
    pub(crate) grads: Gradients,
    input_buf: Vec<f64>,
    upstream: Vec<f64>,
    cond_positions: Vec<Vec<usize>>,
    cond_outputs: Vec<Vec<f64>>,
    /// Per-pair divergence estimate from the latest step; `None` when the
    /// pair was skipped because one of its condition sets was empty.
    pub(crate) pair_values: Vec<Option<f64>>,
}

impl Workspace {
    pub(crate) fn new() -> Self {
        Workspace::default()
    }

    fn outputs(&self) -> &[f64] {
        self.cache.outputs()
    }
}

/// Runs the classifier forward on a batch and splits the soft outputs into
/// condition sets.
pub(crate) fn forward_batch(
    classifier: &DenseNet,
    ds: &Dataset,
    batch_rows: &[usize],
    conditions: &[Condition],
    ws: &mut Workspace,
) -> Result<()> {
    ws.input_buf.clear();
    for &row in batch_rows {
        ws.input_buf.extend_from_slice(ds.row(row));
    }
    classifier.forward_reuse(&ws.input_buf, batch_rows.len(), &mut ws.cache)?;
    ws.cond_positions = partition_groups(batch_rows, ds, conditions);
    ws.cond_outputs.resize_with(conditions.len(), Vec::new);
    for (out, positions) in ws.cond_outputs.iter_mut().zip(&ws.cond_positions) {
        out.clear();
        out.extend(positions.iter().map(|&pos| ws.cache.outputs()[pos]));
    }
    Ok(())
}

/// The estimate and soft-output gradient for one pair under the configured
/// estimator, holding any critic fixed.
fn pair_regularizer(
    settings: &TrainSettings,
    critic: Option<&Critic>,
    gi: &GroupSamples,
    gj: &GroupSamples,
) -> Result<RegularizerGrad> {
    match settings.estimator {
        EstimatorKind::Variational => variational_regularizer_gradient(
            critic.expect("variational estimator requires a critic"),
            gi,
            gj,
        ),
        EstimatorKind::Conventional => {
            conventional_regularizer_gradient(settings.divergence, gi, gj)
        }
        EstimatorKind::DensityRatio => {
            dre_regularizer_gradient(settings.divergence, gi, gj, settings.dre_bins)
        }
    }
}

/// With the critics frozen, assembles the total loss for the batch and
/// leaves its parameter gradient in `ws.grads`: cross-entropy upstream plus
/// lambda-scaled regularizer gradients scattered over the member positions,
/// pulled back through the classifier.
pub(crate) fn classifier_gradient(
    classifier: &DenseNet,
    critics: &[Critic],
    settings: &TrainSettings,
    conditions: &[Condition],
    pairs: &[PairSpec],
    ds: &Dataset,
    batch_rows: &[usize],
    ws: &mut Workspace,
) -> Result<f64> {
    let b = batch_rows.len();
    ws.upstream.clear();
    ws.upstream.resize(b, 0.0);
    let inv_b = 1.0 / b as f64;
    for (pos, &row) in batch_rows.iter().enumerate() {
        let p = ws.cache.outputs()[pos].clamp(BCE_CLIP, 1.0 - BCE_CLIP);
        ws.upstream[pos] =
            if ds.labels()[row] { -inv_b / p } else { inv_b / (1.0 - p) };
    }

    ws.pair_values.clear();
    ws.pair_values.resize(pairs.len(), None);
    let regularize = settings.lambda > 0.0;
    if regularize {
        for (k, pair) in pairs.iter().enumerate() {
            if ws.cond_outputs[pair.i].is_empty() || ws.cond_outputs[pair.j].is_empty() {
                continue;
            }
            let gi = GroupSamples::new(conditions[pair.i].group, &ws.cond_outputs[pair.i])?;
            let gj = GroupSamples::new(conditions[pair.j].group, &ws.cond_outputs[pair.j])?;
            let critic = if settings.estimator == EstimatorKind::Variational {
                Some(&critics[k])
            } else {
                None
            };
            let reg = pair_regularizer(settings, critic, &gi, &gj)?;
            for (&pos, &g) in ws.cond_positions[pair.i].iter().zip(&reg.grad_i) {
                ws.upstream[pos] += settings.lambda * g;
            }
            for (&pos, &g) in ws.cond_positions[pair.j].iter().zip(&reg.grad_j) {
                ws.upstream[pos] += settings.lambda * g;
            }
            ws.pair_values[k] = Some(reg.value);
        }
    }

    let labels: Vec<bool> = batch_rows.iter().map(|&row| ds.labels()[row]).collect();
    let estimates: Vec<f64> = ws.pair_values.iter().flatten().copied().collect();
    let loss = regularized_loss(ws.outputs(), &labels, &estimates, settings.lambda)?;
    classifier.backward_reuse(&ws.cache, &ws.upstream, &mut ws.grads)?;
    Ok(loss)
}

/// Per-epoch training record.
#[derive(Debug, Clone, PartialEq)]
pub struct EpochRecord {
    pub epoch: usize,
    /// Mean per-batch cross-entropy (without the penalty term).
    pub bce: f64,
    /// Mean per-batch divergence estimate for each pair; 0 when the pair
    /// was skipped in every batch of the epoch.
    pub pair_estimates: Vec<f64>,
    /// Running accuracy over the epoch's batches, measured on each batch
    /// before its update.
    pub train_accuracy: f64,
    pub test_accuracy: f64,
    pub test_delta_dp: f64,
    pub test_delta_eo: f64,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct TrainHistory {
    pub pair_labels: Vec<String>,
    pub records: Vec<EpochRecord>,
}

/// Hard-threshold metrics of a classifier on one dataset.
#[derive(Debug, Clone, PartialEq)]
pub struct EvalMetrics {
    pub accuracy: f64,
    pub delta_dp: f64,
    pub delta_eo: f64,
}

fn prediction_set(
    net: &DenseNet,
    ds: &Dataset,
    threshold: f64,
    cache: &mut ForwardCache,
) -> Result<PredictionSet> {
    net.forward_reuse(ds.features(), ds.len(), cache)?;
    PredictionSet::new(
        cache.outputs().to_vec(),
        ds.labels().to_vec(),
        ds.groups().to_vec(),
        threshold,
    )
}

fn evaluate_with(
    net: &DenseNet,
    ds: &Dataset,
    threshold: f64,
    cache: &mut ForwardCache,
) -> Result<EvalMetrics> {
    let preds = prediction_set(net, ds, threshold, cache)?;
    Ok(EvalMetrics {
        accuracy: accuracy(&preds),
        delta_dp: delta_dp(&preds, Mode::Hard)?,
        delta_eo: delta_eo(&preds, Mode::Hard)?,
    })
}

/// Accuracy and both bias gaps at the given threshold.
pub fn evaluate(net: &DenseNet, ds: &Dataset, threshold: f64) -> Result<EvalMetrics> {
    evaluate_with(net, ds, threshold, &mut ForwardCache::new())
}

fn hard_accuracy(
    net: &DenseNet,
    ds: &Dataset,
    threshold: f64,
    cache: &mut ForwardCache,
) -> Result<f64> {
    net.forward_reuse(ds.features(), ds.len(), cache)?;
    let correct = cache
        .outputs()
        .iter()
        .zip(ds.labels())
        .filter(|(&p, &y)| (p >= threshold) == y)
        .count();
    Ok(correct as f64 / ds.len() as f64)
}

/// Per-group area under the score ROC, indexed by group id.
pub fn groupwise_auc(net: &DenseNet, ds: &Dataset, threshold: f64) -> Result<Vec<f64>> {
    let mut cache = ForwardCache::new();
    let preds = prediction_set(net, ds, threshold, &mut cache)?;
    Ok(groupwise_roc_auc(&preds)?.into_iter().map(|roc| roc.auc).collect())
}

/// Everything a finished run produces.
#[derive(Debug)]
pub struct TrainOutput {
    pub classifier: DenseNet,
    /// One trained critic per pair; empty unless the variational estimator
    /// ran with a positive lambda.
    pub critics: Vec<Critic>,
    pub history: TrainHistory,
    /// Hard-threshold accuracy on the training set. The bias gaps are only
    /// reported for the test set; a training set may lack a label slice
    /// inside some group (those pairs are skipped during training) and then
    /// has no defined equalized-odds gap.
    pub train_accuracy: f64,
    pub final_test: EvalMetrics,
    pub group_aucs: Vec<f64>,
    /// Critic ascent runs logged and how many did not decrease their
    /// objective.
    pub ascent_logged: u64,
    pub ascent_improved: u64,
    /// Pair evaluations skipped because a condition set was empty in the
    /// batch.
    pub pair_skips: u64,
}

/// Random classifier for the given input width: SeLU hidden layers, one
/// sigmoid output.
pub fn build_classifier(width: usize, hidden: &[usize], seed: u64) -> Result<DenseNet> {
    let mut dims = vec![width];
    dims.extend_from_slice(hidden);
    dims.push(1);
    DenseNet::new(
        &dims,
        Activation::Selu,
        Activation::Sigmoid,
        &mut seeded(seed, STREAM_CLASSIFIER_INIT),
    )
}

/// The alternating loop. Per batch: the critics take `critic_steps` ascent
/// steps on the frozen classifier's outputs (variational estimator only),
/// then the classifier takes one Adam step on the regularized loss with the
/// critics frozen. Critics persist across batches and epochs.
pub fn train_fair(settings: &TrainSettings, train: &Dataset, test: &Dataset) -> Result<TrainOutput> {
    settings.validate_for(train, test)?;
    let conditions = conditions_for(settings.notion, train.n_groups(), settings.eo_include_y0);
    let pairs = pair_specs(&conditions);
    let regularize = settings.lambda > 0.0 && !pairs.is_empty();

    let mut classifier =
        build_classifier(train.width(), &settings.classifier_hidden, settings.seed)?;
    let mut opt = AdamState::new(&classifier, settings.classifier_lr);
    let mut critics: Vec<Critic> =
        if regularize && settings.estimator == EstimatorKind::Variational {
            let mut rng = seeded(settings.seed, STREAM_CRITIC_INIT);
            pairs
                .iter()
                .map(|_| {
                    Critic::new(
                        settings.divergence,
                        &settings.critic_hidden,
                        settings.critic_lr,
                        &mut rng,
                    )
                })
                .collect::<Result<_>>()?
        } else {
            Vec::new()
        };

    let mut shuffle_rng = seeded(settings.seed, STREAM_SHUFFLE);
    let mut order: Vec<usize> = (0..train.len()).collect();
    let mut ws = Workspace::new();
    let mut eval_cache = ForwardCache::new();
    let mut history = TrainHistory {
        pair_labels: pairs.iter().map(|&p| pair_label(&conditions, p)).collect(),
        records: Vec::with_capacity(settings.epochs),
    };
    let (mut ascent_logged, mut ascent_improved, mut pair_skips) = (0u64, 0u64, 0u64);

    for epoch in 0..settings.epochs {
        order.shuffle(&mut shuffle_rng);
        let mut bce_sum = 0.0;
        let mut batches = 0usize;
        let mut correct = 0usize;
        let mut est_sums = vec![0.0; pairs.len()];
        let mut est_counts = vec![0usize; pairs.len()];

        for batch_rows in order.chunks(settings.batch_size) {
            forward_batch(&classifier, train, batch_rows, &conditions, &mut ws)?;
            for (pos, &row) in batch_rows.iter().enumerate() {
                if (ws.outputs()[pos] >= settings.threshold) == train.labels()[row] {
                    correct += 1;
                }
            }

            if regularize && settings.estimator == EstimatorKind::Variational {
                for (k, pair) in pairs.iter().enumerate() {
                    if ws.cond_outputs[pair.i].is_empty() || ws.cond_outputs[pair.j].is_empty() {
                        continue;
                    }
                    let gi =
                        GroupSamples::new(conditions[pair.i].group, &ws.cond_outputs[pair.i])?;
                    let gj =
                        GroupSamples::new(conditions[pair.j].group, &ws.cond_outputs[pair.j])?;
                    let outcome = critics[k].ascend(&gi, &gj, settings.critic_steps)?;
                    ascent_logged += 1;
                    if outcome.after >= outcome.before - ASCENT_TOLERANCE {
                        ascent_improved += 1;
                    }
                }
            }

            let loss = classifier_gradient(
                &classifier,
                &critics,
                settings,
                &conditions,
                &pairs,
                train,
                batch_rows,
                &mut ws,
            )
            .map_err(|e| trainer_context(e, epoch, batches))?;
            if !loss.is_finite() {
                return Err(Error::Numeric(format!(
                    "loss became {loss} at epoch {epoch}, batch {batches}"
                )));
            }
            if regularize {
                for (k, value) in ws.pair_values.iter().enumerate() {
                    match value {
                        Some(v) => {
                            est_sums[k] += v;
                            est_counts[k] += 1;
                        }
                        None => pair_skips += 1,
                    }
                }
            }
            // Mean cross-entropy alone, for the history record.
            bce_sum += loss - settings.lambda * est_sums_for_batch(&ws.pair_values);
            batches += 1;

            opt.step(&mut classifier, &ws.grads)?;
            if !classifier.all_finite() {
                return Err(Error::Numeric(format!(
                    "classifier parameters became non-finite at epoch {epoch}, batch {batches}"
                )));
            }
        }

        let test_eval = evaluate_with(&classifier, test, settings.threshold, &mut eval_cache)
            .map_err(|e| trainer_context(e, epoch, batches))?;
        history.records.push(EpochRecord {
            epoch,
            bce: bce_sum / batches as f64,
            pair_estimates: est_sums
                .iter()
                .zip(&est_counts)
                .map(|(&s, &c)| if c == 0 { 0.0 } else { s / c as f64 })
                .collect(),
            train_accuracy: correct as f64 / train.len() as f64,
            test_accuracy: test_eval.accuracy,
            test_delta_dp: test_eval.delta_dp,
            test_delta_eo: test_eval.delta_eo,
        });
    }

    let train_accuracy = hard_accuracy(&classifier, train, settings.threshold, &mut eval_cache)?;
    let final_test = evaluate_with(&classifier, test, settings.threshold, &mut eval_cache)?;
    let group_aucs = groupwise_auc(&classifier, test, settings.threshold)?;
    Ok(TrainOutput {
        classifier,
        critics,
        history,
        train_accuracy,
        final_test,
        group_aucs,
        ascent_logged,
        ascent_improved,
        pair_skips,
    })
}

fn est_sums_for_batch(pair_values: &[Option<f64>]) -> f64 {
    pair_values.iter().flatten().sum()
}

fn trainer_context(err: Error, epoch: usize, batch: usize) -> Error {
    match err {
        Error::Numeric(msg) => {
            Error::Numeric(format!("{msg} (epoch {epoch}, batch {batch})"))
        }
        other => other,
    }
}

/// Which bias gap the notion's frontier tracks.
pub fn bias_for(notion: FairnessNotion, eval: &EvalMetrics) -> f64 {
    match notion {
        FairnessNotion::Dp => eval.delta_dp,
        FairnessNotion::Eo => eval.delta_eo,
    }
}

/// Undrawn dataset source shared by every run of a sweep. Moon data depends
/// on the run seed, so only its parameters are stored; a CSV file is loaded
/// once.
#[derive(Debug, Clone)]
pub enum BaseData {
    Moon { n: usize, noise_sd: f64 },
    Loaded(Dataset),
}

pub fn base_data(cfg: &DatasetConfig) -> Result<BaseData> {
    match cfg.kind.as_str() {
        "moon" => Ok(BaseData::Moon { n: cfg.n, noise_sd: cfg.noise_sd }),
        "csv" => {
            let path = cfg
                .path
                .as_ref()
                .ok_or_else(|| Error::config("dataset.path: required when kind = \"csv\""))?;
            let schema = cfg
                .schema
                .as_ref()
                .ok_or_else(|| Error::config("dataset.schema: required when kind = \"csv\""))?;
            Ok(BaseData::Loaded(load_csv(path, schema)?))
        }
        other => Err(Error::config(format!("dataset.kind: unknown kind {other:?}"))),
    }
}

/// Draws, balances, splits, and standardizes the datasets for one run. All
/// stochastic stages are driven by the run seed on their own streams.
pub fn realize_datasets(
    cfg: &DatasetConfig,
    base: &BaseData,
    seed: u64,
) -> Result<(Dataset, Dataset)> {
    let full = match base {
        BaseData::Moon { n, noise_sd } => generate_moons(*n, *noise_sd, seed)?,
        BaseData::Loaded(ds) => ds.clone(),
    };
    let full = if cfg.balance { balance_undersample(&full, seed)? } else { full };
    let (train, test) = match (cfg.n_train, cfg.n_test) {
        (Some(a), Some(b)) => split_fixed(&full, a, b, seed)?,
        _ => split(&full, cfg.train_fraction, seed)?,
    };
    if cfg.standardize {
        let (train, test, _) = standardize(&train, &test)?;
        Ok((train, test))
    } else {
        Ok((train, test))
    }
}

/// Success payload of one sweep run: the final metrics, without the model.
#[derive(Debug, Clone, PartialEq)]
pub struct RunSummary {
    pub train_accuracy: f64,
    pub test: EvalMetrics,
    pub group_aucs: Vec<f64>,
    pub final_pair_estimates: Vec<f64>,
    pub pair_labels: Vec<String>,
    pub ascent_logged: u64,
    pub ascent_improved: u64,
    pub pair_skips: u64,
}

/// One grid cell of a sweep. Failed runs carry the error text instead of
/// metrics.
#[derive(Debug, Clone)]
pub struct SweepRun {
    pub lambda: f64,
    pub seed: u64,
    pub wall_seconds: f64,
    pub outcome: std::result::Result<RunSummary, String>,
}

fn run_once(
    settings: &TrainSettings,
    dataset_cfg: &DatasetConfig,
    base: &BaseData,
) -> Result<RunSummary> {
    let (train, test) = realize_datasets(dataset_cfg, base, settings.seed)?;
    let out = train_fair(settings, &train, &test)?;
    let last = out.history.records.last();
    Ok(RunSummary {
        train_accuracy: out.train_accuracy,
        test: out.final_test,
        group_aucs: out.group_aucs,
        final_pair_estimates: last.map(|r| r.pair_estimates.clone()).unwrap_or_default(),
        pair_labels: out.history.pair_labels,
        ascent_logged: out.ascent_logged,
        ascent_improved: out.ascent_improved,
        pair_skips: out.pair_skips,
    })
}

/// Independent training runs over every (lambda, seed) combination, in grid
/// order (lambda-major). Individual run failures are recorded and the sweep
/// continues.
pub fn sweep(cfg: &RunConfig) -> Result<Vec<SweepRun>> {
    let template = TrainSettings::from_config(cfg)?;
    let base = base_data(&cfg.dataset)?;
    let combos: Vec<(f64, u64)> = cfg
        .sweep
        .lambda_grid
        .iter()
        .flat_map(|&l| cfg.sweep.seeds.iter().map(move |&s| (l, s)))
        .collect();

    let run_cell = |&(lambda, seed): &(f64, u64)| -> SweepRun {
        let started = std::time::Instant::now();
        let settings = template.clone().with_run(lambda, seed);
        let outcome = run_once(&settings, &cfg.dataset, &base).map_err(|e| e.to_string());
        SweepRun { lambda, seed, wall_seconds: started.elapsed().as_secs_f64(), outcome }
    };

    if cfg.sweep.workers == 1 {
        return Ok(combos.iter().map(run_cell).collect());
    }
    let pool = {
        let mut builder = rayon::ThreadPoolBuilder::new();
        if cfg.sweep.workers > 0 {
            builder = builder.num_threads(cfg.sweep.workers);
        }
        builder
            .build()
            .map_err(|e| Error::config(format!("sweep.workers: cannot build pool: {e}")))?
    };
    use rayon::prelude::*;
    Ok(pool.install(|| combos.par_iter().map(run_cell).collect()))
}

/// The low-bias threshold implied by a sweep: the mean bias of the
/// successful unconstrained runs, or `None` when there are none.
pub fn unconstrained_zeta(runs: &[SweepRun], notion: FairnessNotion) -> Option<f64> {
    let biases: Vec<f64> = runs
        .iter()
        .filter(|r| r.lambda == 0.0)
        .filter_map(|r| r.outcome.as_ref().ok())
        .map(|s| bias_for(notion, &s.test))
        .collect();
    if biases.is_empty() {
        None
    } else {
        Some(biases.iter().sum::<f64>() / biases.len() as f64)
    }
}

/// The objective whose parameter gradient `classifier_gradient` assembles,
/// with the regularizer's internal state frozen at the base point: the
/// critic network for the variational estimator, and the interpolated
/// histogram ratio (acting as the implicit critic f'(r) in the variational
/// form) for the histogram estimator. The plug-in estimator is
/// differentiated through directly.
#[allow(clippy::too_many_arguments)]
fn frozen_objective(
    classifier: &DenseNet,
    critics: &[Critic],
    base_hists: &[Option<HistogramRatio>],
    settings: &TrainSettings,
    conditions: &[Condition],
    pairs: &[PairSpec],
    ds: &Dataset,
    batch: &[usize],
    ws: &mut Workspace,
) -> Result<f64> {
    forward_batch(classifier, ds, batch, conditions, ws)?;
    let labels: Vec<bool> = batch.iter().map(|&r| ds.labels()[r]).collect();
    let bce = regularized_loss(ws.cache.outputs(), &labels, &[], 0.0)?;
    let mut reg = 0.0;
    for (k, pair) in pairs.iter().enumerate() {
        let gi = GroupSamples::new(conditions[pair.i].group, &ws.cond_outputs[pair.i])?;
        let gj = GroupSamples::new(conditions[pair.j].group, &ws.cond_outputs[pair.j])?;
        reg += match settings.estimator {
            EstimatorKind::Variational => critics[k].objective(&gi, &gj)?,
            EstimatorKind::Conventional => {
                conventional_estimate(settings.divergence, &gi, &gj)?
            }
            EstimatorKind::DensityRatio => {
                let hist = base_hists[k]
                    .as_ref()
                    .ok_or_else(|| Error::shape("missing base histogram".to_string()))?;
                let mut mean_i = 0.0;
                for &x in gi.values() {
                    mean_i += f_derivative(settings.divergence, hist.interpolated_ratio(x))?;
                }
                let mut mean_j = 0.0;
                for &x in gj.values() {
                    let t = f_derivative(settings.divergence, hist.interpolated_ratio(x))?;
                    mean_j += conjugate_value(settings.divergence, t)?;
                }
                mean_i / gi.len() as f64 - mean_j / gj.len() as f64
            }
        };
    }
    Ok(bce + settings.lambda * reg)
}

/// Verification helper: compares the assembled analytic gradient against
/// central finite differences of the frozen-state objective over every
/// weight and bias, using the whole dataset as one batch. Returns the
/// worst relative error.
pub fn gradient_check(
    settings: &TrainSettings,
    ds: &Dataset,
    classifier: &DenseNet,
    critics: &[Critic],
    step: f64,
) -> Result<f64> {
    let batch: Vec<usize> = (0..ds.len()).collect();
    let conditions = conditions_for(settings.notion, ds.n_groups(), settings.eo_include_y0);
    let pairs = pair_specs(&conditions);
    if settings.estimator == EstimatorKind::Variational && critics.len() != pairs.len() {
        return Err(Error::shape(format!(
            "{} critics supplied for {} pairs",
            critics.len(),
            pairs.len()
        )));
    }

    let mut ws = Workspace::new();
    forward_batch(classifier, ds, &batch, &conditions, &mut ws)?;
    let mut base_hists: Vec<Option<HistogramRatio>> = Vec::with_capacity(pairs.len());
    for pair in &pairs {
        if settings.estimator != EstimatorKind::DensityRatio {
            base_hists.push(None);
            continue;
        }
        let gi = GroupSamples::new(conditions[pair.i].group, &ws.cond_outputs[pair.i])?;
        let gj = GroupSamples::new(conditions[pair.j].group, &ws.cond_outputs[pair.j])?;
        base_hists.push(Some(HistogramRatio::from_groups(&gi, &gj, settings.dre_bins)?));
    }
    classifier_gradient(classifier, critics, settings, &conditions, &pairs, ds, &batch, &mut ws)?;

    let mut fd_ws = Workspace::new();
    let mut worst: f64 = 0.0;
    for weights_pass in [true, false] {
        let layers = if weights_pass { ws.grads.weights.len() } else { ws.grads.biases.len() };
        for layer in 0..layers {
            let len = if weights_pass {
                ws.grads.weights[layer].len()
            } else {
                ws.grads.biases[layer].len()
            };
            for idx in 0..len {
                let mut probe = |delta: f64| -> Result<f64> {
                    let mut net = classifier.clone();
                    if weights_pass {
                        net.weights_mut()[layer][idx] += delta;
                    } else {
                        net.biases_mut()[layer][idx] += delta;
                    }
                    frozen_objective(
                        &net, critics, &base_hists, settings, &conditions, &pairs, ds, &batch,
                        &mut fd_ws,
                    )
                };
                let fd = (probe(step)? - probe(-step)?) / (2.0 * step);
                let analytic = if weights_pass {
                    ws.grads.weights[layer][idx]
                } else {
                    ws.grads.biases[layer][idx]
                };
                let rel = (fd - analytic).abs() / fd.abs().max(analytic.abs()).max(1.0);
                worst = worst.max(rel);
            }
        }
    }
    Ok(worst)
}
