//! The open-world recognition driver: initial training, unknown discovery,
//! oracle-backed incremental class extension, and open/closed-world
//! evaluation.
//!
//! Per-batch training order follows the online recipe: compute the loss and
//! update the network first, then fold the batch's (re-embedded) features
//! into the class means, then fold the batch's ground-truth scores into the
//! rejection threshold. A class appearing for the first time is seeded from
//! its batch features before the loss so every score it needs exists; each
//! sample is absorbed into the means exactly once per batch either way.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use crate::baselines::{
    select_tau, select_tau_cross_validation, LinearMetric, NnoBaseline, NnoParams,
};
use crate::config::{RunConfig, TauSelection};
use crate::dataset::{ClassId, Dataset, LabeledSample, OpenWorldSplit};
use crate::embedding::{EmbeddingNetwork, NetworkSnapshot, SgdOptimizer};
use crate::error::{Error, Result};
use crate::losses::{total_loss, LossBreakdown};
use crate::memory::{relevance, ExemplarMemory};
use crate::metrics::{MetricsRecord, MetricsSink};
use crate::oracle::LabelOracle;
use crate::prototypes::PrototypeStore;
use crate::rejection::{
    batch_class_average, predict_deepnno, update_threshold, Prediction, RejectionWeights,
    ThresholdState,
};
use crate::rng::SplitMix64;
use crate::sampler::{sample_batch, BatchSpec};

/// The full incremental model: network, prototypes, threshold, exemplar
/// memory and the known-class set, advancing one incremental step at a time.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct OwrState {
    pub known_classes: BTreeSet<ClassId>,
    pub network: EmbeddingNetwork,
    pub snapshot: Option<NetworkSnapshot>,
    pub prototypes: PrototypeStore,
    pub threshold: ThresholdState,
    pub memory: ExemplarMemory,
    pub incremental_step: u64,
    /// Inputs whose prediction was Unknown, queued for oracle querying.
    pub pending_unknowns: Vec<Vec<f64>>,
}

/// Anything that can classify raw inputs against a known-class set.
pub trait Classifier {
    fn classify(&self, input: &[f64]) -> Result<Prediction>;
    fn known_classes(&self) -> BTreeSet<ClassId>;
}

impl OwrState {
    /// Fresh, untrained state over the declared initial classes.
    pub fn new(
        network: EmbeddingNetwork,
        initial_classes: BTreeSet<ClassId>,
        memory_capacity: usize,
    ) -> Result<Self> {
        if initial_classes.is_empty() {
            return Err(Error::Config("initial class set is empty".into()));
        }
        if memory_capacity == 0 {
            return Err(Error::Config("memory_capacity must be positive".into()));
        }
        let dim = network.output_dim();
        Ok(OwrState {
            known_classes: initial_classes,
            network,
            snapshot: None,
            prototypes: PrototypeStore::new(dim),
            threshold: ThresholdState::new(),
            memory: ExemplarMemory::new(memory_capacity),
            incremental_step: 0,
            pending_unknowns: Vec::new(),
        })
    }

    pub fn is_trained(&self) -> bool {
        !self.prototypes.is_empty()
    }

    /// Classifies a raw input (embed, then thresholded prototype scores).
    pub fn classify(&self, input: &[f64]) -> Result<Prediction> {
        let feature = self.network.forward(input)?;
        predict_deepnno(&self.prototypes, &self.threshold, &feature)
    }

    /// Classifies and queues the input for oracle querying when rejected.
    pub fn discover(&mut self, input: &[f64]) -> Result<Prediction> {
        if !self.is_trained() {
            return Err(Error::Protocol("discover on an untrained state".into()));
        }
        let prediction = self.classify(input)?;
        if prediction.is_unknown() {
            self.pending_unknowns.push(input.to_vec());
        }
        Ok(prediction)
    }

    /// Drains the queue of rejected inputs.
    pub fn take_pending(&mut self) -> Vec<Vec<f64>> {
        std::mem::take(&mut self.pending_unknowns)
    }

    /// Structural validation after deserialization.
    pub fn validate(&self) -> Result<()> {
        self.network.validate()?;
        self.prototypes.validate()?;
        self.memory.validate()?;
        if self.prototypes.dim() != self.network.output_dim() {
            return Err(Error::Schema(
                "prototype dimension disagrees with the network output".into(),
            ));
        }
        if self.is_trained() {
            let proto_keys: BTreeSet<ClassId> = self.prototypes.class_ids().cloned().collect();
            if proto_keys != self.known_classes {
                return Err(Error::Schema(
                    "prototype keys disagree with the known-class set".into(),
                ));
            }
        }
        if !self.threshold.theta.is_finite() || !(0.0..=1.0).contains(&self.threshold.theta) {
            return Err(Error::Schema("threshold outside [0, 1]".into()));
        }
        match &self.snapshot {
            Some(snap) => {
                snap.validate()?;
                if self.incremental_step == 0 {
                    return Err(Error::Schema(
                        "snapshot present before any incremental step".into(),
                    ));
                }
                if !snap.architecture_matches(&self.network) {
                    return Err(Error::Schema("snapshot architecture mismatch".into()));
                }
            }
            None => {
                if self.incremental_step > 0 {
                    return Err(Error::Schema(
                        "snapshot missing after an incremental step".into(),
                    ));
                }
            }
        }
        for sample in self.memory.iter_samples() {
            if sample.input.len() != self.network.input_dim() {
                return Err(Error::Schema("memory sample dimension mismatch".into()));
            }
        }
        Ok(())
    }
}

impl Classifier for OwrState {
    fn classify(&self, input: &[f64]) -> Result<Prediction> {
        OwrState::classify(self, input)
    }

    fn known_classes(&self) -> BTreeSet<ClassId> {
        self.known_classes.clone()
    }
}

impl Classifier for NnoBaseline {
    fn classify(&self, input: &[f64]) -> Result<Prediction> {
        NnoBaseline::classify(self, input)
    }

    fn known_classes(&self) -> BTreeSet<ClassId> {
        NnoBaseline::known_classes(self)
    }
}

/// Accuracy summary of one evaluation pass.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    /// Accuracy over known-label samples only; rejecting a known sample
    /// counts as an error.
    pub closed_world_accuracy: f64,
    /// Accuracy over all samples; an unknown-label sample is correct only
    /// when rejected.
    pub open_world_accuracy: f64,
    /// Fraction of unknown-label samples that were rejected.
    pub rejection_rate_unknown: f64,
    /// Fraction of known-label samples that were wrongly rejected.
    pub false_rejection_rate_known: f64,
    pub per_class_accuracy: BTreeMap<ClassId, f64>,
}

/// Scores a classifier on a mixed test set. Labels outside the classifier's
/// known set count as unknown and are correct only when rejected.
pub fn evaluate<C: Classifier + ?Sized>(
    classifier: &C,
    test: &[LabeledSample],
) -> Result<EvalReport> {
    if test.is_empty() {
        return Err(Error::EmptyData("evaluation on an empty test set".into()));
    }
    let known = classifier.known_classes();
    let mut known_total = 0usize;
    let mut known_correct = 0usize;
    let mut known_rejected = 0usize;
    let mut unknown_total = 0usize;
    let mut unknown_rejected = 0usize;
    let mut per_class: BTreeMap<ClassId, (usize, usize)> = BTreeMap::new();

    for sample in test {
        let prediction = classifier.classify(&sample.input)?;
        if known.contains(&sample.label) {
            known_total += 1;
            let entry = per_class.entry(sample.label.clone()).or_insert((0, 0));
            entry.1 += 1;
            match &prediction {
                Prediction::Known(k) if *k == sample.label => {
                    known_correct += 1;
                    entry.0 += 1;
                }
                Prediction::Known(_) => {}
                Prediction::Unknown => known_rejected += 1,
            }
        } else {
            unknown_total += 1;
            if prediction.is_unknown() {
                unknown_rejected += 1;
            }
        }
    }

    let ratio = |num: usize, den: usize| {
        if den == 0 {
            0.0
        } else {
            num as f64 / den as f64
        }
    };
    Ok(EvalReport {
        closed_world_accuracy: ratio(known_correct, known_total),
        open_world_accuracy: ratio(known_correct + unknown_rejected, test.len()),
        rejection_rate_unknown: ratio(unknown_rejected, unknown_total),
        false_rejection_rate_known: ratio(known_rejected, known_total),
        per_class_accuracy: per_class
            .into_iter()
            .map(|(k, (c, n))| (k, c as f64 / n as f64))
            .collect(),
    })
}

/// Batches per epoch: enough draws that the expected coverage of the new
/// data is one pass, given the share of each batch reserved for memory.
fn batches_per_epoch(new_len: usize, spec: &BatchSpec, memory_len: usize) -> usize {
    let mem_take = spec.memory_share().min(memory_len);
    let new_share = (spec.batch_size - mem_take).max(1);
    new_len.div_ceil(new_share).max(1)
}

/// One training batch: loss/backprop/update, then means, then threshold.
fn process_batch(
    state: &mut OwrState,
    batch: &[LabeledSample],
    lambda: f64,
    rejection: &RejectionWeights,
    optimizer: &mut SgdOptimizer,
) -> Result<LossBreakdown> {
    // classes making their first appearance are seeded from this batch's
    // current features so the loss has a prototype for every batch label
    let mut seeded: BTreeSet<ClassId> = BTreeSet::new();
    for sample in batch {
        if !state.prototypes.contains(&sample.label) {
            seeded.insert(sample.label.clone());
        }
    }
    if !seeded.is_empty() {
        let mut boot: Vec<(ClassId, Vec<f64>)> = Vec::new();
        for sample in batch {
            if seeded.contains(&sample.label) {
                boot.push((
                    sample.label.clone(),
                    state.network.forward(&sample.input)?.into_vec(),
                ));
            }
        }
        state
            .prototypes
            .update_means(boot.iter().map(|(k, f)| (k, f.as_slice())))?;
    }

    let (breakdown, grads) = total_loss(
        batch,
        &state.network,
        state.snapshot.as_ref(),
        &state.prototypes,
        lambda,
    )?;
    optimizer.step(&mut state.network, &grads)?;

    // re-embed with the updated parameters, absorb into the running means
    // (skipping classes already absorbed by this batch's seeding pass)
    let mut features: Vec<(ClassId, Vec<f64>)> = Vec::with_capacity(batch.len());
    for sample in batch {
        features.push((
            sample.label.clone(),
            state.network.forward(&sample.input)?.into_vec(),
        ));
    }
    state.prototypes.update_means(
        features
            .iter()
            .filter(|(k, _)| !seeded.contains(k))
            .map(|(k, f)| (k, f.as_slice())),
    )?;

    // threshold update from the ground-truth scores, weighted against the
    // pre-update threshold
    let theta = state.threshold.theta;
    let mut by_class: BTreeMap<&ClassId, Vec<f64>> = BTreeMap::new();
    for (class, feature) in &features {
        let score = state.prototypes.probability_score(class, feature)?;
        by_class.entry(class).or_default().push(score);
    }
    let averages: Vec<f64> = by_class
        .values()
        .filter_map(|scores| batch_class_average(scores, theta, rejection))
        .collect();
    update_threshold(&mut state.threshold, &averages);

    Ok(breakdown)
}

fn mean_breakdown(parts: &[LossBreakdown]) -> Option<LossBreakdown> {
    if parts.is_empty() {
        return None;
    }
    let n = parts.len() as f64;
    let classification = parts.iter().map(|b| b.classification).sum::<f64>() / n;
    let distillation = parts.iter().map(|b| b.distillation).sum::<f64>() / n;
    let lambda = parts[0].lambda;
    Some(LossBreakdown {
        classification,
        distillation,
        lambda,
        total: classification + lambda * distillation,
    })
}

#[allow(clippy::too_many_arguments)]
fn run_training_phase(
    state: &mut OwrState,
    new_data: &[LabeledSample],
    epochs: usize,
    lambda: f64,
    phase: &str,
    cfg: &RunConfig,
    rng: &mut SplitMix64,
    metrics: &mut dyn MetricsSink,
) -> Result<()> {
    let mut optimizer = SgdOptimizer::new(cfg.sgd)?;
    for epoch in 0..epochs {
        if cfg.reset_counts_per_epoch {
            state.prototypes.reset_counts();
        }
        let num_batches = batches_per_epoch(new_data.len(), &cfg.batch, state.memory.total_len());
        let mut parts = Vec::with_capacity(num_batches);
        for _ in 0..num_batches {
            let batch = sample_batch(&state.memory, new_data, &cfg.batch, rng)?;
            parts.push(process_batch(
                state,
                &batch,
                lambda,
                &cfg.rejection,
                &mut optimizer,
            )?);
        }
        metrics.emit(&MetricsRecord {
            phase: phase.into(),
            step: state.incremental_step,
            epoch: Some(epoch as u64),
            loss: mean_breakdown(&parts),
            theta: state.threshold.theta,
            accuracies: None,
        })?;
    }
    Ok(())
}

/// Ensures every declared class has a prototype (covers the corner case of
/// a class never drawn by the sampler).
fn backfill_missing_prototypes(state: &mut OwrState, data: &[LabeledSample]) -> Result<()> {
    let missing: Vec<&LabeledSample> = data
        .iter()
        .filter(|s| !state.prototypes.contains(&s.label))
        .collect();
    if missing.is_empty() {
        return Ok(());
    }
    let mut feats: Vec<(ClassId, Vec<f64>)> = Vec::new();
    for sample in missing {
        feats.push((
            sample.label.clone(),
            state.network.forward(&sample.input)?.into_vec(),
        ));
    }
    state
        .prototypes
        .update_means(feats.iter().map(|(k, f)| (k, f.as_slice())))
}

/// Replaces each class mean with the offline average of its memory
/// exemplars' current features (optional end-of-phase recomputation).
fn recompute_means_from_memory(state: &mut OwrState) -> Result<()> {
    let classes: Vec<ClassId> = state.prototypes.class_ids().cloned().collect();
    for class in classes {
        let Some(exemplars) = state.memory.class_exemplars(&class) else {
            continue;
        };
        if exemplars.is_empty() {
            continue;
        }
        let dim = state.prototypes.dim();
        let mut sum = vec![0.0; dim];
        let mut count = 0u64;
        for e in exemplars {
            let f = state.network.forward(&e.sample.input)?;
            for (s, v) in sum.iter_mut().zip(f.as_slice()) {
                *s += v;
            }
            count += 1;
        }
        let mean: Vec<f64> = sum.iter().map(|s| s / count as f64).collect();
        state.prototypes.set_prototype(class, mean, count)?;
    }
    Ok(())
}

/// Scores `samples` by current relevance and stores them under `class`,
/// merging with any exemplars the class already has.
fn admit_or_merge_class(
    state: &mut OwrState,
    class: &ClassId,
    samples: &[LabeledSample],
) -> Result<()> {
    let mut pool: Vec<LabeledSample> = state
        .memory
        .remove_class(class)
        .map(|old| old.into_iter().map(|e| e.sample).collect())
        .unwrap_or_default();
    pool.extend(samples.iter().cloned());
    let mut scored = Vec::with_capacity(pool.len());
    for sample in pool {
        let d = relevance(&state.prototypes, &state.network, &sample)?;
        scored.push((sample, d));
    }
    state.memory.admit_class(class.clone(), scored)
}

/// Trains the initial model on `dataset`, whose labels must exactly cover
/// the declared initial classes. Classification loss only (no snapshot
/// exists yet); class means and the threshold update batch by batch from
/// the start; afterwards the exemplar memory is populated and pruned.
pub fn train_initial(
    state: &mut OwrState,
    dataset: &Dataset,
    cfg: &RunConfig,
    rng: &mut SplitMix64,
    metrics: &mut dyn MetricsSink,
) -> Result<()> {
    if state.is_trained() || state.incremental_step > 0 {
        return Err(Error::Protocol("train_initial on a non-fresh state".into()));
    }
    if dataset.dim() != state.network.input_dim() {
        return Err(Error::InputShape {
            expected: state.network.input_dim(),
            got: dataset.dim(),
        });
    }
    let labels = dataset.class_ids();
    if labels != state.known_classes {
        for label in &labels {
            if !state.known_classes.contains(label) {
                return Err(Error::Protocol(format!(
                    "training label `{label}` is outside the declared initial classes"
                )));
            }
        }
        return Err(Error::Protocol(
            "some declared initial classes have no training data".into(),
        ));
    }

    run_training_phase(
        state,
        dataset.samples(),
        cfg.epochs_initial,
        0.0,
        "initial",
        cfg,
        rng,
        metrics,
    )?;
    backfill_missing_prototypes(state, dataset.samples())?;

    // populate the exemplar memory with the most relevant samples per class
    let mut by_class: BTreeMap<ClassId, Vec<LabeledSample>> = BTreeMap::new();
    for sample in dataset.samples() {
        by_class
            .entry(sample.label.clone())
            .or_default()
            .push(sample.clone());
    }
    for (class, samples) in by_class {
        admit_or_merge_class(state, &class, &samples)?;
    }
    state.memory.prune(state.known_classes.len());

    if cfg.recompute_means_from_memory {
        recompute_means_from_memory(state)?;
    }
    state.validate()
}

/// What one incremental step did.
#[derive(Debug, Clone, PartialEq)]
pub struct StepReport {
    pub label: ClassId,
    /// The oracle returned a label that was already known; its data was
    /// merged into the existing class.
    pub oracle_collision: bool,
    pub training_samples: usize,
}

/// One incremental step: query the oracle for the trigger sample, snapshot
/// the network, fine-tune on the oracle data with memory rehearsal and
/// distillation, extend the known-class set, and re-quota the memory.
pub fn incremental_step(
    state: &mut OwrState,
    oracle: &mut dyn LabelOracle,
    trigger: &[f64],
    cfg: &RunConfig,
    rng: &mut SplitMix64,
    metrics: &mut dyn MetricsSink,
) -> Result<StepReport> {
    if !state.is_trained() {
        return Err(Error::Protocol(
            "incremental step before initial training".into(),
        ));
    }
    let response = oracle.query(trigger)?;
    if response.samples.is_empty() {
        return Err(Error::Protocol(format!(
            "oracle returned no training data for `{}`",
            response.label
        )));
    }
    let label = response.label.clone();
    let oracle_collision = state.known_classes.contains(&label);
    state.known_classes.insert(label.clone());

    state.snapshot = Some(state.network.snapshot());
    if cfg.reset_threshold_per_step {
        state.threshold = ThresholdState::new();
    }
    if cfg.reset_counts_per_phase {
        state.prototypes.reset_counts();
    }

    run_training_phase(
        state,
        &response.samples,
        cfg.epochs_incremental,
        cfg.lambda,
        "incremental",
        cfg,
        rng,
        metrics,
    )?;
    backfill_missing_prototypes(state, &response.samples)?;

    admit_or_merge_class(state, &label, &response.samples)?;
    state.memory.rescore(&state.prototypes, &state.network)?;
    state.memory.prune(state.known_classes.len());

    if cfg.recompute_means_from_memory {
        recompute_means_from_memory(state)?;
    }
    state.incremental_step += 1;
    state.validate()?;
    Ok(StepReport {
        label,
        oracle_collision,
        training_samples: response.samples.len(),
    })
}

/// Feeds a stream of unlabeled inputs through discovery. Rejected inputs
/// queue up; once the queue reaches `cfg.unknown_trigger_count`, one
/// incremental step fires with the oldest queued input as the oracle
/// trigger, and the queue is cleared. Returns the step reports in order.
pub fn run_discovery_stream<'a, I>(
    state: &mut OwrState,
    inputs: I,
    oracle: &mut dyn LabelOracle,
    cfg: &RunConfig,
    rng: &mut SplitMix64,
    metrics: &mut dyn MetricsSink,
) -> Result<Vec<StepReport>>
where
    I: IntoIterator<Item = &'a [f64]>,
{
    let mut steps = Vec::new();
    for input in inputs {
        state.discover(input)?;
        if state.pending_unknowns.len() >= cfg.unknown_trigger_count {
            let trigger = state.pending_unknowns[0].clone();
            state.take_pending();
            steps.push(incremental_step(
                state, oracle, &trigger, cfg, rng, metrics,
            )?);
        }
    }
    Ok(steps)
}

/// Outcome of a scripted benchmark run.
#[derive(Debug, Clone)]
pub struct ScriptedOutcome {
    pub state: OwrState,
    /// Evaluation after initial training, then after each incremental step.
    pub reports: Vec<EvalReport>,
    pub steps: Vec<StepReport>,
    /// Whether each scripted trigger was rejected when first seen.
    pub trigger_rejected: Vec<bool>,
}

fn eval_test_set(
    split: &OpenWorldSplit,
    known_now: &[ClassId],
    unknown_now: &[ClassId],
) -> Vec<LabeledSample> {
    let mut test = split.test_samples_of(known_now);
    test.extend(split.test_samples_of(unknown_now));
    test
}

fn emit_eval(
    metrics: &mut dyn MetricsSink,
    state_step: u64,
    theta: f64,
    report: &EvalReport,
) -> Result<()> {
    metrics.emit(&MetricsRecord {
        phase: "evaluate".into(),
        step: state_step,
        epoch: None,
        loss: None,
        theta,
        accuracies: Some(report.clone()),
    })
}

/// Runs the full scripted protocol on an open-world split: initial training
/// on the initial classes, then one incremental step per incremental class
/// in order (each triggered by that class's first pool sample), evaluating
/// after every phase against the currently-known test samples plus all
/// still-unknown test samples.
pub fn run_scripted(
    split: &OpenWorldSplit,
    cfg: &RunConfig,
    oracle: &mut dyn LabelOracle,
    metrics: &mut dyn MetricsSink,
) -> Result<ScriptedOutcome> {
    let mut rng = SplitMix64::new(cfg.seed);
    let network =
        EmbeddingNetwork::new(split.dim, &cfg.hidden_layers, cfg.embedding_dim, &mut rng)?;
    let initial: BTreeSet<ClassId> = split.initial_classes.iter().cloned().collect();
    let mut state = OwrState::new(network, initial, cfg.memory_capacity)?;

    train_initial(&mut state, &split.initial_train()?, cfg, &mut rng, metrics)?;

    let mut known_now: Vec<ClassId> = split.initial_classes.clone();
    let mut unknown_now: Vec<ClassId> = split
        .incremental_classes
        .iter()
        .chain(&split.never_known_classes)
        .cloned()
        .collect();

    let mut reports = Vec::new();
    let mut steps = Vec::new();
    let mut trigger_rejected = Vec::new();

    let report = evaluate(&state, &eval_test_set(split, &known_now, &unknown_now))?;
    emit_eval(
        metrics,
        state.incremental_step,
        state.threshold.theta,
        &report,
    )?;
    reports.push(report);

    for class in &split.incremental_classes {
        let pool = &split.train_by_class[class];
        let trigger = pool
            .first()
            .ok_or_else(|| Error::EmptyData(format!("no pool samples for `{class}`")))?
            .input
            .clone();
        // benchmark steps are scripted: record the discovery outcome, then
        // run the step regardless of it
        trigger_rejected.push(state.discover(&trigger)?.is_unknown());
        state.take_pending();

        let step = incremental_step(&mut state, oracle, &trigger, cfg, &mut rng, metrics)?;
        steps.push(step);

        known_now.push(class.clone());
        unknown_now.retain(|c| c != class);
        let test = eval_test_set(split, &known_now, &unknown_now);
        let report = evaluate(&state, &test)?;
        emit_eval(
            metrics,
            state.incremental_step,
            state.threshold.theta,
            &report,
        )?;
        reports.push(report);
    }

    Ok(ScriptedOutcome {
        state,
        reports,
        steps,
        trigger_rejected,
    })
}

/// Outcome of the frozen-representation baseline run.
#[derive(Debug, Clone)]
pub struct NnoOutcome {
    pub baseline: NnoBaseline,
    pub reports: Vec<EvalReport>,
    pub tau: f64,
}

/// Runs the same scripted protocol with the shallow baseline: the backbone
/// is pretrained on the initial classes exactly as in [`run_scripted`] and
/// then frozen; the projection and cutoff stay fixed while new classes only
/// add frozen-feature means.
pub fn run_nno_baseline(
    split: &OpenWorldSplit,
    cfg: &RunConfig,
    oracle: &mut dyn LabelOracle,
    metrics: &mut dyn MetricsSink,
) -> Result<NnoOutcome> {
    let mut rng = SplitMix64::new(cfg.seed);
    let network =
        EmbeddingNetwork::new(split.dim, &cfg.hidden_layers, cfg.embedding_dim, &mut rng)?;
    let initial: BTreeSet<ClassId> = split.initial_classes.iter().cloned().collect();
    let mut state = OwrState::new(network, initial, cfg.memory_capacity)?;
    let initial_train = split.initial_train()?;
    train_initial(&mut state, &initial_train, cfg, &mut rng, metrics)?;

    // freeze the pretrained representation
    let backbone = state.network.snapshot();
    let metric_dim = cfg.nno.metric_dim.unwrap_or(cfg.embedding_dim);
    let mut metric = LinearMetric::identity(cfg.embedding_dim, metric_dim)?;

    // frozen features of the initial training set, grouped per class
    let mut features_by_class: BTreeMap<ClassId, Vec<Vec<f64>>> = BTreeMap::new();
    for sample in initial_train.samples() {
        features_by_class
            .entry(sample.label.clone())
            .or_default()
            .push(backbone.forward(&sample.input)?.into_vec());
    }
    let mut offline_store = PrototypeStore::new(cfg.embedding_dim);
    for (class, features) in &features_by_class {
        let mut sum = vec![0.0; cfg.embedding_dim];
        for f in features {
            for (a, b) in sum.iter_mut().zip(f) {
                *a += b;
            }
        }
        let mean: Vec<f64> = sum.iter().map(|v| v / features.len() as f64).collect();
        offline_store.set_prototype(class.clone(), mean, features.len() as u64)?;
    }

    if cfg.nno.metric_steps > 0 {
        // metric learning on the frozen initial features
        let feats: Vec<(ClassId, Vec<f64>)> = features_by_class
            .iter()
            .flat_map(|(class, fs)| fs.iter().map(move |f| (class.clone(), f.clone())))
            .collect();
        crate::baselines::fit_metric(
            &mut metric,
            &feats,
            &offline_store,
            cfg.nno.metric_steps,
            cfg.nno.metric_learning_rate,
        )?;
    }

    // cutoff: fixed, or selected on the frozen initial features
    let tau = match cfg.nno.tau {
        Some(tau) => tau,
        None => match cfg.nno.tau_selection {
            TauSelection::CrossValidation => {
                select_tau_cross_validation(&metric, &features_by_class, &offline_store)?
            }
            TauSelection::QuantileTarget => {
                let mut min_distances = Vec::with_capacity(initial_train.len());
                for features in features_by_class.values() {
                    for f in features {
                        let mut best = f64::INFINITY;
                        for (_, proto) in offline_store.iter() {
                            best = best.min(crate::baselines::metric_distance(
                                &metric,
                                f,
                                &proto.mean,
                            )?);
                        }
                        min_distances.push(best);
                    }
                }
                select_tau(&min_distances, cfg.nno.target_false_rejection)?
            }
        },
    };

    let mut baseline = NnoBaseline::new(
        backbone,
        metric,
        NnoParams {
            tau,
            eta_tau: cfg.nno.eta_tau,
        },
    )?;
    let mut by_class: BTreeMap<ClassId, Vec<&LabeledSample>> = BTreeMap::new();
    for sample in initial_train.samples() {
        by_class
            .entry(sample.label.clone())
            .or_default()
            .push(sample);
    }
    for (class, samples) in &by_class {
        baseline.set_class_mean(class.clone(), samples.iter().map(|s| s.input.as_slice()))?;
    }

    let mut known_now: Vec<ClassId> = split.initial_classes.clone();
    let mut unknown_now: Vec<ClassId> = split
        .incremental_classes
        .iter()
        .chain(&split.never_known_classes)
        .cloned()
        .collect();

    let mut reports = Vec::new();
    let report = evaluate(&baseline, &eval_test_set(split, &known_now, &unknown_now))?;
    emit_eval(metrics, 0, tau, &report)?;
    reports.push(report);

    for (step, class) in split.incremental_classes.iter().enumerate() {
        let pool = &split.train_by_class[class];
        let trigger = pool
            .first()
            .ok_or_else(|| Error::EmptyData(format!("no pool samples for `{class}`")))?
            .input
            .clone();
        let response = oracle.query(&trigger)?;
        if response.samples.is_empty() {
            return Err(Error::Protocol(format!(
                "oracle returned no training data for `{}`",
                response.label
            )));
        }
        baseline.set_class_mean(
            response.label.clone(),
            response.samples.iter().map(|s| s.input.as_slice()),
        )?;

        known_now.push(class.clone());
        unknown_now.retain(|c| c != class);
        let report = evaluate(&baseline, &eval_test_set(split, &known_now, &unknown_now))?;
        emit_eval(metrics, step as u64 + 1, tau, &report)?;
        reports.push(report);
    }

    Ok(NnoOutcome {
        baseline,
        reports,
        tau,
    })
}
