//! The three training stages, their optimizers and schedules.
//!
//! Each stage updates exactly the parameter set returned by
//! [`ThreeStreamModel::trainable_parameters`]; everything else is left
//! byte-for-byte untouched.

mod checkpoint;
mod embed;
mod optim;
mod pretrain;
mod run;
mod schedule;

use std::collections::BTreeMap;

use ndarray::{Array1, Array2, Array3};
use serde::{Deserialize, Serialize};

use crate::data::{augment, sample_rng, AugmentationConfig, Dataset, PkBatch, PkSampler};
use crate::error::{ensure, Error, Result};
use crate::losses::{self, Batch, ContrastiveOptions, HsaWeights};
use crate::model::params::{GradSink, Grads, ParamSet};
use crate::model::stack::StackTrace;
use crate::model::{l2_normalize, stack_rows, Branch, ImageTrace, Stage, ThreeStreamModel};
use crate::prompts::PROMPT_PREFIX;

pub use checkpoint::{checkpoint_load, checkpoint_save, CheckpointRecord, TextCache, CHECKPOINT_KIND};
pub use embed::{embed_dataset, feature_sets_for, image_batch};
pub use optim::{Adam, AdamConfig, AdamState};
pub use pretrain::{pretrain_mini, pretrain_probe, PretrainSpec};
pub use run::{
    config_hash, find_stage_checkpoint, load_model_any, train, JsonlLog, RunDir, TrainOutcome, TrainRequest,
    METRICS_LOG_VERSION,
};
pub use schedule::Schedule;

/// Everything that defines one stage's optimisation.
#[derive(Debug, Clone, PartialEq)]
pub struct StagePlan {
    pub stage: Stage,
    pub epochs: usize,
    pub schedule: Schedule,
    pub weight_decay: f64,
    pub contrastive: ContrastiveOptions,
    pub hsa: HsaWeights,
    pub label_smoothing: f64,
    /// Recompute all identity text features every this many HSA steps.
    pub text_refresh_every: usize,
}

impl StagePlan {
    pub fn new(stage: Stage, epochs: usize, schedule: Schedule) -> Self {
        Self {
            stage,
            epochs,
            schedule,
            weight_decay: 5e-4,
            contrastive: ContrastiveOptions::default(),
            hsa: HsaWeights::default(),
            label_smoothing: 0.0,
            text_refresh_every: 1,
        }
    }

    pub fn validate(&self) -> Vec<String> {
        let mut p: Vec<String> = self
            .schedule
            .validate()
            .into_iter()
            .map(|m| format!("{}: {m}", self.stage))
            .collect();
        if self.epochs == 0 {
            p.push(format!("{}: epochs must be positive", self.stage));
        }
        if !(self.weight_decay >= 0.0 && self.weight_decay.is_finite()) {
            p.push(format!("{}: weight_decay must be non-negative", self.stage));
        }
        if self.text_refresh_every == 0 {
            p.push(format!("{}: text_refresh_every must be positive", self.stage));
        }
        if !(0.0..1.0).contains(&self.label_smoothing) {
            p.push(format!("{}: label_smoothing must be in [0, 1)", self.stage));
        }
        if let Err(e) = self.hsa.validate() {
            p.push(format!("{}: {e}", self.stage));
        }
        p
    }

    pub fn lr_at(&self, epoch: usize, step_fraction: f64) -> f64 {
        self.schedule.lr_at(self.epochs, epoch, step_fraction)
    }
}

/// Free-function form of [`StagePlan::lr_at`].
pub fn lr_at(plan: &StagePlan, epoch: usize, step_fraction: f64) -> f64 {
    plan.lr_at(epoch, step_fraction)
}

/// Training split with its batch sampler and augmentation.
#[derive(Debug, Clone)]
pub struct TrainingData {
    pub dataset: Dataset,
    pub augmentation: AugmentationConfig,
    pub sampler: PkSampler,
    /// Seeds augmentation draws.
    pub seed: u64,
}

/// One line of `metrics.log`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub stage: Stage,
    pub epoch: usize,
    pub step: usize,
    pub lr: f64,
    pub loss: f64,
    pub terms: BTreeMap<String, f64>,
}

/// Callbacks invoked by the step loop.
pub trait StageObserver {
    fn on_step(&mut self, _record: &StepRecord) -> Result<()> {
        Ok(())
    }

    /// Called after each epoch with a snapshot of the run.
    fn on_epoch(&mut self, _checkpoint: &CheckpointRecord) -> Result<()> {
        Ok(())
    }
}

/// Observer that only collects step records.
#[derive(Debug, Default)]
pub struct StepCollector {
    pub records: Vec<StepRecord>,
}

impl StageObserver for StepCollector {
    fn on_step(&mut self, record: &StepRecord) -> Result<()> {
        self.records.push(record.clone());
        Ok(())
    }
}

/// Where an interrupted stage picks up.
#[derive(Debug, Clone, PartialEq)]
pub struct StageResume {
    pub epochs_done: usize,
    pub optimizer: AdamState,
}

impl From<&CheckpointRecord> for StageResume {
    fn from(c: &CheckpointRecord) -> Self {
        Self {
            epochs_done: c.epochs_done,
            optimizer: c.optimizer.clone(),
        }
    }
}

struct StepOutput {
    loss: f64,
    terms: BTreeMap<String, f64>,
    grads: Grads,
}

/// Prompt tokens train; text features are computed and cached at the end.
pub fn run_stage_tsg(model: &mut ThreeStreamModel, data: &TrainingData, plan: &StagePlan) -> Result<CheckpointRecord> {
    run_stage(model, data, plan, None, None, &mut StepCollector::default(), "")
}

/// Shared encoder trains on infrared batches against `cache`.
pub fn run_stage_ife(
    model: &mut ThreeStreamModel,
    data: &TrainingData,
    plan: &StagePlan,
    cache: Option<&TextCache>,
) -> Result<CheckpointRecord> {
    run_stage(model, data, plan, cache, None, &mut StepCollector::default(), "")
}

/// Modality-specific encoders, text encoder, prompts and classifier train
/// with the shared encoder frozen.
pub fn run_stage_hsa(
    model: &mut ThreeStreamModel,
    data: &TrainingData,
    plan: &StagePlan,
    weights: HsaWeights,
) -> Result<CheckpointRecord> {
    let plan = StagePlan {
        hsa: weights,
        ..plan.clone()
    };
    run_stage(model, data, &plan, None, None, &mut StepCollector::default(), "")
}

/// Runs (or resumes) one stage.
pub fn run_stage(
    model: &mut ThreeStreamModel,
    data: &TrainingData,
    plan: &StagePlan,
    cache: Option<&TextCache>,
    resume: Option<StageResume>,
    observer: &mut dyn StageObserver,
    config_hash: &str,
) -> Result<CheckpointRecord> {
    let problems = plan.validate();
    if !problems.is_empty() {
        return Err(Error::Config(problems));
    }
    ensure!(
        data.sampler.batch_size() > 0,
        "sampler batch size must be positive"
    );
    if plan.stage == Stage::Ife {
        let c = cache.ok_or_else(|| Error::validation("the infrared embedding stage needs the text cache from stage 1"))?;
        ensure!(
            c.features.dim() == (model.num_identities, model.embed_dim()),
            "text cache shape {:?} does not match the model ({} identities, dimension {})",
            c.features.dim(),
            model.num_identities,
            model.embed_dim()
        );
    }
    ensure!(
        data.dataset.num_identities() == model.num_identities,
        "training data has {} identities but the model was built for {}",
        data.dataset.num_identities(),
        model.num_identities
    );

    let trainable = model.trainable_parameters(plan.stage);
    let no_decay: ParamSet = model.params.paths_with_prefix(PROMPT_PREFIX);
    let mut adam = Adam::new(
        AdamConfig {
            weight_decay: plan.weight_decay,
            ..AdamConfig::default()
        },
        no_decay,
    );
    let mut start = 0;
    if let Some(r) = resume {
        start = r.epochs_done;
        adam.state = r.optimizer;
    }

    let mut hsa_text: Option<HsaText> = None;
    let mut global_step = 0usize;
    for epoch in start..plan.epochs {
        let batches = if trainable.is_empty() {
            Vec::new()
        } else {
            data.sampler.epoch(&data.dataset, plan.stage.number() as u64, epoch as u64)?
        };
        for (b, batch) in batches.iter().enumerate() {
            let lr = plan.lr_at(epoch, b as f64 / batches.len() as f64);
            let sink = GradSink { trainable: &trainable };
            let out = match plan.stage {
                Stage::Tsg => tsg_step(model, data, plan, batch, epoch, b, sink)?,
                Stage::Ife => ife_step(model, data, plan, batch, epoch, b, sink, cache.expect("checked"))?,
                Stage::Hsa => {
                    if global_step.is_multiple_of(plan.text_refresh_every) || hsa_text.is_none() {
                        hsa_text = Some(HsaText::compute(model, true)?);
                    } else if let Some(t) = hsa_text.as_mut() {
                        t.traces.clear();
                    }
                    hsa_step(model, data, plan, batch, epoch, b, sink, hsa_text.as_ref().expect("set"))?
                }
            };
            if !out.loss.is_finite() || !out.grads.squared_norm().is_finite() {
                return Err(Error::Divergence(format!(
                    "{} epoch {epoch} step {b}: loss {} (terms {:?})",
                    plan.stage, out.loss, out.terms
                )));
            }
            adam.step(&mut model.params, &out.grads, &trainable, lr);
            observer.on_step(&StepRecord {
                stage: plan.stage,
                epoch,
                step: b,
                lr,
                loss: out.loss,
                terms: out.terms,
            })?;
            global_step += 1;
        }
        let done = epoch + 1;
        let text_cache = if plan.stage == Stage::Tsg && done == plan.epochs {
            Some(TextCache {
                features: model.all_text_features()?,
            })
        } else {
            None
        };
        observer.on_epoch(&CheckpointRecord {
            stage: plan.stage,
            epochs_done: done,
            stage_epochs: plan.epochs,
            model: model.clone(),
            optimizer: adam.state.clone(),
            seed: data.seed,
            config_hash: config_hash.to_string(),
            text_cache,
        })?;
    }

    let text_cache = match plan.stage {
        Stage::Tsg => Some(TextCache {
            features: model.all_text_features()?,
        }),
        _ => None,
    };
    Ok(CheckpointRecord {
        stage: plan.stage,
        epochs_done: plan.epochs,
        stage_epochs: plan.epochs,
        model: model.clone(),
        optimizer: adam.state,
        seed: data.seed,
        config_hash: config_hash.to_string(),
        text_cache,
    })
}

/// Augmented inputs for one half of a batch. Each draw has its own
/// generator keyed by stage, epoch and position in the epoch.
fn load_batch(
    data: &TrainingData,
    indices: &[usize],
    stage: Stage,
    epoch: usize,
    batch_index: usize,
    offset: usize,
) -> Result<Vec<Array3<f64>>> {
    let base = batch_index * data.sampler.batch_size() + offset;
    indices
        .iter()
        .enumerate()
        .map(|(i, &s)| {
            let sample = &data.dataset.samples[s];
            let img = sample.load_rgb()?;
            let mut rng = sample_rng(data.seed, stage.number() as u64, epoch as u64, (base + i) as u64);
            augment(&img, &data.augmentation, &mut rng)
        })
        .collect()
}

fn labels_of(data: &TrainingData, indices: &[usize]) -> Vec<usize> {
    indices.iter().map(|&i| data.dataset.samples[i].identity).collect()
}

fn tsg_step(
    model: &ThreeStreamModel,
    data: &TrainingData,
    plan: &StagePlan,
    batch: &PkBatch,
    epoch: usize,
    b: usize,
    sink: GradSink<'_>,
) -> Result<StepOutput> {
    let images = load_batch(data, &batch.visible, Stage::Tsg, epoch, b, 0)?;
    let feats: Vec<Array1<f64>> = images
        .iter()
        .map(|x| model.image_feature(Branch::Visible, x))
        .collect::<Result<_>>()?;
    let labels = labels_of(data, &batch.visible);
    // the text table only holds the batch's identities
    let ids = &batch.identities;
    let local: Vec<usize> = labels
        .iter()
        .map(|l| ids.iter().position(|i| i == l).expect("batch identity"))
        .collect();
    let mut text_rows = Vec::with_capacity(ids.len());
    let mut traces = Vec::with_capacity(ids.len());
    for &id in ids {
        let (t, trace) = model.text_feature_traced(id)?;
        text_rows.push(t);
        traces.push(trace);
    }
    let d = model.embed_dim();
    let lb = Batch {
        visible: stack_rows(feats.iter()),
        visible_labels: local,
        infrared: Array2::zeros((0, d)),
        infrared_labels: Vec::new(),
        text: stack_rows(text_rows.iter()),
    };
    let loss = losses::stage1_loss_with(&lb, model.logit_scale, plan.contrastive)?;
    let mut grads = Grads::new();
    for (j, &id) in ids.iter().enumerate() {
        model.text_backward(id, &traces[j], loss.d_text.row(j).to_owned(), sink, &mut grads);
    }
    Ok(StepOutput {
        loss: loss.value,
        terms: BTreeMap::from([
            ("i2t".to_string(), loss.image_to_text),
            ("t2i".to_string(), loss.text_to_image),
        ]),
        grads,
    })
}

fn traced_features(
    model: &ThreeStreamModel,
    branch: Branch,
    images: &[Array3<f64>],
) -> Result<(Vec<Array1<f64>>, Vec<ImageTrace>)> {
    let mut feats = Vec::with_capacity(images.len());
    let mut traces = Vec::with_capacity(images.len());
    for x in images {
        let (f, t) = model.image_feature_traced(branch, x)?;
        feats.push(f);
        traces.push(t);
    }
    Ok((feats, traces))
}

#[allow(clippy::too_many_arguments)]
fn ife_step(
    model: &ThreeStreamModel,
    data: &TrainingData,
    plan: &StagePlan,
    batch: &PkBatch,
    epoch: usize,
    b: usize,
    sink: GradSink<'_>,
    cache: &TextCache,
) -> Result<StepOutput> {
    let images = load_batch(data, &batch.infrared, Stage::Ife, epoch, b, batch.visible.len())?;
    let (feats, traces) = traced_features(model, Branch::Infrared, &images)?;
    let d = model.embed_dim();
    let lb = Batch {
        visible: Array2::zeros((0, d)),
        visible_labels: Vec::new(),
        infrared: stack_rows(feats.iter()),
        infrared_labels: labels_of(data, &batch.infrared),
        text: cache.features.clone(),
    };
    let loss = losses::stage2_loss_with(&lb, model.logit_scale, plan.contrastive)?;
    let mut grads = Grads::new();
    for (k, trace) in traces.iter().enumerate() {
        model.image_backward(Branch::Infrared, trace, loss.d_image.row(k).to_owned(), sink, &mut grads);
    }
    Ok(StepOutput {
        loss: loss.value,
        terms: BTreeMap::from([
            ("i2t".to_string(), loss.image_to_text),
            ("t2i".to_string(), loss.text_to_image),
        ]),
        grads,
    })
}

/// All-identity text features for the HSA denominators. Traces are kept
/// only when the features were computed at the current parameters.
struct HsaText {
    features: Array2<f64>,
    traces: Vec<StackTrace>,
}

impl HsaText {
    fn compute(model: &ThreeStreamModel, traced: bool) -> Result<Self> {
        let mut rows = Vec::with_capacity(model.num_identities);
        let mut traces = Vec::new();
        for id in 0..model.num_identities {
            if traced {
                let (t, tr) = model.text_feature_traced(id)?;
                rows.push(t);
                traces.push(tr);
            } else {
                rows.push(model.text_feature(id)?);
            }
        }
        Ok(Self {
            features: stack_rows(rows.iter()),
            traces,
        })
    }
}

#[allow(clippy::too_many_arguments)]
fn hsa_step(
    model: &ThreeStreamModel,
    data: &TrainingData,
    plan: &StagePlan,
    batch: &PkBatch,
    epoch: usize,
    b: usize,
    sink: GradSink<'_>,
    text: &HsaText,
) -> Result<StepOutput> {
    let vis_images = load_batch(data, &batch.visible, Stage::Hsa, epoch, b, 0)?;
    let ir_images = load_batch(data, &batch.infrared, Stage::Hsa, epoch, b, batch.visible.len())?;
    let (vis, vis_traces) = traced_features(model, Branch::Visible, &vis_images)?;
    let (ir, ir_traces) = traced_features(model, Branch::Infrared, &ir_images)?;
    let logits_v = model.classify(&vis)?;
    let logits_r = model.classify(&ir)?;
    let lb = Batch {
        visible: stack_rows(vis.iter()),
        visible_labels: labels_of(data, &batch.visible),
        infrared: stack_rows(ir.iter()),
        infrared_labels: labels_of(data, &batch.infrared),
        text: text.features.clone(),
    };
    let loss = losses::hsa_loss_with(&lb, &logits_v, &logits_r, plan.hsa, model.logit_scale, plan.label_smoothing)?;

    let mut grads = Grads::new();
    for (branch, feats, traces, d_feat, d_logits) in [
        (Branch::Visible, &vis, &vis_traces, &loss.d_visible, &loss.d_logits_visible),
        (Branch::Infrared, &ir, &ir_traces, &loss.d_infrared, &loss.d_logits_infrared),
    ] {
        for k in 0..feats.len() {
            let from_cls = model.classifier_backward(&feats[k], &d_logits.row(k).to_owned(), sink, &mut grads);
            let g = &d_feat.row(k) + &from_cls;
            model.image_backward(branch, &traces[k], g, sink, &mut grads);
        }
    }
    for (id, trace) in text.traces.iter().enumerate() {
        model.text_backward(id, trace, loss.d_text.row(id).to_owned(), sink, &mut grads);
    }
    Ok(StepOutput {
        loss: loss.value,
        terms: BTreeMap::from([
            ("visible_ce".to_string(), loss.visible_ce),
            ("infrared_ce".to_string(), loss.infrared_ce),
            ("id".to_string(), loss.id),
            ("wrt".to_string(), loss.wrt),
        ]),
        grads,
    })
}

/// Mean cosine similarity over all same-identity (visible, infrared) pairs.
pub fn cross_modal_alignment(visible: &Array2<f64>, vis_ids: &[usize], infrared: &Array2<f64>, ir_ids: &[usize]) -> f64 {
    let unit = |m: &Array2<f64>| -> Vec<Array1<f64>> { m.rows().into_iter().map(|r| l2_normalize(&r.to_owned())).collect() };
    let (v, r) = (unit(visible), unit(infrared));
    let (mut sum, mut n) = (0.0, 0usize);
    for (i, a) in v.iter().enumerate() {
        for (j, b) in r.iter().enumerate() {
            if vis_ids[i] == ir_ids[j] {
                sum += a.dot(b);
                n += 1;
            }
        }
    }
    if n == 0 {
        0.0
    } else {
        sum / n as f64
    }
}
