//! Run directories and the multi-stage driver.
//!
//! Layout: `config.snapshot`, `stage{n}/epoch_XXXX.ckpt`,
//! `stage1/text_cache`, `metrics.log` (one JSON record per step) and
//! `model`, the latest trained model, plus `pretrained` when the mini
//! encoders are pre-trained.

use std::fs::{self, File, OpenOptions};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use super::{checkpoint_load, checkpoint_save, run_stage, CheckpointRecord, StageObserver, StageResume, StepRecord, TextCache};
use crate::config::RunConfig;
use crate::error::{Error, Result};
use crate::model::{Stage, ThreeStreamModel, MODEL_KIND};

/// Step-log format version, written as the first record of `metrics.log`.
pub const METRICS_LOG_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RunDir {
    pub root: PathBuf,
}

impl RunDir {
    pub fn new(root: impl Into<PathBuf>) -> Self {
        Self { root: root.into() }
    }

    pub fn config_snapshot(&self) -> PathBuf {
        self.root.join("config.snapshot")
    }

    pub fn stage_dir(&self, stage: Stage) -> PathBuf {
        self.root.join(format!("stage{}", stage.number()))
    }

    pub fn epoch_checkpoint(&self, stage: Stage, epochs_done: usize) -> PathBuf {
        self.stage_dir(stage).join(format!("epoch_{epochs_done:04}.ckpt"))
    }

    pub fn text_cache(&self) -> PathBuf {
        self.stage_dir(Stage::Tsg).join("text_cache")
    }

    pub fn metrics_log(&self) -> PathBuf {
        self.root.join("metrics.log")
    }

    /// Pre-trained mini weights, when the config asks for pre-training.
    pub fn pretrained(&self) -> PathBuf {
        self.root.join("pretrained")
    }

    pub fn final_model(&self) -> PathBuf {
        self.root.join("model")
    }

    /// Checkpoints of `stage` in ascending epoch order.
    pub fn stage_checkpoints(&self, stage: Stage) -> Result<Vec<(usize, PathBuf)>> {
        let dir = self.stage_dir(stage);
        if !dir.is_dir() {
            return Ok(Vec::new());
        }
        let mut out = Vec::new();
        for entry in fs::read_dir(&dir).map_err(|e| Error::io(&dir, e))? {
            let path = entry.map_err(|e| Error::io(&dir, e))?.path();
            let name = path.file_name().and_then(|n| n.to_str()).unwrap_or_default();
            if let Some(n) = name
                .strip_prefix("epoch_")
                .and_then(|r| r.strip_suffix(".ckpt"))
                .and_then(|n| n.parse::<usize>().ok())
            {
                out.push((n, path));
            }
        }
        out.sort();
        Ok(out)
    }

    /// Reads every step record in `metrics.log`.
    pub fn read_metrics(&self) -> Result<Vec<StepRecord>> {
        let path = self.metrics_log();
        let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
        let mut out = Vec::new();
        for (i, line) in text.lines().enumerate() {
            if line.trim().is_empty() || line.contains("\"version\"") {
                continue;
            }
            let r = serde_json::from_str(line).map_err(|e| Error::Parse {
                path: path.clone(),
                line: i as u64 + 1,
                message: e.to_string(),
            })?;
            out.push(r);
        }
        Ok(out)
    }
}

/// Latest checkpoint written for `stage`, if any.
pub fn find_stage_checkpoint(run: &RunDir, stage: Stage) -> Result<Option<PathBuf>> {
    Ok(run.stage_checkpoints(stage)?.pop().map(|(_, p)| p))
}

/// Hash identifying the training-relevant part of a configuration.
pub fn config_hash(config: &RunConfig) -> String {
    config.training_hash()
}

/// Observer writing `metrics.log` lines and per-epoch checkpoints.
pub struct JsonlLog<'a> {
    run: &'a RunDir,
    log: BufWriter<File>,
}

impl<'a> JsonlLog<'a> {
    pub fn open(run: &'a RunDir) -> Result<Self> {
        let path = run.metrics_log();
        let fresh = !path.exists();
        let file = OpenOptions::new()
            .create(true)
            .append(true)
            .open(&path)
            .map_err(|e| Error::io(&path, e))?;
        let mut log = BufWriter::new(file);
        if fresh {
            writeln!(log, "{{\"version\":{METRICS_LOG_VERSION}}}").map_err(|e| Error::io(&path, e))?;
        }
        Ok(Self { run, log })
    }
}

impl StageObserver for JsonlLog<'_> {
    fn on_step(&mut self, record: &StepRecord) -> Result<()> {
        let line = serde_json::to_string(record).expect("record serializes");
        writeln!(self.log, "{line}").map_err(|e| Error::io(self.run.metrics_log(), e))
    }

    fn on_epoch(&mut self, checkpoint: &CheckpointRecord) -> Result<()> {
        self.log.flush().map_err(|e| Error::io(self.run.metrics_log(), e))?;
        let dir = self.run.stage_dir(checkpoint.stage);
        fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
        checkpoint_save(checkpoint, &self.run.epoch_checkpoint(checkpoint.stage, checkpoint.epochs_done))?;
        if let Some(c) = &checkpoint.text_cache {
            c.save(&self.run.text_cache())?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct TrainRequest {
    /// Stages to run, in pipeline order. Empty means every configured stage.
    pub stages: Vec<Stage>,
    /// Checkpoint to continue from.
    pub resume: Option<PathBuf>,
    pub allow_skip: bool,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub model: ThreeStreamModel,
    pub completed: Vec<Stage>,
    pub text_cache: Option<TextCache>,
}

/// Final checkpoint of `stage` in `run`, when that stage finished.
fn completed_stage(run: &RunDir, stage: Stage, hash: &str) -> Result<Option<CheckpointRecord>> {
    match find_stage_checkpoint(run, stage)? {
        Some(p) => {
            let c = checkpoint_load(&p, Some(hash))?;
            Ok(c.is_complete().then_some(c))
        }
        None => Ok(None),
    }
}

fn prepare(config: &RunConfig, run: &RunDir) -> Result<()> {
    fs::create_dir_all(&run.root).map_err(|e| Error::io(&run.root, e))?;
    let snap = run.config_snapshot();
    let text = config.to_toml();
    if snap.exists() {
        let old = fs::read_to_string(&snap).map_err(|e| Error::io(&snap, e))?;
        let same = RunConfig::from_toml_str(&old, &[])
            .map(|c| c.training_hash() == config.training_hash())
            .unwrap_or(false);
        if !same {
            return Err(Error::validation(format!(
                "{} was written by a different training configuration",
                run.root.display()
            )));
        }
    }
    fs::write(&snap, text).map_err(|e| Error::io(&snap, e))
}

/// Runs the requested stages in order, checkpointing every epoch. Each
/// stage starts from the output of the latest earlier stage; a missing
/// immediate predecessor is an error unless skipping is allowed.
pub fn train(config: &RunConfig, run: &RunDir, request: &TrainRequest) -> Result<TrainOutcome> {
    let problems = config.validate();
    if !problems.is_empty() {
        return Err(Error::Config(problems));
    }
    let requested: Vec<Stage> = if request.stages.is_empty() {
        config.stages.clone()
    } else {
        request.stages.clone()
    };
    for s in &requested {
        if !config.stages.contains(s) {
            return Err(Error::validation(format!("stage {} is not enabled in this configuration", s.number())));
        }
    }
    let allow_skip = request.allow_skip || config.allow_skip;
    let hash = config_hash(config);
    prepare(config, run)?;

    // Outputs available so far, keyed by stage.
    let mut outputs: Vec<(Stage, ThreeStreamModel)> = Vec::new();
    let mut cache: Option<TextCache> = None;
    let mut pending: Option<(Stage, ThreeStreamModel, StageResume)> = None;

    let mut todo = requested.clone();
    if let Some(path) = &request.resume {
        let c = checkpoint_load(path, Some(&hash))?;
        if let Some(tc) = &c.text_cache {
            cache = Some(tc.clone());
        }
        todo.retain(|s| *s >= c.stage);
        if c.is_complete() {
            todo.retain(|s| *s > c.stage);
            outputs.push((c.stage, c.model));
        } else {
            if !todo.contains(&c.stage) {
                return Err(Error::validation(format!(
                    "checkpoint is mid-way through stage {}, which was not requested",
                    c.stage.number()
                )));
            }
            pending = Some((c.stage, c.model.clone(), StageResume::from(&c)));
        }
    }
    if cache.is_none() && run.text_cache().exists() {
        cache = Some(TextCache::load(&run.text_cache())?);
    }

    let mut log = JsonlLog::open(run)?;
    let dataset = config.train_dataset()?;
    let mut completed = Vec::new();
    let mut current: Option<ThreeStreamModel> = None;
    for stage in todo {
        let (mut model, resume) = match pending.take() {
            Some((s, m, r)) if s == stage => (m, Some(r)),
            _ => (input_model(config, run, &hash, stage, &outputs, allow_skip, dataset.num_identities())?, None),
        };
        let mut data = config.training_data(&model)?;
        data.dataset = dataset.clone();
        let plan = config.plan(stage);
        if stage == Stage::Ife && cache.is_none() {
            return Err(Error::validation(
                "stage 2 needs the stage-1 text cache; run stage 1 first",
            ));
        }
        let record = run_stage(&mut model, &data, &plan, cache.as_ref(), resume, &mut log, &hash)?;
        if let Some(tc) = record.text_cache {
            tc.save(&run.text_cache())?;
            cache = Some(tc);
        }
        model.save(&run.final_model())?;
        outputs.push((stage, model.clone()));
        completed.push(stage);
        current = Some(model);
    }

    let model = match current {
        Some(m) => m,
        None => match outputs.pop() {
            Some((_, m)) => m,
            None => {
                // No stage ran: the untrained model is the result.
                let m = match latest_on_disk(run, &hash, Stage::Hsa, true)? {
                    Some(m) => m,
                    None => config.build_model(dataset.num_identities(), Some(&run.pretrained()))?,
                };
                m.save(&run.final_model())?;
                m
            }
        },
    };
    Ok(TrainOutcome {
        model,
        completed,
        text_cache: cache,
    })
}

/// Model from the latest completed stage at or before `upto`
/// (`inclusive`) on disk.
fn latest_on_disk(run: &RunDir, hash: &str, upto: Stage, inclusive: bool) -> Result<Option<ThreeStreamModel>> {
    for s in Stage::ALL.iter().rev() {
        if *s > upto || (!inclusive && *s == upto) {
            continue;
        }
        if let Some(c) = completed_stage(run, *s, hash)? {
            return Ok(Some(c.model));
        }
    }
    Ok(None)
}

fn input_model(
    config: &RunConfig,
    run: &RunDir,
    hash: &str,
    stage: Stage,
    outputs: &[(Stage, ThreeStreamModel)],
    allow_skip: bool,
    num_identities: usize,
) -> Result<ThreeStreamModel> {
    if stage.number() > 1 {
        let prev = Stage::from_number(stage.number() - 1).expect("stage above 1");
        let have = outputs.iter().any(|(s, _)| *s == prev) || completed_stage(run, prev, hash)?.is_some();
        if !have && !allow_skip {
            return Err(Error::validation(format!(
                "stage {} needs the output of stage {}; run it first or pass --allow-skip",
                stage.number(),
                prev.number()
            )));
        }
    }
    if let Some((_, m)) = outputs.iter().rev().find(|(s, _)| *s < stage) {
        return Ok(m.clone());
    }
    match latest_on_disk(run, hash, stage, false)? {
        Some(m) => Ok(m),
        None => config.build_model(num_identities, Some(&run.pretrained())),
    }
}

/// A model from either a model archive or a checkpoint.
pub fn load_model_any(path: &Path) -> Result<ThreeStreamModel> {
    let c = crate::model::archive::read(path)?;
    if c.kind == MODEL_KIND {
        ThreeStreamModel::load(path)
    } else {
        Ok(checkpoint_load(path, None)?.model)
    }
}
