//! Run configuration: one TOML document, unknown keys rejected, every
//! problem reported at once.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::data::{
    load_manifest, synthesize_dataset, AugmentationConfig, Dataset, Modality, PkSampler, SyntheticSpec,
};
use crate::error::{Error, Result};
use crate::evaluation::{RegdbProtocol, SysuProtocol};
use crate::losses::{ContrastiveOptions, HsaWeights};
use crate::model::{
    build_model, ModelArch, ModelSource, PretrainedArchive, PromptSettings, Stage, ThreeStreamModel,
};
use crate::prompts::PromptMode;
use crate::training::{pretrain_mini, PretrainSpec, Schedule, StagePlan, TrainingData};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelKind {
    Mini,
    Archive,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelSection {
    pub source: ModelKind,
    /// Pre-trained archive, required when `source = "archive"`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub archive: Option<PathBuf>,
    #[serde(default = "default_embed_dim")]
    pub embed_dim: usize,
    #[serde(default = "default_num_tokens")]
    pub num_tokens: usize,
    #[serde(default)]
    pub prompt_mode: PromptMode,
    /// Visible-only pre-training of the mini encoders before any stage.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub pretrain: Option<PretrainSpec>,
}

fn default_embed_dim() -> usize {
    32
}

fn default_num_tokens() -> usize {
    4
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DataSection {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub synthetic: Option<SyntheticSpec>,
    /// Synthetic draw used for evaluation.
    #[serde(default = "default_eval_variant")]
    pub eval_variant: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub train_manifest: Option<PathBuf>,
    /// Evaluation manifest with both modalities.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub test_manifest: Option<PathBuf>,
}

fn default_eval_variant() -> u64 {
    1
}

/// Unset target size and normalisation fall back to the model's input
/// geometry and pixel statistics.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AugmentationSection {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub target_height: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub target_width: Option<usize>,
    #[serde(default = "default_flip")]
    pub flip_prob: f64,
    #[serde(default = "default_pad")]
    pub pad_pixels: usize,
    #[serde(default = "default_true")]
    pub random_crop: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mean: Option<[f64; 3]>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub std: Option<[f64; 3]>,
}

fn default_flip() -> f64 {
    0.5
}

fn default_pad() -> usize {
    10
}

fn default_true() -> bool {
    true
}

impl AugmentationSection {
    pub fn resolve(&self, arch: &ModelArch) -> AugmentationConfig {
        AugmentationConfig {
            target_height: self.target_height.unwrap_or(arch.image.input_height),
            target_width: self.target_width.unwrap_or(arch.image.input_width),
            flip_prob: self.flip_prob,
            pad_pixels: self.pad_pixels,
            random_crop: self.random_crop,
            mean: self.mean.unwrap_or(arch.pixel_mean),
            std: self.std.unwrap_or(arch.pixel_std),
        }
    }
}

impl Default for AugmentationSection {
    fn default() -> Self {
        Self {
            target_height: None,
            target_width: None,
            flip_prob: default_flip(),
            pad_pixels: default_pad(),
            random_crop: true,
            mean: None,
            std: None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SamplerSection {
    pub p: usize,
    pub k: usize,
    pub batch_size: usize,
    #[serde(default = "default_passes")]
    pub passes_per_epoch: usize,
}

fn default_passes() -> usize {
    1
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StageSection {
    pub epochs: usize,
    pub schedule: Schedule,
    #[serde(default = "default_weight_decay")]
    pub weight_decay: f64,
    #[serde(default)]
    pub unique_identity_denominator: bool,
    #[serde(default = "default_lambda")]
    pub lambda1: f64,
    #[serde(default = "default_lambda")]
    pub lambda2: f64,
    #[serde(default = "default_refresh")]
    pub text_refresh_every: usize,
    #[serde(default)]
    pub label_smoothing: f64,
}

fn default_weight_decay() -> f64 {
    5e-4
}

fn default_lambda() -> f64 {
    0.05
}

fn default_refresh() -> usize {
    1
}

impl StageSection {
    pub fn new(epochs: usize, schedule: Schedule) -> Self {
        Self {
            epochs,
            schedule,
            weight_decay: default_weight_decay(),
            unique_identity_denominator: false,
            lambda1: default_lambda(),
            lambda2: default_lambda(),
            text_refresh_every: default_refresh(),
            label_smoothing: 0.0,
        }
    }

    pub fn plan(&self, stage: Stage) -> StagePlan {
        StagePlan {
            stage,
            epochs: self.epochs,
            schedule: self.schedule.clone(),
            weight_decay: self.weight_decay,
            contrastive: ContrastiveOptions {
                unique_identity_denominator: self.unique_identity_denominator,
            },
            hsa: HsaWeights {
                lambda1: self.lambda1,
                lambda2: self.lambda2,
            },
            label_smoothing: self.label_smoothing,
            text_refresh_every: self.text_refresh_every,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StagesSection {
    pub tsg: StageSection,
    pub ife: StageSection,
    pub hsa: StageSection,
}

impl StagesSection {
    pub fn get(&self, stage: Stage) -> &StageSection {
        match stage {
            Stage::Tsg => &self.tsg,
            Stage::Ife => &self.ife,
            Stage::Hsa => &self.hsa,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ProtocolKind {
    Sysu,
    Regdb,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvalSection {
    pub protocol: ProtocolKind,
    #[serde(default)]
    pub sysu: SysuProtocol,
    #[serde(default)]
    pub regdb: RegdbProtocol,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    #[serde(default)]
    pub seed: u64,
    /// Stages this configuration trains, in order. Leaving stages out is an
    /// ablation and needs `allow_skip`.
    #[serde(default = "all_stages")]
    pub stages: Vec<Stage>,
    #[serde(default)]
    pub allow_skip: bool,
    pub model: ModelSection,
    pub data: DataSection,
    #[serde(default)]
    pub augmentation: AugmentationSection,
    pub sampler: SamplerSection,
    pub train: StagesSection,
    pub eval: EvalSection,
}

fn all_stages() -> Vec<Stage> {
    Stage::ALL.to_vec()
}

/// Images and labels used for evaluation.
#[derive(Debug, Clone)]
pub struct EvalData {
    pub dataset: Dataset,
}

impl RunConfig {
    /// Parses TOML, applying `key=value` overrides (dotted keys, TOML
    /// values; bare words are taken as strings) before validation.
    pub fn from_toml_str(text: &str, overrides: &[String]) -> Result<Self> {
        let mut table: toml::Table = text
            .parse()
            .map_err(|e: toml::de::Error| Error::Config(vec![format!("invalid TOML: {}", e.message())]))?;
        let mut problems = Vec::new();
        for o in overrides {
            if let Err(e) = apply_override(&mut table, o) {
                problems.push(e);
            }
        }
        if !problems.is_empty() {
            return Err(Error::Config(problems));
        }
        let cfg: RunConfig = toml::Value::Table(table)
            .try_into()
            .map_err(|e: toml::de::Error| Error::Config(vec![e.message().to_string()]))?;
        let problems = cfg.validate();
        if problems.is_empty() {
            Ok(cfg)
        } else {
            Err(Error::Config(problems))
        }
    }

    pub fn load(path: &Path, overrides: &[String]) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut cfg = Self::from_toml_str(&text, overrides)?;
        cfg.resolve_paths(path.parent().unwrap_or(Path::new("")));
        Ok(cfg)
    }

    /// Makes relative file paths relative to `base`.
    pub fn resolve_paths(&mut self, base: &Path) {
        let fix = |p: &mut Option<PathBuf>| {
            if let Some(x) = p {
                if x.is_relative() {
                    *x = base.join(&*x);
                }
            }
        };
        fix(&mut self.model.archive);
        fix(&mut self.data.train_manifest);
        fix(&mut self.data.test_manifest);
    }

    pub fn to_toml(&self) -> String {
        toml::to_string_pretty(self).expect("config serializes")
    }

    /// Everything wrong with the configuration.
    pub fn validate(&self) -> Vec<String> {
        let mut p = Vec::new();
        match (self.model.source, &self.model.archive) {
            (ModelKind::Archive, None) => p.push("model.archive is required when model.source = \"archive\"".into()),
            (ModelKind::Mini, Some(_)) => p.push("model.archive is only used with model.source = \"archive\"".into()),
            _ => {}
        }
        if let Some(pt) = &self.model.pretrain {
            if self.model.source == ModelKind::Archive {
                p.push("model.pretrain only applies to model.source = \"mini\"".into());
            }
            p.extend(pt.validate().into_iter().map(|m| format!("model.{m}")));
        }
        if self.model.embed_dim == 0 {
            p.push("model.embed_dim must be positive".into());
        }
        if self.model.prompt_mode == PromptMode::Learnable && self.model.num_tokens == 0 {
            p.push("model.num_tokens must be positive for learnable prompts".into());
        }
        match (&self.data.synthetic, &self.data.train_manifest) {
            (Some(s), None) => p.extend(s.validate().into_iter().map(|m| format!("data.synthetic: {m}"))),
            (None, Some(_)) => {
                if self.data.test_manifest.is_none() {
                    p.push("data.test_manifest is required with data.train_manifest".into());
                }
            }
            (Some(_), Some(_)) => p.push("set either data.synthetic or data.train_manifest, not both".into()),
            (None, None) => p.push("data needs a synthetic spec or a train_manifest".into()),
        }
        let a = &self.augmentation;
        if !(0.0..=1.0).contains(&a.flip_prob) {
            p.push(format!("augmentation.flip_prob must be in [0, 1], got {}", a.flip_prob));
        }
        if a.target_height == Some(0) || a.target_width == Some(0) {
            p.push("augmentation target size must be positive".into());
        }
        if a.std.is_some_and(|s| s.iter().any(|v| *v <= 0.0)) {
            p.push("augmentation.std entries must be positive".into());
        }
        let s = &self.sampler;
        if s.p == 0 || s.k == 0 {
            p.push("sampler.p and sampler.k must be positive".into());
        } else if 2 * s.p * s.k != s.batch_size {
            p.push(format!(
                "sampler.batch_size {} does not equal 2·p·k = {}",
                s.batch_size,
                2 * s.p * s.k
            ));
        }
        if s.passes_per_epoch == 0 {
            p.push("sampler.passes_per_epoch must be positive".into());
        }
        if let Some(spec) = &self.data.synthetic {
            if s.p > spec.num_identities {
                p.push(format!("sampler.p = {} exceeds the {} synthetic identities", s.p, spec.num_identities));
            }
        }
        for stage in Stage::ALL {
            p.extend(self.train.get(stage).plan(stage).validate().into_iter().map(|m| format!("train.{m}")));
        }
        let mut seen = Vec::new();
        for st in &self.stages {
            if seen.contains(st) {
                p.push(format!("stage {st} listed twice"));
            }
            if seen.last().is_some_and(|l: &Stage| l > st) {
                p.push("stages must be listed in pipeline order".into());
            }
            seen.push(*st);
        }
        let skips = Stage::ALL
            .iter()
            .take_while(|s| Some(**s) != self.stages.last().copied())
            .any(|s| !self.stages.contains(s));
        if skips && !self.allow_skip {
            p.push("stages leave out an earlier stage; set allow_skip = true for ablation runs".into());
        }
        match self.eval.protocol {
            ProtocolKind::Sysu => {
                if self.eval.sysu.trials == 0 {
                    p.push("eval.sysu.trials must be positive".into());
                }
            }
            ProtocolKind::Regdb => {
                if self.eval.regdb.repeats == 0 {
                    p.push("eval.regdb.repeats must be positive".into());
                }
            }
        }
        p
    }

    /// Hex SHA-256 of every setting that influences training.
    pub fn training_hash(&self) -> String {
        use sha2::{Digest, Sha256};
        let v = serde_json::json!({
            "seed": self.seed,
            "model": self.model,
            "data": self.data,
            "augmentation": self.augmentation,
            "sampler": self.sampler,
            "train": self.train,
        });
        let digest = Sha256::digest(v.to_string().as_bytes());
        digest.iter().map(|b| format!("{b:02x}")).collect()
    }

    fn arch(&self) -> Result<(ModelSource, ModelArch)> {
        match self.model.source {
            ModelKind::Mini => {
                let arch = ModelArch::mini(self.model.embed_dim);
                Ok((
                    ModelSource::Mini {
                        arch: arch.clone(),
                        seed: self.seed,
                    },
                    arch,
                ))
            }
            ModelKind::Archive => {
                let path = self.model.archive.as_ref().expect("validated");
                let pre = PretrainedArchive::load(path)?;
                let arch = pre.arch.clone();
                Ok((ModelSource::Pretrained(pre), arch))
            }
        }
    }

    /// Augmentation with defaults resolved against the model architecture.
    pub fn augmentation_for(&self, arch: &ModelArch) -> AugmentationConfig {
        self.augmentation.resolve(arch)
    }

    pub fn train_dataset(&self) -> Result<Dataset> {
        match (&self.data.synthetic, &self.data.train_manifest) {
            (Some(spec), _) => Ok(synthesize_dataset(spec)),
            (None, Some(m)) => load_manifest(m),
            (None, None) => Err(Error::validation("no training data configured")),
        }
    }

    pub fn eval_data(&self) -> Result<EvalData> {
        let dataset = match (&self.data.synthetic, &self.data.test_manifest) {
            (Some(spec), _) => synthesize_dataset(&SyntheticSpec {
                variant: self.data.eval_variant,
                ..spec.clone()
            }),
            (None, Some(m)) => load_manifest(m)?,
            (None, None) => return Err(Error::validation("no evaluation data configured")),
        };
        if dataset.count(Modality::Visible) == 0 || dataset.count(Modality::Infrared) == 0 {
            return Err(Error::validation("evaluation data needs both modalities"));
        }
        Ok(EvalData { dataset })
    }

    /// Model built from the configured source, sized for `num_identities`.
    /// Pre-trained mini weights are read from `cache` when it exists and
    /// written there otherwise.
    pub fn build_model(&self, num_identities: usize, cache: Option<&Path>) -> Result<ThreeStreamModel> {
        let (mut source, arch) = self.arch()?;
        if let (ModelKind::Mini, Some(spec)) = (self.model.source, &self.model.pretrain) {
            let archive = match cache.filter(|p| p.exists()) {
                Some(p) => PretrainedArchive::load(p)?,
                None => {
                    let images = self.data.synthetic.clone().unwrap_or_default();
                    let a = pretrain_mini(arch.clone(), spec, &images, &self.augmentation_for(&arch), self.seed)?;
                    if let Some(p) = cache {
                        a.save(p)?;
                    }
                    a
                }
            };
            source = ModelSource::Pretrained(archive);
        }
        build_model(
            source,
            num_identities,
            PromptSettings {
                num_tokens: self.model.num_tokens,
                mode: self.model.prompt_mode,
            },
            self.seed,
        )
    }

    pub fn training_data(&self, model: &ThreeStreamModel) -> Result<TrainingData> {
        let dataset = self.train_dataset()?;
        let s = &self.sampler;
        Ok(TrainingData {
            dataset,
            augmentation: self.augmentation_for(&model.arch),
            sampler: PkSampler::new(s.p, s.k, s.batch_size, self.seed)?.with_passes(s.passes_per_epoch),
            seed: self.seed,
        })
    }

    pub fn plan(&self, stage: Stage) -> StagePlan {
        self.train.get(stage).plan(stage)
    }

    /// Laptop-scale synthetic run with the mini encoders.
    pub fn desk() -> Self {
        let cosine = |base: f64, start: f64| Schedule::WarmupCosine {
            base_lr: base,
            warmup_start_lr: start,
            warmup_epochs: 2,
            min_lr: 1e-6,
        };
        let mut hsa = StageSection::new(
            15,
            Schedule::WarmupStep {
                base_lr: 5e-3,
                warmup_start_lr: 1e-5,
                warmup_epochs: 2,
                milestones: vec![10, 13],
                gamma: 0.1,
            },
        );
        hsa.lambda1 = 0.05;
        hsa.lambda2 = 0.05;
        RunConfig {
            seed: 0,
            stages: all_stages(),
            allow_skip: false,
            model: ModelSection {
                source: ModelKind::Mini,
                archive: None,
                embed_dim: 32,
                num_tokens: 4,
                prompt_mode: PromptMode::Learnable,
                pretrain: Some(PretrainSpec::default()),
            },
            data: DataSection {
                synthetic: Some(SyntheticSpec::default()),
                eval_variant: 1,
                train_manifest: None,
                test_manifest: None,
            },
            augmentation: AugmentationSection {
                pad_pixels: 2,
                ..AugmentationSection::default()
            },
            sampler: SamplerSection {
                p: 4,
                k: 4,
                batch_size: 32,
                passes_per_epoch: 20,
            },
            train: StagesSection {
                tsg: StageSection::new(10, cosine(1e-2, 1e-4)),
                // gentle: at higher rates the infrared-only update drags the visible path
                ife: StageSection::new(10, cosine(1e-5, 1e-6)),
                hsa,
            },
            eval: EvalSection {
                protocol: ProtocolKind::Sysu,
                sysu: SysuProtocol {
                    trials: 10,
                    ..SysuProtocol::default()
                },
                regdb: RegdbProtocol::default(),
            },
        }
    }

    /// Hyperparameters for the full-scale SYSU-MM01 setting. Needs real data
    /// manifests and a pre-trained archive.
    pub fn paper_sysu(archive: PathBuf, train_manifest: PathBuf, test_manifest: PathBuf) -> Self {
        RunConfig {
            seed: 0,
            stages: all_stages(),
            allow_skip: false,
            model: ModelSection {
                source: ModelKind::Archive,
                archive: Some(archive),
                embed_dim: 1024,
                num_tokens: 4,
                prompt_mode: PromptMode::Learnable,
                pretrain: None,
            },
            data: DataSection {
                synthetic: None,
                eval_variant: 1,
                train_manifest: Some(train_manifest),
                test_manifest: Some(test_manifest),
            },
            augmentation: AugmentationSection {
                target_height: Some(288),
                target_width: Some(144),
                ..AugmentationSection::default()
            },
            sampler: SamplerSection {
                p: 4,
                k: 4,
                batch_size: 32,
                passes_per_epoch: 1,
            },
            train: StagesSection {
                tsg: StageSection::new(120, Schedule::cosine_default()),
                ife: StageSection::new(120, Schedule::cosine_default()),
                hsa: {
                    let mut s = StageSection::new(180, Schedule::step_default());
                    s.lambda1 = 0.05;
                    s.lambda2 = 0.05;
                    s
                },
            },
            eval: EvalSection {
                protocol: ProtocolKind::Sysu,
                sysu: SysuProtocol::default(),
                regdb: RegdbProtocol::default(),
            },
        }
    }

    pub fn paper_regdb(archive: PathBuf, train_manifest: PathBuf, test_manifest: PathBuf) -> Self {
        let mut c = Self::paper_sysu(archive, train_manifest, test_manifest);
        c.sampler = SamplerSection {
            p: 4,
            k: 2,
            batch_size: 16,
            passes_per_epoch: 1,
        };
        c.eval.protocol = ProtocolKind::Regdb;
        c
    }

    /// The desk configuration restricted to `stages` (ablation rows).
    pub fn ablation(mut self, stages: &[Stage]) -> Self {
        self.stages = stages.to_vec();
        self.allow_skip = stages != Stage::ALL;
        self
    }
}

fn apply_override(table: &mut toml::Table, spec: &str) -> std::result::Result<(), String> {
    let (key, raw) = spec
        .split_once('=')
        .ok_or_else(|| format!("override {spec:?} is not key=value"))?;
    let value = parse_value(raw.trim());
    let parts: Vec<&str> = key.trim().split('.').collect();
    if parts.iter().any(|p| p.is_empty()) {
        return Err(format!("override key {key:?} is malformed"));
    }
    let mut cur = table;
    for part in &parts[..parts.len() - 1] {
        let entry = cur
            .entry(part.to_string())
            .or_insert_with(|| toml::Value::Table(toml::Table::new()));
        cur = entry
            .as_table_mut()
            .ok_or_else(|| format!("override {key:?}: {part} is not a table"))?;
    }
    cur.insert(parts[parts.len() - 1].to_string(), value);
    Ok(())
}

fn parse_value(raw: &str) -> toml::Value {
    format!("v = {raw}")
        .parse::<toml::Table>()
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| toml::Value::String(raw.to_string()))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn desk_round_trips_through_toml() {
        let c = RunConfig::desk();
        let back = RunConfig::from_toml_str(&c.to_toml(), &[]).unwrap();
        assert_eq!(back, c);
        assert_eq!(back.training_hash(), c.training_hash());
    }

    #[test]
    fn overrides_apply_and_change_hash() {
        let c = RunConfig::desk();
        let o = RunConfig::from_toml_str(
            &c.to_toml(),
            &["train.hsa.lambda1=0.1".into(), "eval.sysu.trials=3".into()],
        )
        .unwrap();
        assert_eq!(o.train.hsa.lambda1, 0.1);
        assert_eq!(o.eval.sysu.trials, 3);
        assert_ne!(o.training_hash(), c.training_hash());
        assert!(RunConfig::from_toml_str(&c.to_toml(), &["nonsense".into()]).is_err());
    }

    #[test]
    fn unknown_keys_rejected() {
        let text = RunConfig::desk().to_toml() + "\n[extra]\nx = 1\n";
        assert!(matches!(RunConfig::from_toml_str(&text, &[]), Err(Error::Config(_))));
    }

    #[test]
    fn validation_enumerates_problems() {
        let mut c = RunConfig::desk();
        c.sampler.batch_size = 30;
        c.train.tsg.epochs = 0;
        c.model.embed_dim = 0;
        c.augmentation.flip_prob = 2.0;
        let problems = c.validate();
        assert_eq!(problems.len(), 4, "{problems:?}");
    }

    #[test]
    fn ablations_need_allow_skip() {
        let mut c = RunConfig::desk();
        c.stages = vec![Stage::Tsg, Stage::Hsa];
        assert_eq!(c.validate().len(), 1);
        let c = RunConfig::desk().ablation(&[Stage::Tsg, Stage::Hsa]);
        assert!(c.validate().is_empty());
        assert!(RunConfig::desk().ablation(&[]).validate().is_empty());
    }

    #[test]
    fn paper_presets_match_published_settings() {
        let c = RunConfig::paper_sysu("a".into(), "b".into(), "c".into());
        assert_eq!((c.train.tsg.epochs, c.train.ife.epochs, c.train.hsa.epochs), (120, 120, 180));
        assert_eq!(c.sampler.batch_size, 32);
        assert_eq!((c.train.hsa.lambda1, c.train.hsa.lambda2), (0.05, 0.05));
        assert!(c.validate().is_empty());
        let r = RunConfig::paper_regdb("a".into(), "b".into(), "c".into());
        assert_eq!(r.sampler.batch_size, 16);
    }
}
