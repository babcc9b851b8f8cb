//! Three-stream encoder assembly.
//!
//! A pre-trained image encoder (stem followed by residual blocks, band
//! pooling and a projection) is split in two: the stem and the first
//! `specific_blocks` blocks are duplicated into a visible branch `E_v` and an
//! infrared branch `E_r`; everything after them becomes the shared encoder
//! `E_s`. The text encoder `E_t` reads prompts composed by the prompt bank.
//! A bias-free linear classifier maps shared features to identity logits.

pub mod archive;
pub mod layers;
pub mod params;
pub mod stack;

use std::collections::BTreeMap;
use std::fmt;
use std::path::Path;

use ndarray::{Array1, Array2, Array3};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{ensure, Error, Result};
use crate::prompts::{self, PromptLayout, PromptMode, TokenTable};
use layers::{Activation, BandPoolSpec, ConvSpec, LinearSpec, MixerSpec, ResidualSpec};
use params::{normal_tensor, GradSink, Grads, ParamSet, ParamStore, Tensor};
use stack::{EncoderStack, Layer, StackTrace};

pub const VISIBLE: &str = "visible";
pub const INFRARED: &str = "infrared";
pub const SHARED: &str = "shared";
pub const TEXT: &str = "text";
pub const CLASSIFIER: &str = "classifier";
const PRETRAINED_IMAGE: &str = "image";
const TOKEN_EMBEDDING: &str = "token_embedding";

pub const PRETRAINED_KIND: &str = "pretrained";
pub const MODEL_KIND: &str = "model";

/// Similarity scale used when an archive carries none: `ln(100)`.
pub fn default_logit_scale() -> f64 {
    100f64.ln()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Stage {
    Tsg,
    Ife,
    Hsa,
}

impl Stage {
    pub const ALL: [Stage; 3] = [Stage::Tsg, Stage::Ife, Stage::Hsa];

    /// 1-based stage number used in directory names.
    pub fn number(self) -> usize {
        match self {
            Stage::Tsg => 1,
            Stage::Ife => 2,
            Stage::Hsa => 3,
        }
    }

    pub fn from_number(n: usize) -> Option<Stage> {
        Stage::ALL.get(n.wrapping_sub(1)).copied()
    }
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Stage::Tsg => "tsg",
            Stage::Ife => "ife",
            Stage::Hsa => "hsa",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Branch {
    Visible,
    Infrared,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FeatureModality {
    Visible,
    Infrared,
    Text,
}

impl From<Branch> for FeatureModality {
    fn from(b: Branch) -> Self {
        match b {
            Branch::Visible => FeatureModality::Visible,
            Branch::Infrared => FeatureModality::Infrared,
        }
    }
}

/// A D-dimensional feature with its source modality.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureVector {
    pub values: Array1<f64>,
    pub modality: FeatureModality,
    pub normalized: bool,
}

impl FeatureVector {
    pub fn dim(&self) -> usize {
        self.values.len()
    }

    pub fn norm(&self) -> f64 {
        self.values.dot(&self.values).sqrt()
    }
}

pub(crate) fn l2_normalize(v: &Array1<f64>) -> Array1<f64> {
    let n = v.dot(v).sqrt();
    if n > 0.0 {
        v / n
    } else {
        v.clone()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BlockArch {
    pub channels: usize,
    pub stride: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ImageArch {
    pub input_height: usize,
    pub input_width: usize,
    pub stem_channels: usize,
    pub blocks: Vec<BlockArch>,
    pub pool_bands: usize,
    /// Number of residual blocks (after the stem) kept modality-specific.
    pub specific_blocks: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TextArch {
    pub token_dim: usize,
    pub layers: usize,
    pub context_len: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelArch {
    pub image: ImageArch,
    pub text: TextArch,
    pub embed_dim: usize,
    #[serde(default)]
    pub logit_scale: Option<f64>,
    pub pixel_mean: [f64; 3],
    pub pixel_std: [f64; 3],
}

impl ModelArch {
    /// Small randomly initialised stand-in: a two-stage convolutional stack
    /// and a two-layer token mixer.
    pub fn mini(embed_dim: usize) -> Self {
        Self {
            image: ImageArch {
                input_height: 32,
                input_width: 16,
                stem_channels: 8,
                blocks: vec![
                    BlockArch { channels: 8, stride: 1 },
                    BlockArch { channels: 16, stride: 2 },
                ],
                pool_bands: 4,
                specific_blocks: 1,
            },
            text: TextArch {
                token_dim: 32,
                layers: 2,
                context_len: 16,
            },
            embed_dim,
            logit_scale: None,
            pixel_mean: [0.5; 3],
            pixel_std: [0.5; 3],
        }
    }

    /// Five-block residual layout at 288x144 input; weights must come from
    /// an archive.
    pub fn full_scale() -> Self {
        Self {
            image: ImageArch {
                input_height: 288,
                input_width: 144,
                stem_channels: 64,
                blocks: vec![
                    BlockArch { channels: 64, stride: 1 },
                    BlockArch { channels: 256, stride: 1 },
                    BlockArch { channels: 512, stride: 2 },
                    BlockArch { channels: 1024, stride: 2 },
                    BlockArch { channels: 2048, stride: 2 },
                ],
                pool_bands: 1,
                specific_blocks: 1,
            },
            text: TextArch {
                token_dim: 512,
                layers: 12,
                context_len: 77,
            },
            embed_dim: 1024,
            logit_scale: Some(default_logit_scale()),
            pixel_mean: [0.48145466, 0.4578275, 0.40821073],
            pixel_std: [0.26862954, 0.26130258, 0.27577711],
        }
    }

    pub fn validate(&self) -> Vec<String> {
        let mut problems = Vec::new();
        let img = &self.image;
        if img.input_height == 0 || img.input_width == 0 {
            problems.push("model input size must be positive".into());
        }
        if img.stem_channels == 0 || img.blocks.iter().any(|b| b.channels == 0 || b.stride == 0) {
            problems.push("channel counts and strides must be positive".into());
        }
        if img.specific_blocks >= img.blocks.len() {
            problems.push(format!(
                "specific_blocks ({}) must leave at least one block for the shared encoder ({} blocks)",
                img.specific_blocks,
                img.blocks.len()
            ));
        }
        if img.pool_bands == 0 {
            problems.push("pool_bands must be positive".into());
        } else {
            let (h, _) = self.shared_map_size();
            if h < img.pool_bands {
                problems.push(format!("final feature map height {h} is smaller than pool_bands {}", img.pool_bands));
            }
        }
        if self.embed_dim == 0 {
            problems.push("embed_dim must be positive".into());
        }
        if self.text.token_dim == 0 || self.text.layers == 0 {
            problems.push("text token_dim and layers must be positive".into());
        }
        if self.pixel_std.iter().any(|s| *s <= 0.0) {
            problems.push("pixel_std entries must be positive".into());
        }
        problems
    }

    fn shared_map_size(&self) -> (usize, usize) {
        let mut h = self.image.input_height;
        let mut w = self.image.input_width;
        for b in &self.image.blocks {
            h = (h + 2 - 3) / b.stride + 1;
            w = (w + 2 - 3) / b.stride + 1;
        }
        (h, w)
    }

    fn final_channels(&self) -> usize {
        self.image
            .blocks
            .last()
            .map_or(self.image.stem_channels, |b| b.channels)
    }

    /// Layers of the un-split image encoder; `name_of` maps the local layer
    /// name (`stem`, `block1`, ..., `proj`) to its full parameter prefix.
    fn image_layers(&self, name_of: impl Fn(&str) -> String) -> Vec<Layer> {
        let img = &self.image;
        let mut layers = vec![Layer::ConvRelu(ConvSpec {
            path: name_of("stem"),
            in_channels: 3,
            out_channels: img.stem_channels,
            kernel: 3,
            stride: 1,
        })];
        let mut channels = img.stem_channels;
        for (i, b) in img.blocks.iter().enumerate() {
            let name = format!("block{}", i + 1);
            layers.push(Layer::Residual(ResidualSpec::new(&name_of(&name), channels, b.channels, b.stride)));
            channels = b.channels;
        }
        layers.push(Layer::BandPool(BandPoolSpec { bands: img.pool_bands }));
        layers.push(Layer::Linear(LinearSpec {
            path: name_of("proj"),
            in_features: self.final_channels() * img.pool_bands,
            out_features: self.embed_dim,
            bias: true,
        }));
        layers
    }

    fn text_layers(&self, prefix: &str) -> Vec<Layer> {
        let t = &self.text;
        let mut layers = vec![Layer::Positional {
            path: format!("{prefix}.pos"),
            len: t.context_len,
            dim: t.token_dim,
        }];
        for l in 0..t.layers {
            layers.push(Layer::Mixer(MixerSpec {
                path: format!("{prefix}.layer{l}"),
                dim: t.token_dim,
            }));
        }
        layers.push(Layer::LastToken);
        layers.push(Layer::Linear(LinearSpec {
            path: format!("{prefix}.proj"),
            in_features: t.token_dim,
            out_features: self.embed_dim,
            bias: false,
        }));
        layers
    }

    /// Number of un-split image layers that go to the modality branches.
    fn specific_layer_count(&self) -> usize {
        1 + self.image.specific_blocks
    }
}

/// Pre-trained image and text encoders before the three-stream split.
#[derive(Debug, Clone, PartialEq)]
pub struct PretrainedArchive {
    pub arch: ModelArch,
    pub tokens: TokenTable,
    pub params: ParamStore,
}

impl PretrainedArchive {
    fn image_stack(arch: &ModelArch) -> EncoderStack {
        EncoderStack::new(
            PRETRAINED_IMAGE,
            arch.image_layers(|n| format!("{PRETRAINED_IMAGE}.{n}")),
        )
    }

    /// Every path and shape a pre-trained archive must provide.
    pub fn expected_shapes(arch: &ModelArch) -> Vec<(String, Vec<usize>)> {
        let mut shapes = Self::image_stack(arch).param_shapes();
        shapes.extend(EncoderStack::new(TEXT, arch.text_layers(TEXT)).param_shapes());
        shapes.push((
            TOKEN_EMBEDDING.to_string(),
            vec![prompts::TEMPLATE_WORDS.len(), arch.text.token_dim],
        ));
        shapes
    }

    /// Randomly initialised encoders with the given architecture.
    pub fn random(arch: ModelArch, seed: u64) -> Result<Self> {
        let problems = arch.validate();
        if !problems.is_empty() {
            return Err(Error::Config(problems));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = ParamStore::new();
        for (path, shape) in Self::expected_shapes(&arch) {
            let t = if path == TOKEN_EMBEDDING {
                normal_tensor(&shape, 0.02, &mut rng)
            } else if path.ends_with(".bias") {
                Tensor::zeros(ndarray::IxDyn(&shape))
            } else if path.ends_with(".pos") {
                normal_tensor(&shape, 0.01, &mut rng)
            } else if path.starts_with(TEXT) && path.contains(".layer") {
                normal_tensor(&shape, 0.5 / (shape[0] as f64).sqrt(), &mut rng)
            } else if shape.len() == 4 {
                let fan_in = shape[1] * shape[2] * shape[3];
                normal_tensor(&shape, (2.0 / fan_in as f64).sqrt(), &mut rng)
            } else {
                normal_tensor(&shape, 1.0 / (shape[1] as f64).sqrt(), &mut rng)
            };
            params.insert(path, t);
        }
        let table = params.remove(TOKEN_EMBEDDING).expect("inserted above");
        let tokens = TokenTable {
            words: prompts::TEMPLATE_WORDS.iter().map(|w| w.to_string()).collect(),
            embeddings: table.into_dimensionality().expect("2-d"),
        };
        Ok(Self { arch, tokens, params })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut tensors: BTreeMap<String, Tensor> =
            self.params.iter().map(|(k, v)| (k.to_string(), v.clone())).collect();
        tensors.insert(TOKEN_EMBEDDING.into(), self.tokens.embeddings.clone().into_dyn());
        let meta = serde_json::json!({
            "arch": self.arch,
            "vocab": self.tokens.words,
        });
        archive::write(path, PRETRAINED_KIND, &meta, &tensors)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let c = archive::read(path)?;
        if c.kind != PRETRAINED_KIND {
            return Err(Error::Load(format!(
                "{}: expected a {PRETRAINED_KIND} archive, found {:?}",
                path.display(),
                c.kind
            )));
        }
        let arch: ModelArch = serde_json::from_value(c.metadata["arch"].clone())
            .map_err(|e| Error::Load(format!("{}: bad architecture record: {e}", path.display())))?;
        let words: Vec<String> = serde_json::from_value(c.metadata["vocab"].clone())
            .map_err(|e| Error::Load(format!("{}: bad vocabulary: {e}", path.display())))?;
        check_coverage(path, &Self::expected_shapes(&arch), &c.tensors)?;
        let mut tensors = c.tensors;
        let table = tensors.remove(TOKEN_EMBEDDING).expect("coverage checked");
        let mut params = ParamStore::new();
        for (k, v) in tensors {
            params.insert(k, v);
        }
        Ok(Self {
            arch,
            tokens: TokenTable {
                words,
                embeddings: table.into_dimensionality().expect("2-d"),
            },
            params,
        })
    }
}

fn check_coverage(
    path: &Path,
    expected: &[(String, Vec<usize>)],
    found: &BTreeMap<String, Tensor>,
) -> Result<()> {
    let mut bad = Vec::new();
    for (p, shape) in expected {
        match found.get(p) {
            None => bad.push(format!("{p} (missing)")),
            Some(t) if t.shape() != shape.as_slice() => {
                bad.push(format!("{p} (shape {:?}, expected {shape:?})", t.shape()))
            }
            _ => {}
        }
    }
    if bad.is_empty() {
        Ok(())
    } else {
        Err(Error::ArchiveMismatch {
            path: path.to_path_buf(),
            paths: bad,
        })
    }
}

/// Where the encoders come from.
#[derive(Debug, Clone)]
pub enum ModelSource {
    /// Built-in small encoders, randomly initialised from `seed`.
    Mini { arch: ModelArch, seed: u64 },
    Pretrained(PretrainedArchive),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct PromptSettings {
    pub num_tokens: usize,
    pub mode: PromptMode,
}

impl Default for PromptSettings {
    fn default() -> Self {
        Self {
            num_tokens: 4,
            mode: PromptMode::Learnable,
        }
    }
}

/// The four encoders, prompt bank, classifier and similarity scale.
#[derive(Debug, Clone, PartialEq)]
pub struct ThreeStreamModel {
    pub arch: ModelArch,
    pub num_identities: usize,
    pub visible_encoder: EncoderStack,
    pub infrared_encoder: EncoderStack,
    pub shared_encoder: EncoderStack,
    pub text_encoder: EncoderStack,
    pub prompts: PromptLayout,
    pub classifier: LinearSpec,
    /// `γ`; similarities are scaled by `exp(γ)`. Never trained.
    pub logit_scale: f64,
    pub params: ParamStore,
}

/// Activations kept for one image's backward pass.
#[derive(Debug, Clone)]
pub struct ImageTrace {
    specific: StackTrace,
    shared: StackTrace,
}

const CLASSIFIER_STD: f64 = 0.001;

fn split_stacks(arch: &ModelArch) -> (EncoderStack, EncoderStack, EncoderStack) {
    let n_specific = arch.specific_layer_count();
    let branch = |prefix: &str| {
        let mut layers = arch.image_layers(|n| format!("{prefix}.{n}"));
        layers.truncate(n_specific);
        EncoderStack::new(prefix, layers)
    };
    let mut shared_layers = arch.image_layers(|n| format!("{SHARED}.{n}"));
    shared_layers.drain(..n_specific);
    (
        branch(VISIBLE),
        branch(INFRARED),
        EncoderStack::new(SHARED, shared_layers),
    )
}

fn classifier_spec(arch: &ModelArch, n: usize) -> LinearSpec {
    LinearSpec {
        path: CLASSIFIER.to_string(),
        in_features: arch.embed_dim,
        out_features: n,
        bias: false,
    }
}

/// Splits a pre-trained (or mini) encoder pair into the three-stream model.
pub fn build_model(
    source: ModelSource,
    num_identities: usize,
    prompt: PromptSettings,
    seed: u64,
) -> Result<ThreeStreamModel> {
    ensure!(num_identities > 0, "number of identities must be positive, got {num_identities}");
    let pretrained = match source {
        ModelSource::Mini { arch, seed } => PretrainedArchive::random(arch, seed)?,
        ModelSource::Pretrained(p) => p,
    };
    let arch = pretrained.arch.clone();
    let problems = arch.validate();
    if !problems.is_empty() {
        return Err(Error::Config(problems));
    }
    let (visible, infrared, shared) = split_stacks(&arch);
    let specific_names: Vec<String> = std::iter::once("stem".to_string())
        .chain((1..=arch.image.specific_blocks).map(|i| format!("block{i}")))
        .collect();

    let mut params = ParamStore::new();
    for (path, value) in pretrained.params.iter() {
        if let Some(local) = path.strip_prefix("image.") {
            let layer = local.split('.').next().unwrap_or_default();
            if specific_names.iter().any(|s| s == layer) {
                params.insert(format!("{VISIBLE}.{local}"), value.clone());
                params.insert(format!("{INFRARED}.{local}"), value.clone());
            } else {
                params.insert(format!("{SHARED}.{local}"), value.clone());
            }
        } else {
            params.insert(path, value.clone());
        }
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let bank = prompts::init_prompt_bank_with_table(
        num_identities,
        prompt.num_tokens,
        prompt.mode,
        &pretrained.tokens,
        seed.wrapping_add(1),
    )?;
    ensure!(
        bank.layout.sequence_len() <= arch.text.context_len,
        "prompt length {} exceeds text context length {}",
        bank.layout.sequence_len(),
        arch.text.context_len
    );
    for (p, t) in bank.params.iter() {
        params.insert(p, t.clone());
    }
    let classifier = classifier_spec(&arch, num_identities);
    params.insert(
        classifier.weight_path(),
        normal_tensor(&[num_identities, arch.embed_dim], CLASSIFIER_STD, &mut rng),
    );

    Ok(ThreeStreamModel {
        logit_scale: arch.logit_scale.unwrap_or_else(default_logit_scale),
        text_encoder: EncoderStack::new(TEXT, arch.text_layers(TEXT)),
        arch,
        num_identities,
        visible_encoder: visible,
        infrared_encoder: infrared,
        shared_encoder: shared,
        prompts: bank.layout,
        classifier,
        params,
    })
}

/// Convenience: the built-in mini model.
pub fn build_mini(num_identities: usize, embed_dim: usize, prompt: PromptSettings, seed: u64) -> Result<ThreeStreamModel> {
    build_model(
        ModelSource::Mini {
            arch: ModelArch::mini(embed_dim),
            seed,
        },
        num_identities,
        prompt,
        seed,
    )
}

#[derive(Debug, Serialize, Deserialize)]
struct ModelMeta {
    arch: ModelArch,
    num_identities: usize,
    prompts: PromptLayout,
    logit_scale: f64,
}

impl ThreeStreamModel {
    pub fn embed_dim(&self) -> usize {
        self.arch.embed_dim
    }

    pub fn similarity_scale(&self) -> f64 {
        self.logit_scale
    }

    pub fn branch(&self, branch: Branch) -> &EncoderStack {
        match branch {
            Branch::Visible => &self.visible_encoder,
            Branch::Infrared => &self.infrared_encoder,
        }
    }

    /// Every path the assembly expects, with shapes.
    pub fn expected_shapes(&self) -> Vec<(String, Vec<usize>)> {
        let mut v = Vec::new();
        for s in [
            &self.visible_encoder,
            &self.infrared_encoder,
            &self.shared_encoder,
            &self.text_encoder,
        ] {
            v.extend(s.param_shapes());
        }
        let l = &self.prompts;
        v.push((prompts::PREFIX_PATH.into(), vec![l.prefix_len, l.token_dim]));
        v.push((prompts::SUFFIX_PATH.into(), vec![l.suffix_len, l.token_dim]));
        match l.mode {
            PromptMode::Learnable => v.push((
                prompts::TOKENS_PATH.into(),
                vec![l.num_identities, l.num_tokens, l.token_dim],
            )),
            PromptMode::FixedTemplate => {
                v.push((prompts::CLASS_TOKENS_PATH.into(), vec![l.num_identities, l.token_dim]))
            }
        }
        v.push((self.classifier.weight_path(), vec![self.num_identities, self.arch.embed_dim]));
        v
    }

    /// Parameters an optimizer may touch during `stage`.
    pub fn trainable_parameters(&self, stage: Stage) -> ParamSet {
        match stage {
            Stage::Tsg => self.prompts.learnable_paths(),
            Stage::Ife => self.shared_encoder.param_paths(),
            Stage::Hsa => {
                let mut set = self.visible_encoder.param_paths();
                set.extend(self.infrared_encoder.param_paths());
                set.extend(self.text_encoder.param_paths());
                set.extend(self.prompts.learnable_paths());
                set.insert(self.classifier.weight_path());
                set
            }
        }
    }

    fn check_image(&self, img: &Array3<f64>) -> Result<()> {
        let want = (3, self.arch.image.input_height, self.arch.image.input_width);
        ensure!(img.dim() == want, "image shape {:?} does not match model input {want:?}", img.dim());
        ensure!(img.iter().all(|v| v.is_finite()), "image contains non-finite values");
        Ok(())
    }

    /// Un-normalised shared feature `E_s(E_branch(x))` for a `[3, H, W]` input.
    pub fn image_feature(&self, branch: Branch, img: &Array3<f64>) -> Result<Array1<f64>> {
        self.check_image(img)?;
        let mid = self
            .branch(branch)
            .apply(&self.params, Activation::Map(img.clone()));
        Ok(self.shared_encoder.apply(&self.params, mid).into_flat())
    }

    pub fn image_feature_traced(&self, branch: Branch, img: &Array3<f64>) -> Result<(Array1<f64>, ImageTrace)> {
        self.check_image(img)?;
        let (mid, specific) = self
            .branch(branch)
            .forward(&self.params, Activation::Map(img.clone()));
        let (out, shared) = self.shared_encoder.forward(&self.params, mid);
        Ok((out.into_flat(), ImageTrace { specific, shared }))
    }

    /// Accumulates gradients of `grad` (w.r.t. the raw shared feature) into
    /// `grads` for the trainable parameters of both image stacks.
    pub fn image_backward(
        &self,
        branch: Branch,
        trace: &ImageTrace,
        grad: Array1<f64>,
        sink: GradSink<'_>,
        grads: &mut Grads,
    ) {
        let specific = self.branch(branch);
        let need_mid = specific.has_trainable(sink);
        let g_mid = self.shared_encoder.backward(
            &self.params,
            &trace.shared,
            Activation::Flat(grad),
            sink,
            grads,
            need_mid,
        );
        if let Some(g) = g_mid {
            specific.backward(&self.params, &trace.specific, g, sink, grads, false);
        }
    }

    fn encode_images(&self, branch: Branch, images: &[Array3<f64>]) -> Result<Vec<FeatureVector>> {
        images
            .iter()
            .map(|img| {
                let raw = self.image_feature(branch, img)?;
                finite_or_err(&raw, "image feature")?;
                Ok(FeatureVector {
                    values: l2_normalize(&raw),
                    modality: branch.into(),
                    normalized: true,
                })
            })
            .collect()
    }

    /// L2-normalised `E_s(E_v(x))` for each `[3, H, W]` image.
    pub fn encode_visible(&self, images: &[Array3<f64>]) -> Result<Vec<FeatureVector>> {
        self.encode_images(Branch::Visible, images)
    }

    /// L2-normalised `E_s(E_r(x))`; infrared inputs are 3-channel replicas.
    pub fn encode_infrared(&self, images: &[Array3<f64>]) -> Result<Vec<FeatureVector>> {
        self.encode_images(Branch::Infrared, images)
    }

    pub fn text_feature(&self, identity: usize) -> Result<Array1<f64>> {
        let seq = self.prompts.compose(&self.params, identity)?;
        Ok(self
            .text_encoder
            .apply(&self.params, Activation::Seq(seq))
            .into_flat())
    }

    pub fn text_feature_traced(&self, identity: usize) -> Result<(Array1<f64>, StackTrace)> {
        let seq = self.prompts.compose(&self.params, identity)?;
        let (out, trace) = self.text_encoder.forward(&self.params, Activation::Seq(seq));
        Ok((out.into_flat(), trace))
    }

    /// Backpropagates through `E_t` and onto the identity's prompt slots.
    pub fn text_backward(
        &self,
        identity: usize,
        trace: &StackTrace,
        grad: Array1<f64>,
        sink: GradSink<'_>,
        grads: &mut Grads,
    ) {
        let want_slots = sink.wants(prompts::TOKENS_PATH);
        let g_seq = self.text_encoder.backward(
            &self.params,
            trace,
            Activation::Flat(grad),
            sink,
            grads,
            want_slots,
        );
        if let Some(g) = g_seq {
            let g = g.into_seq();
            let full = prompts::slot_gradient(&self.prompts, identity, &g);
            grads.accumulate(prompts::TOKENS_PATH, full.shape(), full.as_slice().expect("layout"));
        }
    }

    /// L2-normalised `E_t(T_i)` for each identity.
    pub fn encode_identity_texts(&self, identity_ids: &[usize]) -> Result<Vec<FeatureVector>> {
        identity_ids
            .iter()
            .map(|&id| {
                let raw = self.text_feature(id)?;
                finite_or_err(&raw, "text feature")?;
                Ok(FeatureVector {
                    values: l2_normalize(&raw),
                    modality: FeatureModality::Text,
                    normalized: true,
                })
            })
            .collect()
    }

    /// Text features for every identity as an `N x D` matrix (normalised).
    pub fn all_text_features(&self) -> Result<Array2<f64>> {
        let ids: Vec<usize> = (0..self.num_identities).collect();
        let feats = self.encode_identity_texts(&ids)?;
        Ok(stack_rows(feats.iter().map(|f| &f.values)))
    }

    /// Raw identity logits `W f`.
    pub fn classify(&self, features: &[Array1<f64>]) -> Result<Array2<f64>> {
        let d = self.arch.embed_dim;
        let mut out = Array2::zeros((features.len(), self.num_identities));
        for (i, f) in features.iter().enumerate() {
            ensure!(f.len() == d, "feature dimension {} does not match classifier input {d}", f.len());
            out.row_mut(i).assign(&self.classifier.forward(&self.params, f));
        }
        Ok(out)
    }

    pub fn classify_features(&self, features: &[FeatureVector]) -> Result<Array2<f64>> {
        let raw: Vec<Array1<f64>> = features.iter().map(|f| f.values.clone()).collect();
        self.classify(&raw)
    }

    pub(crate) fn classifier_backward(
        &self,
        feature: &Array1<f64>,
        grad_logits: &Array1<f64>,
        sink: GradSink<'_>,
        grads: &mut Grads,
    ) -> Array1<f64> {
        self.classifier
            .backward(&self.params, feature, grad_logits, sink, grads, true)
            .expect("input grad requested")
    }

    fn metadata(&self) -> serde_json::Value {
        serde_json::to_value(ModelMeta {
            arch: self.arch.clone(),
            num_identities: self.num_identities,
            prompts: self.prompts,
            logit_scale: self.logit_scale,
        })
        .expect("metadata serializes")
    }

    pub(crate) fn param_map(&self) -> BTreeMap<String, Tensor> {
        self.params
            .iter()
            .map(|(k, v)| (k.to_string(), v.clone()))
            .collect()
    }

    /// Writes the full assembly as a model archive.
    pub fn save(&self, path: &Path) -> Result<()> {
        archive::write(path, MODEL_KIND, &self.metadata(), &self.param_map())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let c = archive::read(path)?;
        if c.kind != MODEL_KIND {
            return Err(Error::Load(format!(
                "{}: expected a {MODEL_KIND} archive, found {:?}",
                path.display(),
                c.kind
            )));
        }
        Self::from_parts(path, c.metadata, c.tensors)
    }

    pub(crate) fn to_parts(&self) -> (serde_json::Value, BTreeMap<String, Tensor>) {
        (self.metadata(), self.param_map())
    }

    pub(crate) fn from_parts(
        origin: &Path,
        metadata: serde_json::Value,
        tensors: BTreeMap<String, Tensor>,
    ) -> Result<Self> {
        let meta: ModelMeta = serde_json::from_value(metadata)
            .map_err(|e| Error::Load(format!("{}: bad model metadata: {e}", origin.display())))?;
        let (visible, infrared, shared) = split_stacks(&meta.arch);
        let mut model = ThreeStreamModel {
            text_encoder: EncoderStack::new(TEXT, meta.arch.text_layers(TEXT)),
            classifier: classifier_spec(&meta.arch, meta.num_identities),
            arch: meta.arch,
            num_identities: meta.num_identities,
            visible_encoder: visible,
            infrared_encoder: infrared,
            shared_encoder: shared,
            prompts: meta.prompts,
            logit_scale: meta.logit_scale,
            params: ParamStore::new(),
        };
        check_coverage(origin, &model.expected_shapes(), &tensors)?;
        for (k, v) in tensors {
            model.params.insert(k, v);
        }
        Ok(model)
    }
}

pub(crate) fn stack_rows<'a>(rows: impl Iterator<Item = &'a Array1<f64>>) -> Array2<f64> {
    let rows: Vec<_> = rows.map(|r| r.view()).collect();
    if rows.is_empty() {
        return Array2::zeros((0, 0));
    }
    ndarray::stack(ndarray::Axis(0), &rows).expect("equal lengths")
}

fn finite_or_err(v: &Array1<f64>, what: &str) -> Result<()> {
    if v.iter().all(|x| x.is_finite()) {
        Ok(())
    } else {
        Err(Error::Divergence(format!("{what} contains non-finite values")))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn mini(n: usize) -> ThreeStreamModel {
        build_mini(n, 32, PromptSettings::default(), 11).unwrap()
    }

    fn image(model: &ThreeStreamModel, seed: u64) -> Array3<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (h, w) = (model.arch.image.input_height, model.arch.image.input_width);
        normal_tensor(&[3, h, w], 1.0, &mut rng).into_dimensionality().unwrap()
    }

    #[test]
    fn branches_identical_at_init() {
        let m = mini(4);
        for path in m.visible_encoder.param_paths() {
            let other = path.replacen(VISIBLE, INFRARED, 1);
            assert_eq!(m.params.get(&path), m.params.get(&other));
        }
        let x = image(&m, 3);
        let v = m.encode_visible(std::slice::from_ref(&x)).unwrap();
        let r = m.encode_infrared(std::slice::from_ref(&x)).unwrap();
        assert_eq!(v[0].values, r[0].values);
        assert_eq!(v[0].modality, FeatureModality::Visible);
        assert_eq!(r[0].modality, FeatureModality::Infrared);
    }

    #[test]
    fn encoders_return_unit_vectors() {
        let m = mini(4);
        let imgs = vec![image(&m, 1), image(&m, 2)];
        let feats = m.encode_visible(&imgs).unwrap();
        assert_eq!(feats.len(), 2);
        for f in &feats {
            assert_eq!(f.dim(), 32);
            assert!((f.norm() - 1.0).abs() < 1e-5);
        }
        let again = m.encode_visible(&imgs[..1]).unwrap();
        assert_eq!(again[0], feats[0]);
    }

    #[test]
    fn wrong_image_shape_is_rejected() {
        let m = mini(2);
        let bad = Array3::zeros((3, 10, 10));
        assert!(matches!(m.encode_visible(&[bad]), Err(Error::Validation(_))));
    }

    #[test]
    fn text_features_distinct_and_deterministic() {
        let m = mini(4);
        let feats = m.encode_identity_texts(&[0, 1, 2, 3]).unwrap();
        for i in 0..4 {
            assert!((feats[i].norm() - 1.0).abs() < 1e-5);
            for j in 0..i {
                assert_ne!(feats[i].values, feats[j].values);
            }
        }
        let again = m.encode_identity_texts(&[2, 2]).unwrap();
        assert_eq!(again[0], again[1]);
        assert!(m.encode_identity_texts(&[4]).is_err());
    }

    #[test]
    fn classifier_shape_and_zero_input() {
        let m = mini(5);
        let logits = m.classify(&vec![Array1::zeros(32); 3]).unwrap();
        assert_eq!(logits.dim(), (3, 5));
        assert!(logits.iter().all(|v| *v == 0.0));
        assert!(m.classify(&[Array1::zeros(31)]).is_err());
    }

    #[test]
    fn classifier_init_is_small() {
        let m = mini(50);
        let w = m.params.get("classifier.weight");
        let std = (w.mapv(|v| v * v).mean().unwrap()).sqrt();
        assert!((std - 0.001).abs() < 0.0002, "std {std}");
    }

    #[test]
    fn trainable_sets_follow_stage_contract() {
        let m = mini(4);
        let tsg = m.trainable_parameters(Stage::Tsg);
        assert_eq!(tsg, m.prompts.learnable_paths());
        let ife = m.trainable_parameters(Stage::Ife);
        assert_eq!(ife, m.shared_encoder.param_paths());
        assert!(tsg.is_disjoint(&ife));
        let hsa = m.trainable_parameters(Stage::Hsa);
        assert!(hsa.is_disjoint(&ife));
        assert!(hsa.contains("classifier.weight"));
        assert!(hsa.contains(prompts::TOKENS_PATH));
        assert!(!hsa.contains(prompts::PREFIX_PATH));
    }

    #[test]
    fn zero_identities_rejected() {
        assert!(matches!(
            build_mini(0, 32, PromptSettings::default(), 1),
            Err(Error::Validation(_))
        ));
    }

    #[test]
    fn expected_shapes_cover_params_exactly() {
        let m = mini(3);
        let expected: ParamSet = m.expected_shapes().into_iter().map(|(p, _)| p).collect();
        let actual: ParamSet = m.params.paths().map(String::from).collect();
        assert_eq!(expected, actual);
    }
}
