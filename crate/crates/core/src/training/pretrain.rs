//! Visible-only pre-training of the mini image encoder.
//!
//! Stands in for a web-scale pre-trained encoder at desk scale: the image
//! encoder learns to tell apart visible images of a separate pool of
//! synthetic identities and never sees an infrared image. The text encoder
//! stays at its seeded initialisation.

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::optim::{Adam, AdamConfig};
use crate::data::{augment, eval_transform, sample_rng, synthesize_dataset, AugmentationConfig, Modality, SyntheticSpec};
use crate::error::{Error, Result};
use crate::losses;
use crate::model::params::{GradSink, Grads, ParamSet};
use crate::model::{
    build_model, stack_rows, Branch, ModelArch, ModelSource, PretrainedArchive, PromptSettings, SHARED, VISIBLE,
};

const POOL_STREAM: u64 = 0x706f_6f6c;
const SHUFFLE_STREAM: u64 = 0x7368_7566;
const AUGMENT_STREAM: u64 = 0x6175_676d;
const GROUP: usize = 4;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PretrainSpec {
    /// Size of the identity pool, disjoint from the training identities.
    pub identities: usize,
    pub images_per_identity: usize,
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
}

impl Default for PretrainSpec {
    fn default() -> Self {
        Self {
            identities: 40,
            images_per_identity: 20,
            epochs: 10,
            batch_size: 32,
            lr: 3e-3,
        }
    }
}

impl PretrainSpec {
    pub fn validate(&self) -> Vec<String> {
        let mut p = Vec::new();
        if self.identities < 2 || self.images_per_identity < 2 {
            p.push("pretrain needs at least 2 identities with images".to_string());
        }
        if self.epochs == 0 || self.batch_size < GROUP {
            p.push(format!("pretrain epochs must be positive and batch_size at least {GROUP}"));
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            p.push("pretrain lr must be positive".to_string());
        }
        p
    }
}

/// Trains a fresh mini image encoder with an identity classifier on
/// visible images and returns it as a pre-trained archive. `images` sets
/// image size and noise; its prototypes are replaced by a separate pool.
pub fn pretrain_mini(
    arch: ModelArch,
    spec: &PretrainSpec,
    images: &SyntheticSpec,
    aug: &AugmentationConfig,
    seed: u64,
) -> Result<PretrainedArchive> {
    let problems = spec.validate();
    if !problems.is_empty() {
        return Err(Error::Config(problems));
    }
    let pool = synthesize_dataset(&SyntheticSpec {
        num_identities: spec.identities,
        images_per_identity_per_modality: spec.images_per_identity,
        seed: images.seed ^ POOL_STREAM,
        variant: 0,
        ..images.clone()
    })
    .filter(|s| s.modality == Modality::Visible);
    let start = PretrainedArchive::random(arch.clone(), seed)?;
    let mut model = build_model(
        ModelSource::Pretrained(start.clone()),
        spec.identities,
        PromptSettings::default(),
        seed,
    )?;
    let mut trainable: ParamSet = model.params.paths_with_prefix(VISIBLE);
    trainable.extend(model.params.paths_with_prefix(SHARED));
    trainable.insert(model.classifier.weight_path());
    let mut adam = Adam::new(AdamConfig::default(), ParamSet::new());

    // groups of GROUP images of one identity, so every anchor has positives
    let mut by_id: Vec<Vec<usize>> = vec![Vec::new(); spec.identities];
    for (i, s) in pool.samples.iter().enumerate() {
        by_id[s.identity].push(i);
    }
    let per_batch = (spec.batch_size / GROUP).max(1);
    for epoch in 0..spec.epochs {
        let mut rng = sample_rng(seed, SHUFFLE_STREAM, epoch as u64, 0);
        let mut groups: Vec<Vec<usize>> = Vec::new();
        for members in &by_id {
            let mut m = members.clone();
            m.shuffle(&mut rng);
            groups.extend(m.chunks(GROUP).filter(|c| c.len() > 1).map(<[usize]>::to_vec));
        }
        groups.shuffle(&mut rng);
        let batches: Vec<Vec<usize>> = groups.chunks(per_batch).map(|g| g.concat()).collect();
        let steps = batches.len();
        for (b, chunk) in batches.iter().enumerate() {
            let mut feats = Vec::with_capacity(chunk.len());
            let mut traces = Vec::with_capacity(chunk.len());
            for (i, &s) in chunk.iter().enumerate() {
                let mut rng = sample_rng(seed, AUGMENT_STREAM + epoch as u64, b as u64, i as u64);
                let x = augment(&*pool.samples[s].load_rgb()?, aug, &mut rng)?;
                let (f, t) = model.image_feature_traced(Branch::Visible, &x)?;
                feats.push(f);
                traces.push(t);
            }
            let labels: Vec<usize> = chunk.iter().map(|&s| pool.samples[s].identity).collect();
            let logits = model.classify(&feats)?;
            let id = losses::id_loss(&logits, &labels)?;
            let wrt = losses::wrt_loss(&stack_rows(feats.iter()), &labels)?;
            if !(id.value + wrt.value).is_finite() {
                return Err(Error::Divergence(format!("pretraining epoch {epoch} step {b}")));
            }
            let sink = GradSink { trainable: &trainable };
            let mut grads = Grads::new();
            for k in 0..feats.len() {
                let from_cls = model.classifier_backward(&feats[k], &id.d_logits.row(k).to_owned(), sink, &mut grads);
                let g = &wrt.d_features.row(k) + &from_cls;
                model.image_backward(Branch::Visible, &traces[k], g, sink, &mut grads);
            }
            let frac = (epoch as f64 + b as f64 / steps as f64) / spec.epochs as f64;
            let lr = spec.lr * 0.5 * (1.0 + (std::f64::consts::PI * frac).cos());
            adam.step(&mut model.params, &grads, &trainable, lr);
        }
    }

    let mut out = start;
    let image_paths: Vec<String> = out.params.paths_with_prefix("image").into_iter().collect();
    for path in image_paths {
        let local = path.strip_prefix("image.").expect("prefixed");
        let src = [VISIBLE, SHARED]
            .iter()
            .map(|b| format!("{b}.{local}"))
            .find(|p| model.params.contains(p))
            .ok_or_else(|| Error::validation(format!("no trained tensor for {path}")))?;
        out.params.insert(path, model.params.get(&src).clone());
    }
    Ok(out)
}

/// Leave-one-out nearest-neighbour accuracy on a fresh visible draw of the
/// pre-training pool.
pub fn pretrain_probe(archive: &PretrainedArchive, spec: &PretrainSpec, images: &SyntheticSpec, aug: &AugmentationConfig) -> Result<f64> {
    let pool = synthesize_dataset(&SyntheticSpec {
        num_identities: spec.identities,
        images_per_identity_per_modality: 4,
        seed: images.seed ^ POOL_STREAM,
        variant: 7,
        ..images.clone()
    })
    .filter(|s| s.modality == Modality::Visible);
    let model = build_model(ModelSource::Pretrained(archive.clone()), spec.identities, PromptSettings::default(), 0)?;
    let feats: Vec<_> = pool
        .samples
        .iter()
        .map(|s| model.image_feature(Branch::Visible, &eval_transform(&*s.load_rgb()?, aug)?).map(|f| crate::model::l2_normalize(&f)))
        .collect::<Result<_>>()?;
    let mut correct = 0usize;
    for (i, f) in feats.iter().enumerate() {
        let best = (0..pool.len())
            .filter(|&j| j != i)
            .max_by(|&a, &b| f.dot(&feats[a]).total_cmp(&f.dot(&feats[b])))
            .expect("pool has several images");
        correct += usize::from(pool.samples[best].identity == pool.samples[i].identity);
    }
    Ok(correct as f64 / pool.len() as f64)
}
