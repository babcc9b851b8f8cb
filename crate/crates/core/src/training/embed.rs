//! Inference-time features for a whole dataset.

use ndarray::{Array2, Array3};

use crate::data::{eval_transform, AugmentationConfig, Dataset, Modality, Sample};
use crate::error::Result;
use crate::evaluation::{EmbeddingRecord, FeatureSet};
use crate::model::ThreeStreamModel;

/// Evaluation-transformed inputs of the given samples.
pub fn image_batch(samples: &[Sample], aug: &AugmentationConfig) -> Result<Vec<Array3<f64>>> {
    samples
        .iter()
        .map(|s| eval_transform(&*s.load_rgb()?, aug))
        .collect()
}

/// Unit-norm features `E_s(E_branch(x))` per sample, in dataset order.
pub fn embed_dataset(model: &ThreeStreamModel, dataset: &Dataset, aug: &AugmentationConfig) -> Result<Vec<EmbeddingRecord>> {
    dataset
        .samples
        .iter()
        .map(|s| {
            let x = eval_transform(&*s.load_rgb()?, aug)?;
            let f = match s.modality {
                Modality::Visible => model.encode_visible(std::slice::from_ref(&x))?,
                Modality::Infrared => model.encode_infrared(std::slice::from_ref(&x))?,
            };
            Ok(EmbeddingRecord {
                identity: dataset.original_ids[s.identity],
                camera: Some(s.camera),
                modality: s.modality,
                values: f[0].values.to_vec(),
            })
        })
        .collect()
}

/// Visible and infrared feature sets of a dataset.
pub fn feature_sets_for(
    model: &ThreeStreamModel,
    dataset: &Dataset,
    aug: &AugmentationConfig,
) -> Result<(FeatureSet, FeatureSet)> {
    let records = embed_dataset(model, dataset, aug)?;
    let build = |m: Modality| {
        let rows: Vec<(usize, &EmbeddingRecord)> = dataset
            .samples
            .iter()
            .zip(&records)
            .filter(|(s, _)| s.modality == m)
            .map(|(s, r)| (s.identity, r))
            .collect();
        let d = model.embed_dim();
        let mut f = Array2::zeros((rows.len(), d));
        for (i, (_, r)) in rows.iter().enumerate() {
            for (j, v) in r.values.iter().enumerate() {
                f[[i, j]] = *v;
            }
        }
        FeatureSet {
            features: f,
            identities: rows.iter().map(|(id, _)| *id).collect(),
            cameras: rows.iter().map(|(_, r)| r.camera).collect(),
            modality: m,
        }
    };
    Ok((build(Modality::Visible), build(Modality::Infrared)))
}
