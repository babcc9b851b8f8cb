//! Browser bindings for a few pure parts of `vireid-core`: schedule curves,
//! synthetic identity rendering and single-query retrieval metrics.

use vireid_core::data::{render_prototype, synthesize_dataset, Modality, SyntheticSpec};
use vireid_core::evaluation::cmc_map_minp;
use vireid_core::training::Schedule;
use wasm_bindgen::prelude::*;

fn err(msg: impl std::fmt::Display) -> JsError {
    JsError::new(&msg.to_string())
}

/// Learning rate sampled `steps_per_epoch` times per epoch over a stage.
///
/// `kind` is `"warmup_cosine"` or `"warmup_step"`; `milestones` only
/// matters for the latter.
#[wasm_bindgen]
#[allow(clippy::too_many_arguments)]
pub fn lr_curve(
    kind: &str,
    base_lr: f64,
    warmup_start_lr: f64,
    warmup_epochs: usize,
    epochs: usize,
    milestones: Vec<u32>,
    steps_per_epoch: usize,
) -> Result<Vec<f64>, JsError> {
    let schedule = match kind {
        "warmup_cosine" => Schedule::WarmupCosine {
            base_lr,
            warmup_start_lr,
            warmup_epochs,
            min_lr: 1e-6,
        },
        "warmup_step" => Schedule::WarmupStep {
            base_lr,
            warmup_start_lr,
            warmup_epochs,
            milestones: milestones.iter().map(|&m| m as usize).collect(),
            gamma: 0.1,
        },
        other => return Err(err(format!("unknown schedule kind {other:?}"))),
    };
    let problems = schedule.validate();
    if !problems.is_empty() {
        return Err(err(problems.join("; ")));
    }
    if epochs == 0 || steps_per_epoch == 0 {
        return Err(err("epochs and steps per epoch must be positive"));
    }
    let mut out = Vec::with_capacity(epochs * steps_per_epoch);
    for e in 0..epochs {
        for s in 0..steps_per_epoch {
            out.push(schedule.lr_at(epochs, e, s as f64 / steps_per_epoch as f64));
        }
    }
    Ok(out)
}

/// RGBA pixels (row-major, `height * width * 4` bytes) of one synthetic
/// identity. `sample` of `None` gives the clean prototype; otherwise the
/// `sample`-th noisy image of that identity in the generated dataset.
#[wasm_bindgen]
pub fn render_identity(
    identity: usize,
    modality: &str,
    seed: u64,
    sample: Option<usize>,
    height: usize,
    width: usize,
) -> Result<Vec<u8>, JsError> {
    let modality: Modality = modality.parse().map_err(err)?;
    let spec = SyntheticSpec {
        num_identities: identity + 1,
        images_per_identity_per_modality: sample.map_or(1, |s| s + 1),
        image_height: height,
        image_width: width,
        seed,
        ..SyntheticSpec::default()
    };
    let problems = spec.validate();
    if !problems.is_empty() {
        return Err(err(problems.join("; ")));
    }
    let img = match sample {
        None => render_prototype(&spec, identity, modality),
        Some(s) => {
            let ds = synthesize_dataset(&spec);
            let hit = ds
                .samples
                .iter()
                .filter(|x| x.identity == identity && x.modality == modality)
                .nth(s)
                .ok_or_else(|| err("no such sample"))?;
            (*hit.load_rgb().map_err(err)?).clone()
        }
    };
    Ok(img.pixels().flat_map(|p| [p[0], p[1], p[2], 255]).collect())
}

/// CMC, AP and INP of a ranked gallery (identity labels, best match first)
/// as a JSON object. Returns `null` when the gallery has no positive.
#[wasm_bindgen]
pub fn retrieval_metrics(ranked_ids: Vec<u32>, query_id: u32, max_rank: usize) -> Result<String, JsError> {
    if max_rank == 0 {
        return Err(err("max rank must be positive"));
    }
    let ids: Vec<usize> = ranked_ids.iter().map(|&i| i as usize).collect();
    let valid = vec![true; ids.len()];
    let value = match cmc_map_minp(&ids, query_id as usize, &valid, max_rank) {
        None => serde_json::Value::Null,
        Some(m) => serde_json::json!({ "cmc": m.cmc, "ap": m.ap, "inp": m.inp }),
    };
    Ok(value.to_string())
}
