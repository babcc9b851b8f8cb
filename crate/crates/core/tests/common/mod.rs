//! Literal loop transcriptions of the loss and metric definitions, random
//! fixtures and finite-difference helpers shared by the integration tests.
#![allow(dead_code)]

use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use vireid_core::config::RunConfig;
use vireid_core::data::SyntheticSpec;
use vireid_core::training::Schedule;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn random_matrix(r: &mut ChaCha8Rng, rows: usize, cols: usize) -> Array2<f64> {
    Array2::from_shape_fn((rows, cols), |_| r.random_range(-1.0..1.0))
}

/// Labels in `0..ids` where every label appears at least twice and at
/// least two labels occur, as the triplet term requires.
pub fn paired_labels(r: &mut ChaCha8Rng, n: usize, ids: usize) -> Vec<usize> {
    assert!(n >= 4 && ids >= 2);
    loop {
        let l: Vec<usize> = (0..n).map(|_| r.random_range(0..ids)).collect();
        let ok = l.iter().all(|a| l.iter().filter(|b| *b == a).count() >= 2)
            && l.iter().any(|a| *a != l[0]);
        if ok {
            return l;
        }
    }
}

pub fn cosine(a: &[f64], b: &[f64]) -> f64 {
    let mut dot = 0.0;
    let mut na = 0.0;
    let mut nb = 0.0;
    for i in 0..a.len() {
        dot += a[i] * b[i];
        na += a[i] * a[i];
        nb += b[i] * b[i];
    }
    dot / (na.sqrt() * nb.sqrt())
}

pub fn sim(a: &[f64], b: &[f64], log_scale: f64) -> f64 {
    log_scale.exp() * cosine(a, b)
}

fn row(m: &Array2<f64>, i: usize) -> Vec<f64> {
    m.row(i).to_vec()
}

/// −(1/n) Σ_k log[exp s(f_k, t_k) / Σ_j exp s(f_k, t_j)].
pub fn oracle_i2t(image: &Array2<f64>, text: &Array2<f64>, log_scale: f64) -> f64 {
    let n = image.nrows();
    let mut total = 0.0;
    for k in 0..n {
        let num = sim(&row(image, k), &row(text, k), log_scale).exp();
        let mut den = 0.0;
        for j in 0..n {
            den += sim(&row(image, k), &row(text, j), log_scale).exp();
        }
        total += (num / den).ln();
    }
    -total / n as f64
}

/// −(1/n) Σ_k (1/|P(y_k)|) Σ_{p∈P(y_k)} log[exp s(f_p, t_k) / Σ_j exp s(f_j, t_k)].
pub fn oracle_t2i(image: &Array2<f64>, text: &Array2<f64>, labels: &[usize], log_scale: f64) -> f64 {
    let n = image.nrows();
    let mut total = 0.0;
    for k in 0..n {
        let mut den = 0.0;
        for j in 0..n {
            den += sim(&row(image, j), &row(text, k), log_scale).exp();
        }
        let mut inner = 0.0;
        let mut count = 0.0;
        for p in 0..n {
            if labels[p] == labels[k] {
                inner += (sim(&row(image, p), &row(text, k), log_scale).exp() / den).ln();
                count += 1.0;
            }
        }
        total += inner / count;
    }
    -total / n as f64
}

/// −(1/n) Σ_k log[exp s(f_k, t_{y_k}) / Σ_a exp s(f_k, t_a)] over all N rows.
#[allow(clippy::needless_range_loop)] // index loops mirror the written sum
pub fn oracle_ce(image: &Array2<f64>, all_text: &Array2<f64>, labels: &[usize], log_scale: f64) -> f64 {
    let n = image.nrows();
    let mut total = 0.0;
    for k in 0..n {
        let num = sim(&row(image, k), &row(all_text, labels[k]), log_scale).exp();
        let mut den = 0.0;
        for a in 0..all_text.nrows() {
            den += sim(&row(image, k), &row(all_text, a), log_scale).exp();
        }
        total += (num / den).ln();
    }
    -total / n as f64
}

pub fn oracle_id(logits: &Array2<f64>, labels: &[usize]) -> f64 {
    let n = logits.nrows();
    let mut total = 0.0;
    for i in 0..n {
        let mut den = 0.0;
        for c in 0..logits.ncols() {
            den += logits[[i, c]].exp();
        }
        total += (logits[[i, labels[i]]].exp() / den).ln();
    }
    -total / n as f64
}

fn euclid(a: &[f64], b: &[f64]) -> f64 {
    let mut s = 0.0;
    for i in 0..a.len() {
        s += (a[i] - b[i]) * (a[i] - b[i]);
    }
    s.sqrt()
}

/// (1/n) Σ_i log(1 + exp(Σ_j w⁺_ij d_ij − Σ_k w⁻_ik d_ik)) with
/// w⁺ ∝ exp(d), w⁻ ∝ exp(−d).
pub fn oracle_wrt(features: &Array2<f64>, labels: &[usize]) -> f64 {
    let n = features.nrows();
    let mut total = 0.0;
    for i in 0..n {
        let (mut pos_num, mut pos_den, mut neg_num, mut neg_den) = (0.0, 0.0, 0.0, 0.0);
        for j in 0..n {
            let d = euclid(&row(features, i), &row(features, j));
            if j != i && labels[j] == labels[i] {
                pos_num += d.exp() * d;
                pos_den += d.exp();
            } else if labels[j] != labels[i] {
                neg_num += (-d).exp() * d;
                neg_den += (-d).exp();
            }
        }
        total += (1.0 + (pos_num / pos_den - neg_num / neg_den).exp()).ln();
    }
    total / n as f64
}

/// Per-element text rows from an identity table.
pub fn gather(table: &Array2<f64>, labels: &[usize]) -> Array2<f64> {
    Array2::from_shape_fn((labels.len(), table.ncols()), |(i, j)| table[[labels[i], j]])
}

pub fn rel_err(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1e-8)
}

/// Central differences of `f` at `x`, step `h`.
pub fn numeric_grad(x: &Array2<f64>, h: f64, f: impl Fn(&Array2<f64>) -> f64) -> Array2<f64> {
    let mut g = Array2::zeros(x.dim());
    for idx in 0..x.len() {
        let (r, c) = (idx / x.ncols(), idx % x.ncols());
        let mut plus = x.clone();
        plus[[r, c]] += h;
        let mut minus = x.clone();
        minus[[r, c]] -= h;
        g[[r, c]] = (f(&plus) - f(&minus)) / (2.0 * h);
    }
    g
}

/// Relative error between two gradient arrays, measured against the
/// larger norm so near-zero entries do not dominate.
pub fn grad_rel_err(analytic: &Array2<f64>, numeric: &Array2<f64>) -> f64 {
    let diff = (analytic - numeric).mapv(|v| v * v).sum().sqrt();
    let scale = analytic
        .mapv(|v| v * v)
        .sum()
        .sqrt()
        .max(numeric.mapv(|v| v * v).sum().sqrt())
        .max(1e-10);
    diff / scale
}

/// Per-query metrics straight from the definitions: CMC@k is 1 when a
/// match sits within the first k valid items; AP averages precision at
/// each match; INP is matches / position of the last match.
pub struct OracleQuery {
    pub cmc: Vec<f64>,
    pub ap: f64,
    pub inp: f64,
}

pub fn oracle_query(
    query: &[f64],
    qid: usize,
    gallery: &Array2<f64>,
    gids: &[usize],
    valid: &[bool],
    max_rank: usize,
) -> Option<OracleQuery> {
    // (score, index) pairs; sorting by descending score then ascending index
    let mut items: Vec<(f64, usize)> = (0..gallery.nrows())
        .filter(|&g| valid[g])
        .map(|g| (cosine(query, &row(gallery, g)), g))
        .collect();
    for i in 0..items.len() {
        for j in 0..items.len() - 1 - i {
            let (a, b) = (items[j], items[j + 1]);
            if b.0 > a.0 || (b.0 == a.0 && b.1 < a.1) {
                items.swap(j, j + 1);
            }
        }
    }
    let hits: Vec<bool> = items.iter().map(|(_, g)| gids[*g] == qid).collect();
    let total = hits.iter().filter(|h| **h).count();
    if total == 0 {
        return None;
    }
    let mut cmc = Vec::new();
    for k in 1..=max_rank {
        let mut found = false;
        for h in hits.iter().take(k) {
            found |= *h;
        }
        cmc.push(if found { 1.0 } else { 0.0 });
    }
    let mut ap = 0.0;
    let mut last = 0;
    for (i, h) in hits.iter().enumerate() {
        if *h {
            let matches_so_far = hits[..=i].iter().filter(|x| **x).count();
            ap += matches_so_far as f64 / (i + 1) as f64;
            last = i + 1;
        }
    }
    Some(OracleQuery {
        cmc,
        ap: ap / total as f64,
        inp: total as f64 / last as f64,
    })
}

/// A seconds-scale configuration: few identities and images, one epoch per
/// stage, no pre-training.
pub fn tiny_config(seed: u64) -> RunConfig {
    let mut c = RunConfig::desk();
    c.seed = seed;
    c.model.pretrain = None;
    c.data.synthetic = Some(SyntheticSpec {
        num_identities: 3,
        images_per_identity_per_modality: 4,
        ..SyntheticSpec::default()
    });
    c.sampler.p = 2;
    c.sampler.k = 2;
    c.sampler.batch_size = 8;
    c.sampler.passes_per_epoch = 1;
    let cosine = Schedule::WarmupCosine {
        base_lr: 1e-2,
        warmup_start_lr: 1e-3,
        warmup_epochs: 1,
        min_lr: 1e-6,
    };
    for s in [&mut c.train.tsg, &mut c.train.ife, &mut c.train.hsa] {
        s.epochs = 1;
        s.schedule = cosine.clone();
    }
    c.train.hsa.epochs = 2;
    c.train.hsa.schedule = Schedule::WarmupStep {
        base_lr: 1e-2,
        warmup_start_lr: 1e-3,
        warmup_epochs: 1,
        milestones: vec![1],
        gamma: 0.1,
    };
    c.eval.sysu.trials = 2;
    assert!(c.validate().is_empty(), "{:?}", c.validate());
    c
}
