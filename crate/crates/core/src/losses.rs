//! Loss terms of the three training stages with analytic gradients.
//!
//! Every function takes feature matrices with one sample per row and returns
//! the loss value together with its gradient with respect to each input.
//! Similarities are cosine similarities multiplied by `exp(log_scale)`;
//! inputs need not be normalised.

use ndarray::{Array1, Array2, ArrayView1, Axis};
use serde::{Deserialize, Serialize};

use crate::error::{ensure, Error, Result};

/// `exp(γ) · a·b / (‖a‖‖b‖)`.
pub fn similarity(a: ArrayView1<'_, f64>, b: ArrayView1<'_, f64>, log_scale: f64) -> Result<f64> {
    ensure!(a.len() == b.len(), "dimension mismatch: {} vs {}", a.len(), b.len());
    ensure!(
        a.iter().chain(b.iter()).all(|v| v.is_finite()),
        "similarity inputs must be finite"
    );
    let na = a.dot(&a).sqrt();
    let nb = b.dot(&b).sqrt();
    ensure!(na > 0.0 && nb > 0.0, "zero-norm vector in similarity");
    Ok(log_scale.exp() * a.dot(&b) / (na * nb))
}

/// Loss value with gradients for an image/text pair of matrices.
#[derive(Debug, Clone, PartialEq)]
pub struct PairLoss {
    pub value: f64,
    pub d_image: Array2<f64>,
    pub d_text: Array2<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LogitLoss {
    pub value: f64,
    pub d_logits: Array2<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FeatureLoss {
    pub value: f64,
    pub d_features: Array2<f64>,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct ContrastiveOptions {
    /// Count each identity once in the image-to-text denominator instead of
    /// once per batch element.
    pub unique_identity_denominator: bool,
}

fn row_norms(m: &Array2<f64>, what: &str) -> Result<Array1<f64>> {
    ensure!(m.iter().all(|v| v.is_finite()), "{what} features must be finite");
    let norms = m.map_axis(Axis(1), |r| r.dot(&r).sqrt());
    ensure!(norms.iter().all(|n| *n > 0.0), "zero-norm row in {what} features");
    Ok(norms)
}

/// Cosine matrix `C[i, j] = cos(a_i, b_j)` plus the inputs' unit rows and norms.
struct Cosines {
    c: Array2<f64>,
    a_hat: Array2<f64>,
    b_hat: Array2<f64>,
    a_norm: Array1<f64>,
    b_norm: Array1<f64>,
}

impl Cosines {
    fn new(a: &Array2<f64>, b: &Array2<f64>) -> Result<Self> {
        ensure!(
            a.ncols() == b.ncols(),
            "feature dimension mismatch: {} vs {}",
            a.ncols(),
            b.ncols()
        );
        let a_norm = row_norms(a, "image")?;
        let b_norm = row_norms(b, "text")?;
        let a_hat = a / &a_norm.view().insert_axis(Axis(1));
        let b_hat = b / &b_norm.view().insert_axis(Axis(1));
        let c = a_hat.dot(&b_hat.t());
        Ok(Self {
            c,
            a_hat,
            b_hat,
            a_norm,
            b_norm,
        })
    }

    /// Pulls a gradient on `C` back onto `a` and `b`.
    fn backward(&self, dc: &Array2<f64>) -> (Array2<f64>, Array2<f64>) {
        // dA_i = (Σ_j dC_ij b̂_j − (Σ_j dC_ij C_ij) â_i) / ‖a_i‖
        let dcc = dc * &self.c;
        let mut da = dc.dot(&self.b_hat);
        da -= &(&self.a_hat * &dcc.sum_axis(Axis(1)).insert_axis(Axis(1)));
        da /= &self.a_norm.view().insert_axis(Axis(1));
        let mut db = dc.t().dot(&self.a_hat);
        db -= &(&self.b_hat * &dcc.sum_axis(Axis(0)).insert_axis(Axis(1)));
        db /= &self.b_norm.view().insert_axis(Axis(1));
        (da, db)
    }
}

fn log_sum_exp<'a>(xs: impl Iterator<Item = &'a f64> + Clone) -> f64 {
    let m = xs.clone().fold(f64::NEG_INFINITY, |a, &b| a.max(b));
    m + xs.map(|x| (x - m).exp()).sum::<f64>().ln()
}

fn check_batch(n_image: usize, n_text: usize, labels: &[usize]) -> Result<()> {
    ensure!(n_image > 0, "empty batch");
    ensure!(
        n_image == labels.len(),
        "{n_image} image rows but {} labels",
        labels.len()
    );
    ensure!(
        n_text == n_image,
        "expected one text row per batch element ({n_image}), got {n_text}"
    );
    Ok(())
}

/// Image-to-text contrastive loss over the batch's own text rows.
///
/// `text[k]` is the text feature of `labels[k]`; a label repeated in the
/// batch contributes its text row once per occurrence to every denominator.
pub fn contrastive_i2t(
    image: &Array2<f64>,
    text: &Array2<f64>,
    labels: &[usize],
    log_scale: f64,
) -> Result<PairLoss> {
    contrastive_i2t_with(image, text, labels, log_scale, ContrastiveOptions::default())
}

pub fn contrastive_i2t_with(
    image: &Array2<f64>,
    text: &Array2<f64>,
    labels: &[usize],
    log_scale: f64,
    opts: ContrastiveOptions,
) -> Result<PairLoss> {
    check_batch(image.nrows(), text.nrows(), labels)?;
    let n = labels.len();
    let scale = log_scale.exp();
    let cos = Cosines::new(image, text)?;
    let s = &cos.c * scale;

    // Columns taking part in the denominator and the numerator column per row.
    let first_of = |k: usize| labels.iter().position(|&l| l == labels[k]).expect("present");
    let (cols, target): (Vec<usize>, Vec<usize>) = if opts.unique_identity_denominator {
        let cols = (0..n).filter(|&j| first_of(j) == j).collect();
        (cols, (0..n).map(first_of).collect())
    } else {
        ((0..n).collect(), (0..n).collect())
    };

    let mut value = 0.0;
    let mut ds = Array2::zeros((n, n));
    for k in 0..n {
        let row: Vec<f64> = cols.iter().map(|&j| s[[k, j]]).collect();
        let lse = log_sum_exp(row.iter());
        value -= s[[k, target[k]]] - lse;
        for (&j, &v) in cols.iter().zip(&row) {
            ds[[k, j]] += (v - lse).exp() / n as f64;
        }
        ds[[k, target[k]]] -= 1.0 / n as f64;
    }
    let (d_image, d_text) = cos.backward(&(ds * scale));
    Ok(PairLoss {
        value: value / n as f64,
        d_image,
        d_text,
    })
}

/// Text-to-image contrastive loss; each text row is matched against every
/// image in the batch and averaged over the images sharing its identity.
pub fn contrastive_t2i(
    image: &Array2<f64>,
    text: &Array2<f64>,
    labels: &[usize],
    log_scale: f64,
) -> Result<PairLoss> {
    check_batch(image.nrows(), text.nrows(), labels)?;
    let n = labels.len();
    let scale = log_scale.exp();
    let cos = Cosines::new(image, text)?;
    // s[j, k] = s(f_j, t_k)
    let s = &cos.c * scale;

    let mut value = 0.0;
    let mut ds = Array2::zeros((n, n));
    for k in 0..n {
        let col = s.column(k);
        let lse = log_sum_exp(col.iter());
        let positives: Vec<usize> = (0..n).filter(|&p| labels[p] == labels[k]).collect();
        let inv_p = 1.0 / positives.len() as f64;
        let term: f64 = positives.iter().map(|&p| s[[p, k]] - lse).sum::<f64>() * inv_p;
        value -= term;
        for j in 0..n {
            ds[[j, k]] += (col[j] - lse).exp() / n as f64;
        }
        for &p in &positives {
            ds[[p, k]] -= inv_p / n as f64;
        }
    }
    let (d_image, d_text) = cos.backward(&(ds * scale));
    Ok(PairLoss {
        value: value / n as f64,
        d_image,
        d_text,
    })
}

/// Features of one training batch. `text` holds one row per identity and is
/// indexed by the labels.
#[derive(Debug, Clone, PartialEq)]
pub struct Batch {
    pub visible: Array2<f64>,
    pub visible_labels: Vec<usize>,
    pub infrared: Array2<f64>,
    pub infrared_labels: Vec<usize>,
    pub text: Array2<f64>,
}

/// Bidirectional contrastive loss with gradients on the image rows and the
/// per-identity text table.
#[derive(Debug, Clone, PartialEq)]
pub struct StageLoss {
    pub value: f64,
    pub image_to_text: f64,
    pub text_to_image: f64,
    pub d_image: Array2<f64>,
    pub d_text: Array2<f64>,
}

fn gather_rows(table: &Array2<f64>, labels: &[usize]) -> Result<Array2<f64>> {
    for &l in labels {
        ensure!(l < table.nrows(), "label {l} has no text row ({} rows)", table.nrows());
    }
    Ok(table.select(Axis(0), labels))
}

fn scatter_rows(grad: &Array2<f64>, labels: &[usize], rows: usize) -> Array2<f64> {
    let mut out = Array2::zeros((rows, grad.ncols()));
    for (k, &l) in labels.iter().enumerate() {
        let mut r = out.row_mut(l);
        r += &grad.row(k);
    }
    out
}

fn bidirectional(
    image: &Array2<f64>,
    labels: &[usize],
    table: &Array2<f64>,
    log_scale: f64,
    opts: ContrastiveOptions,
) -> Result<StageLoss> {
    let text = gather_rows(table, labels)?;
    let i2t = contrastive_i2t_with(image, &text, labels, log_scale, opts)?;
    let t2i = contrastive_t2i(image, &text, labels, log_scale)?;
    let d_text_rows = &i2t.d_text + &t2i.d_text;
    Ok(StageLoss {
        value: i2t.value + t2i.value,
        image_to_text: i2t.value,
        text_to_image: t2i.value,
        d_image: &i2t.d_image + &t2i.d_image,
        d_text: scatter_rows(&d_text_rows, labels, table.nrows()),
    })
}

/// Text-semantic generation loss on visible features.
pub fn stage1_loss(batch: &Batch, log_scale: f64) -> Result<StageLoss> {
    stage1_loss_with(batch, log_scale, ContrastiveOptions::default())
}

pub fn stage1_loss_with(batch: &Batch, log_scale: f64, opts: ContrastiveOptions) -> Result<StageLoss> {
    bidirectional(&batch.visible, &batch.visible_labels, &batch.text, log_scale, opts)
}

/// Infrared embedding loss against the cached text features.
pub fn stage2_loss(batch: &Batch, log_scale: f64) -> Result<StageLoss> {
    stage2_loss_with(batch, log_scale, ContrastiveOptions::default())
}

pub fn stage2_loss_with(batch: &Batch, log_scale: f64, opts: ContrastiveOptions) -> Result<StageLoss> {
    bidirectional(&batch.infrared, &batch.infrared_labels, &batch.text, log_scale, opts)
}

/// Image-to-text cross entropy against all `num_identities` text features.
pub fn ce_i2t(
    image: &Array2<f64>,
    all_text: &Array2<f64>,
    labels: &[usize],
    num_identities: usize,
    log_scale: f64,
) -> Result<PairLoss> {
    ensure!(image.nrows() > 0, "empty batch");
    ensure!(image.nrows() == labels.len(), "{} rows but {} labels", image.nrows(), labels.len());
    ensure!(
        all_text.nrows() == num_identities,
        "text table has {} rows, expected one per identity ({num_identities})",
        all_text.nrows()
    );
    for &l in labels {
        ensure!(l < num_identities, "label {l} out of range for {num_identities} identities");
    }
    let n = labels.len();
    let scale = log_scale.exp();
    let cos = Cosines::new(image, all_text)?;
    let s = &cos.c * scale;
    let mut value = 0.0;
    let mut ds = Array2::zeros(s.dim());
    for k in 0..n {
        let row = s.row(k);
        let lse = log_sum_exp(row.iter());
        value -= row[labels[k]] - lse;
        for a in 0..num_identities {
            ds[[k, a]] = (row[a] - lse).exp() / n as f64;
        }
        ds[[k, labels[k]]] -= 1.0 / n as f64;
    }
    let (d_image, d_text) = cos.backward(&(ds * scale));
    Ok(PairLoss {
        value: value / n as f64,
        d_image,
        d_text,
    })
}

/// Identity cross entropy on raw logits, one-hot targets.
pub fn id_loss(logits: &Array2<f64>, labels: &[usize]) -> Result<LogitLoss> {
    id_loss_smoothed(logits, labels, 0.0)
}

/// Identity cross entropy with label smoothing `epsilon` (0 disables it).
pub fn id_loss_smoothed(logits: &Array2<f64>, labels: &[usize], epsilon: f64) -> Result<LogitLoss> {
    let (n, classes) = logits.dim();
    ensure!(n > 0, "empty batch");
    ensure!(n == labels.len(), "{n} logit rows but {} labels", labels.len());
    ensure!((0.0..1.0).contains(&epsilon), "label smoothing must be in [0, 1)");
    ensure!(logits.iter().all(|v| v.is_finite()), "logits must be finite");
    for &l in labels {
        ensure!(l < classes, "label {l} out of range for {classes} classes");
    }
    let mut value = 0.0;
    let mut d = Array2::zeros((n, classes));
    for (i, &y) in labels.iter().enumerate() {
        let row = logits.row(i);
        let lse = log_sum_exp(row.iter());
        for c in 0..classes {
            let q = (1.0 - epsilon) * f64::from(u8::from(c == y)) + epsilon / classes as f64;
            let logp = row[c] - lse;
            value -= q * logp;
            d[[i, c]] = (logp.exp() - q) / n as f64;
        }
    }
    Ok(LogitLoss {
        value: value / n as f64,
        d_logits: d,
    })
}

fn softplus(x: f64) -> f64 {
    if x > 0.0 {
        x + (-x).exp().ln_1p()
    } else {
        x.exp().ln_1p()
    }
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Softmax-weighted soft-margin triplet loss on Euclidean distances.
///
/// Positives are weighted by `exp(d)`, negatives by `exp(-d)`, normalised
/// within each anchor's positive and negative sets.
pub fn wrt_loss(features: &Array2<f64>, labels: &[usize]) -> Result<FeatureLoss> {
    let n = features.nrows();
    ensure!(n > 0, "empty batch");
    ensure!(n == labels.len(), "{n} rows but {} labels", labels.len());
    ensure!(features.iter().all(|v| v.is_finite()), "features must be finite");
    for i in 0..n {
        let has_pos = (0..n).any(|j| j != i && labels[j] == labels[i]);
        let has_neg = (0..n).any(|j| labels[j] != labels[i]);
        ensure!(
            has_pos && has_neg,
            "anchor {i} (label {}) lacks a {} in the batch",
            labels[i],
            if has_pos { "negative" } else { "positive" }
        );
    }
    let mut dist = Array2::zeros((n, n));
    for i in 0..n {
        for j in i + 1..n {
            let diff = &features.row(i) - &features.row(j);
            let d = diff.dot(&diff).sqrt();
            dist[[i, j]] = d;
            dist[[j, i]] = d;
        }
    }

    let mut value = 0.0;
    let mut dd = Array2::<f64>::zeros((n, n));
    for i in 0..n {
        let pos: Vec<usize> = (0..n).filter(|&j| j != i && labels[j] == labels[i]).collect();
        let neg: Vec<usize> = (0..n).filter(|&j| labels[j] != labels[i]).collect();
        let dp: Vec<f64> = pos.iter().map(|&j| dist[[i, j]]).collect();
        let dn: Vec<f64> = neg.iter().map(|&j| dist[[i, j]]).collect();
        let wp = softmax(&dp);
        let wn = softmax(&dn.iter().map(|d| -d).collect::<Vec<_>>());
        let a: f64 = wp.iter().zip(&dp).map(|(w, d)| w * d).sum();
        let b: f64 = wn.iter().zip(&dn).map(|(w, d)| w * d).sum();
        value += softplus(a - b);
        let g = sigmoid(a - b) / n as f64;
        for ((&j, w), d) in pos.iter().zip(&wp).zip(&dp) {
            dd[[i, j]] += g * w * (1.0 + d - a);
        }
        for ((&k, w), d) in neg.iter().zip(&wn).zip(&dn) {
            dd[[i, k]] -= g * w * (1.0 - d + b);
        }
    }

    let mut d_feat = Array2::zeros(features.dim());
    for i in 0..n {
        for j in 0..n {
            let g = dd[[i, j]];
            if g == 0.0 || dist[[i, j]] == 0.0 {
                continue;
            }
            let unit = (&features.row(i) - &features.row(j)) / dist[[i, j]];
            let mut ri = d_feat.row_mut(i);
            ri.scaled_add(g, &unit);
            let mut rj = d_feat.row_mut(j);
            rj.scaled_add(-g, &unit);
        }
    }
    Ok(FeatureLoss {
        value: value / n as f64,
        d_features: d_feat,
    })
}

fn softmax(xs: &[f64]) -> Vec<f64> {
    let m = xs.iter().fold(f64::NEG_INFINITY, |a, &b| a.max(b));
    let e: Vec<f64> = xs.iter().map(|x| (x - m).exp()).collect();
    let s: f64 = e.iter().sum();
    e.into_iter().map(|v| v / s).collect()
}

/// Balance weights of the two cross-entropy terms.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HsaWeights {
    pub lambda1: f64,
    pub lambda2: f64,
}

impl Default for HsaWeights {
    fn default() -> Self {
        Self {
            lambda1: 0.05,
            lambda2: 0.05,
        }
    }
}

impl HsaWeights {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [("lambda1", self.lambda1), ("lambda2", self.lambda2)] {
            ensure!(v.is_finite() && v >= 0.0, "{name} must be finite and non-negative, got {v}");
        }
        Ok(())
    }
}

/// All terms of the high-level semantic alignment loss and their gradients.
#[derive(Debug, Clone, PartialEq)]
pub struct HsaLoss {
    pub value: f64,
    pub visible_ce: f64,
    pub infrared_ce: f64,
    pub id: f64,
    pub wrt: f64,
    pub d_visible: Array2<f64>,
    pub d_infrared: Array2<f64>,
    pub d_text: Array2<f64>,
    pub d_logits_visible: Array2<f64>,
    pub d_logits_infrared: Array2<f64>,
}

/// `λ1·CE(visible→text) + λ2·CE(infrared→text) + id + wrt`, with id and wrt
/// evaluated on the pooled visible and infrared rows.
pub fn hsa_loss(
    batch: &Batch,
    logits_visible: &Array2<f64>,
    logits_infrared: &Array2<f64>,
    weights: HsaWeights,
    log_scale: f64,
) -> Result<HsaLoss> {
    hsa_loss_with(batch, logits_visible, logits_infrared, weights, log_scale, 0.0)
}

pub fn hsa_loss_with(
    batch: &Batch,
    logits_visible: &Array2<f64>,
    logits_infrared: &Array2<f64>,
    weights: HsaWeights,
    log_scale: f64,
    label_smoothing: f64,
) -> Result<HsaLoss> {
    weights.validate()?;
    let nv = batch.visible.nrows();
    let nr = batch.infrared.nrows();
    ensure!(nv == nr, "visible and infrared halves differ in size ({nv} vs {nr})");
    let n_ids = batch.text.nrows();
    ensure!(
        logits_visible.ncols() == n_ids && logits_infrared.ncols() == n_ids,
        "logit width must equal the number of text rows ({n_ids})"
    );
    let ce_v = ce_i2t(&batch.visible, &batch.text, &batch.visible_labels, n_ids, log_scale)?;
    let ce_r = ce_i2t(&batch.infrared, &batch.text, &batch.infrared_labels, n_ids, log_scale)?;

    let pooled = ndarray::concatenate(Axis(0), &[batch.visible.view(), batch.infrared.view()])
        .expect("equal widths");
    let pooled_logits = ndarray::concatenate(Axis(0), &[logits_visible.view(), logits_infrared.view()])
        .map_err(|_| Error::validation("logit widths differ"))?;
    let labels: Vec<usize> = batch
        .visible_labels
        .iter()
        .chain(&batch.infrared_labels)
        .copied()
        .collect();
    let id = id_loss_smoothed(&pooled_logits, &labels, label_smoothing)?;
    let wrt = wrt_loss(&pooled, &labels)?;

    let (l1, l2) = (weights.lambda1, weights.lambda2);
    let d_wrt_v = wrt.d_features.slice(ndarray::s![..nv, ..]);
    let d_wrt_r = wrt.d_features.slice(ndarray::s![nv.., ..]);
    Ok(HsaLoss {
        value: l1 * ce_v.value + l2 * ce_r.value + id.value + wrt.value,
        visible_ce: ce_v.value,
        infrared_ce: ce_r.value,
        id: id.value,
        wrt: wrt.value,
        d_visible: &ce_v.d_image * l1 + d_wrt_v,
        d_infrared: &ce_r.d_image * l2 + d_wrt_r,
        d_text: &ce_v.d_text * l1 + &ce_r.d_text * l2,
        d_logits_visible: id.d_logits.slice(ndarray::s![..nv, ..]).to_owned(),
        d_logits_infrared: id.d_logits.slice(ndarray::s![nv.., ..]).to_owned(),
    })
}
