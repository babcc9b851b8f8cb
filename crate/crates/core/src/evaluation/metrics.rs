use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::error::{ensure, Result};

/// Default length of the CMC curve.
pub const DEFAULT_MAX_RANK: usize = 20;

/// Gallery indices per query in descending cosine similarity. Equal scores
/// keep ascending gallery index order.
pub fn rank(query: &Array2<f64>, gallery: &Array2<f64>) -> Result<Vec<Vec<usize>>> {
    ensure!(query.nrows() > 0, "empty query set");
    ensure!(gallery.nrows() > 0, "empty gallery");
    ensure!(
        query.ncols() == gallery.ncols(),
        "query dimension {} does not match gallery dimension {}",
        query.ncols(),
        gallery.ncols()
    );
    // cosine as dot / (|q| |g|) with plain in-order sums. A GEMM kernel's
    // fused or reordered accumulation can split scores that tie exactly.
    let norms = |m: &Array2<f64>| -> Vec<f64> {
        m.rows().into_iter().map(|r| r.iter().fold(0.0, |acc, v| acc + v * v).sqrt()).collect()
    };
    let (nq, ng) = (norms(query), norms(gallery));
    let sims = Array2::from_shape_fn((query.nrows(), gallery.nrows()), |(i, j)| {
        let dot = query.row(i).iter().zip(gallery.row(j)).fold(0.0, |acc, (a, b)| acc + a * b);
        let denom = nq[i] * ng[j];
        if denom > 0.0 {
            dot / denom
        } else {
            0.0
        }
    });
    Ok(sims
        .rows()
        .into_iter()
        .map(|row| {
            let mut order: Vec<usize> = (0..row.len()).collect();
            // stable sort keeps index order among ties
            order.sort_by(|&a, &b| row[b].total_cmp(&row[a]));
            order
        })
        .collect())
}

/// Per-query retrieval outcome.
#[derive(Debug, Clone, PartialEq)]
pub struct QueryMetrics {
    /// `cmc[k-1]` is 1 when a positive appears within the top k valid items.
    pub cmc: Vec<f64>,
    pub ap: f64,
    pub inp: f64,
}

/// CMC hits, average precision and inverse negative penalty of one ranked
/// list. Entries with `valid[i] == false` are dropped before scoring.
/// Returns `None` when no valid positive exists.
pub fn cmc_map_minp(ranked_ids: &[usize], query_id: usize, valid: &[bool], max_rank: usize) -> Option<QueryMetrics> {
    debug_assert_eq!(ranked_ids.len(), valid.len());
    let matches: Vec<bool> = ranked_ids
        .iter()
        .zip(valid)
        .filter(|(_, v)| **v)
        .map(|(id, _)| *id == query_id)
        .collect();
    let total = matches.iter().filter(|m| **m).count();
    if total == 0 {
        return None;
    }
    let first = matches.iter().position(|m| *m).expect("has a positive");
    let last = matches.iter().rposition(|m| *m).expect("has a positive");
    let cmc = (0..max_rank).map(|k| f64::from(u8::from(first <= k))).collect();
    let mut found = 0usize;
    let mut precision_sum = 0.0;
    for (i, _) in matches.iter().enumerate().filter(|(_, m)| **m) {
        found += 1;
        precision_sum += found as f64 / (i + 1) as f64;
    }
    Some(QueryMetrics {
        cmc,
        ap: precision_sum / total as f64,
        inp: total as f64 / (last + 1) as f64,
    })
}

/// Metrics of one evaluation pass.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialMetrics {
    pub cmc: Vec<f64>,
    pub map: f64,
    pub minp: f64,
    pub queries: usize,
    /// Queries without any valid positive in the gallery.
    pub excluded: usize,
    pub gallery_size: usize,
}

impl TrialMetrics {
    pub fn rank(&self, k: usize) -> f64 {
        self.cmc[k - 1]
    }
}

/// Averages over trials, with the per-trial detail kept.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub cmc: Vec<f64>,
    pub map: f64,
    pub minp: f64,
    pub excluded: usize,
    pub trials: Vec<TrialMetrics>,
}

impl MetricsReport {
    pub fn from_trials(trials: Vec<TrialMetrics>) -> Self {
        let n = trials.len().max(1) as f64;
        let k = trials.first().map_or(0, |t| t.cmc.len());
        let cmc = (0..k)
            .map(|i| trials.iter().map(|t| t.cmc[i]).sum::<f64>() / n)
            .collect();
        Self {
            cmc,
            map: trials.iter().map(|t| t.map).sum::<f64>() / n,
            minp: trials.iter().map(|t| t.minp).sum::<f64>() / n,
            excluded: trials.iter().map(|t| t.excluded).sum(),
            trials,
        }
    }

    pub fn rank(&self, k: usize) -> f64 {
        self.cmc[k - 1]
    }
}

/// Scores every query against the gallery. `valid(q, g)` masks gallery
/// items out for one query.
pub fn evaluate(
    query: &Array2<f64>,
    query_ids: &[usize],
    gallery: &Array2<f64>,
    gallery_ids: &[usize],
    valid: impl Fn(usize, usize) -> bool,
    max_rank: usize,
) -> Result<TrialMetrics> {
    ensure!(query.nrows() == query_ids.len(), "query labels do not match query rows");
    ensure!(gallery.nrows() == gallery_ids.len(), "gallery labels do not match gallery rows");
    ensure!(max_rank > 0, "max rank must be positive");
    let ranked = rank(query, gallery)?;
    let mut cmc = vec![0.0; max_rank];
    let (mut ap, mut inp, mut counted, mut excluded) = (0.0, 0.0, 0usize, 0usize);
    for (q, order) in ranked.iter().enumerate() {
        let ids: Vec<usize> = order.iter().map(|&g| gallery_ids[g]).collect();
        let mask: Vec<bool> = order.iter().map(|&g| valid(q, g)).collect();
        match cmc_map_minp(&ids, query_ids[q], &mask, max_rank) {
            Some(m) => {
                counted += 1;
                ap += m.ap;
                inp += m.inp;
                for (c, h) in cmc.iter_mut().zip(&m.cmc) {
                    *c += h;
                }
            }
            None => excluded += 1,
        }
    }
    ensure!(counted > 0, "no query has a positive in the gallery");
    let n = counted as f64;
    Ok(TrialMetrics {
        cmc: cmc.into_iter().map(|c| c / n).collect(),
        map: ap / n,
        minp: inp / n,
        queries: counted,
        excluded,
        gallery_size: gallery.nrows(),
    })
}
