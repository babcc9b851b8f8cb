//! Identity-balanced cross-modal batches: `P` identities with `K` visible and
//! `K` infrared samples each.

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{augment::sample_rng, Dataset, Modality};
use crate::error::{ensure, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct PkSampler {
    pub p: usize,
    pub k: usize,
    /// Passes over the shuffled identity list per epoch.
    pub passes_per_epoch: usize,
    pub seed: u64,
}

/// Indices into [`Dataset::samples`], grouped by identity in `identities`
/// order (`K` consecutive entries each).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PkBatch {
    pub identities: Vec<usize>,
    pub visible: Vec<usize>,
    pub infrared: Vec<usize>,
}

impl PkBatch {
    pub fn len(&self) -> usize {
        self.visible.len() + self.infrared.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Builds a sampler after checking `2·P·K == batch_size`.
pub fn pk_cross_modal_sampler(p: usize, k: usize, batch_size: usize, seed: u64) -> Result<PkSampler> {
    PkSampler::new(p, k, batch_size, seed)
}

impl PkSampler {
    pub fn new(p: usize, k: usize, batch_size: usize, seed: u64) -> Result<Self> {
        ensure!(p > 0 && k > 0, "P and K must be positive (P={p}, K={k})");
        ensure!(
            2 * p * k == batch_size,
            "batch size {batch_size} does not equal 2·P·K = {} (P={p}, K={k})",
            2 * p * k
        );
        Ok(Self {
            p,
            k,
            passes_per_epoch: 1,
            seed,
        })
    }

    pub fn with_passes(mut self, passes: usize) -> Self {
        self.passes_per_epoch = passes.max(1);
        self
    }

    pub fn batch_size(&self) -> usize {
        2 * self.p * self.k
    }

    /// Batches of one epoch. Identities without samples in both modalities
    /// are skipped; a short final group is topped up from the start of the
    /// shuffled order.
    pub fn epoch(&self, dataset: &Dataset, stage: u64, epoch: u64) -> Result<Vec<PkBatch>> {
        let n = dataset.num_identities();
        let mut vis = vec![Vec::new(); n];
        let mut ir = vec![Vec::new(); n];
        for (i, s) in dataset.samples.iter().enumerate() {
            match s.modality {
                Modality::Visible => vis[s.identity].push(i),
                Modality::Infrared => ir[s.identity].push(i),
            }
        }
        let eligible: Vec<usize> = (0..n).filter(|&i| !vis[i].is_empty() && !ir[i].is_empty()).collect();
        ensure!(
            eligible.len() >= self.p,
            "only {} identities have both modalities; need at least P = {}",
            eligible.len(),
            self.p
        );

        let mut rng = sample_rng(self.seed, stage, epoch, u64::MAX);
        let mut batches = Vec::new();
        for _ in 0..self.passes_per_epoch {
            let mut order = eligible.clone();
            order.shuffle(&mut rng);
            for chunk in order.chunks(self.p) {
                let mut ids = chunk.to_vec();
                let mut fill = order.iter();
                while ids.len() < self.p {
                    let next = *fill.next().expect("p <= eligible");
                    if !ids.contains(&next) {
                        ids.push(next);
                    }
                }
                let mut batch = PkBatch {
                    identities: ids.clone(),
                    visible: Vec::with_capacity(self.p * self.k),
                    infrared: Vec::with_capacity(self.p * self.k),
                };
                for &id in &ids {
                    batch.visible.extend(self.pick(&vis[id], &mut rng));
                    batch.infrared.extend(self.pick(&ir[id], &mut rng));
                }
                batches.push(batch);
            }
        }
        Ok(batches)
    }

    /// `K` distinct members when possible, otherwise `K` draws with replacement.
    fn pick<R: Rng>(&self, pool: &[usize], rng: &mut R) -> Vec<usize> {
        if pool.len() >= self.k {
            let mut v = pool.to_vec();
            v.shuffle(rng);
            v.truncate(self.k);
            v
        } else {
            (0..self.k).map(|_| pool[rng.random_range(0..pool.len())]).collect()
        }
    }
}
