//! Per-identity learnable text tokens composed into the fixed template
//! `a photo of a [X1] [X2] ... [XM] person`.
//!
//! The learnable slots live at `prompt.tokens` with shape `[N, M, D_tok]`.
//! Template embeddings (`prompt.prefix`, `prompt.suffix`) and, in the
//! fixed-template variant, the per-identity class tokens
//! (`prompt.class_tokens`) are stored next to them but never trained.

use ndarray::{concatenate, s, Array2, ArrayView2, Axis, IxDyn};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{ensure, Error, Result};
use crate::model::params::{normal_tensor, ParamSet, ParamStore, Tensor};

pub const TOKENS_PATH: &str = "prompt.tokens";
pub const PREFIX_PATH: &str = "prompt.prefix";
pub const SUFFIX_PATH: &str = "prompt.suffix";
pub const CLASS_TOKENS_PATH: &str = "prompt.class_tokens";
/// Reserved archive prefix for everything owned by the bank.
pub const PROMPT_PREFIX: &str = "prompt";

/// Words of the fixed template, in vocabulary order.
pub const TEMPLATE_WORDS: [&str; 6] = ["<sot>", "a", "photo", "of", "person", "<eot>"];
const PREFIX_WORDS: [&str; 5] = ["<sot>", "a", "photo", "of", "a"];
const SUFFIX_WORDS: [&str; 2] = ["person", "<eot>"];

const TOKEN_STD: f64 = 0.02;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum PromptMode {
    /// `M` learnable slots per identity.
    #[default]
    Learnable,
    /// No learnable slots; a frozen class token stands in for the identity.
    FixedTemplate,
}

/// Word-embedding table for the template vocabulary.
#[derive(Debug, Clone, PartialEq)]
pub struct TokenTable {
    pub words: Vec<String>,
    pub embeddings: Array2<f64>,
}

impl TokenTable {
    /// Seeded stand-in for a pre-trained word-embedding table.
    pub fn template(token_dim: usize, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x746f_6b65_6e73);
        let t = normal_tensor(&[TEMPLATE_WORDS.len(), token_dim], TOKEN_STD, &mut rng);
        Self {
            words: TEMPLATE_WORDS.iter().map(|w| w.to_string()).collect(),
            embeddings: t.into_dimensionality().expect("2-d table"),
        }
    }

    pub fn token_dim(&self) -> usize {
        self.embeddings.ncols()
    }

    fn embed(&self, words: &[&str]) -> Result<Array2<f64>> {
        let rows = words
            .iter()
            .map(|w| {
                self.words
                    .iter()
                    .position(|v| v == w)
                    .map(|i| self.embeddings.row(i))
                    .ok_or_else(|| Error::Load(format!("token table lacks the word {w:?}")))
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(ndarray::stack(Axis(0), &rows).expect("equal row widths"))
    }
}

/// Shape information needed to compose prompts from a [`ParamStore`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct PromptLayout {
    pub num_identities: usize,
    pub num_tokens: usize,
    pub token_dim: usize,
    pub prefix_len: usize,
    pub suffix_len: usize,
    pub mode: PromptMode,
}

impl PromptLayout {
    /// Length of every composed sequence.
    pub fn sequence_len(&self) -> usize {
        self.prefix_len + self.num_tokens + self.suffix_len + self.class_len()
    }

    fn class_len(&self) -> usize {
        match self.mode {
            PromptMode::Learnable => 0,
            PromptMode::FixedTemplate => 1,
        }
    }

    /// First row of the learnable slots inside a composed sequence.
    pub fn slot_offset(&self) -> usize {
        self.prefix_len
    }

    /// Paths an optimizer may update.
    pub fn learnable_paths(&self) -> ParamSet {
        let mut set = ParamSet::new();
        if self.mode == PromptMode::Learnable && self.num_tokens > 0 {
            set.insert(TOKENS_PATH.to_string());
        }
        set
    }

    /// Every path owned by the bank, learnable or not.
    pub fn all_paths(&self) -> ParamSet {
        let mut set = self.learnable_paths();
        set.insert(PREFIX_PATH.to_string());
        set.insert(SUFFIX_PATH.to_string());
        if self.mode == PromptMode::FixedTemplate {
            set.insert(CLASS_TOKENS_PATH.to_string());
        }
        set
    }

    /// `prefix ⧺ tokens[id] ⧺ suffix` (the class token sits between the
    /// prefix and suffix in fixed-template mode).
    pub fn compose(&self, params: &ParamStore, identity: usize) -> Result<Array2<f64>> {
        ensure!(
            identity < self.num_identities,
            "identity {identity} out of range for {} identities",
            self.num_identities
        );
        let view2 = |path: &str| -> ArrayView2<'_, f64> {
            params
                .get(path)
                .view()
                .into_dimensionality()
                .expect("2-d template embedding")
        };
        let prefix = view2(PREFIX_PATH);
        let suffix = view2(SUFFIX_PATH);
        let middle: Array2<f64> = match self.mode {
            PromptMode::Learnable if self.num_tokens > 0 => params
                .get(TOKENS_PATH)
                .slice(s![identity, .., ..])
                .to_owned()
                .into_dimensionality()
                .expect("2-d slot block"),
            PromptMode::Learnable => Array2::zeros((0, self.token_dim)),
            PromptMode::FixedTemplate => view2(CLASS_TOKENS_PATH)
                .slice(s![identity..identity + 1, ..])
                .to_owned(),
        };
        Ok(concatenate(Axis(0), &[prefix, middle.view(), suffix]).expect("equal widths"))
    }
}

/// A stand-alone prompt bank: layout plus its own parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct PromptBank {
    pub layout: PromptLayout,
    pub params: ParamStore,
}

impl PromptBank {
    pub fn compose_prompt(&self, identity: usize) -> Result<Array2<f64>> {
        self.layout.compose(&self.params, identity)
    }

    pub fn tokens(&self) -> Option<&Tensor> {
        self.params.try_get(TOKENS_PATH)
    }
}

/// Builds a bank of `num_identities × num_tokens` slots of width `token_dim`,
/// drawn from `N(0, 0.02²)`, around a seeded template vocabulary.
pub fn init_prompt_bank(
    num_identities: usize,
    num_tokens: usize,
    token_dim: usize,
    seed: u64,
) -> Result<PromptBank> {
    let table = TokenTable::template(token_dim, seed);
    init_prompt_bank_with_table(num_identities, num_tokens, PromptMode::Learnable, &table, seed)
}

pub fn init_prompt_bank_with_table(
    num_identities: usize,
    num_tokens: usize,
    mode: PromptMode,
    table: &TokenTable,
    seed: u64,
) -> Result<PromptBank> {
    ensure!(num_identities > 0, "number of identities must be positive");
    ensure!(table.token_dim() > 0, "token dimension must be positive");
    if mode == PromptMode::Learnable {
        ensure!(num_tokens > 0, "number of learnable tokens must be positive");
    }
    let num_tokens = if mode == PromptMode::FixedTemplate {
        0
    } else {
        num_tokens
    };
    let token_dim = table.token_dim();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut params = ParamStore::new();
    params.insert(PREFIX_PATH, table.embed(&PREFIX_WORDS)?.into_dyn());
    params.insert(SUFFIX_PATH, table.embed(&SUFFIX_WORDS)?.into_dyn());
    match mode {
        PromptMode::Learnable => params.insert(
            TOKENS_PATH,
            normal_tensor(&[num_identities, num_tokens, token_dim], TOKEN_STD, &mut rng),
        ),
        PromptMode::FixedTemplate => params.insert(
            CLASS_TOKENS_PATH,
            normal_tensor(&[num_identities, token_dim], TOKEN_STD, &mut rng),
        ),
    }
    let layout = PromptLayout {
        num_identities,
        num_tokens,
        token_dim,
        prefix_len: PREFIX_WORDS.len(),
        suffix_len: SUFFIX_WORDS.len(),
        mode,
    };
    Ok(PromptBank { layout, params })
}

/// Scatters a gradient over a composed sequence back onto the learnable
/// slots of one identity, as a full `[N, M, D_tok]` tensor.
pub(crate) fn slot_gradient(layout: &PromptLayout, identity: usize, seq_grad: &Array2<f64>) -> Tensor {
    let mut full = Tensor::zeros(IxDyn(&[layout.num_identities, layout.num_tokens, layout.token_dim]));
    let off = layout.slot_offset();
    full.slice_mut(s![identity, .., ..])
        .assign(&seq_grad.slice(s![off..off + layout.num_tokens, ..]));
    full
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn bank_shape_and_seeded_determinism() {
        let a = init_prompt_bank(4, 4, 8, 7).unwrap();
        let b = init_prompt_bank(4, 4, 8, 7).unwrap();
        assert_eq!(a.tokens().unwrap().shape(), &[4, 4, 8]);
        assert_eq!(a, b);
        let c = init_prompt_bank(4, 4, 8, 8).unwrap();
        assert_ne!(a.tokens(), c.tokens());
    }

    #[test]
    fn token_std_matches_init() {
        let bank = init_prompt_bank(50, 4, 64, 3).unwrap();
        let t = bank.tokens().unwrap();
        assert!(t.len() >= 10_000);
        let mean = t.mean().unwrap();
        let std = (t.mapv(|v| (v - mean).powi(2)).mean().unwrap()).sqrt();
        assert!((std - 0.02).abs() < 0.2 * 0.02, "std {std}");
    }

    #[test]
    fn non_positive_counts_rejected() {
        assert!(init_prompt_bank(0, 4, 8, 1).is_err());
        assert!(init_prompt_bank(4, 0, 8, 1).is_err());
        assert!(init_prompt_bank(4, 4, 0, 1).is_err());
    }

    #[test]
    fn composed_length_is_fixed() {
        let bank = init_prompt_bank(5, 4, 8, 1).unwrap();
        let want = bank.layout.prefix_len + 4 + bank.layout.suffix_len;
        for id in 0..5 {
            assert_eq!(bank.compose_prompt(id).unwrap().nrows(), want);
        }
        assert!(bank.compose_prompt(5).is_err());
    }

    #[test]
    fn identities_differ_only_in_slots() {
        let bank = init_prompt_bank(3, 4, 8, 2).unwrap();
        let a = bank.compose_prompt(0).unwrap();
        let b = bank.compose_prompt(2).unwrap();
        let off = bank.layout.slot_offset();
        for r in 0..a.nrows() {
            let same = a.row(r) == b.row(r);
            let in_slots = (off..off + 4).contains(&r);
            assert_eq!(same, !in_slots, "row {r}");
        }
    }

    #[test]
    fn fixed_template_has_no_learnable_slots() {
        let table = TokenTable::template(8, 1);
        let bank = init_prompt_bank_with_table(3, 4, PromptMode::FixedTemplate, &table, 1).unwrap();
        assert_eq!(bank.layout.num_tokens, 0);
        assert!(bank.layout.learnable_paths().is_empty());
        assert!(bank.tokens().is_none());
        let seq = bank.compose_prompt(1).unwrap();
        assert_eq!(seq.nrows(), bank.layout.prefix_len + 1 + bank.layout.suffix_len);
        assert_ne!(seq, bank.compose_prompt(2).unwrap());
    }
}
