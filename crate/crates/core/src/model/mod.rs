//! Multilingual encoder-decoder models.
//!
//! [`DatModel`] is the non-autoregressive model: the encoder reads the source
//! prefixed with the target-language tag, and the decoder turns `S` learned
//! position embeddings into a word distribution and a link distribution per
//! step ([`DagOutput`]). [`AtModel`] is the left-to-right baseline with the
//! same encoder and layer sizes.

mod at;
pub mod checkpoint;
mod dat;
mod encoder;
mod layers;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::Real;

pub use at::AtModel;
pub use dat::{DagTensors, DatModel};

/// Reserved vocabulary ids. Language tags follow at `FIRST_TAG`.
pub const PAD: usize = 0;
pub const BOS: usize = 1;
pub const EOS: usize = 2;
pub const UNK: usize = 3;
pub const FIRST_TAG: usize = 4;

/// Dense 0-based language index. The tag token of language `i` has id
/// `FIRST_TAG + i`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct LanguageTag(pub u16);

impl LanguageTag {
    pub fn index(self) -> usize {
        self.0 as usize
    }

    pub fn token_id(self) -> usize {
        FIRST_TAG + self.0 as usize
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelConfig {
    pub d_model: usize,
    pub n_heads: usize,
    pub n_enc_layers: usize,
    pub n_dec_layers: usize,
    pub ffn_width: usize,
    pub vocab_size: usize,
    pub max_positions: usize,
    /// Ratio of decoder steps to source tokens.
    pub upsample_factor: Real,
    pub dropout: Real,
    pub seed: u64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            d_model: 64,
            n_heads: 2,
            n_enc_layers: 2,
            n_dec_layers: 2,
            ffn_width: 128,
            vocab_size: 0,
            max_positions: 256,
            upsample_factor: 4.0,
            dropout: 0.0,
            seed: 1,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        let fail = |m: String| Err(Error::Config(m));
        if self.d_model == 0 || self.n_heads == 0 || !self.d_model.is_multiple_of(self.n_heads) {
            return fail(format!(
                "d_model ({}) must be a positive multiple of n_heads ({})",
                self.d_model, self.n_heads
            ));
        }
        if !(self.upsample_factor >= 1.0) || !self.upsample_factor.is_finite() {
            return fail(format!("upsample_factor must be >= 1, got {}", self.upsample_factor));
        }
        if self.vocab_size <= FIRST_TAG {
            return fail(format!("vocab_size {} leaves no room for words", self.vocab_size));
        }
        if self.max_positions < 2 {
            return fail("max_positions must be at least 2".into());
        }
        if self.ffn_width == 0 {
            return fail("ffn_width must be positive".into());
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return fail(format!("dropout must be in [0, 1), got {}", self.dropout));
        }
        Ok(())
    }

    /// Number of decoder steps for a source of `src_len` tokens.
    pub fn steps_for(&self, src_len: usize) -> usize {
        let s = (self.upsample_factor * src_len as Real).ceil() as usize;
        s.clamp(2, self.max_positions)
    }
}

/// Word and link log-probability tables of one sentence.
///
/// Steps are 0-based here: the first step is 0 and the last is `steps - 1`.
#[derive(Clone, Debug, PartialEq)]
pub struct DagOutput {
    steps: usize,
    vocab: usize,
    word_logp: Vec<Real>,
    link_logp: Vec<Real>,
}

impl DagOutput {
    /// Wrap already-normalised tables; see [`DagOutput::validate`].
    pub fn new(steps: usize, vocab: usize, word_logp: Vec<Real>, link_logp: Vec<Real>) -> Result<Self> {
        if steps < 2 {
            return Err(Error::Config(format!("a lattice needs at least 2 steps, got {steps}")));
        }
        if word_logp.len() != steps * vocab || link_logp.len() != steps * steps {
            return Err(Error::Config(format!(
                "table sizes {} / {} do not match {steps} steps and {vocab} words",
                word_logp.len(),
                link_logp.len()
            )));
        }
        Ok(DagOutput {
            steps,
            vocab,
            word_logp,
            link_logp,
        })
    }

    /// Normalise raw scores: rows of `word_logits` over the vocabulary, rows
    /// of `link_logits` over later steps only. Entries of `link_logits` at or
    /// below the diagonal are ignored.
    pub fn from_logits(steps: usize, vocab: usize, word_logits: &[Real], link_logits: &[Real]) -> Result<Self> {
        use crate::tensor::logsumexp_slice;
        if word_logits.len() != steps * vocab || link_logits.len() != steps * steps {
            return Err(Error::Config("logit table sizes do not match".into()));
        }
        let mut word = word_logits.to_vec();
        for row in word.chunks_mut(vocab) {
            let z = logsumexp_slice(row);
            row.iter_mut().for_each(|v| *v -= z);
        }
        let mut link = vec![Real::NEG_INFINITY; steps * steps];
        for s in 0..steps.saturating_sub(1) {
            let row = &link_logits[s * steps + s + 1..(s + 1) * steps];
            let z = logsumexp_slice(row);
            for (j, v) in row.iter().enumerate() {
                link[s * steps + s + 1 + j] = v - z;
            }
        }
        Self::new(steps, vocab, word, link)
    }

    pub fn steps(&self) -> usize {
        self.steps
    }

    pub fn vocab(&self) -> usize {
        self.vocab
    }

    pub fn word(&self, step: usize, token: usize) -> Real {
        self.word_logp[step * self.vocab + token]
    }

    pub fn word_row(&self, step: usize) -> &[Real] {
        &self.word_logp[step * self.vocab..(step + 1) * self.vocab]
    }

    pub fn link(&self, from: usize, to: usize) -> Real {
        self.link_logp[from * self.steps + to]
    }

    pub fn link_row(&self, from: usize) -> &[Real] {
        &self.link_logp[from * self.steps..(from + 1) * self.steps]
    }

    pub fn word_table(&self) -> &[Real] {
        &self.word_logp
    }

    pub fn link_table(&self) -> &[Real] {
        &self.link_logp
    }

    /// Check normalisation and link support within `tol` (log space).
    pub fn validate(&self, tol: Real) -> Result<()> {
        use crate::tensor::logsumexp_slice;
        for s in 0..self.steps {
            let z = logsumexp_slice(self.word_row(s));
            if (z.abs()) > tol {
                return Err(Error::Config(format!("word row {s} sums to exp({z})")));
            }
            let row = self.link_row(s);
            if let Some(j) = (0..=s).find(|&j| row[j].is_finite()) {
                return Err(Error::Config(format!("link {s}->{j} is not forward but finite")));
            }
            if s + 1 < self.steps {
                let z = logsumexp_slice(&row[s + 1..]);
                if z.abs() > tol {
                    return Err(Error::Config(format!("link row {s} sums to exp({z})")));
                }
            }
        }
        Ok(())
    }
}

pub(crate) fn check_tokens(tokens: &[usize], config: &ModelConfig) -> Result<()> {
    if let Some(&id) = tokens.iter().find(|&&t| t >= config.vocab_size) {
        return Err(Error::OutOfVocabulary {
            id,
            vocab: config.vocab_size,
        });
    }
    Ok(())
}

#[cfg(test)]
mod tests;
