//! Count-based n-gram language model.
//!
//! Sentences are padded with `order - 1` BOS tokens on the left and one EOS
//! on the right. Probabilities interpolate add-k counts with the next lower
//! order, grounded at an add-k unigram:
//!
//! ```text
//! p1(w)      = (c(w) + k) / (N + k·V)
//! pn(w | h)  = (c(h w) + k·V·p(n-1)(w | h')) / (c(h) + k·V)
//! ```
//!
//! where `h'` drops the oldest token of `h` and `c(h)` sums `c(h w)` over `w`.
//! An unseen context therefore falls back to the lower order exactly, and
//! every conditional distribution sums to one over the `V` ids.
//!
//! # File format
//!
//! UTF-8 text, one record per line:
//!
//! ```text
//! mdat-ngram 1
//! language <index or ->
//! order <n>
//! vocab <V>
//! smoothing <k>
//! <count> <id_1> ... <id_m>        (one line per m-gram, 1 <= m <= n)
//! ```
//!
//! Records are sorted by length, then by ids.

use std::collections::HashMap;
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::model::{LanguageTag, BOS, EOS};
use crate::tensor::Real;

pub const DEFAULT_SMOOTHING: Real = 0.1;
const HEADER: &str = "mdat-ngram 1";

#[derive(Clone, Debug, PartialEq)]
pub struct NgramLM {
    order: usize,
    vocab: usize,
    smoothing: Real,
    language: Option<LanguageTag>,
    /// counts[m - 1] maps m-grams to their count.
    counts: Vec<HashMap<Vec<usize>, u64>>,
    /// context_totals[m - 1] maps (m-1)-token contexts to Σ_w c(h w).
    context_totals: Vec<HashMap<Vec<usize>, u64>>,
    tokens: u64,
}

impl NgramLM {
    /// Count all m-grams (m ≤ `order`) of the padded sentences.
    pub fn train(corpus: &[Vec<usize>], order: usize, vocab: usize, smoothing: Real) -> Result<Self> {
        if corpus.is_empty() {
            return Err(Error::Empty("language-model corpus"));
        }
        if order == 0 {
            return Err(Error::Config("n-gram order must be at least 1".into()));
        }
        if !(smoothing > 0.0) {
            return Err(Error::Config(format!("smoothing must be positive, got {smoothing}")));
        }
        let mut counts = vec![HashMap::new(); order];
        for sentence in corpus {
            if let Some(&id) = sentence.iter().find(|&&w| w >= vocab) {
                return Err(Error::OutOfVocabulary { id, vocab });
            }
            let padded = pad(sentence, order);
            for i in order - 1..padded.len() {
                for m in 1..=order {
                    *counts[m - 1].entry(padded[i + 1 - m..=i].to_vec()).or_insert(0) += 1;
                }
            }
        }
        Ok(Self::from_counts(order, vocab, smoothing, None, counts))
    }

    fn from_counts(
        order: usize,
        vocab: usize,
        smoothing: Real,
        language: Option<LanguageTag>,
        counts: Vec<HashMap<Vec<usize>, u64>>,
    ) -> Self {
        let mut context_totals = vec![HashMap::new(); order];
        for (m, table) in counts.iter().enumerate() {
            for (gram, &c) in table {
                *context_totals[m].entry(gram[..gram.len() - 1].to_vec()).or_insert(0) += c;
            }
        }
        let tokens = counts[0].values().sum();
        NgramLM {
            order,
            vocab,
            smoothing,
            language,
            counts,
            context_totals,
            tokens,
        }
    }

    pub fn with_language(mut self, language: LanguageTag) -> Self {
        self.language = Some(language);
        self
    }

    pub fn order(&self) -> usize {
        self.order
    }

    pub fn vocab(&self) -> usize {
        self.vocab
    }

    pub fn language(&self) -> Option<LanguageTag> {
        self.language
    }

    pub fn smoothing(&self) -> Real {
        self.smoothing
    }

    /// `log p(w | history)`; only the last `order - 1` history tokens matter,
    /// and a history shorter than that is padded with BOS.
    pub fn log_prob(&self, history: &[usize], w: usize) -> Real {
        let n = self.order - 1;
        let mut ctx = vec![BOS; n.saturating_sub(history.len())];
        ctx.extend_from_slice(&history[history.len().saturating_sub(n)..]);
        self.prob(&ctx, w).ln()
    }

    fn prob(&self, ctx: &[usize], w: usize) -> Real {
        let k = self.smoothing;
        let v = self.vocab as Real;
        let m = ctx.len() + 1;
        let lower = if ctx.is_empty() {
            None
        } else {
            Some(self.prob(&ctx[1..], w))
        };
        let mut gram = ctx.to_vec();
        gram.push(w);
        let c = self.counts[m - 1].get(&gram).copied().unwrap_or(0) as Real;
        match lower {
            None => (c + k) / (self.tokens as Real + k * v),
            Some(lower) => {
                let total = self.context_totals[m - 1].get(ctx).copied().unwrap_or(0) as Real;
                (c + k * v * lower) / (total + k * v)
            }
        }
    }

    /// Sum of `log p` over the tokens of `sentence` followed by EOS.
    pub fn score(&self, sentence: &[usize]) -> Real {
        let padded = pad(sentence, self.order);
        (self.order - 1..padded.len())
            .map(|i| self.prob(&padded[i + 1 - self.order..i], padded[i]).ln())
            .sum()
    }

    pub fn to_text(&self) -> String {
        let mut out = String::new();
        let lang = self.language.map_or("-".to_string(), |l| l.0.to_string());
        let _ = writeln!(
            out,
            "{HEADER}\nlanguage {lang}\norder {}\nvocab {}",
            self.order, self.vocab
        );
        let _ = writeln!(out, "smoothing {}", self.smoothing);
        for table in &self.counts {
            let mut rows: Vec<_> = table.iter().collect();
            rows.sort();
            for (gram, c) in rows {
                let ids: Vec<String> = gram.iter().map(|w| w.to_string()).collect();
                let _ = writeln!(out, "{c} {}", ids.join(" "));
            }
        }
        out
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let bad = |m: String| Error::Format(format!("n-gram file: {m}"));
        let mut lines = text.lines();
        if lines.next() != Some(HEADER) {
            return Err(bad("missing header".into()));
        }
        let mut field = |name: &str| -> Result<String> {
            let line = lines.next().ok_or_else(|| bad(format!("missing {name}")))?;
            line.strip_prefix(name)
                .and_then(|r| r.strip_prefix(' '))
                .map(str::to_string)
                .ok_or_else(|| bad(format!("expected `{name}`, got `{line}`")))
        };
        let language = match field("language")?.as_str() {
            "-" => None,
            s => Some(LanguageTag(s.parse().map_err(|_| bad(format!("language `{s}`")))?)),
        };
        let order: usize = field("order")?.parse().map_err(|_| bad("order".into()))?;
        let vocab: usize = field("vocab")?.parse().map_err(|_| bad("vocab".into()))?;
        let smoothing: Real = field("smoothing")?.parse().map_err(|_| bad("smoothing".into()))?;
        if order == 0 || !(smoothing > 0.0) {
            return Err(bad("order and smoothing must be positive".into()));
        }
        let mut counts = vec![HashMap::new(); order];
        for line in lines.filter(|l| !l.trim().is_empty()) {
            let mut parts = line.split_whitespace().map(str::parse::<u64>);
            let c = parts
                .next()
                .and_then(|p| p.ok())
                .ok_or_else(|| bad(format!("record `{line}`")))?;
            let gram = parts
                .map(|p| p.map(|w| w as usize))
                .collect::<std::result::Result<Vec<_>, _>>()
                .map_err(|_| bad(format!("record `{line}`")))?;
            if gram.is_empty() || gram.len() > order || gram.iter().any(|&w| w >= vocab) {
                return Err(bad(format!("record `{line}` out of range")));
            }
            counts[gram.len() - 1].insert(gram, c);
        }
        if counts[0].is_empty() {
            return Err(bad("no unigram counts".into()));
        }
        Ok(Self::from_counts(order, vocab, smoothing, language, counts))
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_text()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_text(&text)
    }
}

fn pad(sentence: &[usize], order: usize) -> Vec<usize> {
    let mut padded = vec![BOS; order - 1];
    padded.extend_from_slice(sentence);
    padded.push(EOS);
    padded
}
