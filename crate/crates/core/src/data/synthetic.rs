//! Cipher languages over a shared concept inventory.
//!
//! A sentence is a sequence of distinct concepts. Language `l` writes concept
//! `c` as its own surface token (a per-language permutation of the concept
//! ids names the token) and then applies its word-order rule. Translation
//! between any two languages is therefore exact and invertible: undo the
//! source order, map tokens through concepts, apply the target order.

use std::collections::{BTreeMap, HashMap};
use std::fmt;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{Direction, DirectionGraph, Sample, Vocabulary};
use crate::error::{Error, Result};
use crate::model::LanguageTag;
use crate::tensor::Real;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub enum WordOrder {
    Identity,
    Reverse,
    /// Move the first `k` tokens to the end (k taken modulo the length).
    Rotate(usize),
}

impl WordOrder {
    pub fn apply<T: Copy>(self, xs: &[T]) -> Vec<T> {
        let mut v = xs.to_vec();
        match self {
            WordOrder::Identity => {}
            WordOrder::Reverse => v.reverse(),
            WordOrder::Rotate(k) if !v.is_empty() => v.rotate_left(k % xs.len()),
            WordOrder::Rotate(_) => {}
        }
        v
    }

    pub fn invert<T: Copy>(self, xs: &[T]) -> Vec<T> {
        let mut v = xs.to_vec();
        match self {
            WordOrder::Identity => {}
            WordOrder::Reverse => v.reverse(),
            WordOrder::Rotate(k) if !v.is_empty() => v.rotate_right(k % xs.len()),
            WordOrder::Rotate(_) => {}
        }
        v
    }
}

impl fmt::Display for WordOrder {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            WordOrder::Identity => write!(f, "identity"),
            WordOrder::Reverse => write!(f, "reverse"),
            WordOrder::Rotate(k) => write!(f, "rotate:{k}"),
        }
    }
}

impl std::str::FromStr for WordOrder {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "identity" => Ok(WordOrder::Identity),
            "reverse" => Ok(WordOrder::Reverse),
            _ => s
                .strip_prefix("rotate:")
                .and_then(|k| k.parse().ok())
                .map(WordOrder::Rotate)
                .ok_or_else(|| Error::Config(format!("unknown word order `{s}` (identity, reverse, rotate:K)"))),
        }
    }
}

impl TryFrom<String> for WordOrder {
    type Error = Error;

    fn try_from(s: String) -> Result<Self> {
        s.parse()
    }
}

impl From<WordOrder> for String {
    fn from(w: WordOrder) -> String {
        w.to_string()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SyntheticSpec {
    pub languages: usize,
    pub hub: usize,
    pub concepts: usize,
    pub min_len: usize,
    pub max_len: usize,
    /// One rule per language; missing entries default to identity.
    pub word_orders: Vec<WordOrder>,
    /// Concept frequencies follow rank^(-zipf); 0 gives uniform concepts.
    pub zipf: Real,
    pub train_per_direction: usize,
    pub valid_per_direction: usize,
    pub test_per_direction: usize,
    pub seed: u64,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        SyntheticSpec {
            languages: 3,
            hub: 0,
            concepts: 16,
            min_len: 3,
            max_len: 7,
            word_orders: Vec::new(),
            zipf: 1.0,
            train_per_direction: 2000,
            valid_per_direction: 100,
            test_per_direction: 100,
            seed: 7,
        }
    }
}

impl SyntheticSpec {
    pub fn validate(&self) -> Result<()> {
        let fail = |m: String| Err(Error::Config(m));
        if self.languages < 3 {
            return fail(format!(
                "{} languages leave no zero-shot direction; at least 3 are needed",
                self.languages
            ));
        }
        if self.languages > 26 {
            return fail("at most 26 languages are supported".into());
        }
        if self.hub >= self.languages {
            return fail(format!("hub {} is not one of {} languages", self.hub, self.languages));
        }
        if self.min_len == 0 || self.min_len > self.max_len {
            return fail(format!("bad length range {}..={}", self.min_len, self.max_len));
        }
        if self.max_len > self.concepts {
            return fail(format!(
                "sentences of {} distinct concepts need at least that many concepts, got {}",
                self.max_len, self.concepts
            ));
        }
        if self.word_orders.len() > self.languages {
            return fail(format!(
                "{} word orders for {} languages",
                self.word_orders.len(),
                self.languages
            ));
        }
        if !(self.zipf >= 0.0) {
            return fail("zipf exponent must be non-negative".into());
        }
        if self.train_per_direction == 0 || self.test_per_direction == 0 {
            return fail("train and test splits must be non-empty".into());
        }
        Ok(())
    }

    pub fn language_names(&self) -> Vec<String> {
        (0..self.languages).map(|i| format!("l{i}")).collect()
    }

    pub fn word_order(&self, language: usize) -> WordOrder {
        self.word_orders.get(language).copied().unwrap_or(WordOrder::Identity)
    }
}

/// Samples per direction.
pub type Split = BTreeMap<Direction, Vec<Sample>>;

/// Exact translator between all languages of a synthetic corpus.
#[derive(Clone, Debug)]
pub struct Oracle {
    /// surface[l][c]: token id of concept c in language l.
    surface: Vec<Vec<usize>>,
    /// token id -> (language, concept)
    concept_of: HashMap<usize, (usize, usize)>,
    orders: Vec<WordOrder>,
}

impl Oracle {
    /// Rebuild the translator from the corpus settings and the corpus vocabulary.
    pub fn new(spec: &SyntheticSpec, vocab: &Vocabulary) -> Result<Self> {
        spec.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
        let names = spec.language_names();
        let mut surface = Vec::with_capacity(spec.languages);
        let mut concept_of = HashMap::new();
        for (l, name) in names.iter().enumerate() {
            let mut cipher: Vec<usize> = (0..spec.concepts).collect();
            cipher.shuffle(&mut rng);
            let mut ids = Vec::with_capacity(spec.concepts);
            for (c, &code) in cipher.iter().enumerate() {
                let token = surface_token(name, code);
                let id = vocab.id(&token);
                if id < vocab.first_word() {
                    return Err(Error::Format(format!("vocabulary lacks `{token}`")));
                }
                if concept_of.insert(id, (l, c)).is_some() {
                    return Err(Error::Config(format!("cipher collision on `{token}`")));
                }
                ids.push(id);
            }
            surface.push(ids);
        }
        Ok(Oracle {
            surface,
            concept_of,
            orders: (0..spec.languages).map(|l| spec.word_order(l)).collect(),
        })
    }

    pub fn languages(&self) -> usize {
        self.surface.len()
    }

    /// Sentence of `language` expressing `concepts` (in canonical order).
    pub fn realise(&self, concepts: &[usize], language: LanguageTag) -> Vec<usize> {
        let words: Vec<usize> = concepts.iter().map(|&c| self.surface[language.index()][c]).collect();
        self.orders[language.index()].apply(&words)
    }

    /// Canonical concept sequence of a sentence written in `language`.
    pub fn concepts(&self, tokens: &[usize], language: LanguageTag) -> Result<Vec<usize>> {
        let canonical = self.orders[language.index()].invert(tokens);
        canonical
            .iter()
            .map(|t| match self.concept_of.get(t) {
                Some(&(l, c)) if l == language.index() => Ok(c),
                _ => Err(Error::Format(format!(
                    "token {t} is not a word of language {}",
                    language.0
                ))),
            })
            .collect()
    }

    pub fn translate(&self, tokens: &[usize], from: LanguageTag, to: LanguageTag) -> Result<Vec<usize>> {
        Ok(self.realise(&self.concepts(tokens, from)?, to))
    }

    /// Word-level translation of a single token into `to`.
    pub fn lexicon(&self, token: usize, to: LanguageTag) -> Option<usize> {
        self.concept_of.get(&token).map(|&(_, c)| self.surface[to.index()][c])
    }

    pub fn language_of(&self, token: usize) -> Option<LanguageTag> {
        self.concept_of.get(&token).map(|&(l, _)| LanguageTag(l as u16))
    }
}

fn surface_token(language: &str, code: usize) -> String {
    format!("{language}w{code:02}")
}

/// Generated corpus with its translator.
#[derive(Clone, Debug)]
pub struct Corpus {
    pub spec: SyntheticSpec,
    pub vocab: Vocabulary,
    pub graph: DirectionGraph,
    pub oracle: Oracle,
    pub train: Split,
    pub valid: Split,
    pub test: Split,
}

impl Corpus {
    pub fn hub(&self) -> LanguageTag {
        self.graph.hub()
    }

    pub fn languages(&self) -> Vec<LanguageTag> {
        self.vocab.tags().collect()
    }

    /// Test directions absent from training.
    pub fn zero_shot_directions(&self) -> Vec<Direction> {
        self.test
            .keys()
            .filter(|d| !self.graph.contains(d.src, d.tgt))
            .copied()
            .collect()
    }

    pub fn supervised_directions(&self) -> Vec<Direction> {
        self.graph.directions().into_iter().collect()
    }

    /// Target-side sentences (without EOS) of the training split per language.
    pub fn monolingual_targets(&self) -> BTreeMap<LanguageTag, Vec<Vec<usize>>> {
        let mut out: BTreeMap<LanguageTag, Vec<Vec<usize>>> = BTreeMap::new();
        for (d, samples) in &self.train {
            out.entry(d.tgt)
                .or_default()
                .extend(samples.iter().map(|s| s.target_words().to_vec()));
        }
        out
    }
}

/// Build vocabulary, splits and translator from `spec`, bit-exactly
/// reproducible from its seed.
pub fn gen_corpus(spec: &SyntheticSpec) -> Result<Corpus> {
    spec.validate()?;
    let names = spec.language_names();
    let words: Vec<String> = names
        .iter()
        .flat_map(|n| (0..spec.concepts).map(move |c| surface_token(n, c)))
        .collect();
    let vocab = Vocabulary::new(&names, &words)?;
    let oracle = Oracle::new(spec, &vocab)?;
    let hub = LanguageTag(spec.hub as u16);
    let graph = DirectionGraph::hub_centric(spec.languages, hub)?;

    let weights: Vec<Real> = (1..=spec.concepts).map(|r| (r as Real).powf(-spec.zipf)).collect();
    // sentence streams are seeded apart from the cipher draw
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    rng.set_stream(1);
    let mut draw = |n: usize, d: Direction| -> Result<Vec<Sample>> {
        (0..n)
            .map(|_| {
                let concepts = draw_concepts(&mut rng, &weights, spec.min_len, spec.max_len);
                Sample::new(
                    oracle.realise(&concepts, d.src),
                    d.src,
                    oracle.realise(&concepts, d.tgt),
                    d.tgt,
                )
            })
            .collect()
    };

    let supervised: Vec<Direction> = graph.directions().into_iter().collect();
    let mut train = Split::new();
    let mut valid = Split::new();
    let mut test = Split::new();
    for &d in &supervised {
        train.insert(d, draw(spec.train_per_direction, d)?);
    }
    for &d in &supervised {
        if spec.valid_per_direction > 0 {
            valid.insert(d, draw(spec.valid_per_direction, d)?);
        }
    }
    let tags: Vec<LanguageTag> = vocab.tags().collect();
    for &s in &tags {
        for &t in &tags {
            if s != t {
                test.insert(
                    Direction::new(s, t),
                    draw(spec.test_per_direction, Direction::new(s, t))?,
                );
            }
        }
    }
    Ok(Corpus {
        spec: spec.clone(),
        vocab,
        graph,
        oracle,
        train,
        valid,
        test,
    })
}

/// Distinct concepts, drawn without replacement with the given weights.
fn draw_concepts(rng: &mut ChaCha8Rng, weights: &[Real], min_len: usize, max_len: usize) -> Vec<usize> {
    let len = rng.gen_range(min_len..=max_len);
    let mut w = weights.to_vec();
    let mut out = Vec::with_capacity(len);
    for _ in 0..len {
        let total: Real = w.iter().sum();
        let mut u = rng.gen::<Real>() * total;
        let mut pick = w.len() - 1;
        for (c, &wc) in w.iter().enumerate() {
            if wc > 0.0 && u < wc {
                pick = c;
                break;
            }
            u -= wc;
        }
        while w[pick] == 0.0 {
            pick -= 1;
        }
        out.push(pick);
        w[pick] = 0.0;
    }
    out
}
