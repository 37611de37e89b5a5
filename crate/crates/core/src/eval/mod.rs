//! Translation quality and speed: corpus BLEU, preservation of words by
//! training frequency, and per-sentence latency.

mod latency;

use std::collections::{BTreeMap, HashMap};
use std::hash::Hash;

use serde::{Deserialize, Serialize};

pub use latency::{bench_interleaved, bench_latency, measure_latency, Decoder, LatencyReport, LatencyStats};

use crate::data::{Direction, Sample, Split, Vocabulary};
use crate::decoding::{decode, DecodeConfig, NgramLM, Postprocess};
use crate::error::{Error, Result};
use crate::model::{DatModel, LanguageTag};
use crate::tensor::Real;

const MAX_ORDER: usize = 4;

fn ngram_counts<T: Hash + Eq>(tokens: &[T], n: usize) -> HashMap<&[T], usize> {
    let mut counts = HashMap::new();
    if tokens.len() >= n {
        for w in tokens.windows(n) {
            *counts.entry(w).or_insert(0) += 1;
        }
    }
    counts
}

/// Clipped n-gram matches and hypothesis n-gram totals for n = 1..4, summed
/// over the corpus, plus hypothesis and reference lengths.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct BleuStats {
    pub matches: [usize; MAX_ORDER],
    pub totals: [usize; MAX_ORDER],
    pub hyp_len: usize,
    pub ref_len: usize,
}

impl BleuStats {
    pub fn add<T: Hash + Eq>(&mut self, hyp: &[T], reference: &[T]) {
        self.hyp_len += hyp.len();
        self.ref_len += reference.len();
        for n in 1..=MAX_ORDER {
            let h = ngram_counts(hyp, n);
            let r = ngram_counts(reference, n);
            self.matches[n - 1] += h
                .iter()
                .map(|(g, &c)| c.min(r.get(g).copied().unwrap_or(0)))
                .sum::<usize>();
            self.totals[n - 1] += hyp.len().saturating_sub(n - 1);
        }
    }

    /// BLEU in [0, 100]. Any zero precision gives 0.
    pub fn score(&self) -> Real {
        if self.hyp_len == 0 || self.matches.contains(&0) {
            return 0.0;
        }
        let log_p: Real = self
            .matches
            .iter()
            .zip(&self.totals)
            .map(|(&m, &t)| (m as Real / t as Real).ln())
            .sum::<Real>()
            / MAX_ORDER as Real;
        let bp = if self.hyp_len >= self.ref_len {
            1.0
        } else {
            (1.0 - self.ref_len as Real / self.hyp_len as Real).exp()
        };
        100.0 * bp * log_p.exp()
    }
}

/// Corpus-level BLEU-4 with the exponential brevity penalty.
pub fn bleu<T: Hash + Eq>(hypotheses: &[Vec<T>], references: &[Vec<T>]) -> Result<Real> {
    if hypotheses.len() != references.len() {
        return Err(Error::Config(format!(
            "{} hypotheses for {} references",
            hypotheses.len(),
            references.len()
        )));
    }
    if hypotheses.is_empty() {
        return Err(Error::Empty("corpus"));
    }
    let mut stats = BleuStats::default();
    for (h, r) in hypotheses.iter().zip(references) {
        stats.add(h, r);
    }
    Ok(stats.score())
}

/// One frequency bucket of the preservation curve. `lo..=hi` is the range of
/// training counts it covers.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Bucket {
    pub lo: usize,
    pub hi: usize,
    pub occurrences: usize,
    pub preserved: usize,
    /// `None` when no test token fell in the bucket.
    pub ratio: Option<Real>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PreservationCurve {
    /// Rarest first.
    pub buckets: Vec<Bucket>,
    /// Source tokens the lexicon could not map; excluded from the buckets.
    pub missing_lexicon: usize,
}

/// Source-side token counts of a training split.
pub fn source_counts(train: &Split) -> HashMap<usize, usize> {
    let mut counts = HashMap::new();
    for s in train.values().flatten() {
        for &w in &s.x {
            *counts.entry(w).or_insert(0) += 1;
        }
    }
    counts
}

/// For every source token of `samples`, whether its lexicon translation
/// into the sample's target language appears in the matching hypothesis.
/// Tokens are grouped into `n_buckets` log-spaced buckets of training
/// frequency; tokens never seen in training go to the first bucket.
pub fn preservation_ratio(
    samples: &[&Sample],
    hypotheses: &[Vec<usize>],
    train_counts: &HashMap<usize, usize>,
    lexicon: impl Fn(usize, LanguageTag) -> Option<usize>,
    n_buckets: usize,
) -> Result<PreservationCurve> {
    if samples.len() != hypotheses.len() {
        return Err(Error::Config(format!(
            "{} hypotheses for {} samples",
            hypotheses.len(),
            samples.len()
        )));
    }
    if n_buckets == 0 {
        return Err(Error::Config("need at least one bucket".into()));
    }
    let seen = || {
        samples
            .iter()
            .flat_map(|s| s.x.iter())
            .filter_map(|w| train_counts.get(w).copied())
    };
    let min = seen().filter(|&c| c > 0).min().unwrap_or(1) as Real;
    let max = seen().max().unwrap_or(1).max(1) as Real;
    let span = (max + 1.0).ln() - min.ln();
    let bucket_of = |c: usize| -> usize {
        if c == 0 {
            return 0;
        }
        let b = ((c as Real).ln() - min.ln()) / span * n_buckets as Real;
        (b.floor().max(0.0) as usize).min(n_buckets - 1)
    };
    let edge = |b: usize| (min.ln() + span * b as Real / n_buckets as Real).exp();
    let mut buckets: Vec<Bucket> = (0..n_buckets)
        .map(|b| Bucket {
            lo: if b == 0 { 0 } else { edge(b).ceil() as usize },
            hi: (edge(b + 1).ceil() as usize).saturating_sub(1),
            occurrences: 0,
            preserved: 0,
            ratio: None,
        })
        .collect();
    let mut missing = 0;
    for (s, hyp) in samples.iter().zip(hypotheses) {
        for &w in &s.x {
            let Some(t) = lexicon(w, s.tgt) else {
                missing += 1;
                continue;
            };
            let b = &mut buckets[bucket_of(train_counts.get(&w).copied().unwrap_or(0))];
            b.occurrences += 1;
            b.preserved += hyp.contains(&t) as usize;
        }
    }
    for b in &mut buckets {
        if b.occurrences > 0 {
            b.ratio = Some(b.preserved as Real / b.occurrences as Real);
        }
    }
    Ok(PreservationCurve {
        buckets,
        missing_lexicon: missing,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DirectionScore {
    /// "src-tgt" language names.
    pub direction: String,
    pub supervised: bool,
    pub sentences: usize,
    pub bleu: Real,
}

/// Evaluation summary written as JSON:
///
/// ```text
/// {
///   "decoder": "lookahead" | "ngram-beam",
///   "directions": [{"direction": "l0-l1", "supervised": true, "sentences": 100, "bleu": 97.1}, ...],
///   "supervised_bleu": mean over supervised directions (null if none),
///   "zero_shot_bleu": mean over zero-shot directions (null if none),
///   "preservation": {"buckets": [{"lo", "hi", "occurrences", "preserved", "ratio"}], "missing_lexicon"} | null,
///   "latency": {"decoder": {...}, "baseline": {...} | null, "speedup": x | null} | null
/// }
/// ```
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub decoder: String,
    pub directions: Vec<DirectionScore>,
    pub supervised_bleu: Option<Real>,
    pub zero_shot_bleu: Option<Real>,
    pub preservation: Option<PreservationCurve>,
    pub latency: Option<LatencyReport>,
}

impl EvalReport {
    pub fn new(decoder: impl Into<String>, directions: Vec<DirectionScore>) -> Self {
        let mean = |sup: bool| {
            let xs: Vec<Real> = directions
                .iter()
                .filter(|d| d.supervised == sup)
                .map(|d| d.bleu)
                .collect();
            (!xs.is_empty()).then(|| xs.iter().sum::<Real>() / xs.len() as Real)
        };
        EvalReport {
            decoder: decoder.into(),
            supervised_bleu: mean(true),
            zero_shot_bleu: mean(false),
            directions,
            preservation: None,
            latency: None,
        }
    }

    pub fn to_json(&self) -> Result<String> {
        let mut s = serde_json::to_string_pretty(self)?;
        s.push('\n');
        Ok(s)
    }
}

/// One LM per target language, trained on the target side of `train`.
pub fn train_language_models(
    train: &Split,
    vocab: usize,
    cfg: &DecodeConfig,
) -> Result<BTreeMap<LanguageTag, NgramLM>> {
    let mut text: BTreeMap<LanguageTag, Vec<Vec<usize>>> = BTreeMap::new();
    for (d, samples) in train {
        text.entry(d.tgt)
            .or_default()
            .extend(samples.iter().map(|s| s.target_words().to_vec()));
    }
    text.into_iter()
        .map(|(l, sents)| {
            Ok((
                l,
                NgramLM::train(&sents, cfg.lm_order, vocab, cfg.lm_smoothing)?.with_language(l),
            ))
        })
        .collect()
}

/// Decode every sample. LMs are looked up by target language.
pub fn translate_samples(
    model: &DatModel,
    samples: &[&Sample],
    cfg: &DecodeConfig,
    lms: &BTreeMap<LanguageTag, NgramLM>,
    post: &Postprocess,
) -> Result<Vec<Vec<usize>>> {
    samples
        .iter()
        .map(|s| {
            let dag = model.predict(&s.x, s.tgt)?;
            decode(&dag, cfg, lms.get(&s.tgt), post)
        })
        .collect()
}

/// Per-direction BLEU over `split`, at most `limit` sentences per direction.
pub fn score_split(
    model: &DatModel,
    split: &Split,
    vocab: &Vocabulary,
    supervised: impl Fn(Direction) -> bool,
    cfg: &DecodeConfig,
    lms: &BTreeMap<LanguageTag, NgramLM>,
    limit: Option<usize>,
) -> Result<Vec<DirectionScore>> {
    let post = Postprocess {
        collapse_repeats: cfg.collapse_repeats,
        first_word: vocab.first_word(),
    };
    let mut out = Vec::new();
    for (&d, samples) in split {
        let take = limit.unwrap_or(samples.len()).min(samples.len());
        if take == 0 {
            continue;
        }
        let batch: Vec<&Sample> = samples[..take].iter().collect();
        let hyps = translate_samples(model, &batch, cfg, lms, &post)?;
        let refs: Vec<Vec<usize>> = batch.iter().map(|s| s.target_words().to_vec()).collect();
        out.push(DirectionScore {
            direction: format!("{}-{}", vocab.language_name(d.src), vocab.language_name(d.tgt)),
            supervised: supervised(d),
            sentences: take,
            bleu: bleu(&hyps, &refs)?,
        });
    }
    Ok(out)
}
