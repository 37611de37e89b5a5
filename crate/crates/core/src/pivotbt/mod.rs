//! Online back-translation with pivot routing.
//!
//! For a real sample `(x, l_src, y, l_tgt)` an augmentation language
//! `l_aug ≠ l_tgt` is drawn and `y` is translated into it with the current
//! model. If `l_tgt → l_aug` is a supervised direction this is one decode;
//! otherwise the translation goes through the hub (`l_tgt → hub → l_aug`).
//! The synthetic sample `(x̂, l_aug, y, l_tgt)` joins the batch.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::data::{DirectionGraph, Sample};
use crate::decoding::{decode, DecodeConfig, DecodeMethod, Postprocess};
use crate::error::{Error, Result};
use crate::model::{DatModel, LanguageTag};
use crate::tensor::Real;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum BtMode {
    /// Random `l_aug`, routed through the hub when the direction is unseen.
    #[serde(rename = "pivotbt")]
    PivotBt,
    /// Random `l_aug`, always decoded directly.
    RandNoPivot,
    /// `l_aug = l_src`.
    SrcNoPivot,
    Off,
}

impl std::str::FromStr for BtMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "pivotbt" => Ok(BtMode::PivotBt),
            "rand-no-pivot" => Ok(BtMode::RandNoPivot),
            "src-no-pivot" => Ok(BtMode::SrcNoPivot),
            "off" => Ok(BtMode::Off),
            other => Err(Error::Config(format!(
                "unknown back-translation mode `{other}` (pivotbt, rand-no-pivot, src-no-pivot, off)"
            ))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BtPolicy {
    pub mode: BtMode,
    /// Weight of the back-translation loss.
    pub weight: Real,
    /// Fraction of the total updates to train before augmenting.
    pub warmup_fraction: Real,
    pub decode: DecodeMethod,
}

impl Default for BtPolicy {
    fn default() -> Self {
        BtPolicy {
            mode: BtMode::PivotBt,
            weight: 0.5,
            warmup_fraction: 0.1,
            decode: DecodeMethod::Lookahead,
        }
    }
}

impl BtPolicy {
    pub fn off() -> Self {
        BtPolicy {
            mode: BtMode::Off,
            ..BtPolicy::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.weight >= 0.0) || !self.weight.is_finite() {
            return Err(Error::Config(format!(
                "back-translation weight must be >= 0, got {}",
                self.weight
            )));
        }
        if !(0.0..=1.0).contains(&self.warmup_fraction) {
            return Err(Error::Config(format!(
                "warmup_fraction must be in [0, 1], got {}",
                self.warmup_fraction
            )));
        }
        Ok(())
    }

    /// First update at which augmentation runs.
    pub fn start_step(&self, total_updates: usize) -> usize {
        (self.warmup_fraction * total_updates as Real).ceil() as usize + 1
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum RouteKind {
    Direct,
    Pivot,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct BtRoute {
    pub kind: RouteKind,
    pub from: LanguageTag,
    pub aug: LanguageTag,
    pub pivot: Option<LanguageTag>,
}

impl BtRoute {
    pub fn direct(from: LanguageTag, aug: LanguageTag) -> Self {
        BtRoute {
            kind: RouteKind::Direct,
            from,
            aug,
            pivot: None,
        }
    }

    /// Languages visited, starting with `from`.
    pub fn hops(&self) -> Vec<LanguageTag> {
        match self.pivot {
            Some(p) => vec![self.from, p, self.aug],
            None => vec![self.from, self.aug],
        }
    }
}

/// Uniform choice among `languages` other than `tgt`.
pub fn pick_aug_language<R: Rng>(rng: &mut R, languages: &[LanguageTag], tgt: LanguageTag) -> Result<LanguageTag> {
    let others: Vec<LanguageTag> = languages.iter().copied().filter(|&l| l != tgt).collect();
    if others.is_empty() {
        return Err(Error::Config("back-translation needs at least two languages".into()));
    }
    Ok(others[rng.gen_range(0..others.len())])
}

/// Direct if `tgt → aug` is supervised, otherwise through the hub.
pub fn plan_route(tgt: LanguageTag, aug: LanguageTag, graph: &DirectionGraph) -> Result<BtRoute> {
    if tgt == aug {
        return Err(Error::Config(format!(
            "cannot back-translate language {} into itself",
            tgt.0
        )));
    }
    if graph.contains(tgt, aug) {
        return Ok(BtRoute::direct(tgt, aug));
    }
    let hub = graph.hub();
    if hub != tgt && hub != aug && graph.contains(tgt, hub) && graph.contains(hub, aug) {
        return Ok(BtRoute {
            kind: RouteKind::Pivot,
            from: tgt,
            aug,
            pivot: Some(hub),
        });
    }
    Err(Error::Unroutable {
        from: format!("language {}", tgt.0),
        to: format!("language {}", aug.0),
    })
}

/// Anything that can translate a sentence between two tagged languages.
pub trait Translate {
    fn translate(&self, x: &[usize], src: LanguageTag, tgt: LanguageTag) -> Result<Vec<usize>>;
}

/// Inference with a DAG model: forward pass, decode, post-process.
pub struct ModelTranslator<'a> {
    pub model: &'a DatModel,
    pub decode: DecodeConfig,
    pub post: Postprocess,
}

impl<'a> ModelTranslator<'a> {
    pub fn new(model: &'a DatModel, method: DecodeMethod, first_word: usize) -> Self {
        ModelTranslator {
            model,
            decode: DecodeConfig {
                method,
                ..DecodeConfig::default()
            },
            post: Postprocess {
                collapse_repeats: true,
                first_word,
            },
        }
    }
}

impl Translate for ModelTranslator<'_> {
    fn translate(&self, x: &[usize], _src: LanguageTag, tgt: LanguageTag) -> Result<Vec<usize>> {
        let dag = self.model.predict(x, tgt)?;
        decode(&dag, &self.decode, None, &self.post)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct BackTranslation {
    pub source: Vec<usize>,
    /// The decode came back empty and `source` is a copy of `y`.
    pub fallback: bool,
    pub decode_calls: usize,
}

/// Translate `y` (without EOS) along `route`. An empty result falls back to
/// copying `y`. The output is cut to `max_len` tokens.
pub fn back_translate(
    translator: &dyn Translate,
    y: &[usize],
    route: &BtRoute,
    max_len: usize,
) -> Result<BackTranslation> {
    let hops = route.hops();
    let mut current = y.to_vec();
    let mut calls = 0;
    for pair in hops.windows(2) {
        if current.is_empty() {
            break;
        }
        current = translator.translate(&current, pair[0], pair[1])?;
        current.truncate(max_len);
        calls += 1;
    }
    if current.is_empty() {
        log::debug!(
            "empty back-translation into language {}; copying the target",
            route.aug.0
        );
        let mut copy = y.to_vec();
        copy.truncate(max_len);
        return Ok(BackTranslation {
            source: copy,
            fallback: true,
            decode_calls: calls,
        });
    }
    Ok(BackTranslation {
        source: current,
        fallback: false,
        decode_calls: calls,
    })
}

/// Synthetic samples for one batch plus counters.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Augmentation {
    pub samples: Vec<Sample>,
    pub fallbacks: usize,
    pub pivoted: usize,
    pub decode_calls: usize,
}

/// One synthetic sample per real sample, following `policy.mode`.
pub fn augment_batch<R: Rng>(
    rng: &mut R,
    batch: &[&Sample],
    translator: &dyn Translate,
    policy: &BtPolicy,
    graph: &DirectionGraph,
    max_len: usize,
) -> Result<Augmentation> {
    if policy.mode == BtMode::Off {
        return Err(Error::Config("augmentation requested with back-translation off".into()));
    }
    let languages: Vec<LanguageTag> = (0..graph.languages() as u16).map(LanguageTag).collect();
    let mut out = Augmentation::default();
    for s in batch {
        let route = match policy.mode {
            BtMode::PivotBt => plan_route(s.tgt, pick_aug_language(rng, &languages, s.tgt)?, graph)?,
            BtMode::RandNoPivot => BtRoute::direct(s.tgt, pick_aug_language(rng, &languages, s.tgt)?),
            BtMode::SrcNoPivot => BtRoute::direct(s.tgt, s.src),
            BtMode::Off => unreachable!("checked above"),
        };
        let bt = back_translate(translator, s.target_words(), &route, max_len)?;
        out.fallbacks += bt.fallback as usize;
        out.pivoted += (route.kind == RouteKind::Pivot) as usize;
        out.decode_calls += bt.decode_calls;
        out.samples
            .push(Sample::new(bt.source, route.aug, s.target_words().to_vec(), s.tgt)?);
    }
    Ok(out)
}

/// `L_real + weight · L_bt`.
pub fn combined_loss(real: Real, bt: Real, weight: Real) -> Real {
    real + weight * bt
}
