use std::collections::BTreeMap;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::data::Sample;
use crate::decoding::{decode, DecodeConfig, NgramLM, Postprocess};
use crate::error::{Error, Result};
use crate::model::{AtModel, DatModel, LanguageTag};
use crate::tensor::Real;

/// Wall-clock milliseconds per sentence at batch size 1.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LatencyStats {
    pub sentences: usize,
    pub mean_ms: Real,
    pub p50_ms: Real,
    pub p95_ms: Real,
}

impl LatencyStats {
    pub fn from_times(ms: &[Real]) -> Result<Self> {
        if ms.is_empty() {
            return Err(Error::Empty("latency sample"));
        }
        let mut sorted = ms.to_vec();
        sorted.sort_by(Real::total_cmp);
        // nearest rank
        let pct = |p: Real| sorted[((p * sorted.len() as Real).ceil() as usize).clamp(1, sorted.len()) - 1];
        Ok(LatencyStats {
            sentences: ms.len(),
            mean_ms: ms.iter().sum::<Real>() / ms.len() as Real,
            p50_ms: pct(0.5),
            p95_ms: pct(0.95),
        })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LatencyReport {
    pub decoder: LatencyStats,
    pub baseline: Option<LatencyStats>,
    /// Baseline mean over decoder mean.
    pub speedup: Option<Real>,
}

impl LatencyReport {
    pub fn new(decoder: LatencyStats, baseline: Option<LatencyStats>) -> Self {
        let speedup = baseline.as_ref().map(|b| b.mean_ms / decoder.mean_ms);
        LatencyReport {
            decoder,
            baseline,
            speedup,
        }
    }
}

/// Run `f` on the first `warmup` samples untimed, then time it on every
/// sample, one at a time.
pub fn measure_latency<F>(samples: &[&Sample], warmup: usize, mut f: F) -> Result<LatencyStats>
where
    F: FnMut(&Sample) -> Result<()>,
{
    for s in samples.iter().cycle().take(warmup.min(samples.len())) {
        f(s)?;
    }
    let mut times = Vec::with_capacity(samples.len());
    for s in samples {
        let t = Instant::now();
        f(s)?;
        times.push(t.elapsed().as_secs_f64() * 1e3);
    }
    LatencyStats::from_times(&times)
}

/// What to time.
pub enum Decoder<'a> {
    /// Forward pass plus lattice decoding.
    Dat {
        model: &'a DatModel,
        cfg: DecodeConfig,
        lms: &'a BTreeMap<LanguageTag, NgramLM>,
        post: Postprocess,
    },
    /// Greedy left-to-right decoding of exactly as many tokens as the
    /// reference (target words plus EOS), so output length does not depend
    /// on how well the model is trained.
    AtGreedy { model: &'a AtModel },
}

impl Decoder<'_> {
    pub fn run(&self, s: &Sample) -> Result<Vec<usize>> {
        match self {
            Decoder::Dat { model, cfg, lms, post } => {
                let dag = model.predict(&s.x, s.tgt)?;
                decode(&dag, cfg, lms.get(&s.tgt), post)
            }
            Decoder::AtGreedy { model } => model.greedy(&s.x, s.tgt, s.y.len(), false),
        }
    }
}

pub fn bench_latency(decoder: &Decoder<'_>, samples: &[&Sample], warmup: usize) -> Result<LatencyStats> {
    measure_latency(samples, warmup, |s| decoder.run(s).map(drop))
}

/// Time several decoders on the same samples, taking turns on each sample so
/// that drift in machine load hits all of them alike. Stats come back in
/// `decoders` order.
pub fn bench_interleaved(decoders: &[&Decoder<'_>], samples: &[&Sample], warmup: usize) -> Result<Vec<LatencyStats>> {
    if samples.is_empty() {
        return Err(Error::Empty("latency sample"));
    }
    for d in decoders {
        for s in samples.iter().cycle().take(warmup.min(samples.len())) {
            d.run(s)?;
        }
    }
    let mut times = vec![Vec::with_capacity(samples.len()); decoders.len()];
    for s in samples {
        for (d, t) in decoders.iter().zip(&mut times) {
            let start = Instant::now();
            d.run(s)?;
            t.push(start.elapsed().as_secs_f64() * 1e3);
        }
    }
    times.iter().map(|t| LatencyStats::from_times(t)).collect()
}
