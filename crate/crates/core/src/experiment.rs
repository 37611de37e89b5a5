//! Whole runs on a corpus: training into an output directory, evaluation
//! with every report section, latency against the autoregressive baseline,
//! and the back-translation ablation.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::data::{Corpus, Sample};
use crate::decoding::{DecodeConfig, DecodeMethod, NgramLM, Postprocess};
use crate::error::{Error, Result};
use crate::eval::{
    bench_interleaved, bench_latency, bleu, preservation_ratio, source_counts, train_language_models,
    translate_samples, Decoder, DirectionScore, EvalReport, LatencyReport,
};
use crate::model::checkpoint::Checkpoint;
use crate::model::{AtModel, DatModel, LanguageTag, ModelConfig};
use crate::pivotbt::{BtMode, BtPolicy};
use crate::tensor::Real;
use crate::train::{TrainConfig, TrainOutcome, TrainState, Trainer, STATE_FILE};

/// Averaged model written at the end of training.
pub const FINAL_MODEL: &str = "model.bin";

pub fn method_name(method: DecodeMethod) -> &'static str {
    match method {
        DecodeMethod::Lookahead => "lookahead",
        DecodeMethod::NgramBeam => "ngram-beam",
    }
}

fn finish_run(
    trainer: Trainer<'_>,
    records: Vec<crate::train::StepRecord>,
    out: Option<&Path>,
) -> Result<TrainOutcome> {
    let step = trainer.step();
    let (model, best) = trainer.finish()?;
    if let Some(dir) = out {
        let meta = serde_json::json!({
            "step": step,
            "averaged_steps": best.iter().map(|b| b.0).collect::<Vec<_>>(),
        });
        Checkpoint::from_dat(&model, meta).save(&dir.join(FINAL_MODEL))?;
    }
    Ok(TrainOutcome { model, records, best })
}

/// Train from scratch. With `out`, checkpoints, metrics, the resume state
/// and the final averaged model go there. Stopping at `until` before the
/// last update returns `None`.
pub fn train_run(
    corpus: &Corpus,
    model: &ModelConfig,
    train: &TrainConfig,
    policy: &BtPolicy,
    out: Option<&Path>,
    until: Option<u64>,
) -> Result<Option<TrainOutcome>> {
    let model = DatModel::new(ModelConfig {
        vocab_size: corpus.vocab.len(),
        ..model.clone()
    })?;
    let t = Trainer::new(model, corpus, train.clone(), policy.clone())?;
    continue_run(t, out, until)
}

/// Continue the run whose state file is in `dir`.
pub fn resume_run(corpus: &Corpus, dir: &Path, until: Option<u64>) -> Result<Option<TrainOutcome>> {
    let state = TrainState::load(&dir.join(STATE_FILE))?;
    continue_run(Trainer::resume(state, corpus)?, Some(dir), until)
}

fn continue_run(mut t: Trainer<'_>, out: Option<&Path>, until: Option<u64>) -> Result<Option<TrainOutcome>> {
    let records = t.run(until, out)?;
    if t.step() < t.config().total_updates {
        return Ok(None);
    }
    finish_run(t, records, out).map(Some)
}

/// LMs are only needed (and only trained) for n-gram beam search.
pub fn language_models(corpus: &Corpus, decode: &DecodeConfig) -> Result<BTreeMap<LanguageTag, NgramLM>> {
    match decode.method {
        DecodeMethod::NgramBeam => train_language_models(&corpus.train, corpus.vocab.len(), decode),
        DecodeMethod::Lookahead => Ok(BTreeMap::new()),
    }
}

/// Test-split BLEU for every direction, plus the preservation curve over
/// all test sentences. `limit` caps sentences per direction.
pub fn evaluate(
    model: &DatModel,
    corpus: &Corpus,
    decode: &DecodeConfig,
    limit: Option<usize>,
    buckets: usize,
) -> Result<EvalReport> {
    decode.validate()?;
    let lms = language_models(corpus, decode)?;
    let post = Postprocess {
        collapse_repeats: decode.collapse_repeats,
        first_word: corpus.vocab.first_word(),
    };
    let mut directions = Vec::new();
    let mut all_samples: Vec<&Sample> = Vec::new();
    let mut all_hyps = Vec::new();
    for (&d, samples) in &corpus.test {
        let take = limit.unwrap_or(samples.len()).min(samples.len());
        if take == 0 {
            continue;
        }
        let batch: Vec<&Sample> = samples[..take].iter().collect();
        let hyps = translate_samples(model, &batch, decode, &lms, &post)?;
        let refs: Vec<Vec<usize>> = batch.iter().map(|s| s.target_words().to_vec()).collect();
        directions.push(DirectionScore {
            direction: format!(
                "{}-{}",
                corpus.vocab.language_name(d.src),
                corpus.vocab.language_name(d.tgt)
            ),
            supervised: corpus.graph.contains(d.src, d.tgt),
            sentences: take,
            bleu: bleu(&hyps, &refs)?,
        });
        all_samples.extend(batch);
        all_hyps.extend(hyps);
    }
    if directions.is_empty() {
        return Err(Error::Empty("test split"));
    }
    let mut report = EvalReport::new(method_name(decode.method), directions);
    let counts = source_counts(&corpus.train);
    report.preservation = Some(preservation_ratio(
        &all_samples,
        &all_hyps,
        &counts,
        |w, l| corpus.oracle.lexicon(w, l),
        buckets,
    )?);
    Ok(report)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BenchConfig {
    /// Sentences decoded at a time. Only 1 is accepted.
    pub batch_size: usize,
    pub sentences: usize,
    pub warmup: usize,
    /// Only test sentences with at least this many source tokens are timed.
    pub min_source_len: usize,
}

impl Default for BenchConfig {
    fn default() -> Self {
        BenchConfig {
            batch_size: 1,
            sentences: 50,
            warmup: 5,
            min_source_len: 0,
        }
    }
}

impl BenchConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size != 1 {
            return Err(Error::Config(format!(
                "latency is measured one sentence at a time; batch_size must be 1, got {}",
                self.batch_size
            )));
        }
        if self.sentences == 0 {
            return Err(Error::Config("sentences must be positive".into()));
        }
        Ok(())
    }
}

/// The first `cfg.sentences` long-enough test sentences, taken round-robin
/// over directions.
pub fn bench_samples<'c>(corpus: &'c Corpus, cfg: &BenchConfig) -> Result<Vec<&'c Sample>> {
    let pools: Vec<Vec<&Sample>> = corpus
        .test
        .values()
        .map(|v| v.iter().filter(|s| s.x.len() >= cfg.min_source_len).collect())
        .collect();
    let longest = pools.iter().map(Vec::len).max().unwrap_or(0);
    let picked: Vec<&Sample> = (0..longest)
        .flat_map(|i| pools.iter().filter_map(move |p| p.get(i).copied()))
        .take(cfg.sentences)
        .collect();
    if picked.is_empty() {
        return Err(Error::Empty("benchmark sentences (check min_source_len)"));
    }
    Ok(picked)
}

/// Time `model` with `decode`, and the baseline when given, on the same
/// sentences.
pub fn bench(
    model: &DatModel,
    baseline: Option<&AtModel>,
    corpus: &Corpus,
    decode: &DecodeConfig,
    cfg: &BenchConfig,
) -> Result<LatencyReport> {
    cfg.validate()?;
    decode.validate()?;
    let samples = bench_samples(corpus, cfg)?;
    let lms = language_models(corpus, decode)?;
    let dat = Decoder::Dat {
        model,
        cfg: decode.clone(),
        lms: &lms,
        post: Postprocess {
            collapse_repeats: decode.collapse_repeats,
            first_word: corpus.vocab.first_word(),
        },
    };
    match baseline {
        Some(at) => {
            let mut stats = bench_interleaved(&[&dat, &Decoder::AtGreedy { model: at }], &samples, cfg.warmup)?;
            let base = stats.pop();
            Ok(LatencyReport::new(stats.swap_remove(0), base))
        }
        None => Ok(LatencyReport::new(bench_latency(&dat, &samples, cfg.warmup)?, None)),
    }
}

/// Back-translation variants in table order.
pub const ABLATION_MODES: [BtMode; 4] = [BtMode::PivotBt, BtMode::RandNoPivot, BtMode::SrcNoPivot, BtMode::Off];

pub fn variant_name(mode: BtMode) -> &'static str {
    match mode {
        BtMode::PivotBt => "PivotBT",
        BtMode::RandNoPivot => "rand-lang & w/o pivot",
        BtMode::SrcNoPivot => "src-lang & w/o pivot",
        BtMode::Off => "w/o BT",
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AblationRow {
    pub variant: String,
    pub mode: BtMode,
    pub supervised_bleu: Real,
    pub zero_shot_bleu: Real,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AblationTable {
    pub rows: Vec<AblationRow>,
}

impl AblationTable {
    pub fn to_markdown(&self) -> String {
        let mut s = String::from("| variant | supervised | zero-shot |\n|---|---|---|\n");
        for r in &self.rows {
            s.push_str(&format!(
                "| {} | {:.2} | {:.2} |\n",
                r.variant, r.supervised_bleu, r.zero_shot_bleu
            ));
        }
        s
    }
}

/// Train one model per back-translation mode (everything else shared) and
/// score each on the test split. With `out`, variant `m` trains in
/// `out/<m>` and writes its report there.
pub fn ablate(
    corpus: &Corpus,
    model: &ModelConfig,
    train: &TrainConfig,
    policy: &BtPolicy,
    decode: &DecodeConfig,
    modes: &[BtMode],
    limit: Option<usize>,
    out: Option<&Path>,
) -> Result<AblationTable> {
    if corpus.zero_shot_directions().is_empty() {
        return Err(Error::Config("the corpus has no zero-shot test directions".into()));
    }
    let mut rows = Vec::with_capacity(modes.len());
    for &mode in modes {
        let policy = BtPolicy { mode, ..policy.clone() };
        let dir = out.map(|o| o.join(mode_dir(mode)));
        let outcome =
            train_run(corpus, model, train, &policy, dir.as_deref(), None)?.ok_or(Error::Empty("training run"))?;
        let report = evaluate(&outcome.model, corpus, decode, limit, 10)?;
        if let Some(d) = &dir {
            fs::write(d.join("report.json"), report.to_json()?).map_err(|e| Error::io(d, e))?;
        }
        log::info!(
            "{}: supervised {:.2}, zero-shot {:.2}",
            variant_name(mode),
            report.supervised_bleu.unwrap_or(0.0),
            report.zero_shot_bleu.unwrap_or(0.0)
        );
        rows.push(AblationRow {
            variant: variant_name(mode).into(),
            mode,
            supervised_bleu: report.supervised_bleu.unwrap_or(0.0),
            zero_shot_bleu: report.zero_shot_bleu.unwrap_or(0.0),
        });
    }
    Ok(AblationTable { rows })
}

fn mode_dir(mode: BtMode) -> &'static str {
    match mode {
        BtMode::PivotBt => "pivotbt",
        BtMode::RandNoPivot => "rand-no-pivot",
        BtMode::SrcNoPivot => "src-no-pivot",
        BtMode::Off => "off",
    }
}

#[cfg(test)]
mod tests;
