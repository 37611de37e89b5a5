use std::collections::BTreeMap;
use std::fs::{self, File, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::state::{TrainState, STATE_FILE};
use super::{average_params, lr_at, Adam, TrainConfig};
use crate::dag::dag_nll_tensors;
use crate::data::{sample_batch, Corpus, Sample};
use crate::decoding::{DecodeConfig, DecodeMethod};
use crate::error::{Error, Result};
use crate::eval::score_split;
use crate::model::checkpoint::Checkpoint;
use crate::model::{AtModel, DatModel};
use crate::params::ParamStore;
use crate::pivotbt::{augment_batch, combined_loss, BtMode, BtPolicy, ModelTranslator};
use crate::tensor::{Graph, Real};

pub const METRICS_FILE: &str = "metrics.jsonl";

/// Independent random streams per update.
const BATCH_STREAM: u64 = 0;
const BT_STREAM: u64 = 1 << 48;

fn step_rng(seed: u64, stream: u64, step: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream | step);
    rng
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BtCounters {
    #[serde(rename = "l_bt")]
    pub loss: Real,
    #[serde(rename = "bt_samples")]
    pub samples: usize,
    #[serde(rename = "bt_fallbacks")]
    pub fallbacks: usize,
    #[serde(rename = "bt_pivoted")]
    pub pivoted: usize,
    #[serde(rename = "bt_decode_calls")]
    pub decode_calls: usize,
}

/// One line of `metrics.jsonl`. Back-translation fields are absent when
/// back-translation is off; `valid_bleu` appears on validation steps.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub step: u64,
    pub lr: Real,
    /// `l_real + λ · l_bt`.
    pub loss: Real,
    /// Mean over sentences of the per-token negative log-likelihood.
    pub l_real: Real,
    pub sentences: usize,
    pub tokens: usize,
    /// Sentences left out because they do not fit `max_positions`.
    pub skipped: usize,
    #[serde(flatten)]
    pub bt: Option<BtCounters>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub valid_bleu: Option<Real>,
}

/// A validated snapshot kept for the final average.
#[derive(Clone, Debug, PartialEq)]
pub struct BestEntry {
    pub step: u64,
    pub bleu: Real,
    pub params: ParamStore,
}

#[derive(Debug)]
pub struct TrainOutcome {
    /// Mean of the best validated snapshots (or the last weights if no
    /// validation ran).
    pub model: DatModel,
    pub records: Vec<StepRecord>,
    /// (step, validation BLEU) of the averaged snapshots, best first.
    pub best: Vec<(u64, Real)>,
}

struct Scored {
    mean_loss: Real,
    sentences: usize,
}

/// Training loop state. Parameters have a single writer: everything that
/// reads the model (back-translation, loss) finishes before the update.
pub struct Trainer<'c> {
    corpus: &'c Corpus,
    cfg: TrainConfig,
    policy: BtPolicy,
    model: DatModel,
    adam: Adam,
    step: u64,
    best: Vec<BestEntry>,
}

impl<'c> Trainer<'c> {
    pub fn new(model: DatModel, corpus: &'c Corpus, cfg: TrainConfig, policy: BtPolicy) -> Result<Self> {
        cfg.validate()?;
        policy.validate()?;
        if model.config().vocab_size != corpus.vocab.len() {
            return Err(Error::Config(format!(
                "model vocabulary {} does not match the corpus vocabulary {}",
                model.config().vocab_size,
                corpus.vocab.len()
            )));
        }
        let adam = Adam::new(model.params());
        Ok(Trainer {
            corpus,
            cfg,
            policy,
            model,
            adam,
            step: 0,
            best: Vec::new(),
        })
    }

    /// Continue from a state file written by [`Trainer::run`].
    pub fn resume(state: TrainState, corpus: &'c Corpus) -> Result<Self> {
        let model = DatModel::from_params(state.model, state.params)?;
        let mut t = Trainer::new(model, corpus, state.train, state.policy)?;
        t.adam = state.adam;
        t.step = state.step;
        t.best = state.best;
        Ok(t)
    }

    pub fn state(&self) -> TrainState {
        TrainState {
            step: self.step,
            model: self.model.config().clone(),
            train: self.cfg.clone(),
            policy: self.policy.clone(),
            params: self.model.params().clone(),
            adam: self.adam.clone(),
            best: self.best.clone(),
        }
    }

    pub fn step(&self) -> u64 {
        self.step
    }

    pub fn model(&self) -> &DatModel {
        &self.model
    }

    pub fn config(&self) -> &TrainConfig {
        &self.cfg
    }

    fn fits(&self, s: &Sample) -> bool {
        let max = self.model.config().max_positions;
        s.x.len() < max && s.y.len() <= max
    }

    /// Forward and backward over `samples`, adding `weight / n` times each
    /// sentence's per-token gradient into `grads`.
    fn accumulate(
        &self,
        samples: &[&Sample],
        rng: &mut ChaCha8Rng,
        weight: Real,
        backprop: bool,
        grads: &mut ParamStore,
    ) -> Result<Scored> {
        let n = samples.len();
        let mut total = 0.0;
        for (i, s) in samples.iter().enumerate() {
            let mut g = Graph::new();
            let enc = self.model.encode_train(&mut g, &s.x, s.tgt, rng)?;
            let steps = self.model.steps_for(s.x.len()).max(s.y.len());
            let dag = self.model.decode_dag_train(&mut g, enc, steps, rng)?;
            let nll = dag_nll_tensors(&mut g, &dag, &s.y)?;
            let per_token = g.scalar(nll) / s.y.len() as Real;
            if !per_token.is_finite() {
                return Err(self.non_finite(samples, i));
            }
            total += per_token;
            if backprop {
                let scaled = g.scale(nll, weight / (n as Real * s.y.len() as Real));
                g.backward(scaled)?;
                for (id, gr) in g.param_grads() {
                    grads.value_mut(id).iter_mut().zip(gr).for_each(|(a, b)| *a += b);
                }
            }
        }
        Ok(Scored {
            mean_loss: total / n as Real,
            sentences: n,
        })
    }

    fn non_finite(&self, samples: &[&Sample], bad: usize) -> Error {
        let s = samples[bad];
        let d = s.direction();
        let vocab = &self.corpus.vocab;
        // position within its direction of the training split; synthetic
        // samples have none
        let ids = self
            .corpus
            .train
            .get(&d)
            .and_then(|v| v.iter().position(|u| std::ptr::eq(u, s)))
            .into_iter()
            .collect();
        Error::NonFiniteLoss {
            step: self.step + 1,
            direction: format!("{}-{}", vocab.language_name(d.src), vocab.language_name(d.tgt)),
            sentences: ids,
        }
    }

    fn bt_active(&self, step: u64) -> bool {
        self.policy.mode != BtMode::Off && step >= self.policy.start_step(self.cfg.total_updates as usize) as u64
    }

    /// One optimiser update.
    pub fn train_step(&mut self) -> Result<StepRecord> {
        let step = self.step + 1;
        let mut rng = step_rng(self.cfg.seed, BATCH_STREAM, step);
        let drawn = sample_batch(
            &mut rng,
            &self.corpus.train,
            self.cfg.token_budget,
            self.cfg.temperature,
        )?;
        let tokens = drawn.iter().map(|s| s.tokens()).sum();
        let (batch, skipped): (Vec<&Sample>, Vec<&Sample>) = drawn.into_iter().partition(|s| self.fits(s));
        if batch.is_empty() {
            return Err(Error::Empty("batch after skipping sentences longer than max_positions"));
        }
        let mut grads = self.model.params().zeros_like();
        let real = self.accumulate(&batch, &mut rng, 1.0, true, &mut grads)?;

        let bt = if self.bt_active(step) {
            let mut bt_rng = step_rng(self.cfg.seed, BT_STREAM, step);
            let translator = ModelTranslator::new(&self.model, self.policy.decode, self.corpus.vocab.first_word());
            let max_len = self.model.config().max_positions - 1;
            let aug = augment_batch(
                &mut bt_rng,
                &batch,
                &translator,
                &self.policy,
                &self.corpus.graph,
                max_len,
            )?;
            let synthetic: Vec<&Sample> = aug.samples.iter().filter(|s| self.fits(s)).collect();
            let backprop = self.policy.weight > 0.0;
            let scored = if synthetic.is_empty() {
                Scored {
                    mean_loss: 0.0,
                    sentences: 0,
                }
            } else {
                self.accumulate(&synthetic, &mut bt_rng, self.policy.weight, backprop, &mut grads)?
            };
            Some(BtCounters {
                loss: scored.mean_loss,
                samples: scored.sentences,
                fallbacks: aug.fallbacks,
                pivoted: aug.pivoted,
                decode_calls: aug.decode_calls,
            })
        } else {
            None
        };

        if self.cfg.clip_norm > 0.0 {
            clip_grad_norm(&mut grads, self.cfg.clip_norm);
        }
        let lr = lr_at(step, &self.cfg);
        self.adam.update(self.model.params_mut(), &grads, lr, &self.cfg);
        self.step = step;
        let bt_loss = bt.as_ref().map_or(0.0, |b| b.loss);
        let weight = if bt.is_some() { self.policy.weight } else { 0.0 };
        Ok(StepRecord {
            step,
            lr,
            loss: combined_loss(real.mean_loss, bt_loss, weight),
            l_real: real.mean_loss,
            sentences: real.sentences,
            tokens,
            skipped: skipped.len(),
            bt,
            valid_bleu: None,
        })
    }

    /// Mean lookahead BLEU over the supervised validation directions.
    pub fn validate(&self) -> Result<Real> {
        let cfg = DecodeConfig {
            method: DecodeMethod::Lookahead,
            ..DecodeConfig::default()
        };
        let graph = &self.corpus.graph;
        let supervised: BTreeMap<_, _> = self
            .corpus
            .valid
            .iter()
            .filter(|(d, _)| graph.contains(d.src, d.tgt))
            .map(|(d, v)| (*d, v.clone()))
            .collect();
        let limit = (self.cfg.valid_limit > 0).then_some(self.cfg.valid_limit);
        let scores = score_split(
            &self.model,
            &supervised,
            &self.corpus.vocab,
            |_| true,
            &cfg,
            &BTreeMap::new(),
            limit,
        )?;
        if scores.is_empty() {
            return Err(Error::Empty("validation set"));
        }
        Ok(scores.iter().map(|s| s.bleu).sum::<Real>() / scores.len() as Real)
    }

    fn keep(&mut self, bleu: Real) {
        self.best.push(BestEntry {
            step: self.step,
            bleu,
            params: self.model.params().clone(),
        });
        // higher BLEU first, later step on ties
        self.best
            .sort_by(|a, b| b.bleu.total_cmp(&a.bleu).then(b.step.cmp(&a.step)));
        self.best.truncate(self.cfg.keep_best);
    }

    /// Train until `until` updates (at most `total_updates`). With `out`,
    /// metrics are appended to `metrics.jsonl`, a checkpoint is written at
    /// every validation, and the resume state is saved at every validation
    /// and when stopping.
    pub fn run(&mut self, until: Option<u64>, out: Option<&Path>) -> Result<Vec<StepRecord>> {
        let end = until.unwrap_or(self.cfg.total_updates).min(self.cfg.total_updates);
        let mut metrics = match out {
            Some(dir) => Some(open_metrics(dir, self.step)?),
            None => None,
        };
        let has_valid = self
            .corpus
            .valid
            .iter()
            .any(|(d, v)| !v.is_empty() && self.corpus.graph.contains(d.src, d.tgt));
        let mut records = Vec::new();
        while self.step < end {
            let mut rec = self.train_step()?;
            let step = rec.step;
            let validate = has_valid && (step % self.cfg.checkpoint_interval == 0 || step == self.cfg.total_updates);
            if validate {
                let bleu = self.validate()?;
                rec.valid_bleu = Some(bleu);
                self.keep(bleu);
                log::info!("step {step}: loss {:.4}, valid BLEU {bleu:.2}", rec.loss);
                if let Some(dir) = out {
                    let meta = serde_json::json!({ "step": step, "valid_bleu": bleu });
                    Checkpoint::from_dat(&self.model, meta).save(&dir.join(format!("checkpoint_{step:06}.bin")))?;
                }
            }
            if validate || step % self.cfg.log_interval == 0 || step == self.cfg.total_updates {
                if let Some(f) = metrics.as_mut() {
                    let line = serde_json::to_string(&rec)?;
                    writeln!(f, "{line}").map_err(|e| Error::io(METRICS_FILE, e))?;
                }
                log::debug!("step {step}: loss {:.4}, lr {:.2e}", rec.loss, rec.lr);
                records.push(rec);
            }
            if let (Some(dir), true) = (out, validate || step == end) {
                self.state().save(&dir.join(STATE_FILE))?;
            }
        }
        Ok(records)
    }

    /// Average of the kept snapshots, or the current weights if none.
    pub fn finish(self) -> Result<(DatModel, Vec<(u64, Real)>)> {
        if self.best.is_empty() {
            return Ok((self.model, Vec::new()));
        }
        let params = average_params(&self.best.iter().map(|b| &b.params).collect::<Vec<_>>())?;
        let summary = self.best.iter().map(|b| (b.step, b.bleu)).collect();
        Ok((DatModel::from_params(self.model.config().clone(), params)?, summary))
    }
}

fn clip_grad_norm(grads: &mut ParamStore, max_norm: Real) {
    let ids: Vec<_> = grads.ids().collect();
    let norm = ids
        .iter()
        .flat_map(|&id| grads.value(id).iter())
        .map(|g| g * g)
        .sum::<Real>()
        .sqrt();
    if norm > max_norm {
        let c = max_norm / norm;
        for id in ids {
            grads.value_mut(id).iter_mut().for_each(|g| *g *= c);
        }
    }
}

/// Open `metrics.jsonl` for appending, first dropping records past `step`
/// (left over from a run that went further than its last saved state).
fn open_metrics(dir: &Path, step: u64) -> Result<File> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let path = dir.join(METRICS_FILE);
    if path.exists() {
        let f = File::open(&path).map_err(|e| Error::io(&path, e))?;
        let mut kept = String::new();
        for line in BufReader::new(f).lines() {
            let line = line.map_err(|e| Error::io(&path, e))?;
            let rec: StepRecord = serde_json::from_str(&line)?;
            if rec.step <= step {
                kept.push_str(&line);
                kept.push('\n');
            }
        }
        fs::write(&path, kept).map_err(|e| Error::io(&path, e))?;
    }
    OpenOptions::new()
        .create(true)
        .append(true)
        .open(&path)
        .map_err(|e| Error::io(&path, e))
}

/// Train from scratch to `cfg.total_updates` and average the best snapshots.
pub fn train(
    model: DatModel,
    corpus: &Corpus,
    policy: BtPolicy,
    cfg: TrainConfig,
    out: Option<&Path>,
) -> Result<TrainOutcome> {
    let mut t = Trainer::new(model, corpus, cfg, policy)?;
    let records = t.run(None, out)?;
    let (model, best) = t.finish()?;
    Ok(TrainOutcome { model, records, best })
}

/// Teacher-forced training of the autoregressive baseline with the same
/// batching, schedule and optimiser; no validation or back-translation.
/// Returns the mean per-token loss of every update.
pub fn train_baseline(mut model: AtModel, corpus: &Corpus, cfg: &TrainConfig) -> Result<(AtModel, Vec<Real>)> {
    cfg.validate()?;
    let mut adam = Adam::new(model.params());
    let max = model.config().max_positions;
    let mut losses = Vec::with_capacity(cfg.total_updates as usize);
    for step in 1..=cfg.total_updates {
        let mut rng = step_rng(cfg.seed, BATCH_STREAM, step);
        let drawn = sample_batch(&mut rng, &corpus.train, cfg.token_budget, cfg.temperature)?;
        let batch: Vec<&Sample> = drawn
            .into_iter()
            .filter(|s| s.x.len() < max && s.y.len() < max)
            .collect();
        if batch.is_empty() {
            return Err(Error::Empty("batch after skipping sentences longer than max_positions"));
        }
        let mut grads = model.params().zeros_like();
        let mut total = 0.0;
        for s in &batch {
            let mut g = Graph::new();
            let ll = model.teacher_forced_train(&mut g, &s.x, s.tgt, &s.y, &mut rng)?;
            let per_token = -g.scalar(ll) / s.y.len() as Real;
            if !per_token.is_finite() {
                let d = s.direction();
                return Err(Error::NonFiniteLoss {
                    step,
                    direction: format!(
                        "{}-{}",
                        corpus.vocab.language_name(d.src),
                        corpus.vocab.language_name(d.tgt)
                    ),
                    sentences: Vec::new(),
                });
            }
            total += per_token;
            let scaled = g.scale(ll, -1.0 / (batch.len() as Real * s.y.len() as Real));
            g.backward(scaled)?;
            for (id, gr) in g.param_grads() {
                grads.value_mut(id).iter_mut().zip(gr).for_each(|(a, b)| *a += b);
            }
        }
        if cfg.clip_norm > 0.0 {
            clip_grad_norm(&mut grads, cfg.clip_norm);
        }
        adam.update(model.params_mut(), &grads, lr_at(step, cfg), cfg);
        losses.push(total / batch.len() as Real);
    }
    Ok((model, losses))
}
