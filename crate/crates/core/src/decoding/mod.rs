//! Turning a [`DagOutput`] into a sentence.
//!
//! [`lookahead`] walks the lattice greedily, picking the next (step, word)
//! pair by link + word score. [`ngram_beam_search`] keeps several partial
//! walks, then reranks the finished ones with a length-normalised lattice
//! score plus an n-gram LM score. Ties are broken towards the lower step,
//! then the lower token id.

mod ngram;

use serde::{Deserialize, Serialize};

pub use ngram::{NgramLM, DEFAULT_SMOOTHING};

use crate::error::{Error, Result};
use crate::model::{DagOutput, EOS, FIRST_TAG};
use crate::tensor::Real;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DecodeMethod {
    Lookahead,
    NgramBeam,
}

impl std::str::FromStr for DecodeMethod {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "lookahead" => Ok(DecodeMethod::Lookahead),
            "ngram-beam" => Ok(DecodeMethod::NgramBeam),
            other => Err(Error::Config(format!(
                "unknown decoder `{other}` (expected lookahead or ngram-beam)"
            ))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DecodeConfig {
    pub method: DecodeMethod,
    pub beam_width: usize,
    pub lm_order: usize,
    pub lm_weight: Real,
    pub len_alpha: Real,
    pub lm_smoothing: Real,
    /// Collapse runs of identical adjacent tokens in the output.
    pub collapse_repeats: bool,
}

impl Default for DecodeConfig {
    fn default() -> Self {
        DecodeConfig {
            method: DecodeMethod::Lookahead,
            beam_width: 8,
            lm_order: 3,
            lm_weight: 0.1,
            len_alpha: 0.6,
            lm_smoothing: DEFAULT_SMOOTHING,
            collapse_repeats: true,
        }
    }
}

impl DecodeConfig {
    pub fn validate(&self) -> Result<()> {
        if self.beam_width == 0 {
            return Err(Error::Config("beam_width must be at least 1".into()));
        }
        if self.lm_order == 0 {
            return Err(Error::Config("lm_order must be at least 1".into()));
        }
        if !(self.lm_smoothing > 0.0) {
            return Err(Error::Config("lm_smoothing must be positive".into()));
        }
        Ok(())
    }
}

/// Output clean-up: optionally collapse repeated neighbours, cut at the first
/// EOS, drop every id below `first_word` (reserved ids and language tags).
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Postprocess {
    pub collapse_repeats: bool,
    pub first_word: usize,
}

impl Default for Postprocess {
    fn default() -> Self {
        Postprocess {
            collapse_repeats: true,
            first_word: FIRST_TAG,
        }
    }
}

impl Postprocess {
    pub fn apply(&self, raw: &[usize]) -> Vec<usize> {
        let mut out: Vec<usize> = Vec::with_capacity(raw.len());
        for &w in raw {
            if w == EOS {
                break;
            }
            if self.collapse_repeats && out.last() == Some(&w) {
                continue;
            }
            out.push(w);
        }
        out.retain(|&w| w >= self.first_word);
        out
    }
}

/// [`Postprocess`] with default settings.
pub fn postprocess(raw: &[usize]) -> Vec<usize> {
    Postprocess::default().apply(raw)
}

/// A walk through the lattice with the token emitted at each visited step.
#[derive(Clone, Debug, PartialEq)]
pub struct Walk {
    pub steps: Vec<usize>,
    pub tokens: Vec<usize>,
    /// Sum of word and link log-probabilities along the walk.
    pub dag_score: Real,
}

/// Best word of every step, lowest id on ties.
fn best_words(dag: &DagOutput) -> Vec<(usize, Real)> {
    (0..dag.steps())
        .map(|s| {
            let row = dag.word_row(s);
            let mut best = 0;
            for (w, &v) in row.iter().enumerate() {
                if v > row[best] {
                    best = w;
                }
            }
            (best, row[best])
        })
        .collect()
}

/// Greedy walk: from the current step move to the (step, word) pair with the
/// highest link + word log-probability until the last step is reached.
pub fn lookahead_walk(dag: &DagOutput) -> Walk {
    let best = best_words(dag);
    let last = dag.steps() - 1;
    let mut s = 0;
    let mut walk = Walk {
        steps: vec![0],
        tokens: vec![best[0].0],
        dag_score: best[0].1,
    };
    while s < last {
        let links = dag.link_row(s);
        let mut next = s + 1;
        let mut score = links[next] + best[next].1;
        for (sn, &(_, w)) in best.iter().enumerate().skip(s + 2) {
            let v = links[sn] + w;
            if v > score {
                next = sn;
                score = v;
            }
        }
        s = next;
        walk.steps.push(s);
        walk.tokens.push(best[s].0);
        // same association as the beam search so equal walks score equally
        walk.dag_score = walk.dag_score + links[s] + best[s].1;
    }
    walk
}

pub fn lookahead(dag: &DagOutput, post: &Postprocess) -> Vec<usize> {
    post.apply(&lookahead_walk(dag).tokens)
}

/// Finished beam candidate.
#[derive(Clone, Debug, PartialEq)]
pub struct Candidate {
    pub walk: Walk,
    pub output: Vec<usize>,
    pub lm_score: Real,
    pub rank_score: Real,
}

#[derive(Clone, Debug)]
struct Hyp {
    step: usize,
    tokens: Vec<usize>,
    steps: Vec<usize>,
    score: Real,
}

/// Beam search over lattice walks. Each step offers only its `beam_width`
/// best words. Every round expands all live hypotheses by one (step, word)
/// move and keeps the `beam_width` best by lattice score; those that reached
/// the last step are set aside. The lookahead walk is always among the
/// finished candidates, so the search never scores below it on the lattice.
///
/// Candidates are ranked by
/// `dag_score / len^len_alpha + lm_weight · lm_score / len`, with `len` the
/// number of emitted tokens and the LM scoring the post-processed output.
pub fn ngram_beam_candidates(
    dag: &DagOutput,
    cfg: &DecodeConfig,
    lm: Option<&NgramLM>,
    post: &Postprocess,
) -> Result<Vec<Candidate>> {
    if cfg.beam_width == 0 {
        return Err(Error::Config("beam_width must be at least 1".into()));
    }
    let width = cfg.beam_width;
    let last = dag.steps() - 1;
    let options: Vec<Vec<usize>> = (0..dag.steps()).map(|s| top_words(dag.word_row(s), width)).collect();

    let mut finished: Vec<Walk> = vec![lookahead_walk(dag)];
    let mut live: Vec<Hyp> = options[0]
        .iter()
        .map(|&w| Hyp {
            step: 0,
            tokens: vec![w],
            steps: vec![0],
            score: dag.word(0, w),
        })
        .collect();
    while !live.is_empty() {
        // (score, parent, next step, token); ordering makes ties deterministic
        let mut moves: Vec<(Real, usize, usize, usize)> = Vec::new();
        for (i, h) in live.iter().enumerate() {
            let links = dag.link_row(h.step);
            for sn in h.step + 1..=last {
                for &w in &options[sn] {
                    moves.push((h.score + links[sn] + dag.word(sn, w), i, sn, w));
                }
            }
        }
        moves.sort_by(|a, b| b.0.total_cmp(&a.0).then((a.2, a.3, a.1).cmp(&(b.2, b.3, b.1))));
        moves.truncate(width);
        let mut next = Vec::with_capacity(moves.len());
        for (score, i, sn, w) in moves {
            let parent = &live[i];
            let mut tokens = parent.tokens.clone();
            tokens.push(w);
            let mut steps = parent.steps.clone();
            steps.push(sn);
            if sn == last {
                finished.push(Walk {
                    steps,
                    tokens,
                    dag_score: score,
                });
            } else {
                next.push(Hyp {
                    step: sn,
                    tokens,
                    steps,
                    score,
                });
            }
        }
        live = next;
    }

    let mut out: Vec<Candidate> = finished
        .into_iter()
        .map(|walk| {
            let output = post.apply(&walk.tokens);
            let len = walk.tokens.len() as Real;
            let lm_score = lm.map_or(0.0, |lm| lm.score(&output));
            let rank_score = walk.dag_score / len.powf(cfg.len_alpha) + cfg.lm_weight * lm_score / len;
            Candidate {
                walk,
                output,
                lm_score,
                rank_score,
            }
        })
        .collect();
    // stable sort keeps the lookahead walk first among equals
    out.sort_by(|a, b| b.rank_score.total_cmp(&a.rank_score));
    Ok(out)
}

/// Best candidate of [`ngram_beam_candidates`].
pub fn ngram_beam_search(
    dag: &DagOutput,
    cfg: &DecodeConfig,
    lm: Option<&NgramLM>,
    post: &Postprocess,
) -> Result<Candidate> {
    Ok(ngram_beam_candidates(dag, cfg, lm, post)?.swap_remove(0))
}

/// Decode with the method selected in `cfg`.
pub fn decode(dag: &DagOutput, cfg: &DecodeConfig, lm: Option<&NgramLM>, post: &Postprocess) -> Result<Vec<usize>> {
    match cfg.method {
        DecodeMethod::Lookahead => Ok(lookahead(dag, post)),
        DecodeMethod::NgramBeam => Ok(ngram_beam_search(dag, cfg, lm, post)?.output),
    }
}

/// Ids of the `k` highest entries, best first, lower id first on ties.
fn top_words(row: &[Real], k: usize) -> Vec<usize> {
    let mut ids: Vec<usize> = (0..row.len()).collect();
    ids.sort_by(|&a, &b| row[b].total_cmp(&row[a]).then(a.cmp(&b)));
    ids.truncate(k);
    ids
}
