//! Path scores over a decoding lattice and their marginal likelihood.
//!
//! Steps are 0-based: a path starts at step 0 and ends at step `S - 1`.
//! The marginal over all paths is computed with a forward recursion in log
//! space; its gradient comes from the matching backward recursion and is
//! exposed as a graph op ([`dag_nll`]) for training.

use crate::error::{Error, Result};
use crate::model::{DagOutput, DagTensors};
use crate::tensor::{CustomGrad, Graph, Real, Tensor, LOG_ZERO};

/// Largest lattice [`enumerate_paths`] will expand.
pub const MAX_ENUMERATION_STEPS: usize = 12;

/// Values at or below this are treated as probability zero.
const ZERO_CUTOFF: Real = LOG_ZERO * 0.5;

/// Strictly increasing step indices from 0 to `steps - 1`.
#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Path(Vec<usize>);

impl Path {
    pub fn new(indices: Vec<usize>, steps: usize) -> Result<Self> {
        let fail = |m: String| Err(Error::InvalidPath(m));
        if indices.len() < 2 {
            return fail(format!("a path needs at least 2 positions, got {}", indices.len()));
        }
        if indices.len() > steps {
            return fail(format!("{} positions do not fit in {steps} steps", indices.len()));
        }
        if indices[0] != 0 {
            return fail(format!("path must start at step 0, starts at {}", indices[0]));
        }
        if indices[indices.len() - 1] != steps - 1 {
            return fail(format!(
                "path must end at step {}, ends at {}",
                steps - 1,
                indices[indices.len() - 1]
            ));
        }
        if let Some(w) = indices.windows(2).find(|w| w[1] <= w[0]) {
            return fail(format!("path is not strictly increasing at {} -> {}", w[0], w[1]));
        }
        Ok(Path(indices))
    }

    pub fn indices(&self) -> &[usize] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

fn check_target(y: &[usize], steps: usize, vocab: usize) -> Result<()> {
    if y.len() < 2 {
        return Err(Error::TargetTooShort(y.len()));
    }
    if y.len() > steps {
        return Err(Error::TargetTooLong { target: y.len(), steps });
    }
    if let Some(&id) = y.iter().find(|&&w| w >= vocab) {
        return Err(Error::OutOfVocabulary { id, vocab });
    }
    Ok(())
}

/// Joint log-probability of `y` emitted along `path`: word scores at every
/// visited step plus the links between consecutive steps.
pub fn path_log_prob(dag: &DagOutput, y: &[usize], path: &Path) -> Result<Real> {
    if path.0.len() != y.len() {
        return Err(Error::InvalidPath(format!(
            "path has {} positions but the target has {} tokens",
            path.0.len(),
            y.len()
        )));
    }
    Path::new(path.0.clone(), dag.steps())?;
    check_target(y, dag.steps(), dag.vocab())?;
    let words: Real = path.0.iter().zip(y).map(|(&s, &w)| dag.word(s, w)).sum();
    let links: Real = path.0.windows(2).map(|w| dag.link(w[0], w[1])).sum();
    Ok(words + links)
}

/// All paths of length `len` through `steps` steps, in lexicographic order.
pub fn enumerate_paths(steps: usize, len: usize) -> Result<Vec<Path>> {
    if steps > MAX_ENUMERATION_STEPS {
        return Err(Error::EnumerationTooLarge(steps));
    }
    if len < 2 {
        return Err(Error::TargetTooShort(len));
    }
    if len > steps {
        return Err(Error::TargetTooLong { target: len, steps });
    }
    fn extend(prefix: &mut Vec<usize>, steps: usize, len: usize, out: &mut Vec<Path>) {
        if prefix.len() == len - 1 {
            let mut p = prefix.clone();
            p.push(steps - 1);
            out.push(Path(p));
            return;
        }
        let last = *prefix.last().expect("prefix starts with step 0");
        // leave room for the remaining interior positions and the final step
        let remaining = len - 1 - prefix.len();
        for next in last + 1..steps - remaining {
            prefix.push(next);
            extend(prefix, steps, len, out);
            prefix.pop();
        }
    }
    let mut out = Vec::new();
    extend(&mut vec![0], steps, len, &mut out);
    Ok(out)
}

fn lse2(a: Real, b: Real) -> Real {
    if a <= ZERO_CUTOFF {
        return b;
    }
    if b <= ZERO_CUTOFF {
        return a;
    }
    let m = a.max(b);
    m + ((a - m).exp() + (b - m).exp()).ln()
}

/// Forward and backward tables of the path recursion, both T×S.
///
/// `alpha[t][s]`: log-probability of emitting `y[..=t]` with `y[t]` at step s.
/// `beta[t][s]`: log-probability of emitting `y[t+1..]` and ending at the
/// last step, given `y[t]` was emitted at step s.
struct Tables {
    alpha: Vec<Real>,
    beta: Vec<Real>,
    log_likelihood: Real,
}

fn forward(word: &[Real], link: &[Real], steps: usize, vocab: usize, y: &[usize]) -> Vec<Real> {
    let t_len = y.len();
    let mut alpha = vec![LOG_ZERO; t_len * steps];
    alpha[0] = word[y[0]];
    for t in 1..t_len {
        let (prev, cur) = alpha.split_at_mut(t * steps);
        let prev = &prev[(t - 1) * steps..];
        let cur = &mut cur[..steps];
        // y[t] can sit at steps t ..= steps - (t_len - t)
        let hi = steps - (t_len - t);
        for s in t..=hi {
            let mut acc = LOG_ZERO;
            for sp in t - 1..s {
                if prev[sp] > ZERO_CUTOFF {
                    acc = lse2(acc, prev[sp] + link[sp * steps + s]);
                }
            }
            cur[s] = if acc > ZERO_CUTOFF {
                acc + word[s * vocab + y[t]]
            } else {
                LOG_ZERO
            };
        }
    }
    alpha
}

fn backward(word: &[Real], link: &[Real], steps: usize, vocab: usize, y: &[usize]) -> Vec<Real> {
    let t_len = y.len();
    let mut beta = vec![LOG_ZERO; t_len * steps];
    beta[(t_len - 1) * steps + steps - 1] = 0.0;
    for t in (0..t_len - 1).rev() {
        let (cur, next) = beta.split_at_mut((t + 1) * steps);
        let cur = &mut cur[t * steps..];
        let next = &next[..steps];
        let hi = steps - (t_len - t);
        for s in t..=hi {
            let mut acc = LOG_ZERO;
            for sn in s + 1..steps {
                if next[sn] > ZERO_CUTOFF {
                    acc = lse2(acc, link[s * steps + sn] + word[sn * vocab + y[t + 1]] + next[sn]);
                }
            }
            cur[s] = acc;
        }
    }
    beta
}

fn tables(word: &[Real], link: &[Real], steps: usize, vocab: usize, y: &[usize]) -> Tables {
    let alpha = forward(word, link, steps, vocab, y);
    let beta = backward(word, link, steps, vocab, y);
    let last = alpha[(y.len() - 1) * steps + steps - 1];
    Tables {
        alpha,
        beta,
        log_likelihood: if last > ZERO_CUTOFF { last } else { Real::NEG_INFINITY },
    }
}

/// `log Σ_paths exp(path_log_prob)` via the forward recursion, O(T·S²).
pub fn dag_log_likelihood(dag: &DagOutput, y: &[usize]) -> Result<Real> {
    check_target(y, dag.steps(), dag.vocab())?;
    let alpha = forward(dag.word_table(), dag.link_table(), dag.steps(), dag.vocab(), y);
    let last = alpha[(y.len() - 1) * dag.steps() + dag.steps() - 1];
    Ok(if last > ZERO_CUTOFF { last } else { Real::NEG_INFINITY })
}

/// Gradients of `log_likelihood` with respect to the word (S×V) and link
/// (S×S) tables: the posterior expected usage of each entry.
fn posterior_grads(
    word: &[Real],
    link: &[Real],
    steps: usize,
    vocab: usize,
    y: &[usize],
    tab: &Tables,
) -> (Vec<Real>, Vec<Real>) {
    let mut d_word = vec![0.0; steps * vocab];
    let mut d_link = vec![0.0; steps * steps];
    let z = tab.log_likelihood;
    if !z.is_finite() {
        return (d_word, d_link);
    }
    let t_len = y.len();
    for t in 0..t_len {
        for s in 0..steps {
            let a = tab.alpha[t * steps + s];
            let b = tab.beta[t * steps + s];
            if a > ZERO_CUTOFF && b > ZERO_CUTOFF {
                d_word[s * vocab + y[t]] += (a + b - z).exp();
            }
        }
    }
    for t in 1..t_len {
        for sp in 0..steps {
            let a = tab.alpha[(t - 1) * steps + sp];
            if a <= ZERO_CUTOFF {
                continue;
            }
            for s in sp + 1..steps {
                let b = tab.beta[t * steps + s];
                if b <= ZERO_CUTOFF {
                    continue;
                }
                d_link[sp * steps + s] += (a + link[sp * steps + s] + word[s * vocab + y[t]] + b - z).exp();
            }
        }
    }
    (d_word, d_link)
}

struct NllGrad {
    y: Vec<usize>,
    steps: usize,
    vocab: usize,
    tables: Tables,
}

impl CustomGrad for NllGrad {
    fn backward(&self, inputs: &[&[Real]], _output: &[Real], out_grad: &[Real]) -> Vec<Vec<Real>> {
        let (mut dw, mut dl) = posterior_grads(inputs[0], inputs[1], self.steps, self.vocab, &self.y, &self.tables);
        let scale = -out_grad[0];
        dw.iter_mut().for_each(|v| *v *= scale);
        dl.iter_mut().for_each(|v| *v *= scale);
        vec![dw, dl]
    }
}

/// Negative marginal log-likelihood of `y` as a differentiable scalar of the
/// in-graph word (S×V) and link (S×S) tables.
pub fn dag_nll<'p>(g: &mut Graph<'p>, word: Tensor, link: Tensor, y: &[usize]) -> Result<Tensor> {
    let (steps, vocab) = match *g.shape(word) {
        [s, v] => (s, v),
        _ => return Err(Error::Config("word table must be S×V".into())),
    };
    if g.shape(link) != [steps, steps] {
        return Err(Error::Config("link table must be S×S".into()));
    }
    check_target(y, steps, vocab)?;
    let tab = tables(g.value(word), g.value(link), steps, vocab, y);
    let value = vec![-tab.log_likelihood];
    let grad = NllGrad {
        y: y.to_vec(),
        steps,
        vocab,
        tables: tab,
    };
    Ok(g.custom(&[word, link], &[1], value, Box::new(grad))?)
}

/// [`dag_nll`] on a decoder pass.
pub fn dag_nll_tensors<'p>(g: &mut Graph<'p>, dag: &DagTensors, y: &[usize]) -> Result<Tensor> {
    dag_nll(g, dag.word, dag.link, y)
}

/// Mean negative log-likelihood over a batch.
#[derive(Clone, Debug, PartialEq)]
pub struct BatchLoss {
    /// Mean over scored sentences of `-log p(y)`.
    pub mean_nll: Real,
    /// Same total divided by the number of target tokens.
    pub per_token_nll: Real,
    pub scored: usize,
    /// Sentences whose target did not fit the lattice (or had < 2 tokens).
    pub skipped: usize,
}

/// Mean of `-dag_log_likelihood` over the pairs that satisfy its
/// preconditions; the others are counted as skipped.
pub fn batch_dag_loss(batch: &[(&DagOutput, &[usize])]) -> Result<BatchLoss> {
    let mut total = 0.0;
    let mut tokens = 0;
    let mut scored = 0;
    let mut skipped = 0;
    for (dag, y) in batch {
        match dag_log_likelihood(dag, y) {
            Ok(ll) => {
                total -= ll;
                tokens += y.len();
                scored += 1;
            }
            Err(Error::TargetTooLong { .. } | Error::TargetTooShort(_)) => skipped += 1,
            Err(e) => return Err(e),
        }
    }
    if scored == 0 {
        return Err(Error::Empty("batch after skipping unscorable targets"));
    }
    Ok(BatchLoss {
        mean_nll: total / scored as Real,
        per_token_nll: total / tokens as Real,
        scored,
        skipped,
    })
}

#[cfg(test)]
mod tests;
