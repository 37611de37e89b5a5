use rand::distributions::{Distribution, WeightedIndex};
use rand::Rng;

use super::synthetic::Split;
use super::Sample;
use crate::error::{Error, Result};
use crate::tensor::Real;

/// Exponent applied to direction sizes when sampling directions.
pub const DEFAULT_TEMPERATURE: Real = 1.0 / 3.0;

/// Probability of each direction: `n_d^exponent`, normalised.
pub fn direction_weights(sizes: &[usize], exponent: Real) -> Vec<Real> {
    let raw: Vec<Real> = sizes
        .iter()
        .map(|&n| if n == 0 { 0.0 } else { (n as Real).powf(exponent) })
        .collect();
    let total: Real = raw.iter().sum();
    raw.iter().map(|w| w / total).collect()
}

/// Draw sentences until the next one would exceed `token_budget` (source
/// plus target tokens). Each sentence first draws its direction with
/// [`direction_weights`], then a sentence uniformly within it.
pub fn sample_batch<'a, R: Rng>(
    rng: &mut R,
    split: &'a Split,
    token_budget: usize,
    exponent: Real,
) -> Result<Vec<&'a Sample>> {
    let dirs: Vec<&Vec<Sample>> = split.values().filter(|v| !v.is_empty()).collect();
    if dirs.is_empty() {
        return Err(Error::Empty("training data"));
    }
    let longest = dirs
        .iter()
        .flat_map(|v| v.iter())
        .map(Sample::tokens)
        .max()
        .unwrap_or(0);
    if token_budget < longest {
        return Err(Error::Config(format!(
            "token budget {token_budget} is below the longest sentence pair ({longest} tokens)"
        )));
    }
    let sizes: Vec<usize> = dirs.iter().map(|v| v.len()).collect();
    let pick = WeightedIndex::new(direction_weights(&sizes, exponent))
        .map_err(|e| Error::Config(format!("direction weights: {e}")))?;
    let mut batch = Vec::new();
    let mut used = 0;
    loop {
        let d = dirs[pick.sample(rng)];
        let s = &d[rng.gen_range(0..d.len())];
        if used + s.tokens() > token_budget {
            break;
        }
        used += s.tokens();
        batch.push(s);
    }
    Ok(batch)
}
