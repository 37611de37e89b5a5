//! Central finite-difference checks for reverse-mode gradients.

use super::{Graph, Real, Result, Tensor};

/// Outcome of comparing analytic and numeric gradients.
#[derive(Clone, Debug)]
pub struct GradReport {
    /// Largest `|analytic - numeric| / max(|analytic|, |numeric|, floor)`.
    pub max_rel_err: Real,
    /// Largest absolute difference.
    pub max_abs_err: Real,
    /// (input index, element index) of the worst relative error.
    pub worst: (usize, usize),
    pub checked: usize,
}

/// Relative error with the denominator floored, so entries whose true
/// gradient is ~0 are judged on absolute error instead.
pub fn rel_err(analytic: Real, numeric: Real, floor: Real) -> Real {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(floor)
}

/// Compare `d f / d inputs` from `backward` against central differences
/// with step `h`. `f` must build a scalar from the given leaves and be
/// deterministic.
pub fn check<F>(inputs: &[(Vec<usize>, Vec<Real>)], h: Real, floor: Real, f: F) -> Result<GradReport>
where
    F: for<'g> Fn(&mut Graph<'g>, &[Tensor]) -> Result<Tensor>,
{
    let eval = |vals: &[(Vec<usize>, Vec<Real>)]| -> Result<Real> {
        let mut g = Graph::inference();
        let ts = vals
            .iter()
            .map(|(s, v)| g.constant(s, v.clone()))
            .collect::<Result<Vec<_>>>()?;
        let out = f(&mut g, &ts)?;
        Ok(g.scalar(out))
    };

    let mut g = Graph::new();
    let ts = inputs
        .iter()
        .map(|(s, v)| g.variable(s, v.clone()))
        .collect::<Result<Vec<_>>>()?;
    let out = f(&mut g, &ts)?;
    g.backward(out)?;
    let analytic: Vec<Vec<Real>> = ts
        .iter()
        .zip(inputs)
        .map(|(&t, (_, v))| g.grad(t).map(<[Real]>::to_vec).unwrap_or_else(|| vec![0.0; v.len()]))
        .collect();

    let mut report = GradReport {
        max_rel_err: 0.0,
        max_abs_err: 0.0,
        worst: (0, 0),
        checked: 0,
    };
    let mut work = inputs.to_vec();
    for i in 0..inputs.len() {
        for j in 0..inputs[i].1.len() {
            let orig = work[i].1[j];
            work[i].1[j] = orig + h;
            let up = eval(&work)?;
            work[i].1[j] = orig - h;
            let down = eval(&work)?;
            work[i].1[j] = orig;
            let numeric = (up - down) / (2.0 * h);
            let a = analytic[i][j];
            let r = rel_err(a, numeric, floor);
            report.max_abs_err = report.max_abs_err.max((a - numeric).abs());
            if r > report.max_rel_err {
                report.max_rel_err = r;
                report.worst = (i, j);
            }
            report.checked += 1;
        }
    }
    Ok(report)
}
