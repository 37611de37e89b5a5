use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::gradcheck::check;
use super::*;

fn rand_vals(rng: &mut ChaCha8Rng, n: usize) -> Vec<Real> {
    (0..n).map(|_| rng.gen_range(-2.0..2.0)).collect()
}

const H: Real = 1e-3;
const FLOOR: Real = 1e-6;
const TOL: Real = 1e-4;

fn assert_grads<F>(shapes: &[&[usize]], seed: u64, f: F)
where
    F: for<'g> Fn(&mut Graph<'g>, &[Tensor]) -> Result<Tensor>,
{
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let inputs: Vec<(Vec<usize>, Vec<Real>)> = shapes
        .iter()
        .map(|s| (s.to_vec(), rand_vals(&mut rng, s.iter().product())))
        .collect();
    let report = check(&inputs, H, FLOOR, f).unwrap();
    assert!(report.max_rel_err <= TOL, "gradient check failed: {report:?}");
}

#[test]
fn matmul_identity() {
    let mut g = Graph::new();
    let a = g.constant(&[2, 2], vec![1.0, 0.0, 0.0, 1.0]).unwrap();
    let b = g.constant(&[2, 2], vec![3.0, 4.0, 5.0, 6.0]).unwrap();
    let c = g.matmul(a, b).unwrap();
    assert_eq!(g.value(c), &[3.0, 4.0, 5.0, 6.0]);
}

#[test]
fn matmul_row_by_column() {
    let mut g = Graph::new();
    let a = g.constant(&[1, 2], vec![1.0, 2.0]).unwrap();
    let b = g.constant(&[2, 1], vec![3.0, 4.0]).unwrap();
    let c = g.matmul(a, b).unwrap();
    assert_eq!(g.shape(c), &[1, 1]);
    assert_eq!(g.value(c), &[11.0]);
}

#[test]
fn matmul_shape_error_names_both_shapes() {
    let mut g = Graph::new();
    let a = g.constant(&[2, 3], vec![0.0; 6]).unwrap();
    let b = g.constant(&[2, 3], vec![0.0; 6]).unwrap();
    let err = g.matmul(a, b).unwrap_err();
    let msg = err.to_string();
    assert!(msg.contains("[2, 3]"), "{msg}");
    assert!(matches!(err, TensorError::ShapeMismatch { .. }));
}

#[test]
fn matmul_gradients() {
    assert_grads(&[&[4, 5], &[5, 3]], 1, |g, t| {
        let c = g.matmul(t[0], t[1])?;
        let c2 = g.mul(c, c)?;
        Ok(g.sum(c2))
    });
    assert_grads(&[&[4, 5], &[3, 5]], 2, |g, t| {
        let c = g.matmul_nt(t[0], t[1])?;
        let c = g.tanh(c);
        Ok(g.sum(c))
    });
}

#[test]
fn log_softmax_examples() {
    let mut g = Graph::new();
    let x = g.constant(&[2], vec![0.0, 0.0]).unwrap();
    let y = g.log_softmax(x, 0).unwrap();
    let ln2 = (2.0 as Real).ln();
    assert!((g.value(y)[0] + ln2).abs() < 1e-15);
    assert!((g.value(y)[1] + ln2).abs() < 1e-15);

    let x = g.constant(&[2], vec![1000.0, 0.0]).unwrap();
    let y = g.log_softmax(x, 0).unwrap();
    assert!(g.value(y)[0].abs() < 1e-12);
    assert!((g.value(y)[1] + 1000.0).abs() < 1e-9);
    assert!(g.value(y).iter().all(|v| v.is_finite()));
}

#[test]
fn log_softmax_normalizes_on_any_axis() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut g = Graph::new();
    let x = g.constant(&[3, 4, 5], rand_vals(&mut rng, 60)).unwrap();
    for axis in 0..3 {
        let y = g.log_softmax(x, axis).unwrap();
        let lse = g.logsumexp(y, axis).unwrap();
        assert!(g.value(lse).iter().all(|v| v.abs() < 1e-12));
        let p = g.exp(y);
        let s = g.sum(p);
        let lines = 60 / g.shape(x)[axis];
        assert!((g.scalar(s) - lines as Real).abs() < 1e-9);
    }
    let y = g.log_softmax(x, 2).unwrap();
    let row: Real = g.value(y)[..5].iter().map(|v| v.exp()).sum();
    assert!((row - 1.0).abs() < 1e-6);
}

#[test]
fn masked_entries_stay_masked() {
    let mut g = Graph::new();
    let x = g.variable(&[2, 3], vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0]).unwrap();
    let ninf = Real::NEG_INFINITY;
    let mask = g.constant(&[2, 3], vec![ninf, 0.0, 0.0, ninf, ninf, ninf]).unwrap();
    let xm = g.add(x, mask).unwrap();
    let y = g.log_softmax(xm, 1).unwrap();
    let v = g.value(y).to_vec();
    assert_eq!(v[0], ninf);
    assert!(v[3..].iter().all(|&z| z == ninf));
    let sm = g.softmax(xm, 1).unwrap();
    assert_eq!(&g.value(sm)[3..], &[0.0, 0.0, 0.0]);
    let picked = g.select(y, &[1, 2]).unwrap();
    let loss = g.sum(picked);
    g.backward(loss).unwrap();
    let grad = g.grad(x).unwrap();
    assert_eq!(grad[0], 0.0);
    assert!(grad[3..].iter().all(|&z| z == 0.0));
    assert!(grad.iter().all(|z| z.is_finite()));
}

#[test]
fn logsumexp_examples() {
    let mut g = Graph::new();
    let x = g.constant(&[2], vec![0.0, (3.0 as Real).ln()]).unwrap();
    let y = g.logsumexp(x, 0).unwrap();
    assert!((g.scalar(y) - (4.0 as Real).ln()).abs() < 1e-15);
    let x = g.constant(&[2], vec![-1e9, 0.0]).unwrap();
    let y = g.logsumexp(x, 0).unwrap();
    assert!(g.scalar(y).abs() < 1e-12);
    let e = g.constant(&[0], vec![]).unwrap();
    assert!(matches!(g.logsumexp(e, 0), Err(TensorError::EmptySlice { .. })));
}

#[test]
fn logsumexp_gradient_is_softmax() {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let vals = rand_vals(&mut rng, 6);
    let mut g = Graph::new();
    let x = g.variable(&[6], vals.clone()).unwrap();
    let y = g.logsumexp(x, 0).unwrap();
    g.backward(y).unwrap();
    let z: Real = vals.iter().map(|v| v.exp()).sum();
    for (gi, v) in g.grad(x).unwrap().iter().zip(&vals) {
        assert!((gi - v.exp() / z).abs() < 1e-12);
    }
    assert_grads(&[&[3, 4]], 10, |g, t| {
        let l = g.logsumexp(t[0], 1)?;
        let l2 = g.mul(l, l)?;
        Ok(g.sum(l2))
    });
    assert_grads(&[&[3, 4]], 11, |g, t| {
        let l = g.logsumexp(t[0], 0)?;
        let l = g.tanh(l);
        Ok(g.sum(l))
    });
}

#[test]
fn backward_of_sum_is_ones() {
    let mut g = Graph::new();
    let p = g.variable(&[2, 3], vec![0.5; 6]).unwrap();
    let s = g.sum(p);
    g.backward(s).unwrap();
    assert_eq!(g.grad(p).unwrap(), &[1.0; 6]);
}

#[test]
fn backward_twice_accumulates() {
    let mut g = Graph::new();
    let p = g.variable(&[3], vec![1.0, 2.0, 3.0]).unwrap();
    let q = g.mul(p, p).unwrap();
    let s = g.sum(q);
    g.backward(s).unwrap();
    let once = g.grad(p).unwrap().to_vec();
    g.backward(s).unwrap();
    let twice = g.grad(p).unwrap();
    for (a, b) in once.iter().zip(twice) {
        assert_eq!(2.0 * a, *b);
    }
    g.zero_grad();
    assert!(g.grad(p).is_none());
}

#[test]
fn backward_rejects_non_scalar() {
    let mut g = Graph::new();
    let p = g.variable(&[2], vec![1.0, 2.0]).unwrap();
    assert!(matches!(g.backward(p), Err(TensorError::NonScalarLoss(_))));
}

#[test]
fn matmul_chain_gradients() {
    assert_grads(&[&[3, 4], &[4, 4], &[4, 2]], 4, |g, t| {
        let a = g.matmul(t[0], t[1])?;
        let a = g.relu(a);
        let b = g.matmul(a, t[2])?;
        let b = g.tanh(b);
        Ok(g.sum(b))
    });
}

#[test]
fn elementwise_gradients() {
    assert_grads(&[&[2, 3], &[2, 3]], 5, |g, t| {
        let a = g.add(t[0], t[1])?;
        let b = g.sub(t[0], t[1])?;
        let c = g.mul(a, b)?;
        let c = g.scale(c, 0.7);
        let c = g.add_scalar(c, 0.3);
        let c = g.tanh(c);
        Ok(g.sum(c))
    });
    // broadcast over the leading dimension
    assert_grads(&[&[4, 3], &[3]], 6, |g, t| {
        let a = g.add(t[0], t[1])?;
        let b = g.mul(a, t[1])?;
        let c = g.sub(b, t[1])?;
        let c = g.exp(c);
        Ok(g.mean(c))
    });
}

#[test]
fn relu_gradient() {
    // keep inputs away from the kink
    let inputs = vec![(vec![5], vec![-1.5, -0.3, 0.4, 1.2, 1.9])];
    let r = check(&inputs, H, FLOOR, |g, t| {
        let y = g.relu(t[0]);
        let y2 = g.mul(y, y)?;
        Ok(g.sum(y2))
    })
    .unwrap();
    assert!(r.max_rel_err <= TOL, "{r:?}");
}

#[test]
fn structural_gradients() {
    assert_grads(&[&[5, 3]], 7, |g, t| {
        let rows = g.gather_rows(t[0], &[4, 0, 4, 2])?;
        let tr = g.transpose(rows)?;
        let sq = g.mul(tr, tr)?;
        Ok(g.sum(sq))
    });
    assert_grads(&[&[2, 3], &[2, 2]], 8, |g, t| {
        let c = g.concat(&[t[0], t[1]], 1)?;
        let s = g.slice(c, 1, 2, 3)?;
        let r = g.reshape(s, &[3, 2])?;
        let r = g.tanh(r);
        let sel = g.select(r, &[0, 5, 5])?;
        let sq = g.mul(sel, sel)?;
        Ok(g.sum(sq))
    });
    assert_grads(&[&[2, 3], &[1, 3]], 12, |g, t| {
        let c = g.concat(&[t[0], t[1]], 0)?;
        let s = g.slice(c, 0, 1, 2)?;
        let s = g.exp(s);
        Ok(g.sum(s))
    });
}

#[test]
fn layer_norm_gradients() {
    assert_grads(&[&[3, 6], &[6], &[6]], 13, |g, t| {
        let y = g.layer_norm(t[0], t[1], t[2], 1e-5)?;
        let y = g.tanh(y);
        let w = g.mul(y, y)?;
        Ok(g.sum(w))
    });
}

#[test]
fn softmax_and_log_softmax_gradients() {
    assert_grads(&[&[3, 4], &[3, 4]], 14, |g, t| {
        let p = g.softmax(t[0], 1)?;
        let w = g.mul(p, t[1])?;
        Ok(g.sum(w))
    });
    assert_grads(&[&[3, 4], &[3, 4]], 15, |g, t| {
        let p = g.log_softmax(t[0], 0)?;
        let w = g.mul(p, t[1])?;
        Ok(g.sum(w))
    });
}

#[test]
fn layer_norm_output_is_normalized() {
    let mut g = Graph::new();
    let x = g.constant(&[1, 4], vec![1.0, 2.0, 3.0, 4.0]).unwrap();
    let gain = g.constant(&[4], vec![1.0; 4]).unwrap();
    let bias = g.constant(&[4], vec![0.0; 4]).unwrap();
    let y = g.layer_norm(x, gain, bias, 0.0).unwrap();
    let v = g.value(y);
    let mean: Real = v.iter().sum::<Real>() / 4.0;
    let var: Real = v.iter().map(|z| z * z).sum::<Real>() / 4.0;
    assert!(mean.abs() < 1e-12);
    assert!((var - 1.0).abs() < 1e-12);
}

#[test]
fn forward_is_deterministic() {
    let run = || {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let mut g = Graph::new();
        let a = g.constant(&[7, 9], rand_vals(&mut rng, 63)).unwrap();
        let b = g.constant(&[9, 5], rand_vals(&mut rng, 45)).unwrap();
        let c = g.matmul(a, b).unwrap();
        let d = g.log_softmax(c, 1).unwrap();
        g.value(d).to_vec()
    };
    assert_eq!(run(), run());
}

#[test]
fn inference_graph_records_nothing() {
    let mut g = Graph::inference();
    let p = g.variable(&[2], vec![1.0, 2.0]).unwrap();
    let s = g.sum(p);
    assert!(!g.requires_grad(s));
    g.backward(s).unwrap();
    assert!(g.grad(p).is_none());
}

#[test]
fn params_are_borrowed_and_collected() {
    let mut store = ParamStore::new();
    let w = store.add("w", &[2, 2], vec![1.0, 2.0, 3.0, 4.0]);
    let mut g = Graph::new();
    let t = g.param(&store, w);
    assert_eq!(g.param(&store, w), t);
    let x = g.constant(&[1, 2], vec![1.0, 1.0]).unwrap();
    let y = g.matmul(x, t).unwrap();
    let s = g.sum(y);
    g.backward(s).unwrap();
    let grads = g.param_grads();
    assert_eq!(grads.len(), 1);
    assert_eq!(grads[0].0, w);
    assert_eq!(grads[0].1, &[1.0, 1.0, 1.0, 1.0]);
}

#[test]
fn dropout_scales_kept_entries() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut g = Graph::new();
    let x = g.variable(&[1000], vec![1.0; 1000]).unwrap();
    let y = g.dropout(x, 0.5, &mut rng);
    let v = g.value(y);
    assert!(v.iter().all(|&z| z == 0.0 || z == 2.0));
    let kept = v.iter().filter(|&&z| z > 0.0).count();
    assert!((400..600).contains(&kept));
    let same = g.dropout(x, 0.0, &mut rng);
    assert_eq!(same, x);
}
