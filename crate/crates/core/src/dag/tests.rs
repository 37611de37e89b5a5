use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::*;
use crate::tensor::gradcheck::check;
use crate::tensor::logsumexp_slice;

fn random_dag(rng: &mut ChaCha8Rng, steps: usize, vocab: usize) -> DagOutput {
    let words: Vec<Real> = (0..steps * vocab).map(|_| rng.gen_range(-3.0..3.0)).collect();
    let links: Vec<Real> = (0..steps * steps).map(|_| rng.gen_range(-3.0..3.0)).collect();
    DagOutput::from_logits(steps, vocab, &words, &links).unwrap()
}

fn random_target(rng: &mut ChaCha8Rng, len: usize, vocab: usize) -> Vec<usize> {
    (0..len).map(|_| rng.gen_range(0..vocab)).collect()
}

fn by_enumeration(dag: &DagOutput, y: &[usize]) -> Real {
    let scores: Vec<Real> = enumerate_paths(dag.steps(), y.len())
        .unwrap()
        .iter()
        .map(|p| path_log_prob(dag, y, p).unwrap())
        .collect();
    logsumexp_slice(&scores)
}

fn binomial(n: usize, k: usize) -> usize {
    (0..k).fold(1, |acc, i| acc * (n - i) / (i + 1))
}

#[test]
fn path_validation_names_the_constraint() {
    let err = |v: Vec<usize>, s| match Path::new(v, s) {
        Err(Error::InvalidPath(m)) => m,
        other => panic!("expected an invalid path, got {other:?}"),
    };
    assert!(err(vec![0], 2).contains("at least 2"));
    assert!(err(vec![1, 3], 4).contains("start at step 0"));
    assert!(err(vec![0, 2], 4).contains("end at step 3"));
    assert!(err(vec![0, 2, 2, 3], 4).contains("strictly increasing"));
    assert!(Path::new(vec![0, 2, 3], 4).is_ok());
}

#[test]
fn single_token_target_is_rejected() {
    let dag = random_dag(&mut ChaCha8Rng::seed_from_u64(0), 2, 3);
    assert!(matches!(dag_log_likelihood(&dag, &[1]), Err(Error::TargetTooShort(1))));
    assert!(path_log_prob(&dag, &[1], &Path(vec![0])).is_err());
}

#[test]
fn two_step_lattice_has_one_path() {
    let dag = random_dag(&mut ChaCha8Rng::seed_from_u64(1), 2, 3);
    let p = Path::new(vec![0, 1], 2).unwrap();
    let expect = dag.word(0, 2) + dag.link(0, 1) + dag.word(1, 0);
    assert_eq!(path_log_prob(&dag, &[2, 0], &p).unwrap(), expect);
    assert!((dag_log_likelihood(&dag, &[2, 0]).unwrap() - expect).abs() < 1e-12);
}

#[test]
fn hand_filled_path_score() {
    // 4 steps, 2 words; probabilities chosen so the sum is easy by hand
    let half = (0.5 as Real).ln();
    let word = vec![
        (0.9 as Real).ln(),
        (0.1 as Real).ln(),
        half,
        half,
        (0.2 as Real).ln(),
        (0.8 as Real).ln(),
        (0.6 as Real).ln(),
        (0.4 as Real).ln(),
    ];
    let ninf = Real::NEG_INFINITY;
    let third = (1.0 / 3.0 as Real).ln();
    let link = vec![
        ninf,
        third,
        third,
        third, //
        ninf,
        ninf,
        (0.25 as Real).ln(),
        (0.75 as Real).ln(), //
        ninf,
        ninf,
        ninf,
        0.0, //
        ninf,
        ninf,
        ninf,
        ninf,
    ];
    let dag = DagOutput::new(4, 2, word, link).unwrap();
    dag.validate(1e-12).unwrap();
    let y = [0, 1, 0];
    let p = Path::new(vec![0, 2, 3], 4).unwrap();
    let by_hand = (0.9 * (1.0 / 3.0) * 0.8 * 1.0 * 0.6 as Real).ln();
    assert!((path_log_prob(&dag, &y, &p).unwrap() - by_hand).abs() < 1e-12);
    // the other path visits step 1: 0.9 · 1/3 · 0.5 · 0.75 · 0.6
    let other = 0.9 * (1.0 / 3.0) * 0.5 * 0.75 * 0.6;
    let total = (0.9 * (1.0 / 3.0) * 0.8 * 0.6 + other as Real).ln();
    assert!((dag_log_likelihood(&dag, &y).unwrap() - total).abs() < 1e-12);
}

#[test]
fn full_length_target_uses_the_identity_path() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let dag = random_dag(&mut rng, 6, 4);
    let y = random_target(&mut rng, 6, 4);
    let p = Path::new((0..6).collect(), 6).unwrap();
    let ll = dag_log_likelihood(&dag, &y).unwrap();
    assert!((ll - path_log_prob(&dag, &y, &p).unwrap()).abs() < 1e-12);
}

#[test]
fn target_longer_than_lattice_is_an_error() {
    let dag = random_dag(&mut ChaCha8Rng::seed_from_u64(3), 3, 3);
    assert!(matches!(
        dag_log_likelihood(&dag, &[0, 1, 2, 0]),
        Err(Error::TargetTooLong { target: 4, steps: 3 })
    ));
    assert!(dag_log_likelihood(&dag, &[0, 5]).is_err());
}

#[test]
fn enumeration_small_cases() {
    let p = enumerate_paths(2, 2).unwrap();
    assert_eq!(p, vec![Path(vec![0, 1])]);
    let p = enumerate_paths(5, 3).unwrap();
    let idx: Vec<&[usize]> = p.iter().map(Path::indices).collect();
    assert_eq!(idx, vec![&[0, 1, 4][..], &[0, 2, 4], &[0, 3, 4]]);
    assert!(matches!(enumerate_paths(13, 3), Err(Error::EnumerationTooLarge(13))));
    assert!(enumerate_paths(4, 5).is_err());
    assert!(enumerate_paths(4, 1).is_err());
}

#[test]
fn enumeration_counts_are_binomial() {
    for s in 2..=10 {
        for t in 2..=s {
            let paths = enumerate_paths(s, t).unwrap();
            assert_eq!(paths.len(), binomial(s - 2, t - 2), "S={s} T={t}");
            assert!(paths.windows(2).all(|w| w[0] < w[1]));
            for p in &paths {
                Path::new(p.indices().to_vec(), s).unwrap();
            }
        }
    }
}

#[test]
fn four_steps_three_tokens_two_paths() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let dag = random_dag(&mut rng, 4, 3);
    let y = [2, 0, 1];
    let a = path_log_prob(&dag, &y, &Path(vec![0, 1, 3])).unwrap();
    let b = path_log_prob(&dag, &y, &Path(vec![0, 2, 3])).unwrap();
    let expect = logsumexp_slice(&[a, b]);
    assert!((dag_log_likelihood(&dag, &y).unwrap() - expect).abs() < 1e-12);
}

#[test]
fn recursion_matches_enumeration() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for s in 2..=8 {
        for t in 2..=s {
            for _ in 0..5 {
                let dag = random_dag(&mut rng, s, 5);
                let y = random_target(&mut rng, t, 5);
                let dp = dag_log_likelihood(&dag, &y).unwrap();
                let brute = by_enumeration(&dag, &y);
                assert!((dp - brute).abs() <= 1e-9, "S={s} T={t}: {dp} vs {brute}");
            }
        }
    }
}

#[test]
fn all_targets_carry_unit_mass() {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let v = 3;
    for s in 3..=5 {
        let dag = random_dag(&mut rng, s, v);
        let mut total = 0.0;
        for t in 2..=s {
            for code in 0..v.pow(t as u32) {
                let y: Vec<usize> = (0..t).map(|i| code / v.pow(i as u32) % v).collect();
                total += dag_log_likelihood(&dag, &y).unwrap().exp();
            }
        }
        assert!((total - 1.0).abs() < 1e-9, "S={s}: {total}");
    }
}

#[test]
fn graph_loss_matches_pure_value() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let dag = random_dag(&mut rng, 6, 4);
    let y = [1, 3, 0, 2];
    let mut g = Graph::new();
    let w = g.variable(&[6, 4], dag.word_table().to_vec()).unwrap();
    let l = g.variable(&[6, 6], dag.link_table().to_vec()).unwrap();
    let loss = dag_nll(&mut g, w, l, &y).unwrap();
    assert_eq!(g.scalar(loss), -dag_log_likelihood(&dag, &y).unwrap());
    g.backward(loss).unwrap();
    // each position of y is emitted exactly once along every path
    let gw = g.grad(w).unwrap();
    let mass: Real = gw.iter().sum();
    assert!((mass + 4.0).abs() < 1e-9, "{mass}");
    // exactly T - 1 links are taken on every path
    let gl: Real = g.grad(l).unwrap().iter().sum();
    assert!((gl + 3.0).abs() < 1e-9, "{gl}");
}

#[test]
fn table_gradients_match_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    for (s, t) in [(2, 2), (4, 3), (5, 2), (6, 4), (6, 6)] {
        let v = 3;
        let y = random_target(&mut rng, t, v);
        let word: Vec<Real> = (0..s * v).map(|_| rng.gen_range(-2.0..2.0)).collect();
        let link: Vec<Real> = (0..s * s).map(|_| rng.gen_range(-2.0..2.0)).collect();
        let report = check(&[(vec![s, v], word), (vec![s, s], link)], 1e-3, 1e-6, |g, ts| {
            dag_nll(g, ts[0], ts[1], &y).map_err(|e| match e {
                Error::Tensor(t) => t,
                other => panic!("{other}"),
            })
        })
        .unwrap();
        assert!(report.max_rel_err < 1e-4, "S={s} T={t}: {report:?}");
    }
}

#[test]
fn gradients_through_normalisation_match_finite_differences() {
    // raw scores -> log-softmax rows (links masked to later steps) -> loss
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let (s, v) = (5, 4);
    let y = [3, 1, 2];
    let word: Vec<Real> = (0..s * v).map(|_| rng.gen_range(-2.0..2.0)).collect();
    let link: Vec<Real> = (0..s * s).map(|_| rng.gen_range(-2.0..2.0)).collect();
    let mut mask = vec![Real::NEG_INFINITY; s * s];
    for i in 0..s {
        for j in i + 1..s {
            mask[i * s + j] = 0.0;
        }
    }
    let report = check(&[(vec![s, v], word), (vec![s, s], link)], 1e-3, 1e-6, |g, ts| {
        let w = g.log_softmax(ts[0], 1)?;
        let m = g.constant(&[s, s], mask.clone())?;
        let l = g.add(ts[1], m)?;
        let l = g.log_softmax(l, 1)?;
        Ok(dag_nll(g, w, l, &y).expect("valid target"))
    })
    .unwrap();
    assert!(report.max_rel_err < 1e-4, "{report:?}");
}

#[test]
fn raising_a_feasible_word_score_never_lowers_likelihood() {
    let mut rng = ChaCha8Rng::seed_from_u64(10);
    for _ in 0..20 {
        let (s, t, v) = (6, 3, 3);
        let dag = random_dag(&mut rng, s, v);
        let y = random_target(&mut rng, t, v);
        let base = dag_log_likelihood(&dag, &y).unwrap();
        for (ti, &w) in y.iter().enumerate() {
            for step in ti..s - (t - 1 - ti) {
                let mut word = dag.word_table().to_vec();
                word[step * v + w] += 0.5;
                let bumped = DagOutput::new(s, v, word, dag.link_table().to_vec()).unwrap();
                assert!(dag_log_likelihood(&bumped, &y).unwrap() >= base);
            }
        }
    }
}

#[test]
fn batch_loss_reductions() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let a = random_dag(&mut rng, 5, 3);
    let b = random_dag(&mut rng, 4, 3);
    let ya = vec![0, 2, 1];
    let yb = vec![1, 1];
    let one = batch_dag_loss(&[(&a, &ya)]).unwrap();
    assert_eq!(one.mean_nll, -dag_log_likelihood(&a, &ya).unwrap());
    assert_eq!(one.skipped, 0);
    let twice = batch_dag_loss(&[(&a, &ya), (&a, &ya)]).unwrap();
    assert!((twice.mean_nll - one.mean_nll).abs() < 1e-12);
    let ab = batch_dag_loss(&[(&a, &ya), (&b, &yb)]).unwrap();
    let ba = batch_dag_loss(&[(&b, &yb), (&a, &ya)]).unwrap();
    assert!((ab.mean_nll - ba.mean_nll).abs() < 1e-9);
    assert!((ab.per_token_nll * 5.0 - ab.mean_nll * 2.0).abs() < 1e-9);

    let too_long = vec![0; 6];
    let mixed = batch_dag_loss(&[(&a, &ya), (&b, &too_long)]).unwrap();
    assert_eq!(mixed.skipped, 1);
    assert_eq!(mixed.scored, 1);
    assert!(matches!(batch_dag_loss(&[(&b, &too_long)]), Err(Error::Empty(_))));
    assert!(matches!(batch_dag_loss(&[]), Err(Error::Empty(_))));
}

proptest! {
    #[test]
    fn recursion_equals_enumeration(seed in 0u64..10_000, s in 2usize..9, t_off in 0usize..7, v in 1usize..5) {
        let t = 2 + t_off % (s - 1);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let dag = random_dag(&mut rng, s, v);
        let y = random_target(&mut rng, t, v);
        let dp = dag_log_likelihood(&dag, &y).unwrap();
        prop_assert!((dp - by_enumeration(&dag, &y)).abs() <= 1e-9);
    }

    #[test]
    fn gradient_rows_are_posteriors(seed in 0u64..10_000, s in 2usize..8, t_off in 0usize..6) {
        let t = 2 + t_off % (s - 1);
        let v = 3;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let dag = random_dag(&mut rng, s, v);
        let y = random_target(&mut rng, t, v);
        let tab = tables(dag.word_table(), dag.link_table(), s, v, &y);
        let (dw, _) = posterior_grads(dag.word_table(), dag.link_table(), s, v, &y, &tab);
        // every path visits the first and last step exactly once
        let first_step: Real = (0..v).map(|w| dw[w]).sum();
        let last_step: Real = (0..v).map(|w| dw[(s - 1) * v + w]).sum();
        prop_assert!((first_step - 1.0).abs() < 1e-9);
        prop_assert!((last_step - 1.0).abs() < 1e-9);
        prop_assert!(dw.iter().all(|&g| (-1e-12..=t as Real + 1e-9).contains(&g)));
    }
}
