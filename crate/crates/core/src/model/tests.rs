use proptest::prelude::*;

use super::checkpoint::{Checkpoint, ModelKind};
use super::dat::link_log_probs;
use super::*;
use crate::tensor::{logsumexp_slice, Graph};

fn tiny(upsample: Real) -> ModelConfig {
    ModelConfig {
        d_model: 8,
        n_heads: 2,
        n_enc_layers: 1,
        n_dec_layers: 1,
        ffn_width: 16,
        vocab_size: 12,
        max_positions: 48,
        upsample_factor: upsample,
        dropout: 0.0,
        seed: 5,
    }
}

fn close(a: &[Real], b: &[Real], tol: Real) -> bool {
    a.len() == b.len() && a.iter().zip(b).all(|(x, y)| (x - y).abs() <= tol)
}

#[test]
fn encode_one_token_gives_one_state() {
    let m = DatModel::new(tiny(2.0)).unwrap();
    let mut g = Graph::inference();
    let enc = m.encode(&mut g, &[7], LanguageTag(1)).unwrap();
    assert_eq!(g.shape(enc), &[1, 8]);
}

#[test]
fn target_tag_changes_encoding() {
    let m = DatModel::new(tiny(2.0)).unwrap();
    let mut g = Graph::inference();
    let a = m.encode(&mut g, &[7, 8, 9], LanguageTag(0)).unwrap();
    let b = m.encode(&mut g, &[7, 8, 9], LanguageTag(1)).unwrap();
    let diff: Real = g.value(a).iter().zip(g.value(b)).map(|(x, y)| (x - y).abs()).sum();
    assert!(diff > 1e-3, "diff {diff}");
}

#[test]
fn padded_batch_matches_unbatched() {
    let m = DatModel::new(tiny(2.0)).unwrap();
    let short = [7usize, 8];
    let long = [9usize, 10, 11, 7, 8];
    let mut g = Graph::inference();
    let alone = m.encode(&mut g, &short, LanguageTag(1)).unwrap();
    let alone_long = m.encode(&mut g, &long, LanguageTag(0)).unwrap();
    let batch = m
        .encode_batch(&mut g, &[(&short, LanguageTag(1)), (&long, LanguageTag(0))])
        .unwrap();
    assert!(close(g.value(alone), g.value(batch[0]), 1e-6));
    assert!(close(g.value(alone_long), g.value(batch[1]), 1e-6));
    let one = m.encode_batch(&mut g, &[(&short, LanguageTag(1))]).unwrap();
    assert!(close(g.value(alone), g.value(one[0]), 1e-6));
}

#[test]
fn encode_rejects_bad_input() {
    let m = DatModel::new(tiny(2.0)).unwrap();
    let mut g = Graph::inference();
    assert!(matches!(
        m.encode(&mut g, &[12], LanguageTag(0)),
        Err(Error::OutOfVocabulary { id: 12, .. })
    ));
    assert!(matches!(m.encode(&mut g, &[], LanguageTag(0)), Err(Error::Empty(_))));
    let long = vec![7; 48];
    assert!(matches!(
        m.encode(&mut g, &long, LanguageTag(0)),
        Err(Error::TooLong { .. })
    ));
}

#[test]
fn step_count_follows_upsampling() {
    let m = DatModel::new(tiny(8.0)).unwrap();
    assert_eq!(m.steps_for(3), 24);
    assert_eq!(m.steps_for(100), 48);
    let m = DatModel::new(tiny(1.0)).unwrap();
    assert_eq!(m.steps_for(1), 2);
    let m = DatModel::new(tiny(1.5)).unwrap();
    assert_eq!(m.steps_for(3), 5);
}

#[test]
fn predicted_tables_are_normalised() {
    let m = DatModel::new(tiny(8.0)).unwrap();
    let out = m.predict(&[7, 8, 9], LanguageTag(2)).unwrap();
    assert_eq!(out.steps(), 24);
    out.validate(1e-9).unwrap();
    for s in 0..24 {
        let p: Real = out.word_row(s).iter().map(|v| v.exp()).sum();
        assert!((p - 1.0).abs() < 1e-9);
        let finite = out.link_row(s).iter().filter(|v| v.is_finite()).count();
        assert_eq!(finite, 24 - 1 - s);
    }
}

#[test]
fn two_steps_force_the_only_link() {
    let mut g = Graph::new();
    let h = g.constant(&[2, 3], vec![0.3, -1.0, 2.0, 0.5, 0.1, -0.7]).unwrap();
    let w = g
        .constant(&[3, 3], vec![0.2, 0.1, -0.4, 1.0, 0.3, 0.0, -0.5, 0.8, 0.6])
        .unwrap();
    let link = link_log_probs(&mut g, h, w, w, 2).unwrap();
    assert_eq!(g.value(link)[1], 0.0);
}

#[test]
fn equal_scores_give_uniform_links() {
    let s = 5;
    let mut g = Graph::new();
    let mut eye = vec![0.0; s * s];
    for i in 0..s {
        eye[i * s + i] = 1.0;
    }
    let h = g.constant(&[s, s], eye.clone()).unwrap();
    let w = g.constant(&[s, s], eye).unwrap();
    let link = link_log_probs(&mut g, h, w, w, s).unwrap();
    let v = g.value(link);
    for i in 0..s - 1 {
        let expect = -((s - 1 - i) as Real).ln();
        for j in i + 1..s {
            assert!((v[i * s + j] - expect).abs() < 1e-12);
        }
    }
}

#[test]
fn at_step_distribution_is_normalised() {
    let m = AtModel::new(tiny(2.0)).unwrap();
    let mut g = Graph::inference();
    let enc = m.encode(&mut g, &[7, 8], LanguageTag(1)).unwrap();
    let p = m.decode_ar_step(&mut g, enc, &[BOS, 9, 10]).unwrap();
    assert_eq!(g.shape(p), &[1, 12]);
    assert!(logsumexp_slice(g.value(p)).abs() < 1e-9);
    assert!(m.decode_ar_step(&mut g, enc, &[9]).is_err());
    assert!(matches!(
        m.decode_ar_step(&mut g, enc, &vec![BOS; 49]),
        Err(Error::TooLong { .. })
    ));
}

#[test]
fn at_greedy_is_deterministic() {
    let a = AtModel::new(tiny(2.0)).unwrap();
    let b = AtModel::new(tiny(2.0)).unwrap();
    let x = [7, 8, 9];
    let ya = a.greedy(&x, LanguageTag(0), 10, false).unwrap();
    assert_eq!(ya.len(), 10);
    assert_eq!(ya, b.greedy(&x, LanguageTag(0), 10, false).unwrap());
}

#[test]
fn teacher_forcing_sums_step_scores() {
    let m = AtModel::new(tiny(2.0)).unwrap();
    let x = [7, 8];
    let y = [9, 11, 10, EOS];
    let mut g = Graph::inference();
    let enc = m.encode(&mut g, &x, LanguageTag(2)).unwrap();
    let total = m.teacher_forced_log_likelihood(&mut g, enc, &y).unwrap();
    let total = g.scalar(total);
    let mut prefix = vec![BOS];
    let mut stepwise = 0.0;
    for &w in &y {
        let p = m.decode_ar_step(&mut g, enc, &prefix).unwrap();
        stepwise += g.value(p)[w];
        prefix.push(w);
    }
    assert!((total - stepwise).abs() < 1e-9, "{total} vs {stepwise}");
}

#[test]
fn dag_output_from_logits_normalises() {
    let words = vec![1.0, 2.0, 3.0, 0.0, 0.0, 0.0, -1.0, 5.0, 2.0];
    let links: Vec<Real> = (0..9).map(|i| i as Real * 0.3).collect();
    let dag = DagOutput::from_logits(3, 3, &words, &links).unwrap();
    dag.validate(1e-12).unwrap();
    assert_eq!(dag.link(1, 2), 0.0);
    assert!((dag.link(0, 1) - (0.3 - logsumexp_slice(&[0.3, 0.6]))).abs() < 1e-12);
    assert!(DagOutput::from_logits(1, 3, &words[..3], &[0.0]).is_err());
}

#[test]
fn checkpoint_round_trip() {
    let m = DatModel::new(tiny(3.0)).unwrap();
    let ck = Checkpoint::from_dat(&m, serde_json::json!({"step": 7}));
    let bytes = ck.to_bytes().unwrap();
    assert_eq!(&bytes[..8], b"MDATCKPT");
    assert_eq!(&bytes[8..12], &[1, 0, 0, 0]);
    assert_eq!(&bytes[12..16], &[4, 3, 2, 1]);
    let back = Checkpoint::from_bytes(&bytes).unwrap();
    assert_eq!(back, ck);
    assert_eq!(back.kind, ModelKind::Dat);
    let model = back.clone().into_dat().unwrap();
    assert_eq!(model.params(), m.params());
    assert!(back.into_at().is_err());

    let mut corrupt = bytes.clone();
    corrupt.push(0);
    assert!(Checkpoint::from_bytes(&corrupt).is_err());
    assert!(Checkpoint::from_bytes(&bytes[..bytes.len() - 3]).is_err());
    let mut wrong_version = bytes;
    wrong_version[8] = 9;
    assert!(Checkpoint::from_bytes(&wrong_version).is_err());
}

#[test]
fn at_checkpoint_round_trip() {
    let m = AtModel::new(tiny(2.0)).unwrap();
    let ck = Checkpoint::from_at(&m, serde_json::Value::Null);
    let back = Checkpoint::from_bytes(&ck.to_bytes().unwrap()).unwrap();
    assert_eq!(back.into_at().unwrap().params(), m.params());
}

#[test]
fn from_params_rejects_other_layouts() {
    let small = DatModel::new(tiny(2.0)).unwrap();
    let mut cfg = tiny(2.0);
    cfg.d_model = 4;
    assert!(DatModel::from_params(cfg, small.into_params()).is_err());
}

#[test]
fn config_validation() {
    let mut cfg = tiny(2.0);
    cfg.n_heads = 3;
    assert!(cfg.validate().is_err());
    let mut cfg = tiny(0.5);
    assert!(cfg.validate().is_err());
    cfg.upsample_factor = 2.0;
    cfg.vocab_size = 4;
    assert!(cfg.validate().is_err());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn forward_pass_keeps_table_invariants(
        heads in 1usize..3,
        layers in 0usize..3,
        upsample in 1.0f64..4.0,
        seed in 0u64..1000,
        x in proptest::collection::vec(FIRST_TAG + 3..16usize, 1..6),
        tag in 0u16..3,
    ) {
        let cfg = ModelConfig {
            d_model: 4 * heads,
            n_heads: heads,
            n_enc_layers: layers,
            n_dec_layers: layers,
            ffn_width: 8,
            vocab_size: 16,
            max_positions: 32,
            upsample_factor: upsample,
            dropout: 0.0,
            seed,
        };
        let m = DatModel::new(cfg.clone()).unwrap();
        let out = m.predict(&x, LanguageTag(tag)).unwrap();
        prop_assert_eq!(out.steps(), cfg.steps_for(x.len()));
        prop_assert!(out.validate(1e-9).is_ok());
    }
}
