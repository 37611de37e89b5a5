use super::*;
use crate::data::{gen_corpus, SyntheticSpec};

fn corpus() -> Corpus {
    gen_corpus(&SyntheticSpec {
        concepts: 8,
        min_len: 2,
        max_len: 5,
        train_per_direction: 40,
        valid_per_direction: 4,
        test_per_direction: 6,
        ..SyntheticSpec::default()
    })
    .unwrap()
}

fn small_model() -> ModelConfig {
    ModelConfig {
        d_model: 8,
        n_heads: 2,
        n_enc_layers: 1,
        n_dec_layers: 1,
        ffn_width: 16,
        max_positions: 32,
        upsample_factor: 2.0,
        ..ModelConfig::default()
    }
}

fn short_train() -> TrainConfig {
    TrainConfig {
        warmup_updates: 2,
        total_updates: 6,
        token_budget: 40,
        checkpoint_interval: 3,
        keep_best: 2,
        log_interval: 1,
        ..TrainConfig::default()
    }
}

fn untrained(c: &Corpus) -> DatModel {
    DatModel::new(ModelConfig {
        vocab_size: c.vocab.len(),
        ..small_model()
    })
    .unwrap()
}

#[test]
fn report_covers_every_test_direction() {
    let c = corpus();
    let m = untrained(&c);
    for method in [DecodeMethod::Lookahead, DecodeMethod::NgramBeam] {
        let decode = DecodeConfig {
            method,
            ..DecodeConfig::default()
        };
        let r = evaluate(&m, &c, &decode, Some(3), 5).unwrap();
        assert_eq!(r.decoder, method_name(method));
        assert_eq!(r.directions.len(), 6);
        assert_eq!(r.directions.iter().filter(|d| d.supervised).count(), 4);
        assert!(r.directions.iter().all(|d| d.sentences == 3));
        let curve = r.preservation.unwrap();
        assert_eq!(curve.buckets.len(), 5);
        assert!(curve
            .buckets
            .iter()
            .filter_map(|b| b.ratio)
            .all(|x| (0.0..=1.0).contains(&x)));
    }
}

#[test]
fn bench_guards_and_sample_choice() {
    let c = corpus();
    let m = untrained(&c);
    let two = BenchConfig {
        batch_size: 2,
        ..BenchConfig::default()
    };
    assert!(matches!(
        bench(&m, None, &c, &DecodeConfig::default(), &two),
        Err(Error::Config(_))
    ));

    let cfg = BenchConfig {
        sentences: 8,
        warmup: 1,
        min_source_len: 4,
        ..BenchConfig::default()
    };
    let picked = bench_samples(&c, &cfg).unwrap();
    assert!(picked.len() <= 8 && !picked.is_empty());
    assert!(picked.iter().all(|s| s.x.len() >= 4));
    let too_long = BenchConfig {
        min_source_len: 99,
        ..cfg.clone()
    };
    assert!(bench_samples(&c, &too_long).is_err());

    let at = AtModel::new(m.config().clone()).unwrap();
    let r = bench(&m, Some(&at), &c, &DecodeConfig::default(), &cfg).unwrap();
    assert_eq!(r.decoder.sentences, picked.len());
    assert!(r.speedup.unwrap() > 0.0);
}

#[test]
fn ablation_has_one_row_per_variant() {
    let c = corpus();
    let dir = tempfile::tempdir().unwrap();
    let policy = BtPolicy {
        warmup_fraction: 0.3,
        ..BtPolicy::default()
    };
    let table = ablate(
        &c,
        &small_model(),
        &short_train(),
        &policy,
        &DecodeConfig::default(),
        &ABLATION_MODES,
        Some(2),
        Some(dir.path()),
    )
    .unwrap();
    let names: Vec<&str> = table.rows.iter().map(|r| r.variant.as_str()).collect();
    assert_eq!(
        names,
        ["PivotBT", "rand-lang & w/o pivot", "src-lang & w/o pivot", "w/o BT"]
    );
    assert_eq!(table.to_markdown().lines().count(), 6);
    for m in ["pivotbt", "rand-no-pivot", "src-no-pivot", "off"] {
        assert!(dir.path().join(m).join("report.json").exists());
        assert!(dir.path().join(m).join(FINAL_MODEL).exists());
    }
}

#[test]
fn resumed_directory_run_matches() {
    let c = corpus();
    let dir = tempfile::tempdir().unwrap();
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    let policy = BtPolicy::off();
    let straight = train_run(&c, &small_model(), &short_train(), &policy, Some(&a), None)
        .unwrap()
        .unwrap();
    let stopped = train_run(&c, &small_model(), &short_train(), &policy, Some(&b), Some(4)).unwrap();
    assert!(stopped.is_none());
    assert!(!b.join(FINAL_MODEL).exists());
    let resumed = resume_run(&c, &b, None).unwrap().unwrap();
    assert_eq!(straight.model.params(), resumed.model.params());
    assert_eq!(
        fs::read(a.join(FINAL_MODEL)).unwrap(),
        fs::read(b.join(FINAL_MODEL)).unwrap()
    );
}
