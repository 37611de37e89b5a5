use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::*;
use crate::data::{gen_corpus, Corpus, SyntheticSpec};
use crate::model::checkpoint::Checkpoint;
use crate::model::{DatModel, ModelConfig};
use crate::pivotbt::{BtMode, BtPolicy};

fn tiny_corpus(seed: u64) -> Corpus {
    gen_corpus(&SyntheticSpec {
        concepts: 8,
        min_len: 2,
        max_len: 4,
        train_per_direction: 60,
        valid_per_direction: 8,
        test_per_direction: 8,
        seed,
        ..SyntheticSpec::default()
    })
    .unwrap()
}

fn tiny_model(c: &Corpus, seed: u64) -> DatModel {
    DatModel::new(ModelConfig {
        d_model: 16,
        n_heads: 2,
        n_enc_layers: 1,
        n_dec_layers: 1,
        ffn_width: 32,
        vocab_size: c.vocab.len(),
        max_positions: 32,
        upsample_factor: 2.0,
        seed,
        ..ModelConfig::default()
    })
    .unwrap()
}

fn tiny_train(seed: u64, total: u64) -> TrainConfig {
    TrainConfig {
        peak_lr: 3e-3,
        warmup_updates: total.min(10),
        total_updates: total,
        token_budget: 60,
        seed,
        checkpoint_interval: 4,
        keep_best: 2,
        log_interval: 2,
        ..TrainConfig::default()
    }
}

fn bt_policy(mode: BtMode, weight: Real) -> BtPolicy {
    BtPolicy {
        mode,
        weight,
        warmup_fraction: 0.25,
        ..BtPolicy::default()
    }
}

#[test]
fn schedule_examples() {
    let cfg = TrainConfig {
        peak_lr: 5e-4,
        warmup_updates: 1000,
        ..TrainConfig::default()
    };
    assert!((lr_at(1000, &cfg) - 5e-4).abs() < 1e-15);
    assert!((lr_at(4000, &cfg) - 2.5e-4).abs() < 1e-15);
    assert!((lr_at(500, &cfg) - 2.5e-4).abs() < 1e-15);
    assert!(lr_at(1, &cfg) > 0.0);
}

#[test]
fn config_checks() {
    assert!(TrainConfig::default().validate().is_ok());
    let bad = [
        TrainConfig {
            warmup_updates: 30_000,
            ..TrainConfig::default()
        },
        TrainConfig {
            keep_best: 0,
            ..TrainConfig::default()
        },
        TrainConfig {
            peak_lr: 0.0,
            ..TrainConfig::default()
        },
    ];
    for cfg in bad {
        assert!(matches!(cfg.validate(), Err(Error::Config(_))));
    }
    let parsed: serde_json::Result<TrainConfig> = serde_json::from_str(r#"{"peak_lr": 1e-3, "lambda": 1}"#);
    assert!(parsed.is_err());
}

#[test]
fn adam_first_step_moves_by_lr() {
    // with bias correction the first step is lr · g / (|g| + eps)
    let mut p = ParamStore::new();
    let id = p.add("w", &[3], vec![1.0, 2.0, 3.0]);
    let mut g = p.zeros_like();
    g.value_mut(id).copy_from_slice(&[0.5, -2.0, 0.0]);
    let cfg = TrainConfig::default();
    let mut adam = Adam::new(&p);
    adam.update(&mut p, &g, 0.1, &cfg);
    let got = p.value(id);
    assert!((got[0] - 0.9).abs() < 1e-6);
    assert!((got[1] - 2.1).abs() < 1e-6);
    assert_eq!(got[2], 3.0);
    assert_eq!(adam.t, 1);
}

fn random_store(rng: &mut ChaCha8Rng) -> ParamStore {
    let mut p = ParamStore::new();
    p.add("a", &[2, 3], (0..6).map(|_| rng.gen_range(-1.0..1.0)).collect());
    p.add("b", &[4], (0..4).map(|_| rng.gen_range(-1.0..1.0)).collect());
    p
}

#[test]
fn averaging_examples() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let p = random_store(&mut rng);
    assert_eq!(average_params(&[&p]).unwrap(), p);

    let mut neg = p.clone();
    for id in neg.ids().collect::<Vec<_>>() {
        neg.value_mut(id).iter_mut().for_each(|v| *v = -*v);
    }
    let zero = average_params(&[&p, &neg]).unwrap();
    assert!(zero.ids().all(|id| zero.value(id).iter().all(|&v| v == 0.0)));

    let stores: Vec<ParamStore> = (0..5).map(|_| random_store(&mut rng)).collect();
    let mean = average_params(&stores.iter().collect::<Vec<_>>()).unwrap();
    for id in p.ids() {
        for i in 0..p.value(id).len() {
            let oracle = stores.iter().map(|s| s.value(id)[i]).sum::<Real>() / 5.0;
            assert!((mean.value(id)[i] - oracle).abs() <= 1e-12);
        }
    }

    let mut other = ParamStore::new();
    other.add("a", &[6], vec![0.0; 6]);
    assert!(average_params(&[&p, &other]).is_err());
    assert!(average_params(&[]).is_err());
}

#[test]
fn checkpoint_averaging_picks_the_best() {
    let c = tiny_corpus(1);
    let dir = tempfile::tempdir().unwrap();
    let mut paths = Vec::new();
    for (i, bleu) in [10.0, 30.0, 20.0].into_iter().enumerate() {
        let m = tiny_model(&c, i as u64 + 1);
        let path = dir.path().join(format!("c{i}.bin"));
        Checkpoint::from_dat(&m, serde_json::json!({ "valid_bleu": bleu }))
            .save(&path)
            .unwrap();
        paths.push(path);
    }
    let refs: Vec<&Path> = paths.iter().map(|p| p.as_path()).collect();
    let best = average_checkpoints(&refs, 1).unwrap();
    assert_eq!(best.params, *tiny_model(&c, 2).params());
    let two = average_checkpoints(&refs, 2).unwrap();
    let oracle = average_params(&[tiny_model(&c, 2).params(), tiny_model(&c, 3).params()]).unwrap();
    assert_eq!(two.params, oracle);
    assert_eq!(two.meta["averaged"], 2);
    assert!(average_checkpoints(&refs, 4).is_err());
    assert!(average_checkpoints(&refs, 0).is_err());
}

#[test]
fn loss_falls_over_fifty_updates() {
    let mut falling = 0;
    for seed in 1..=5 {
        let c = tiny_corpus(seed);
        let mut t = Trainer::new(tiny_model(&c, seed), &c, tiny_train(seed, 50), BtPolicy::off()).unwrap();
        let first = t.train_step().unwrap().l_real;
        let mut last = first;
        for _ in 1..50 {
            last = t.train_step().unwrap().l_real;
        }
        if last < first {
            falling += 1;
        }
    }
    assert!(falling >= 4, "loss fell on {falling} of 5 seeds");
}

fn run_to_end(policy: BtPolicy, total: u64) -> (ParamStore, Vec<StepRecord>) {
    let c = tiny_corpus(2);
    let mut t = Trainer::new(tiny_model(&c, 2), &c, tiny_train(2, total), policy).unwrap();
    let records = t.run(None, None).unwrap();
    (t.model().params().clone(), records)
}

#[test]
fn zero_weight_matches_no_back_translation() {
    let (off, _) = run_to_end(BtPolicy::off(), 12);
    let (zero, records) = run_to_end(bt_policy(BtMode::PivotBt, 0.0), 12);
    assert_eq!(off, zero);
    assert!(records.iter().any(|r| r.bt.is_some()));
}

#[test]
fn back_translation_changes_the_update() {
    let (off, _) = run_to_end(BtPolicy::off(), 12);
    let (on, records) = run_to_end(bt_policy(BtMode::PivotBt, 1.0), 12);
    assert_ne!(off, on);
    // warmup fraction 0.25 of 12 updates: back-translation from update 4
    let first_bt = records.iter().find(|r| r.bt.is_some()).unwrap().step;
    assert_eq!(first_bt, 4);
    assert!(records.iter().filter(|r| r.step < 4).all(|r| r.bt.is_none()));
}

#[test]
fn resumed_run_is_bit_identical() {
    let c = tiny_corpus(3);
    let policy = bt_policy(BtMode::PivotBt, 0.5);
    let dir = tempfile::tempdir().unwrap();
    let straight = dir.path().join("straight");
    let split = dir.path().join("split");

    let mut t = Trainer::new(tiny_model(&c, 3), &c, tiny_train(3, 12), policy.clone()).unwrap();
    t.run(None, Some(&straight)).unwrap();
    let (model_a, best_a) = t.finish().unwrap();

    let mut t = Trainer::new(tiny_model(&c, 3), &c, tiny_train(3, 12), policy).unwrap();
    // runs past its last save, then "crashes"
    t.run(Some(7), Some(&split)).unwrap();
    let state = TrainState::load(&split.join(STATE_FILE)).unwrap();
    assert_eq!(state.step, 7);
    let mut t = Trainer::resume(state, &c).unwrap();
    t.run(None, Some(&split)).unwrap();
    let (model_b, best_b) = t.finish().unwrap();

    assert_eq!(model_a.params(), model_b.params());
    assert_eq!(best_a, best_b);
    for name in [
        "checkpoint_000004.bin",
        "checkpoint_000008.bin",
        "checkpoint_000012.bin",
        METRICS_FILE,
    ] {
        let a = std::fs::read(straight.join(name)).unwrap();
        let b = std::fs::read(split.join(name)).unwrap();
        assert!(a == b, "{name} differs");
    }
}

#[test]
fn metrics_are_truncated_to_the_resumed_step() {
    let c = tiny_corpus(4);
    let dir = tempfile::tempdir().unwrap();
    let mut t = Trainer::new(tiny_model(&c, 4), &c, tiny_train(4, 12), BtPolicy::off()).unwrap();
    t.run(Some(4), Some(dir.path())).unwrap();
    let saved = TrainState::load(&dir.path().join(STATE_FILE)).unwrap();
    // keep going past the saved state, then resume from it
    t.run(Some(6), Some(dir.path())).unwrap();
    let mut t = Trainer::resume(saved, &c).unwrap();
    t.run(None, Some(dir.path())).unwrap();
    let steps: Vec<u64> = std::fs::read_to_string(dir.path().join(METRICS_FILE))
        .unwrap()
        .lines()
        .map(|l| serde_json::from_str::<StepRecord>(l).unwrap().step)
        .collect();
    assert_eq!(steps, vec![2, 4, 6, 8, 10, 12]);
}

#[test]
fn state_round_trips() {
    let c = tiny_corpus(5);
    let mut t = Trainer::new(
        tiny_model(&c, 5),
        &c,
        tiny_train(5, 8),
        bt_policy(BtMode::SrcNoPivot, 0.5),
    )
    .unwrap();
    t.run(Some(5), None).unwrap();
    let state = t.state();
    assert_eq!(state.best.len(), 1);
    let bytes = state.to_bytes().unwrap();
    assert_eq!(TrainState::from_bytes(&bytes).unwrap(), state);
    assert!(TrainState::from_bytes(&bytes[..bytes.len() - 1]).is_err());
    let mut wrong = bytes.clone();
    wrong[0] = b'X';
    assert!(TrainState::from_bytes(&wrong).is_err());
}

#[test]
fn metrics_carry_back_translation_fields_only_when_on() {
    let (_, off) = run_to_end(BtPolicy::off(), 8);
    let (_, on) = run_to_end(bt_policy(BtMode::RandNoPivot, 0.5), 8);
    let off_line = serde_json::to_value(off.last().unwrap()).unwrap();
    let on_line = serde_json::to_value(on.last().unwrap()).unwrap();
    for key in ["l_bt", "bt_samples", "bt_fallbacks", "bt_pivoted", "bt_decode_calls"] {
        assert!(off_line.get(key).is_none(), "{key}");
        assert!(on_line.get(key).is_some(), "{key}");
    }
    for key in ["step", "lr", "loss", "l_real", "skipped"] {
        assert!(off_line.get(key).is_some(), "{key}");
    }
    let back: StepRecord = serde_json::from_value(on_line).unwrap();
    assert_eq!(&back, on.last().unwrap());
}

#[test]
fn averaged_result_comes_from_the_kept_snapshots() {
    let c = tiny_corpus(6);
    let out = train(tiny_model(&c, 6), &c, BtPolicy::off(), tiny_train(6, 12), None).unwrap();
    assert_eq!(out.best.len(), 2);
    assert!(out.best[0].1 >= out.best[1].1);
    assert!(out.records.iter().filter(|r| r.valid_bleu.is_some()).count() == 3);
}

#[test]
fn baseline_loss_falls() {
    let c = tiny_corpus(7);
    let cfg = ModelConfig {
        vocab_size: c.vocab.len(),
        ..tiny_model(&c, 7).config().clone()
    };
    let at = crate::model::AtModel::new(cfg).unwrap();
    let (_, losses) = train_baseline(at, &c, &tiny_train(7, 30)).unwrap();
    assert_eq!(losses.len(), 30);
    assert!(losses[29] < losses[0], "{losses:?}");
}
