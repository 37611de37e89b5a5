use std::hint::black_box;

use criterion::{criterion_group, criterion_main, Criterion};
use mdat::dag::dag_log_likelihood;
use mdat::decoding::{lookahead, ngram_beam_search, DecodeConfig, DecodeMethod, Postprocess};
use mdat::experiment::language_models;
use mdat_bench::{first_test_sample, long_corpus, models};

fn decoders(c: &mut Criterion) {
    let corpus = long_corpus();
    let (dat, at) = models(&corpus);
    let s = first_test_sample(&corpus);
    let post = Postprocess {
        collapse_repeats: true,
        first_word: corpus.vocab.first_word(),
    };
    let dag = dat.predict(&s.x, s.tgt).unwrap();

    c.bench_function("dat_forward", |b| {
        b.iter(|| dat.predict(black_box(&s.x), s.tgt).unwrap())
    });
    c.bench_function("lookahead_walk", |b| b.iter(|| lookahead(black_box(&dag), &post)));
    let beam = DecodeConfig {
        method: DecodeMethod::NgramBeam,
        ..DecodeConfig::default()
    };
    let lms = language_models(&corpus, &beam).unwrap();
    for width in [2, 8] {
        let cfg = DecodeConfig {
            beam_width: width,
            ..beam.clone()
        };
        c.bench_function(&format!("ngram_beam_w{width}"), |b| {
            b.iter(|| ngram_beam_search(black_box(&dag), &cfg, lms.get(&s.tgt), &post).unwrap())
        });
    }
    c.bench_function("at_greedy", |b| {
        b.iter(|| at.greedy(black_box(&s.x), s.tgt, s.y.len(), false).unwrap())
    });
    c.bench_function("dag_log_likelihood", |b| {
        b.iter(|| dag_log_likelihood(black_box(&dag), &s.y).unwrap())
    });
}

criterion_group!(benches, decoders);
criterion_main!(benches);
