use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{anyhow, Context};

use mdat::data::{gen_corpus, read_corpus, write_corpus, Corpus};
use mdat::decoding::{decode, DecodeConfig, DecodeMethod, Postprocess};
use mdat::experiment::{self, method_name, ABLATION_MODES, FINAL_MODEL};
use mdat::model::checkpoint::Checkpoint;
use mdat::model::{AtModel, DatModel};
use mdat::train::STATE_FILE;

use crate::config::RunConfig;
use crate::{Command, Common};

pub struct Failure {
    pub code: u8,
    pub error: anyhow::Error,
}

fn usage(error: anyhow::Error) -> Failure {
    Failure { code: 1, error }
}

fn runtime(error: anyhow::Error) -> Failure {
    Failure { code: 2, error }
}

impl From<mdat::Error> for Failure {
    fn from(e: mdat::Error) -> Self {
        match e {
            mdat::Error::Config(_) | mdat::Error::UnknownLanguage { .. } => usage(e.into()),
            other => runtime(other.into()),
        }
    }
}

type Outcome = Result<(), Failure>;

fn load_config(common: &Common, overrides: &[(String, String)]) -> Result<RunConfig, Failure> {
    let cfg = RunConfig::load(common.config.as_deref(), overrides).map_err(usage)?;
    cfg.validate()?;
    Ok(cfg)
}

fn is_non_empty_dir(dir: &Path) -> bool {
    fs::read_dir(dir).map(|mut d| d.next().is_some()).unwrap_or(false)
}

/// Refuse to write into a non-empty directory unless forced; with `force`
/// the directory is cleared first.
fn prepare_dir(dir: &Path, force: bool) -> Outcome {
    if is_non_empty_dir(dir) {
        if !force {
            return Err(usage(anyhow!(
                "{} is not empty (use --force to overwrite)",
                dir.display()
            )));
        }
        fs::remove_dir_all(dir)
            .with_context(|| format!("clearing {}", dir.display()))
            .map_err(runtime)?;
    }
    fs::create_dir_all(dir)
        .with_context(|| format!("creating {}", dir.display()))
        .map_err(runtime)
}

fn load_corpus(cfg: &RunConfig) -> Result<Corpus, Failure> {
    read_corpus(&cfg.paths.corpus).map_err(|e| runtime(anyhow!(e).context("reading the corpus (run gen-corpus first)")))
}

fn load_checkpoint(path: &Path) -> Result<Checkpoint, Failure> {
    if !path.is_file() {
        return Err(usage(anyhow!("checkpoint {} does not exist", path.display())));
    }
    Ok(Checkpoint::load(path)?)
}

fn check_vocab(model: &DatModel, corpus: &Corpus) -> Outcome {
    if model.config().vocab_size != corpus.vocab.len() {
        return Err(usage(anyhow!(
            "model vocabulary ({}) does not match the corpus vocabulary ({})",
            model.config().vocab_size,
            corpus.vocab.len()
        )));
    }
    Ok(())
}

fn write_text(path: &Path, text: &str) -> Outcome {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent)
            .with_context(|| format!("creating {}", parent.display()))
            .map_err(runtime)?;
    }
    fs::write(path, text)
        .with_context(|| format!("writing {}", path.display()))
        .map_err(runtime)
}

fn with_method(cfg: &RunConfig, method: Option<DecodeMethod>) -> DecodeConfig {
    DecodeConfig {
        method: method.unwrap_or(cfg.decode.method),
        ..cfg.decode.clone()
    }
}

pub fn run(command: Command, overrides: &[(String, String)]) -> Outcome {
    match command {
        Command::GenCorpus { common, force } => {
            cmd_gen_corpus(&load_config(&common, overrides)?, common.dry_run, force)
        }
        Command::Train {
            common,
            bt_mode,
            resume,
            force,
            until,
        } => {
            if resume && (bt_mode.is_some() || force) {
                return Err(usage(anyhow!("--resume takes its settings from the saved state")));
            }
            let mut cfg = load_config(&common, overrides)?;
            if let Some(m) = bt_mode {
                cfg.bt.mode = m;
            }
            cmd_train(&cfg, common.dry_run, resume, force, until)
        }
        Command::Translate {
            common,
            model,
            input,
            output,
            src,
            tgt,
            decode,
        } => {
            let cfg = load_config(&common, overrides)?;
            let decode = with_method(&cfg, decode);
            if common.dry_run {
                return Ok(());
            }
            cmd_translate(&cfg, &model, &input, &output, &src, &tgt, &decode)
        }
        Command::Evaluate {
            common,
            model,
            decode,
            report,
        } => {
            let cfg = load_config(&common, overrides)?;
            let decode = with_method(&cfg, decode);
            if common.dry_run {
                return Ok(());
            }
            let report = report.unwrap_or_else(|| {
                cfg.paths
                    .out
                    .join(format!("report_{}.json", method_name(decode.method)))
            });
            cmd_evaluate(&cfg, &model, &decode, &report)
        }
        Command::Bench {
            common,
            model,
            baseline,
            decode,
            batch_size,
            report,
        } => {
            let mut cfg = RunConfig::load(common.config.as_deref(), overrides).map_err(usage)?;
            if let Some(b) = batch_size {
                cfg.bench.batch_size = b;
            }
            cfg.validate()?;
            let decode = with_method(&cfg, decode);
            if common.dry_run {
                return Ok(());
            }
            let report = report.unwrap_or_else(|| {
                cfg.paths
                    .out
                    .join(format!("latency_{}.json", method_name(decode.method)))
            });
            cmd_bench(&cfg, &model, baseline.as_deref(), &decode, &report)
        }
        Command::Ablate { common, force } => {
            let cfg = load_config(&common, overrides)?;
            if common.dry_run {
                return Ok(());
            }
            cmd_ablate(&cfg, force)
        }
    }
}

fn cmd_gen_corpus(cfg: &RunConfig, dry_run: bool, force: bool) -> Outcome {
    let dir = &cfg.paths.corpus;
    if dry_run {
        println!("configuration ok; would write the corpus to {}", dir.display());
        return Ok(());
    }
    if is_non_empty_dir(dir) && !force {
        return Err(usage(anyhow!(
            "{} is not empty (use --force to overwrite)",
            dir.display()
        )));
    }
    // generate before touching the directory so a failure leaves it alone
    let corpus = gen_corpus(&cfg.corpus)?;
    prepare_dir(dir, force)?;
    let manifest = write_corpus(dir, &corpus)?;
    println!("corpus written to {} (hub {})", dir.display(), manifest.hub);
    for (split, data) in [
        ("train", &corpus.train),
        ("valid", &corpus.valid),
        ("test", &corpus.test),
    ] {
        let parts: Vec<String> = data
            .iter()
            .filter(|(_, v)| !v.is_empty())
            .map(|(d, v)| {
                format!(
                    "{}-{} {}",
                    corpus.vocab.language_name(d.src),
                    corpus.vocab.language_name(d.tgt),
                    v.len()
                )
            })
            .collect();
        println!("{split}: {}", parts.join(", "));
    }
    Ok(())
}

fn cmd_train(cfg: &RunConfig, dry_run: bool, resume: bool, force: bool, until: Option<u64>) -> Outcome {
    if dry_run {
        println!("configuration ok");
        return Ok(());
    }
    let out = &cfg.paths.out;
    let corpus = load_corpus(cfg)?;
    let outcome = if resume {
        if !out.join(STATE_FILE).is_file() {
            return Err(usage(anyhow!("no {STATE_FILE} in {} to resume from", out.display())));
        }
        experiment::resume_run(&corpus, out, until)?
    } else {
        prepare_dir(out, force)?;
        write_text(&out.join("run.toml"), &cfg.to_toml().map_err(runtime)?)?;
        experiment::train_run(&corpus, &cfg.model, &cfg.train, &cfg.bt, Some(out), until)?
    };
    let Some(outcome) = outcome else {
        println!("stopped; continue with --resume");
        return Ok(());
    };
    if let Some(last) = outcome.records.last() {
        println!("step {}: loss {:.4}", last.step, last.loss);
    }
    for (step, bleu) in &outcome.best {
        println!("kept step {step} (valid BLEU {bleu:.2})");
    }
    println!("model written to {}", out.join(FINAL_MODEL).display());
    Ok(())
}

fn cmd_translate(
    cfg: &RunConfig,
    model: &Path,
    input: &Path,
    output: &Path,
    src: &str,
    tgt: &str,
    decode_cfg: &DecodeConfig,
) -> Outcome {
    let corpus = load_corpus(cfg)?;
    corpus.vocab.language(src)?;
    let tgt = corpus.vocab.language(tgt)?;
    let model = load_checkpoint(model)?.into_dat()?;
    check_vocab(&model, &corpus)?;
    let text = fs::read_to_string(input)
        .with_context(|| format!("reading {}", input.display()))
        .map_err(usage)?;
    let lms = experiment::language_models(&corpus, decode_cfg)?;
    let post = Postprocess {
        collapse_repeats: decode_cfg.collapse_repeats,
        first_word: corpus.vocab.first_word(),
    };
    let mut out = String::new();
    for line in text.lines() {
        let x = corpus.vocab.encode(line);
        if !x.is_empty() {
            let dag = model.predict(&x, tgt)?;
            let ids = decode(&dag, decode_cfg, lms.get(&tgt), &post)?;
            out.push_str(&corpus.vocab.decode(&ids));
        }
        out.push('\n');
    }
    write_text(output, &out)
}

fn cmd_evaluate(cfg: &RunConfig, model: &Path, decode_cfg: &DecodeConfig, report_path: &Path) -> Outcome {
    let corpus = load_corpus(cfg)?;
    let model = load_checkpoint(model)?.into_dat()?;
    check_vocab(&model, &corpus)?;
    let limit = (cfg.eval.limit > 0).then_some(cfg.eval.limit);
    let report = experiment::evaluate(&model, &corpus, decode_cfg, limit, cfg.eval.buckets)?;
    for d in &report.directions {
        let kind = if d.supervised { "supervised" } else { "zero-shot" };
        println!("{} ({kind}): {:.2}", d.direction, d.bleu);
    }
    if let Some(b) = report.supervised_bleu {
        println!("supervised mean: {b:.2}");
    }
    if let Some(b) = report.zero_shot_bleu {
        println!("zero-shot mean: {b:.2}");
    }
    write_text(report_path, &report.to_json()?)?;
    println!("report written to {}", report_path.display());
    Ok(())
}

fn cmd_bench(
    cfg: &RunConfig,
    model: &Path,
    baseline: Option<&Path>,
    decode_cfg: &DecodeConfig,
    report_path: &Path,
) -> Outcome {
    let corpus = load_corpus(cfg)?;
    let model = load_checkpoint(model)?.into_dat()?;
    check_vocab(&model, &corpus)?;
    let at = match baseline {
        Some(p) => load_checkpoint(p)?.into_at()?,
        None => AtModel::new(model.config().clone())?,
    };
    let report = experiment::bench(&model, Some(&at), &corpus, decode_cfg, &cfg.bench)?;
    println!(
        "{}: {:.3} ms/sentence (p50 {:.3}, p95 {:.3}) over {} sentences",
        method_name(decode_cfg.method),
        report.decoder.mean_ms,
        report.decoder.p50_ms,
        report.decoder.p95_ms,
        report.decoder.sentences
    );
    if let (Some(b), Some(s)) = (&report.baseline, report.speedup) {
        println!("AT greedy: {:.3} ms/sentence, speedup {s:.2}x", b.mean_ms);
    }
    let text = serde_json::to_string_pretty(&report).map_err(|e| runtime(e.into()))?;
    write_text(report_path, &(text + "\n"))
}

fn cmd_ablate(cfg: &RunConfig, force: bool) -> Outcome {
    let out: PathBuf = cfg.paths.out.clone();
    let corpus = load_corpus(cfg)?;
    prepare_dir(&out, force)?;
    let limit = (cfg.eval.limit > 0).then_some(cfg.eval.limit);
    let table = experiment::ablate(
        &corpus,
        &cfg.model,
        &cfg.train,
        &cfg.bt,
        &cfg.decode,
        &ABLATION_MODES,
        limit,
        Some(&out),
    )?;
    let md = table.to_markdown();
    print!("{md}");
    write_text(&out.join("ablation.md"), &md)?;
    let json = serde_json::to_string_pretty(&table).map_err(|e| runtime(e.into()))?;
    write_text(&out.join("ablation.json"), &(json + "\n"))
}
