//! Run configuration: a TOML file with one table per section, then
//! `--section.key value` overrides from the command line.

use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use serde::{Deserialize, Serialize};

use mdat::data::SyntheticSpec;
use mdat::decoding::DecodeConfig;
use mdat::experiment::BenchConfig;
use mdat::model::ModelConfig;
use mdat::pivotbt::BtPolicy;
use mdat::train::TrainConfig;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Paths {
    /// Corpus directory written by gen-corpus and read by every other command.
    pub corpus: PathBuf,
    /// Training output: checkpoints, metrics, state and the final model.
    pub out: PathBuf,
}

impl Default for Paths {
    fn default() -> Self {
        Paths {
            corpus: "corpus".into(),
            out: "run".into(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvalConfig {
    /// Test sentences per direction; 0 means all.
    pub limit: usize,
    /// Frequency buckets of the preservation curve.
    pub buckets: usize,
}

impl Default for EvalConfig {
    fn default() -> Self {
        EvalConfig { limit: 0, buckets: 10 }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub paths: Paths,
    pub corpus: SyntheticSpec,
    /// `vocab_size` is taken from the corpus and ignored here.
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub bt: BtPolicy,
    pub decode: DecodeConfig,
    pub eval: EvalConfig,
    pub bench: BenchConfig,
}

const SECTIONS: [&str; 8] = ["paths", "corpus", "model", "train", "bt", "decode", "eval", "bench"];

/// Split `--section.key value` (or `--section.key=value`) pairs out of the
/// arguments, leaving everything else for the argument parser.
pub fn extract_overrides(args: Vec<String>) -> (Vec<String>, Vec<(String, String)>) {
    let mut rest = Vec::with_capacity(args.len());
    let mut overrides = Vec::new();
    let mut it = args.into_iter();
    while let Some(arg) = it.next() {
        let key = arg.strip_prefix("--").filter(|k| {
            let section = k.split(['.', '=']).next().unwrap_or("");
            k.contains('.') && SECTIONS.contains(&section)
        });
        match key {
            Some(k) => match k.split_once('=') {
                Some((k, v)) => overrides.push((k.to_string(), v.to_string())),
                None => match it.next() {
                    Some(v) => overrides.push((k.to_string(), v)),
                    // let the parser report the dangling flag
                    None => rest.push(arg),
                },
            },
            None => rest.push(arg),
        }
    }
    (rest, overrides)
}

/// TOML literal if it parses as one, otherwise a string.
fn parse_value(raw: &str) -> toml::Value {
    let doc = format!("v = {raw}");
    match doc.parse::<toml::Table>() {
        Ok(mut t) => t.remove("v").unwrap_or_else(|| toml::Value::String(raw.into())),
        Err(_) => toml::Value::String(raw.into()),
    }
}

impl RunConfig {
    pub fn load(path: Option<&Path>, overrides: &[(String, String)]) -> Result<Self> {
        let mut table = match path {
            Some(p) => {
                let text = std::fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?;
                text.parse::<toml::Table>()
                    .with_context(|| format!("parsing {}", p.display()))?
            }
            None => toml::Table::new(),
        };
        for (key, raw) in overrides {
            let (section, field) = key.split_once('.').context("override without a section")?;
            if field.is_empty() || field.contains('.') {
                bail!("override `--{key}` must be --section.key");
            }
            let entry = table
                .entry(section.to_string())
                .or_insert_with(|| toml::Value::Table(toml::Table::new()));
            let Some(sec) = entry.as_table_mut() else {
                bail!("`{section}` is not a section");
            };
            sec.insert(field.to_string(), parse_value(raw));
        }
        let cfg: RunConfig = toml::Value::Table(table).try_into().context("invalid configuration")?;
        Ok(cfg)
    }

    /// Every section's own checks.
    pub fn validate(&self) -> mdat::Result<()> {
        self.corpus.validate()?;
        // the real vocabulary size is only known once the corpus exists
        ModelConfig {
            vocab_size: self.model.vocab_size.max(mdat::model::FIRST_TAG + 1),
            ..self.model.clone()
        }
        .validate()?;
        self.train.validate()?;
        self.bt.validate()?;
        self.decode.validate()?;
        self.bench.validate()
    }

    pub fn to_toml(&self) -> Result<String> {
        Ok(toml::to_string(self)?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn strings(xs: &[&str]) -> Vec<String> {
        xs.iter().map(|s| s.to_string()).collect()
    }

    #[test]
    fn overrides_are_pulled_out() {
        let (rest, ov) = extract_overrides(strings(&[
            "train",
            "--train.peak_lr",
            "1e-3",
            "--dry-run",
            "--bt.mode=off",
            "--force",
        ]));
        assert_eq!(rest, strings(&["train", "--dry-run", "--force"]));
        assert_eq!(
            ov,
            vec![
                ("train.peak_lr".into(), "1e-3".into()),
                ("bt.mode".into(), "off".into())
            ]
        );
    }

    #[test]
    fn overrides_apply_with_types() {
        let ov = vec![
            ("train.peak_lr".to_string(), "0.002".to_string()),
            ("bt.mode".to_string(), "rand-no-pivot".to_string()),
            (
                "corpus.word_orders".to_string(),
                r#"["identity", "reverse"]"#.to_string(),
            ),
            ("paths.out".to_string(), "somewhere".to_string()),
        ];
        let cfg = RunConfig::load(None, &ov).unwrap();
        assert_eq!(cfg.train.peak_lr, 0.002);
        assert_eq!(cfg.bt.mode, mdat::pivotbt::BtMode::RandNoPivot);
        assert_eq!(cfg.corpus.word_orders.len(), 2);
        assert_eq!(cfg.paths.out, PathBuf::from("somewhere"));
        assert_eq!(cfg.model, ModelConfig::default());
    }

    #[test]
    fn unknown_keys_are_rejected() {
        assert!(RunConfig::load(None, &[("train.lambda".into(), "1".into())]).is_err());
        assert!(RunConfig::load(None, &[("nosuch.key".into(), "1".into())]).is_err());
    }

    #[test]
    fn defaults_round_trip_and_validate() {
        let cfg = RunConfig::default();
        cfg.validate().unwrap();
        let text = cfg.to_toml().unwrap();
        let back: RunConfig = toml::from_str(&text).unwrap();
        assert_eq!(back, cfg);
    }
}
