//! Corpus directory layout.
//!
//! ```text
//! manifest.json                 languages, hub, generator settings, directions per split
//! vocab.txt                     <pad> <s> </s> <unk>, one <2lang> tag per language, then words
//! <split>.<src>-<tgt>.<src>     source sentences, one per line
//! <split>.<src>-<tgt>.<tgt>     target sentences (no EOS), line-aligned with the source file
//! ```

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::synthetic::{Corpus, Oracle, Split, SyntheticSpec};
use super::{Direction, DirectionGraph, Sample, Vocabulary};
use crate::error::{Error, Result};

pub const MANIFEST_FILE: &str = "manifest.json";
pub const VOCAB_FILE: &str = "vocab.txt";
const FORMAT: &str = "mdat-corpus 1";
const SPLITS: [&str; 3] = ["train", "valid", "test"];

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Manifest {
    pub format: String,
    pub languages: Vec<String>,
    pub hub: String,
    pub spec: SyntheticSpec,
    /// split name -> directions written as "src-tgt"
    pub splits: BTreeMap<String, Vec<String>>,
}

fn direction_name(vocab: &Vocabulary, d: Direction) -> String {
    format!("{}-{}", vocab.language_name(d.src), vocab.language_name(d.tgt))
}

fn parse_direction(vocab: &Vocabulary, name: &str) -> Result<Direction> {
    let (s, t) = name
        .split_once('-')
        .ok_or_else(|| Error::Format(format!("direction `{name}` is not `src-tgt`")))?;
    Ok(Direction::new(vocab.language(s)?, vocab.language(t)?))
}

fn write(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn read(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| Error::io(path, e))
}

pub fn write_corpus(dir: &Path, corpus: &Corpus) -> Result<Manifest> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let vocab = &corpus.vocab;
    let mut splits = BTreeMap::new();
    for (name, split) in SPLITS.iter().zip([&corpus.train, &corpus.valid, &corpus.test]) {
        let mut names = Vec::new();
        for (&d, samples) in split {
            let dn = direction_name(vocab, d);
            let mut src = String::new();
            let mut tgt = String::new();
            for s in samples {
                src.push_str(&vocab.decode(&s.x));
                src.push('\n');
                tgt.push_str(&vocab.decode(s.target_words()));
                tgt.push('\n');
            }
            write(&dir.join(format!("{name}.{dn}.{}", vocab.language_name(d.src))), &src)?;
            write(&dir.join(format!("{name}.{dn}.{}", vocab.language_name(d.tgt))), &tgt)?;
            names.push(dn);
        }
        splits.insert(name.to_string(), names);
    }
    let manifest = Manifest {
        format: FORMAT.into(),
        languages: vocab.languages().to_vec(),
        hub: vocab.language_name(corpus.hub()).to_string(),
        spec: corpus.spec.clone(),
        splits,
    };
    write(&dir.join(VOCAB_FILE), &vocab.to_text())?;
    let mut json = serde_json::to_string_pretty(&manifest)?;
    json.push('\n');
    write(&dir.join(MANIFEST_FILE), &json)?;
    Ok(manifest)
}

pub fn read_corpus(dir: &Path) -> Result<Corpus> {
    let manifest: Manifest = serde_json::from_str(&read(&dir.join(MANIFEST_FILE))?)?;
    if manifest.format != FORMAT {
        return Err(Error::Format(format!(
            "unsupported corpus format `{}`",
            manifest.format
        )));
    }
    let vocab = Vocabulary::from_text(&read(&dir.join(VOCAB_FILE))?)?;
    if vocab.languages() != manifest.languages.as_slice() {
        return Err(Error::Format("manifest and vocabulary list different languages".into()));
    }
    let hub = vocab.language(&manifest.hub)?;
    let oracle = Oracle::new(&manifest.spec, &vocab)?;
    let mut loaded: Vec<Split> = Vec::new();
    for name in SPLITS {
        let mut split = Split::new();
        for dn in manifest.splits.get(name).map(Vec::as_slice).unwrap_or(&[]) {
            let d = parse_direction(&vocab, dn)?;
            let src_path = dir.join(format!("{name}.{dn}.{}", vocab.language_name(d.src)));
            let tgt_path = dir.join(format!("{name}.{dn}.{}", vocab.language_name(d.tgt)));
            let src = read(&src_path)?;
            let tgt = read(&tgt_path)?;
            let (src, tgt): (Vec<&str>, Vec<&str>) = (src.lines().collect(), tgt.lines().collect());
            if src.len() != tgt.len() {
                return Err(Error::Format(format!(
                    "{} has {} lines but {} has {}",
                    src_path.display(),
                    src.len(),
                    tgt_path.display(),
                    tgt.len()
                )));
            }
            let samples = src
                .iter()
                .zip(&tgt)
                .map(|(x, y)| Sample::from_text(&vocab, x, d.src, y, d.tgt))
                .collect::<Result<Vec<_>>>()?;
            split.insert(d, samples);
        }
        loaded.push(split);
    }
    let test = loaded.pop().unwrap_or_default();
    let valid = loaded.pop().unwrap_or_default();
    let train = loaded.pop().unwrap_or_default();
    let graph = DirectionGraph::new(vocab.languages().len(), hub, train.keys().copied())?;
    Ok(Corpus {
        spec: manifest.spec,
        vocab,
        graph,
        oracle,
        train,
        valid,
        test,
    })
}
