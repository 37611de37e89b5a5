//! Vocabulary, multilingual samples, synthetic corpora and batching.

mod batch;
mod files;
mod synthetic;

use std::collections::{BTreeSet, HashMap};
use std::fmt;

use serde::{Deserialize, Serialize};

pub use batch::{direction_weights, sample_batch, DEFAULT_TEMPERATURE};
pub use files::{read_corpus, write_corpus, Manifest, MANIFEST_FILE, VOCAB_FILE};
pub use synthetic::{gen_corpus, Corpus, Oracle, Split, SyntheticSpec, WordOrder};

use crate::error::{Error, Result};
use crate::model::{LanguageTag, BOS, EOS, FIRST_TAG, PAD, UNK};

pub const SPECIAL_TOKENS: [&str; 4] = ["<pad>", "<s>", "</s>", "<unk>"];

/// Token table: fixed specials, one tag per language, then words.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Vocabulary {
    tokens: Vec<String>,
    index: HashMap<String, usize>,
    languages: Vec<String>,
}

pub fn tag_token(language: &str) -> String {
    format!("<2{language}>")
}

impl Vocabulary {
    pub fn new(languages: &[String], words: &[String]) -> Result<Self> {
        let mut tokens: Vec<String> = SPECIAL_TOKENS.iter().map(|s| s.to_string()).collect();
        tokens.extend(languages.iter().map(|l| tag_token(l)));
        tokens.extend(words.iter().cloned());
        let mut index = HashMap::with_capacity(tokens.len());
        for (i, t) in tokens.iter().enumerate() {
            if t.is_empty() || t.chars().any(char::is_whitespace) {
                return Err(Error::Format(format!("token `{t}` is empty or contains whitespace")));
            }
            if index.insert(t.clone(), i).is_some() {
                return Err(Error::Format(format!("duplicate token `{t}`")));
            }
        }
        Ok(Vocabulary {
            tokens,
            index,
            languages: languages.to_vec(),
        })
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    /// First id that is neither reserved nor a language tag.
    pub fn first_word(&self) -> usize {
        FIRST_TAG + self.languages.len()
    }

    pub fn languages(&self) -> &[String] {
        &self.languages
    }

    pub fn language(&self, name: &str) -> Result<LanguageTag> {
        self.languages
            .iter()
            .position(|l| l == name)
            .map(|i| LanguageTag(i as u16))
            .ok_or_else(|| Error::UnknownLanguage {
                name: name.to_string(),
                known: self.languages.join(", "),
            })
    }

    pub fn language_name(&self, tag: LanguageTag) -> &str {
        &self.languages[tag.index()]
    }

    pub fn tags(&self) -> impl Iterator<Item = LanguageTag> {
        (0..self.languages.len() as u16).map(LanguageTag)
    }

    pub fn id(&self, token: &str) -> usize {
        self.index.get(token).copied().unwrap_or(UNK)
    }

    pub fn token(&self, id: usize) -> &str {
        self.tokens.get(id).map_or(SPECIAL_TOKENS[UNK], String::as_str)
    }

    pub fn words(&self) -> &[String] {
        &self.tokens[self.first_word()..]
    }

    /// Whitespace tokenisation; unknown tokens map to UNK.
    pub fn encode(&self, text: &str) -> Vec<usize> {
        text.split_whitespace().map(|t| self.id(t)).collect()
    }

    pub fn decode(&self, ids: &[usize]) -> String {
        ids.iter().map(|&i| self.token(i)).collect::<Vec<_>>().join(" ")
    }

    /// One token per line: the four specials, the language tags, the words.
    pub fn to_text(&self) -> String {
        let mut out = self.tokens.join("\n");
        out.push('\n');
        out
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let lines: Vec<&str> = text.lines().collect();
        for (i, s) in SPECIAL_TOKENS.iter().enumerate() {
            if lines.get(i) != Some(s) {
                return Err(Error::Format(format!("vocabulary line {} must be `{s}`", i + 1)));
            }
        }
        let mut languages = Vec::new();
        let mut rest = &lines[SPECIAL_TOKENS.len()..];
        while let Some(name) = rest
            .first()
            .and_then(|t| t.strip_prefix("<2"))
            .and_then(|t| t.strip_suffix('>'))
        {
            languages.push(name.to_string());
            rest = &rest[1..];
        }
        let words: Vec<String> = rest.iter().filter(|l| !l.is_empty()).map(|l| l.to_string()).collect();
        Vocabulary::new(&languages, &words)
    }
}

/// Ordered language pair.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Direction {
    pub src: LanguageTag,
    pub tgt: LanguageTag,
}

impl Direction {
    pub fn new(src: LanguageTag, tgt: LanguageTag) -> Self {
        Direction { src, tgt }
    }
}

impl fmt::Display for Direction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}->{}", self.src.0, self.tgt.0)
    }
}

/// One translation example. `y` ends with EOS.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct Sample {
    pub x: Vec<usize>,
    pub src: LanguageTag,
    pub y: Vec<usize>,
    pub tgt: LanguageTag,
}

impl Sample {
    /// `y` is given without EOS; it is appended here.
    pub fn new(x: Vec<usize>, src: LanguageTag, mut y: Vec<usize>, tgt: LanguageTag) -> Result<Self> {
        if src == tgt {
            return Err(Error::Config(format!("source and target language are both {}", src.0)));
        }
        if x.is_empty() {
            return Err(Error::Empty("source sentence"));
        }
        if y.is_empty() {
            return Err(Error::Empty("target sentence"));
        }
        if x.iter().chain(&y).any(|&w| w == PAD || w == BOS || w == EOS) {
            return Err(Error::Format("sentences may not contain PAD, BOS or EOS".into()));
        }
        y.push(EOS);
        Ok(Sample { x, src, y, tgt })
    }

    pub fn from_text(vocab: &Vocabulary, x: &str, src: LanguageTag, y: &str, tgt: LanguageTag) -> Result<Self> {
        Sample::new(vocab.encode(x), src, vocab.encode(y), tgt)
    }

    pub fn direction(&self) -> Direction {
        Direction::new(self.src, self.tgt)
    }

    /// Target without the trailing EOS.
    pub fn target_words(&self) -> &[usize] {
        &self.y[..self.y.len() - 1]
    }

    pub fn tokens(&self) -> usize {
        self.x.len() + self.y.len()
    }
}

/// Supervised directions of a training set, plus the hub language.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct DirectionGraph {
    languages: usize,
    hub: LanguageTag,
    edges: Vec<bool>,
}

impl DirectionGraph {
    pub fn new(languages: usize, hub: LanguageTag, directions: impl IntoIterator<Item = Direction>) -> Result<Self> {
        if hub.index() >= languages {
            return Err(Error::Config(format!("hub {} outside {languages} languages", hub.0)));
        }
        let mut edges = vec![false; languages * languages];
        for d in directions {
            if d.src.index() >= languages || d.tgt.index() >= languages || d.src == d.tgt {
                return Err(Error::Config(format!("invalid direction {d}")));
            }
            edges[d.src.index() * languages + d.tgt.index()] = true;
        }
        Ok(DirectionGraph { languages, hub, edges })
    }

    /// hub↔X for every other language X.
    pub fn hub_centric(languages: usize, hub: LanguageTag) -> Result<Self> {
        let others: Vec<LanguageTag> = (0..languages as u16).map(LanguageTag).filter(|&l| l != hub).collect();
        let dirs = others
            .iter()
            .flat_map(|&x| [Direction::new(hub, x), Direction::new(x, hub)]);
        Self::new(languages, hub, dirs)
    }

    pub fn contains(&self, src: LanguageTag, tgt: LanguageTag) -> bool {
        src.index() < self.languages
            && tgt.index() < self.languages
            && self.edges[src.index() * self.languages + tgt.index()]
    }

    pub fn hub(&self) -> LanguageTag {
        self.hub
    }

    pub fn languages(&self) -> usize {
        self.languages
    }

    pub fn directions(&self) -> BTreeSet<Direction> {
        let n = self.languages as u16;
        (0..n)
            .flat_map(|s| (0..n).map(move |t| Direction::new(LanguageTag(s), LanguageTag(t))))
            .filter(|d| self.contains(d.src, d.tgt))
            .collect()
    }
}
