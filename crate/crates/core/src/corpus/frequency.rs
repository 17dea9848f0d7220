use std::collections::{HashMap, HashSet};
use std::io::BufRead;
use std::path::Path;

use super::{open, CorpusError, Result};

/// Lowercase word counts from a reference corpus; unknown words count 0.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct FrequencyTable {
    counts: HashMap<String, u64>,
}

impl FrequencyTable {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, word: &str, count: u64) {
        *self.counts.entry(word.to_lowercase()).or_insert(0) += count;
    }

    pub fn count(&self, word: &str) -> u64 {
        self.counts.get(&word.to_lowercase()).copied().unwrap_or(0)
    }

    pub fn len(&self) -> usize {
        self.counts.len()
    }

    pub fn is_empty(&self) -> bool {
        self.counts.is_empty()
    }

    /// Reads `word<TAB>count` lines.
    pub fn from_reader(reader: impl BufRead) -> Result<Self> {
        let mut table = Self::new();
        for (i, line) in reader.lines().enumerate() {
            let line = line.map_err(|source| CorpusError::Io {
                path: "<frequency>".into(),
                source,
            })?;
            if line.trim().is_empty() {
                continue;
            }
            let format = |message: String| CorpusError::Format {
                line: i + 1,
                message,
            };
            let (word, count) = line
                .split_once('\t')
                .ok_or_else(|| format("expected word<TAB>count".into()))?;
            let count: u64 = count
                .trim()
                .parse()
                .map_err(|_| format(format!("invalid count `{count}`")))?;
            table.insert(word, count);
        }
        Ok(table)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_reader(open(path)?)
    }
}

/// Lowercase stop words excluded from the handcrafted features.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Stopwords(HashSet<String>);

const ENGLISH: &str = "i me my myself we our ours ourselves you your yours yourself yourselves \
he him his himself she her hers herself it its itself they them their theirs themselves what \
which who whom this that these those am is are was were be been being have has had having do \
does did doing a an the and but if or because as until while of at by for with about against \
between into through during before after above below to from up down in out on off over under \
again further then once here there when where why how all any both each few more most other \
some such no nor not only own same so than too very s t can will just don should now";

impl Stopwords {
    pub fn none() -> Self {
        Self::default()
    }

    /// A standard English stop-word list.
    pub fn english() -> Self {
        Self::from_words(ENGLISH.split_whitespace())
    }

    pub fn from_words<'a>(words: impl IntoIterator<Item = &'a str>) -> Self {
        Self(words.into_iter().map(str::to_lowercase).collect())
    }

    pub fn contains(&self, word: &str) -> bool {
        self.0.contains(&word.to_lowercase())
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    /// One word per line.
    pub fn load(path: &Path) -> Result<Self> {
        let mut words = HashSet::new();
        for line in open(path)?.lines() {
            let line = line.map_err(|source| CorpusError::Io {
                path: path.to_path_buf(),
                source,
            })?;
            let w = line.trim();
            if !w.is_empty() {
                words.insert(w.to_lowercase());
            }
        }
        Ok(Self(words))
    }
}
