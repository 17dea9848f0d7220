use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use super::QuestionGroup;

pub const PAD: usize = 0;
pub const UNK: usize = 1;
const PAD_TOKEN: &str = "<pad>";
const UNK_TOKEN: &str = "<unk>";

/// Token ↔ index map with training-split frequencies. Index 0 is padding,
/// index 1 is unknown; corpus tokens start at 2 in first-occurrence order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(from = "VocabRepr", into = "VocabRepr")]
pub struct Vocabulary {
    tokens: Vec<String>,
    counts: Vec<u64>,
    index: HashMap<String, usize>,
}

#[derive(Serialize, Deserialize)]
struct VocabRepr {
    tokens: Vec<String>,
    counts: Vec<u64>,
}

impl From<VocabRepr> for Vocabulary {
    fn from(r: VocabRepr) -> Self {
        let index = r
            .tokens
            .iter()
            .enumerate()
            .skip(2)
            .map(|(i, t)| (t.clone(), i))
            .collect();
        Self {
            tokens: r.tokens,
            counts: r.counts,
            index,
        }
    }
}

impl From<Vocabulary> for VocabRepr {
    fn from(v: Vocabulary) -> Self {
        Self {
            tokens: v.tokens,
            counts: v.counts,
        }
    }
}

impl Vocabulary {
    /// Builds from a token stream, keeping tokens seen at least `min_count` times.
    pub fn from_tokens<'a>(tokens: impl IntoIterator<Item = &'a str>, min_count: u64) -> Self {
        let mut order: Vec<&str> = Vec::new();
        let mut counts: HashMap<&str, u64> = HashMap::new();
        for t in tokens {
            let c = counts.entry(t).or_insert(0);
            if *c == 0 {
                order.push(t);
            }
            *c += 1;
        }
        let mut vocab = Self {
            tokens: vec![PAD_TOKEN.into(), UNK_TOKEN.into()],
            counts: vec![0, 0],
            index: HashMap::new(),
        };
        for t in order {
            let c = counts[t];
            if c >= min_count.max(1) {
                vocab.index.insert(t.to_string(), vocab.tokens.len());
                vocab.tokens.push(t.to_string());
                vocab.counts.push(c);
            }
        }
        vocab
    }

    /// Index of `token`, or [`UNK`].
    pub fn get(&self, token: &str) -> usize {
        self.index.get(token).copied().unwrap_or(UNK)
    }

    pub fn contains(&self, token: &str) -> bool {
        self.index.contains_key(token)
    }

    pub fn token(&self, index: usize) -> &str {
        &self.tokens[index]
    }

    pub fn count(&self, index: usize) -> u64 {
        self.counts[index]
    }

    /// Number of rows including padding and unknown.
    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.len() <= 2
    }

    /// Corpus tokens (index ≥ 2) with their indices.
    pub fn words(&self) -> impl Iterator<Item = (usize, &str)> {
        self.tokens
            .iter()
            .enumerate()
            .skip(2)
            .map(|(i, t)| (i, t.as_str()))
    }
}

/// Word vocabulary over passage, question and answer text. Each group's
/// passage and question count once; every candidate answer counts.
pub fn build_vocab(groups: &[QuestionGroup], min_count: u64) -> Vocabulary {
    let mut stream: Vec<&str> = Vec::new();
    for g in groups {
        if let Some(first) = g.examples.first() {
            stream.extend(first.passage.iter().map(|t| t.text.as_str()));
            stream.extend(first.question.iter().map(|t| t.text.as_str()));
        }
        for e in &g.examples {
            stream.extend(e.answer.iter().map(|t| t.text.as_str()));
        }
    }
    Vocabulary::from_tokens(stream, min_count)
}

/// Part-of-speech and named-entity tag vocabularies.
pub fn build_tag_vocabs(groups: &[QuestionGroup]) -> (Vocabulary, Vocabulary) {
    let tokens = || {
        groups.iter().flat_map(|g| g.examples.iter()).flat_map(|e| {
            e.passage
                .iter()
                .chain(e.question.iter())
                .chain(e.answer.iter())
        })
    };
    (
        Vocabulary::from_tokens(tokens().map(|t| t.pos.as_str()), 1),
        Vocabulary::from_tokens(tokens().map(|t| t.ner.as_str()), 1),
    )
}

/// The `k` most frequent corpus-token indices; ties go to the earlier index.
pub fn top_k_tunable(vocab: &Vocabulary, k: usize) -> Vec<usize> {
    let available = vocab.len().saturating_sub(2);
    if k > available {
        log::warn!("requested {k} tunable embeddings but vocabulary has only {available}");
    }
    let mut ranked: Vec<usize> = (2..vocab.len()).collect();
    ranked.sort_by(|&a, &b| vocab.count(b).cmp(&vocab.count(a)).then(a.cmp(&b)));
    ranked.truncate(k);
    ranked.sort_unstable();
    ranked
}
