//! Per-token relation ids and handcrafted features, and padded batches.

use std::collections::HashSet;

use serde::{Deserialize, Serialize};

use crate::corpus::{FrequencyTable, KnowledgeIndex, QuestionGroup, Stopwords, Token, Vocabulary};
use crate::tensor::EngineRng;

/// Number of handcrafted features per token: log term frequency, co-occurrence.
pub const NUM_HANDCRAFTED: usize = 2;

/// Relation id for each token: one of the relations linking it to any
/// context word, 0 when none, a uniform draw from `rng` when several.
pub fn relation_ids(
    tokens: &[Token],
    context: &[&[Token]],
    index: &KnowledgeIndex,
    rng: &mut EngineRng,
) -> Vec<usize> {
    let context: Vec<String> = context
        .iter()
        .flat_map(|seq| seq.iter().map(Token::lower))
        .collect();
    let mut candidates: Vec<u32> = Vec::new();
    tokens
        .iter()
        .map(|t| {
            let word = t.lower();
            candidates.clear();
            for c in &context {
                for &id in index.lookup_ids(&word, c) {
                    if !candidates.contains(&id) {
                        candidates.push(id);
                    }
                }
            }
            match candidates.len() {
                0 => 0,
                1 => candidates[0] as usize,
                n => candidates[rng.below(n)] as usize,
            }
        })
        .collect()
}

/// `[ln(1 + count), co-occurs]` per token; stop words get `[0, 0]`.
/// Matching is case-insensitive.
pub fn handcrafted_features(
    tokens: &[Token],
    context: &[&[Token]],
    freq: &FrequencyTable,
    stopwords: &Stopwords,
) -> Vec<[f32; NUM_HANDCRAFTED]> {
    let context: HashSet<String> = context
        .iter()
        .flat_map(|seq| seq.iter().map(Token::lower))
        .collect();
    tokens
        .iter()
        .map(|t| {
            let word = t.lower();
            if stopwords.contains(&word) {
                return [0.0, 0.0];
            }
            let tf = (1.0 + freq.count(&word) as f64).ln() as f32;
            let co = if context.contains(&word) { 1.0 } else { 0.0 };
            [tf, co]
        })
        .collect()
}

/// Knowledge and term statistics consulted during featurization.
#[derive(Debug, Clone, Default)]
pub struct FeatureResources {
    pub knowledge: KnowledgeIndex,
    pub frequencies: FrequencyTable,
    pub stopwords: Stopwords,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeaturizedSeq {
    pub tokens: Vec<usize>,
    pub pos: Vec<usize>,
    pub ner: Vec<usize>,
    pub relations: Vec<usize>,
    pub features: Vec<[f32; NUM_HANDCRAFTED]>,
}

impl FeaturizedSeq {
    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeaturizedExample {
    pub group_id: String,
    pub example_id: String,
    pub label: Option<u8>,
    pub passage: FeaturizedSeq,
    pub question: FeaturizedSeq,
    pub answer: FeaturizedSeq,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeaturizedGroup {
    pub group_id: String,
    pub examples: Vec<FeaturizedExample>,
}

/// Maps annotated examples to index/feature sequences. Relation choices
/// are drawn once here and stay fixed for the run.
pub struct Featurizer<'a> {
    pub words: &'a Vocabulary,
    pub pos: &'a Vocabulary,
    pub ner: &'a Vocabulary,
    pub resources: &'a FeatureResources,
    /// When false only passage tokens get relation and co-occurrence
    /// features; question and answer tokens see no context.
    pub symmetric_contexts: bool,
}

impl Featurizer<'_> {
    fn sequence(&self, tokens: &[Token], context: &[&[Token]], rng: &mut EngineRng) -> FeaturizedSeq {
        FeaturizedSeq {
            tokens: tokens.iter().map(|t| self.words.get(&t.text)).collect(),
            pos: tokens.iter().map(|t| self.pos.get(&t.pos)).collect(),
            ner: tokens.iter().map(|t| self.ner.get(&t.ner)).collect(),
            relations: relation_ids(tokens, context, &self.resources.knowledge, rng),
            features: handcrafted_features(
                tokens,
                context,
                &self.resources.frequencies,
                &self.resources.stopwords,
            ),
        }
    }

    pub fn featurize_group(&self, group: &QuestionGroup, rng: &mut EngineRng) -> FeaturizedGroup {
        let examples = group
            .examples
            .iter()
            .map(|e| {
                let (p, q, a) = (&e.passage[..], &e.question[..], &e.answer[..]);
                let none: [&[Token]; 0] = [];
                let (qc, ac): (&[&[Token]], &[&[Token]]) = if self.symmetric_contexts {
                    (&[p, a], &[p, q])
                } else {
                    (&none, &none)
                };
                FeaturizedExample {
                    group_id: group.group_id.clone(),
                    example_id: e.id.clone(),
                    label: e.label,
                    passage: self.sequence(p, &[q, a], rng),
                    question: self.sequence(q, qc, rng),
                    answer: self.sequence(a, ac, rng),
                }
            })
            .collect();
        FeaturizedGroup {
            group_id: group.group_id.clone(),
            examples,
        }
    }

    pub fn featurize(&self, groups: &[QuestionGroup], rng: &mut EngineRng) -> Vec<FeaturizedGroup> {
        groups.iter().map(|g| self.featurize_group(g, rng)).collect()
    }
}

/// One sequence kind of a batch, right-padded to `len`.
#[derive(Debug, Clone, PartialEq)]
pub struct SeqBatch {
    pub len: usize,
    pub tokens: Vec<usize>,
    pub pos: Vec<usize>,
    pub ner: Vec<usize>,
    pub relations: Vec<usize>,
    /// `[B × L × 2]`
    pub features: Vec<f32>,
    /// `[B × L]`, true on real tokens.
    pub mask: Vec<bool>,
}

impl SeqBatch {
    fn pad(seqs: &[&FeaturizedSeq]) -> Self {
        let len = seqs.iter().map(|s| s.len()).max().unwrap_or(0);
        let cells = seqs.len() * len;
        let mut out = Self {
            len,
            tokens: vec![0; cells],
            pos: vec![0; cells],
            ner: vec![0; cells],
            relations: vec![0; cells],
            features: vec![0.0; cells * NUM_HANDCRAFTED],
            mask: vec![false; cells],
        };
        for (b, s) in seqs.iter().enumerate() {
            let base = b * len;
            let n = s.len();
            out.tokens[base..base + n].copy_from_slice(&s.tokens);
            out.pos[base..base + n].copy_from_slice(&s.pos);
            out.ner[base..base + n].copy_from_slice(&s.ner);
            out.relations[base..base + n].copy_from_slice(&s.relations);
            for (i, f) in s.features.iter().enumerate() {
                let at = (base + i) * NUM_HANDCRAFTED;
                out.features[at..at + NUM_HANDCRAFTED].copy_from_slice(f);
            }
            out.mask[base..base + n].fill(true);
        }
        out
    }

    pub fn batch_size(&self) -> usize {
        if self.len == 0 {
            0
        } else {
            self.mask.len() / self.len
        }
    }

    /// Number of real tokens in row `b`.
    pub fn row_len(&self, b: usize) -> usize {
        self.mask[b * self.len..(b + 1) * self.len]
            .iter()
            .filter(|&&m| m)
            .count()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Segment {
    Passage,
    Question,
    Answer,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Batch {
    pub passage: SeqBatch,
    pub question: SeqBatch,
    pub answer: SeqBatch,
    pub labels: Vec<Option<u8>>,
    pub group_ids: Vec<String>,
    pub example_ids: Vec<String>,
}

impl Batch {
    pub fn from_examples(examples: &[&FeaturizedExample]) -> Self {
        let pick = |f: fn(&FeaturizedExample) -> &FeaturizedSeq| {
            SeqBatch::pad(&examples.iter().map(|e| f(e)).collect::<Vec<_>>())
        };
        Self {
            passage: pick(|e| &e.passage),
            question: pick(|e| &e.question),
            answer: pick(|e| &e.answer),
            labels: examples.iter().map(|e| e.label).collect(),
            group_ids: examples.iter().map(|e| e.group_id.clone()).collect(),
            example_ids: examples.iter().map(|e| e.example_id.clone()).collect(),
        }
    }

    pub fn size(&self) -> usize {
        self.labels.len()
    }

    pub fn segment(&self, which: Segment) -> &SeqBatch {
        match which {
            Segment::Passage => &self.passage,
            Segment::Question => &self.question,
            Segment::Answer => &self.answer,
        }
    }

    /// All labels, or `None` if any is missing.
    pub fn label_vec(&self) -> Option<Vec<u8>> {
        self.labels.iter().copied().collect()
    }
}

/// Splits featurized groups into padded batches. With a generator the
/// individual examples are shuffled (training); without one, whole groups
/// are packed in order and never split across batches (evaluation).
pub fn make_batches(
    groups: &[FeaturizedGroup],
    batch_size: usize,
    shuffle: Option<&mut EngineRng>,
) -> Vec<Batch> {
    let batch_size = batch_size.max(1);
    match shuffle {
        Some(rng) => {
            let mut examples: Vec<&FeaturizedExample> =
                groups.iter().flat_map(|g| g.examples.iter()).collect();
            rng.shuffle(&mut examples);
            examples.chunks(batch_size).map(Batch::from_examples).collect()
        }
        None => {
            let mut batches = Vec::new();
            let mut current: Vec<&FeaturizedExample> = Vec::new();
            for g in groups {
                if !current.is_empty() && current.len() + g.examples.len() > batch_size {
                    batches.push(Batch::from_examples(&current));
                    current.clear();
                }
                current.extend(g.examples.iter());
            }
            if !current.is_empty() {
                batches.push(Batch::from_examples(&current));
            }
            batches
        }
    }
}

/// Examples chunked in order, without regard to group boundaries.
pub fn sequential_batches(groups: &[FeaturizedGroup], batch_size: usize) -> Vec<Batch> {
    let examples: Vec<&FeaturizedExample> = groups.iter().flat_map(|g| g.examples.iter()).collect();
    examples
        .chunks(batch_size.max(1))
        .map(Batch::from_examples)
        .collect()
}
