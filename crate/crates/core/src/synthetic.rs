//! Seeded toy corpora. In a separable group the correct candidate is a
//! passage word and every distractor is a word absent from the passage.

use crate::corpus::{build_tag_vocabs, build_vocab, Example, KnowledgeIndex, QuestionGroup, Token, Vocabulary};
use crate::featurize::{FeatureResources, FeaturizedGroup, Featurizer};
use crate::model::{ModelConfig, VocabSizes};
use crate::tensor::EngineRng;

pub const CONTENT_WORDS: [&str; 20] = [
    "apple", "river", "garden", "teacher", "bread", "window", "candle", "forest", "kitchen", "doctor",
    "pencil", "market", "winter", "guitar", "bottle", "village", "letter", "mirror", "ticket", "blanket",
];

const FILLER: [&str; 5] = ["the", "a", "was", "in", "with"];

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SyntheticShape {
    pub groups: usize,
    pub candidates: usize,
    /// Distinct content words per passage.
    pub passage_words: usize,
    pub labeled: bool,
}

impl Default for SyntheticShape {
    fn default() -> Self {
        Self {
            groups: 25,
            candidates: 2,
            passage_words: 4,
            labeled: true,
        }
    }
}

fn token(text: &str) -> Token {
    let pos = if FILLER.contains(&text) { "DT" } else { "NN" };
    Token::new(text, pos, "O")
}

/// `shape.groups` groups of `shape.candidates` examples; the correct
/// candidate position is random.
pub fn separable_groups(shape: SyntheticShape, rng: &mut EngineRng) -> Vec<QuestionGroup> {
    assert!(shape.candidates >= 1 && shape.passage_words + shape.candidates - 1 <= CONTENT_WORDS.len());
    (0..shape.groups)
        .map(|g| {
            let mut words: Vec<&str> = CONTENT_WORDS.to_vec();
            rng.shuffle(&mut words);
            let (inside, outside) = words.split_at(shape.passage_words);
            let mut passage = Vec::new();
            for w in inside {
                passage.push(token(FILLER[rng.below(FILLER.len())]));
                passage.push(token(w));
            }
            let question: Vec<Token> = ["which", "thing", "was", "there"].iter().map(|w| token(w)).collect();
            let correct = rng.below(shape.candidates);
            let mut distractors = outside.iter();
            let examples = (0..shape.candidates)
                .map(|c| {
                    let word = if c == correct {
                        inside[rng.below(inside.len())]
                    } else {
                        distractors.next().expect("enough distractors")
                    };
                    Example {
                        id: format!("g{g}-c{c}"),
                        passage: passage.clone(),
                        question: question.clone(),
                        answer: vec![token("the"), token(word)],
                        label: shape.labeled.then_some(u8::from(c == correct)),
                    }
                })
                .collect();
            QuestionGroup {
                group_id: format!("g{g}"),
                examples,
            }
        })
        .collect()
}

/// A few `RelatedTo` edges between neighbouring content words.
pub fn toy_knowledge() -> KnowledgeIndex {
    let mut index = KnowledgeIndex::new();
    for pair in CONTENT_WORDS.chunks(2) {
        index.add_edge("RelatedTo", pair[0], pair[1]);
    }
    index.add_edge("AtLocation", "bread", "kitchen");
    index.add_edge("AtLocation", "bread", "market");
    index
}

/// Vocabularies, featurized groups and a model config sized to them.
#[derive(Debug, Clone)]
pub struct Prepared {
    pub words: Vocabulary,
    pub pos: Vocabulary,
    pub ner: Vocabulary,
    pub groups: Vec<FeaturizedGroup>,
    pub config: ModelConfig,
}

pub fn prepare(
    raw: &[QuestionGroup],
    resources: &FeatureResources,
    base: ModelConfig,
    rng: &mut EngineRng,
) -> Prepared {
    let words = build_vocab(raw, 1);
    let (pos, ner) = build_tag_vocabs(raw);
    let groups = Featurizer {
        words: &words,
        pos: &pos,
        ner: &ner,
        resources,
        symmetric_contexts: true,
    }
    .featurize(raw, rng);
    let config = ModelConfig {
        vocab: VocabSizes {
            words: words.len(),
            pos: pos.len(),
            ner: ner.len(),
            relations: resources.knowledge.num_relations(),
        },
        ..base
    };
    Prepared {
        words,
        pos,
        ner,
        groups,
        config,
    }
}
