//! Synthetic corpora, training runs and counting helpers.

use trian::corpus::{top_k_tunable, Example, QuestionGroup, Token};
use trian::featurize::{Batch, FeatureResources, FeaturizedExample};
use trian::model::{Ablation, Model, ModelConfig};
use trian::optim::{train, TrainData, TrainOutcome, TrainPlan};
use trian::synthetic::{prepare, separable_groups, toy_knowledge, Prepared, SyntheticShape, CONTENT_WORDS};
use trian::EngineRng;

fn random_tokens(rng: &mut EngineRng, max_len: usize) -> Vec<Token> {
    let pool: Vec<&str> = CONTENT_WORDS.iter().copied().chain(["the", "a", "of"]).collect();
    (0..1 + rng.below(max_len))
        .map(|_| {
            let w = pool[rng.below(pool.len())];
            Token::new(w, if w.len() > 3 { "NN" } else { "DT" }, if rng.below(4) == 0 { "LOC" } else { "O" })
        })
        .collect()
}

/// One group with random lengths and 1..=3 candidates.
pub fn random_group(rng: &mut EngineRng, id: usize) -> QuestionGroup {
    let passage = random_tokens(rng, 12);
    let question = random_tokens(rng, 5);
    let candidates = 1 + rng.below(3);
    QuestionGroup {
        group_id: format!("g{id}"),
        examples: (0..candidates)
            .map(|c| Example {
                id: format!("g{id}-{c}"),
                passage: passage.clone(),
                question: question.clone(),
                answer: random_tokens(rng, 4),
                label: Some(u8::from(c == 0)),
            })
            .collect(),
    }
}

/// Largest |p(padded batch) - p(alone)| over `fixtures` random f64 models,
/// alternating one and two attention layers.
pub fn padding_worst(fixtures: u64) -> f64 {
    let resources = FeatureResources {
        knowledge: toy_knowledge(),
        ..Default::default()
    };
    let mut worst = 0.0f64;
    for fixture in 0..fixtures {
        let mut rng = EngineRng::seed(1000 + fixture);
        let raw: Vec<QuestionGroup> = (0..3).map(|i| random_group(&mut rng, i)).collect();
        let mut base = ModelConfig::micro();
        base.num_attention_layers = 1 + (fixture % 2) as usize;
        let prep = prepare(&raw, &resources, base, &mut rng);
        let model = Model::<f64>::new(prep.config.clone(), &mut rng, None).unwrap();
        let all: Vec<&FeaturizedExample> = prep.groups.iter().flat_map(|g| &g.examples).collect();
        let padded = model.predict(&Batch::from_examples(&all)).unwrap();
        for (i, ex) in all.iter().enumerate() {
            let alone = model.predict(&Batch::from_examples(&[*ex])).unwrap()[0];
            worst = worst.max((alone - padded[i]).abs());
        }
    }
    worst
}

/// The default separable set (25 groups, 50 examples), featurized, with a
/// fresh model.
pub fn setup(seed: u64, base: ModelConfig) -> (Prepared, Model<f32>, EngineRng) {
    let mut rng = EngineRng::seed(seed);
    let raw = separable_groups(SyntheticShape::default(), &mut rng);
    let resources = FeatureResources {
        knowledge: toy_knowledge(),
        ..Default::default()
    };
    let prep = prepare(&raw, &resources, base, &mut rng);
    let model = Model::new(prep.config.clone(), &mut rng, None).unwrap();
    (prep, model, rng)
}

/// Trains on the prepared set, using it as dev too.
pub fn run(prep: &Prepared, model: &mut Model<f32>, rng: &mut EngineRng, plan: &TrainPlan, k: usize) -> TrainOutcome<f32> {
    let tunable = top_k_tunable(&prep.words, k);
    train(
        plan,
        model,
        TrainData {
            train: &prep.groups,
            dev: &prep.groups,
            pretrain: None,
            tunable_rows: &tunable,
        },
        rng,
        |_| {},
    )
    .unwrap()
}

pub fn plan(epochs: usize) -> TrainPlan {
    TrainPlan {
        epochs,
        ..TrainPlan::default()
    }
}

/// Rows of a 2-d parameter that differ between two models.
pub fn changed_rows(a: &Model<f32>, b: &Model<f32>, name: &str) -> usize {
    let (ta, tb) = (a.params().by_name(name).unwrap(), b.params().by_name(name).unwrap());
    let w = ta.shape()[1];
    ta.data()
        .chunks(w)
        .zip(tb.data().chunks(w))
        .filter(|(x, y)| x != y)
        .count()
}

/// `(d_in, total parameters)` from the architecture description,
/// independent of `ModelConfig::param_shapes`.
pub fn counted(c: &ModelConfig) -> (usize, usize) {
    let a = &c.ablation;
    let on = |f: bool, n: usize| if f { n } else { 0 };
    let d_in = c.glove_dim + on(a.use_pos, c.pos_dim) + on(a.use_ner, c.ner_dim) + on(a.use_conceptnet, c.rel_dim) + on(a.use_features, 2);
    let h = c.hidden;
    let lstm = |d: usize| 2 * (d * 4 * h + h * 4 * h + 4 * h);
    let mut body = 0;
    for layer in 1..=c.num_attention_layers {
        let (base, att) = if layer == 1 { (d_in, c.glove_dim) } else { (2 * h, 2 * h) };
        let attns = [a.use_pq_attention, a.use_pa_attention, a.use_qa_attention];
        body += if c.share_word_attention {
            on(attns.iter().any(|&x| x), att * att)
        } else {
            attns.iter().map(|&x| on(x, att * att)).sum()
        };
        body += lstm(base);
        body += lstm(base + on(a.use_pq_attention, att));
        body += lstm(base + on(a.use_pa_attention, att) + on(a.use_qa_attention, att));
    }
    let e = 2 * h;
    body += e * e + e + e + e * e + e * e;
    let v = &c.vocab;
    let embed = v.words * c.glove_dim
        + on(a.use_pos, v.pos * c.pos_dim)
        + on(a.use_ner, v.ner * c.ner_dim)
        + on(a.use_conceptnet, v.relations * c.rel_dim);
    (d_in, body + embed)
}

/// Default config with one ablation edit.
pub fn with(f: impl FnOnce(&mut Ablation)) -> ModelConfig {
    let mut c = ModelConfig::default();
    f(&mut c.ablation);
    c
}

/// Reference ablations: name, config, d_in, non-embedding parameters removed.
pub fn ablation_table() -> Vec<(&'static str, ModelConfig, usize, usize)> {
    vec![
        ("no-conceptnet", with(|a| a.use_conceptnet = false), 322, 23_040),
        ("no-pos", with(|a| a.use_pos = false), 320, 27_648),
        ("no-ner", with(|a| a.use_ner = false), 324, 18_432),
        ("no-features", with(|a| a.use_features = false), 330, 4_608),
        ("no-pq", with(|a| a.use_pq_attention = false), 332, 320_400),
        ("no-pa", with(|a| a.use_pa_attention = false), 332, 320_400),
        ("no-qa", with(|a| a.use_qa_attention = false), 332, 320_400),
        (
            "no-word-attention",
            with(|a| {
                a.use_pq_attention = false;
                a.use_pa_attention = false;
                a.use_qa_attention = false;
            }),
            332,
            961_200,
        ),
    ]
}

pub const TWO_LAYER_EXTRA_PARAMS: usize = 1_218_816;
