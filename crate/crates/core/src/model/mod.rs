//! The three-way attentive network.
//!
//! Per token, the input representation concatenates the word vector, part
//! of speech and named-entity embeddings, the relation embedding and the
//! handcrafted features. Word-level sequence attentions align passage to
//! question and answer to passage and question; three BiLSTMs encode the
//! question, the passage (with its question-aware vectors) and the answer
//! (with its passage- and question-aware vectors). Self-attention reduces
//! question and answer to single vectors, a question-conditioned sequence
//! attention reduces the passage, and two bilinear terms give the logit.

mod config;
pub mod layers;

pub use config::{Ablation, LayerWidths, ModelConfig, VocabSizes};
pub use layers::{bilstm, expand_mask, lstm, lstm_cell, self_attention, seq_attention, LstmParams};

use crate::corpus::{EmbeddingTable, PAD};
use crate::featurize::{Batch, Segment, NUM_HANDCRAFTED};
use crate::tensor::{EngineRng, ParamStore, Scalar, Tape, Tensor, TensorError, Var};

/// Non-embedding parameter count of [`ModelConfig::default`].
pub const DEFAULT_NON_EMBEDDING_PARAMS: usize = 2_060_592;

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum ModelError {
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error("invalid model config: {0}")]
    Config(String),
    #[error("parameter `{name}` has shape {found:?}, expected {expected:?}")]
    ShapeMismatch {
        name: String,
        expected: Vec<usize>,
        found: Vec<usize>,
    },
    #[error("missing parameter `{0}`")]
    MissingParam(String),
    #[error("cannot choose from an empty group")]
    EmptyGroup,
}

pub type Result<T> = std::result::Result<T, ModelError>;

/// Intermediate sequence encodings of one attention layer.
#[derive(Clone, Copy)]
struct Encoded {
    question: Var,
    passage: Var,
    answer: Var,
}

#[derive(Debug, Clone)]
pub struct Model<T> {
    config: ModelConfig,
    params: ParamStore<T>,
}

impl<T: Scalar> Model<T> {
    /// Randomly initialized model. `words` replaces the word-embedding
    /// initialization when given.
    pub fn new(config: ModelConfig, rng: &mut EngineRng, words: Option<&EmbeddingTable>) -> Result<Self> {
        config.validate()?;
        let mut params = ParamStore::new();
        for (name, shape) in config.param_shapes() {
            let tensor = init_param(&name, &shape, rng, words)?;
            params.insert(name, tensor.with_grad(true))?;
        }
        Ok(Self { config, params })
    }

    /// Wraps existing parameters after checking them against `config`.
    pub fn from_params(config: ModelConfig, params: ParamStore<T>) -> Result<Self> {
        config.validate()?;
        verify_shapes(&config, &params)?;
        Ok(Self { config, params })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn params(&self) -> &ParamStore<T> {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamStore<T> {
        &mut self.params
    }

    pub fn into_params(self) -> ParamStore<T> {
        self.params
    }

    pub fn cast<U: Scalar>(&self) -> Model<U> {
        Model {
            config: self.config.clone(),
            params: self.params.cast(),
        }
    }

    fn param(&self, tape: &mut Tape<T>, name: &str) -> Result<Var> {
        let id = self
            .params
            .id(name)
            .ok_or_else(|| ModelError::MissingParam(name.to_string()))?;
        Ok(tape.param(&self.params, id))
    }

    fn lookup(&self, tape: &mut Tape<T>, name: &str, indices: &[usize], prefix: &[usize]) -> Result<Var> {
        let id = self
            .params
            .id(name)
            .ok_or_else(|| ModelError::MissingParam(name.to_string()))?;
        Ok(tape.embedding(&self.params, id, indices, prefix)?)
    }

    fn lstm_params(&self, tape: &mut Tape<T>, prefix: &str) -> Result<LstmParams> {
        Ok(LstmParams {
            w_ih: self.param(tape, &format!("{prefix}.w_ih"))?,
            w_hh: self.param(tape, &format!("{prefix}.w_hh"))?,
            bias: self.param(tape, &format!("{prefix}.bias"))?,
        })
    }

    /// Per-token input representation `[B × L × d_in]` (before dropout).
    /// Disabled components are left out of the concatenation.
    pub fn input_representation(&self, tape: &mut Tape<T>, batch: &Batch, which: Segment) -> Result<Var> {
        let seg = batch.segment(which);
        let prefix = [batch.size(), seg.len];
        let a = &self.config.ablation;
        let mut parts = vec![self.lookup(tape, "embed.word", &seg.tokens, &prefix)?];
        if a.use_pos {
            parts.push(self.lookup(tape, "embed.pos", &seg.pos, &prefix)?);
        }
        if a.use_ner {
            parts.push(self.lookup(tape, "embed.ner", &seg.ner, &prefix)?);
        }
        if a.use_conceptnet {
            parts.push(self.lookup(tape, "embed.rel", &seg.relations, &prefix)?);
        }
        if a.use_features {
            let data = seg.features.iter().map(|&f| T::of(f as f64)).collect();
            parts.push(tape.constant(vec![batch.size(), seg.len, NUM_HANDCRAFTED], data)?);
        }
        if parts.len() == 1 {
            return Ok(parts[0]);
        }
        Ok(tape.concat(&parts, 2)?)
    }

    fn word_attention(&self, tape: &mut Tape<T>, layer: usize, name: &str) -> Result<Var> {
        if self.config.share_word_attention {
            self.param(tape, &format!("layer{layer}.attn_word.w"))
        } else {
            self.param(tape, &format!("layer{layer}.{name}.w"))
        }
    }

    /// Word-level attentions plus the three BiLSTMs of one layer.
    /// `inputs` are the per-token representations, `att` the vectors the
    /// attentions compare (word vectors on the first layer).
    fn attention_layer(
        &self,
        tape: &mut Tape<T>,
        batch: &Batch,
        layer: usize,
        inputs: &Encoded,
        att: &Encoded,
        mut rng: Option<&mut EngineRng>,
    ) -> Result<Encoded> {
        let a = self.config.ablation;
        let (mq, mp, ma) = (&batch.question.mask, &batch.passage.mask, &batch.answer.mask);

        let mut passage_in = vec![inputs.passage];
        if a.use_pq_attention {
            let w = self.word_attention(tape, layer, "attn_pq")?;
            passage_in.push(seq_attention(tape, att.passage, att.question, mq, w)?);
        }
        let mut answer_in = vec![inputs.answer];
        if a.use_pa_attention {
            let w = self.word_attention(tape, layer, "attn_pa")?;
            answer_in.push(seq_attention(tape, att.answer, att.passage, mp, w)?);
        }
        if a.use_qa_attention {
            let w = self.word_attention(tape, layer, "attn_qa")?;
            answer_in.push(seq_attention(tape, att.answer, att.question, mq, w)?);
        }
        let passage_in = concat_or_single(tape, &passage_in)?;
        let answer_in = concat_or_single(tape, &answer_in)?;

        let mut encode = |tape: &mut Tape<T>, x: Var, mask: &[bool], seq: &str| -> Result<Var> {
            let fwd = self.lstm_params(tape, &format!("layer{layer}.lstm_{seq}.fwd"))?;
            let bwd = self.lstm_params(tape, &format!("layer{layer}.lstm_{seq}.bwd"))?;
            let h = bilstm(tape, x, mask, fwd, bwd)?;
            Ok(tape.dropout(h, self.config.dropout, rng.as_deref_mut())?)
        };
        Ok(Encoded {
            question: encode(tape, inputs.question, mq, "question")?,
            passage: encode(tape, passage_in, mp, "passage")?,
            answer: encode(tape, answer_in, ma, "answer")?,
        })
    }

    /// Pre-sigmoid scores `[B]`. Passing a generator enables dropout.
    pub fn forward_logits(&self, tape: &mut Tape<T>, batch: &Batch, mut rng: Option<&mut EngineRng>) -> Result<Var> {
        let glove = self.config.glove_dim;
        let mut inputs = Vec::with_capacity(3);
        let mut words = Vec::with_capacity(3);
        for seg in [Segment::Question, Segment::Passage, Segment::Answer] {
            let rep = self.input_representation(tape, batch, seg)?;
            let rep = tape.dropout(rep, self.config.dropout, rng.as_deref_mut())?;
            let width = tape.shape(rep)[2];
            let word = if width == glove {
                rep
            } else {
                tape.narrow(rep, 2, 0, glove)?
            };
            inputs.push(rep);
            words.push(word);
        }
        let mut inputs = Encoded {
            question: inputs[0],
            passage: inputs[1],
            answer: inputs[2],
        };
        let mut att = Encoded {
            question: words[0],
            passage: words[1],
            answer: words[2],
        };
        for layer in 1..=self.config.num_attention_layers {
            let out = self.attention_layer(tape, batch, layer, &inputs, &att, rng.as_deref_mut())?;
            att = out;
            inputs = out;
        }
        let (hq, hp, ha) = (inputs.question, inputs.passage, inputs.answer);

        let wq = self.param(tape, "summary.self_q.w")?;
        let q = self_attention(tape, hq, &batch.question.mask, wq)?;
        let wa = self.param(tape, "summary.self_a.w")?;
        let a = self_attention(tape, ha, &batch.answer.mask, wa)?;
        let wp = self.param(tape, "summary.attn_p.w")?;
        let e = self.config.encoder_dim();
        let q3 = tape.reshape(q, vec![batch.size(), 1, e])?;
        let p = seq_attention(tape, q3, hp, &batch.passage.mask, wp)?;
        let p = tape.reshape(p, vec![batch.size(), e])?;

        let w3 = self.param(tape, "output.w3")?;
        let w4 = self.param(tape, "output.w4")?;
        let pw = tape.matmul(p, w3)?;
        let pwa = tape.mul(pw, a)?;
        let left = tape.sum_last(pwa)?;
        let qw = tape.matmul(q, w4)?;
        let qwa = tape.mul(qw, a)?;
        let right = tape.sum_last(qwa)?;
        Ok(tape.add(left, right)?)
    }

    /// Probabilities `[B]` in `(0, 1)`.
    pub fn forward(&self, tape: &mut Tape<T>, batch: &Batch, rng: Option<&mut EngineRng>) -> Result<Var> {
        let logits = self.forward_logits(tape, batch, rng)?;
        Ok(tape.sigmoid(logits))
    }

    /// Evaluation-mode probabilities as `f64`.
    pub fn predict(&self, batch: &Batch) -> Result<Vec<f64>> {
        let mut tape = Tape::no_grad();
        let y = self.forward(&mut tape, batch, None)?;
        Ok(tape.value(y).iter().map(|v| v.to_f64_lossy()).collect())
    }
}

fn concat_or_single<T: Scalar>(tape: &mut Tape<T>, parts: &[Var]) -> Result<Var> {
    if parts.len() == 1 {
        Ok(parts[0])
    } else {
        Ok(tape.concat(parts, 2)?)
    }
}

fn init_param<T: Scalar>(
    name: &str,
    shape: &[usize],
    rng: &mut EngineRng,
    words: Option<&EmbeddingTable>,
) -> Result<Tensor<T>> {
    let n: usize = shape.iter().product();
    let data: Vec<T> = match name {
        "embed.word" => match words {
            Some(table) => {
                if table.dim != shape[1] || table.data.len() != n {
                    return Err(ModelError::ShapeMismatch {
                        name: name.into(),
                        expected: shape.to_vec(),
                        found: vec![table.data.len() / table.dim.max(1), table.dim],
                    });
                }
                table.data.iter().map(|&v| T::of(v as f64)).collect()
            }
            None => {
                let mut d: Vec<T> = (0..n)
                    .map(|_| T::of(rng.normal(0.0, crate::corpus::UNKNOWN_INIT_STD)))
                    .collect();
                d[PAD * shape[1]..(PAD + 1) * shape[1]].fill(T::zero());
                d
            }
        },
        "embed.pos" | "embed.ner" | "embed.rel" => {
            let mut d: Vec<T> = (0..n).map(|_| T::of(0.1 * rng.normal(0.0, 1.0))).collect();
            // relation id 0 means "no relation" and is a real, learned row
            if name != "embed.rel" {
                d[PAD * shape[1]..(PAD + 1) * shape[1]].fill(T::zero());
            }
            d
        }
        _ if name.ends_with(".bias") => {
            let hidden = shape[0] / 4;
            (0..n)
                .map(|i| {
                    if (hidden..2 * hidden).contains(&i) {
                        T::one()
                    } else {
                        T::zero()
                    }
                })
                .collect()
        }
        _ => {
            let bound = 1.0 / (shape[0] as f64).sqrt();
            (0..n).map(|_| T::of(rng.uniform_range(-bound, bound))).collect()
        }
    };
    Ok(Tensor::new(shape.to_vec(), data)?)
}

fn verify_shapes<T: Scalar>(config: &ModelConfig, params: &ParamStore<T>) -> Result<()> {
    let expected = config.param_shapes();
    for (name, shape) in &expected {
        let t = params
            .by_name(name)
            .ok_or_else(|| ModelError::MissingParam(name.clone()))?;
        if t.shape() != shape.as_slice() {
            return Err(ModelError::ShapeMismatch {
                name: name.clone(),
                expected: shape.clone(),
                found: t.shape().to_vec(),
            });
        }
    }
    if params.len() != expected.len() {
        let extra = params
            .iter()
            .map(|(_, n, _)| n)
            .find(|n| !expected.iter().any(|(e, _)| e == n))
            .unwrap_or("?");
        return Err(ModelError::Config(format!("unexpected parameter `{extra}`")));
    }
    Ok(())
}

/// Index of the most probable candidate; ties go to the lowest index.
pub fn predict_group(probabilities: &[f64]) -> Result<usize> {
    let mut best: Option<(usize, f64)> = None;
    for (i, &p) in probabilities.iter().enumerate() {
        if best.is_none_or(|(_, b)| p > b) {
            best = Some((i, p));
        }
    }
    best.map(|(i, _)| i).ok_or(ModelError::EmptyGroup)
}
