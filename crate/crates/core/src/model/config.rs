use serde::{Deserialize, Serialize};

use super::ModelError;
use crate::featurize::NUM_HANDCRAFTED;

/// Input components and word-level attentions that can be switched off.
/// A disabled component is removed from the concatenation, not zeroed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct Ablation {
    pub use_conceptnet: bool,
    pub use_pos: bool,
    pub use_ner: bool,
    pub use_features: bool,
    pub use_pq_attention: bool,
    pub use_pa_attention: bool,
    pub use_qa_attention: bool,
}

impl Default for Ablation {
    fn default() -> Self {
        Self {
            use_conceptnet: true,
            use_pos: true,
            use_ner: true,
            use_features: true,
            use_pq_attention: true,
            use_pa_attention: true,
            use_qa_attention: true,
        }
    }
}

/// Table sizes, including the reserved padding/unknown (or no-relation) rows.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct VocabSizes {
    pub words: usize,
    pub pos: usize,
    pub ner: usize,
    pub relations: usize,
}

impl Default for VocabSizes {
    fn default() -> Self {
        Self {
            words: 2,
            pos: 2,
            ner: 2,
            relations: 1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ModelConfig {
    pub glove_dim: usize,
    pub pos_dim: usize,
    pub ner_dim: usize,
    pub rel_dim: usize,
    pub n_handcrafted: usize,
    pub hidden: usize,
    pub dropout: f64,
    pub num_attention_layers: usize,
    /// One projection for all three word-level attentions of a layer.
    pub share_word_attention: bool,
    pub ablation: Ablation,
    pub vocab: VocabSizes,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            glove_dim: 300,
            pos_dim: 12,
            ner_dim: 8,
            rel_dim: 10,
            n_handcrafted: NUM_HANDCRAFTED,
            hidden: 96,
            dropout: 0.4,
            num_attention_layers: 1,
            share_word_attention: false,
            ablation: Ablation::default(),
            vocab: VocabSizes::default(),
        }
    }
}

/// BiLSTM input widths for one attention layer.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct LayerWidths {
    /// Width of the vectors the word-level attentions compare.
    pub attention: usize,
    pub question: usize,
    pub passage: usize,
    pub answer: usize,
}

impl ModelConfig {
    /// Small dimensions for tests and finite-difference checks.
    pub fn micro() -> Self {
        Self {
            glove_dim: 4,
            pos_dim: 2,
            ner_dim: 2,
            rel_dim: 2,
            hidden: 3,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        let dims = [
            ("glove_dim", self.glove_dim),
            ("pos_dim", self.pos_dim),
            ("ner_dim", self.ner_dim),
            ("rel_dim", self.rel_dim),
            ("hidden", self.hidden),
        ];
        for (name, d) in dims {
            if d == 0 {
                return Err(ModelError::Config(format!("{name} must be positive")));
            }
        }
        if self.n_handcrafted != NUM_HANDCRAFTED {
            return Err(ModelError::Config(format!(
                "n_handcrafted must be {NUM_HANDCRAFTED}"
            )));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(ModelError::Config(format!(
                "dropout {} outside [0, 1)",
                self.dropout
            )));
        }
        if !(1..=2).contains(&self.num_attention_layers) {
            return Err(ModelError::Config(format!(
                "num_attention_layers must be 1 or 2, got {}",
                self.num_attention_layers
            )));
        }
        if self.vocab.words < 2 || self.vocab.pos < 1 || self.vocab.ner < 1 || self.vocab.relations < 1 {
            return Err(ModelError::Config("vocabulary sizes too small".into()));
        }
        Ok(())
    }

    /// Width of the per-token input representation.
    pub fn input_dim(&self) -> usize {
        let a = &self.ablation;
        self.glove_dim
            + if a.use_pos { self.pos_dim } else { 0 }
            + if a.use_ner { self.ner_dim } else { 0 }
            + if a.use_conceptnet { self.rel_dim } else { 0 }
            + if a.use_features { self.n_handcrafted } else { 0 }
    }

    pub fn encoder_dim(&self) -> usize {
        2 * self.hidden
    }

    /// Widths of attention layer `layer` (1-based). Later layers treat the
    /// previous BiLSTM outputs as both input and attention vectors.
    pub fn layer_widths(&self, layer: usize) -> LayerWidths {
        let (base, att) = if layer <= 1 {
            (self.input_dim(), self.glove_dim)
        } else {
            (self.encoder_dim(), self.encoder_dim())
        };
        let a = &self.ablation;
        let on = |flag: bool| if flag { att } else { 0 };
        LayerWidths {
            attention: att,
            question: base,
            passage: base + on(a.use_pq_attention),
            answer: base + on(a.use_pa_attention) + on(a.use_qa_attention),
        }
    }

    /// Every parameter's name and shape, in registration order.
    pub fn param_shapes(&self) -> Vec<(String, Vec<usize>)> {
        let a = &self.ablation;
        let mut out: Vec<(String, Vec<usize>)> =
            vec![("embed.word".into(), vec![self.vocab.words, self.glove_dim])];
        if a.use_pos {
            out.push(("embed.pos".into(), vec![self.vocab.pos, self.pos_dim]));
        }
        if a.use_ner {
            out.push(("embed.ner".into(), vec![self.vocab.ner, self.ner_dim]));
        }
        if a.use_conceptnet {
            out.push(("embed.rel".into(), vec![self.vocab.relations, self.rel_dim]));
        }
        let gates = 4 * self.hidden;
        for layer in 1..=self.num_attention_layers {
            let w = self.layer_widths(layer);
            let att = vec![w.attention, w.attention];
            let any = a.use_pq_attention || a.use_pa_attention || a.use_qa_attention;
            if self.share_word_attention {
                if any {
                    out.push((format!("layer{layer}.attn_word.w"), att));
                }
            } else {
                for (flag, name) in [
                    (a.use_pq_attention, "attn_pq"),
                    (a.use_pa_attention, "attn_pa"),
                    (a.use_qa_attention, "attn_qa"),
                ] {
                    if flag {
                        out.push((format!("layer{layer}.{name}.w"), att.clone()));
                    }
                }
            }
            for (seq, din) in [
                ("question", w.question),
                ("passage", w.passage),
                ("answer", w.answer),
            ] {
                for dir in ["fwd", "bwd"] {
                    let p = format!("layer{layer}.lstm_{seq}.{dir}");
                    out.push((format!("{p}.w_ih"), vec![din, gates]));
                    out.push((format!("{p}.w_hh"), vec![self.hidden, gates]));
                    out.push((format!("{p}.bias"), vec![gates]));
                }
            }
        }
        let e = self.encoder_dim();
        out.push(("summary.attn_p.w".into(), vec![e, e]));
        out.push(("summary.self_q.w".into(), vec![e]));
        out.push(("summary.self_a.w".into(), vec![e]));
        out.push(("output.w3".into(), vec![e, e]));
        out.push(("output.w4".into(), vec![e, e]));
        out
    }

    pub fn parameter_count(&self) -> usize {
        self.param_shapes()
            .iter()
            .map(|(_, s)| s.iter().product::<usize>())
            .sum()
    }

    /// Parameters outside the four embedding tables (independent of vocabulary).
    pub fn non_embedding_parameter_count(&self) -> usize {
        self.param_shapes()
            .iter()
            .filter(|(n, _)| !n.starts_with("embed."))
            .map(|(_, s)| s.iter().product::<usize>())
            .sum()
    }
}
