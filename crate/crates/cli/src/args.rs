use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};
use trian::config::RunConfig;

#[derive(Debug, Parser)]
#[command(name = "trian", version, about = "Three-way attentive network for multiple-choice reading comprehension")]
pub struct Cli {
    /// Worker threads for ensemble members (defaults to all cores).
    #[arg(long, global = true, env = "TRIAN_THREADS")]
    pub threads: Option<usize>,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Train a model (or a seed ensemble) and write checkpoint, config snapshot and metric trace.
    Train(TrainArgs),
    /// Report group accuracy of a checkpoint on a labeled dataset.
    Eval(EvalArgs),
    /// Write one prediction per question group as JSON lines.
    Predict(PredictArgs),
    /// Average candidate probabilities over several checkpoints.
    Ensemble(EnsembleArgs),
    /// Run the finite-difference gradient suite on a micro configuration.
    Gradcheck(GradcheckArgs),
}

/// Feature resources; they override paths stored with a checkpoint.
#[derive(Debug, Clone, Default, Args)]
pub struct ResourceArgs {
    /// Edge dump with `relation<TAB>term1<TAB>term2` lines.
    #[arg(long, value_name = "TSV")]
    pub conceptnet: Option<PathBuf>,
    /// Term frequency table with `word<TAB>count` lines.
    #[arg(long, value_name = "TSV")]
    pub freq_table: Option<PathBuf>,
    /// Stop words, one per line (default: built-in English list).
    #[arg(long, value_name = "FILE")]
    pub stopwords: Option<PathBuf>,
}

impl ResourceArgs {
    pub fn apply(&self, cfg: &mut RunConfig) {
        if let Some(p) = &self.conceptnet {
            cfg.data.conceptnet = Some(p.clone());
        }
        if let Some(p) = &self.freq_table {
            cfg.data.freq_table = Some(p.clone());
        }
        if let Some(p) = &self.stopwords {
            cfg.data.stopwords = Some(p.clone());
        }
    }
}

#[derive(Debug, Clone, Default, Args)]
pub struct AblationArgs {
    /// Drop the relation embedding from the input representation.
    #[arg(long)]
    pub no_conceptnet: bool,
    /// Drop the part-of-speech embedding.
    #[arg(long)]
    pub no_pos: bool,
    /// Drop the named-entity embedding.
    #[arg(long)]
    pub no_ner: bool,
    /// Drop the handcrafted term-frequency and co-occurrence features.
    #[arg(long)]
    pub no_features: bool,
    /// Drop passage-to-question word attention.
    #[arg(long)]
    pub no_pq_attention: bool,
    /// Drop answer-to-passage word attention.
    #[arg(long)]
    pub no_pa_attention: bool,
    /// Drop answer-to-question word attention.
    #[arg(long)]
    pub no_qa_attention: bool,
    /// Drop all three word-level attentions.
    #[arg(long)]
    pub no_word_attention: bool,
    /// Number of stacked attention layers.
    #[arg(long, value_parser = clap::value_parser!(u8).range(1..=2))]
    pub layers: Option<u8>,
}

impl AblationArgs {
    pub fn apply(&self, cfg: &mut RunConfig) {
        let a = &mut cfg.model.ablation;
        a.use_conceptnet &= !self.no_conceptnet;
        a.use_pos &= !self.no_pos;
        a.use_ner &= !self.no_ner;
        a.use_features &= !self.no_features;
        a.use_pq_attention &= !(self.no_pq_attention || self.no_word_attention);
        a.use_pa_attention &= !(self.no_pa_attention || self.no_word_attention);
        a.use_qa_attention &= !(self.no_qa_attention || self.no_word_attention);
        if let Some(l) = self.layers {
            cfg.model.num_attention_layers = l as usize;
        }
    }
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    /// TOML file overriding the built-in defaults.
    #[arg(long, value_name = "TOML")]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Labeled training set (JSON lines).
    #[arg(long, value_name = "JSONL")]
    pub data: Option<PathBuf>,
    /// Labeled development set used for model selection.
    #[arg(long, value_name = "JSONL")]
    pub dev: Option<PathBuf>,
    /// Labeled corpus for the pretraining stage.
    #[arg(long, value_name = "JSONL", conflicts_with = "no_pretrain")]
    pub pretrain_data: Option<PathBuf>,
    /// Skip the pretraining stage.
    #[arg(long)]
    pub no_pretrain: bool,
    /// Word vectors in `word v1 ... vd` text format.
    #[arg(long, value_name = "TXT")]
    pub embeddings: Option<PathBuf>,
    #[arg(long, value_name = "DIR")]
    pub out_dir: Option<PathBuf>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub pretrain_epochs: Option<usize>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long)]
    pub dropout: Option<f64>,
    #[arg(long)]
    pub hidden: Option<usize>,
    /// Word-vector width; must match --embeddings when given.
    #[arg(long)]
    pub glove_dim: Option<usize>,
    /// Number of most frequent words whose vectors are fine-tuned.
    #[arg(long)]
    pub tune_top_k: Option<usize>,
    /// Train a seed ensemble (seeds seed, seed+1, ...) into member-N subdirectories.
    #[arg(long)]
    pub ensemble: bool,
    /// Ensemble size used with --ensemble.
    #[arg(long, requires = "ensemble")]
    pub members: Option<usize>,
    #[command(flatten)]
    pub resources: ResourceArgs,
    #[command(flatten)]
    pub ablation: AblationArgs,
}

impl TrainArgs {
    /// Defaults, then the config file, then flags.
    pub fn resolve(&self) -> anyhow::Result<RunConfig> {
        let mut cfg = match &self.config {
            Some(path) => RunConfig::load(path)?,
            None => RunConfig::default(),
        };
        let d = &mut cfg.data;
        set(&mut d.train, self.data.clone().map(Some));
        set(&mut d.dev, self.dev.clone().map(Some));
        set(&mut d.pretrain, self.pretrain_data.clone().map(Some));
        set(&mut d.embeddings, self.embeddings.clone().map(Some));
        if self.no_pretrain {
            d.pretrain = None;
        }
        set(&mut cfg.out_dir, self.out_dir.clone());
        let t = &mut cfg.train;
        set(&mut t.seed, self.seed);
        set(&mut t.epochs, self.epochs);
        set(&mut t.pretrain.epochs, self.pretrain_epochs);
        set(&mut t.batch_size, self.batch_size);
        set(&mut t.lr, self.lr);
        set(&mut t.tune_top_k, self.tune_top_k);
        let m = &mut cfg.model;
        set(&mut m.dropout, self.dropout);
        set(&mut m.hidden, self.hidden);
        set(&mut m.glove_dim, self.glove_dim);
        set(&mut cfg.ensemble.members, self.members);
        self.resources.apply(&mut cfg);
        self.ablation.apply(&mut cfg);
        cfg.validate()?;
        Ok(cfg)
    }
}

fn set<T>(slot: &mut T, value: Option<T>) {
    if let Some(v) = value {
        *slot = v;
    }
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    /// Checkpoint directory written by `train`.
    #[arg(long, value_name = "DIR")]
    pub checkpoint: PathBuf,
    /// Labeled dataset (JSON lines).
    #[arg(long, value_name = "JSONL")]
    pub data: PathBuf,
    /// Also write per-group predictions here.
    #[arg(long, value_name = "JSONL")]
    pub output: Option<PathBuf>,
    #[arg(long, default_value_t = 32)]
    pub batch_size: usize,
    #[command(flatten)]
    pub resources: ResourceArgs,
}

#[derive(Debug, Args)]
pub struct PredictArgs {
    #[arg(long, value_name = "DIR")]
    pub checkpoint: PathBuf,
    /// Dataset; labels are optional.
    #[arg(long, value_name = "JSONL")]
    pub data: PathBuf,
    /// Destination (default: standard output).
    #[arg(long, value_name = "JSONL")]
    pub output: Option<PathBuf>,
    #[arg(long, default_value_t = 32)]
    pub batch_size: usize,
    #[command(flatten)]
    pub resources: ResourceArgs,
}

#[derive(Debug, Args)]
pub struct EnsembleArgs {
    /// Member checkpoint directories (repeatable).
    #[arg(long = "checkpoint", value_name = "DIR", required = true, num_args = 1..)]
    pub checkpoints: Vec<PathBuf>,
    /// Dataset; accuracy is reported when it carries labels.
    #[arg(long, value_name = "JSONL")]
    pub data: PathBuf,
    /// Write averaged per-group predictions here.
    #[arg(long, value_name = "JSONL")]
    pub output: Option<PathBuf>,
    #[arg(long, default_value_t = 32)]
    pub batch_size: usize,
    #[command(flatten)]
    pub resources: ResourceArgs,
}

#[derive(Debug, Args)]
pub struct GradcheckArgs {
    #[arg(long, default_value_t = 1)]
    pub seed: u64,
}
