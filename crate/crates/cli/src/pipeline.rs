use std::fs::File;
use std::io::BufReader;
use std::path::Path;

use anyhow::{bail, Context, Result};
use trian::checkpoint::{self, Manifest, Vocabularies};
use trian::config::{DataPaths, RunConfig};
use trian::corpus::{
    build_knowledge_index, load_dataset, FrequencyTable, KnowledgeIndex, LabelPolicy, QuestionGroup, Stopwords,
};
use trian::eval::{predict_groups, GroupPrediction};
use trian::featurize::{FeatureResources, FeaturizedGroup, Featurizer};
use trian::model::Model;
use trian::EngineRng;

/// RNG stream ids forked from the run seed.
pub const STREAM_FEATURIZE: u64 = 1;
pub const STREAM_INIT: u64 = 2;
pub const STREAM_TRAIN: u64 = 3;
pub const STREAM_EMBEDDINGS: u64 = 4;
pub const STREAM_EVAL: u64 = 5;

pub fn require_file(path: &Path, what: &str) -> Result<()> {
    if !path.is_file() {
        bail!("{what} file not found: {}", path.display());
    }
    Ok(())
}

pub fn read_groups(path: &Path, policy: LabelPolicy) -> Result<Vec<QuestionGroup>> {
    require_file(path, "dataset")?;
    load_dataset(path, policy).with_context(|| format!("reading {}", path.display()))
}

/// Knowledge index, term frequencies and stop words. With `relations`, ids
/// follow that table and edges of other relations are skipped.
pub fn load_resources(data: &DataPaths, relations: Option<&[String]>) -> Result<FeatureResources> {
    let knowledge = match (&data.conceptnet, relations) {
        (Some(path), None) => {
            require_file(path, "conceptnet")?;
            build_knowledge_index(path)?
        }
        (Some(path), Some(names)) => {
            require_file(path, "conceptnet")?;
            let mut index = KnowledgeIndex::with_relations(names);
            let file = File::open(path).with_context(|| format!("opening {}", path.display()))?;
            index
                .extend_from_reader(BufReader::new(file), true)
                .with_context(|| format!("reading {}", path.display()))?;
            index
        }
        (None, Some(names)) => KnowledgeIndex::with_relations(names),
        (None, None) => KnowledgeIndex::new(),
    };
    let frequencies = match &data.freq_table {
        Some(path) => {
            require_file(path, "frequency table")?;
            FrequencyTable::load(path)?
        }
        None => FrequencyTable::new(),
    };
    let stopwords = match &data.stopwords {
        Some(path) => {
            require_file(path, "stopwords")?;
            Stopwords::load(path)?
        }
        None => Stopwords::english(),
    };
    Ok(FeatureResources {
        knowledge,
        frequencies,
        stopwords,
    })
}

/// A trained model together with what is needed to featurize new data.
pub struct Loaded {
    pub dir: std::path::PathBuf,
    pub manifest: Manifest,
    pub model: Model<f32>,
    pub vocab: Vocabularies,
    pub config: RunConfig,
}

pub fn load_checkpoint(dir: &Path) -> Result<Loaded> {
    if !dir.is_dir() {
        bail!("checkpoint directory not found: {}", dir.display());
    }
    let (manifest, model) = checkpoint::load(dir)?;
    let vocab = checkpoint::load_vocab(dir)?;
    let config = if manifest.settings.is_null() {
        RunConfig::default()
    } else {
        serde_json::from_value(manifest.settings.clone())
            .with_context(|| format!("{}: run settings", dir.display()))?
    };
    Ok(Loaded {
        dir: dir.to_path_buf(),
        manifest,
        model,
        vocab,
        config,
    })
}

impl Loaded {
    pub fn featurize(&self, groups: &[QuestionGroup], resources: &FeatureResources) -> Vec<FeaturizedGroup> {
        let featurizer = Featurizer {
            words: &self.vocab.words,
            pos: &self.vocab.pos,
            ner: &self.vocab.ner,
            resources,
            symmetric_contexts: self.config.features.symmetric_contexts,
        };
        let mut rng = EngineRng::seed(self.manifest.seed).fork(STREAM_EVAL);
        featurizer.featurize(groups, &mut rng)
    }

    /// Featurizes with this checkpoint's vocabularies and resources (as
    /// stored, overridden by `overrides`) and scores every group.
    pub fn predict(
        &self,
        groups: &[QuestionGroup],
        overrides: &crate::args::ResourceArgs,
        batch_size: usize,
    ) -> Result<Vec<GroupPrediction>> {
        let mut cfg = self.config.clone();
        overrides.apply(&mut cfg);
        if self.manifest.model.ablation.use_conceptnet && cfg.data.conceptnet.is_none() {
            log::warn!(
                "{}: model uses relation features but no --conceptnet given; every token gets `no relation`",
                self.dir.display()
            );
        }
        let resources = load_resources(&cfg.data, Some(&self.vocab.relations))?;
        let featurized = self.featurize(groups, &resources);
        Ok(predict_groups(&self.model, &featurized, batch_size)?)
    }
}
