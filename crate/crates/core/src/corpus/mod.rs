//! Input data: annotated examples, vocabularies, pretrained vectors,
//! the relation index and term statistics.

mod dataset;
mod embeddings;
mod frequency;
mod knowledge;
mod vocab;

use std::path::{Path, PathBuf};

pub use dataset::{
    load_dataset, parse_dataset, whitespace_tokenize, Example, LabelPolicy, QuestionGroup, Token,
    FALLBACK_NER, FALLBACK_POS,
};
pub use embeddings::{load_embeddings, parse_embeddings, EmbeddingTable, UNKNOWN_INIT_STD};
pub use frequency::{FrequencyTable, Stopwords};
pub use knowledge::{build_knowledge_index, KnowledgeIndex, NO_RELATION};
pub use vocab::{build_tag_vocabs, build_vocab, top_k_tunable, Vocabulary, PAD, UNK};

#[derive(Debug, thiserror::Error)]
pub enum CorpusError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("line {line}: malformed JSON: {message}")]
    Parse { line: usize, message: String },
    #[error("line {line}: missing or invalid field `{field}`")]
    Schema { line: usize, field: String },
    #[error("line {line}: {message}")]
    Format { line: usize, message: String },
    #[error("{0}")]
    Invalid(String),
}

pub type Result<T> = std::result::Result<T, CorpusError>;

pub(crate) fn open(path: &Path) -> Result<std::io::BufReader<std::fs::File>> {
    std::fs::File::open(path)
        .map(std::io::BufReader::new)
        .map_err(|source| CorpusError::Io {
            path: path.to_path_buf(),
            source,
        })
}

pub(crate) fn io_error(path: &Path) -> impl FnOnce(std::io::Error) -> CorpusError + '_ {
    move |source| CorpusError::Io {
        path: path.to_path_buf(),
        source,
    }
}
