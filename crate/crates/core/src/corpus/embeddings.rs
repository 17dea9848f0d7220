use std::collections::HashMap;
use std::io::BufRead;
use std::path::Path;

use super::{io_error, open, CorpusError, Result, Vocabulary, PAD};
use crate::tensor::EngineRng;

/// Standard deviation for rows missing from the pretrained file.
pub const UNKNOWN_INIT_STD: f64 = 0.1;

/// Initial word-embedding matrix, `[vocab.len() × dim]` row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingTable {
    pub dim: usize,
    pub data: Vec<f32>,
    /// Fraction of corpus tokens (excluding padding/unknown) found in the file.
    pub coverage: f64,
}

impl EmbeddingTable {
    /// Random rows drawn from N(0, 0.1²), padding row zero.
    pub fn random(vocab: &Vocabulary, dim: usize, rng: &mut EngineRng) -> Self {
        let mut data: Vec<f32> = (0..vocab.len() * dim)
            .map(|_| rng.normal(0.0, UNKNOWN_INIT_STD) as f32)
            .collect();
        data[PAD * dim..(PAD + 1) * dim].fill(0.0);
        Self {
            dim,
            data,
            coverage: 0.0,
        }
    }

    pub fn row(&self, index: usize) -> &[f32] {
        &self.data[index * self.dim..(index + 1) * self.dim]
    }
}

pub fn load_embeddings(
    path: &Path,
    dim: usize,
    vocab: &Vocabulary,
    rng: &mut EngineRng,
) -> Result<EmbeddingTable> {
    let table = parse_embeddings(open(path)?, dim, vocab, rng).map_err(|e| match e {
        CorpusError::Io { source, .. } => io_error(path)(source),
        other => other,
    })?;
    log::info!(
        "loaded embeddings from {}: coverage {:.2}%",
        path.display(),
        100.0 * table.coverage
    );
    Ok(table)
}

/// Reads `word v1 … v_dim` lines. Exact matches take precedence over
/// lowercase matches; the first occurrence of a word wins.
pub fn parse_embeddings(
    reader: impl BufRead,
    dim: usize,
    vocab: &Vocabulary,
    rng: &mut EngineRng,
) -> Result<EmbeddingTable> {
    let mut table = EmbeddingTable::random(vocab, dim, rng);
    let mut lowered: HashMap<String, Vec<usize>> = HashMap::new();
    for (i, w) in vocab.words() {
        lowered.entry(w.to_lowercase()).or_default().push(i);
    }
    // 0 = untouched, 1 = lowercase match, 2 = exact match
    let mut filled = vec![0u8; vocab.len()];
    let mut row = Vec::with_capacity(dim);
    for (i, line) in reader.lines().enumerate() {
        let line = line.map_err(|source| CorpusError::Io {
            path: "<embeddings>".into(),
            source,
        })?;
        let mut parts = line.split_whitespace();
        let Some(word) = parts.next() else { continue };
        row.clear();
        for p in parts {
            let v: f32 = p.parse().map_err(|_| CorpusError::Format {
                line: i + 1,
                message: format!("invalid number `{p}`"),
            })?;
            row.push(v);
        }
        if row.len() != dim {
            return Err(CorpusError::Format {
                line: i + 1,
                message: format!("expected {dim} values, found {}", row.len()),
            });
        }
        let exact = vocab.get(word);
        if vocab.contains(word) && filled[exact] < 2 {
            table.data[exact * dim..(exact + 1) * dim].copy_from_slice(&row);
            filled[exact] = 2;
        }
        if let Some(targets) = lowered.get(word) {
            for &t in targets {
                if filled[t] == 0 {
                    table.data[t * dim..(t + 1) * dim].copy_from_slice(&row);
                    filled[t] = 1;
                }
            }
        }
    }
    let words = vocab.len().saturating_sub(2);
    let found = filled.iter().skip(2).filter(|&&f| f > 0).count();
    table.coverage = if words == 0 {
        1.0
    } else {
        found as f64 / words as f64
    };
    Ok(table)
}
