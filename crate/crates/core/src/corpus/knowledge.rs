use std::collections::HashMap;
use std::io::{BufRead, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{io_error, open, CorpusError, Result};

/// Name of the reserved relation id 0.
pub const NO_RELATION: &str = "<none>";

/// Symmetric word-pair → relation index built from a TSV edge dump.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct KnowledgeIndex {
    relations: Vec<String>,
    relation_ids: HashMap<String, u32>,
    edges: HashMap<(String, String), Vec<u32>>,
}

#[derive(Serialize, Deserialize)]
struct SavedIndex {
    relations: Vec<String>,
    edges: Vec<(String, String, Vec<u32>)>,
}

fn key(a: &str, b: &str) -> (String, String) {
    let (a, b) = (a.to_lowercase(), b.to_lowercase());
    if a <= b {
        (a, b)
    } else {
        (b, a)
    }
}

impl KnowledgeIndex {
    pub fn new() -> Self {
        Self {
            relations: vec![NO_RELATION.to_string()],
            relation_ids: HashMap::new(),
            edges: HashMap::new(),
        }
    }

    /// Starts from a fixed relation table so ids match an earlier run.
    pub fn with_relations(names: &[String]) -> Self {
        let mut index = Self::new();
        for name in names.iter().skip(1) {
            index.intern(name);
        }
        index
    }

    fn intern(&mut self, relation: &str) -> u32 {
        if let Some(&id) = self.relation_ids.get(relation) {
            return id;
        }
        let id = self.relations.len() as u32;
        self.relations.push(relation.to_string());
        self.relation_ids.insert(relation.to_string(), id);
        id
    }

    pub fn add_edge(&mut self, relation: &str, a: &str, b: &str) {
        let id = self.intern(relation);
        self.add_edge_id(id, a, b);
    }

    fn add_edge_id(&mut self, id: u32, a: &str, b: &str) {
        let ids = self.edges.entry(key(a, b)).or_default();
        if !ids.contains(&id) {
            ids.push(id);
        }
    }

    /// Parses `relation<TAB>term1<TAB>term2` lines. When `fixed` is set,
    /// relations outside the existing table are skipped instead of added.
    pub fn extend_from_reader(&mut self, reader: impl BufRead, fixed: bool) -> Result<()> {
        let mut skipped = 0usize;
        for (i, line) in reader.lines().enumerate() {
            let line = line.map_err(|source| CorpusError::Io {
                path: "<knowledge>".into(),
                source,
            })?;
            let line = line.trim_end_matches(['\r', '\n']);
            if line.trim().is_empty() {
                continue;
            }
            let cols: Vec<&str> = line.split('\t').collect();
            if cols.len() != 3 {
                return Err(CorpusError::Format {
                    line: i + 1,
                    message: format!("expected 3 tab-separated columns, found {}", cols.len()),
                });
            }
            if fixed {
                match self.relation_ids.get(cols[0]) {
                    Some(&id) => self.add_edge_id(id, cols[1], cols[2]),
                    None => skipped += 1,
                }
            } else {
                self.add_edge(cols[0], cols[1], cols[2]);
            }
        }
        if skipped > 0 {
            log::warn!("skipped {skipped} edges with relations unknown to the fixed table");
        }
        Ok(())
    }

    /// Relation ids linking the pair, in first-seen order.
    pub fn lookup_ids(&self, a: &str, b: &str) -> &[u32] {
        self.edges.get(&key(a, b)).map_or(&[], Vec::as_slice)
    }

    pub fn lookup(&self, a: &str, b: &str) -> Vec<&str> {
        self.lookup_ids(a, b)
            .iter()
            .map(|&id| self.relations[id as usize].as_str())
            .collect()
    }

    pub fn relation_id(&self, name: &str) -> Option<u32> {
        if name == NO_RELATION {
            return Some(0);
        }
        self.relation_ids.get(name).copied()
    }

    pub fn relation_name(&self, id: u32) -> &str {
        &self.relations[id as usize]
    }

    /// Relation table including the reserved id 0.
    pub fn relations(&self) -> &[String] {
        &self.relations
    }

    /// Size of the relation vocabulary including id 0.
    pub fn num_relations(&self) -> usize {
        self.relations.len()
    }

    pub fn num_pairs(&self) -> usize {
        self.edges.len()
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut edges: Vec<_> = self
            .edges
            .iter()
            .map(|((a, b), ids)| (a.clone(), b.clone(), ids.clone()))
            .collect();
        edges.sort();
        let saved = SavedIndex {
            relations: self.relations.clone(),
            edges,
        };
        let file = std::fs::File::create(path).map_err(io_error(path))?;
        let mut w = std::io::BufWriter::new(file);
        serde_json::to_writer(&mut w, &saved)
            .map_err(|e| CorpusError::Invalid(e.to_string()))?;
        w.flush().map_err(io_error(path))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let saved: SavedIndex = serde_json::from_reader(open(path)?).map_err(|e| CorpusError::Parse {
            line: e.line(),
            message: e.to_string(),
        })?;
        let mut index = Self::with_relations(&saved.relations);
        for (a, b, ids) in saved.edges {
            for id in ids {
                if id as usize >= index.relations.len() {
                    return Err(CorpusError::Invalid(format!("relation id {id} out of range")));
                }
                index.add_edge_id(id, &a, &b);
            }
        }
        Ok(index)
    }
}

pub fn build_knowledge_index(edge_dump: &Path) -> Result<KnowledgeIndex> {
    let mut index = KnowledgeIndex::new();
    index
        .extend_from_reader(open(edge_dump)?, false)
        .map_err(|e| match e {
            CorpusError::Io { source, .. } => io_error(edge_dump)(source),
            other => other,
        })?;
    Ok(index)
}
