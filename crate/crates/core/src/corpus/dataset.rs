use std::collections::HashMap;
use std::io::BufRead;
use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::Value;

use super::{io_error, open, CorpusError, Result};

/// Tag assigned to tokens produced by the whitespace fallback tokenizer.
pub const FALLBACK_POS: &str = "X";
pub const FALLBACK_NER: &str = "O";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Token {
    pub text: String,
    pub pos: String,
    pub ner: String,
}

impl Token {
    pub fn new(text: impl Into<String>, pos: impl Into<String>, ner: impl Into<String>) -> Self {
        Self {
            text: text.into(),
            pos: pos.into(),
            ner: ner.into(),
        }
    }

    pub fn lower(&self) -> String {
        self.text.to_lowercase()
    }
}

/// Splits raw text on whitespace and assigns placeholder tags.
pub fn whitespace_tokenize(text: &str) -> Vec<Token> {
    text.split_whitespace()
        .map(|w| Token::new(w, FALLBACK_POS, FALLBACK_NER))
        .collect()
}

/// One (passage, question, candidate answer) instance.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Example {
    pub id: String,
    pub passage: Vec<Token>,
    pub question: Vec<Token>,
    pub answer: Vec<Token>,
    pub label: Option<u8>,
}

/// Candidate answers sharing one passage and question.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct QuestionGroup {
    pub group_id: String,
    pub examples: Vec<Example>,
}

impl QuestionGroup {
    /// Index of the (first) candidate labeled 1.
    pub fn correct_index(&self) -> Option<usize> {
        self.examples.iter().position(|e| e.label == Some(1))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LabelPolicy {
    /// Every line must carry a 0/1 label.
    Required,
    /// Labels may be absent (prediction input).
    Optional,
}

pub fn load_dataset(path: &Path, policy: LabelPolicy) -> Result<Vec<QuestionGroup>> {
    parse_dataset(open(path)?, policy).map_err(|e| match e {
        CorpusError::Io { source, .. } => io_error(path)(source),
        other => other,
    })
}

/// Parses dataset JSONL. Groups come back in order of first appearance.
pub fn parse_dataset(reader: impl BufRead, policy: LabelPolicy) -> Result<Vec<QuestionGroup>> {
    let mut groups: Vec<QuestionGroup> = Vec::new();
    let mut slot: HashMap<String, usize> = HashMap::new();
    for (i, line) in reader.lines().enumerate() {
        let lineno = i + 1;
        let line = line.map_err(|source| CorpusError::Io {
            path: "<dataset>".into(),
            source,
        })?;
        if line.trim().is_empty() {
            continue;
        }
        let value: Value = serde_json::from_str(&line).map_err(|e| CorpusError::Parse {
            line: lineno,
            message: e.to_string(),
        })?;
        let (group_id, example) = parse_record(&value, lineno, policy)?;
        let at = *slot.entry(group_id.clone()).or_insert_with(|| {
            groups.push(QuestionGroup {
                group_id,
                examples: Vec::new(),
            });
            groups.len() - 1
        });
        groups[at].examples.push(example);
    }
    for g in &groups {
        let positives = g.examples.iter().filter(|e| e.label == Some(1)).count();
        let labeled = g.examples.iter().all(|e| e.label.is_some());
        if labeled && positives != 1 {
            log::warn!(
                "group {} has {positives} positive candidates, expected exactly one",
                g.group_id
            );
        }
    }
    Ok(groups)
}

fn parse_record(value: &Value, line: usize, policy: LabelPolicy) -> Result<(String, Example)> {
    let schema = |field: &str| CorpusError::Schema {
        line,
        field: field.to_string(),
    };
    let obj = value.as_object().ok_or_else(|| CorpusError::Parse {
        line,
        message: "expected a JSON object".into(),
    })?;
    let string_field = |name: &str| -> Result<String> {
        match obj.get(name) {
            Some(Value::String(s)) => Ok(s.clone()),
            Some(Value::Number(n)) => Ok(n.to_string()),
            _ => Err(schema(name)),
        }
    };
    let group_id = string_field("group_id")?;
    let id = string_field("example_id")?;
    let seq = |name: &str| -> Result<Vec<Token>> {
        let tokens = obj
            .get(name)
            .and_then(parse_tokens)
            .ok_or_else(|| schema(name))?;
        if tokens.is_empty() {
            return Err(schema(name));
        }
        Ok(tokens)
    };
    let passage = seq("passage")?;
    let question = seq("question")?;
    let answer = seq("answer")?;
    let label = match (obj.get("label"), policy) {
        (None | Some(Value::Null), LabelPolicy::Optional) => None,
        (None | Some(Value::Null), LabelPolicy::Required) => return Err(schema("label")),
        (Some(v), _) => match v.as_u64() {
            Some(l @ (0 | 1)) => Some(l as u8),
            _ => return Err(schema("label")),
        },
    };
    Ok((
        group_id,
        Example {
            id,
            passage,
            question,
            answer,
            label,
        },
    ))
}

/// Accepts `[[text, pos, ner], …]` or a raw string (whitespace fallback).
fn parse_tokens(v: &Value) -> Option<Vec<Token>> {
    match v {
        Value::String(s) => Some(whitespace_tokenize(s)),
        Value::Array(items) => items
            .iter()
            .map(|item| {
                let parts = item.as_array()?;
                if parts.len() != 3 {
                    return None;
                }
                let s = |i: usize| parts[i].as_str().map(str::to_string);
                Some(Token {
                    text: s(0)?,
                    pos: s(1)?,
                    ner: s(2)?,
                })
            })
            .collect(),
        _ => None,
    }
}
