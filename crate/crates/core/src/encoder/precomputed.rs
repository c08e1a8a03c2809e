//! Adapter for vectors produced by an external pretrained transformer.
//!
//! The features file is JSON lines, one record per sentence:
//!
//! ```json
//! {"id": "s1", "word_to_subtokens": [[0, 0], [1, 2]],
//!  "token_vectors": [[...], [...], [...]], "sentence_vector": [...]}
//! ```
//!
//! `sentence_vector` is the encoder's sentence-level output (the `[CLS]`
//! position for BERT-style models). The adapter is frozen: no gradients flow
//! into it.

use std::collections::HashMap;
use std::fs;
use std::path::Path;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use super::{Encoder, EncoderOutput, SubwordAlignment};
use crate::error::{Error, Result};
use crate::linalg::Matrix;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureRecord {
    pub id: String,
    pub word_to_subtokens: Vec<(usize, usize)>,
    pub token_vectors: Vec<Vec<f64>>,
    pub sentence_vector: Vec<f64>,
}

type FeatureTable = HashMap<String, (SubwordAlignment, EncoderOutput)>;

/// Only `model_name` (the features path) and `dim` are persisted; the vectors
/// are re-read with [`PrecomputedEncoder::reload`].
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PrecomputedEncoder {
    pub model_name: String,
    pub dim: usize,
    #[serde(skip)]
    table: Option<Arc<FeatureTable>>,
}

impl PrecomputedEncoder {
    pub fn load(model_name: &str, dim: usize) -> Result<Self> {
        let mut enc = Self {
            model_name: model_name.to_string(),
            dim,
            table: None,
        };
        enc.reload()?;
        Ok(enc)
    }

    pub fn from_records(model_name: &str, dim: usize, records: Vec<FeatureRecord>) -> Result<Self> {
        let mut table = HashMap::with_capacity(records.len());
        for r in records {
            let entry = Self::check(r.clone(), dim)?;
            table.insert(r.id, entry);
        }
        Ok(Self {
            model_name: model_name.to_string(),
            dim,
            table: Some(Arc::new(table)),
        })
    }

    pub fn reload(&mut self) -> Result<()> {
        let path = Path::new(&self.model_name);
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut records = Vec::new();
        for (i, line) in text.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            records.push(serde_json::from_str(line).map_err(|e| Error::Format {
                path: self.model_name.clone(),
                locus: format!("line {} column {}", i + 1, e.column()),
                message: e.to_string(),
            })?);
        }
        *self = Self::from_records(&self.model_name, self.dim, records)?;
        Ok(())
    }

    fn check(r: FeatureRecord, dim: usize) -> Result<(SubwordAlignment, EncoderOutput)> {
        let bad = |message: String| Error::Encoding {
            sentence_id: r.id.clone(),
            message,
        };
        let align = SubwordAlignment::new(r.word_to_subtokens.clone(), r.token_vectors.len())
            .map_err(|e| bad(e.to_string()))?;
        if r.sentence_vector.len() != dim || r.token_vectors.iter().any(|v| v.len() != dim) {
            return Err(bad(format!("vectors do not have the configured dimension {dim}")));
        }
        let out = EncoderOutput {
            token_vectors: Matrix::from_rows(&r.token_vectors),
            sentence_vector: r.sentence_vector.clone(),
        };
        if !out.is_finite() {
            return Err(bad("non-finite feature value".into()));
        }
        Ok((align, out))
    }

    fn lookup(&self, id: &str, words: &[String]) -> Result<&(SubwordAlignment, EncoderOutput)> {
        let table = self.table.as_ref().ok_or_else(|| Error::Encoding {
            sentence_id: id.to_string(),
            message: format!("features from {} are not loaded", self.model_name),
        })?;
        let entry = table.get(id).ok_or_else(|| Error::Encoding {
            sentence_id: id.to_string(),
            message: format!("no precomputed features in {}", self.model_name),
        })?;
        if entry.0.word_count() != words.len() {
            return Err(Error::Encoding {
                sentence_id: id.to_string(),
                message: format!(
                    "features cover {} words but the sentence has {}",
                    entry.0.word_count(),
                    words.len()
                ),
            });
        }
        Ok(entry)
    }
}

impl Encoder for PrecomputedEncoder {
    fn dim(&self) -> usize {
        self.dim
    }

    fn tokenize_align(&self, id: &str, words: &[String]) -> Result<SubwordAlignment> {
        Ok(self.lookup(id, words)?.0.clone())
    }

    fn encode(&self, id: &str, words: &[String]) -> Result<(SubwordAlignment, EncoderOutput)> {
        Ok(self.lookup(id, words)?.clone())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn record(id: &str) -> FeatureRecord {
        FeatureRecord {
            id: id.into(),
            word_to_subtokens: vec![(0, 1), (2, 2)],
            token_vectors: vec![vec![1.0, 0.0], vec![0.0, 1.0], vec![0.5, 0.5]],
            sentence_vector: vec![0.1, 0.2],
        }
    }

    #[test]
    fn serves_vectors_by_sentence_id() {
        let enc = PrecomputedEncoder::from_records("mem", 2, vec![record("a")]).unwrap();
        let words = vec!["pretrain".to_string(), "model".to_string()];
        let (align, out) = enc.encode("a", &words).unwrap();
        assert_eq!(align.subtoken_count(), 3);
        assert_eq!(out.token_vectors.row(2), &[0.5, 0.5]);
        match enc.encode("b", &words) {
            Err(Error::Encoding { sentence_id, .. }) => assert_eq!(sentence_id, "b"),
            other => panic!("{other:?}"),
        }
        assert!(enc.encode("a", &words[..1]).is_err());
    }

    #[test]
    fn rejects_dimension_mismatch() {
        assert!(PrecomputedEncoder::from_records("mem", 3, vec![record("a")]).is_err());
    }

    #[test]
    fn reloads_from_jsonl() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("features.jsonl");
        let line = serde_json::to_string(&record("a")).unwrap();
        fs::write(&path, format!("{line}\n")).unwrap();
        let enc = PrecomputedEncoder::load(path.to_str().unwrap(), 2).unwrap();
        let json = serde_json::to_string(&enc).unwrap();
        let mut back: PrecomputedEncoder = serde_json::from_str(&json).unwrap();
        let words = vec!["x".to_string(), "y".to_string()];
        assert!(back.encode("a", &words).is_err());
        back.reload().unwrap();
        assert_eq!(back.encode("a", &words).unwrap(), enc.encode("a", &words).unwrap());
    }
}
