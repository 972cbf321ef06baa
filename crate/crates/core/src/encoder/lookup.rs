//! Encoder backed by precomputed embeddings.
//!
//! File format: JSON Lines `{"text": "...", "vec": [f, ...]}`. Keys are
//! matched after text normalization; every vector must share one dimension.

use std::collections::HashMap;
use std::fs;
use std::path::Path;

use log::warn;
use serde::Deserialize;

use super::{EmbeddingVector, TextEncoder};
use crate::error::{Error, Result};
use crate::text::normalize;

#[derive(Debug, Clone)]
pub struct LookupEncoder {
    dim: usize,
    table: HashMap<String, EmbeddingVector>,
}

#[derive(Deserialize)]
struct Row {
    text: String,
    vec: Vec<f64>,
}

impl LookupEncoder {
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let content = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&content, path)
    }

    pub fn parse(content: &str, origin: &Path) -> Result<Self> {
        let mut dim = None;
        let mut table = HashMap::new();
        for (i, line) in content.lines().enumerate() {
            let line_no = i + 1;
            if line.trim().is_empty() {
                continue;
            }
            let row: Row = serde_json::from_str(line)
                .map_err(|e| Error::parse(origin, line_no, e.to_string()))?;
            let key = normalize(&row.text);
            if key.is_empty() {
                return Err(Error::parse(origin, line_no, "empty text"));
            }
            match dim {
                None => dim = Some(row.vec.len()),
                Some(d) if d != row.vec.len() => {
                    return Err(Error::parse(
                        origin,
                        line_no,
                        format!("vector has dimension {}, expected {d}", row.vec.len()),
                    ))
                }
                Some(_) => {}
            }
            let vector = EmbeddingVector::normalized(row.vec)
                .map_err(|e| Error::parse(origin, line_no, e.to_string()))?;
            if table.insert(key, vector).is_some() {
                warn!("{}:{line_no}: duplicate text {:?}; last vector wins", origin.display(), row.text);
            }
        }
        let dim = dim.ok_or_else(|| Error::parse(origin, 0, "no embeddings"))?;
        Ok(LookupEncoder { dim, table })
    }

    pub fn len(&self) -> usize {
        self.table.len()
    }

    pub fn is_empty(&self) -> bool {
        self.table.is_empty()
    }
}

impl TextEncoder for LookupEncoder {
    fn dim(&self) -> usize {
        self.dim
    }

    fn encode(&self, text: &str) -> Result<EmbeddingVector> {
        let key = normalize(text);
        if key.is_empty() {
            return Err(Error::EmptyInput);
        }
        self.table
            .get(&key)
            .cloned()
            .ok_or(Error::OutOfVocabulary(key))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn line(text: &str, dim: usize, fill: f64) -> String {
        serde_json::json!({ "text": text, "vec": vec![fill; dim] }).to_string()
    }

    #[test]
    fn serves_normalized_vectors() {
        let content = format!("{}\n{}\n", line("headache", 384, 2.0), line("Nausea", 384, -1.0));
        let enc = LookupEncoder::parse(&content, Path::new("e.jsonl")).unwrap();
        assert_eq!(enc.dim(), 384);
        let v = enc.encode("  HEADACHE").unwrap();
        assert_eq!(v.dim(), 384);
        assert!((v.norm() - 1.0).abs() < 1e-12);
        assert!(enc.encode("nausea").is_ok());
    }

    #[test]
    fn out_of_vocabulary() {
        let enc = LookupEncoder::parse(&line("headache", 4, 1.0), Path::new("e")).unwrap();
        assert!(matches!(enc.encode("unseen"), Err(Error::OutOfVocabulary(_))));
    }

    #[test]
    fn mixed_dimensions_rejected() {
        let content = format!("{}\n{}\n", line("a", 256, 1.0), line("b", 384, 1.0));
        let err = LookupEncoder::parse(&content, Path::new("e")).unwrap_err();
        assert!(matches!(err, Error::Parse { line: 2, .. }));
    }

    #[test]
    fn batch_matches_single() {
        let content = format!("{}\n{}\n", line("a", 3, 1.0), line("b", 3, 2.0));
        let enc = LookupEncoder::parse(&content, Path::new("e")).unwrap();
        let m = enc.encode_batch(&["a", "a", "b"]).unwrap();
        assert_eq!(m.row(0), m.row(1));
        assert_eq!(m.row(2), enc.encode("b").unwrap().as_slice());
        assert!(matches!(enc.encode_batch(&["a", " "]), Err(Error::EmptyInputAt { index: 1 })));
    }
}
