//! Contextual encoders: word → subtoken alignment and the contract every
//! encoder backend satisfies (per-subtoken vectors plus one sentence vector).
//!
//! Two backends exist. [`ToyEncoder`] is small, trainable and deterministic,
//! meant for desk-scale runs and tests. [`PrecomputedEncoder`] reads vectors
//! exported from a pretrained transformer, keyed by sentence id; it is frozen.

mod precomputed;
mod subword;
mod toy;

use std::ops::RangeInclusive;

use serde::{Deserialize, Serialize};

pub use precomputed::{FeatureRecord, PrecomputedEncoder};
pub use subword::{SubwordVocab, Tokenized, UNK};
pub use toy::{ToyCache, ToyEncoder};

use crate::error::{Error, Result};
use crate::linalg::Matrix;
use crate::spanspace::Span;

/// Inclusive subtoken range of every word.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SubwordAlignment {
    word_to_subtokens: Vec<(usize, usize)>,
    subtoken_count: usize,
}

impl SubwordAlignment {
    /// Ranges must be contiguous, ordered, non-empty and cover
    /// `0..subtoken_count` exactly.
    pub fn new(word_to_subtokens: Vec<(usize, usize)>, subtoken_count: usize) -> Result<Self> {
        let mut next = 0;
        for (w, &(first, last)) in word_to_subtokens.iter().enumerate() {
            if first != next || last < first {
                return Err(Error::Argument(format!(
                    "word {w} maps to subtokens [{first}, {last}], expected to start at {next}"
                )));
            }
            next = last + 1;
        }
        if next != subtoken_count {
            return Err(Error::Argument(format!(
                "alignment covers {next} subtokens, expected {subtoken_count}"
            )));
        }
        Ok(Self {
            word_to_subtokens,
            subtoken_count,
        })
    }

    pub fn identity(words: usize) -> Self {
        Self {
            word_to_subtokens: (0..words).map(|i| (i, i)).collect(),
            subtoken_count: words,
        }
    }

    pub fn word_to_subtokens(&self) -> &[(usize, usize)] {
        &self.word_to_subtokens
    }

    pub fn subtoken_count(&self) -> usize {
        self.subtoken_count
    }

    pub fn word_count(&self) -> usize {
        self.word_to_subtokens.len()
    }

    /// Subtokens covered by the words of `span`.
    pub fn subtokens(&self, span: Span) -> RangeInclusive<usize> {
        self.word_to_subtokens[span.start].0..=self.word_to_subtokens[span.end].1
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EncoderOutput {
    /// One row per subtoken.
    pub token_vectors: Matrix,
    /// Whole-sentence context vector.
    pub sentence_vector: Vec<f64>,
}

impl EncoderOutput {
    pub fn dim(&self) -> usize {
        self.sentence_vector.len()
    }

    pub fn is_finite(&self) -> bool {
        self.token_vectors.is_finite() && self.sentence_vector.iter().all(|v| v.is_finite())
    }
}

pub trait Encoder: Send + Sync {
    /// Output width d1.
    fn dim(&self) -> usize;

    fn tokenize_align(&self, id: &str, words: &[String]) -> Result<SubwordAlignment>;

    fn encode(&self, id: &str, words: &[String]) -> Result<(SubwordAlignment, EncoderOutput)>;
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EncoderKind {
    Toy,
    Pretrained,
}

/// The encoder stored inside model parameters.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum EncoderBackend {
    Toy(Box<ToyEncoder>),
    Pretrained(PrecomputedEncoder),
}

impl EncoderBackend {
    pub fn kind(&self) -> EncoderKind {
        match self {
            EncoderBackend::Toy(_) => EncoderKind::Toy,
            EncoderBackend::Pretrained(_) => EncoderKind::Pretrained,
        }
    }

    pub fn as_encoder(&self) -> &dyn Encoder {
        match self {
            EncoderBackend::Toy(e) => e.as_ref(),
            EncoderBackend::Pretrained(e) => e,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn alignment_rejects_gaps_and_overlaps() {
        assert!(SubwordAlignment::new(vec![(0, 1), (2, 2)], 3).is_ok());
        assert!(SubwordAlignment::new(vec![(0, 1), (3, 3)], 4).is_err());
        assert!(SubwordAlignment::new(vec![(0, 1), (1, 2)], 3).is_err());
        assert!(SubwordAlignment::new(vec![(0, 1)], 3).is_err());
        let a = SubwordAlignment::new(vec![(0, 0), (1, 3), (4, 4)], 5).unwrap();
        assert_eq!(a.subtokens(Span::new(1, 2)), 1..=4);
    }
}
