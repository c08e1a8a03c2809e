//! Greedy longest-match subword segmentation over a fixed piece vocabulary.

use std::collections::{BTreeSet, HashMap};

use serde::{Deserialize, Serialize};

use super::SubwordAlignment;
use crate::corpus::Sentence;
use crate::error::{Error, Result};

pub const UNK: &str = "[UNK]";

/// A word sequence segmented into subtoken ids.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Tokenized {
    pub ids: Vec<usize>,
    pub alignment: SubwordAlignment,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(from = "Vec<String>", into = "Vec<String>")]
pub struct SubwordVocab {
    pieces: Vec<String>,
    index: HashMap<String, usize>,
    longest: usize,
}

impl From<Vec<String>> for SubwordVocab {
    fn from(pieces: Vec<String>) -> Self {
        Self::new(pieces)
    }
}

impl From<SubwordVocab> for Vec<String> {
    fn from(v: SubwordVocab) -> Self {
        v.pieces
    }
}

impl SubwordVocab {
    /// Builds a vocabulary from `pieces`; `[UNK]` is always id 0.
    pub fn new<I, S>(pieces: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        let mut all = vec![UNK.to_string()];
        let mut index = HashMap::from([(UNK.to_string(), 0)]);
        for p in pieces {
            let p = p.into();
            if p.is_empty() || index.contains_key(&p) {
                continue;
            }
            index.insert(p.clone(), all.len());
            all.push(p);
        }
        let longest = all.iter().map(|p| p.chars().count()).max().unwrap_or(1);
        Self {
            pieces: all,
            index,
            longest,
        }
    }

    /// Every distinct word of the corpus plus every character, so training
    /// words map to themselves and unseen words fall back to smaller pieces.
    pub fn from_corpus(sentences: &[Sentence]) -> Self {
        let mut pieces = BTreeSet::new();
        for s in sentences {
            for t in &s.tokens {
                pieces.insert(t.clone());
                pieces.extend(t.chars().map(String::from));
            }
        }
        Self::new(pieces)
    }

    pub fn len(&self) -> usize {
        self.pieces.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pieces.is_empty()
    }

    pub fn piece(&self, id: usize) -> &str {
        &self.pieces[id]
    }

    pub fn id(&self, piece: &str) -> Option<usize> {
        self.index.get(piece).copied()
    }

    fn segment(&self, word: &str, out: &mut Vec<usize>) {
        let chars: Vec<char> = word.chars().collect();
        let mut pos = 0;
        while pos < chars.len() {
            let max = self.longest.min(chars.len() - pos);
            let hit = (1..=max).rev().find_map(|len| {
                let piece: String = chars[pos..pos + len].iter().collect();
                self.index.get(&piece).map(|&id| (id, len))
            });
            let (id, len) = hit.unwrap_or((0, 1));
            // consecutive unknown characters collapse into one [UNK]
            if !(id == 0 && out.last() == Some(&0) && hit.is_none() && pos > 0) {
                out.push(id);
            }
            pos += len;
        }
    }

    pub fn tokenize_align(&self, words: &[String]) -> Result<Tokenized> {
        let mut ids = Vec::new();
        let mut ranges = Vec::with_capacity(words.len());
        for (i, w) in words.iter().enumerate() {
            if w.is_empty() {
                return Err(Error::Argument(format!("word {i} is empty")));
            }
            let first = ids.len();
            self.segment(w, &mut ids);
            ranges.push((first, ids.len() - 1));
        }
        Ok(Tokenized {
            alignment: SubwordAlignment::new(ranges, ids.len())?,
            ids,
        })
    }
}
