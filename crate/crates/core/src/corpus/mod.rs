//! Annotated sentences, the label schema, the canonical JSON dataset format
//! and k-fold partitioning.
//!
//! The dataset file is a JSON array of records:
//!
//! ```json
//! [{"id": "s1", "tokens": ["John", "works", "at", "Acme"],
//!   "entities": [{"type": "Peop", "start": 0, "end": 1},
//!                {"type": "Org", "start": 3, "end": 4}],
//!   "relations": [{"type": "Work_For", "head": 0, "tail": 1}]}]
//! ```
//!
//! Entity offsets are end-exclusive word indices; `head`/`tail` index into the
//! record's `entities` list. In memory spans are inclusive.

pub mod convert;

use std::collections::HashSet;
use std::fs;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::spanspace::Span;

/// Reserved name of the "no type" outcome.
pub const NA: &str = "NA";

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EntityAnnotation {
    pub label: String,
    pub span: Span,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RelationAnnotation {
    pub label: String,
    pub head: usize,
    pub tail: usize,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Sentence {
    pub id: String,
    pub tokens: Vec<String>,
    pub entities: Vec<EntityAnnotation>,
    pub relations: Vec<RelationAnnotation>,
}

impl Sentence {
    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn entity_spans(&self) -> Vec<Span> {
        self.entities.iter().map(|e| e.span).collect()
    }

    /// Checks the structural invariants and that every label is in `schema`.
    pub fn validate(&self, schema: &LabelSchema) -> std::result::Result<(), String> {
        if self.tokens.iter().any(|t| t.is_empty()) {
            return Err("empty token".into());
        }
        for (i, e) in self.entities.iter().enumerate() {
            if e.span.end >= self.len() {
                return Err(format!(
                    "entity {i} span {} exceeds {} tokens",
                    e.span,
                    self.len()
                ));
            }
            if schema.entity_index(&e.label).is_none() {
                return Err(format!("entity {i} has unknown type {:?}", e.label));
            }
        }
        for (i, r) in self.relations.iter().enumerate() {
            if r.head >= self.entities.len() || r.tail >= self.entities.len() {
                return Err(format!(
                    "relation {i} references entity {} but only {} entities exist",
                    r.head.max(r.tail),
                    self.entities.len()
                ));
            }
            if r.head == r.tail {
                return Err(format!("relation {i} relates entity {} to itself", r.head));
            }
            if schema.relation_index(&r.label).is_none() {
                return Err(format!("relation {i} has unknown type {:?}", r.label));
            }
        }
        Ok(())
    }

    /// Drops entities wider than `max_width` words together with the relations
    /// that reference them.
    pub fn restricted_to_width(&self, max_width: usize) -> Sentence {
        let mut remap = vec![None; self.entities.len()];
        let mut entities = Vec::new();
        for (i, e) in self.entities.iter().enumerate() {
            if e.span.width() <= max_width {
                remap[i] = Some(entities.len());
                entities.push(e.clone());
            }
        }
        let relations = self
            .relations
            .iter()
            .filter_map(|r| {
                Some(RelationAnnotation {
                    label: r.label.clone(),
                    head: remap[r.head]?,
                    tail: remap[r.tail]?,
                })
            })
            .collect();
        Sentence {
            id: self.id.clone(),
            tokens: self.tokens.clone(),
            entities,
            relations,
        }
    }
}

/// Ordered entity and relation type names. NA is implicit and never listed.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LabelSchema {
    pub entity_types: Vec<String>,
    pub relation_types: Vec<String>,
}

impl LabelSchema {
    pub fn new(entity_types: Vec<String>, relation_types: Vec<String>) -> Result<Self> {
        for (kind, names) in [("entity", &entity_types), ("relation", &relation_types)] {
            let mut seen = HashSet::new();
            for name in names {
                if name == NA {
                    return Err(Error::Argument(format!(
                        "{NA} is reserved and cannot be listed as a {kind} type"
                    )));
                }
                if name.is_empty() {
                    return Err(Error::Argument(format!("empty {kind} type name")));
                }
                if !seen.insert(name) {
                    return Err(Error::Argument(format!("duplicate {kind} type {name:?}")));
                }
            }
        }
        Ok(Self {
            entity_types,
            relation_types,
        })
    }

    /// Collects types in order of first appearance.
    pub fn infer(sentences: &[Sentence]) -> Result<Self> {
        let mut entity_types: Vec<String> = Vec::new();
        let mut relation_types: Vec<String> = Vec::new();
        for s in sentences {
            for e in &s.entities {
                if !entity_types.contains(&e.label) {
                    entity_types.push(e.label.clone());
                }
            }
            for r in &s.relations {
                if !relation_types.contains(&r.label) {
                    relation_types.push(r.label.clone());
                }
            }
        }
        Self::new(entity_types, relation_types)
    }

    pub fn entity_index(&self, name: &str) -> Option<usize> {
        self.entity_types.iter().position(|t| t == name)
    }

    pub fn relation_index(&self, name: &str) -> Option<usize> {
        self.relation_types.iter().position(|t| t == name)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let raw: LabelSchema = serde_json::from_str(&text).map_err(|e| Error::Format {
            path: path.display().to_string(),
            locus: format!("line {} column {}", e.line(), e.column()),
            message: e.to_string(),
        })?;
        Self::new(raw.entity_types, raw.relation_types)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let text = serde_json::to_string_pretty(self).expect("schema serializes");
        fs::write(path, text).map_err(|e| Error::io(path, e))
    }
}

// ---------------------------------------------------------------------------
// Canonical file format
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RawEntity {
    #[serde(rename = "type")]
    pub label: String,
    pub start: usize,
    pub end: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub score: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RawRelation {
    #[serde(rename = "type")]
    pub label: String,
    pub head: usize,
    pub tail: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub score: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RawRecord {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub id: Option<String>,
    pub tokens: Vec<String>,
    #[serde(default)]
    pub entities: Vec<RawEntity>,
    #[serde(default)]
    pub relations: Vec<RawRelation>,
}

impl RawRecord {
    fn into_sentence(self, position: usize) -> std::result::Result<Sentence, String> {
        let entities = self
            .entities
            .into_iter()
            .enumerate()
            .map(|(i, e)| {
                if e.end <= e.start {
                    return Err(format!("entity {i} has empty offsets [{}, {})", e.start, e.end));
                }
                Ok(EntityAnnotation {
                    label: e.label,
                    span: Span::new(e.start, e.end - 1),
                })
            })
            .collect::<std::result::Result<_, _>>()?;
        Ok(Sentence {
            id: self.id.unwrap_or_else(|| position.to_string()),
            tokens: self.tokens,
            entities,
            relations: self
                .relations
                .into_iter()
                .map(|r| RelationAnnotation {
                    label: r.label,
                    head: r.head,
                    tail: r.tail,
                })
                .collect(),
        })
    }
}

impl From<&Sentence> for RawRecord {
    fn from(s: &Sentence) -> Self {
        RawRecord {
            id: Some(s.id.clone()),
            tokens: s.tokens.clone(),
            entities: s
                .entities
                .iter()
                .map(|e| RawEntity {
                    label: e.label.clone(),
                    start: e.span.start,
                    end: e.span.end + 1,
                    score: None,
                })
                .collect(),
            relations: s
                .relations
                .iter()
                .map(|r| RawRelation {
                    label: r.label.clone(),
                    head: r.head,
                    tail: r.tail,
                    score: None,
                })
                .collect(),
        }
    }
}

fn record_name(position: usize, id: Option<&str>) -> String {
    match id {
        Some(id) => format!("#{position} (id {id:?})"),
        None => format!("#{position}"),
    }
}

/// Parses raw records without checking labels against a schema.
pub fn parse_records(text: &str, source: &str) -> Result<Vec<RawRecord>> {
    if text.trim().is_empty() {
        return Ok(Vec::new());
    }
    let values: Vec<serde_json::Value> = serde_json::from_str(text).map_err(|e| Error::Format {
        path: source.to_string(),
        locus: format!("line {} column {}", e.line(), e.column()),
        message: e.to_string(),
    })?;
    values
        .into_iter()
        .enumerate()
        .map(|(i, v)| {
            serde_json::from_value(v).map_err(|e| Error::Format {
                path: source.to_string(),
                locus: format!("record #{i}"),
                message: e.to_string(),
            })
        })
        .collect()
}

/// Parses and validates a dataset held in memory. `source` names it in errors.
pub fn parse_dataset(text: &str, source: &str, schema: &LabelSchema) -> Result<Vec<Sentence>> {
    parse_records(text, source)?
        .into_iter()
        .enumerate()
        .map(|(i, raw)| {
            let name = record_name(i, raw.id.as_deref());
            let sentence = raw
                .into_sentence(i)
                .map_err(|message| Error::Validation {
                    record: name.clone(),
                    message,
                })?;
            sentence
                .validate(schema)
                .map_err(|message| Error::Validation {
                    record: name,
                    message,
                })?;
            Ok(sentence)
        })
        .collect()
}

pub fn load_dataset(path: impl AsRef<Path>, schema: &LabelSchema) -> Result<Vec<Sentence>> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_dataset(&text, &path.display().to_string(), schema)
}

/// Reads a dataset and derives its schema from the labels it uses.
pub fn load_dataset_inferring_schema(path: impl AsRef<Path>) -> Result<(Vec<Sentence>, LabelSchema)> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let source = path.display().to_string();
    let records = parse_records(&text, &source)?;
    let mut loose = Vec::with_capacity(records.len());
    for (i, raw) in records.into_iter().enumerate() {
        let name = record_name(i, raw.id.as_deref());
        loose.push(raw.into_sentence(i).map_err(|message| Error::Validation {
            record: name,
            message,
        })?);
    }
    let schema = LabelSchema::infer(&loose)?;
    for (i, s) in loose.iter().enumerate() {
        s.validate(&schema).map_err(|message| Error::Validation {
            record: record_name(i, Some(&s.id)),
            message,
        })?;
    }
    Ok((loose, schema))
}

/// Reads records for prediction: ids and tokens only, annotations ignored.
pub fn load_unlabeled(path: impl AsRef<Path>) -> Result<Vec<Sentence>> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_records(&text, &path.display().to_string())?
        .into_iter()
        .enumerate()
        .map(|(i, raw)| {
            if raw.tokens.is_empty() {
                return Err(Error::Validation {
                    record: record_name(i, raw.id.as_deref()),
                    message: "record has no tokens".into(),
                });
            }
            Ok(Sentence {
                id: raw.id.unwrap_or_else(|| i.to_string()),
                tokens: raw.tokens,
                entities: Vec::new(),
                relations: Vec::new(),
            })
        })
        .collect()
}

/// Labels used by `records` that `schema` does not know, sorted and unique.
pub fn unknown_labels(records: &[RawRecord], schema: &LabelSchema) -> Vec<String> {
    let mut unknown: Vec<String> = records
        .iter()
        .flat_map(|r| {
            r.entities
                .iter()
                .filter(|e| schema.entity_index(&e.label).is_none())
                .map(|e| format!("entity:{}", e.label))
                .chain(
                    r.relations
                        .iter()
                        .filter(|x| schema.relation_index(&x.label).is_none())
                        .map(|x| format!("relation:{}", x.label)),
                )
        })
        .collect();
    unknown.sort();
    unknown.dedup();
    unknown
}

pub fn serialize_dataset(sentences: &[Sentence]) -> String {
    let records: Vec<RawRecord> = sentences.iter().map(RawRecord::from).collect();
    serde_json::to_string_pretty(&records).expect("records serialize")
}

pub fn write_records(path: impl AsRef<Path>, records: &[RawRecord]) -> Result<()> {
    let path = path.as_ref();
    let text = serde_json::to_string_pretty(records).expect("records serialize");
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

pub fn write_dataset(path: impl AsRef<Path>, sentences: &[Sentence]) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, serialize_dataset(sentences)).map_err(|e| Error::io(path, e))
}

// ---------------------------------------------------------------------------
// Folds
// ---------------------------------------------------------------------------

/// Assignment of corpus positions to `k` folds.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FoldPlan {
    pub k: usize,
    pub seed: u64,
    /// Fold index of each sentence, by corpus position.
    pub assignment: Vec<usize>,
    pub ids: Vec<String>,
}

impl FoldPlan {
    pub fn fold_of(&self, id: &str) -> Option<usize> {
        self.ids.iter().position(|x| x == id).map(|p| self.assignment[p])
    }

    pub fn fold_members(&self, fold: usize) -> Vec<usize> {
        (0..self.assignment.len())
            .filter(|&i| self.assignment[i] == fold)
            .collect()
    }

    /// `(train, held_out)` corpus positions for one fold.
    pub fn split(&self, fold: usize) -> (Vec<usize>, Vec<usize>) {
        (0..self.assignment.len()).partition(|&i| self.assignment[i] != fold)
    }

    pub fn fold_sizes(&self) -> Vec<usize> {
        let mut sizes = vec![0; self.k];
        for &f in &self.assignment {
            sizes[f] += 1;
        }
        sizes
    }
}

/// Shuffles the corpus with `seed` and deals sentences round-robin into `k`
/// folds, so fold sizes differ by at most one.
pub fn make_folds(sentences: &[Sentence], k: usize, seed: u64) -> Result<FoldPlan> {
    if k < 2 {
        return Err(Error::Argument(format!("fold count must be at least 2, got {k}")));
    }
    if k > sentences.len() {
        return Err(Error::Argument(format!(
            "cannot make {k} folds from {} sentences",
            sentences.len()
        )));
    }
    let mut order: Vec<usize> = (0..sentences.len()).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let mut assignment = vec![0; sentences.len()];
    for (rank, &pos) in order.iter().enumerate() {
        assignment[pos] = rank % k;
    }
    Ok(FoldPlan {
        k,
        seed,
        assignment,
        ids: sentences.iter().map(|s| s.id.clone()).collect(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn schema() -> LabelSchema {
        LabelSchema::new(vec!["T".into()], vec!["R".into()]).unwrap()
    }

    fn blank(n: usize) -> Vec<Sentence> {
        (0..n)
            .map(|i| Sentence {
                id: format!("s{i}"),
                tokens: vec!["x".into()],
                entities: vec![],
                relations: vec![],
            })
            .collect()
    }

    #[test]
    fn end_exclusive_offsets_become_inclusive() {
        let text = r#"[{"tokens":["a","b","c"],"entities":[{"type":"T","start":1,"end":3}],"relations":[]}]"#;
        let s = parse_dataset(text, "mem", &schema()).unwrap();
        assert_eq!(s[0].entities[0].span, Span::new(1, 2));
        assert_eq!(s[0].id, "0");
    }

    #[test]
    fn empty_file_is_empty_dataset() {
        assert!(parse_dataset("", "mem", &schema()).unwrap().is_empty());
        assert!(parse_dataset("  \n", "mem", &schema()).unwrap().is_empty());
        assert!(parse_dataset("[]", "mem", &schema()).unwrap().is_empty());
    }

    #[test]
    fn out_of_bounds_entity_is_rejected() {
        let text = r#"[{"id":"bad","tokens":["a","b","c"],"entities":[{"type":"T","start":1,"end":5}]}]"#;
        match parse_dataset(text, "mem", &schema()) {
            Err(Error::Validation { record, .. }) => assert!(record.contains("bad")),
            other => panic!("expected validation error, got {other:?}"),
        }
    }

    #[test]
    fn syntax_errors_carry_line() {
        let err = parse_dataset("[\n{\"tokens\": [}", "mem", &schema()).unwrap_err();
        match err {
            Error::Format { locus, .. } => assert!(locus.starts_with("line 2")),
            other => panic!("{other:?}"),
        }
        let err = parse_dataset(r#"[{"tokens": []}, {"tokenz": []}]"#, "mem", &schema()).unwrap_err();
        match err {
            Error::Format { locus, .. } => assert_eq!(locus, "record #1"),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn self_relation_and_unknown_labels_are_rejected() {
        let self_rel = r#"[{"tokens":["a","b"],"entities":[{"type":"T","start":0,"end":1}],
            "relations":[{"type":"R","head":0,"tail":0}]}]"#;
        assert!(matches!(
            parse_dataset(self_rel, "mem", &schema()),
            Err(Error::Validation { .. })
        ));
        let unknown = r#"[{"tokens":["a"],"entities":[{"type":"Q","start":0,"end":1}]}]"#;
        assert!(matches!(
            parse_dataset(unknown, "mem", &schema()),
            Err(Error::Validation { .. })
        ));
        let records = parse_records(unknown, "mem").unwrap();
        assert_eq!(unknown_labels(&records, &schema()), vec!["entity:Q".to_string()]);
    }

    #[test]
    fn overlapping_entities_are_allowed() {
        let text = r#"[{"tokens":["a","b","c"],"entities":[{"type":"T","start":0,"end":2},{"type":"T","start":1,"end":3}]}]"#;
        assert_eq!(parse_dataset(text, "mem", &schema()).unwrap()[0].entities.len(), 2);
    }

    #[test]
    fn schema_rejects_na_and_duplicates() {
        assert!(LabelSchema::new(vec![NA.into()], vec![]).is_err());
        assert!(LabelSchema::new(vec!["A".into(), "A".into()], vec![]).is_err());
        assert!(LabelSchema::new(vec!["A".into()], vec!["A".into()]).is_ok());
    }

    #[test]
    fn width_restriction_reindexes_relations() {
        let s = Sentence {
            id: "x".into(),
            tokens: (0..8).map(|i| i.to_string()).collect(),
            entities: vec![
                EntityAnnotation { label: "T".into(), span: Span::new(0, 5) },
                EntityAnnotation { label: "T".into(), span: Span::new(6, 6) },
                EntityAnnotation { label: "T".into(), span: Span::new(7, 7) },
            ],
            relations: vec![
                RelationAnnotation { label: "R".into(), head: 0, tail: 1 },
                RelationAnnotation { label: "R".into(), head: 2, tail: 1 },
            ],
        };
        let r = s.restricted_to_width(3);
        assert_eq!(r.entities.len(), 2);
        assert_eq!(r.relations, vec![RelationAnnotation { label: "R".into(), head: 1, tail: 0 }]);
    }

    #[test]
    fn folds_of_single_sentences() {
        let plan = make_folds(&blank(10), 10, 3).unwrap();
        assert_eq!(plan.fold_sizes(), vec![1; 10]);
    }

    #[test]
    fn folds_over_ade_sized_corpus() {
        let plan = make_folds(&blank(4272), 10, 11).unwrap();
        assert!(plan.fold_sizes().iter().all(|&n| n == 427 || n == 428));
        assert_eq!(plan.fold_sizes().iter().sum::<usize>(), 4272);
        assert_eq!(plan, make_folds(&blank(4272), 10, 11).unwrap());
        assert_ne!(plan.assignment, make_folds(&blank(4272), 10, 12).unwrap().assignment);
    }

    #[test]
    fn fold_arguments_are_checked() {
        assert!(make_folds(&blank(3), 4, 0).is_err());
        assert!(make_folds(&blank(3), 1, 0).is_err());
        let plan = make_folds(&blank(5), 2, 0).unwrap();
        let (train, held) = plan.split(1);
        assert_eq!(train.len() + held.len(), 5);
        assert_eq!(held, plan.fold_members(1));
        assert_eq!(plan.fold_of("s0"), Some(plan.assignment[0]));
    }
}
