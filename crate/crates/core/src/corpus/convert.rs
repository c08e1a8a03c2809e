//! Conversion of public corpus distributions into the canonical dataset format.
//!
//! Supported inputs:
//!
//! * `spert-json`: JSON arrays of `{tokens, entities, relations, orig_id?}` as
//!   distributed with the CoNLL04 and ADE (10-fold) splits commonly used for
//!   span-based extraction. Offsets are already end-exclusive word indices.
//! * `scierc-jsonl`: one document per line,
//!   `{"doc_key", "sentences": [[tok]], "ner": [[[s, e, type]]], "relations": [[[s1, e1, s2, e2, type]]]}`
//!   with inclusive document-level word offsets.
//! * `conll04-corp`: the original column format. Token rows are
//!   `sent \t type \t index \t O \t POS \t word \t O \t O \t O`, with multiword
//!   entities joined by `/`; a blank line is followed by `arg1 \t arg2 \t relation`
//!   rows referring to token row indices.
//!
//! Relations whose arguments are not annotated entities, and self-relations,
//! are dropped and counted in the report.

use std::collections::HashMap;
use std::fmt;
use std::fs;
use std::path::Path;
use std::str::FromStr;

use serde::Deserialize;

use super::{parse_records, EntityAnnotation, LabelSchema, RelationAnnotation, Sentence};
use crate::error::{Error, Result};
use crate::spanspace::Span;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SourceFormat {
    SpertJson,
    SciercJsonl,
    Conll04Corp,
}

impl FromStr for SourceFormat {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "spert-json" => Ok(Self::SpertJson),
            "scierc-jsonl" => Ok(Self::SciercJsonl),
            "conll04-corp" => Ok(Self::Conll04Corp),
            other => Err(Error::Argument(format!(
                "unknown source format {other:?} (expected spert-json, scierc-jsonl or conll04-corp)"
            ))),
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct ConversionReport {
    pub sentences: usize,
    pub entities: usize,
    pub relations: usize,
    pub dropped_relations: usize,
}

impl fmt::Display for ConversionReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "sentences={} entities={} relations={} dropped_relations={}",
            self.sentences, self.entities, self.relations, self.dropped_relations
        )
    }
}

pub struct Converted {
    pub sentences: Vec<Sentence>,
    pub schema: LabelSchema,
    pub report: ConversionReport,
}

pub fn convert_file(format: SourceFormat, path: impl AsRef<Path>) -> Result<Converted> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    convert_str(format, &text, &path.display().to_string())
}

pub fn convert_str(format: SourceFormat, text: &str, source: &str) -> Result<Converted> {
    let mut report = ConversionReport::default();
    let sentences = match format {
        SourceFormat::SpertJson => from_spert(text, source, &mut report)?,
        SourceFormat::SciercJsonl => from_scierc(text, source, &mut report)?,
        SourceFormat::Conll04Corp => from_conll04(text, source, &mut report)?,
    };
    report.sentences = sentences.len();
    report.entities = sentences.iter().map(|s| s.entities.len()).sum();
    report.relations = sentences.iter().map(|s| s.relations.len()).sum();
    let schema = LabelSchema::infer(&sentences)?;
    for s in &sentences {
        s.validate(&schema).map_err(|message| Error::Validation {
            record: s.id.clone(),
            message,
        })?;
    }
    Ok(Converted {
        sentences,
        schema,
        report,
    })
}

/// Accumulates one sentence, deduplicating entities and filtering relations.
struct Builder {
    id: String,
    tokens: Vec<String>,
    entities: Vec<EntityAnnotation>,
    relations: Vec<RelationAnnotation>,
}

impl Builder {
    fn new(id: String, tokens: Vec<String>) -> Self {
        Self {
            id,
            tokens,
            entities: Vec::new(),
            relations: Vec::new(),
        }
    }

    fn entity(&mut self, label: &str, span: Span) -> usize {
        if let Some(i) = self
            .entities
            .iter()
            .position(|e| e.span == span && e.label == label)
        {
            return i;
        }
        self.entities.push(EntityAnnotation {
            label: label.to_string(),
            span,
        });
        self.entities.len() - 1
    }

    fn find(&self, span: Span) -> Option<usize> {
        self.entities.iter().position(|e| e.span == span)
    }

    fn relation(&mut self, label: &str, head: Option<usize>, tail: Option<usize>, report: &mut ConversionReport) {
        match (head, tail) {
            (Some(head), Some(tail)) if head != tail => {
                let rel = RelationAnnotation {
                    label: label.to_string(),
                    head,
                    tail,
                };
                if !self.relations.contains(&rel) {
                    self.relations.push(rel);
                }
            }
            _ => report.dropped_relations += 1,
        }
    }

    fn finish(self) -> Sentence {
        Sentence {
            id: self.id,
            tokens: self.tokens,
            entities: self.entities,
            relations: self.relations,
        }
    }
}

fn from_spert(text: &str, source: &str, report: &mut ConversionReport) -> Result<Vec<Sentence>> {
    #[derive(Deserialize)]
    struct WithOrigId {
        #[serde(default)]
        orig_id: Option<serde_json::Value>,
    }

    let ids: Vec<Option<String>> = if text.trim().is_empty() {
        Vec::new()
    } else {
        let extra: Vec<WithOrigId> = serde_json::from_str(text).map_err(|e| Error::Format {
            path: source.to_string(),
            locus: format!("line {} column {}", e.line(), e.column()),
            message: e.to_string(),
        })?;
        extra
            .into_iter()
            .map(|x| {
                x.orig_id.map(|v| match v {
                    serde_json::Value::String(s) => s,
                    other => other.to_string(),
                })
            })
            .collect()
    };

    let records = parse_records(text, source)?;
    let mut out = Vec::with_capacity(records.len());
    for (i, (raw, orig)) in records.into_iter().zip(ids).enumerate() {
        let id = raw.id.clone().or(orig).unwrap_or_else(|| i.to_string());
        let mut b = Builder::new(id.clone(), raw.tokens);
        let mut index = Vec::with_capacity(raw.entities.len());
        for e in &raw.entities {
            if e.end <= e.start || e.end > b.tokens.len() {
                return Err(Error::Validation {
                    record: id,
                    message: format!("entity offsets [{}, {}) out of range", e.start, e.end),
                });
            }
            index.push(b.entity(&e.label, Span::new(e.start, e.end - 1)));
        }
        for r in &raw.relations {
            b.relation(
                &r.label,
                index.get(r.head).copied(),
                index.get(r.tail).copied(),
                report,
            );
        }
        out.push(b.finish());
    }
    Ok(out)
}

fn from_scierc(text: &str, source: &str, report: &mut ConversionReport) -> Result<Vec<Sentence>> {
    /// `(head start, head end, tail start, tail end, label)`, inclusive.
    type RelationRow = (usize, usize, usize, usize, String);

    #[derive(Deserialize)]
    struct Doc {
        doc_key: serde_json::Value,
        sentences: Vec<Vec<String>>,
        #[serde(default)]
        ner: Vec<Vec<(usize, usize, String)>>,
        #[serde(default)]
        relations: Vec<Vec<RelationRow>>,
    }

    let mut out = Vec::new();
    for (line_no, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let doc: Doc = serde_json::from_str(line).map_err(|e| Error::Format {
            path: source.to_string(),
            locus: format!("line {} column {}", line_no + 1, e.column()),
            message: e.to_string(),
        })?;
        let key = match &doc.doc_key {
            serde_json::Value::String(s) => s.clone(),
            other => other.to_string(),
        };
        let mut offset = 0;
        for (si, tokens) in doc.sentences.into_iter().enumerate() {
            let n = tokens.len();
            let mut b = Builder::new(format!("{key}/{si}"), tokens);
            let local = |s: usize, e: usize| -> Result<Span> {
                if s < offset || e < s || e >= offset + n {
                    return Err(Error::Validation {
                        record: format!("{key}/{si}"),
                        message: format!("document offsets [{s}, {e}] outside sentence"),
                    });
                }
                Ok(Span::new(s - offset, e - offset))
            };
            for (s, e, label) in doc.ner.get(si).into_iter().flatten() {
                let span = local(*s, *e)?;
                b.entity(label, span);
            }
            for (s1, e1, s2, e2, label) in doc.relations.get(si).into_iter().flatten() {
                let head = local(*s1, *e1).ok().and_then(|sp| b.find(sp));
                let tail = local(*s2, *e2).ok().and_then(|sp| b.find(sp));
                b.relation(label, head, tail, report);
            }
            out.push(b.finish());
            offset += n;
        }
    }
    Ok(out)
}

fn from_conll04(text: &str, source: &str, report: &mut ConversionReport) -> Result<Vec<Sentence>> {
    // Each sentence: token rows, blank line, relation rows (possibly none), blank line.
    let mut out = Vec::new();
    let lines: Vec<&str> = text.lines().collect();
    let mut i = 0;
    while i < lines.len() {
        if lines[i].trim().is_empty() {
            i += 1;
            continue;
        }
        let mut sent_id = String::new();
        let mut tokens = Vec::new();
        // token row index -> (span, label)
        let mut rows: HashMap<usize, (Span, String)> = HashMap::new();
        let mut entity_rows = Vec::new();
        while i < lines.len() && !lines[i].trim().is_empty() {
            let cols: Vec<&str> = lines[i].split('\t').collect();
            if cols.len() < 6 {
                return Err(Error::Format {
                    path: source.to_string(),
                    locus: format!("line {}", i + 1),
                    message: format!("expected at least 6 tab-separated columns, found {}", cols.len()),
                });
            }
            let row: usize = cols[2].trim().parse().map_err(|_| Error::Format {
                path: source.to_string(),
                locus: format!("line {}", i + 1),
                message: format!("token index {:?} is not an integer", cols[2]),
            })?;
            sent_id = cols[0].trim().to_string();
            let start = tokens.len();
            tokens.extend(cols[5].split('/').filter(|w| !w.is_empty()).map(|w| match w {
                "COMMA" => ",".to_string(),
                "-LRB-" => "(".to_string(),
                "-RRB-" => ")".to_string(),
                other => other.to_string(),
            }));
            if tokens.len() == start {
                tokens.push(cols[5].to_string());
            }
            let label = cols[1].trim();
            if label != "O" {
                let span = Span::new(start, tokens.len() - 1);
                rows.insert(row, (span, label.to_string()));
                entity_rows.push(row);
            }
            i += 1;
        }
        // blank separator, then relation rows until the next blank line
        if i < lines.len() {
            i += 1;
        }
        let mut b = Builder::new(format!("conll04-{sent_id}"), tokens);
        let mut entity_of_row = HashMap::new();
        for row in entity_rows {
            let (span, label) = &rows[&row];
            entity_of_row.insert(row, b.entity(label, *span));
        }
        while i < lines.len() && !lines[i].trim().is_empty() {
            let cols: Vec<&str> = lines[i].split('\t').map(str::trim).collect();
            if cols.len() == 3 && cols[0].parse::<usize>().is_ok() && cols[1].parse::<usize>().is_ok() {
                let head = cols[0].parse::<usize>().ok().and_then(|r| entity_of_row.get(&r).copied());
                let tail = cols[1].parse::<usize>().ok().and_then(|r| entity_of_row.get(&r).copied());
                b.relation(cols[2], head, tail, report);
                i += 1;
            } else {
                // no relation block: this line starts the next sentence
                break;
            }
        }
        out.push(b.finish());
    }
    Ok(out)
}
