//! Exact-match scoring, micro/macro averaging and fold statistics.

use std::collections::HashSet;
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::spanspace::Span;

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Counts {
    pub tp: usize,
    pub fp: usize,
    pub fn_: usize,
}

impl Counts {
    pub fn add(&mut self, other: Counts) {
        self.tp += other.tp;
        self.fp += other.fp;
        self.fn_ += other.fn_;
    }

    pub fn is_observed(&self) -> bool {
        self.tp + self.fp + self.fn_ > 0
    }

    pub fn prf(&self) -> Prf {
        let precision = ratio(self.tp, self.tp + self.fp);
        let recall = ratio(self.tp, self.tp + self.fn_);
        Prf {
            precision,
            recall,
            f1: harmonic(precision, recall),
            tp: self.tp,
            fp: self.fp,
            fn_: self.fn_,
        }
    }
}

fn ratio(a: usize, b: usize) -> f64 {
    if b == 0 {
        0.0
    } else {
        a as f64 / b as f64
    }
}

fn harmonic(p: f64, r: f64) -> f64 {
    if p + r > 0.0 {
        2.0 * p * r / (p + r)
    } else {
        0.0
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct Prf {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub tp: usize,
    pub fp: usize,
    pub fn_: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Averaging {
    Micro,
    Macro,
}

impl std::str::FromStr for Averaging {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "micro" => Ok(Averaging::Micro),
            "macro" => Ok(Averaging::Macro),
            other => Err(Error::Argument(format!("unknown averaging mode {other:?}, expected micro or macro"))),
        }
    }
}

impl fmt::Display for Averaging {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Averaging::Micro => "micro",
            Averaging::Macro => "macro",
        })
    }
}

/// Per-type counts, indexed by type id.
pub type TypeCounts = Vec<Counts>;

fn match_items<T: Eq + std::hash::Hash + Copy>(
    gold: &[T],
    pred: &[T],
    class_of: impl Fn(&T) -> usize,
    classes: usize,
) -> TypeCounts {
    let gold: HashSet<T> = gold.iter().copied().collect();
    let pred: HashSet<T> = pred.iter().copied().collect();
    let mut counts = vec![Counts::default(); classes];
    for p in &pred {
        if gold.contains(p) {
            counts[class_of(p)].tp += 1;
        } else {
            counts[class_of(p)].fp += 1;
        }
    }
    for g in gold.difference(&pred) {
        counts[class_of(g)].fn_ += 1;
    }
    counts
}

/// Entities match on exact `(span, type)`. Duplicates are collapsed first.
pub fn match_entities(gold: &[(Span, usize)], pred: &[(Span, usize)], classes: usize) -> TypeCounts {
    match_items(gold, pred, |e| e.1, classes)
}

/// Relations match on `(head span, tail span, type)`; the types assigned to
/// the argument entities play no role.
pub fn match_relations(
    gold: &[(Span, Span, usize)],
    pred: &[(Span, Span, usize)],
    classes: usize,
) -> TypeCounts {
    match_items(gold, pred, |r| r.2, classes)
}

/// Micro pools counts; macro averages per-type P, R and F1 over the types
/// that occur in gold or predictions (or over every type when `all_types`).
pub fn aggregate(counts: &[Counts], mode: Averaging, all_types: bool) -> Prf {
    let mut pooled = Counts::default();
    for c in counts {
        pooled.add(*c);
    }
    let micro = pooled.prf();
    match mode {
        Averaging::Micro => micro,
        Averaging::Macro => {
            let per_type: Vec<Prf> = counts
                .iter()
                .filter(|c| all_types || c.is_observed())
                .map(Counts::prf)
                .collect();
            if per_type.is_empty() {
                return micro;
            }
            let n = per_type.len() as f64;
            Prf {
                precision: per_type.iter().map(|p| p.precision).sum::<f64>() / n,
                recall: per_type.iter().map(|p| p.recall).sum::<f64>() / n,
                f1: per_type.iter().map(|p| p.f1).sum::<f64>() / n,
                ..micro
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub mean: f64,
    pub std: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PrfSummary {
    pub precision: Summary,
    pub recall: Summary,
    pub f1: Summary,
}

/// Mean and sample (n − 1) standard deviation; one fold gives std 0.
pub fn summarize(values: &[f64]) -> Result<Summary> {
    if values.is_empty() {
        return Err(Error::Argument("cannot summarize an empty list".into()));
    }
    // shifted by the first value so identical inputs give exactly std 0
    let n = values.len() as f64;
    let shift = values[0];
    let d: Vec<f64> = values.iter().map(|v| v - shift).collect();
    let mean_d = d.iter().sum::<f64>() / n;
    let std = if values.len() > 1 {
        (d.iter().map(|v| (v - mean_d).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
    } else {
        0.0
    };
    Ok(Summary { mean: shift + mean_d, std })
}

pub fn aggregate_folds(folds: &[Prf]) -> Result<PrfSummary> {
    if folds.is_empty() {
        return Err(Error::Argument("fold aggregation needs at least one fold".into()));
    }
    let column = |f: fn(&Prf) -> f64| folds.iter().map(f).collect::<Vec<_>>();
    Ok(PrfSummary {
        precision: summarize(&column(|p| p.precision))?,
        recall: summarize(&column(|p| p.recall))?,
        f1: summarize(&column(|p| p.f1))?,
    })
}

/// Accumulates per-type counts across sentences.
#[derive(Debug, Clone, PartialEq)]
pub struct Scorer {
    pub entities: TypeCounts,
    pub relations: TypeCounts,
}

impl Scorer {
    pub fn new(entity_types: usize, relation_types: usize) -> Self {
        Self {
            entities: vec![Counts::default(); entity_types],
            relations: vec![Counts::default(); relation_types],
        }
    }

    pub fn add_sentence(
        &mut self,
        gold_entities: &[(Span, usize)],
        pred_entities: &[(Span, usize)],
        gold_relations: &[(Span, Span, usize)],
        pred_relations: &[(Span, Span, usize)],
    ) {
        let e = match_entities(gold_entities, pred_entities, self.entities.len());
        let r = match_relations(gold_relations, pred_relations, self.relations.len());
        for (acc, c) in self.entities.iter_mut().zip(e) {
            acc.add(c);
        }
        for (acc, c) in self.relations.iter_mut().zip(r) {
            acc.add(c);
        }
    }

    pub fn merge(&mut self, other: &Scorer) {
        for (a, b) in self.entities.iter_mut().zip(&other.entities) {
            a.add(*b);
        }
        for (a, b) in self.relations.iter_mut().zip(&other.relations) {
            a.add(*b);
        }
    }

    pub fn entity(&self, mode: Averaging, all_types: bool) -> Prf {
        aggregate(&self.entities, mode, all_types)
    }

    pub fn relation(&self, mode: Averaging, all_types: bool) -> Prf {
        aggregate(&self.relations, mode, all_types)
    }
}
