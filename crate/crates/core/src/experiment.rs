//! Evaluation, cross-validation and the negative-sample sweep.

use std::fmt::Write as _;

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;

use crate::checkpoint::Checkpoint;
use crate::config::RunConfig;
use crate::corpus::{make_folds, unknown_labels, LabelSchema, RawRecord, Sentence};
use crate::error::{Error, Result};
use crate::inference::{predict_sentence, DecodeConfig, Prediction};
use crate::metrics::{aggregate_folds, Averaging, Prf, PrfSummary, Scorer};
use crate::model::ModelParams;
use crate::spanspace::Span;
use crate::train::train;

pub fn predict_all(params: &ModelParams, sentences: &[Sentence], cfg: &DecodeConfig) -> Result<Vec<Prediction>> {
    sentences.par_iter().map(|s| predict_sentence(params, s, cfg)).collect()
}

pub fn gold_entities(sentence: &Sentence, schema: &LabelSchema) -> Vec<(Span, usize)> {
    sentence
        .entities
        .iter()
        .filter_map(|e| Some((e.span, schema.entity_index(&e.label)?)))
        .collect()
}

pub fn gold_relations(sentence: &Sentence, schema: &LabelSchema) -> Vec<(Span, Span, usize)> {
    sentence
        .relations
        .iter()
        .filter_map(|r| {
            Some((
                sentence.entities[r.head].span,
                sentence.entities[r.tail].span,
                schema.relation_index(&r.label)?,
            ))
        })
        .collect()
}

pub fn score_predictions(sentences: &[Sentence], predictions: &[Prediction], schema: &LabelSchema) -> Scorer {
    let mut scorer = Scorer::new(schema.entity_types.len(), schema.relation_types.len());
    for (s, p) in sentences.iter().zip(predictions) {
        scorer.add_sentence(
            &gold_entities(s, schema),
            &p.entity_triples(),
            &gold_relations(s, schema),
            &p.relation_triples(),
        );
    }
    scorer
}

pub fn score_sentences(params: &ModelParams, sentences: &[Sentence], schema: &LabelSchema, cfg: &DecodeConfig) -> Result<Scorer> {
    let predictions = predict_all(params, sentences, cfg)?;
    Ok(score_predictions(sentences, &predictions, schema))
}

/// Fails with the sorted list of labels the schema does not know.
pub fn check_schema(records: &[RawRecord], schema: &LabelSchema) -> Result<()> {
    let unknown = unknown_labels(records, schema);
    if unknown.is_empty() {
        Ok(())
    } else {
        Err(Error::SchemaMismatch { unknown })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EvalReport {
    pub averaging: Averaging,
    pub all_types: bool,
    pub sentences: usize,
    pub entity: Prf,
    pub relation: Prf,
    pub entity_per_type: Vec<(String, Prf)>,
    pub relation_per_type: Vec<(String, Prf)>,
}

impl EvalReport {
    pub fn from_scorer(scorer: &Scorer, schema: &LabelSchema, sentences: usize, averaging: Averaging, all_types: bool) -> Self {
        let per_type = |names: &[String], counts: &[crate::metrics::Counts]| {
            names.iter().cloned().zip(counts.iter().map(|c| c.prf())).collect()
        };
        Self {
            averaging,
            all_types,
            sentences,
            entity: scorer.entity(averaging, all_types),
            relation: scorer.relation(averaging, all_types),
            entity_per_type: per_type(&schema.entity_types, &scorer.entities),
            relation_per_type: per_type(&schema.relation_types, &scorer.relations),
        }
    }

    /// Flat `key=value` lines.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        writeln!(out, "averaging={}", self.averaging).unwrap();
        writeln!(out, "sentences={}", self.sentences).unwrap();
        for (task, prf) in [("entity", &self.entity), ("relation", &self.relation)] {
            writeln!(out, "{task}_precision={}", prf.precision).unwrap();
            writeln!(out, "{task}_recall={}", prf.recall).unwrap();
            writeln!(out, "{task}_f1={}", prf.f1).unwrap();
            writeln!(out, "{task}_tp={}", prf.tp).unwrap();
            writeln!(out, "{task}_fp={}", prf.fp).unwrap();
            writeln!(out, "{task}_fn={}", prf.fn_).unwrap();
        }
        out
    }

    /// Tab-separated per-type rows followed by one aggregate row per task.
    pub fn to_table(&self) -> String {
        let mut out = String::from("task\ttype\tprecision\trecall\tf1\ttp\tfp\tfn\n");
        let mut row = |task: &str, name: &str, p: &Prf| {
            writeln!(out, "{task}\t{name}\t{}\t{}\t{}\t{}\t{}\t{}", p.precision, p.recall, p.f1, p.tp, p.fp, p.fn_).unwrap();
        };
        for (name, p) in &self.entity_per_type {
            row("entity", name, p);
        }
        row("entity", &format!("[{}]", self.averaging), &self.entity);
        for (name, p) in &self.relation_per_type {
            row("relation", name, p);
        }
        row("relation", &format!("[{}]", self.averaging), &self.relation);
        out
    }
}

pub fn evaluate(checkpoint: &Checkpoint, sentences: &[Sentence], averaging: Averaging, all_types: bool) -> Result<EvalReport> {
    let scorer = score_sentences(&checkpoint.params, sentences, &checkpoint.schema, &checkpoint.config.decode())?;
    Ok(EvalReport::from_scorer(&scorer, &checkpoint.schema, sentences.len(), averaging, all_types))
}

/// Per-fold training seed, derived from the master seed.
pub fn fold_seed(master: u64, fold: usize) -> u64 {
    let mut rng = ChaCha8Rng::seed_from_u64(master);
    rng.set_stream(fold as u64 + 1);
    rng.next_u64()
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FoldResult {
    pub fold: usize,
    pub seed: u64,
    pub train_size: usize,
    pub test_size: usize,
    pub entity: Prf,
    pub relation: Prf,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CrossValidation {
    pub folds: Vec<FoldResult>,
    pub entity: PrfSummary,
    pub relation: PrfSummary,
}

impl CrossValidation {
    /// One row per fold and a final `mean` row whose `_std` columns hold the
    /// sample standard deviation.
    pub fn to_table(&self) -> String {
        let metrics = ["entity_precision", "entity_recall", "entity_f1", "relation_precision", "relation_recall", "relation_f1"];
        let mut out = String::from("fold\tseed\ttrain_size\ttest_size");
        for m in metrics {
            write!(out, "\t{m}").unwrap();
        }
        for m in metrics {
            write!(out, "\t{m}_std").unwrap();
        }
        out.push('\n');
        let blanks = "\t".repeat(metrics.len());
        for f in &self.folds {
            writeln!(
                out,
                "{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}{blanks}",
                f.fold, f.seed, f.train_size, f.test_size,
                f.entity.precision, f.entity.recall, f.entity.f1,
                f.relation.precision, f.relation.recall, f.relation.f1,
            )
            .unwrap();
        }
        let (e, r) = (&self.entity, &self.relation);
        let summaries = [e.precision, e.recall, e.f1, r.precision, r.recall, r.f1];
        out.push_str("mean\t\t\t");
        for s in summaries {
            write!(out, "\t{}", s.mean).unwrap();
        }
        for s in summaries {
            write!(out, "\t{}", s.std).unwrap();
        }
        out.push('\n');
        out
    }
}

pub fn cross_validate(cfg: &RunConfig, schema: &LabelSchema, sentences: &[Sentence], k: usize) -> Result<CrossValidation> {
    let plan = make_folds(sentences, k, cfg.seed)?;
    let folds: Vec<FoldResult> = (0..k)
        .into_par_iter()
        .map(|fold| {
            let (train_idx, test_idx) = plan.split(fold);
            let pick = |idx: &[usize]| idx.iter().map(|&i| sentences[i].clone()).collect::<Vec<_>>();
            let (train_set, test_set) = (pick(&train_idx), pick(&test_idx));
            let fold_cfg = RunConfig {
                seed: fold_seed(cfg.seed, fold),
                ..cfg.clone()
            };
            let outcome = train(&fold_cfg, schema, &train_set, None)?;
            let scorer = score_sentences(&outcome.checkpoint.params, &test_set, schema, &fold_cfg.decode())?;
            Ok(FoldResult {
                fold,
                seed: fold_cfg.seed,
                train_size: train_set.len(),
                test_size: test_set.len(),
                entity: scorer.entity(cfg.averaging, cfg.macro_all_types),
                relation: scorer.relation(cfg.averaging, cfg.macro_all_types),
            })
        })
        .collect::<Result<_>>()?;
    Ok(CrossValidation {
        entity: aggregate_folds(&folds.iter().map(|f| f.entity).collect::<Vec<_>>())?,
        relation: aggregate_folds(&folds.iter().map(|f| f.relation).collect::<Vec<_>>())?,
        folds,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SweepRow {
    pub count: usize,
    pub entity_f1: f64,
    pub relation_f1: f64,
}

pub fn sweep_table(rows: &[SweepRow]) -> String {
    let mut out = String::from("count\tentity_f1\trelation_f1\n");
    for r in rows {
        writeln!(out, "{}\t{}\t{}", r.count, r.entity_f1, r.relation_f1).unwrap();
    }
    out
}

/// One model per count, with both negative limits set to it, scored on
/// `eval`.
pub fn sweep_negatives(
    cfg: &RunConfig,
    schema: &LabelSchema,
    train_set: &[Sentence],
    eval: &[Sentence],
    counts: &[usize],
) -> Result<Vec<SweepRow>> {
    if counts.is_empty() {
        return Err(Error::Argument("the sweep needs at least one count".into()));
    }
    counts
        .par_iter()
        .map(|&count| {
            let point = RunConfig {
                neg_entity: count,
                neg_relation: count,
                ..cfg.clone()
            };
            let outcome = train(&point, schema, train_set, None)?;
            let scorer = score_sentences(&outcome.checkpoint.params, eval, schema, &point.decode())?;
            Ok(SweepRow {
                count,
                entity_f1: scorer.entity(cfg.averaging, cfg.macro_all_types).f1,
                relation_f1: scorer.relation(cfg.averaging, cfg.macro_all_types).f1,
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn fold_seeds_differ_and_repeat() {
        let seeds: Vec<u64> = (0..10).map(|f| fold_seed(7, f)).collect();
        let mut unique = seeds.clone();
        unique.sort_unstable();
        unique.dedup();
        assert_eq!(unique.len(), 10);
        assert_eq!(seeds, (0..10).map(|f| fold_seed(7, f)).collect::<Vec<_>>());
        assert_ne!(fold_seed(7, 0), fold_seed(8, 0));
    }

    #[test]
    fn sweep_table_shape() {
        let rows = vec![
            SweepRow { count: 0, entity_f1: 0.5, relation_f1: 0.0 },
            SweepRow { count: 20, entity_f1: 1.0, relation_f1: 1.0 },
        ];
        let t = sweep_table(&rows);
        let lines: Vec<&str> = t.lines().collect();
        assert_eq!(lines[0], "count\tentity_f1\trelation_f1");
        assert_eq!(lines.len(), 3);
        assert!(lines.iter().all(|l| l.split('\t').count() == 3));
    }
}
