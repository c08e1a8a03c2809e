//! Prediction: threshold decoding over classification scores only.

use serde::{Deserialize, Serialize};

use crate::corpus::{LabelSchema, RawEntity, RawRecord, RawRelation, Sentence};
use crate::error::Result;
use crate::linalg::sigmoid;
use crate::model::ModelParams;
use crate::representation::{context_vector, relation_input, span_repr, SpanRepr};
use crate::spanspace::{enumerate_spans, ordered_pairs, Span};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DecodeConfig {
    pub theta_entity: f64,
    pub theta_relation: f64,
    pub logits_normalized: bool,
}

impl Default for DecodeConfig {
    fn default() -> Self {
        Self {
            theta_entity: 0.85,
            theta_relation: 0.85,
            logits_normalized: false,
        }
    }
}

/// Best class and its logistic probability, or `None` (NA) when that
/// probability falls below `theta`.
pub fn decide(scores: &[f64], theta: f64) -> Option<(usize, f64)> {
    let (best, score) = scores
        .iter()
        .copied()
        .enumerate()
        .fold(None::<(usize, f64)>, |acc, (i, s)| match acc {
            Some((_, b)) if b >= s => acc,
            _ => Some((i, s)),
        })?;
    let p = sigmoid(score);
    (p >= theta).then_some((best, p))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictedEntity {
    pub span: Span,
    pub class: usize,
    pub probability: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictedRelation {
    /// Indices into [`Prediction::entities`].
    pub head: usize,
    pub tail: usize,
    pub class: usize,
    pub probability: f64,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct Prediction {
    pub entities: Vec<PredictedEntity>,
    pub relations: Vec<PredictedRelation>,
    /// Ordered span pairs handed to the relation classifier.
    pub relation_candidates: usize,
}

impl Prediction {
    pub fn entity_triples(&self) -> Vec<(Span, usize)> {
        self.entities.iter().map(|e| (e.span, e.class)).collect()
    }

    pub fn relation_triples(&self) -> Vec<(Span, Span, usize)> {
        self.relations
            .iter()
            .map(|r| (self.entities[r.head].span, self.entities[r.tail].span, r.class))
            .collect()
    }

    pub fn to_record(&self, sentence: &Sentence, schema: &LabelSchema) -> RawRecord {
        RawRecord {
            id: Some(sentence.id.clone()),
            tokens: sentence.tokens.clone(),
            entities: self
                .entities
                .iter()
                .map(|e| RawEntity {
                    label: schema.entity_types[e.class].clone(),
                    start: e.span.start,
                    end: e.span.end + 1,
                    score: Some(e.probability),
                })
                .collect(),
            relations: self
                .relations
                .iter()
                .map(|r| RawRelation {
                    label: schema.relation_types[r.class].clone(),
                    head: r.head,
                    tail: r.tail,
                    score: Some(r.probability),
                })
                .collect(),
        }
    }
}

/// Runs the prediction path of a model. Identification heads are not
/// consulted.
pub fn predict_sentence(params: &ModelParams, sentence: &Sentence, cfg: &DecodeConfig) -> Result<Prediction> {
    let enc = params.encode(sentence)?;
    let mut kept: Vec<(SpanRepr, Vec<f64>, PredictedEntity)> = Vec::new();
    for span in enumerate_spans(sentence.len(), params.max_span_len()) {
        let repr = span_repr(span, &enc.out, &enc.align, &params.widths)?;
        let scores = params.entity_cls.scores(&repr.x)?;
        if let Some((class, probability)) = decide(&scores, cfg.theta_entity) {
            kept.push((repr, scores, PredictedEntity { span, class, probability }));
        }
    }

    let arg_logits: Vec<Vec<f64>> = kept
        .iter()
        .map(|(_, s, _)| {
            if cfg.logits_normalized {
                s.iter().map(|&v| sigmoid(v)).collect()
            } else {
                s.clone()
            }
        })
        .collect();
    let mut prediction = Prediction::default();
    for (h, t) in ordered_pairs(kept.len()) {
        prediction.relation_candidates += 1;
        let (head, tail) = (&kept[h].0, &kept[t].0);
        let ctx = context_vector(head.span, tail.span, &enc.out, &enc.align);
        let r = relation_input(head, tail, &ctx.values, &arg_logits[h], &arg_logits[t])?;
        let scores = params.relation_cls.scores(&r)?;
        if let Some((class, probability)) = decide(&scores, cfg.theta_relation) {
            prediction.relations.push(PredictedRelation { head: h, tail: t, class, probability });
        }
    }
    prediction.entities = kept.into_iter().map(|(_, _, e)| e).collect();
    Ok(prediction)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::encoder::{EncoderBackend, SubwordVocab, ToyEncoder};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn decide_applies_threshold_to_logistic_probability() {
        // σ(2.0) ≈ 0.881 clears 0.85
        let (class, p) = decide(&[0.1, 2.0, -1.0], 0.85).unwrap();
        assert_eq!(class, 1);
        assert!((p - 1.0 / (1.0 + (-2.0f64).exp())).abs() < 1e-12);
        // σ(1.5) ≈ 0.818 does not
        assert_eq!(decide(&[1.5, 0.0], 0.85), None);
        assert_eq!(decide(&[], 0.5), None);
        // ties go to the lower index
        assert_eq!(decide(&[3.0, 3.0], 0.5).unwrap().0, 0);
    }

    fn schema() -> LabelSchema {
        LabelSchema::new(vec!["Peop".into(), "Org".into()], vec!["Work_For".into()]).unwrap()
    }

    fn sentence() -> Sentence {
        Sentence {
            id: "p".into(),
            tokens: ["Ann", "joined", "Acme", "today"].iter().map(|s| s.to_string()).collect(),
            entities: vec![],
            relations: vec![],
        }
    }

    fn params() -> ModelParams {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let vocab = SubwordVocab::new(["Ann", "joined", "Acme", "today"]);
        let enc = ToyEncoder::new(vocab, 4, &mut rng);
        ModelParams::init(EncoderBackend::Toy(Box::new(enc)), &schema(), 3, 2, 0.02, &mut rng)
    }

    /// Entity logits: class 0 fires on width-1 spans, by pushing the width
    /// embedding of width 1 against a dedicated weight.
    fn single_width_entities(p: &mut ModelParams) {
        let d1 = 4;
        for w in 0..=p.max_span_len() {
            for c in 0..p.widths.dim() {
                p.widths.table.set(w, c, 0.0);
            }
        }
        p.widths.table.set(1, 0, 1.0);
        for r in 0..p.entity_cls.weights.rows() {
            for c in 0..p.entity_cls.weights.cols() {
                p.entity_cls.weights.set(r, c, 0.0);
            }
        }
        p.entity_cls.weights.set(d1, 0, 5.0);
    }

    #[test]
    fn identification_heads_do_not_affect_predictions() {
        let mut p = params();
        single_width_entities(&mut p);
        let cfg = DecodeConfig { theta_entity: 0.85, theta_relation: 0.0, ..DecodeConfig::default() };
        let before = predict_sentence(&p, &sentence(), &cfg).unwrap();
        p.entity_id.weights.iter_mut().for_each(|w| *w = f64::NAN);
        p.entity_id.bias = f64::NAN;
        p.relation_id.weights.iter_mut().for_each(|w| *w = f64::NAN);
        p.relation_id.bias = f64::INFINITY;
        let after = predict_sentence(&p, &sentence(), &cfg).unwrap();
        assert_eq!(before, after);
        assert_eq!(before.entities.len(), 4);
    }

    #[test]
    fn relation_candidates_are_ordered_pairs_of_kept_entities() {
        let mut p = params();
        single_width_entities(&mut p);
        // two words: both width-1 spans fire, the width-2 span stays at σ(0)
        let s = Sentence {
            tokens: vec!["Ann".into(), "Acme".into()],
            ..sentence()
        };
        let pred = predict_sentence(&p, &s, &DecodeConfig::default()).unwrap();
        assert_eq!(pred.entities.len(), 2);
        assert_eq!(pred.relation_candidates, 2);
    }

    #[test]
    fn nothing_survives_means_no_candidates() {
        let p = params();
        let cfg = DecodeConfig { theta_entity: 0.999, ..DecodeConfig::default() };
        let pred = predict_sentence(&p, &sentence(), &cfg).unwrap();
        assert!(pred.entities.is_empty());
        assert_eq!(pred.relation_candidates, 0);
    }

    #[test]
    fn record_uses_exclusive_ends_and_entity_indices() {
        let pred = Prediction {
            entities: vec![
                PredictedEntity { span: Span::new(0, 0), class: 0, probability: 0.9 },
                PredictedEntity { span: Span::new(2, 3), class: 1, probability: 0.95 },
            ],
            relations: vec![PredictedRelation { head: 0, tail: 1, class: 0, probability: 0.88 }],
            relation_candidates: 2,
        };
        let rec = pred.to_record(&sentence(), &schema());
        assert_eq!((rec.entities[1].start, rec.entities[1].end), (2, 4));
        assert_eq!(rec.entities[1].label, "Org");
        assert_eq!(rec.relations[0].label, "Work_For");
        assert_eq!(rec.relations[0].score, Some(0.88));
        assert_eq!(pred.relation_triples(), vec![(Span::new(0, 0), Span::new(2, 3), 0)]);
    }

    #[test]
    fn candidates_are_exactly_ordered_non_self_pairs() {
        for n in 0..6 {
            let pairs: Vec<(usize, usize)> = ordered_pairs(n).collect();
            let mut expected = Vec::new();
            for h in 0..n {
                for t in 0..n {
                    if h != t {
                        expected.push((h, t));
                    }
                }
            }
            assert_eq!(pairs, expected);
        }
    }

    #[test]
    fn outputs_clear_their_thresholds() {
        let mut p = params();
        single_width_entities(&mut p);
        for theta in [0.5, 0.7, 0.9] {
            let cfg = DecodeConfig { theta_entity: theta, theta_relation: 0.5, ..DecodeConfig::default() };
            let pred = predict_sentence(&p, &sentence(), &cfg).unwrap();
            assert!(pred.entities.iter().all(|e| e.probability >= theta));
            assert!(pred.relations.iter().all(|r| r.probability >= 0.5));
        }
    }

    proptest::proptest! {
        #[test]
        fn argmax_ignores_uniform_shift(
            scores in proptest::collection::vec(-5.0f64..5.0, 1..6),
            shift in -10.0f64..10.0,
        ) {
            let shifted: Vec<f64> = scores.iter().map(|s| s + shift).collect();
            proptest::prop_assert_eq!(decide(&scores, 0.0).map(|d| d.0), decide(&shifted, 0.0).map(|d| d.0));
        }
    }
}
