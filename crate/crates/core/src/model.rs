//! Trainable parameters and the joint training objective.
//!
//! For one sentence the objective is
//!
//! ```text
//! L  = L_entity + L_relation
//! L_entity   = α Σ scaled_bce(id(x_s), q_s, eniou_s, δ) + β Σ rank(W_e x_s, y_s)
//! L_relation = α Σ bce(id(r_ab), q_ab)                  + β Σ rank(W_r r_ab, y_ab)
//! ```
//!
//! Gradients are derived by hand and flow through the relation inputs into
//! the entity classifier (via the argument logits), the width embeddings, the
//! sentence vector and, for the toy encoder, the encoder itself.

use std::collections::HashMap;
use std::slice;

use rand::{Rng, RngCore};
use serde::{Deserialize, Serialize};

use crate::corpus::{LabelSchema, Sentence};
use crate::encoder::{Encoder, EncoderBackend, EncoderOutput, SubwordAlignment, ToyCache};
use crate::error::{Error, Result};
use crate::heads::{
    bce, bce_grad_logit, joint_loss, ranking_loss_with_grad, scaled_bce, scaled_bce_grad_logit,
    ClassificationHead, IdentificationHead, RankingLossConfig, TaskLossConfig,
};
use crate::linalg::{axpy, sigmoid, Matrix};
use crate::representation::{
    context_vector, relation_input, span_repr, RelationLayout, SpanRepr, WidthEmbeddingTable,
};
use crate::spanspace::{PairSample, Span, SpanSample};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub ranking: RankingLossConfig,
    pub task: TaskLossConfig,
    /// Squash argument logits with the logistic function before they enter
    /// relation inputs.
    pub logits_normalized: bool,
    /// Inverted-dropout rate on head inputs; 0 disables.
    pub dropout: f64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            ranking: RankingLossConfig::default(),
            task: TaskLossConfig::default(),
            logits_normalized: false,
            dropout: 0.0,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ModelParams {
    pub encoder: EncoderBackend,
    pub widths: WidthEmbeddingTable,
    pub entity_id: IdentificationHead,
    pub entity_cls: ClassificationHead,
    pub relation_id: IdentificationHead,
    pub relation_cls: ClassificationHead,
}

/// Raw per-component sums for one sentence or batch, before α/β weighting.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct LossBreakdown {
    pub entity_identification: f64,
    pub entity_classification: f64,
    pub relation_identification: f64,
    pub relation_classification: f64,
}

impl LossBreakdown {
    pub fn entity_task(&self, cfg: &TaskLossConfig) -> f64 {
        cfg.alpha * self.entity_identification + cfg.beta * self.entity_classification
    }

    pub fn relation_task(&self, cfg: &TaskLossConfig) -> f64 {
        cfg.alpha * self.relation_identification + cfg.beta * self.relation_classification
    }

    pub fn total(&self, cfg: &TaskLossConfig) -> f64 {
        joint_loss(self.entity_task(cfg), self.relation_task(cfg))
    }

    pub fn add(&mut self, other: &LossBreakdown) {
        self.entity_identification += other.entity_identification;
        self.entity_classification += other.entity_classification;
        self.relation_identification += other.relation_identification;
        self.relation_classification += other.relation_classification;
    }

    /// Name of the first non-finite component.
    pub fn non_finite_component(&self) -> Option<&'static str> {
        [
            ("entity identification", self.entity_identification),
            ("entity classification", self.entity_classification),
            ("relation identification", self.relation_identification),
            ("relation classification", self.relation_classification),
        ]
        .into_iter()
        .find(|(_, v)| !v.is_finite())
        .map(|(name, _)| name)
    }
}

/// One sentence with its sampled training candidates.
#[derive(Debug, Clone)]
pub struct Example<'a> {
    pub sentence: &'a Sentence,
    pub entities: Vec<SpanSample>,
    pub pairs: Vec<PairSample>,
}

pub(crate) struct Encoded {
    pub align: SubwordAlignment,
    pub out: EncoderOutput,
    cache: Option<ToyCache>,
}

impl ModelParams {
    pub fn init<R: Rng + ?Sized>(
        encoder: EncoderBackend,
        schema: &LabelSchema,
        max_span_len: usize,
        width_dim: usize,
        init_std: f64,
        rng: &mut R,
    ) -> Self {
        let d1 = encoder.as_encoder().dim();
        let entity_dim = 2 * d1 + width_dim;
        let relation_dim = RelationLayout {
            d1,
            d2: width_dim,
            d3: schema.entity_types.len(),
        }
        .len();
        Self {
            widths: WidthEmbeddingTable::new(max_span_len, width_dim, init_std, rng),
            entity_id: IdentificationHead::new(entity_dim, init_std, rng),
            entity_cls: ClassificationHead::new(entity_dim, schema.entity_types.len(), init_std, rng),
            relation_id: IdentificationHead::new(relation_dim, init_std, rng),
            relation_cls: ClassificationHead::new(relation_dim, schema.relation_types.len(), init_std, rng),
            encoder,
        }
    }

    pub fn max_span_len(&self) -> usize {
        self.widths.max_width()
    }

    /// Same shapes, all zeros; the gradient accumulator type.
    pub fn zeros_like(&self) -> Self {
        Self {
            encoder: match &self.encoder {
                EncoderBackend::Toy(e) => EncoderBackend::Toy(Box::new(e.zeros_like())),
                other => other.clone(),
            },
            widths: self.widths.zeros_like(),
            entity_id: self.entity_id.zeros_like(),
            entity_cls: self.entity_cls.zeros_like(),
            relation_id: self.relation_id.zeros_like(),
            relation_cls: self.relation_cls.zeros_like(),
        }
    }

    /// Every trainable tensor, flattened, in a fixed order.
    pub fn slots(&self) -> Vec<(&'static str, &[f64])> {
        let mut out = match &self.encoder {
            EncoderBackend::Toy(e) => e.slots(),
            EncoderBackend::Pretrained(_) => Vec::new(),
        };
        out.extend([
            ("widths", self.widths.table.as_slice()),
            ("entity_id.weights", &self.entity_id.weights[..]),
            ("entity_id.bias", slice::from_ref(&self.entity_id.bias)),
            ("entity_cls.weights", self.entity_cls.weights.as_slice()),
            ("relation_id.weights", &self.relation_id.weights[..]),
            ("relation_id.bias", slice::from_ref(&self.relation_id.bias)),
            ("relation_cls.weights", self.relation_cls.weights.as_slice()),
        ]);
        out
    }

    pub fn slots_mut(&mut self) -> Vec<&mut [f64]> {
        let mut out = match &mut self.encoder {
            EncoderBackend::Toy(e) => e.slots_mut(),
            EncoderBackend::Pretrained(_) => Vec::new(),
        };
        out.extend([
            self.widths.table.as_mut_slice(),
            &mut self.entity_id.weights[..],
            slice::from_mut(&mut self.entity_id.bias),
            self.entity_cls.weights.as_mut_slice(),
            &mut self.relation_id.weights[..],
            slice::from_mut(&mut self.relation_id.bias),
            self.relation_cls.weights.as_mut_slice(),
        ]);
        out
    }

    pub fn parameter_count(&self) -> usize {
        self.slots().iter().map(|(_, s)| s.len()).sum()
    }

    pub fn is_finite(&self) -> bool {
        self.slots().iter().all(|(_, s)| s.iter().all(|v| v.is_finite()))
    }

    pub(crate) fn encode(&self, sentence: &Sentence) -> Result<Encoded> {
        let wrap = |e: Error| match e {
            e @ Error::Encoding { .. } => e,
            other => Error::Encoding {
                sentence_id: sentence.id.clone(),
                message: other.to_string(),
            },
        };
        match &self.encoder {
            EncoderBackend::Toy(enc) => {
                let tokens = enc.tokenize(&sentence.tokens).map_err(wrap)?;
                let (out, cache) = enc.forward(&tokens.ids);
                Ok(Encoded {
                    align: tokens.alignment,
                    out,
                    cache: Some(cache),
                })
            }
            EncoderBackend::Pretrained(enc) => {
                let (align, out) = enc.encode(&sentence.id, &sentence.tokens).map_err(wrap)?;
                Ok(Encoded {
                    align,
                    out,
                    cache: None,
                })
            }
        }
    }

    /// Loss of one example without dropout or gradients.
    pub fn loss(&self, example: &Example<'_>, cfg: &ModelConfig) -> Result<LossBreakdown> {
        self.run(example, cfg, None, None)
    }

    /// Loss of one example; accumulates `∂L/∂θ` into `grads`.
    pub fn loss_and_grad(
        &self,
        example: &Example<'_>,
        cfg: &ModelConfig,
        grads: &mut ModelParams,
        dropout_rng: Option<&mut dyn RngCore>,
    ) -> Result<LossBreakdown> {
        self.run(example, cfg, Some(grads), dropout_rng)
    }

    fn run(
        &self,
        example: &Example<'_>,
        cfg: &ModelConfig,
        mut grads: Option<&mut ModelParams>,
        mut dropout_rng: Option<&mut dyn RngCore>,
    ) -> Result<LossBreakdown> {
        let enc = self.encode(example.sentence)?;
        let d1 = enc.out.dim();

        let mut spans: Vec<Span> = Vec::new();
        let mut index: HashMap<Span, usize> = HashMap::new();
        let all_spans = example
            .entities
            .iter()
            .map(|s| s.span)
            .chain(example.pairs.iter().flat_map(|p| [p.head, p.tail]));
        for span in all_spans {
            index.entry(span).or_insert_with(|| {
                spans.push(span);
                spans.len() - 1
            });
        }
        let reprs: Vec<SpanRepr> = spans
            .iter()
            .map(|&s| span_repr(s, &enc.out, &enc.align, &self.widths))
            .collect::<Result<_>>()?;
        let span_scores: Vec<Vec<f64>> = reprs
            .iter()
            .map(|r| self.entity_cls.scores(&r.x))
            .collect::<Result<_>>()?;
        let logits: Vec<Vec<f64>> = span_scores
            .iter()
            .map(|s| {
                if cfg.logits_normalized {
                    s.iter().map(|&v| sigmoid(v)).collect()
                } else {
                    s.clone()
                }
            })
            .collect();

        let track = grads.is_some();
        let mut grad_x: Vec<Vec<f64>> = if track {
            reprs.iter().map(|r| vec![0.0; r.x.len()]).collect()
        } else {
            Vec::new()
        };
        let mut grad_tokens = Matrix::zeros(if track { enc.out.token_vectors.rows() } else { 0 }, d1);

        let TaskLossConfig { alpha, beta, delta } = cfg.task;
        let mut loss = LossBreakdown::default();

        for sample in &example.entities {
            let k = index[&sample.span];
            let x = &reprs[k].x;
            let mask = dropout_mask(x.len(), cfg.dropout, &mut dropout_rng);
            let xd = apply_mask(x, mask.as_deref());
            let q = sample.identification_label();
            let p = self.entity_id.probability(&xd);
            loss.entity_identification += scaled_bce(p, q, sample.eniou, delta);
            let scores = match mask {
                Some(_) => self.entity_cls.scores(&xd)?,
                None => span_scores[k].clone(),
            };
            let (rank, grad_scores) = ranking_loss_with_grad(&scores, sample.class, &cfg.ranking)?;
            loss.entity_classification += rank;

            if let Some(g) = grads.as_deref_mut() {
                let gz = alpha * scaled_bce_grad_logit(p, q, sample.eniou, delta);
                let gs: Vec<f64> = grad_scores.iter().map(|v| beta * v).collect();
                let mut gxd = vec![0.0; x.len()];
                self.entity_id.backward(&xd, gz, &mut g.entity_id, &mut gxd);
                self.entity_cls.backward(&xd, &gs, &mut g.entity_cls, &mut gxd);
                accumulate_masked(&mut grad_x[k], &gxd, mask.as_deref());
            }
        }

        for sample in &example.pairs {
            let (h, t) = (index[&sample.head], index[&sample.tail]);
            let ctx = context_vector(sample.head, sample.tail, &enc.out, &enc.align);
            let r = relation_input(&reprs[h], &reprs[t], &ctx.values, &logits[h], &logits[t])?;
            let mask = dropout_mask(r.len(), cfg.dropout, &mut dropout_rng);
            let rd = apply_mask(&r, mask.as_deref());
            let q = sample.identification_label();
            let p = self.relation_id.probability(&rd);
            loss.relation_identification += bce(p, q);
            let scores = self.relation_cls.scores(&rd)?;
            let (rank, grad_scores) = ranking_loss_with_grad(&scores, sample.class, &cfg.ranking)?;
            loss.relation_classification += rank;

            if let Some(g) = grads.as_deref_mut() {
                let gz = alpha * bce_grad_logit(p, q);
                let gs: Vec<f64> = grad_scores.iter().map(|v| beta * v).collect();
                let mut grd = vec![0.0; r.len()];
                self.relation_id.backward(&rd, gz, &mut g.relation_id, &mut grd);
                self.relation_cls.backward(&rd, &gs, &mut g.relation_cls, &mut grd);
                let mut gr = vec![0.0; r.len()];
                accumulate_masked(&mut gr, &grd, mask.as_deref());

                let layout = RelationLayout {
                    d1,
                    d2: self.widths.dim(),
                    d3: logits[h].len(),
                };
                let c_len = layout.head_c().len();
                axpy(1.0, &gr[layout.head_c()], &mut grad_x[h][..c_len]);
                axpy(1.0, &gr[layout.tail_c()], &mut grad_x[t][..c_len]);
                ctx.scatter(&gr[layout.context()], &mut grad_tokens);
                for (arg, block) in [(h, layout.head_logits()), (t, layout.tail_logits())] {
                    let g_scores: Vec<f64> = if cfg.logits_normalized {
                        gr[block]
                            .iter()
                            .zip(&logits[arg])
                            .map(|(g, s)| g * s * (1.0 - s))
                            .collect()
                    } else {
                        gr[block].to_vec()
                    };
                    self.entity_cls
                        .backward(&reprs[arg].x, &g_scores, &mut g.entity_cls, &mut grad_x[arg]);
                }
            }
        }

        if let Some(g) = grads {
            let mut grad_sentence = vec![0.0; d1];
            for (repr, gx) in reprs.iter().zip(&grad_x) {
                let layout = repr.layout();
                repr.pooled.scatter(&gx[layout.pooled()], &mut grad_tokens);
                axpy(1.0, &gx[layout.width()], g.widths.table.row_mut(repr.width_index()));
                axpy(1.0, &gx[layout.sentence()], &mut grad_sentence);
            }
            if let (EncoderBackend::Toy(enc_params), EncoderBackend::Toy(enc_grads), Some(cache)) =
                (&self.encoder, &mut g.encoder, enc.cache.as_ref())
            {
                enc_params.backward(cache, &grad_tokens, &grad_sentence, enc_grads);
            }
        }
        Ok(loss)
    }
}

fn dropout_mask(len: usize, rate: f64, rng: &mut Option<&mut dyn RngCore>) -> Option<Vec<f64>> {
    let rng = rng.as_mut()?;
    if rate <= 0.0 {
        return None;
    }
    let keep = 1.0 - rate;
    Some(
        (0..len)
            .map(|_| if rng.gen::<f64>() < keep { 1.0 / keep } else { 0.0 })
            .collect(),
    )
}

fn apply_mask(x: &[f64], mask: Option<&[f64]>) -> Vec<f64> {
    match mask {
        Some(m) => x.iter().zip(m).map(|(a, b)| a * b).collect(),
        None => x.to_vec(),
    }
}

fn accumulate_masked(target: &mut [f64], grad: &[f64], mask: Option<&[f64]>) {
    match mask {
        Some(m) => {
            for ((t, g), k) in target.iter_mut().zip(grad).zip(m) {
                *t += g * k;
            }
        }
        None => axpy(1.0, grad, target),
    }
}
