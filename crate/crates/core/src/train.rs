//! The training loop.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::checkpoint::{dataset_hash, Checkpoint, Provenance, FORMAT_VERSION};
use crate::config::RunConfig;
use crate::corpus::{LabelSchema, Sentence};
use crate::encoder::{EncoderBackend, EncoderKind, PrecomputedEncoder, SubwordVocab, ToyEncoder};
use crate::error::{Error, Result};
use crate::experiment::score_sentences;
use crate::model::{Example, LossBreakdown, ModelParams};
use crate::optim::{clip_global_norm, Adam, Schedule};
use crate::spanspace::{sample_entity_training, sample_relation_training};

#[derive(Debug, Clone, PartialEq)]
pub struct EpochLog {
    /// 1-based.
    pub epoch: usize,
    /// Joint loss summed over the epoch's sentences.
    pub loss: f64,
    pub breakdown: LossBreakdown,
    /// Entity and relation F1 on the dev set, when one was given.
    pub dev_f1: Option<(f64, f64)>,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub checkpoint: Checkpoint,
    pub log: Vec<EpochLog>,
}

impl TrainOutcome {
    pub fn log_table(&self) -> String {
        let mut out = String::from("epoch\tloss\tentity_id\tentity_cls\trelation_id\trelation_cls\tdev_entity_f1\tdev_relation_f1\n");
        for e in &self.log {
            let (de, dr) = match e.dev_f1 {
                Some((a, b)) => (a.to_string(), b.to_string()),
                None => (String::new(), String::new()),
            };
            out.push_str(&format!(
                "{}\t{}\t{}\t{}\t{}\t{}\t{de}\t{dr}\n",
                e.epoch,
                e.loss,
                e.breakdown.entity_identification,
                e.breakdown.entity_classification,
                e.breakdown.relation_identification,
                e.breakdown.relation_classification,
            ));
        }
        out
    }
}

fn build_encoder(cfg: &RunConfig, train: &[Sentence], rng: &mut ChaCha8Rng) -> Result<EncoderBackend> {
    Ok(match cfg.encoder.kind {
        EncoderKind::Toy => {
            EncoderBackend::Toy(Box::new(ToyEncoder::new(SubwordVocab::from_corpus(train), cfg.encoder.dim, rng)))
        }
        EncoderKind::Pretrained => {
            let path = cfg.encoder.model_name.as_deref().ok_or_else(|| {
                Error::Config("encoder.model_name is required for the pretrained encoder".into())
            })?;
            EncoderBackend::Pretrained(PrecomputedEncoder::load(path, cfg.encoder.dim)?)
        }
    })
}

pub fn initialize(cfg: &RunConfig, schema: &LabelSchema, train: &[Sentence], rng: &mut ChaCha8Rng) -> Result<ModelParams> {
    let encoder = build_encoder(cfg, train, rng)?;
    Ok(ModelParams::init(encoder, schema, cfg.max_span_len, cfg.width_dim, cfg.init_std, rng))
}

fn check_dataset(sentences: &[Sentence], schema: &LabelSchema) -> Result<()> {
    for s in sentences {
        s.validate(schema).map_err(|message| Error::Validation {
            record: s.id.clone(),
            message,
        })?;
    }
    Ok(())
}

/// Trains a model. Deterministic for a fixed config with the toy encoder.
pub fn train(cfg: &RunConfig, schema: &LabelSchema, train: &[Sentence], dev: Option<&[Sentence]>) -> Result<TrainOutcome> {
    cfg.validate()?;
    check_dataset(train, schema)?;
    if let Some(dev) = dev {
        check_dataset(dev, schema)?;
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let params = initialize(cfg, schema, train, &mut rng)?;
    fit(cfg, schema, params, train, dev, &mut rng)
}

/// Continues training from `params`, drawing shuffles and samples from `rng`.
pub fn fit(
    cfg: &RunConfig,
    schema: &LabelSchema,
    mut params: ModelParams,
    train: &[Sentence],
    dev: Option<&[Sentence]>,
    rng: &mut ChaCha8Rng,
) -> Result<TrainOutcome> {
    // gold entities wider than the span limit can never be enumerated
    let data: Vec<Sentence> = train.iter().map(|s| s.restricted_to_width(cfg.max_span_len)).collect();
    let dropped: usize = train.iter().zip(&data).map(|(a, b)| a.entities.len() - b.entities.len()).sum();
    if dropped > 0 {
        log::warn!("{dropped} gold entities exceed max_span_len = {} and are ignored in training", cfg.max_span_len);
    }

    let batches_per_epoch = data.len().div_ceil(cfg.batch_size);
    let schedule = Schedule::new(cfg.learning_rate, cfg.warmup_fraction, cfg.epochs * batches_per_epoch);
    let mut adam = Adam::new(&params, cfg.weight_decay);
    let model_cfg = cfg.model();
    let task = cfg.task();

    let mut order: Vec<usize> = (0..data.len()).collect();
    let mut log = Vec::with_capacity(cfg.epochs);
    let mut step = 0;
    for epoch in 1..=cfg.epochs {
        order.shuffle(rng);
        let mut epoch_loss = LossBreakdown::default();
        for (batch, chunk) in order.chunks(cfg.batch_size).enumerate() {
            let mut grads = params.zeros_like();
            let mut batch_loss = LossBreakdown::default();
            for &i in chunk {
                let sentence = &data[i];
                let example = Example {
                    sentence,
                    entities: sample_entity_training(sentence, schema, cfg.max_span_len, cfg.neg_entity, rng),
                    pairs: sample_relation_training(sentence, schema, cfg.neg_relation, rng),
                };
                let dropout_rng: Option<&mut dyn rand::RngCore> =
                    if cfg.dropout > 0.0 { Some(&mut *rng) } else { None };
                let loss = params.loss_and_grad(&example, &model_cfg, &mut grads, dropout_rng)?;
                batch_loss.add(&loss);
            }
            let non_finite = batch_loss
                .non_finite_component()
                .or_else(|| (!grads.is_finite()).then_some("gradient"));
            if let Some(component) = non_finite {
                return Err(Error::NonFinite {
                    epoch,
                    batch,
                    component: component.to_string(),
                });
            }
            if let Some(max_norm) = cfg.grad_clip {
                clip_global_norm(&mut grads, max_norm);
            }
            adam.step(&mut params, &grads, schedule.rate(step));
            step += 1;
            epoch_loss.add(&batch_loss);
        }

        let dev_f1 = match dev {
            Some(dev) if !dev.is_empty() => {
                let scorer = score_sentences(&params, dev, schema, &cfg.decode())?;
                Some((
                    scorer.entity(cfg.averaging, cfg.macro_all_types).f1,
                    scorer.relation(cfg.averaging, cfg.macro_all_types).f1,
                ))
            }
            _ => None,
        };
        let entry = EpochLog {
            epoch,
            loss: epoch_loss.total(&task),
            breakdown: epoch_loss,
            dev_f1,
        };
        match entry.dev_f1 {
            Some((e, r)) => log::info!("epoch {epoch}: loss {:.6} dev entity F1 {e:.4} relation F1 {r:.4}", entry.loss),
            None => log::info!("epoch {epoch}: loss {:.6}", entry.loss),
        }
        log.push(entry);
    }

    Ok(TrainOutcome {
        checkpoint: Checkpoint {
            format_version: FORMAT_VERSION,
            config: cfg.clone(),
            schema: schema.clone(),
            params,
            provenance: Provenance {
                dataset_sha256: dataset_hash(train),
                epoch: cfg.epochs,
                seed: cfg.seed,
                steps: step,
            },
        },
        log,
    })
}
