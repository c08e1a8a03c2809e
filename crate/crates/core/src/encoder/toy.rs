//! A small trainable encoder: subword embeddings followed by one residual
//! layer that mixes each position with its left and right neighbours.
//!
//! ```text
//! e_t   = E[id_t]
//! h_t   = e_t + tanh(A e_t + B e_{t-1} + C e_{t+1} + b)      (zero padding)
//! cls   = tanh(S · mean_t(h_t) + s)
//! ```

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{Encoder, EncoderOutput, SubwordAlignment, SubwordVocab, Tokenized};
use crate::error::Result;
use crate::linalg::{axpy, Matrix};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ToyEncoder {
    pub vocab: SubwordVocab,
    pub embeddings: Matrix,
    pub mix_self: Matrix,
    pub mix_prev: Matrix,
    pub mix_next: Matrix,
    pub mix_bias: Vec<f64>,
    pub pool: Matrix,
    pub pool_bias: Vec<f64>,
}

/// Activations kept from the forward pass for backpropagation.
#[derive(Debug, Clone)]
pub struct ToyCache {
    ids: Vec<usize>,
    inputs: Matrix,
    mixed: Matrix,
    mean: Vec<f64>,
    sentence: Vec<f64>,
}

impl ToyEncoder {
    pub fn new<R: Rng + ?Sized>(vocab: SubwordVocab, dim: usize, rng: &mut R) -> Self {
        let mix_std = 1.0 / (dim as f64).sqrt();
        Self {
            embeddings: Matrix::random_normal(vocab.len(), dim, 1.0, rng),
            mix_self: Matrix::random_normal(dim, dim, mix_std, rng),
            mix_prev: Matrix::random_normal(dim, dim, mix_std, rng),
            mix_next: Matrix::random_normal(dim, dim, mix_std, rng),
            mix_bias: vec![0.0; dim],
            pool: Matrix::random_normal(dim, dim, mix_std, rng),
            pool_bias: vec![0.0; dim],
            vocab,
        }
    }

    /// Same shapes, all zeros; used as a gradient accumulator.
    pub fn zeros_like(&self) -> Self {
        Self {
            vocab: self.vocab.clone(),
            embeddings: self.embeddings.zeros_like(),
            mix_self: self.mix_self.zeros_like(),
            mix_prev: self.mix_prev.zeros_like(),
            mix_next: self.mix_next.zeros_like(),
            mix_bias: vec![0.0; self.mix_bias.len()],
            pool: self.pool.zeros_like(),
            pool_bias: vec![0.0; self.pool_bias.len()],
        }
    }

    pub fn slots(&self) -> Vec<(&'static str, &[f64])> {
        vec![
            ("encoder.embeddings", self.embeddings.as_slice()),
            ("encoder.mix_self", self.mix_self.as_slice()),
            ("encoder.mix_prev", self.mix_prev.as_slice()),
            ("encoder.mix_next", self.mix_next.as_slice()),
            ("encoder.mix_bias", &self.mix_bias),
            ("encoder.pool", self.pool.as_slice()),
            ("encoder.pool_bias", &self.pool_bias),
        ]
    }

    pub fn slots_mut(&mut self) -> Vec<&mut [f64]> {
        vec![
            self.embeddings.as_mut_slice(),
            self.mix_self.as_mut_slice(),
            self.mix_prev.as_mut_slice(),
            self.mix_next.as_mut_slice(),
            &mut self.mix_bias,
            self.pool.as_mut_slice(),
            &mut self.pool_bias,
        ]
    }

    pub fn tokenize(&self, words: &[String]) -> Result<Tokenized> {
        self.vocab.tokenize_align(words)
    }

    pub fn forward(&self, ids: &[usize]) -> (EncoderOutput, ToyCache) {
        let d = self.embeddings.cols();
        let n = ids.len();
        let inputs = Matrix::from_vec(
            n,
            d,
            ids.iter().flat_map(|&id| self.embeddings.row(id).iter().copied()).collect(),
        );
        let mut mixed = Matrix::zeros(n, d);
        let mut out = Matrix::zeros(n, d);
        for t in 0..n {
            let mut pre = self.mix_self.mul_vec(inputs.row(t));
            axpy(1.0, &self.mix_bias, &mut pre);
            if t > 0 {
                axpy(1.0, &self.mix_prev.mul_vec(inputs.row(t - 1)), &mut pre);
            }
            if t + 1 < n {
                axpy(1.0, &self.mix_next.mul_vec(inputs.row(t + 1)), &mut pre);
            }
            for (m, p) in mixed.row_mut(t).iter_mut().zip(&pre) {
                *m = p.tanh();
            }
            for ((o, e), m) in out.row_mut(t).iter_mut().zip(inputs.row(t)).zip(mixed.row(t)) {
                *o = e + m;
            }
        }
        let mut mean = vec![0.0; d];
        for t in 0..n {
            axpy(1.0 / n.max(1) as f64, out.row(t), &mut mean);
        }
        let mut sentence = self.pool.mul_vec(&mean);
        for (s, b) in sentence.iter_mut().zip(&self.pool_bias) {
            *s = (*s + b).tanh();
        }
        let cache = ToyCache {
            ids: ids.to_vec(),
            inputs,
            mixed,
            mean,
            sentence: sentence.clone(),
        };
        (
            EncoderOutput {
                token_vectors: out,
                sentence_vector: sentence,
            },
            cache,
        )
    }

    /// Accumulates parameter gradients into `grads` given gradients of the
    /// loss with respect to the token vectors and the sentence vector.
    pub fn backward(&self, cache: &ToyCache, grad_tokens: &Matrix, grad_sentence: &[f64], grads: &mut ToyEncoder) {
        let n = cache.ids.len();
        let d = self.embeddings.cols();
        let mut g_out = grad_tokens.clone();

        let g_pool_pre: Vec<f64> = grad_sentence
            .iter()
            .zip(&cache.sentence)
            .map(|(g, s)| g * (1.0 - s * s))
            .collect();
        grads.pool.add_outer(1.0, &g_pool_pre, &cache.mean);
        axpy(1.0, &g_pool_pre, &mut grads.pool_bias);
        let g_mean = self.pool.transpose_mul_vec(&g_pool_pre);
        for t in 0..n {
            axpy(1.0 / n as f64, &g_mean, g_out.row_mut(t));
        }

        let mut g_inputs = g_out.clone();
        for t in 0..n {
            let g_pre: Vec<f64> = g_out
                .row(t)
                .iter()
                .zip(cache.mixed.row(t))
                .map(|(g, m)| g * (1.0 - m * m))
                .collect();
            axpy(1.0, &g_pre, &mut grads.mix_bias);
            grads.mix_self.add_outer(1.0, &g_pre, cache.inputs.row(t));
            axpy(1.0, &self.mix_self.transpose_mul_vec(&g_pre), g_inputs.row_mut(t));
            if t > 0 {
                grads.mix_prev.add_outer(1.0, &g_pre, cache.inputs.row(t - 1));
                axpy(1.0, &self.mix_prev.transpose_mul_vec(&g_pre), g_inputs.row_mut(t - 1));
            }
            if t + 1 < n {
                grads.mix_next.add_outer(1.0, &g_pre, cache.inputs.row(t + 1));
                axpy(1.0, &self.mix_next.transpose_mul_vec(&g_pre), g_inputs.row_mut(t + 1));
            }
        }
        debug_assert_eq!(g_inputs.cols(), d);
        for (t, &id) in cache.ids.iter().enumerate() {
            axpy(1.0, g_inputs.row(t), grads.embeddings.row_mut(id));
        }
    }
}

impl Encoder for ToyEncoder {
    fn dim(&self) -> usize {
        self.embeddings.cols()
    }

    fn tokenize_align(&self, _id: &str, words: &[String]) -> Result<SubwordAlignment> {
        Ok(self.tokenize(words)?.alignment)
    }

    fn encode(&self, _id: &str, words: &[String]) -> Result<(SubwordAlignment, EncoderOutput)> {
        let tokens = self.tokenize(words)?;
        let (out, _) = self.forward(&tokens.ids);
        Ok((tokens.alignment, out))
    }
}
