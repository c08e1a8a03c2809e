//! Scoring heads and losses of the identification/classification framework.
//!
//! Identification is a binary decision trained with cross-entropy (the entity
//! variant scales negatives by their overlap with gold entities).
//! Classification scores each real class with a dot product and is trained
//! with a pairwise ranking loss: `L⁺ = log(1 + exp(γ(m⁺ − s_gold)))` on the
//! gold class and `L⁻ = log(1 + exp(γ(m⁻ + s_neg)))` on the highest scoring
//! wrong class. NA has no column; NA samples only incur `L⁻`.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{axpy, dot, sigmoid, softplus, Matrix};

/// Probabilities are clamped to `[EPS, 1 − EPS]` before taking logarithms.
pub const EPS: f64 = 1e-7;

fn clamp(p: f64) -> f64 {
    p.clamp(EPS, 1.0 - EPS)
}

/// Binary cross-entropy `−q·ln p − (1−q)·ln(1−p)`.
pub fn bce(p: f64, q: f64) -> f64 {
    let p = clamp(p);
    -q * p.ln() - (1.0 - q) * (1.0 - p).ln()
}

/// Cross-entropy with positives weighted `1−δ` and negatives `δ(1+eniou)`.
pub fn scaled_bce(p: f64, q: f64, eniou: f64, delta: f64) -> f64 {
    let p = clamp(p);
    -q * (1.0 - delta) * p.ln() - delta * (1.0 - q) * (1.0 + eniou) * (1.0 - p).ln()
}

/// `∂ bce(σ(z), q) / ∂z`, zero where the clamp is active.
pub fn bce_grad_logit(p: f64, q: f64) -> f64 {
    if p != clamp(p) {
        return 0.0;
    }
    p - q
}

/// `∂ scaled_bce(σ(z), q, eniou, δ) / ∂z`, zero where the clamp is active.
pub fn scaled_bce_grad_logit(p: f64, q: f64, eniou: f64, delta: f64) -> f64 {
    if p != clamp(p) {
        return 0.0;
    }
    -q * (1.0 - delta) * (1.0 - p) + delta * (1.0 - q) * (1.0 + eniou) * p
}

/// Affine map followed by the logistic function.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IdentificationHead {
    pub weights: Vec<f64>,
    pub bias: f64,
}

impl IdentificationHead {
    pub fn new<R: Rng + ?Sized>(input_dim: usize, std: f64, rng: &mut R) -> Self {
        Self {
            weights: Matrix::random_normal(1, input_dim, std, rng).as_slice().to_vec(),
            bias: 0.0,
        }
    }

    pub fn zeros_like(&self) -> Self {
        Self {
            weights: vec![0.0; self.weights.len()],
            bias: 0.0,
        }
    }

    pub fn logit(&self, x: &[f64]) -> f64 {
        dot(&self.weights, x) + self.bias
    }

    pub fn probability(&self, x: &[f64]) -> f64 {
        sigmoid(self.logit(x))
    }

    /// Given `∂L/∂z`, accumulates parameter gradients and adds `∂L/∂x` to `grad_x`.
    pub fn backward(&self, x: &[f64], grad_logit: f64, grads: &mut IdentificationHead, grad_x: &mut [f64]) {
        axpy(grad_logit, x, &mut grads.weights);
        grads.bias += grad_logit;
        axpy(grad_logit, &self.weights, grad_x);
    }
}

/// One weight column per real class, no bias.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassificationHead {
    pub weights: Matrix,
}

impl ClassificationHead {
    pub fn new<R: Rng + ?Sized>(input_dim: usize, classes: usize, std: f64, rng: &mut R) -> Self {
        Self {
            weights: Matrix::random_normal(input_dim, classes, std, rng),
        }
    }

    pub fn zeros_like(&self) -> Self {
        Self {
            weights: self.weights.zeros_like(),
        }
    }

    pub fn input_dim(&self) -> usize {
        self.weights.rows()
    }

    pub fn classes(&self) -> usize {
        self.weights.cols()
    }

    /// `score_c = xᵀ W[:, c]`
    pub fn scores(&self, x: &[f64]) -> Result<Vec<f64>> {
        if x.len() != self.input_dim() {
            return Err(Error::Argument(format!(
                "representation has length {}, head expects {}",
                x.len(),
                self.input_dim()
            )));
        }
        Ok(self.weights.transpose_mul_vec(x))
    }

    pub fn backward(&self, x: &[f64], grad_scores: &[f64], grads: &mut ClassificationHead, grad_x: &mut [f64]) {
        grads.weights.add_outer(1.0, x, grad_scores);
        axpy(1.0, &self.weights.mul_vec(grad_scores), grad_x);
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RankingLossConfig {
    pub gamma: f64,
    pub m_pos: f64,
    pub m_neg: f64,
}

impl Default for RankingLossConfig {
    fn default() -> Self {
        Self {
            gamma: 2.0,
            m_pos: 2.5,
            m_neg: 0.5,
        }
    }
}

/// Index of the highest score among classes other than `exclude`; lowest index
/// wins ties.
pub fn best_wrong_class(scores: &[f64], exclude: Option<usize>) -> Option<usize> {
    let mut best: Option<usize> = None;
    for (c, &s) in scores.iter().enumerate() {
        if Some(c) == exclude {
            continue;
        }
        if best.is_none_or(|b| s > scores[b]) {
            best = Some(c);
        }
    }
    best
}

/// Ranking loss and its gradient with respect to `scores`. `gold = None` is NA.
pub fn ranking_loss_with_grad(scores: &[f64], gold: Option<usize>, cfg: &RankingLossConfig) -> Result<(f64, Vec<f64>)> {
    if let Some(g) = gold {
        if g >= scores.len() {
            return Err(Error::Argument(format!(
                "gold class {g} out of range for {} classes",
                scores.len()
            )));
        }
    }
    let mut grad = vec![0.0; scores.len()];
    let mut loss = 0.0;
    if let Some(g) = gold {
        let a = cfg.gamma * (cfg.m_pos - scores[g]);
        loss += softplus(a);
        grad[g] -= cfg.gamma * sigmoid(a);
    }
    if let Some(n) = best_wrong_class(scores, gold) {
        let a = cfg.gamma * (cfg.m_neg + scores[n]);
        loss += softplus(a);
        grad[n] += cfg.gamma * sigmoid(a);
    }
    Ok((loss, grad))
}

pub fn ranking_loss(scores: &[f64], gold: Option<usize>, cfg: &RankingLossConfig) -> Result<f64> {
    ranking_loss_with_grad(scores, gold, cfg).map(|(l, _)| l)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TaskLossConfig {
    pub alpha: f64,
    pub beta: f64,
    pub delta: f64,
}

impl Default for TaskLossConfig {
    fn default() -> Self {
        Self {
            alpha: 1.0,
            beta: 1.0,
            delta: 0.25,
        }
    }
}

impl TaskLossConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.alpha >= 0.0 && self.beta >= 0.0) {
            return Err(Error::Config(format!(
                "alpha and beta must be non-negative (got {}, {})",
                self.alpha, self.beta
            )));
        }
        if !(0.0..=1.0).contains(&self.delta) {
            return Err(Error::Config(format!("delta must lie in [0, 1], got {}", self.delta)));
        }
        if self.delta >= 0.5 {
            log::warn!(
                "delta = {} does not emphasize positive samples; values below 0.5 are intended",
                self.delta
            );
        }
        Ok(())
    }
}

/// `α·Σ identification + β·Σ classification`
pub fn task_loss(id_losses: &[f64], cls_losses: &[f64], cfg: &TaskLossConfig) -> f64 {
    cfg.alpha * id_losses.iter().sum::<f64>() + cfg.beta * cls_losses.iter().sum::<f64>()
}

pub fn joint_loss(entity_task_loss: f64, relation_task_loss: f64) -> f64 {
    entity_task_loss + relation_task_loss
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;
    use std::f64::consts::LN_2;

    #[test]
    fn bce_values() {
        assert_abs_diff_eq!(bce(0.5, 1.0), LN_2, epsilon = 1e-12);
        assert_abs_diff_eq!(bce(1.0 - EPS, 1.0), 0.0, epsilon = 1e-6);
        assert_abs_diff_eq!(bce(0.9, 0.0), -(0.1f64.ln()), epsilon = 1e-12);
        assert!(bce(0.0, 1.0).is_finite());
        assert!(bce(1.0, 0.0).is_finite());
    }

    #[test]
    fn scaled_bce_values() {
        assert_abs_diff_eq!(scaled_bce(0.5, 1.0, 0.3, 0.25), 0.75 * LN_2, epsilon = 1e-12);
        assert_abs_diff_eq!(scaled_bce(0.5, 0.0, 0.0, 0.25), 0.25 * LN_2, epsilon = 1e-12);
        assert_abs_diff_eq!(scaled_bce(0.5, 0.0, 1.0, 0.25), 0.5 * LN_2, epsilon = 1e-12);
        for p in [0.1, 0.5, 0.9] {
            for q in [0.0, 1.0] {
                assert_abs_diff_eq!(scaled_bce(p, q, 0.0, 0.5), 0.5 * bce(p, q), epsilon = 1e-12);
            }
        }
    }

    #[test]
    fn class_scores() {
        let head = ClassificationHead {
            weights: Matrix::from_rows(&[vec![1.0, 0.0, 2.0], vec![0.0, 1.0, -1.0]]),
        };
        assert_eq!(head.scores(&[0.0, 0.0]).unwrap(), vec![0.0; 3]);
        // columns 0 and 1 are unit basis vectors
        assert_eq!(head.scores(&[3.0, -4.0]).unwrap()[..2], [3.0, -4.0]);
        assert_eq!(head.scores(&[3.0, -4.0]).unwrap()[2], 10.0);
        assert!(head.scores(&[1.0]).is_err());
    }

    #[test]
    fn ranking_loss_at_margins() {
        let cfg = RankingLossConfig::default();
        assert_abs_diff_eq!(ranking_loss(&[2.5], Some(0), &cfg).unwrap(), LN_2, epsilon = 1e-12);
        assert_abs_diff_eq!(ranking_loss(&[-0.5, -0.7], None, &cfg).unwrap(), LN_2, epsilon = 1e-12);
        assert_abs_diff_eq!(
            ranking_loss(&[4.0], Some(0), &cfg).unwrap(),
            (-3.0f64).exp().ln_1p(),
            epsilon = 1e-12
        );
        assert!(ranking_loss(&[1.0], Some(1), &cfg).is_err());
        assert_eq!(ranking_loss(&[], None, &cfg).unwrap(), 0.0);
    }

    #[test]
    fn ranking_loss_picks_best_wrong_class() {
        let cfg = RankingLossConfig::default();
        let scores = [1.0, 3.0, 0.2, 3.0];
        let (loss, grad) = ranking_loss_with_grad(&scores, Some(0), &cfg).unwrap();
        let expected = softplus(2.0 * (2.5 - 1.0)) + softplus(2.0 * (0.5 + 3.0));
        assert_abs_diff_eq!(loss, expected, epsilon = 1e-12);
        // tie between 1 and 3 resolved to the lower index
        assert!(grad[1] > 0.0 && grad[3] == 0.0 && grad[2] == 0.0 && grad[0] < 0.0);
        assert_eq!(best_wrong_class(&[5.0], Some(0)), None);
    }

    #[test]
    fn task_and_joint_losses() {
        let one = TaskLossConfig { alpha: 1.0, beta: 1.0, delta: 0.25 };
        assert_eq!(task_loss(&[0.5, 1.5], &[3.0], &one), 5.0);
        let cls_only = TaskLossConfig { alpha: 0.0, ..one };
        assert_eq!(task_loss(&[7.0], &[3.0], &cls_only), 3.0);
        let mixed = TaskLossConfig { alpha: 0.5, beta: 2.0, delta: 0.25 };
        assert_eq!(task_loss(&[4.0], &[1.0], &mixed), 4.0);
        assert_eq!(joint_loss(1.5, 2.5), 4.0);
        assert_eq!(joint_loss(0.0, 3.25), 3.25);
        let l1 = task_loss(&[1.0], &[2.0], &one);
        assert_eq!(joint_loss(l1, task_loss(&[], &[], &one)), l1);
        assert!(TaskLossConfig { delta: 1.5, ..one }.validate().is_err());
        assert!(TaskLossConfig { alpha: -1.0, ..one }.validate().is_err());
    }

    proptest! {
        #[test]
        fn ranking_loss_monotone(
            scores in proptest::collection::vec(-4.0f64..4.0, 1..6),
            gold in 0usize..6,
            bump in 0.01f64..1.0,
        ) {
            let cfg = RankingLossConfig::default();
            let gold = gold % scores.len();
            let base = ranking_loss(&scores, Some(gold), &cfg).unwrap();
            let mut up = scores.clone();
            up[gold] += bump;
            prop_assert!(ranking_loss(&up, Some(gold), &cfg).unwrap() < base);
            for c in (0..scores.len()).filter(|&c| c != gold) {
                let mut worse = scores.clone();
                worse[c] += bump;
                prop_assert!(ranking_loss(&worse, Some(gold), &cfg).unwrap() >= base);
            }
            let na_base = ranking_loss(&scores, None, &cfg).unwrap();
            for c in 0..scores.len() {
                let mut worse = scores.clone();
                worse[c] += bump;
                prop_assert!(ranking_loss(&worse, None, &cfg).unwrap() >= na_base);
            }
        }

        #[test]
        fn losses_nonnegative(p in 0.0f64..=1.0, e in 0.0f64..=1.0, d in 0.0f64..=1.0,
                              scores in proptest::collection::vec(-50.0f64..50.0, 0..5)) {
            for q in [0.0, 1.0] {
                prop_assert!(bce(p, q) >= 0.0);
                prop_assert!(scaled_bce(p, q, e, d) >= 0.0);
            }
            prop_assert!(ranking_loss(&scores, None, &RankingLossConfig::default()).unwrap() >= 0.0);
        }

        #[test]
        fn best_wrong_class_shift_invariant(
            scores in proptest::collection::vec(-4.0f64..4.0, 2..6),
            shift in -10.0f64..10.0,
            gold in 0usize..6,
        ) {
            let gold = Some(gold % scores.len());
            let shifted: Vec<f64> = scores.iter().map(|s| s + shift).collect();
            let a = best_wrong_class(&scores, gold).unwrap();
            let b = best_wrong_class(&shifted, gold).unwrap();
            // float rounding can only matter for near-ties
            prop_assert!(a == b || (scores[a] - scores[b]).abs() < 1e-9);
        }
    }
}
