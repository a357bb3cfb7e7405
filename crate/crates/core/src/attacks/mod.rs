//! Gradient attacks on a trained model.
//!
//! The encoder attacks (FGSM, PGD, momentum-iterative) ascend a softmax
//! cross-entropy over negative latent distances and ignore the reject rule.
//! The white-box attacks descend an objective built from both thresholds, so
//! they try to land inside the acceptance region of a chosen class.
//!
//! No attack grades itself: every result carries the selector's verdict on
//! the final input.

mod encoder;
mod whitebox;

pub use encoder::{encoder_attack_gradient, encoder_attack_loss, fgsm, momentum_iterative, pgd};
pub use whitebox::{
    fooling_objective, whitebox_adversarial, whitebox_fooling, whitebox_objective, ObjectiveParts,
};

use serde::{Deserialize, Serialize};

use crate::diffmath::Tensor;
use crate::error::{Error, Result};
use crate::selector::Decision;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NormOrder {
    L2,
    Linf,
}

/// How the latent term of the white-box objectives weights `mu_t - f(x)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LatentWeighting {
    /// `||mu_t - f||^2 / sigma_p^2`, the selector's Mahalanobis distance.
    InverseCovariance,
    /// `||mu_t - f||^2 * sigma_p^2`.
    Covariance,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AttackConfig {
    /// Perturbation budget of the encoder attacks.
    pub epsilon: f64,
    /// Weight of `||eta||^2` in the white-box adversarial objective.
    pub penalty: f64,
    pub steps: usize,
    /// Per-step size; `None` means `2.5 * epsilon / steps` for the encoder
    /// attacks and an initial line-search step of 1 for the white-box ones.
    pub step_size: Option<f64>,
    /// Exponent on the normalized reconstruction term.
    pub exponent_a: f64,
    /// Exponent on the normalized latent term.
    pub exponent_b: f64,
    /// Momentum decay of the momentum-iterative attack.
    pub decay: f64,
    pub seed: u64,
    pub norm: NormOrder,
    pub weighting: LatentWeighting,
}

impl Default for AttackConfig {
    fn default() -> Self {
        AttackConfig {
            epsilon: 0.1,
            penalty: 1.0,
            steps: 40,
            step_size: None,
            exponent_a: 2.0,
            exponent_b: 2.0,
            decay: 1.0,
            seed: 0,
            norm: NormOrder::Linf,
            weighting: LatentWeighting::InverseCovariance,
        }
    }
}

impl AttackConfig {
    /// Defaults for the white-box attacks: 500 line-searched descent steps.
    pub fn whitebox() -> Self {
        AttackConfig {
            steps: 500,
            ..AttackConfig::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::Config(msg));
        if !(self.epsilon >= 0.0 && self.epsilon.is_finite()) {
            return bad(format!("epsilon must be a nonnegative number, got {}", self.epsilon));
        }
        if !(self.penalty >= 0.0 && self.penalty.is_finite()) {
            return bad(format!("penalty must be nonnegative, got {}", self.penalty));
        }
        if self.steps == 0 {
            return bad("attack needs at least one step".into());
        }
        if let Some(s) = self.step_size {
            if !(s > 0.0 && s.is_finite()) {
                return bad(format!("step size must be positive, got {s}"));
            }
        }
        if !(self.exponent_a > 1.0 && self.exponent_b > 1.0) {
            return bad(format!(
                "exponents must exceed 1, got a = {} and b = {}",
                self.exponent_a, self.exponent_b
            ));
        }
        if !(self.decay > 0.0 && self.decay <= 1.0) {
            return bad(format!("momentum decay must lie in (0, 1], got {}", self.decay));
        }
        Ok(())
    }

    fn encoder_step(&self) -> f64 {
        self.step_size.unwrap_or(2.5 * self.epsilon / self.steps as f64)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AttackResult {
    pub x_adv: Tensor,
    /// `x_adv - x`, after clipping.
    pub eta: Tensor,
    pub decision: Decision,
    /// Objective value at every iterate, starting point included.
    pub trace: Vec<f64>,
}

impl AttackResult {
    pub fn final_objective(&self) -> f64 {
        *self.trace.last().expect("traces start with the initial value")
    }
}

/// How an attacked input fared against the defense.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Outcome {
    /// Accepted with a label other than the true one.
    Evaded,
    Rejected,
    /// Accepted with the true label.
    Correct,
}

impl Outcome {
    /// `true_label = None` (fooling images) counts every acceptance as evasion.
    pub fn of(decision: &Decision, true_label: Option<usize>) -> Outcome {
        match decision.label() {
            None => Outcome::Rejected,
            Some(l) if Some(l) == true_label => Outcome::Correct,
            Some(_) => Outcome::Evaded,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Outcome::Evaded => "evaded",
            Outcome::Rejected => "rejected",
            Outcome::Correct => "correct",
        }
    }
}

fn check_image(x: &Tensor, input_dim: usize) -> Result<()> {
    if x.shape() != [input_dim] {
        return Err(Error::shape("attack input", x.shape(), &[input_dim]));
    }
    Ok(())
}
