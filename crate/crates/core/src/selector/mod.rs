//! Latent-proximity classification and the two-threshold reject rule.
//!
//! An input is accepted only when its code lies within the chi-square
//! critical radius of the predicted class mean *and* its reconstruction error
//! stays under the ceiling measured on training data.

mod chi_square;

pub use chi_square::{chi_square_cdf, chi_square_critical, ln_gamma, regularized_lower_gamma};

use serde::{Deserialize, Serialize};

use crate::diffmath::{sq_dist, squared_l2, Tensor};
use crate::error::{Error, Result};
use crate::gmvae::{GmvaeModel, MixturePrior};
use crate::training::TrainStats;

/// Default confidence: the two-sided 3-sigma mass.
pub const DEFAULT_CONFIDENCE: f64 = 0.9973;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Thresholds {
    /// Critical value for the squared Mahalanobis distance of the code.
    pub tau_enc: f64,
    /// Ceiling on the squared reconstruction error.
    pub tau_dec: f64,
    /// Confidence used when `tau_enc` was calibrated.
    pub confidence: f64,
}

impl Thresholds {
    /// Thresholds that accept everything.
    pub fn disabled() -> Self {
        Thresholds {
            tau_enc: f64::INFINITY,
            tau_dec: f64::INFINITY,
            confidence: 1.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RejectReason {
    LatentOutlier,
    ReconstructionOutlier,
    Both,
}

impl RejectReason {
    pub fn as_str(self) -> &'static str {
        match self {
            RejectReason::LatentOutlier => "latent_outlier",
            RejectReason::ReconstructionOutlier => "reconstruction_outlier",
            RejectReason::Both => "both",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "latent_outlier" => Some(RejectReason::LatentOutlier),
            "reconstruction_outlier" => Some(RejectReason::ReconstructionOutlier),
            "both" => Some(RejectReason::Both),
            _ => None,
        }
    }
}

/// Values behind a decision.
#[derive(Debug, Clone, PartialEq)]
pub struct Diagnostics {
    /// Nearest class mean; for rejections this is the label that was refused.
    pub label: usize,
    pub z_mean: Tensor,
    pub recon_error: f64,
    pub mahalanobis_sq: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Decision {
    Accepted(Diagnostics),
    Rejected { reason: RejectReason, diagnostics: Diagnostics },
}

impl Decision {
    /// Applies both thresholds to precomputed diagnostics.
    pub fn from_diagnostics(diagnostics: Diagnostics, thresholds: &Thresholds) -> Decision {
        let latent_bad = !(diagnostics.mahalanobis_sq <= thresholds.tau_enc);
        let recon_bad = !(diagnostics.recon_error <= thresholds.tau_dec);
        match (latent_bad, recon_bad) {
            (false, false) => Decision::Accepted(diagnostics),
            (true, false) => Decision::Rejected {
                reason: RejectReason::LatentOutlier,
                diagnostics,
            },
            (false, true) => Decision::Rejected {
                reason: RejectReason::ReconstructionOutlier,
                diagnostics,
            },
            (true, true) => Decision::Rejected {
                reason: RejectReason::Both,
                diagnostics,
            },
        }
    }

    pub fn is_accepted(&self) -> bool {
        matches!(self, Decision::Accepted(_))
    }

    /// The accepted label, `None` for rejections.
    pub fn label(&self) -> Option<usize> {
        match self {
            Decision::Accepted(d) => Some(d.label),
            Decision::Rejected { .. } => None,
        }
    }

    pub fn reason(&self) -> Option<RejectReason> {
        match self {
            Decision::Accepted(_) => None,
            Decision::Rejected { reason, .. } => Some(*reason),
        }
    }

    pub fn diagnostics(&self) -> &Diagnostics {
        match self {
            Decision::Accepted(d) | Decision::Rejected { diagnostics: d, .. } => d,
        }
    }

    pub fn to_record(&self) -> DecisionRecord {
        let d = self.diagnostics();
        DecisionRecord {
            verdict: if self.is_accepted() { Verdict::Accept } else { Verdict::Reject },
            label: self.label(),
            reason: self.reason(),
            mahalanobis_sq: d.mahalanobis_sq,
            recon_error: d.recon_error,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Verdict {
    Accept,
    Reject,
}

/// JSON form of a [`Decision`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecisionRecord {
    pub verdict: Verdict,
    pub label: Option<usize>,
    pub reason: Option<RejectReason>,
    pub mahalanobis_sq: f64,
    pub recon_error: f64,
}

/// Index of the nearest class mean; ties go to the lowest index.
pub fn nearest_class(prior: &MixturePrior, z: &[f64]) -> usize {
    let mut best = 0;
    let mut best_d = f64::INFINITY;
    for c in 0..prior.num_classes() {
        let d = sq_dist(z, prior.mean(c));
        if d < best_d {
            best = c;
            best_d = d;
        }
    }
    best
}

/// Class of the nearest mean to the encoder output.
pub fn classify(model: &GmvaeModel, x: &Tensor) -> Result<usize> {
    let z = model.encode(x)?;
    Ok(nearest_class(model.prior(), z.data()))
}

/// `||z - mu||^2 / variance`.
pub fn mahalanobis_sq(z: &Tensor, mean: &Tensor, variance: f64) -> Result<f64> {
    if !(variance > 0.0) {
        return Err(Error::Config(format!("variance must be positive, got {variance}")));
    }
    Ok(squared_l2(z, mean)? / variance)
}

/// `tau_enc` from the chi-square quantile of the latent dimension and
/// `tau_dec = mean + 3 std` of the training reconstruction errors.
pub fn calibrate(stats: &TrainStats, latent_dim: usize, confidence: f64) -> Result<Thresholds> {
    let errs = &stats.recon_errors;
    if errs.is_empty() {
        return Err(Error::EmptyStats);
    }
    // shift by the first value so identical errors give an exact mean and zero spread
    let shift = errs[0];
    let n = errs.len() as f64;
    let mean_dev = errs.iter().map(|e| e - shift).sum::<f64>() / n;
    let var = errs.iter().map(|e| (e - shift - mean_dev).powi(2)).sum::<f64>() / n;
    Ok(Thresholds {
        tau_enc: chi_square_critical(latent_dim, confidence)?,
        tau_dec: shift + mean_dev + 3.0 * var.sqrt(),
        confidence,
    })
}

/// Diagnostics of `x` under the model without applying thresholds.
pub fn diagnose(model: &GmvaeModel, x: &Tensor) -> Result<Diagnostics> {
    let z = model.encode(x)?;
    let label = nearest_class(model.prior(), z.data());
    let recon_error = squared_l2(x, &model.decode(&z)?)?;
    let mahal = sq_dist(z.data(), model.prior().mean(label)) / model.prior().variance();
    Ok(Diagnostics {
        label,
        z_mean: z,
        recon_error,
        mahalanobis_sq: mahal,
    })
}

pub fn selective_classify(model: &GmvaeModel, thresholds: &Thresholds, x: &Tensor) -> Result<Decision> {
    Ok(Decision::from_diagnostics(diagnose(model, x)?, thresholds))
}
