//! Label recovery for rejected inputs by searching the decoder's input space.
//!
//! Descent on `||g(z) - x||^2` runs once from every class mean; the start that
//! ends with the smallest error wins and its code is classified by the
//! nearest mean. The winner still has to pass both thresholds, otherwise the
//! input is treated as a fooling image.

use rayon::prelude::*;

use crate::diffmath::{backtracking_descent, Tape, Tensor};
use crate::error::{Error, Result};
use crate::gmvae::GmvaeModel;
use crate::selector::{nearest_class, Decision, Diagnostics, Thresholds};

#[derive(Debug, Clone, PartialEq)]
pub struct InversionConfig {
    pub steps: usize,
    /// Initial line-search step.
    pub step_size: f64,
    /// Starting codes; `None` uses every class mean in class order.
    pub starts: Option<Vec<Tensor>>,
}

impl Default for InversionConfig {
    fn default() -> Self {
        InversionConfig {
            steps: 300,
            step_size: 1.0,
            starts: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct StartResult {
    pub z: Tensor,
    pub recon_error: f64,
    pub trace: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct InversionResult {
    pub starts: Vec<StartResult>,
    /// Start with the smallest final error; ties go to the lowest index.
    pub winner: usize,
    pub decision: Decision,
}

impl InversionResult {
    pub fn best(&self) -> &StartResult {
        &self.starts[self.winner]
    }
}

fn decoder_error(model: &GmvaeModel, x: &Tensor, z: &Tensor, with_gradient: bool) -> Result<(f64, Option<Tensor>)> {
    let mut tape = Tape::new();
    let zn = if with_gradient { tape.var(z.clone()) } else { tape.constant(z.clone()) };
    let (x_hat, _) = model.record_decode(&mut tape, zn, false)?;
    let target = tape.constant_ref(x);
    let err = tape.squared_l2(target, x_hat)?;
    let value = tape.scalar(err)?;
    let grad = if with_gradient {
        Some(tape.backward(err)?.take(zn).expect("code is a variable"))
    } else {
        None
    };
    Ok((value, grad))
}

fn invert_traced(model: &GmvaeModel, x: &Tensor, z_init: &Tensor, config: &InversionConfig) -> Result<StartResult> {
    if x.shape() != [model.input_dim()] {
        return Err(Error::shape("invert_decoder", x.shape(), &[model.input_dim()]));
    }
    if z_init.shape() != [model.latent_dim()] {
        return Err(Error::shape("invert_decoder (start)", z_init.shape(), &[model.latent_dim()]));
    }
    if config.steps == 0 || !(config.step_size > 0.0) {
        return Err(Error::Config("inversion needs a positive step count and step size".into()));
    }
    let (z, trace) = backtracking_descent(
        z_init.clone(),
        config.steps,
        config.step_size,
        |z| {
            let (v, g) = decoder_error(model, x, z, true)?;
            Ok((v, g.expect("requested")))
        },
        |z| Ok(decoder_error(model, x, z, false)?.0),
        |z| z,
    )?;
    let recon_error = *trace.last().expect("trace holds the start");
    Ok(StartResult { z, recon_error, trace })
}

/// Code minimizing `||g(z) - x||^2` reached from `z_init`, and its error.
///
/// Accepted steps never raise the error, so the result is the best iterate seen.
pub fn invert_decoder(model: &GmvaeModel, x: &Tensor, z_init: &Tensor, config: &InversionConfig) -> Result<(Tensor, f64)> {
    let r = invert_traced(model, x, z_init, config)?;
    Ok((r.z, r.recon_error))
}

fn run_starts(model: &GmvaeModel, x: &Tensor, config: &InversionConfig) -> Result<(Vec<StartResult>, usize)> {
    let starts: Vec<Tensor> = match &config.starts {
        Some(s) if s.is_empty() => return Err(Error::Config("inversion needs at least one start".into())),
        Some(s) => s.clone(),
        None => (0..model.num_classes()).map(|c| model.prior().mean_tensor(c)).collect(),
    };
    let results: Vec<StartResult> = starts
        .par_iter()
        .map(|z0| invert_traced(model, x, z0, config))
        .collect::<Result<_>>()?;
    let mut winner = 0;
    for (i, r) in results.iter().enumerate() {
        if r.recon_error < results[winner].recon_error {
            winner = i;
        }
    }
    Ok((results, winner))
}

/// Multi-start inversion followed by the two-threshold check on the winning code.
pub fn reclassify(
    model: &GmvaeModel,
    thresholds: &Thresholds,
    x: &Tensor,
    config: &InversionConfig,
) -> Result<InversionResult> {
    let (starts, winner) = run_starts(model, x, config)?;
    let best = &starts[winner];
    let label = nearest_class(model.prior(), best.z.data());
    let mahal = crate::diffmath::sq_dist(best.z.data(), model.prior().mean(label)) / model.prior().variance();
    let diagnostics = Diagnostics {
        label,
        z_mean: best.z.clone(),
        recon_error: best.recon_error,
        mahalanobis_sq: mahal,
    };
    let decision = Decision::from_diagnostics(diagnostics, thresholds);
    Ok(InversionResult {
        starts,
        winner,
        decision,
    })
}

/// Nearest-mean label of the winning code, never rejecting.
pub fn reclassify_accept_always(model: &GmvaeModel, x: &Tensor, config: &InversionConfig) -> Result<usize> {
    let (starts, winner) = run_starts(model, x, config)?;
    Ok(nearest_class(model.prior(), starts[winner].z.data()))
}
