use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::diffmath::{backtracking_descent, NodeId, Tape, Tensor};
use crate::error::{Error, Result};
use crate::gmvae::GmvaeModel;
use crate::selector::{selective_classify, Thresholds};

use super::{check_image, AttackConfig, AttackResult, LatentWeighting};

/// Normalized terms of a white-box objective at one point.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ObjectiveParts {
    /// `||x - g(f(x))||^2 / tau_dec`, before the exponent.
    pub reconstruction: f64,
    /// Weighted latent distance to the target mean over `tau_enc`, before the exponent.
    pub latent: f64,
    /// `||eta||^2`, zero for fooling images.
    pub perturbation: f64,
    pub total: f64,
}

struct Recorded {
    total: NodeId,
    reconstruction: NodeId,
    latent: NodeId,
}

fn check_target(model: &GmvaeModel, thresholds: &Thresholds, target: usize) -> Result<()> {
    if target >= model.num_classes() {
        return Err(Error::UnknownLabel {
            label: target,
            num_classes: model.num_classes(),
        });
    }
    for (name, v) in [("tau_enc", thresholds.tau_enc), ("tau_dec", thresholds.tau_dec)] {
        if !(v > 0.0 && v.is_finite()) {
            return Err(Error::Config(format!("white-box attacks need a finite positive {name}, got {v}")));
        }
    }
    Ok(())
}

/// `(recon / tau_dec)^a + (latent / tau_enc)^b` for the image node `x`.
fn record_terms<'a>(
    tape: &mut Tape<'a>,
    model: &'a GmvaeModel,
    thresholds: &Thresholds,
    x: NodeId,
    target: usize,
    config: &AttackConfig,
) -> Result<Recorded> {
    let (z, _) = model.record_encode(tape, x, false)?;
    let (x_hat, _) = model.record_decode(tape, z, false)?;
    let recon = tape.squared_l2(x, x_hat)?;
    let reconstruction = tape.scale(recon, 1.0 / thresholds.tau_dec)?;

    let mu = tape.constant(model.prior().mean_tensor(target));
    let dist = tape.squared_l2(z, mu)?;
    let var = model.prior().variance();
    let weight = match config.weighting {
        LatentWeighting::InverseCovariance => 1.0 / var,
        LatentWeighting::Covariance => var,
    };
    let latent = tape.scale(dist, weight / thresholds.tau_enc)?;

    let ra = tape.pow(reconstruction, config.exponent_a)?;
    let lb = tape.pow(latent, config.exponent_b)?;
    let total = tape.add(ra, lb)?;
    Ok(Recorded {
        total,
        reconstruction,
        latent,
    })
}

fn parts(tape: &Tape, rec: &Recorded, perturbation: f64, total: NodeId) -> Result<ObjectiveParts> {
    Ok(ObjectiveParts {
        reconstruction: tape.scalar(rec.reconstruction)?,
        latent: tape.scalar(rec.latent)?,
        perturbation,
        total: tape.scalar(total)?,
    })
}

fn adversarial_eval(
    model: &GmvaeModel,
    thresholds: &Thresholds,
    x_o: &Tensor,
    eta: &Tensor,
    target: usize,
    config: &AttackConfig,
    with_gradient: bool,
) -> Result<(ObjectiveParts, Option<Tensor>)> {
    let mut tape = Tape::new();
    let xo = tape.constant_ref(x_o);
    let e = if with_gradient { tape.var(eta.clone()) } else { tape.constant(eta.clone()) };
    let x = tape.add(xo, e)?;
    let rec = record_terms(&mut tape, model, thresholds, x, target, config)?;
    let zero = tape.constant(Tensor::zeros(eta.shape()));
    let pen = tape.squared_l2(e, zero)?;
    let weighted = tape.scale(pen, config.penalty)?;
    let total = tape.add(rec.total, weighted)?;
    let p = parts(&tape, &rec, tape.scalar(pen)?, total)?;
    let grad = if with_gradient {
        Some(tape.backward(total)?.take(e).expect("eta is a variable"))
    } else {
        None
    };
    Ok((p, grad))
}

fn fooling_eval(
    model: &GmvaeModel,
    thresholds: &Thresholds,
    x: &Tensor,
    target: usize,
    config: &AttackConfig,
    with_gradient: bool,
) -> Result<(ObjectiveParts, Option<Tensor>)> {
    let mut tape = Tape::new();
    let xn = if with_gradient { tape.var(x.clone()) } else { tape.constant(x.clone()) };
    let rec = record_terms(&mut tape, model, thresholds, xn, target, config)?;
    let p = parts(&tape, &rec, 0.0, rec.total)?;
    let grad = if with_gradient {
        Some(tape.backward(rec.total)?.take(xn).expect("image is a variable"))
    } else {
        None
    };
    Ok((p, grad))
}

/// Targeted adversarial objective at perturbation `eta` and its gradient in `eta`:
/// `(recon(x_o + eta) / tau_dec)^a + (latent(x_o + eta) / tau_enc)^b + penalty ||eta||^2`.
pub fn whitebox_objective(
    model: &GmvaeModel,
    thresholds: &Thresholds,
    x_o: &Tensor,
    eta: &Tensor,
    target: usize,
    config: &AttackConfig,
) -> Result<(ObjectiveParts, Tensor)> {
    check_image(x_o, model.input_dim())?;
    check_image(eta, model.input_dim())?;
    check_target(model, thresholds, target)?;
    let (p, g) = adversarial_eval(model, thresholds, x_o, eta, target, config, true)?;
    Ok((p, g.expect("requested")))
}

/// Fooling objective at image `x` and its gradient in `x`.
pub fn fooling_objective(
    model: &GmvaeModel,
    thresholds: &Thresholds,
    x: &Tensor,
    target: usize,
    config: &AttackConfig,
) -> Result<(ObjectiveParts, Tensor)> {
    check_image(x, model.input_dim())?;
    check_target(model, thresholds, target)?;
    let (p, g) = fooling_eval(model, thresholds, x, target, config, true)?;
    Ok((p, g.expect("requested")))
}

/// Targeted white-box attack from `x_o` toward `target`, starting at `eta = 0`.
///
/// The perturbation is kept so that `x_o + eta` stays in `[0, 1]`.
pub fn whitebox_adversarial(
    model: &GmvaeModel,
    thresholds: &Thresholds,
    x_o: &Tensor,
    target: usize,
    config: &AttackConfig,
) -> Result<AttackResult> {
    config.validate()?;
    check_image(x_o, model.input_dim())?;
    check_target(model, thresholds, target)?;
    let (eta, trace) = backtracking_descent(
        Tensor::zeros(x_o.shape()),
        config.steps,
        config.step_size.unwrap_or(1.0),
        |e| {
            let (p, g) = adversarial_eval(model, thresholds, x_o, e, target, config, true)?;
            Ok((p.total, g.expect("requested")))
        },
        |e| Ok(adversarial_eval(model, thresholds, x_o, e, target, config, false)?.0.total),
        |e| {
            let data = e
                .data()
                .iter()
                .zip(x_o.data())
                .map(|(&v, &o)| v.max(-o).min(1.0 - o))
                .collect();
            Tensor::vector(data)
        },
    )?;
    let x_adv = x_o.add(&eta)?.clamp(0.0, 1.0);
    let eta = x_adv.sub(x_o)?;
    let decision = selective_classify(model, thresholds, &x_adv)?;
    Ok(AttackResult {
        x_adv,
        eta,
        decision,
        trace,
    })
}

/// Fooling image for `target`, optimized from uniform noise drawn with `config.seed`.
///
/// `eta` of the result is the change from the noise start.
pub fn whitebox_fooling(
    model: &GmvaeModel,
    thresholds: &Thresholds,
    target: usize,
    config: &AttackConfig,
) -> Result<AttackResult> {
    config.validate()?;
    check_target(model, thresholds, target)?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let start = Tensor::vector((0..model.input_dim()).map(|_| rng.random::<f64>()).collect());
    let (x_adv, trace) = backtracking_descent(
        start.clone(),
        config.steps,
        config.step_size.unwrap_or(1.0),
        |x| {
            let (p, g) = fooling_eval(model, thresholds, x, target, config, true)?;
            Ok((p.total, g.expect("requested")))
        },
        |x| Ok(fooling_eval(model, thresholds, x, target, config, false)?.0.total),
        |x| x.clamp(0.0, 1.0),
    )?;
    let eta = x_adv.sub(&start)?;
    let decision = selective_classify(model, thresholds, &x_adv)?;
    Ok(AttackResult {
        x_adv,
        eta,
        decision,
        trace,
    })
}
