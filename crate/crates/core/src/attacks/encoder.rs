use crate::diffmath::{NodeId, Tape, Tensor};
use crate::error::{Error, Result};
use crate::gmvae::GmvaeModel;
use crate::selector::{selective_classify, Thresholds};

use super::{check_image, AttackConfig, AttackResult, NormOrder};

fn record_loss<'a>(tape: &mut Tape<'a>, model: &'a GmvaeModel, x: NodeId, y: usize) -> Result<NodeId> {
    if y >= model.num_classes() {
        return Err(Error::UnknownLabel {
            label: y,
            num_classes: model.num_classes(),
        });
    }
    let (z, _) = model.record_encode(tape, x, false)?;
    let means = tape.constant_ref(model.prior().means());
    let d = tape.sq_dist_rows(z, means)?;
    // -log softmax_y(-d) = d_y + log sum_c exp(-d_c)
    let dy = tape.index(d, y)?;
    let sm = tape.soft_min(d)?;
    tape.sub(dy, sm)
}

/// Cross-entropy of the softmax over logits `-||f(x) - mu_c||^2` against `y`.
pub fn encoder_attack_loss(model: &GmvaeModel, x: &Tensor, y: usize) -> Result<f64> {
    check_image(x, model.input_dim())?;
    let mut tape = Tape::new();
    let xn = tape.constant_ref(x);
    let loss = record_loss(&mut tape, model, xn, y)?;
    tape.scalar(loss)
}

/// Value of [`encoder_attack_loss`] and its gradient with respect to `x`.
pub fn encoder_attack_gradient(model: &GmvaeModel, x: &Tensor, y: usize) -> Result<(f64, Tensor)> {
    check_image(x, model.input_dim())?;
    let mut tape = Tape::new();
    let xn = tape.var_ref(x);
    let loss = record_loss(&mut tape, model, xn, y)?;
    let mut grads = tape.backward(loss)?;
    let g = grads.take(xn).expect("input is a variable");
    Ok((tape.scalar(loss)?, g))
}

fn sign(v: f64) -> f64 {
    if v > 0.0 {
        1.0
    } else if v < 0.0 {
        -1.0
    } else {
        0.0
    }
}

/// Unit ascent direction for the chosen norm: the sign vector for L-inf,
/// the normalized gradient for L2 (zero stays zero).
fn direction(g: &Tensor, norm: NormOrder) -> Tensor {
    match norm {
        NormOrder::Linf => g.map(sign),
        NormOrder::L2 => {
            let n = g.norm_l2();
            if n > 0.0 {
                g.scale(1.0 / n)
            } else {
                g.clone()
            }
        }
    }
}

/// Projects onto the budget ball around `x` and then onto `[0, 1]`.
fn project(candidate: &Tensor, x: &Tensor, epsilon: f64, norm: NormOrder) -> Tensor {
    let inside = match norm {
        NormOrder::Linf => {
            let data = candidate
                .data()
                .iter()
                .zip(x.data())
                .map(|(&c, &o)| c.max(o - epsilon).min(o + epsilon))
                .collect();
            Tensor::vector(data)
        }
        NormOrder::L2 => {
            let delta = candidate.sub(x).expect("same shape");
            let n = delta.norm_l2();
            if n > epsilon {
                x.add(&delta.scale(epsilon / n)).expect("same shape")
            } else {
                candidate.clone()
            }
        }
    };
    inside.clamp(0.0, 1.0)
}

fn finish(model: &GmvaeModel, thresholds: &Thresholds, x: &Tensor, x_adv: Tensor, trace: Vec<f64>) -> Result<AttackResult> {
    let eta = x_adv.sub(x)?;
    let decision = selective_classify(model, thresholds, &x_adv)?;
    Ok(AttackResult {
        x_adv,
        eta,
        decision,
        trace,
    })
}

/// One gradient-sign step of size `epsilon` on the encoder loss, clipped to `[0, 1]`.
///
/// With `norm = L2` the step follows the normalized gradient instead.
pub fn fgsm(
    model: &GmvaeModel,
    thresholds: &Thresholds,
    x: &Tensor,
    y_true: usize,
    epsilon: f64,
    norm: NormOrder,
) -> Result<AttackResult> {
    if !(epsilon >= 0.0) {
        return Err(Error::Config(format!("epsilon must be nonnegative, got {epsilon}")));
    }
    let (loss, g) = encoder_attack_gradient(model, x, y_true)?;
    let mut x_adv = x.clone();
    x_adv.add_scaled(&direction(&g, norm), epsilon)?;
    let x_adv = x_adv.clamp(0.0, 1.0);
    let after = encoder_attack_loss(model, &x_adv, y_true)?;
    finish(model, thresholds, x, x_adv, vec![loss, after])
}

fn iterate(
    model: &GmvaeModel,
    thresholds: &Thresholds,
    x: &Tensor,
    y_true: usize,
    config: &AttackConfig,
    decay: Option<f64>,
) -> Result<AttackResult> {
    config.validate()?;
    check_image(x, model.input_dim())?;
    let step = config.encoder_step();
    let mut x_adv = x.clone();
    let mut momentum = Tensor::zeros(x.shape());
    let mut trace = Vec::with_capacity(config.steps + 1);
    for _ in 0..config.steps {
        let (loss, g) = encoder_attack_gradient(model, &x_adv, y_true)?;
        trace.push(loss);
        let ascent = match decay {
            None => direction(&g, config.norm),
            Some(mu) => {
                let l1: f64 = g.data().iter().map(|v| v.abs()).sum();
                let mut next = momentum.scale(mu);
                if l1 > 0.0 {
                    next.add_scaled(&g, 1.0 / l1)?;
                }
                momentum = next;
                direction(&momentum, config.norm)
            }
        };
        let mut candidate = x_adv;
        candidate.add_scaled(&ascent, step)?;
        x_adv = project(&candidate, x, config.epsilon, config.norm);
    }
    trace.push(encoder_attack_loss(model, &x_adv, y_true)?);
    finish(model, thresholds, x, x_adv, trace)
}

/// Projected gradient ascent on the encoder loss, starting at `x`.
pub fn pgd(
    model: &GmvaeModel,
    thresholds: &Thresholds,
    x: &Tensor,
    y_true: usize,
    config: &AttackConfig,
) -> Result<AttackResult> {
    iterate(model, thresholds, x, y_true, config, None)
}

/// PGD whose direction is an accumulated momentum of L1-normalized gradients.
pub fn momentum_iterative(
    model: &GmvaeModel,
    thresholds: &Thresholds,
    x: &Tensor,
    y_true: usize,
    config: &AttackConfig,
) -> Result<AttackResult> {
    iterate(model, thresholds, x, y_true, config, Some(config.decay))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::diffmath::{finite_diff_gradient, max_relative_error};
    use crate::gmvae::ModelConfig;

    fn model() -> GmvaeModel {
        let cfg = ModelConfig {
            input_dim: 6,
            num_classes: 3,
            encoder_hidden: vec![5],
            decoder_hidden: vec![5],
            ..ModelConfig::default()
        };
        GmvaeModel::new(&cfg, 11).unwrap()
    }

    fn input() -> Tensor {
        Tensor::vector(vec![0.1, 0.5, 0.9, 0.3, 0.0, 1.0])
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let m = model();
        let x = input();
        for y in 0..3 {
            let (_, g) = encoder_attack_gradient(&m, &x, y).unwrap();
            let fd = finite_diff_gradient(|t| encoder_attack_loss(&m, t, y).unwrap(), &x, 1e-6);
            assert!(max_relative_error(&g, &fd) < 1e-6);
        }
    }

    #[test]
    fn zero_budget_is_identity() {
        let m = model();
        let r = fgsm(&m, &Thresholds::disabled(), &input(), 1, 0.0, NormOrder::Linf).unwrap();
        assert_eq!(r.x_adv, input());
        assert!(r.eta.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn single_step_pgd_equals_fgsm() {
        let m = model();
        let t = Thresholds::disabled();
        for eps in [0.05, 0.2, 0.5] {
            let a = fgsm(&m, &t, &input(), 2, eps, NormOrder::Linf).unwrap();
            let cfg = AttackConfig {
                epsilon: eps,
                steps: 1,
                step_size: Some(eps),
                ..AttackConfig::default()
            };
            let b = pgd(&m, &t, &input(), 2, &cfg).unwrap();
            assert_eq!(a.x_adv, b.x_adv);
        }
    }

    #[test]
    fn budgets_and_box_hold() {
        let m = model();
        let t = Thresholds::disabled();
        for norm in [NormOrder::Linf, NormOrder::L2] {
            let cfg = AttackConfig {
                epsilon: 0.3,
                steps: 10,
                norm,
                ..AttackConfig::default()
            };
            for r in [pgd(&m, &t, &input(), 0, &cfg).unwrap(), momentum_iterative(&m, &t, &input(), 0, &cfg).unwrap()] {
                let size = match norm {
                    NormOrder::Linf => r.eta.norm_linf(),
                    NormOrder::L2 => r.eta.norm_l2(),
                };
                assert!(size <= 0.3 + 1e-12);
                assert!(r.x_adv.data().iter().all(|v| (0.0..=1.0).contains(v)));
                assert_eq!(r.trace.len(), 11);
            }
        }
    }

    #[test]
    fn tiny_decay_follows_pgd() {
        let m = model();
        let t = Thresholds::disabled();
        let cfg = AttackConfig {
            epsilon: 0.2,
            steps: 5,
            decay: 1e-300,
            ..AttackConfig::default()
        };
        let a = pgd(&m, &t, &input(), 1, &cfg).unwrap();
        let b = momentum_iterative(&m, &t, &input(), 1, &cfg).unwrap();
        assert_eq!(a.x_adv, b.x_adv);
    }

    #[test]
    fn bad_inputs() {
        let m = model();
        assert!(matches!(encoder_attack_loss(&m, &input(), 3), Err(Error::UnknownLabel { .. })));
        assert!(encoder_attack_loss(&m, &Tensor::zeros(&[5]), 0).is_err());
        let cfg = AttackConfig {
            steps: 0,
            ..AttackConfig::default()
        };
        assert!(pgd(&m, &Thresholds::disabled(), &input(), 0, &cfg).is_err());
    }
}
