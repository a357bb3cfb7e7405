//! Minimal dense-network numerical core: tensors, layers and reverse-mode
//! gradients, plus a central-difference oracle for checking them.

mod layer;
mod tape;
mod tensor;

pub use layer::{Activation, Dense, Mlp};
pub use tape::{Gradients, NodeId, Tape};
use crate::error::Result;

pub use tensor::{affine, relu, sigmoid, soft_min, squared_l2, Tensor};

pub(crate) use tensor::sq_dist;

/// Central-difference gradient of a scalar function, one coordinate at a time.
pub fn finite_diff_gradient(f: impl Fn(&Tensor) -> f64, x: &Tensor, h: f64) -> Tensor {
    assert!(h > 0.0, "finite-difference step must be positive");
    let mut probe = x.clone();
    let mut grad = Tensor::zeros(x.shape());
    for i in 0..x.len() {
        let orig = x.data()[i];
        probe.data_mut()[i] = orig + h;
        let up = f(&probe);
        probe.data_mut()[i] = orig - h;
        let down = f(&probe);
        probe.data_mut()[i] = orig;
        grad.data_mut()[i] = (up - down) / (2.0 * h);
    }
    grad
}

/// Largest per-coordinate relative error, with denominator `max(1, |analytic|)`.
pub fn max_relative_error(analytic: &Tensor, numeric: &Tensor) -> f64 {
    analytic
        .data()
        .iter()
        .zip(numeric.data())
        .map(|(a, n)| (a - n).abs() / a.abs().max(1.0))
        .fold(0.0, f64::max)
}

/// Projected gradient descent with a backtracking step: a step that raises
/// the objective is halved until it does not, and a successful step doubles
/// the next trial. Stops early when no step size helps.
pub fn backtracking_descent(
    start: Tensor,
    steps: usize,
    initial_step: f64,
    value_and_grad: impl Fn(&Tensor) -> Result<(f64, Tensor)>,
    value: impl Fn(&Tensor) -> Result<f64>,
    project: impl Fn(Tensor) -> Tensor,
) -> Result<(Tensor, Vec<f64>)> {
    const MAX_HALVINGS: usize = 60;
    let mut x = start;
    let (mut fx, mut g) = value_and_grad(&x)?;
    let mut trace = vec![fx];
    let mut step = initial_step;
    for _ in 0..steps {
        let mut moved = false;
        for _ in 0..MAX_HALVINGS {
            let mut cand = x.clone();
            cand.add_scaled(&g, -step)?;
            let cand = project(cand);
            if cand == x {
                break;
            }
            let fc = value(&cand)?;
            if fc <= fx {
                x = cand;
                step *= 2.0;
                moved = true;
                break;
            }
            step *= 0.5;
        }
        if !moved {
            break;
        }
        (fx, g) = value_and_grad(&x)?;
        trace.push(fx);
    }
    Ok((x, trace))
}
