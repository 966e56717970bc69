use crate::autodiff::Tensor;
use crate::error::{Error, Result};

/// Rescales all gradients so their global L2 norm is at most `max_norm`.
/// Returns the scale applied (1 when already within bounds).
pub fn clip_gradients(tensors: &mut [Tensor], names: &[String], max_norm: f64) -> Result<f64> {
    let mut sq = 0.0;
    for (t, name) in tensors.iter().zip(names) {
        if let Some(g) = &t.grad {
            if g.iter().any(|x| !x.is_finite()) {
                return Err(Error::NonFiniteGradient(name.clone()));
            }
            sq += g.iter().map(|x| x * x).sum::<f64>();
        }
    }
    let norm = sq.sqrt();
    if !norm.is_finite() {
        return Err(Error::NonFiniteGradient("global norm".into()));
    }
    if norm <= max_norm {
        return Ok(1.0);
    }
    let scale = max_norm / norm;
    for t in tensors.iter_mut() {
        if let Some(g) = &mut t.grad {
            g.iter_mut().for_each(|x| *x *= scale);
        }
    }
    Ok(scale)
}

/// Per-entry squared-gradient accumulators.
#[derive(Debug, Clone, PartialEq)]
pub struct AdagradState {
    pub accumulators: Vec<Vec<f64>>,
}

impl AdagradState {
    pub fn new(tensors: &[Tensor], initial: f64) -> Self {
        Self {
            accumulators: tensors.iter().map(|t| vec![initial; t.numel()]).collect(),
        }
    }
}

/// `acc += g²; θ -= lr · g / √acc`. Tensors without gradients are untouched.
pub fn adagrad_step(tensors: &mut [Tensor], state: &mut AdagradState, lr: f64) {
    for (t, acc) in tensors.iter_mut().zip(&mut state.accumulators) {
        let Some(g) = &t.grad else { continue };
        for ((theta, a), &d) in t.data.iter_mut().zip(acc.iter_mut()).zip(g) {
            if d != 0.0 {
                *a += d * d;
                *theta -= lr * d / a.sqrt();
            }
        }
    }
}
