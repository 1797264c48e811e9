use crate::error::{Error, Result};

/// Momentum buffer of one network.
#[derive(Debug, Clone, PartialEq)]
pub struct SgdState {
    pub velocity: Vec<f64>,
}

impl SgdState {
    pub fn new(len: usize) -> Self {
        SgdState {
            velocity: vec![0.0; len],
        }
    }
}

/// `v <- m v - eta (g + C p)`, `p <- p + v`.
pub fn sgd_step(
    params: &mut [f64],
    grads: &[f64],
    state: &mut SgdState,
    eta: f64,
    momentum: f64,
    weight_decay: f64,
) -> Result<()> {
    if params.len() != grads.len() || params.len() != state.velocity.len() {
        return Err(Error::Shape(format!(
            "{} parameters, {} gradients, {} velocities",
            params.len(),
            grads.len(),
            state.velocity.len()
        )));
    }
    if let Some(i) = grads.iter().position(|g| !g.is_finite()) {
        return Err(Error::NonFinite(format!("gradient component {i} is {}", grads[i])));
    }
    scaled_update(params, grads, 1.0, state, eta, momentum, weight_decay);
    Ok(())
}

/// [`sgd_step`] on `scale * grads` without validation.
pub(crate) fn scaled_update(
    params: &mut [f64],
    grads: &[f64],
    scale: f64,
    state: &mut SgdState,
    eta: f64,
    momentum: f64,
    weight_decay: f64,
) {
    for ((p, &g), v) in params.iter_mut().zip(grads).zip(&mut state.velocity) {
        *v = momentum * *v - eta * (scale * g + weight_decay * *p);
        *p += *v;
    }
}

/// Rescales `grads` so that its Euclidean norm is at most `max_norm`; returns
/// the norm before clipping.
pub fn clip_global_norm(grads: &mut [f64], max_norm: f64) -> f64 {
    let norm = grads.iter().map(|g| g * g).sum::<f64>().sqrt();
    if norm > max_norm {
        let s = max_norm / norm;
        for g in grads.iter_mut() {
            *g *= s;
        }
    }
    norm
}
