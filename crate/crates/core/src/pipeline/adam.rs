//! Bias-corrected Adam over flat parameter groups.

use super::PipelineError;

#[derive(Debug, Clone, Copy)]
pub struct AdamHyper {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

/// Moments for one parameter group. Lengths always equal the group's
/// parameter count; remeshing swaps in freshly transferred vectors.
#[derive(Debug, Clone)]
pub struct AdamState {
    pub m1: Vec<f64>,
    pub m2: Vec<f64>,
    pub step: u64,
}

impl AdamState {
    pub fn new(len: usize) -> Self {
        Self {
            m1: vec![0.0; len],
            m2: vec![0.0; len],
            step: 0,
        }
    }
}

/// One in-place update. `group` names the parameters in error messages.
pub fn adam_step(
    group: &str,
    params: &mut [f64],
    grads: &[f64],
    state: &mut AdamState,
    hyper: &AdamHyper,
) -> Result<(), PipelineError> {
    assert_eq!(params.len(), grads.len(), "{group}: gradient shape mismatch");
    assert_eq!(params.len(), state.m1.len(), "{group}: moment shape mismatch");
    assert_eq!(params.len(), state.m2.len(), "{group}: moment shape mismatch");
    if grads.iter().any(|g| !g.is_finite()) {
        return Err(PipelineError::NonFiniteGrad {
            group: group.to_string(),
        });
    }
    state.step += 1;
    let t = state.step as i32;
    let correction1 = 1.0 - hyper.beta1.powi(t);
    let correction2 = 1.0 - hyper.beta2.powi(t);
    let step_size = hyper.lr * correction2.sqrt() / correction1;
    for i in 0..params.len() {
        let g = grads[i];
        state.m1[i] = hyper.beta1 * state.m1[i] + (1.0 - hyper.beta1) * g;
        state.m2[i] = hyper.beta2 * state.m2[i] + (1.0 - hyper.beta2) * g * g;
        params[i] -= step_size * state.m1[i] / (state.m2[i].sqrt() + hyper.epsilon);
    }
    Ok(())
}
