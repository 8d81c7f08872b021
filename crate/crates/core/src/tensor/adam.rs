//! Bias-corrected Adam.

use super::Parameter;

/// Optimizer state: one `(m, v)` moment pair per parameter, aligned with the
/// parameter list order, plus the shared step counter and hyperparameters.
#[derive(Debug, Clone)]
pub struct AdamState {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub t: u64,
    slots: Vec<Slot>,
}

#[derive(Debug, Clone)]
struct Slot {
    m: Vec<f64>,
    v: Vec<f64>,
}

impl AdamState {
    pub fn new(beta1: f64, beta2: f64, eps: f64) -> Self {
        Self {
            beta1,
            beta2,
            eps,
            t: 0,
            slots: Vec::new(),
        }
    }

    /// Rebuild from serialized parts.
    pub fn from_parts(
        beta1: f64,
        beta2: f64,
        eps: f64,
        t: u64,
        slots: Vec<(Vec<f64>, Vec<f64>)>,
    ) -> Self {
        Self {
            beta1,
            beta2,
            eps,
            t,
            slots: slots.into_iter().map(|(m, v)| Slot { m, v }).collect(),
        }
    }

    /// Moment buffers in parameter order, for serialization.
    pub fn slots(&self) -> impl Iterator<Item = (&[f64], &[f64])> {
        self.slots.iter().map(|s| (s.m.as_slice(), s.v.as_slice()))
    }
}

/// One Adam update over `params` with the given learning rate.
///
/// Missing gradients count as zero. Gradients are left untouched; the caller
/// decides when to clear them.
pub fn adam_step(params: &[Parameter], state: &mut AdamState, lr: f64) {
    if state.slots.is_empty() {
        state.slots = params
            .iter()
            .map(|p| Slot {
                m: vec![0.0; p.numel()],
                v: vec![0.0; p.numel()],
            })
            .collect();
    }
    assert_eq!(
        state.slots.len(),
        params.len(),
        "Adam state does not match parameter list"
    );
    state.t += 1;
    let t = state.t as i32;
    let bc1 = 1.0 - state.beta1.powi(t);
    let bc2 = 1.0 - state.beta2.powi(t);
    for (p, slot) in params.iter().zip(state.slots.iter_mut()) {
        assert_eq!(slot.m.len(), p.numel(), "Adam slot size mismatch");
        let grad = p.tensor.grad();
        p.tensor.update_data(|data| {
            for i in 0..data.len() {
                let g = grad.as_ref().map_or(0.0, |g| g[i]);
                slot.m[i] = state.beta1 * slot.m[i] + (1.0 - state.beta1) * g;
                slot.v[i] = state.beta2 * slot.v[i] + (1.0 - state.beta2) * g * g;
                let m_hat = slot.m[i] / bc1;
                let v_hat = slot.v[i] / bc2;
                data[i] -= lr * m_hat / (v_hat.sqrt() + state.eps);
            }
        });
    }
}
