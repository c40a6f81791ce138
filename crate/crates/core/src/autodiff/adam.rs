use super::param::{ParamId, ParamStore};
use super::tape::ParamGrads;
use super::tensor::Tensor;
use crate::error::{Error, Result};

/// Per-parameter Adam moments.
#[derive(Clone, Debug, PartialEq)]
pub struct AdamState {
    pub m: Vec<f64>,
    pub v: Vec<f64>,
    pub t: u64,
}

impl AdamState {
    pub fn new(len: usize) -> Self {
        AdamState { m: vec![0.0; len], v: vec![0.0; len], t: 0 }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    states: Vec<Option<AdamState>>,
}

impl Adam {
    pub fn new(lr: f64) -> Self {
        Adam { lr, beta1: 0.9, beta2: 0.999, eps: 1e-8, states: Vec::new() }
    }

    pub fn state(&self, id: ParamId) -> Option<&AdamState> {
        self.states.get(id.index()).and_then(Option::as_ref)
    }

    /// Parameters that have taken at least one step.
    pub fn states(&self) -> impl Iterator<Item = (ParamId, &AdamState)> {
        self.states.iter().enumerate().filter_map(|(i, s)| s.as_ref().map(|s| (ParamId(i), s)))
    }

    /// Installs a previously saved state (checkpoint restore).
    pub fn set_state(&mut self, id: ParamId, state: AdamState) {
        if self.states.len() <= id.index() {
            self.states.resize_with(id.index() + 1, || None);
        }
        self.states[id.index()] = Some(state);
    }

    /// Applies one update to every parameter in `ids` that has a gradient.
    pub fn step(&mut self, store: &mut ParamStore, grads: &ParamGrads, ids: &[ParamId]) -> Result<()> {
        if self.states.len() < store.len() {
            self.states.resize_with(store.len(), || None);
        }
        for &id in ids {
            let Some(g) = grads.get(id) else { continue };
            let state = self.states[id.index()].get_or_insert_with(|| AdamState::new(g.len()));
            adam_update(store.value_mut(id), g, state, self.lr, self.beta1, self.beta2, self.eps)?;
        }
        Ok(())
    }
}

/// One bias-corrected Adam update of `param` in place.
pub fn adam_update(
    param: &mut Tensor,
    grad: &Tensor,
    state: &mut AdamState,
    lr: f64,
    beta1: f64,
    beta2: f64,
    eps: f64,
) -> Result<()> {
    if param.shape() != grad.shape() || state.m.len() != param.len() || state.v.len() != param.len() {
        return Err(Error::shape("adam_step", format!("param {:?} grad {:?} state {}", param.shape(), grad.shape(), state.m.len())));
    }
    state.t += 1;
    let bc1 = 1.0 - beta1.powi(state.t as i32);
    let bc2 = 1.0 - beta2.powi(state.t as i32);
    for (((p, &g), m), v) in param.data_mut().iter_mut().zip(grad.data()).zip(&mut state.m).zip(&mut state.v) {
        *m = beta1 * *m + (1.0 - beta1) * g;
        *v = beta2 * *v + (1.0 - beta2) * g * g;
        let m_hat = *m / bc1;
        let v_hat = *v / bc2;
        *p -= lr * m_hat / (v_hat.sqrt() + eps);
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn step_once(x: f64, g: f64, lr: f64) -> f64 {
        let mut p = Tensor::scalar(x);
        let mut s = AdamState::new(1);
        adam_update(&mut p, &Tensor::scalar(g), &mut s, lr, 0.9, 0.999, 1e-8).unwrap();
        p.item()
    }

    #[test]
    fn first_step_moves_by_learning_rate() {
        for g in [3.0, -0.02, 1e3] {
            let delta = step_once(1.0, g, 0.01) - 1.0;
            assert!((delta + 0.01 * g.signum()).abs() < 1e-8, "g={g} delta={delta}");
        }
    }

    #[test]
    fn zero_gradient_is_a_no_op() {
        assert_eq!(step_once(0.75, 0.0, 0.1), 0.75);
    }

    #[test]
    fn two_steps_descend_a_parabola() {
        let mut p = Tensor::scalar(1.0);
        let mut s = AdamState::new(1);
        let mut prev = 1.0;
        for t in 1..=2 {
            let g = Tensor::scalar(2.0 * p.item());
            adam_update(&mut p, &g, &mut s, 0.1, 0.9, 0.999, 1e-8).unwrap();
            assert!(p.item() < prev);
            assert_eq!(s.t, t);
            prev = p.item();
        }
    }

    #[test]
    fn shape_mismatch_is_rejected() {
        let mut p = Tensor::zeros(&[2, 2]);
        let mut s = AdamState::new(4);
        let err = adam_update(&mut p, &Tensor::zeros(&[1, 4]), &mut s, 0.1, 0.9, 0.999, 1e-8);
        assert!(matches!(err, Err(Error::Shape { .. })));
    }
}
