//! Adam optimizer and global gradient-norm clipping.

use crate::tensor::{Grads, ParamStore, Tensor};
use serde::{Deserialize, Serialize};

/// Adam with bias correction. Moment buffers parallel the parameter store and
/// are serialized into checkpoints so training can resume bit-exactly.
#[derive(Debug, Clone)]
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    step: u64,
    m: Vec<Tensor>,
    v: Vec<Tensor>,
}

/// Serializable snapshot of optimizer state (flat buffers, registration order).
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AdamState {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub step: u64,
    pub m: Vec<f64>,
    pub v: Vec<f64>,
}

impl Adam {
    /// Standard coefficients (beta1 0.9, beta2 0.999, eps 1e-8).
    pub fn new(store: &ParamStore, lr: f64) -> Self {
        let zeros: Vec<Tensor> = store
            .ids()
            .map(|id| Tensor::zeros(store.get(id).raw_dim()))
            .collect();
        Self {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            step: 0,
            m: zeros.clone(),
            v: zeros,
        }
    }

    /// Number of updates applied so far.
    pub fn steps_taken(&self) -> u64 {
        self.step
    }

    /// Apply one Adam update. Parameters without a gradient slot are left
    /// untouched (their moments do not decay either, matching lazy updates).
    pub fn step(&mut self, store: &mut ParamStore, grads: &Grads) {
        self.step += 1;
        let bc1 = 1.0 - self.beta1.powi(self.step as i32);
        let bc2 = 1.0 - self.beta2.powi(self.step as i32);
        for id in store.ids().collect::<Vec<_>>() {
            let Some(g) = grads.get(id) else { continue };
            let i = id.index();
            let m = &mut self.m[i];
            let v = &mut self.v[i];
            let p = store.get_mut(id);
            for ((pk, gk), (mk, vk)) in p
                .iter_mut()
                .zip(g.iter())
                .zip(m.iter_mut().zip(v.iter_mut()))
            {
                *mk = self.beta1 * *mk + (1.0 - self.beta1) * gk;
                *vk = self.beta2 * *vk + (1.0 - self.beta2) * gk * gk;
                let m_hat = *mk / bc1;
                let v_hat = *vk / bc2;
                *pk -= self.lr * m_hat / (v_hat.sqrt() + self.eps);
            }
        }
    }

    /// Snapshot moments and step counter for checkpointing.
    pub fn to_state(&self) -> AdamState {
        let flatten = |ts: &[Tensor]| ts.iter().flat_map(|t| t.iter().copied()).collect();
        AdamState {
            lr: self.lr,
            beta1: self.beta1,
            beta2: self.beta2,
            eps: self.eps,
            step: self.step,
            m: flatten(&self.m),
            v: flatten(&self.v),
        }
    }

    /// Rebuild an optimizer for `store` from a snapshot taken on a store with
    /// identical shapes.
    pub fn from_state(store: &ParamStore, state: &AdamState) -> Result<Self, String> {
        let mut adam = Adam::new(store, state.lr);
        adam.beta1 = state.beta1;
        adam.beta2 = state.beta2;
        adam.eps = state.eps;
        adam.step = state.step;
        let total = store.total_elements();
        if state.m.len() != total || state.v.len() != total {
            return Err(format!(
                "optimizer state holds {}/{} moment values but the store needs {}",
                state.m.len(),
                state.v.len(),
                total
            ));
        }
        let mut offset = 0;
        for i in 0..adam.m.len() {
            let n = adam.m[i].len();
            for (k, dst) in adam.m[i].iter_mut().enumerate() {
                *dst = state.m[offset + k];
            }
            for (k, dst) in adam.v[i].iter_mut().enumerate() {
                *dst = state.v[offset + k];
            }
            offset += n;
        }
        Ok(adam)
    }
}

/// Scale gradients so their global L2 norm is at most `max_norm`.
/// Returns the norm measured before clipping.
pub fn clip_grad_norm(grads: &mut Grads, max_norm: f64) -> f64 {
    let norm = grads.global_norm();
    if norm > max_norm && norm > 0.0 {
        grads.scale(max_norm / norm);
    }
    norm
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::{vector, Grads, ParamStore, Tape};
    use approx::assert_relative_eq;

    fn quadratic_store() -> (ParamStore, crate::tensor::ParamId) {
        let mut store = ParamStore::new();
        let id = store.add("w", vector(&[4.0, -3.0]));
        (store, id)
    }

    fn quadratic_grads(store: &ParamStore, id: crate::tensor::ParamId) -> Grads {
        // f(w) = 0.5 * |w|^2, grad = w
        let mut tape = Tape::new();
        let w = tape.param(store, id);
        let d = tape.dot(w, w);
        let root = tape.scale(d, 0.5);
        let mut grads = Grads::zeros(store);
        tape.backward(root, 1.0, &mut grads);
        grads
    }

    #[test]
    fn adam_descends_a_quadratic_to_near_zero() {
        let (mut store, id) = quadratic_store();
        let mut adam = Adam::new(&store, 0.1);
        for _ in 0..500 {
            let grads = quadratic_grads(&store, id);
            adam.step(&mut store, &grads);
        }
        let w = store.get(id);
        assert!(w[0].abs() < 1e-3 && w[1].abs() < 1e-3, "w = {w:?}");
        assert_eq!(adam.steps_taken(), 500);
    }

    #[test]
    fn zero_lr_leaves_parameters_unchanged() {
        let (mut store, id) = quadratic_store();
        let before = store.to_flat();
        let mut adam = Adam::new(&store, 0.0);
        let grads = quadratic_grads(&store, id);
        adam.step(&mut store, &grads);
        assert_eq!(store.to_flat(), before);
    }

    #[test]
    fn first_step_moves_by_lr_regardless_of_gradient_scale() {
        // Bias correction makes the very first Adam step ~= lr * sign(g).
        let (mut store, id) = quadratic_store();
        let mut adam = Adam::new(&store, 0.25);
        let grads = quadratic_grads(&store, id);
        adam.step(&mut store, &grads);
        let w = store.get(id);
        assert_relative_eq!(w[0], 4.0 - 0.25, epsilon = 1e-6);
        assert_relative_eq!(w[1], -3.0 + 0.25, epsilon = 1e-6);
    }

    #[test]
    fn state_roundtrip_resumes_identically() {
        let (mut store, id) = quadratic_store();
        let mut adam = Adam::new(&store, 0.05);
        for _ in 0..3 {
            let grads = quadratic_grads(&store, id);
            adam.step(&mut store, &grads);
        }
        let state = adam.to_state();
        let mut resumed = Adam::from_state(&store, &state).unwrap();
        let mut forked_store = store.clone();

        for _ in 0..5 {
            let grads = quadratic_grads(&store, id);
            adam.step(&mut store, &grads);
            let grads = quadratic_grads(&forked_store, id);
            resumed.step(&mut forked_store, &grads);
        }
        assert_eq!(store.to_flat(), forked_store.to_flat());
    }

    #[test]
    fn state_with_wrong_size_is_rejected() {
        let (store, _) = quadratic_store();
        let adam = Adam::new(&store, 0.05);
        let mut state = adam.to_state();
        state.m.pop();
        assert!(Adam::from_state(&store, &state).is_err());
    }

    #[test]
    fn clip_rescales_only_when_above_threshold() {
        let (store, id) = quadratic_grads_setup();
        let mut grads = quadratic_grads(&store, id);
        let norm = grads.global_norm(); // |(4,-3)| = 5
        assert_relative_eq!(norm, 5.0, epsilon = 1e-12);

        let reported = clip_grad_norm(&mut grads, 2.0);
        assert_relative_eq!(reported, 5.0, epsilon = 1e-12);
        assert_relative_eq!(grads.global_norm(), 2.0, epsilon = 1e-12);

        let reported = clip_grad_norm(&mut grads, 10.0);
        assert_relative_eq!(reported, 2.0, epsilon = 1e-12);
        assert_relative_eq!(grads.global_norm(), 2.0, epsilon = 1e-12);
    }

    fn quadratic_grads_setup() -> (ParamStore, crate::tensor::ParamId) {
        quadratic_store()
    }
}
