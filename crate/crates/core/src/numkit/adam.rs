use crate::error::{Error, Result};

use super::params::{ParamId, ParamStore};
use super::real::{c, Real};

/// Adam optimizer state: per-parameter moment buffers and step counter.
#[derive(Clone, Debug)]
pub struct AdamState<T = f32> {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    step: u64,
    m: Vec<Vec<T>>,
    v: Vec<Vec<T>>,
}

impl<T: Real> AdamState<T> {
    pub fn new(store: &ParamStore<T>, lr: f64) -> Self {
        Self::with_betas(store, lr, 0.9, 0.999, 1e-8)
    }

    pub fn with_betas(store: &ParamStore<T>, lr: f64, beta1: f64, beta2: f64, eps: f64) -> Self {
        let zeros = |s: &ParamStore<T>| -> Vec<Vec<T>> {
            s.iter()
                .map(|(_, _, e)| vec![T::zero(); e.tensor.numel()])
                .collect()
        };
        Self {
            lr,
            beta1,
            beta2,
            eps,
            step: 0,
            m: zeros(store),
            v: zeros(store),
        }
    }

    pub fn step(&self) -> u64 {
        self.step
    }

    /// Clears both moments for `len` elements of `id` starting at `start`.
    pub fn reset_range(&mut self, id: ParamId, start: usize, len: usize) {
        let i = id.index();
        self.m[i][start..start + len]
            .iter_mut()
            .for_each(|x| *x = T::zero());
        self.v[i][start..start + len]
            .iter_mut()
            .for_each(|x| *x = T::zero());
    }
}

/// One bias-corrected Adam step on every non-frozen parameter, then zeroes
/// all gradient buffers. Frozen parameters are never written.
pub fn adam_update<T: Real>(store: &mut ParamStore<T>, state: &mut AdamState<T>) -> Result<()> {
    if state.m.len() != store.len() {
        return Err(Error::State(format!(
            "optimizer tracks {} tensors, store has {}",
            state.m.len(),
            store.len()
        )));
    }
    for id in store.ids() {
        if store.is_frozen(id) {
            continue;
        }
        if store.get(id).grad().is_none() {
            return Err(Error::State(format!(
                "missing gradient for `{}`",
                store.name(id)
            )));
        }
        if state.m[id.index()].len() != store.get(id).numel() {
            return Err(Error::State(format!(
                "moment shape mismatch for `{}`",
                store.name(id)
            )));
        }
    }
    state.step += 1;
    let t = state.step as i32;
    let (b1, b2) = (c::<T>(state.beta1), c::<T>(state.beta2));
    let bc1 = c::<T>(1.0 - state.beta1.powi(t));
    let bc2 = c::<T>(1.0 - state.beta2.powi(t));
    let lr = c::<T>(state.lr);
    let eps = c::<T>(state.eps);
    for id in store.ids() {
        if store.is_frozen(id) {
            continue;
        }
        let i = id.index();
        let tensor = store.get_mut(id);
        let grad = tensor.grad().expect("checked above").to_vec();
        let (m, v) = (&mut state.m[i], &mut state.v[i]);
        for (j, p) in tensor.data_mut().iter_mut().enumerate() {
            let g = grad[j];
            m[j] = b1 * m[j] + (T::one() - b1) * g;
            v[j] = b2 * v[j] + (T::one() - b2) * g * g;
            let mh = m[j] / bc1;
            let vh = v[j] / bc2;
            *p -= lr * mh / (vh.sqrt() + eps);
        }
    }
    store.zero_grads();
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numkit::Tensor;

    fn scalar_store(v: f64) -> (ParamStore<f64>, ParamId) {
        let mut s = ParamStore::new();
        let id = s.add("p", Tensor::scalar(v)).unwrap();
        (s, id)
    }

    #[test]
    fn zero_gradient_is_fixed_point() {
        let (mut s, id) = scalar_store(0.7);
        let mut st = AdamState::new(&s, 0.1);
        s.get_mut(id).accumulate_grad(&[0.0]).unwrap();
        adam_update(&mut s, &mut st).unwrap();
        assert_eq!(s.get(id).data()[0], 0.7);
    }

    #[test]
    fn first_step_moves_by_learning_rate() {
        let (mut s, id) = scalar_store(0.0);
        let mut st = AdamState::new(&s, 0.1);
        s.get_mut(id).accumulate_grad(&[1.0]).unwrap();
        adam_update(&mut s, &mut st).unwrap();
        // m̂ = 1, v̂ = 1 after bias correction: step = lr / (1 + eps).
        let want = -0.1 / (1.0 + 1e-8);
        assert!((s.get(id).data()[0] - want).abs() < 1e-15);
        assert_eq!(s.get(id).grad().unwrap(), &[0.0]);
    }

    #[test]
    fn frozen_param_untouched() {
        let (mut s, id) = scalar_store(1.25);
        s.set_frozen(id, true);
        let mut st = AdamState::new(&s, 0.1);
        s.get_mut(id).accumulate_grad(&[5.0]).unwrap();
        adam_update(&mut s, &mut st).unwrap();
        assert_eq!(s.get(id).data()[0].to_bits(), 1.25f64.to_bits());
    }

    #[test]
    fn missing_gradient_is_state_error() {
        let (mut s, _) = scalar_store(1.0);
        let mut st = AdamState::new(&s, 0.1);
        assert!(matches!(adam_update(&mut s, &mut st), Err(Error::State(_))));
        assert_eq!(st.step(), 0);
    }
}
