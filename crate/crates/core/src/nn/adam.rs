use super::{ParameterStore, Real};
use crate::error::{Error, Result};

/// Adam with bias correction.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for Adam {
    fn default() -> Self {
        Adam {
            lr: 1e-4,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

impl Adam {
    pub fn with_lr(lr: f64) -> Self {
        Adam {
            lr,
            ..Adam::default()
        }
    }

    /// Applies update number `store.step() + 1` and advances the counter.
    pub fn step<T: Real>(&self, store: &mut ParameterStore<T>) -> Result<()> {
        let t = store.step() + 1;
        self.step_at(store, t)?;
        store.set_step(t);
        Ok(())
    }

    /// Applies one update using step index `t >= 1` for bias correction,
    /// then zeroes every gradient buffer.
    pub fn step_at<T: Real>(&self, store: &mut ParameterStore<T>, t: u64) -> Result<()> {
        if t == 0 {
            return Err(Error::invalid("adam", "step index starts at 1"));
        }
        if let Some(e) = store.entries().iter().find(|e| e.tensor.grad().is_none()) {
            return Err(Error::MissingGradient(e.name.clone()));
        }
        let b1 = T::from_f64(self.beta1);
        let b2 = T::from_f64(self.beta2);
        let one = T::one();
        let bc1 = T::from_f64(1.0 - self.beta1.powf(t as f64));
        let bc2 = T::from_f64(1.0 - self.beta2.powf(t as f64));
        let lr = T::from_f64(self.lr);
        let eps = T::from_f64(self.eps);
        for e in store.entries_mut() {
            let grad = e.tensor.grad().expect("checked above").to_vec();
            let data = e.tensor.data_mut();
            for (j, &g) in grad.iter().enumerate() {
                e.m[j] = b1 * e.m[j] + (one - b1) * g;
                e.v[j] = b2 * e.v[j] + (one - b2) * g * g;
                let m_hat = e.m[j] / bc1;
                let v_hat = e.v[j] / bc2;
                data[j] -= lr * m_hat / (v_hat.sqrt() + eps);
            }
        }
        store.zero_grads();
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::Tensor;

    fn scalar_store(value: f32, grad: Option<f32>) -> ParameterStore<f32> {
        let mut s = ParameterStore::new();
        let id = s.add("p", Tensor::scalar(value)).unwrap();
        s.get_mut(id).tensor.set_grad(grad.map(|g| vec![g])).unwrap();
        s
    }

    #[test]
    fn zero_gradient_is_a_fixed_point() {
        let mut s = scalar_store(0.3, Some(0.0));
        Adam::default().step(&mut s).unwrap();
        assert_eq!(s.entries()[0].tensor.data(), &[0.3]);
    }

    #[test]
    fn first_step_moves_by_lr() {
        let mut s = ParameterStore::<f64>::new();
        let id = s.add("p", Tensor::scalar(1.0)).unwrap();
        s.get_mut(id).tensor.set_grad(Some(vec![1.0])).unwrap();
        let adam = Adam::with_lr(1e-3);
        adam.step(&mut s).unwrap();
        let moved = 1.0 - s.entries()[0].tensor.data()[0];
        assert!((moved - 1e-3).abs() < 1e-10, "{moved}");
        assert_eq!(s.entries()[0].tensor.grad(), Some(&[0.0][..]));
        assert_eq!(s.step(), 1);
    }

    #[test]
    fn missing_gradient_names_parameter() {
        let mut s = scalar_store(0.3, None);
        let err = Adam::default().step(&mut s).unwrap_err();
        assert!(matches!(&err, Error::MissingGradient(n) if n == "p"), "{err}");
    }

    #[test]
    fn step_zero_rejected() {
        let mut s = scalar_store(0.3, Some(1.0));
        assert!(Adam::default().step_at(&mut s, 0).is_err());
    }
}
