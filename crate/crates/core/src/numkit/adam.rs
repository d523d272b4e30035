use crate::error::{check_len, Error, Result};
use crate::numkit::Real;

/// Adam optimizer state over one flat parameter vector.
#[derive(Clone, Debug, PartialEq)]
pub struct AdamState {
    pub step_count: u64,
    pub first_moment: Vec<f64>,
    pub second_moment: Vec<f64>,
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl AdamState {
    pub fn new(len: usize, learning_rate: f64) -> Self {
        Self {
            step_count: 0,
            first_moment: vec![0.0; len],
            second_moment: vec![0.0; len],
            learning_rate,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }

    /// One bias-corrected Adam update, in place.
    ///
    /// An all-zero gradient still decays the moments and advances the step
    /// counter but leaves `params` untouched. Nothing is modified when any
    /// gradient entry is non-finite.
    pub fn step<T: Real>(&mut self, params: &mut [T], grads: &[T]) -> Result<()> {
        check_len("adam parameters", params.len(), self.first_moment.len())?;
        check_len("adam gradients", grads.len(), self.first_moment.len())?;
        if let Some(i) = grads.iter().position(|g| !g.to_f64().is_finite()) {
            return Err(Error::training(format!("non-finite gradient at index {i}")));
        }
        self.step_count += 1;
        let (b1, b2) = (self.beta1, self.beta2);
        let all_zero = grads.iter().all(|g| g.to_f64() == 0.0);
        if all_zero {
            self.first_moment.iter_mut().for_each(|m| *m *= b1);
            self.second_moment.iter_mut().for_each(|v| *v *= b2);
            return Ok(());
        }
        let t = self.step_count.min(i32::MAX as u64) as i32;
        let c1 = 1.0 - b1.powi(t);
        let c2 = 1.0 - b2.powi(t);
        let lr = self.learning_rate;
        let eps = self.epsilon;
        for (((p, g), m), v) in params
            .iter_mut()
            .zip(grads)
            .zip(self.first_moment.iter_mut())
            .zip(self.second_moment.iter_mut())
        {
            let g = g.to_f64();
            *m = b1 * *m + (1.0 - b1) * g;
            *v = b2 * *v + (1.0 - b2) * g * g;
            let m_hat = *m / c1;
            let v_hat = *v / c2;
            *p = T::from_f64(p.to_f64() - lr * m_hat / (v_hat.sqrt() + eps));
        }
        Ok(())
    }
}
