use crate::scalar::Scalar;

/// Adam with bias correction over a flat parameter vector.
#[derive(Debug, Clone, PartialEq)]
pub struct Adam<T> {
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    /// Number of updates applied so far.
    pub steps: u64,
    pub m: Vec<T>,
    pub v: Vec<T>,
}

impl<T: Scalar> Adam<T> {
    pub fn new(len: usize, beta1: f64, beta2: f64, epsilon: f64) -> Self {
        Self {
            beta1,
            beta2,
            epsilon,
            steps: 0,
            m: vec![T::zero(); len],
            v: vec![T::zero(); len],
        }
    }

    /// One update of `params` along `grads` with learning rate `lr`.
    pub fn update(&mut self, params: &mut [T], grads: &[T], lr: f64) {
        assert_eq!(params.len(), self.m.len(), "parameter count changed");
        assert_eq!(grads.len(), self.m.len(), "gradient count mismatch");
        self.steps += 1;
        let t = self.steps as i32;
        let b1 = T::from_f64_lossy(self.beta1);
        let b2 = T::from_f64_lossy(self.beta2);
        let c1 = T::from_f64_lossy(1.0 - self.beta1.powi(t));
        let c2 = T::from_f64_lossy(1.0 - self.beta2.powi(t));
        let eps = T::from_f64_lossy(self.epsilon);
        let lr = T::from_f64_lossy(lr);
        for (((p, &g), m), v) in params
            .iter_mut()
            .zip(grads)
            .zip(self.m.iter_mut())
            .zip(self.v.iter_mut())
        {
            *m = b1 * *m + (T::one() - b1) * g;
            *v = b2 * *v + (T::one() - b2) * g * g;
            let m_hat = *m / c1;
            let v_hat = *v / c2;
            *p -= lr * m_hat / (v_hat.sqrt() + eps);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn quadratic_matches_hand_recurrence() {
        // minimise (x - 3)^2 from x = 0
        let mut adam = Adam::<f64>::new(1, 0.9, 0.999, 1e-8);
        let mut x = [0.0f64];
        let (mut m, mut v, mut xr) = (0.0f64, 0.0f64, 0.0f64);
        for t in 1..=50 {
            let g = 2.0 * (x[0] - 3.0);
            adam.update(&mut x, &[g], 0.1);

            let gr = 2.0 * (xr - 3.0);
            m = 0.9 * m + 0.1 * gr;
            v = 0.999 * v + 0.001 * gr * gr;
            let mh = m / (1.0 - 0.9f64.powi(t));
            let vh = v / (1.0 - 0.999f64.powi(t));
            xr -= 0.1 * mh / (vh.sqrt() + 1e-8);
            assert!((x[0] - xr).abs() < 1e-12);
        }
        assert!((x[0] - 3.0).abs() < 1.0);
    }
}
