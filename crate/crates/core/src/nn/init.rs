use rand::Rng;

use super::Params;
use crate::scalar::Scalar;

/// Fan-in scaled uniform initialisation for weights; biases start at zero.
#[derive(Debug, Clone, Copy)]
pub struct ParamInit {
    /// Negative slope of the activation following the layer.
    pub slope: f64,
}

impl ParamInit {
    /// He-uniform bound `sqrt(6 / ((1 + slope^2) * fan_in))`.
    pub fn bound(&self, fan_in: usize) -> f64 {
        (6.0 / ((1.0 + self.slope * self.slope) * fan_in as f64)).sqrt()
    }

    /// Initialises every `*.weight` array; the product of `shape[1..]` is the fan-in.
    pub fn apply<T: Scalar, P: Params<T> + ?Sized, R: Rng + ?Sized>(
        &self,
        params: &mut P,
        rng: &mut R,
    ) {
        params.visit_mut("", &mut |name, shape, data| {
            if name.ends_with("weight") {
                let fan_in: usize = shape[1..].iter().product();
                let b = self.bound(fan_in);
                for v in data.iter_mut() {
                    *v = T::from_f64_lossy(rng.gen_range(-b..b));
                }
            } else {
                data.iter_mut().for_each(|v| *v = T::zero());
            }
        });
    }
}
