use indexmap::IndexMap;

use crate::error::{Error, Result};
use crate::params::ParamStore;
use crate::tensor::Tensor;

pub const BETA1: f64 = 0.9;
pub const BETA2: f64 = 0.999;
pub const EPSILON: f64 = 1e-8;

/// First and second moment estimates of one parameter.
#[derive(Clone, Debug, PartialEq)]
pub struct Moments {
    pub m: Tensor,
    pub v: Tensor,
}

/// Bias-corrected Adam. Moments are kept in `f32` so that a checkpoint holds
/// the exact optimizer state; the update itself is computed in `f64`.
#[derive(Clone, Debug, PartialEq)]
pub struct Adam {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    /// Number of updates applied so far.
    pub t: u64,
    pub moments: IndexMap<String, Moments>,
}

impl Default for Adam {
    fn default() -> Self {
        Self {
            beta1: BETA1,
            beta2: BETA2,
            eps: EPSILON,
            t: 0,
            moments: IndexMap::new(),
        }
    }
}

impl Adam {
    pub fn new() -> Self {
        Self::default()
    }

    /// One update of every trainable parameter from its accumulated gradient.
    /// Frozen parameters and their moments are left untouched.
    pub fn step(&mut self, store: &mut ParamStore, lr: f64) -> Result<()> {
        self.t += 1;
        let bc1 = 1.0 - self.beta1.powf(self.t as f64);
        let bc2 = 1.0 - self.beta2.powf(self.t as f64);
        let (b1, b2, eps) = (self.beta1, self.beta2, self.eps);
        for (name, p) in store.iter_mut() {
            if p.frozen {
                continue;
            }
            if !p.grad.is_finite() {
                return Err(Error::NonFinite { op: "adam_step" });
            }
            let shape = p.value.shape();
            let mom = self.moments.entry(name.to_string()).or_insert_with(|| Moments {
                m: Tensor::zeros(shape),
                v: Tensor::zeros(shape),
            });
            if mom.m.shape() != shape {
                return Err(Error::ShapeMismatch {
                    op: "adam_step",
                    left: mom.m.shape(),
                    right: shape,
                });
            }
            let g = p.grad.data();
            let (m, v) = (mom.m.data_mut(), mom.v.data_mut());
            for (i, w) in p.value.data_mut().iter_mut().enumerate() {
                let gi = g[i] as f64;
                let mi = b1 * m[i] as f64 + (1.0 - b1) * gi;
                let vi = b2 * v[i] as f64 + (1.0 - b2) * gi * gi;
                m[i] = mi as f32;
                v[i] = vi as f32;
                let update = lr * (mi / bc1) / ((vi / bc2).sqrt() + eps);
                *w = (*w as f64 - update) as f32;
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Shape;

    fn store(grad: f32) -> ParamStore {
        let mut ps = ParamStore::new();
        let id = ps.insert("w", Tensor::full(Shape::new(1, 1, 1, 3), 1.0)).unwrap();
        ps.get_mut(id).grad = Tensor::full(Shape::new(1, 1, 1, 3), grad);
        ps
    }

    #[test]
    fn first_step_moves_by_lr_against_the_gradient() {
        for g in [0.3f32, -7.0] {
            let mut ps = store(g);
            Adam::new().step(&mut ps, 1e-3).unwrap();
            let moved = ps.by_name("w").unwrap().value.data()[0] as f64 - 1.0;
            assert!((moved + 1e-3 * g.signum() as f64).abs() < 1e-6, "{moved}");
        }
    }

    #[test]
    fn zero_gradient_leaves_value_and_decays_moments() {
        let mut ps = store(1.0);
        let mut adam = Adam::new();
        adam.step(&mut ps, 1e-3).unwrap();
        let after_first = ps.by_name("w").unwrap().value.clone();
        let m1 = adam.moments["w"].m.data()[0];
        ps.zero_grad();
        adam.step(&mut ps, 0.0).unwrap();
        assert_eq!(ps.by_name("w").unwrap().value, after_first);
        assert!(adam.moments["w"].m.data()[0] < m1);
    }

    #[test]
    fn frozen_parameters_are_skipped() {
        let mut ps = store(1.0);
        ps.set_frozen("w", true);
        let mut adam = Adam::new();
        adam.step(&mut ps, 1e-3).unwrap();
        assert_eq!(ps.by_name("w").unwrap().value.data()[0], 1.0);
        assert!(adam.moments.is_empty());
    }

    #[test]
    fn non_finite_gradient_is_an_error() {
        let mut ps = store(f32::NAN);
        assert!(Adam::new().step(&mut ps, 1e-3).is_err());
    }
}
