use alloc::vec;
use alloc::vec::Vec;

use num_traits::Float;
use serde::{Deserialize, Serialize};

use super::{EncoderNet, ParamGroup};
use crate::error::{Error, Result};

/// SGD with momentum and decoupled weight decay:
///
/// ```text
/// v ← μ·v + g
/// p ← p − lr·v − lr·wd·p      (decay only on dense/conv weights)
/// ```
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Sgd<F> {
    pub momentum: F,
    pub weight_decay: F,
    velocity: Vec<F>,
}

impl<F: Float> Sgd<F> {
    pub fn new(net: &EncoderNet<F>, momentum: F, weight_decay: F) -> Self {
        Sgd {
            momentum,
            weight_decay,
            velocity: vec![F::zero(); net.num_params()],
        }
    }

    /// Restore an optimizer from a saved velocity buffer.
    pub fn from_velocity(momentum: F, weight_decay: F, velocity: Vec<F>) -> Self {
        Sgd {
            momentum,
            weight_decay,
            velocity,
        }
    }

    pub fn velocity(&self) -> &[F] {
        &self.velocity
    }

    /// Apply one update to the parameters of `groups`; other groups are left untouched.
    pub fn step(&mut self, net: &mut EncoderNet<F>, grads: &[F], lr: F, groups: &[ParamGroup]) -> Result<()> {
        if grads.len() != net.num_params() || self.velocity.len() != net.num_params() {
            return Err(Error::shape("gradient length does not match the network"));
        }
        if !lr.is_finite() || grads.iter().any(|g| !g.is_finite()) {
            return Err(Error::NonFinite { term: "parameter gradient" });
        }
        let ranges: Vec<_> = groups.iter().map(|&g| net.group_range(g)).collect();
        let decayed: Vec<_> = net
            .decayed_ranges()
            .into_iter()
            .filter(|d| ranges.iter().any(|r| r.start <= d.start && d.end <= r.end))
            .collect();
        let shrink = lr * self.weight_decay;
        let params = net.params_mut();
        for range in ranges {
            for i in range {
                let v = self.momentum * self.velocity[i] + grads[i];
                self.velocity[i] = v;
                params[i] = params[i] - lr * v;
            }
        }
        if shrink != F::zero() {
            for r in decayed {
                for p in &mut params[r] {
                    *p = *p - shrink * *p;
                }
            }
        }
        Ok(())
    }
}
