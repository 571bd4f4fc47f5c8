//! Adaptive-moment optimiser keyed by parameter name.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{ErcError, Result};
use crate::params::Parameterized;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Adam {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub step: u64,
    pub first_moment: BTreeMap<String, Vec<f64>>,
    pub second_moment: BTreeMap<String, Vec<f64>>,
}

impl Adam {
    pub fn new(learning_rate: f64, beta1: f64, beta2: f64, eps: f64) -> Self {
        Adam {
            learning_rate,
            beta1,
            beta2,
            eps,
            step: 0,
            first_moment: BTreeMap::new(),
            second_moment: BTreeMap::new(),
        }
    }

    /// Applies one bias-corrected update. Parameters without an entry in
    /// `grads` are left untouched.
    pub fn update<P: Parameterized + ?Sized>(
        &mut self,
        params: &mut P,
        grads: &BTreeMap<String, Vec<f64>>,
    ) -> Result<()> {
        self.step += 1;
        let t = self.step as i32;
        let bc1 = 1.0 - self.beta1.powi(t);
        let bc2 = 1.0 - self.beta2.powi(t);
        let (lr, b1, b2, eps) = (self.learning_rate, self.beta1, self.beta2, self.eps);
        let mut problem = None;
        let (first, second) = (&mut self.first_moment, &mut self.second_moment);
        params.visit_mut("", &mut |name, tensor| {
            let Some(g) = grads.get(&name) else {
                return;
            };
            if g.len() != tensor.len() {
                problem = Some(name.clone());
                return;
            }
            let m = first
                .entry(name.clone())
                .or_insert_with(|| vec![0.0; g.len()]);
            let v = second.entry(name).or_insert_with(|| vec![0.0; g.len()]);
            for (((p, &gi), mi), vi) in tensor.data_mut().iter_mut().zip(g).zip(m).zip(v) {
                *mi = b1 * *mi + (1.0 - b1) * gi;
                *vi = b2 * *vi + (1.0 - b2) * gi * gi;
                let mhat = *mi / bc1;
                let vhat = *vi / bc2;
                *p -= lr * mhat / (vhat.sqrt() + eps);
            }
        });
        match problem {
            Some(name) => Err(ErcError::InvalidArgument(format!(
                "gradient for {name} has the wrong length"
            ))),
            None => Ok(()),
        }
    }
}
