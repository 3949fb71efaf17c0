//! Adam with bias correction.

use std::collections::BTreeMap;

use thiserror::Error;

use crate::tensor::Tensor;

#[derive(Debug, Error, PartialEq)]
pub enum OptimError {
    #[error("no gradient supplied for parameter {0}")]
    MissingGradient(String),
    #[error("gradient for {name} has shape {grad:?}, parameter has {param:?}")]
    Shape { name: String, param: Vec<usize>, grad: Vec<usize> },
    #[error("non-finite gradient for parameter {name} at flat index {index}")]
    NonFinite { name: String, index: usize },
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            learning_rate: 1e-4,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }
}

#[derive(Debug, Clone)]
pub struct Moments {
    pub m: Tensor,
    pub v: Tensor,
}

/// Per-parameter moment estimates plus the shared step counter.
#[derive(Debug, Clone)]
pub struct AdamState {
    pub config: AdamConfig,
    step: u64,
    moments: BTreeMap<String, Moments>,
}

impl AdamState {
    pub fn new(config: AdamConfig) -> Self {
        Self {
            config,
            step: 0,
            moments: BTreeMap::new(),
        }
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }

    pub fn moments(&self, name: &str) -> Option<&Moments> {
        self.moments.get(name)
    }

    /// One update of every parameter in `params`. All gradients are
    /// validated before anything is modified.
    pub fn step(&mut self, params: &mut BTreeMap<String, Tensor>, grads: &BTreeMap<String, Tensor>) -> Result<(), OptimError> {
        for (name, p) in params.iter() {
            let g = grads.get(name).ok_or_else(|| OptimError::MissingGradient(name.clone()))?;
            if g.shape() != p.shape() {
                return Err(OptimError::Shape {
                    name: name.clone(),
                    param: p.shape().to_vec(),
                    grad: g.shape().to_vec(),
                });
            }
            if let Some(index) = g.first_non_finite() {
                return Err(OptimError::NonFinite { name: name.clone(), index });
            }
        }

        self.step += 1;
        let AdamConfig {
            learning_rate,
            beta1,
            beta2,
            epsilon,
        } = self.config;
        let t = self.step as i32;
        let c1 = 1.0 - beta1.powi(t);
        let c2 = 1.0 - beta2.powi(t);
        for (name, p) in params.iter_mut() {
            let g = &grads[name];
            let state = self.moments.entry(name.clone()).or_insert_with(|| Moments {
                m: Tensor::zeros(p.shape()),
                v: Tensor::zeros(p.shape()),
            });
            let (m, v) = (state.m.data_mut(), state.v.data_mut());
            for (i, theta) in p.data_mut().iter_mut().enumerate() {
                let gi = g.data()[i] as f64;
                let mi = beta1 * m[i] as f64 + (1.0 - beta1) * gi;
                let vi = beta2 * v[i] as f64 + (1.0 - beta2) * gi * gi;
                m[i] = mi as f32;
                v[i] = vi as f32;
                let update = learning_rate * (mi / c1) / ((vi / c2).sqrt() + epsilon);
                *theta = (*theta as f64 - update) as f32;
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn one(name: &str, v: f32) -> BTreeMap<String, Tensor> {
        BTreeMap::from([(name.to_string(), Tensor::scalar(v))])
    }

    #[test]
    fn first_step_hand_value() {
        let mut params = one("w", 0.0);
        let mut adam = AdamState::new(AdamConfig::default());
        adam.step(&mut params, &one("w", 1.0)).unwrap();
        // m̂ = 1, v̂ = 1: θ = -1e-4 / (1 + 1e-8)
        let expected = -1e-4 / (1.0 + 1e-8);
        assert_eq!(params["w"].data()[0], expected as f32);
        assert_eq!(adam.step_count(), 1);
    }

    #[test]
    fn zero_gradient_leaves_params() {
        let mut params = one("w", 0.75);
        let mut adam = AdamState::new(AdamConfig::default());
        adam.step(&mut params, &one("w", 0.0)).unwrap();
        assert_eq!(params["w"].data()[0], 0.75);
    }

    #[test]
    fn rejects_bad_gradients_without_mutation() {
        let mut params = one("w", 0.5);
        let mut adam = AdamState::new(AdamConfig::default());
        let err = adam.step(&mut params, &one("w", f32::NAN)).unwrap_err();
        assert_eq!(err, OptimError::NonFinite { name: "w".into(), index: 0 });
        assert_eq!(adam.step_count(), 0);
        assert_eq!(params["w"].data()[0], 0.5);

        let wrong = BTreeMap::from([("w".to_string(), Tensor::zeros(&[2]))]);
        assert!(matches!(adam.step(&mut params, &wrong), Err(OptimError::Shape { .. })));
        assert!(matches!(adam.step(&mut params, &BTreeMap::new()), Err(OptimError::MissingGradient(_))));
    }

    #[test]
    fn second_moment_stays_non_negative() {
        let mut params = one("w", 0.0);
        let mut adam = AdamState::new(AdamConfig::default());
        for g in [3.0, -2.0, 0.5, -7.0] {
            adam.step(&mut params, &one("w", g)).unwrap();
            assert!(adam.moments("w").unwrap().v.data()[0] >= 0.0);
        }
    }
}
