use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{Gradients, ModelParams};
use crate::real::{c, Real};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            learning_rate: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }
}

impl AdamConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::Config("learning_rate must be positive".into()));
        }
        if !((0.0..1.0).contains(&self.beta1) && (0.0..1.0).contains(&self.beta2)) {
            return Err(Error::Config("betas must lie in [0, 1)".into()));
        }
        if self.epsilon.is_nan() || self.epsilon <= 0.0 {
            return Err(Error::Config("epsilon must be positive".into()));
        }
        Ok(())
    }
}

/// First and second moment estimates, one buffer per parameter tensor.
#[derive(Debug, Clone, PartialEq)]
pub struct OptimizerState<F> {
    pub m: Vec<Vec<F>>,
    pub v: Vec<Vec<F>>,
    pub t: u64,
}

impl<F: Real> OptimizerState<F> {
    pub fn new(p: &ModelParams<F>) -> Self {
        let zeros = || {
            p.tensors
                .iter()
                .map(|t| vec![F::zero(); t.data.len()])
                .collect()
        };
        OptimizerState {
            m: zeros(),
            v: zeros(),
            t: 0,
        }
    }
}

/// One bias-corrected Adam update, in place.
pub fn adam_step<F: Real>(
    p: &mut ModelParams<F>,
    g: &Gradients<F>,
    s: &mut OptimizerState<F>,
    cfg: &AdamConfig,
) -> Result<()> {
    if g.tensors.len() != p.tensors.len() || s.m.len() != p.tensors.len() {
        return Err(Error::Shape("gradient/state tensor count mismatch".into()));
    }
    for (i, t) in p.tensors.iter().enumerate() {
        let n = t.data.len();
        if g.tensors[i].len() != n || s.m[i].len() != n || s.v[i].len() != n {
            return Err(Error::Shape(format!("tensor {} size mismatch", t.name)));
        }
    }
    s.t += 1;
    let b1 = c::<F>(cfg.beta1);
    let b2 = c::<F>(cfg.beta2);
    let one = F::one();
    let bc1 = c::<F>(1.0 - cfg.beta1.powi(s.t as i32));
    let bc2 = c::<F>(1.0 - cfg.beta2.powi(s.t as i32));
    let lr = c::<F>(cfg.learning_rate);
    let eps = c::<F>(cfg.epsilon);
    for (i, t) in p.tensors.iter_mut().enumerate() {
        let (m, v) = (&mut s.m[i], &mut s.v[i]);
        for (k, x) in t.data.iter_mut().enumerate() {
            let gk = g.tensors[i][k];
            m[k] = b1 * m[k] + (one - b1) * gk;
            v[k] = b2 * v[k] + (one - b2) * gk * gk;
            let m_hat = m[k] / bc1;
            let v_hat = v[k] / bc2;
            *x -= lr * m_hat / (v_hat.sqrt() + eps);
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{init_params, ModelConfig, Tensor};

    fn scalar_params(x: f64) -> ModelParams<f64> {
        let mut p: ModelParams<f64> = init_params(&ModelConfig::tiny(), 0).unwrap();
        p.tensors = vec![Tensor {
            name: "x".into(),
            shape: vec![1],
            data: vec![x],
        }];
        p
    }

    #[test]
    fn zero_gradient_is_a_fixed_point() {
        let mut p: ModelParams<f32> = init_params(&ModelConfig::tiny(), 0).unwrap();
        let before = p.clone();
        let g = Gradients::zeros_like(&p);
        let mut s = OptimizerState::new(&p);
        adam_step(&mut p, &g, &mut s, &AdamConfig::default()).unwrap();
        assert_eq!(p, before);
        assert_eq!(s.t, 1);
    }

    #[test]
    fn one_step_by_hand() {
        let mut p = scalar_params(0.5);
        let g = Gradients {
            tensors: vec![vec![1.0]],
        };
        let mut s = OptimizerState::new(&p);
        adam_step(&mut p, &g, &mut s, &AdamConfig::default()).unwrap();
        let expected = 0.5 - 0.001 / (1.0 + 1e-8);
        assert!((p.tensors[0].data[0] - expected).abs() < 1e-15);
        assert!((0.5 - p.tensors[0].data[0] - 0.000_999_999_990).abs() < 1e-14);
    }

    #[test]
    fn two_steps_by_hand() {
        let mut p = scalar_params(0.0);
        let g = Gradients {
            tensors: vec![vec![1.0]],
        };
        let mut s = OptimizerState::new(&p);
        for _ in 0..2 {
            adam_step(&mut p, &g, &mut s, &AdamConfig::default()).unwrap();
        }
        assert_eq!(s.t, 2);
        assert!((s.m[0][0] - 0.19).abs() < 1e-15);
        assert!((s.v[0][0] - 0.001999).abs() < 1e-15);
    }

    #[test]
    fn shape_mismatch() {
        let mut p = scalar_params(0.0);
        let g = Gradients {
            tensors: vec![vec![1.0, 2.0]],
        };
        let mut s = OptimizerState::new(&p);
        assert!(adam_step(&mut p, &g, &mut s, &AdamConfig::default()).is_err());
    }

    #[test]
    fn config_validation() {
        assert!(AdamConfig::default().validate().is_ok());
        let bad = AdamConfig {
            beta1: 1.0,
            ..AdamConfig::default()
        };
        assert!(bad.validate().is_err());
        let bad = AdamConfig {
            learning_rate: 0.0,
            ..AdamConfig::default()
        };
        assert!(bad.validate().is_err());
    }
}
