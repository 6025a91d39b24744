//! Adam with coupled L2 weight decay, gradient-norm clipping.

use serde::{Deserialize, Serialize};

use super::mlp::Mlp;
use super::tensor::{global_norm, Tensor};
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    /// Added to the gradient as `weight_decay · param` before the moment
    /// updates.
    pub weight_decay: f64,
}

impl AdamConfig {
    pub fn new(learning_rate: f64) -> Self {
        Self {
            learning_rate,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            weight_decay: 0.0,
        }
    }

    pub fn with_epsilon(mut self, epsilon: f64) -> Self {
        self.epsilon = epsilon;
        self
    }

    pub fn with_weight_decay(mut self, weight_decay: f64) -> Self {
        self.weight_decay = weight_decay;
        self
    }
}

#[derive(Clone, Debug)]
pub struct AdamState {
    pub config: AdamConfig,
    first: Vec<Tensor>,
    second: Vec<Tensor>,
    step: u64,
}

impl AdamState {
    /// Fresh state with zero moments shaped like `params`.
    pub fn new<'a>(config: AdamConfig, params: impl IntoIterator<Item = &'a Tensor>) -> Self {
        let first: Vec<Tensor> = params
            .into_iter()
            .map(|p| Tensor::zeros(p.shape()))
            .collect();
        let second = first.clone();
        Self {
            config,
            first,
            second,
            step: 0,
        }
    }

    pub fn for_mlp(config: AdamConfig, net: &Mlp) -> Self {
        Self::new(config, net.params())
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }

    /// Applies one bias-corrected Adam update in place.
    pub fn update(&mut self, params: Vec<&mut Tensor>, grads: &[Tensor]) -> Result<()> {
        if params.len() != self.first.len() || grads.len() != params.len() {
            return Err(Error::Shape(format!(
                "adam state tracks {} tensors, got {} params and {} grads",
                self.first.len(),
                params.len(),
                grads.len()
            )));
        }
        for (k, (p, g)) in params.iter().zip(grads).enumerate() {
            if !p.same_shape(g) || !p.same_shape(&self.first[k]) {
                return Err(Error::Shape(format!(
                    "gradient {k} has shape {:?}, parameter {:?}",
                    g.shape(),
                    p.shape()
                )));
            }
            if let Some(pos) = g.data().iter().position(|v| !v.is_finite()) {
                return Err(Error::NonFinite(format!(
                    "gradient tensor {k} entry {pos} is {}",
                    g.data()[pos]
                )));
            }
        }

        self.step += 1;
        let AdamConfig {
            learning_rate,
            beta1,
            beta2,
            epsilon,
            weight_decay,
        } = self.config;
        let t = self.step as i32;
        let c1 = 1.0 - beta1.powi(t);
        let c2 = 1.0 - beta2.powi(t);
        for (k, (p, g)) in params.into_iter().zip(grads).enumerate() {
            let m = self.first[k].data_mut();
            let v = self.second[k].data_mut();
            for (j, pv) in p.data_mut().iter_mut().enumerate() {
                let gj = g.data()[j] + weight_decay * *pv;
                m[j] = beta1 * m[j] + (1.0 - beta1) * gj;
                v[j] = beta2 * v[j] + (1.0 - beta2) * gj * gj;
                let m_hat = m[j] / c1;
                let v_hat = v[j] / c2;
                *pv -= learning_rate * m_hat / (v_hat.sqrt() + epsilon);
            }
        }
        Ok(())
    }
}

/// One Adam step on every parameter of `net`.
pub fn adam_step(net: &mut Mlp, grads: &[Tensor], state: &mut AdamState) -> Result<()> {
    state.update(net.params_mut(), grads)
}

/// Rescales `grads` so their global L2 norm is at most `max_norm`. Returns
/// the norm before clipping.
pub fn clip_grad_norm(grads: &mut [Tensor], max_norm: f64) -> Result<f64> {
    if max_norm <= 0.0 || !max_norm.is_finite() {
        return Err(Error::InvalidArgument(format!(
            "max_norm must be positive, got {max_norm}"
        )));
    }
    let norm = global_norm(grads);
    if norm > max_norm {
        let scale = max_norm / norm;
        for g in grads.iter_mut() {
            for v in g.data_mut() {
                *v *= scale;
            }
        }
    }
    Ok(norm)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn scalar_param(v: f64) -> Tensor {
        Tensor::vector(vec![v]).unwrap()
    }

    #[test]
    fn zero_gradient_leaves_params_unchanged() {
        let mut p = vec![scalar_param(0.7), Tensor::zeros(&[2, 2])];
        let mut state = AdamState::new(AdamConfig::new(0.1), p.iter());
        let grads = vec![scalar_param(0.0), Tensor::zeros(&[2, 2])];
        state.update(p.iter_mut().collect(), &grads).unwrap();
        assert_eq!(p[0].data(), &[0.7]);
        assert_eq!(state.step_count(), 1);
    }

    #[test]
    fn first_step_is_bounded_by_learning_rate() {
        let mut p = scalar_param(0.0);
        let mut state = AdamState::new(AdamConfig::new(0.01), [&p]);
        state.update(vec![&mut p], &[scalar_param(1.0)]).unwrap();
        let moved = p.data()[0];
        assert!(moved < 0.0);
        assert!(moved.abs() <= 0.01);
    }

    #[test]
    fn descends_a_quadratic() {
        let mut p = scalar_param(1.0);
        let mut state = AdamState::new(AdamConfig::new(0.05), [&p]);
        let mut last = 1.0;
        for _ in 0..3 {
            let x = p.data()[0];
            state
                .update(vec![&mut p], &[scalar_param(2.0 * x)])
                .unwrap();
            let f = p.data()[0].powi(2);
            assert!(f < last);
            last = f;
        }
    }

    #[test]
    fn rejects_shape_mismatch() {
        let mut p = scalar_param(0.0);
        let mut state = AdamState::new(AdamConfig::new(0.01), [&p]);
        let err = state.update(vec![&mut p], &[Tensor::zeros(&[2])]);
        assert!(matches!(err, Err(Error::Shape(_))));
    }

    #[test]
    fn clip_cases() {
        let mut small = vec![Tensor::vector(vec![0.3, 0.0]).unwrap()];
        clip_grad_norm(&mut small, 0.5).unwrap();
        assert_eq!(small[0].data(), &[0.3, 0.0]);

        let mut big = vec![
            Tensor::vector(vec![0.6]).unwrap(),
            Tensor::vector(vec![0.8]).unwrap(),
        ];
        let norm = clip_grad_norm(&mut big, 0.5).unwrap();
        assert_eq!(norm, 1.0);
        assert_eq!(big[0].data(), &[0.3]);
        assert_eq!(big[1].data(), &[0.4]);

        let mut zero = vec![Tensor::zeros(&[3])];
        clip_grad_norm(&mut zero, 0.5).unwrap();
        assert!(zero[0].data().iter().all(|&v| v == 0.0));

        assert!(clip_grad_norm(&mut zero, 0.0).is_err());
    }
}
