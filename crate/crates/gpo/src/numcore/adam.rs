use serde::{Deserialize, Serialize};

use super::{Scalar, Tensor};
use crate::error::{dim_err, Result};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            learning_rate: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

impl AdamConfig {
    pub fn with_lr(learning_rate: f64) -> Self {
        AdamConfig {
            learning_rate,
            ..Self::default()
        }
    }
}

/// Moment estimates for one parameter list, updated in place by [`AdamState::step`].
#[derive(Clone, Debug)]
pub struct AdamState<S> {
    pub config: AdamConfig,
    m: Vec<Tensor<S>>,
    v: Vec<Tensor<S>>,
    t: u64,
}

impl<S: Scalar> AdamState<S> {
    pub fn new(config: AdamConfig, params: &[Tensor<S>]) -> Self {
        let zeros = || params.iter().map(|p| Tensor::zeros(p.shape().to_vec())).collect();
        AdamState {
            config,
            m: zeros(),
            v: zeros(),
            t: 0,
        }
    }

    pub fn steps(&self) -> u64 {
        self.t
    }

    /// One bias-corrected Adam update.
    pub fn step(&mut self, params: &mut [Tensor<S>], grads: &[Tensor<S>]) -> Result<()> {
        if params.len() != self.m.len() || grads.len() != params.len() {
            return dim_err(format!(
                "adam tracks {} tensors but got {} params and {} grads",
                self.m.len(),
                params.len(),
                grads.len()
            ));
        }
        for (i, (p, g)) in params.iter().zip(grads).enumerate() {
            if p.shape() != self.m[i].shape() || g.shape() != p.shape() {
                return dim_err(format!(
                    "adam tensor {i}: param {:?}, grad {:?}, state {:?}",
                    p.shape(),
                    g.shape(),
                    self.m[i].shape()
                ));
            }
        }
        self.t += 1;
        let c = self.config;
        let (b1, b2) = (S::of(c.beta1), S::of(c.beta2));
        let bc1 = S::of(1.0 - c.beta1.powi(self.t as i32));
        let bc2 = S::of(1.0 - c.beta2.powi(self.t as i32));
        let lr = S::of(c.learning_rate);
        let eps = S::of(c.eps);
        for ((p, g), (m, v)) in params
            .iter_mut()
            .zip(grads)
            .zip(self.m.iter_mut().zip(self.v.iter_mut()))
        {
            let it = p
                .data_mut()
                .iter_mut()
                .zip(g.data())
                .zip(m.data_mut().iter_mut().zip(v.data_mut().iter_mut()));
            for ((w, &gi), (mi, vi)) in it {
                *mi = b1 * *mi + (S::one() - b1) * gi;
                *vi = b2 * *vi + (S::one() - b2) * gi * gi;
                let mhat = *mi / bc1;
                let vhat = *vi / bc2;
                *w = *w - lr * mhat / (vhat.sqrt() + eps);
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_gradient_leaves_params_unchanged() {
        let mut p = vec![Tensor::new([3], vec![1.0f64, -2.0, 0.5]).unwrap()];
        let before = p.clone();
        let mut st = AdamState::new(AdamConfig::default(), &p);
        for _ in 0..5 {
            st.step(&mut p, &[Tensor::zeros([3])]).unwrap();
        }
        assert_eq!(p, before);
    }

    #[test]
    fn first_step_moves_by_learning_rate() {
        // m=0.1, v=0.001 → mhat=1, vhat=1 → Δ = −lr/(1+eps)
        let mut p = vec![Tensor::new([1], vec![0.0f64]).unwrap()];
        let mut st = AdamState::new(AdamConfig::with_lr(0.001), &p);
        st.step(&mut p, &[Tensor::new([1], vec![1.0]).unwrap()]).unwrap();
        let expected = -0.001 / (1.0 + 1e-8);
        assert!((p[0].data()[0] - expected).abs() < 1e-15);
        assert_eq!(st.steps(), 1);
    }

    #[test]
    fn descends_a_quadratic() {
        let f = |x: f64| (x - 3.0) * (x - 3.0);
        let mut p = vec![Tensor::new([1], vec![0.0f64]).unwrap()];
        let mut st = AdamState::new(AdamConfig::with_lr(0.01), &p);
        let mut last = f(0.0);
        for _ in 0..50 {
            let x = p[0].data()[0];
            st.step(&mut p, &[Tensor::new([1], vec![2.0 * (x - 3.0)]).unwrap()]).unwrap();
            let now = f(p[0].data()[0]);
            assert!(now < last, "{now} !< {last}");
            last = now;
        }
    }

    #[test]
    fn shape_mismatch_is_a_dimension_error() {
        let mut p = vec![Tensor::<f64>::zeros([2])];
        let mut st = AdamState::new(AdamConfig::default(), &p);
        let err = st.step(&mut p, &[Tensor::zeros([3])]).unwrap_err();
        assert!(matches!(err, crate::Error::Dimension(_)));
    }
}
