use serde::{Deserialize, Serialize};

use crate::error::{NnError, Result};
use crate::scalar::Scalar;
use crate::tensor::Param;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// Adam moment buffers, one pair per parameter tensor, in parameter order.
#[derive(Clone, Debug, PartialEq)]
pub struct AdamState<T> {
    pub config: AdamConfig,
    step: u64,
    first: Vec<Vec<T>>,
    second: Vec<Vec<T>>,
}

impl<T: Scalar> AdamState<T> {
    pub fn new<'a>(config: AdamConfig, params: impl IntoIterator<Item = &'a Param<T>>) -> Self {
        let (first, second) = params
            .into_iter()
            .map(|p| (vec![T::zero(); p.len()], vec![T::zero(); p.len()]))
            .unzip();
        Self {
            config,
            step: 0,
            first,
            second,
        }
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }

    /// One bias-corrected Adam update using the gradients stored in `params`.
    ///
    /// All gradients are checked before anything is modified, so a
    /// non-finite gradient leaves both parameters and state untouched.
    pub fn step<'a>(&mut self, params: impl IntoIterator<Item = &'a mut Param<T>>) -> Result<()>
    where
        T: 'a,
    {
        let mut params: Vec<&mut Param<T>> = params.into_iter().collect();
        if params.len() != self.first.len() {
            return Err(NnError::InvalidConfig(format!(
                "optimizer tracks {} tensors, got {}",
                self.first.len(),
                params.len()
            )));
        }
        for (p, m) in params.iter().zip(&self.first) {
            if p.len() != m.len() {
                return Err(NnError::InvalidConfig(format!(
                    "parameter `{}` has {} values, optimizer buffer {}",
                    p.name,
                    p.len(),
                    m.len()
                )));
            }
            if !p.grad.is_finite() {
                return Err(NnError::NonFiniteGradient {
                    param: p.name.clone(),
                });
            }
        }

        self.step += 1;
        let c = self.config;
        let t = self.step as i32;
        let b1 = T::cast_from(c.beta1);
        let b2 = T::cast_from(c.beta2);
        let one = T::one();
        let lr = T::cast_from(c.lr);
        let eps = T::cast_from(c.eps);
        let bc1 = T::cast_from(1.0 - c.beta1.powi(t));
        let bc2 = T::cast_from(1.0 - c.beta2.powi(t));

        for ((p, m), v) in params
            .iter_mut()
            .zip(self.first.iter_mut())
            .zip(self.second.iter_mut())
        {
            let Param { value, grad, .. } = &mut **p;
            for (((w, &g), mi), vi) in value
                .data_mut()
                .iter_mut()
                .zip(grad.data())
                .zip(m.iter_mut())
                .zip(v.iter_mut())
            {
                *mi = b1 * *mi + (one - b1) * g;
                *vi = b2 * *vi + (one - b2) * g * g;
                let m_hat = *mi / bc1;
                let v_hat = *vi / bc2;
                *w -= lr * m_hat / (v_hat.sqrt() + eps);
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::{Shape4, Tensor4};

    fn param(v: f64, g: f64) -> Param<f64> {
        let s = Shape4::new(1, 1, 1, 3);
        let mut p = Param::new("w", Tensor4::full(s, v));
        p.grad = Tensor4::full(s, g);
        p
    }

    #[test]
    fn first_step_moves_by_lr_times_sign() {
        for g in [0.37, -2.5] {
            let mut p = param(1.0, g);
            let mut st = AdamState::new(AdamConfig::default(), [&p]);
            st.step([&mut p]).unwrap();
            // m_hat = g, v_hat = g^2 -> delta = -lr * g / (|g| + eps)
            let expect = 1.0 - 1e-3 * g / (g.abs() + 1e-8);
            for &w in p.value.data() {
                assert!((w - expect).abs() < 1e-15);
                assert!((w - (1.0 - 1e-3 * g.signum())).abs() < 1e-10);
            }
        }
    }

    #[test]
    fn zero_gradient_keeps_params_and_counts_step() {
        let mut p = param(0.5, 0.0);
        let mut st = AdamState::new(AdamConfig::default(), [&p]);
        st.step([&mut p]).unwrap();
        assert_eq!(st.step_count(), 1);
        assert!(p.value.data().iter().all(|&w| w == 0.5));
    }

    #[test]
    fn non_finite_gradient_names_parameter() {
        let mut p = param(0.5, f64::NAN);
        p.name = "enc0.weight".into();
        let mut st = AdamState::new(AdamConfig::default(), [&p]);
        let err = st.step([&mut p]).unwrap_err();
        assert!(err.to_string().contains("enc0.weight"));
        assert_eq!(st.step_count(), 0);
        assert!(p.value.data().iter().all(|&w| w == 0.5));
    }

    #[test]
    fn identical_runs_identical_trajectories() {
        let run = || {
            let mut p = param(0.1, 0.0);
            let mut st = AdamState::new(AdamConfig::default(), [&p]);
            let mut traj = Vec::new();
            for i in 0..20 {
                let g = ((i as f64) * 0.7).sin();
                p.grad.fill(g);
                st.step([&mut p]).unwrap();
                traj.push(p.value.data()[0]);
            }
            traj
        };
        assert_eq!(run(), run());
    }
}
