//! Adam with bias correction:
//! m <- b1 m + (1-b1) g, v <- b2 v + (1-b2) g^2,
//! theta <- theta - lr * m_hat / (sqrt(v_hat) + eps).
//! Gradients are read from each parameter's accumulated buffer; a missing
//! buffer counts as zero (moments still decay, the step counter still
//! advances, and fresh state leaves parameters untouched).

use crate::error::{CoreError, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

pub struct AdamState<T: Scalar> {
    m: Vec<Vec<T>>,
    v: Vec<Vec<T>>,
    step: u64,
}

impl<T: Scalar> AdamState<T> {
    pub fn new(params: &[(String, Tensor<T>)]) -> Self {
        AdamState {
            m: params.iter().map(|(_, p)| vec![T::zero(); p.numel()]).collect(),
            v: params.iter().map(|(_, p)| vec![T::zero(); p.numel()]).collect(),
            step: 0,
        }
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }

    /// One update over all parameters. `params` must be the same list (same
    /// order, same shapes) the state was created from.
    pub fn step(
        &mut self,
        params: &[(String, Tensor<T>)],
        lr: f64,
        beta1: f64,
        beta2: f64,
        epsilon: f64,
    ) -> Result<()> {
        if params.len() != self.m.len() {
            return Err(CoreError::config(format!(
                "optimizer state tracks {} tensors, got {}",
                self.m.len(),
                params.len()
            )));
        }
        self.step += 1;
        let t = self.step as i32;
        let b1 = T::of_f64(beta1);
        let b2 = T::of_f64(beta2);
        let one = T::one();
        let lr_t = T::of_f64(lr);
        let eps = T::of_f64(epsilon);
        let corr1 = one - b1.powi(t);
        let corr2 = one - b2.powi(t);

        for ((name, p), (m, v)) in params.iter().zip(self.m.iter_mut().zip(self.v.iter_mut())) {
            if m.len() != p.numel() {
                return Err(CoreError::config(format!(
                    "optimizer state shape mismatch for {name}: {} vs {}",
                    m.len(),
                    p.numel()
                )));
            }
            let grad = p.grad();
            let mut data = p.data_mut();
            for i in 0..data.len() {
                let g = grad.as_ref().map_or(T::zero(), |g| g[i]);
                m[i] = b1 * m[i] + (one - b1) * g;
                v[i] = b2 * v[i] + (one - b2) * g * g;
                let m_hat = m[i] / corr1;
                let v_hat = v[i] / corr2;
                data[i] = data[i] - lr_t * m_hat / (v_hat.sqrt() + eps);
            }
        }
        Ok(())
    }

    /// Moment buffers as named tensors for checkpointing, `optim.m.<name>` /
    /// `optim.v.<name>`.
    pub fn named_tensors(&self, params: &[(String, Tensor<T>)]) -> Vec<(String, Vec<T>, Vec<usize>)> {
        let mut out = Vec::new();
        for ((name, p), (m, v)) in params.iter().zip(self.m.iter().zip(self.v.iter())) {
            out.push((format!("optim.m.{name}"), m.clone(), p.shape().to_vec()));
            out.push((format!("optim.v.{name}"), v.clone(), p.shape().to_vec()));
        }
        out
    }

    /// Restores moment buffers saved by [`AdamState::named_tensors`].
    pub fn restore(
        &mut self,
        params: &[(String, Tensor<T>)],
        mut lookup: impl FnMut(&str) -> Option<Vec<T>>,
        step: u64,
    ) -> Result<()> {
        for ((name, p), (m, v)) in params.iter().zip(self.m.iter_mut().zip(self.v.iter_mut())) {
            let mk = format!("optim.m.{name}");
            let vk = format!("optim.v.{name}");
            match (lookup(&mk), lookup(&vk)) {
                (Some(mv), Some(vv)) if mv.len() == p.numel() && vv.len() == p.numel() => {
                    *m = mv;
                    *v = vv;
                }
                _ => {
                    return Err(CoreError::Checkpoint(format!(
                        "optimizer state for {name} missing or misshapen"
                    )))
                }
            }
        }
        self.step = step;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn single_param(value: f64) -> Vec<(String, Tensor<f64>)> {
        vec![(
            "theta".to_string(),
            Tensor::param(vec![1], vec![value]).unwrap(),
        )]
    }

    #[test]
    fn zero_gradient_from_fresh_state_is_a_fixed_point() {
        let params = single_param(0.7);
        let mut state = AdamState::new(&params);
        for _ in 0..5 {
            state.step(&params, 1e-1, 0.9, 0.999, 1e-8).unwrap();
        }
        assert_eq!(params[0].1.to_vec(), vec![0.7]);
        assert_eq!(state.step_count(), 5);
    }

    #[test]
    fn first_step_is_approximately_signed_learning_rate() {
        // with bias correction, |update| ~= lr * g / (|g| + eps') ~ lr * sign(g)
        for &g in &[0.3f64, -2.0, 7.5] {
            let params = single_param(1.0);
            let mut state = AdamState::new(&params);
            params[0].1.accumulate_grad(&[g]);
            state.step(&params, 1e-2, 0.9, 0.999, 1e-8).unwrap();
            let moved = params[0].1.to_vec()[0] - 1.0;
            assert!(
                (moved + 1e-2 * g.signum()).abs() < 1e-6,
                "g={g} moved {moved}"
            );
        }
    }

    #[test]
    fn adam_drives_quadratic_toward_zero() {
        // f(theta) = theta^2 from theta=1 at lr 0.1: |theta| decreases
        // monotonically after warmup and approaches 0
        let params = single_param(1.0);
        let mut state = AdamState::new(&params);
        let mut history = Vec::new();
        for _ in 0..100 {
            let theta = params[0].1.to_vec()[0];
            params[0].1.zero_grad();
            params[0].1.accumulate_grad(&[2.0 * theta]);
            state.step(&params, 1e-1, 0.9, 0.999, 1e-8).unwrap();
            history.push(params[0].1.to_vec()[0].abs());
        }
        let warmup = 5;
        for pair in history[warmup..].windows(2) {
            assert!(pair[1] <= pair[0] + 1e-12, "{pair:?}");
        }
        assert!(history.last().unwrap() < &0.05, "{:?}", history.last());
    }

    #[test]
    fn moment_decay_advances_even_with_zero_grads() {
        let params = single_param(1.0);
        let mut state = AdamState::new(&params);
        params[0].1.accumulate_grad(&[1.0]);
        state.step(&params, 1e-3, 0.9, 0.999, 1e-8).unwrap();
        let m_after_one = state.m[0][0];
        params[0].1.zero_grad();
        state.step(&params, 1e-3, 0.9, 0.999, 1e-8).unwrap();
        assert!((state.m[0][0] - 0.9 * m_after_one).abs() < 1e-15);
        assert_eq!(state.step_count(), 2);
    }

    #[test]
    fn mismatched_param_list_rejected() {
        let params = single_param(1.0);
        let mut state = AdamState::new(&params);
        let other = vec![
            params[0].clone(),
            (
                "extra".to_string(),
                Tensor::param(vec![1], vec![0.0]).unwrap(),
            ),
        ];
        assert!(state.step(&other, 1e-3, 0.9, 0.999, 1e-8).is_err());
    }
}
