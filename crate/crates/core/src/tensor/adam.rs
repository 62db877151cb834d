use serde::{Deserialize, Serialize};

use super::{Tensor, TensorError};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
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
            beta1: 0.5,
            beta2: 0.9,
            epsilon: 1e-8,
        }
    }
}

/// Moment estimates for one parameter group.
#[derive(Debug, Clone)]
pub struct AdamState {
    pub config: AdamConfig,
    step: u64,
    first: Vec<Tensor>,
    second: Vec<Tensor>,
}

impl AdamState {
    pub fn new(config: AdamConfig, params: &[Tensor]) -> Self {
        let zeros: Vec<Tensor> = params.iter().map(|p| Tensor::zeros(p.shape())).collect();
        Self {
            config,
            step: 0,
            first: zeros.clone(),
            second: zeros,
        }
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }

    /// One bias-corrected Adam update of `params` in place.
    pub fn step(&mut self, params: &mut [Tensor], grads: &[Tensor]) -> Result<(), TensorError> {
        if params.len() != self.first.len() || grads.len() != params.len() {
            return Err(TensorError::Shape(format!(
                "adam: {} params, {} grads, {} moment slots",
                params.len(),
                grads.len(),
                self.first.len()
            )));
        }
        for (p, g) in params.iter().zip(grads) {
            if p.shape() != g.shape() {
                return Err(TensorError::Shape(format!(
                    "adam: param {:?} vs grad {:?}",
                    p.shape(),
                    g.shape()
                )));
            }
        }
        self.step += 1;
        let AdamConfig {
            learning_rate: lr,
            beta1: b1,
            beta2: b2,
            epsilon: eps,
        } = self.config;
        let c1 = 1.0 - b1.powi(self.step as i32);
        let c2 = 1.0 - b2.powi(self.step as i32);
        for ((p, g), (m, v)) in params
            .iter_mut()
            .zip(grads)
            .zip(self.first.iter_mut().zip(self.second.iter_mut()))
        {
            for (((pv, &gv), mv), vv) in p
                .data_mut()
                .iter_mut()
                .zip(g.data())
                .zip(m.data_mut())
                .zip(v.data_mut())
            {
                *mv = b1 * *mv + (1.0 - b1) * gv;
                *vv = b2 * *vv + (1.0 - b2) * gv * gv;
                let m_hat = *mv / c1;
                let v_hat = *vv / c2;
                *pv -= lr * m_hat / (v_hat.sqrt() + eps);
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn one(v: f64) -> Tensor {
        Tensor::new(vec![1], vec![v]).unwrap()
    }

    #[test]
    fn zero_gradient_is_fixed_point() {
        let mut p = vec![Tensor::new(vec![3], vec![1.0, -2.0, 0.5]).unwrap()];
        let before = p.clone();
        let mut st = AdamState::new(AdamConfig::default(), &p);
        for _ in 0..5 {
            st.step(&mut p, &[Tensor::zeros(&[3])]).unwrap();
        }
        assert_eq!(p, before);
    }

    #[test]
    fn first_step_moves_by_learning_rate() {
        let cfg = AdamConfig {
            learning_rate: 0.01,
            ..AdamConfig::default()
        };
        let mut p = vec![Tensor::new(vec![3], vec![0.0, 0.0, 0.0]).unwrap()];
        let mut st = AdamState::new(cfg, &p);
        st.step(&mut p, &[Tensor::new(vec![3], vec![3.0, -0.2, 1e-3]).unwrap()])
            .unwrap();
        // m̂ = g, v̂ = g², so the step is lr·g/(|g| + eps).
        for (&v, s) in p[0].data().iter().zip([-1.0, 1.0, -1.0]) {
            approx::assert_relative_eq!(v, s * 0.01, max_relative = 1e-4);
        }
    }

    #[test]
    fn two_step_trace_matches_closed_form() {
        let cfg = AdamConfig {
            learning_rate: 0.1,
            beta1: 0.5,
            beta2: 0.9,
            epsilon: 1e-8,
        };
        let mut p = vec![one(1.0)];
        let mut st = AdamState::new(cfg, &p);
        st.step(&mut p, &[one(2.0)]).unwrap();
        st.step(&mut p, &[one(2.0)]).unwrap();
        // Step 1: m=1, v=0.4, m̂=2, v̂=4 -> p = 1 - 0.1·2/(2+1e-8)
        let p1 = 1.0 - 0.1 * 2.0 / (2.0 + 1e-8);
        // Step 2: m=1.5, v=0.76, m̂=1.5/0.75=2, v̂=0.76/0.19=4
        let p2 = p1 - 0.1 * 2.0 / (4.0f64.sqrt() + 1e-8);
        approx::assert_relative_eq!(p[0].data()[0], p2, epsilon = 1e-12);
        assert_eq!(st.step_count(), 2);
    }

    #[test]
    fn shape_mismatch_is_rejected() {
        let mut p = vec![one(1.0)];
        let mut st = AdamState::new(AdamConfig::default(), &p);
        assert!(st.step(&mut p, &[Tensor::zeros(&[2])]).is_err());
    }
}
