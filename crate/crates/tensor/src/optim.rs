use crate::error::{Result, TensorError};
use crate::graph::{Gradients, ModelGraph};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq)]
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

/// Bias-corrected Adam with one pair of moment tensors per parameter.
#[derive(Clone, Debug)]
pub struct AdamState<S = f32> {
    pub config: AdamConfig,
    step: u64,
    first: Vec<Tensor<S>>,
    second: Vec<Tensor<S>>,
}

impl<S: Scalar> AdamState<S> {
    pub fn new(config: AdamConfig, params: &[Tensor<S>]) -> Self {
        AdamState {
            config,
            step: 0,
            first: params.iter().map(|p| Tensor::zeros(p.shape())).collect(),
            second: params.iter().map(|p| Tensor::zeros(p.shape())).collect(),
        }
    }

    pub fn for_graph(config: AdamConfig, graph: &ModelGraph<S>) -> Self {
        Self::new(config, graph.params())
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }

    pub fn moments(&self) -> (&[Tensor<S>], &[Tensor<S>]) {
        (&self.first, &self.second)
    }

    pub fn update(&mut self, params: &mut [Tensor<S>], grads: &[Tensor<S>]) -> Result<()> {
        if params.len() != self.first.len() || grads.len() != params.len() {
            return Err(TensorError::layer(
                "adam",
                format!(
                    "state tracks {} parameters, got {} parameters and {} gradients",
                    self.first.len(),
                    params.len(),
                    grads.len()
                ),
            ));
        }
        for ((p, g), m) in params.iter().zip(grads).zip(&self.first) {
            if p.shape() != m.shape() {
                return Err(TensorError::shape("adam parameter", m.shape(), p.shape()));
            }
            if g.shape() != m.shape() {
                return Err(TensorError::shape("adam gradient", m.shape(), g.shape()));
            }
        }
        self.step += 1;
        let c = self.config;
        let t = self.step as i32;
        let b1 = S::lit(c.beta1);
        let b2 = S::lit(c.beta2);
        let lr = S::lit(c.learning_rate);
        let eps = S::lit(c.epsilon);
        let corr1 = S::lit(1.0 - c.beta1.powi(t));
        let corr2 = S::lit(1.0 - c.beta2.powi(t));
        for ((p, g), (m, v)) in params
            .iter_mut()
            .zip(grads)
            .zip(self.first.iter_mut().zip(self.second.iter_mut()))
        {
            let (pd, gd) = (p.data_mut(), g.data());
            let (md, vd) = (m.data_mut(), v.data_mut());
            for i in 0..pd.len() {
                md[i] = b1 * md[i] + (S::one() - b1) * gd[i];
                vd[i] = b2 * vd[i] + (S::one() - b2) * gd[i] * gd[i];
                let mhat = md[i] / corr1;
                let vhat = vd[i] / corr2;
                pd[i] -= lr * mhat / (vhat.sqrt() + eps);
            }
        }
        Ok(())
    }

    pub fn step(&mut self, graph: &mut ModelGraph<S>, grads: &Gradients<S>) -> Result<()> {
        self.update(graph.params_mut(), &grads.params)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_gradient_leaves_parameters() {
        let mut p = vec![Tensor::<f64>::new(vec![3], vec![1.0, -2.0, 0.5]).unwrap()];
        let before = p.clone();
        let mut adam = AdamState::new(AdamConfig::default(), &p);
        for _ in 0..5 {
            adam.update(&mut p, &[Tensor::zeros(&[3])]).unwrap();
        }
        assert_eq!(p, before);
        assert_eq!(adam.step_count(), 5);
    }

    #[test]
    fn first_step_moves_by_learning_rate() {
        // m = 0.1 g, v = 0.001 g^2; bias correction restores g and g^2,
        // so the step is lr * g / (|g| + eps).
        for &g in &[0.3f64, -2.0, 1e-3] {
            let mut p = vec![Tensor::<f64>::new(vec![1], vec![0.0]).unwrap()];
            let mut adam = AdamState::new(AdamConfig::default(), &p);
            adam.update(&mut p, &[Tensor::new(vec![1], vec![g]).unwrap()])
                .unwrap();
            let want = -1e-3 * g / (g.abs() + 1e-8);
            assert!((p[0].data()[0] - want).abs() < 1e-15, "g={g}");
        }
    }

    #[test]
    fn constant_gradient_descends() {
        let mut p = vec![Tensor::<f64>::new(vec![2], vec![0.0, 0.0]).unwrap()];
        let mut adam = AdamState::new(AdamConfig::default(), &p);
        let g = Tensor::new(vec![2], vec![0.7, -0.2]).unwrap();
        for _ in 0..100 {
            adam.update(&mut p, std::slice::from_ref(&g)).unwrap();
        }
        assert!(p[0].data()[0] < -0.05);
        assert!(p[0].data()[1] > 0.05);
    }

    #[test]
    fn shape_mismatch_rejected() {
        let mut p = vec![Tensor::<f64>::zeros(&[2])];
        let mut adam = AdamState::new(AdamConfig::default(), &p);
        assert!(adam.update(&mut p, &[Tensor::zeros(&[3])]).is_err());
    }
}
