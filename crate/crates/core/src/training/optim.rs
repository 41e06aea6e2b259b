use crate::model::ModelParams;
use crate::tensor::Tensor;

/// Adam with bias correction.
#[derive(Debug, Clone, PartialEq)]
pub struct Adam {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    step: u64,
    first: Vec<Vec<f64>>,
    second: Vec<Vec<f64>>,
}

impl Adam {
    pub fn new(learning_rate: f64) -> Self {
        Self::with_moments(learning_rate, 0.9, 0.999, 1e-8)
    }

    pub fn with_moments(learning_rate: f64, beta1: f64, beta2: f64, eps: f64) -> Self {
        Self {
            learning_rate,
            beta1,
            beta2,
            eps,
            step: 0,
            first: Vec::new(),
            second: Vec::new(),
        }
    }

    pub fn steps_taken(&self) -> u64 {
        self.step
    }

    /// One update; `grads` follows the canonical parameter order.
    pub fn step(&mut self, params: &ModelParams, grads: &[Tensor]) -> ModelParams {
        let flat = params.flatten();
        assert_eq!(flat.len(), grads.len(), "one gradient per parameter");
        if self.first.is_empty() {
            self.first = flat.iter().map(|t| vec![0.0; t.numel()]).collect();
            self.second = self.first.clone();
        }
        self.step += 1;
        let c1 = 1.0 - self.beta1.powi(self.step as i32);
        let c2 = 1.0 - self.beta2.powi(self.step as i32);
        let updated: Vec<Tensor> = flat
            .iter()
            .zip(grads)
            .zip(self.first.iter_mut().zip(self.second.iter_mut()))
            .map(|((p, g), (m, v))| {
                assert_eq!(p.shape(), g.shape(), "gradient shape");
                let data = p
                    .data()
                    .iter()
                    .zip(g.data())
                    .zip(m.iter_mut().zip(v.iter_mut()))
                    .map(|((&w, &g), (m, v))| {
                        *m = self.beta1 * *m + (1.0 - self.beta1) * g;
                        *v = self.beta2 * *v + (1.0 - self.beta2) * g * g;
                        w - self.learning_rate * (*m / c1) / ((*v / c2).sqrt() + self.eps)
                    })
                    .collect();
                Tensor::new(p.shape(), data).expect("same shape")
            })
            .collect();
        params.rebuild(updated)
    }
}
