use ndarray::{ArrayD, Zip};

use crate::nn::Parameters;

/// Adam without weight decay.
#[derive(Debug, Clone)]
pub struct Adam {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    step: u64,
    m: Vec<ArrayD<f64>>,
    v: Vec<ArrayD<f64>>,
}

impl Default for Adam {
    fn default() -> Self {
        Adam {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            step: 0,
            m: Vec::new(),
            v: Vec::new(),
        }
    }
}

impl Adam {
    pub fn steps_taken(&self) -> u64 {
        self.step
    }

    pub fn step<P: Parameters>(&mut self, params: &mut P, grads: &P, lr: f64) {
        let mut g = Vec::new();
        grads.visit("", &mut |_, a| g.push(a));
        if self.m.is_empty() {
            self.m = g.iter().map(|a| ArrayD::zeros(a.raw_dim())).collect();
            self.v = self.m.clone();
        }
        assert_eq!(
            g.len(),
            self.m.len(),
            "optimizer state does not match parameters"
        );
        self.step += 1;
        let bc1 = 1.0 - self.beta1.powi(self.step as i32);
        let bc2 = 1.0 - self.beta2.powi(self.step as i32);
        let (b1, b2, eps) = (self.beta1, self.beta2, self.eps);
        let mut i = 0;
        params.visit_mut("", &mut |_, mut p| {
            Zip::from(&mut p)
                .and(&g[i])
                .and(&mut self.m[i])
                .and(&mut self.v[i])
                .for_each(|p, &g, m, v| {
                    *m = b1 * *m + (1.0 - b1) * g;
                    *v = b2 * *v + (1.0 - b2) * g * g;
                    let update = (*m / bc1) / ((*v / bc2).sqrt() + eps);
                    *p -= lr * update;
                });
            i += 1;
        });
    }
}
