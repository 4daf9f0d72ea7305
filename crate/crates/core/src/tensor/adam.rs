use serde::{Deserialize, Serialize};

use super::{Grads, ParamSet, Tensor};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            lr: 1e-4,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// Bias-corrected Adam over a whole [`ParamSet`].
#[derive(Debug, Clone)]
pub struct Adam {
    pub cfg: AdamConfig,
    m: Vec<Tensor>,
    v: Vec<Tensor>,
    step: u64,
}

impl Adam {
    pub fn new(cfg: AdamConfig, ps: &ParamSet) -> Self {
        let z: Vec<Tensor> = ps.tensors().iter().map(|t| Tensor::zeros(t.rows, t.cols)).collect();
        Adam {
            cfg,
            m: z.clone(),
            v: z,
            step: 0,
        }
    }

    pub fn steps(&self) -> u64 {
        self.step
    }

    pub fn update(&mut self, ps: &mut ParamSet, g: &Grads) {
        assert_eq!(g.0.len(), ps.len(), "gradient/parameter count mismatch");
        self.step += 1;
        let c = &self.cfg;
        let bc1 = 1.0 - c.beta1.powi(self.step as i32);
        let bc2 = 1.0 - c.beta2.powi(self.step as i32);
        for (k, id) in ps.ids().collect::<Vec<_>>().into_iter().enumerate() {
            let p = ps.get_mut(id);
            let (m, v, gr) = (&mut self.m[k], &mut self.v[k], &g.0[k]);
            for i in 0..p.data.len() {
                let gi = gr.data[i];
                m.data[i] = c.beta1 * m.data[i] + (1.0 - c.beta1) * gi;
                v.data[i] = c.beta2 * v.data[i] + (1.0 - c.beta2) * gi * gi;
                let mh = m.data[i] / bc1;
                let vh = v.data[i] / bc2;
                p.data[i] -= c.lr * mh / (vh.sqrt() + c.eps);
            }
        }
    }
}
