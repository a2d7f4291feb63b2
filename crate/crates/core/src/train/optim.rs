use serde::{Deserialize, Serialize};

use super::ParamGroup;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig { beta1: 0.9, beta2: 0.999, eps: 1e-8 }
    }
}

/// Adam with one learning rate per parameter group.
#[derive(Debug, Clone)]
pub struct Adam {
    cfg: AdamConfig,
    encoder_lr: f64,
    head_lr: f64,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
    t: i32,
}

impl Adam {
    pub fn new(cfg: AdamConfig, encoder_lr: f64, head_lr: f64) -> Adam {
        Adam { cfg, encoder_lr, head_lr, m: Vec::new(), v: Vec::new(), t: 0 }
    }

    pub fn lr(&self, g: ParamGroup) -> f64 {
        match g {
            ParamGroup::Encoder => self.encoder_lr,
            ParamGroup::Head => self.head_lr,
        }
    }

    pub fn step(&mut self, params: Vec<&mut [f64]>, groups: &[ParamGroup], grads: &[Vec<f64>]) {
        if self.m.is_empty() {
            self.m = grads.iter().map(|g| vec![0.0; g.len()]).collect();
            self.v = self.m.clone();
        }
        self.t += 1;
        let AdamConfig { beta1, beta2, eps } = self.cfg;
        let c1 = 1.0 - beta1.powi(self.t);
        let c2 = 1.0 - beta2.powi(self.t);
        for (i, p) in params.into_iter().enumerate() {
            let lr = self.lr(groups[i]);
            if lr == 0.0 {
                continue;
            }
            let (m, v, g) = (&mut self.m[i], &mut self.v[i], &grads[i]);
            for j in 0..p.len() {
                m[j] = beta1 * m[j] + (1.0 - beta1) * g[j];
                v[j] = beta2 * v[j] + (1.0 - beta2) * g[j] * g[j];
                p[j] -= lr * (m[j] / c1) / ((v[j] / c2).sqrt() + eps);
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn first_step_moves_by_lr() {
        let mut adam = Adam::new(AdamConfig::default(), 0.0, 0.1);
        let mut a = vec![1.0, 1.0];
        let mut b = vec![1.0];
        adam.step(vec![&mut a, &mut b], &[ParamGroup::Head, ParamGroup::Encoder], &[vec![2.0, -3.0], vec![5.0]]);
        assert!((a[0] - 0.9).abs() < 1e-6 && (a[1] - 1.1).abs() < 1e-6);
        assert_eq!(b, [1.0]);
    }

    #[test]
    fn minimises_a_quadratic() {
        let mut adam = Adam::new(AdamConfig::default(), 0.05, 0.05);
        let mut x = vec![3.0];
        for _ in 0..2000 {
            let g = vec![2.0 * (x[0] - 1.0)];
            adam.step(vec![&mut x], &[ParamGroup::Head], &[g]);
        }
        assert!((x[0] - 1.0).abs() < 1e-3);
    }
}
