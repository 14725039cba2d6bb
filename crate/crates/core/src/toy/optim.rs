use serde::{Deserialize, Serialize};

use super::model::{Layout, ToyModelConfig};

/// Linear warmup to the peak rate, then inverse square-root decay.
pub fn learning_rate(cfg: &ToyModelConfig, step: usize) -> f64 {
    let t = step.max(1) as f64;
    let w = cfg.warmup_steps.max(1) as f64;
    cfg.learning_rate * (t / w).min((w / t).sqrt())
}

/// Adam with decoupled weight decay on non-bias blocks.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Adam {
    pub step: usize,
    pub m: Vec<f64>,
    pub v: Vec<f64>,
}

impl Adam {
    pub fn new(size: usize) -> Self {
        Adam {
            step: 0,
            m: vec![0.0; size],
            v: vec![0.0; size],
        }
    }

    /// Applies one update and returns the learning rate used.
    pub fn update(&mut self, cfg: &ToyModelConfig, layout: &Layout, params: &mut [f64], grads: &[f64]) -> f64 {
        self.step += 1;
        let lr = learning_rate(cfg, self.step);
        let (b1, b2) = (cfg.adam_beta1, cfg.adam_beta2);
        let c1 = 1.0 - b1.powi(self.step as i32);
        let c2 = 1.0 - b2.powi(self.step as i32);
        for (_, block, bias) in layout.blocks() {
            let decay = if *bias { 0.0 } else { cfg.weight_decay };
            for k in block.off..block.off + block.len() {
                let g = grads[k];
                self.m[k] = b1 * self.m[k] + (1.0 - b1) * g;
                self.v[k] = b2 * self.v[k] + (1.0 - b2) * g * g;
                let mh = self.m[k] / c1;
                let vh = self.v[k] / c2;
                params[k] -= lr * (mh / (vh.sqrt() + cfg.adam_eps) + decay * params[k]);
            }
        }
        lr
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn schedule_peaks_at_warmup() {
        let cfg = ToyModelConfig {
            learning_rate: 1e-3,
            warmup_steps: 100,
            ..Default::default()
        };
        assert!((learning_rate(&cfg, 100) - 1e-3).abs() < 1e-15);
        assert!(learning_rate(&cfg, 50) < 1e-3);
        assert!((learning_rate(&cfg, 400) - 5e-4).abs() < 1e-15);
    }

    #[test]
    fn adam_moves_against_gradient() {
        let cfg = ToyModelConfig {
            d_model: 8,
            d_ff: 8,
            n_layers: 1,
            max_len: 4,
            weight_decay: 0.0,
            ..Default::default()
        };
        let layout = Layout::new(&cfg, 4);
        let mut params = vec![0.0; layout.total()];
        let grads = vec![1.0; layout.total()];
        let mut adam = Adam::new(layout.total());
        adam.update(&cfg, &layout, &mut params, &grads);
        assert!(params.iter().all(|p| *p < 0.0));
    }
}
