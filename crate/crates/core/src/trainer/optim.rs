use std::collections::HashMap;

/// AdamW with decoupled weight decay and bias correction. Moment buffers are
/// keyed by parameter name and created on first use.
#[derive(Debug, Clone)]
pub struct AdamW {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
    step: u64,
    moments: HashMap<String, (Vec<f64>, Vec<f64>)>,
}

impl AdamW {
    pub fn new(lr: f64, beta1: f64, beta2: f64, eps: f64, weight_decay: f64) -> Self {
        Self {
            lr,
            beta1,
            beta2,
            eps,
            weight_decay,
            step: 0,
            moments: HashMap::new(),
        }
    }

    /// Advances the shared step counter; call once per optimizer step before
    /// the per-parameter updates.
    pub fn begin_step(&mut self) {
        self.step += 1;
    }

    pub fn steps(&self) -> u64 {
        self.step
    }

    pub fn update(&mut self, name: &str, param: &mut [f64], grad: &[f64]) {
        assert_eq!(param.len(), grad.len(), "gradient length for `{name}`");
        let t = self.step.max(1) as i32;
        let (m, v) = self
            .moments
            .entry(name.to_string())
            .or_insert_with(|| (vec![0.0; grad.len()], vec![0.0; grad.len()]));
        let c1 = 1.0 - self.beta1.powi(t);
        let c2 = 1.0 - self.beta2.powi(t);
        for i in 0..param.len() {
            let g = grad[i];
            m[i] = self.beta1 * m[i] + (1.0 - self.beta1) * g;
            v[i] = self.beta2 * v[i] + (1.0 - self.beta2) * g * g;
            let mhat = m[i] / c1;
            let vhat = v[i] / c2;
            param[i] -= self.lr * (mhat / (vhat.sqrt() + self.eps) + self.weight_decay * param[i]);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn first_step_moves_by_lr_times_sign() {
        let mut opt = AdamW::new(0.1, 0.9, 0.999, 1e-12, 0.0);
        let mut p = vec![1.0, -2.0, 0.5];
        opt.begin_step();
        opt.update("p", &mut p, &[3.0, -0.01, 0.0]);
        assert!((p[0] - 0.9).abs() < 1e-9);
        assert!((p[1] + 1.9).abs() < 1e-9);
        assert_eq!(p[2], 0.5);
    }

    #[test]
    fn minimizes_a_quadratic() {
        let mut opt = AdamW::new(0.05, 0.9, 0.999, 1e-8, 0.0);
        let mut p = vec![3.0, -4.0];
        for _ in 0..2000 {
            let g: Vec<f64> = p.iter().map(|x| 2.0 * (x - 1.0)).collect();
            opt.begin_step();
            opt.update("p", &mut p, &g);
        }
        assert!(p.iter().all(|x| (x - 1.0).abs() < 1e-3), "{p:?}");
    }

    #[test]
    fn decay_shrinks_without_gradient() {
        let mut opt = AdamW::new(0.1, 0.9, 0.999, 1e-8, 0.5);
        let mut p = vec![2.0];
        opt.begin_step();
        opt.update("p", &mut p, &[0.0]);
        assert!((p[0] - 1.9).abs() < 1e-12);
    }
}
