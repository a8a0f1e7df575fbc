/// Adam with decoupled weight decay. Decay is scaled by the learning rate,
/// so a zero learning rate leaves parameters untouched.
#[derive(Debug, Clone)]
pub struct AdamW {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
    m: Vec<f64>,
    v: Vec<f64>,
    step: u64,
}

impl AdamW {
    pub fn new(n_params: usize, beta1: f64, beta2: f64, eps: f64, weight_decay: f64) -> Self {
        AdamW {
            beta1,
            beta2,
            eps,
            weight_decay,
            m: vec![0.0; n_params],
            v: vec![0.0; n_params],
            step: 0,
        }
    }

    pub fn steps_taken(&self) -> u64 {
        self.step
    }

    pub fn step(&mut self, params: &mut [f64], grad: &[f64], lr: f64) {
        assert_eq!(params.len(), self.m.len());
        assert_eq!(grad.len(), self.m.len());
        self.step += 1;
        let bc1 = 1.0 - self.beta1.powi(self.step as i32);
        let bc2 = 1.0 - self.beta2.powi(self.step as i32);
        for i in 0..params.len() {
            let g = grad[i];
            self.m[i] = self.beta1 * self.m[i] + (1.0 - self.beta1) * g;
            self.v[i] = self.beta2 * self.v[i] + (1.0 - self.beta2) * g * g;
            let m_hat = self.m[i] / bc1;
            let v_hat = self.v[i] / bc2;
            params[i] -= lr * self.weight_decay * params[i];
            params[i] -= lr * m_hat / (v_hat.sqrt() + self.eps);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_lr_freezes_parameters() {
        let mut opt = AdamW::new(3, 0.9, 0.999, 1e-8, 0.1);
        let mut p = vec![1.0, -2.0, 3.0];
        for _ in 0..5 {
            opt.step(&mut p, &[10.0, -4.0, 0.5], 0.0);
        }
        assert_eq!(p, vec![1.0, -2.0, 3.0]);
    }

    #[test]
    fn decay_alone_shrinks_by_lr_times_wd() {
        let mut opt = AdamW::new(2, 0.9, 0.999, 1e-8, 0.1);
        let mut p = vec![2.0, -4.0];
        opt.step(&mut p, &[0.0, 0.0], 0.01);
        assert!((p[0] - 2.0 * (1.0 - 0.001)).abs() < 1e-15);
        assert!((p[1] + 4.0 * (1.0 - 0.001)).abs() < 1e-15);
    }

    #[test]
    fn first_step_moves_by_lr_against_gradient_sign() {
        // With bias correction the first Adam step has magnitude ~lr.
        let mut opt = AdamW::new(2, 0.9, 0.999, 1e-8, 0.0);
        let mut p = vec![0.0, 0.0];
        opt.step(&mut p, &[3.0, -0.2], 0.01);
        assert!((p[0] + 0.01).abs() < 1e-8);
        assert!((p[1] - 0.01).abs() < 1e-8);
    }

    #[test]
    fn minimizes_a_quadratic() {
        let mut opt = AdamW::new(1, 0.9, 0.999, 1e-8, 0.0);
        let mut p = vec![5.0];
        for _ in 0..2000 {
            let g = vec![2.0 * (p[0] - 1.5)];
            opt.step(&mut p, &g, 0.05);
        }
        assert!((p[0] - 1.5).abs() < 1e-2);
    }
}
