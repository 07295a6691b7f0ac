use super::params::{Parameters, ParametersExt};

/// Adaptive-moment optimizer over a flattened parameter vector.
#[derive(Debug, Clone, PartialEq)]
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub t: u64,
    pub m: Vec<f64>,
    pub v: Vec<f64>,
}

impl Adam {
    pub fn new(lr: f64, beta1: f64, beta2: f64, num_params: usize) -> Self {
        Adam {
            lr,
            beta1,
            beta2,
            eps: 1e-8,
            t: 0,
            m: vec![0.0; num_params],
            v: vec![0.0; num_params],
        }
    }

    pub fn step<P: Parameters + Clone>(&mut self, params: &mut P, grads: &P) {
        self.step_scaled(params, grads, 1.0);
    }

    /// One update with the learning rate multiplied by `scale`.
    pub fn step_scaled<P: Parameters + Clone>(&mut self, params: &mut P, grads: &P, scale: f64) {
        let g = grads.flatten();
        assert_eq!(g.len(), self.m.len(), "optimizer/parameter size mismatch");
        self.t += 1;
        let bc1 = 1.0 - self.beta1.powi(self.t as i32);
        let bc2 = 1.0 - self.beta2.powi(self.t as i32);
        let (lr, b1, b2, eps) = (self.lr * scale, self.beta1, self.beta2, self.eps);
        let (m, v) = (&mut self.m, &mut self.v);
        let mut off = 0;
        params.visit_mut("", &mut |_, _, s| {
            for (i, p) in s.iter_mut().enumerate() {
                let k = off + i;
                m[k] = b1 * m[k] + (1.0 - b1) * g[k];
                v[k] = b2 * v[k] + (1.0 - b2) * g[k] * g[k];
                let mh = m[k] / bc1;
                let vh = v[k] / bc2;
                *p -= lr * mh / (vh.sqrt() + eps);
            }
            off += s.len();
        });
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::Dense;

    #[test]
    fn minimizes_a_quadratic() {
        let mut p = Dense::zeros(1, 1);
        p.weight[[0, 0]] = 3.0;
        let mut opt = Adam::new(0.05, 0.0, 0.9, p.num_params());
        for _ in 0..400 {
            let mut g = p.zeros_like();
            g.weight[[0, 0]] = 2.0 * p.weight[[0, 0]];
            opt.step(&mut p, &g);
        }
        assert!(p.weight[[0, 0]].abs() < 0.1);
    }

    #[test]
    fn zero_lr_leaves_params() {
        let mut p = Dense::identity(3);
        let before = p.clone();
        let mut opt = Adam::new(0.0, 0.0, 0.9, p.num_params());
        let mut g = p.zeros_like();
        g.weight.fill(1.0);
        opt.step(&mut p, &g);
        assert_eq!(p, before);
    }
}
