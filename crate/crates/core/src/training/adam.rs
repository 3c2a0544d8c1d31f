//! Adam over named parameter blocks.

pub struct Adam {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
    t: u64,
    bias1: f64,
    bias2: f64,
}

impl Adam {
    pub fn new(block_sizes: &[usize]) -> Adam {
        Adam {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            m: block_sizes.iter().map(|&s| vec![0.0; s]).collect(),
            v: block_sizes.iter().map(|&s| vec![0.0; s]).collect(),
            t: 0,
            bias1: 1.0,
            bias2: 1.0,
        }
    }

    /// Advance the step counter; call once per optimization step, before the
    /// per-block updates.
    pub fn begin_step(&mut self) {
        self.t += 1;
        self.bias1 = 1.0 - self.beta1.powi(self.t as i32);
        self.bias2 = 1.0 - self.beta2.powi(self.t as i32);
    }

    pub fn update_block(&mut self, block: usize, params: &mut [f64], grad: &[f64], lr: f64) {
        debug_assert_eq!(params.len(), grad.len());
        let m = &mut self.m[block];
        let v = &mut self.v[block];
        for i in 0..params.len() {
            m[i] = self.beta1 * m[i] + (1.0 - self.beta1) * grad[i];
            v[i] = self.beta2 * v[i] + (1.0 - self.beta2) * grad[i] * grad[i];
            let mhat = m[i] / self.bias1;
            let vhat = v[i] / self.bias2;
            params[i] -= lr * mhat / (vhat.sqrt() + self.eps);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn converges_on_quadratic() {
        let mut adam = Adam::new(&[2]);
        let mut p = vec![3.0, -2.0];
        for _ in 0..4000 {
            let g = vec![2.0 * (p[0] - 1.0), 2.0 * (p[1] + 0.5)];
            adam.begin_step();
            adam.update_block(0, &mut p, &g, 0.01);
        }
        assert!((p[0] - 1.0).abs() < 1e-4);
        assert!((p[1] + 0.5).abs() < 1e-4);
    }

    #[test]
    fn first_step_magnitude_is_lr() {
        // Bias correction makes the first update lr * sign(grad).
        let mut adam = Adam::new(&[1]);
        let mut p = vec![0.0];
        adam.begin_step();
        adam.update_block(0, &mut p, &[0.37], 0.001);
        assert!((p[0] + 0.001).abs() < 1e-9);
    }
}
