use crate::numerics::Tensor;

/// Adam with bias correction.
#[derive(Clone, Debug)]
pub struct Adam {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    step: i32,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
}

impl Adam {
    pub fn new(params: &[Tensor], learning_rate: f64) -> Self {
        Adam {
            learning_rate,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            step: 0,
            m: params.iter().map(|p| vec![0.0; p.len()]).collect(),
            v: params.iter().map(|p| vec![0.0; p.len()]).collect(),
        }
    }

    pub fn steps(&self) -> i32 {
        self.step
    }

    pub fn step(&mut self, params: &mut [Tensor], grads: &[Tensor]) {
        self.step += 1;
        let c1 = 1.0 - self.beta1.powi(self.step);
        let c2 = 1.0 - self.beta2.powi(self.step);
        for (k, (p, g)) in params.iter_mut().zip(grads).enumerate() {
            let (m, v) = (&mut self.m[k], &mut self.v[k]);
            for (j, (x, &gj)) in p.data_mut().iter_mut().zip(g.data()).enumerate() {
                m[j] = self.beta1 * m[j] + (1.0 - self.beta1) * gj;
                v[j] = self.beta2 * v[j] + (1.0 - self.beta2) * gj * gj;
                *x -= self.learning_rate * (m[j] / c1) / ((v[j] / c2).sqrt() + self.epsilon);
            }
        }
    }
}

/// Rescales `grads` in place so their joint L2 norm is at most `max_norm`.
/// Returns the norm before clipping. `max_norm = 0` disables clipping.
pub fn clip_global_norm(grads: &mut [Tensor], max_norm: f64) -> f64 {
    let norm = grads.iter().map(Tensor::sum_squares).sum::<f64>().sqrt();
    if max_norm > 0.0 && norm > max_norm {
        let scale = max_norm / norm;
        for g in grads.iter_mut() {
            g.data_mut().iter_mut().for_each(|x| *x *= scale);
        }
    }
    norm
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_gradient_leaves_parameters() {
        let mut params = vec![Tensor::vector(vec![0.3, -1.7, 2.0]).unwrap()];
        let before = params.clone();
        let mut adam = Adam::new(&params, 0.01);
        adam.step(&mut params, &[Tensor::zeros(&[3])]);
        assert_eq!(params, before);
    }

    #[test]
    fn first_step_moves_by_learning_rate() {
        let mut params = vec![Tensor::vector(vec![1.0, 1.0]).unwrap()];
        let mut adam = Adam::new(&params, 0.01);
        adam.step(&mut params, &[Tensor::vector(vec![3.0, -0.5]).unwrap()]);
        assert!((params[0].data()[0] - 0.99).abs() < 1e-9);
        assert!((params[0].data()[1] - 1.01).abs() < 1e-9);
    }

    #[test]
    fn minimizes_a_quadratic() {
        let mut params = vec![Tensor::vector(vec![4.0, -3.0]).unwrap()];
        let mut adam = Adam::new(&params, 0.1);
        for _ in 0..500 {
            let g = Tensor::vector(params[0].data().iter().map(|x| 2.0 * x).collect()).unwrap();
            adam.step(&mut params, &[g]);
        }
        assert!(params[0].data().iter().all(|x| x.abs() < 1e-2));
    }

    #[test]
    fn clipping_caps_joint_norm() {
        let mut grads = vec![Tensor::vector(vec![3.0]).unwrap(), Tensor::vector(vec![4.0]).unwrap()];
        assert_eq!(clip_global_norm(&mut grads, 1.0), 5.0);
        assert!((grads[0].data()[0] - 0.6).abs() < 1e-15 && (grads[1].data()[0] - 0.8).abs() < 1e-15);
        let mut small = vec![Tensor::vector(vec![0.1]).unwrap()];
        clip_global_norm(&mut small, 1.0);
        assert_eq!(small[0].data()[0], 0.1);
        let mut off = vec![Tensor::vector(vec![30.0]).unwrap()];
        clip_global_norm(&mut off, 0.0);
        assert_eq!(off[0].data()[0], 30.0);
    }
}
