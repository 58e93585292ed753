use super::layers::ParamSet;
use super::{Scalar, Tensor};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    /// Global gradient-norm clip threshold; `None` disables clipping.
    pub clip_norm: Option<f64>,
}

impl AdamConfig {
    pub fn with_lr(lr: f64) -> Self {
        AdamConfig {
            lr,
            ..Default::default()
        }
    }
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            clip_norm: Some(100.0),
        }
    }
}

/// Rescales `grads` in place so their joint L2 norm is at most `max_norm`.
/// Returns the norm before clipping.
pub fn clip_grad_norm<T: Scalar>(grads: &mut [Tensor<T>], max_norm: f64) -> f64 {
    let norm = grads
        .iter()
        .flat_map(|g| g.data().iter())
        .map(|v| {
            let v = v.to_f64().unwrap_or(f64::NAN);
            v * v
        })
        .sum::<f64>()
        .sqrt();
    if norm > max_norm {
        let scale = T::from_f64_lossy(max_norm / (norm + 1e-6));
        for g in grads.iter_mut() {
            g.data_mut().iter_mut().for_each(|v| *v = *v * scale);
        }
    }
    norm
}

/// Adaptive-moment gradient descent over one [`ParamSet`].
#[derive(Clone, Debug)]
pub struct Adam<T> {
    pub config: AdamConfig,
    pub step: u64,
    pub m: Vec<Tensor<T>>,
    pub v: Vec<Tensor<T>>,
}

impl<T: Scalar> Adam<T> {
    pub fn new(params: &ParamSet<T>, config: AdamConfig) -> Self {
        let zeros: Vec<_> = params
            .tensors()
            .map(|t| Tensor::zeros(t.rows(), t.cols()))
            .collect();
        Adam {
            config,
            step: 0,
            m: zeros.clone(),
            v: zeros,
        }
    }

    /// One descent step. Returns the pre-clip gradient norm.
    pub fn step(&mut self, params: &mut ParamSet<T>, mut grads: Vec<Tensor<T>>) -> f64 {
        assert_eq!(grads.len(), params.len(), "one gradient per parameter tensor");
        let norm = match self.config.clip_norm {
            Some(max) => clip_grad_norm(&mut grads, max),
            None => clip_grad_norm(&mut grads, f64::INFINITY),
        };
        if self.config.lr == 0.0 {
            return norm;
        }
        self.step += 1;
        let c = &self.config;
        let b1 = T::from_f64_lossy(c.beta1);
        let b2 = T::from_f64_lossy(c.beta2);
        let one = T::one();
        let bc1 = 1.0 - c.beta1.powi(self.step as i32);
        let bc2 = 1.0 - c.beta2.powi(self.step as i32);
        // lr·sqrt(1−β2^t)/(1−β1^t), with eps scaled to match the unfused form
        let step_size = T::from_f64_lossy(c.lr * bc2.sqrt() / bc1);
        let eps = T::from_f64_lossy(c.eps * bc2.sqrt());
        for (i, g) in grads.iter().enumerate() {
            let p = params.tensor_mut(i);
            let m = self.m[i].data_mut();
            let v = self.v[i].data_mut();
            for (((p, &g), m), v) in p.data_mut().iter_mut().zip(g.data()).zip(m.iter_mut()).zip(v.iter_mut()) {
                *m = b1 * *m + (one - b1) * g;
                *v = b2 * *v + (one - b2) * g * g;
                *p = *p - step_size * *m / (v.sqrt() + eps);
            }
        }
        norm
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::Tape;

    #[test]
    fn clipping_caps_the_global_norm() {
        let mut g = vec![Tensor::from_f64(1, 2, &[3.0, 4.0]), Tensor::from_f64(1, 1, &[12.0])];
        let norm = clip_grad_norm::<f64>(&mut g, 1.3);
        assert!((norm - 13.0).abs() < 1e-12);
        let after: f64 = g.iter().flat_map(|t| t.data().to_vec()).map(|v| v * v).sum::<f64>().sqrt();
        assert!((after - 1.3).abs() < 1e-6);
    }

    #[test]
    fn adam_minimises_a_quadratic() {
        let mut ps = ParamSet::<f64>::new();
        ps.add("x", Tensor::from_f64(1, 2, &[3.0, -2.0]));
        let mut opt = Adam::new(&ps, AdamConfig::with_lr(0.05));
        for _ in 0..2000 {
            let tape = Tape::new();
            let p = ps.bind(&tape, true);
            let x = p.var(crate::nn::ParamId::from_index(0));
            let loss = x.add_scalar(-1.0).square().sum();
            let mut grads = tape.backward(loss);
            let g = p.grads(&mut grads);
            opt.step(&mut ps, g);
        }
        for v in ps.tensors().next().unwrap().data() {
            assert!((v - 1.0).abs() < 1e-3, "{v}");
        }
    }

    #[test]
    fn zero_learning_rate_leaves_parameters_untouched() {
        let mut ps = ParamSet::<f32>::new();
        ps.add("x", Tensor::from_f64(1, 2, &[3.0, -2.0]));
        let before = ps.clone();
        let mut opt = Adam::new(&ps, AdamConfig::with_lr(0.0));
        opt.step(&mut ps, vec![Tensor::from_f64(1, 2, &[1.0, 1.0])]);
        assert_eq!(before.tensors().next(), ps.tensors().next());
    }
}
