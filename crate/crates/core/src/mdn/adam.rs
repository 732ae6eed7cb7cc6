use super::grad::Gradients;
use super::params::{ModelParams, Real};
use super::ModelConfig;

/// Adam with bias-corrected moment estimates, one moment pair per scalar.
#[derive(Debug, Clone)]
pub struct Adam<T> {
    lr: f64,
    beta1: f64,
    beta2: f64,
    eps: f64,
    step: i32,
    m: Vec<T>,
    v: Vec<T>,
}

impl<T: Real> Adam<T> {
    pub fn new(config: &ModelConfig) -> Self {
        let n = config.param_count();
        Self {
            lr: config.learn_rate,
            beta1: config.adam_beta1,
            beta2: config.adam_beta2,
            eps: config.adam_eps,
            step: 0,
            m: vec![T::zero(); n],
            v: vec![T::zero(); n],
        }
    }

    pub fn steps(&self) -> i32 {
        self.step
    }

    pub fn update(&mut self, params: &mut ModelParams<T>, grads: &Gradients<T>) {
        self.step += 1;
        let (b1, b2) = (T::of(self.beta1), T::of(self.beta2));
        let (one_b1, one_b2) = (T::one() - b1, T::one() - b2);
        let lr_t = T::of(
            self.lr * (1.0 - self.beta2.powi(self.step)).sqrt() / (1.0 - self.beta1.powi(self.step)),
        );
        // eps applied to the bias-corrected second moment
        let eps_hat = T::of(self.eps * (1.0 - self.beta2.powi(self.step)).sqrt());

        let g_iter = grads.layers.iter().flat_map(|l| l.w.iter().chain(&l.b));
        for (((p, g), m), v) in params
            .values_mut()
            .zip(g_iter)
            .zip(self.m.iter_mut())
            .zip(self.v.iter_mut())
        {
            *m = b1 * *m + one_b1 * *g;
            *v = b2 * *v + one_b2 * *g * *g;
            *p = *p - lr_t * *m / (v.sqrt() + eps_hat);
        }
    }
}
