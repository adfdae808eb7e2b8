//! First-order optimizers, registered by name.

use std::sync::OnceLock;

use crate::registry::Registry;

pub trait Optimizer: Send {
    /// Updates `params` in place from `grad`.
    fn step(&mut self, params: &mut [f64], grad: &[f64], lr: f64);
}

#[derive(Debug, Default)]
pub struct Sgd;

impl Optimizer for Sgd {
    fn step(&mut self, params: &mut [f64], grad: &[f64], lr: f64) {
        for (p, g) in params.iter_mut().zip(grad) {
            *p -= lr * g;
        }
    }
}

#[derive(Debug)]
pub struct Adam {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    m: Vec<f64>,
    v: Vec<f64>,
    t: i32,
}

impl Default for Adam {
    fn default() -> Self {
        Self {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            m: Vec::new(),
            v: Vec::new(),
            t: 0,
        }
    }
}

impl Optimizer for Adam {
    fn step(&mut self, params: &mut [f64], grad: &[f64], lr: f64) {
        if self.m.len() != params.len() {
            self.m = vec![0.0; params.len()];
            self.v = vec![0.0; params.len()];
            self.t = 0;
        }
        self.t += 1;
        let c1 = 1.0 - self.beta1.powi(self.t);
        let c2 = 1.0 - self.beta2.powi(self.t);
        for i in 0..params.len() {
            let g = grad[i];
            self.m[i] = self.beta1 * self.m[i] + (1.0 - self.beta1) * g;
            self.v[i] = self.beta2 * self.v[i] + (1.0 - self.beta2) * g * g;
            let m_hat = self.m[i] / c1;
            let v_hat = self.v[i] / c2;
            params[i] -= lr * m_hat / (v_hat.sqrt() + self.eps);
        }
    }
}

/// The optimizer registry: `sgd`, `adam`. Each `create` returns fresh state.
pub fn optimizers() -> &'static Registry<dyn Optimizer> {
    static REGISTRY: OnceLock<Registry<dyn Optimizer>> = OnceLock::new();
    REGISTRY.get_or_init(|| {
        let mut r: Registry<dyn Optimizer> = Registry::new("optimizer");
        r.register("sgd", || Box::new(Sgd))
            .register("adam", || Box::new(Adam::default()));
        r
    })
}
