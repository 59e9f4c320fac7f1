//! Adaptive moment estimation over named parameter maps.

use ndarray::Array4;

use crate::nn::params::ParamMap;
use crate::nn::scalar::Scalar;

pub struct Adam<F: Scalar> {
    pub lr: F,
    pub beta1: F,
    pub beta2: F,
    pub eps: F,
    t: u64,
    m: ParamMap<F>,
    v: ParamMap<F>,
}

impl<F: Scalar> Adam<F> {
    pub fn new(lr: f64, beta1: f64, beta2: f64) -> Self {
        Adam {
            lr: F::from_f64(lr),
            beta1: F::from_f64(beta1),
            beta2: F::from_f64(beta2),
            eps: F::from_f64(1e-8),
            t: 0,
            m: ParamMap::new(),
            v: ParamMap::new(),
        }
    }

    /// One update step. Parameters without a gradient entry are left untouched.
    pub fn step(&mut self, weights: &mut ParamMap<F>, grads: &ParamMap<F>) {
        self.t += 1;
        let t = self.t as i32;
        let bc1 = F::one() - self.beta1.powi(t);
        let bc2 = F::one() - self.beta2.powi(t);
        for (name, w) in weights.iter_mut() {
            let Some(g) = grads.get(name) else { continue };
            let m = self
                .m
                .entry(name.clone())
                .or_insert_with(|| Array4::zeros(w.dim()));
            let v = self
                .v
                .entry(name.clone())
                .or_insert_with(|| Array4::zeros(w.dim()));
            ndarray::Zip::from(w)
                .and(m)
                .and(v)
                .and(g)
                .for_each(|w, m, v, &g| {
                    *m = self.beta1 * *m + (F::one() - self.beta1) * g;
                    *v = self.beta2 * *v + (F::one() - self.beta2) * g * g;
                    let mhat = *m / bc1;
                    let vhat = *v / bc2;
                    *w = *w - self.lr * mhat / (vhat.sqrt() + self.eps);
                });
        }
    }
}
