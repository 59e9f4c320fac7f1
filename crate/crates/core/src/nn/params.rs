//! Named parameter storage and seeded initialization.

use std::collections::BTreeMap;

use ndarray::Array4;
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::nn::graph::{Grads, Graph};
use crate::nn::scalar::Scalar;

pub type ParamMap<F> = BTreeMap<String, Array4<F>>;

/// Trainable weights plus non-trainable buffers (batch-norm running stats).
#[derive(Debug, Clone, Default)]
pub struct ParamStore<F: Scalar> {
    pub weights: ParamMap<F>,
    pub buffers: ParamMap<F>,
}

impl<F: Scalar> ParamStore<F> {
    pub fn new() -> Self {
        ParamStore {
            weights: BTreeMap::new(),
            buffers: BTreeMap::new(),
        }
    }

    pub fn cast<T: Scalar>(&self) -> ParamStore<T> {
        let conv = |m: &ParamMap<F>| -> ParamMap<T> {
            m.iter()
                .map(|(k, v)| (k.clone(), v.mapv(|x| T::from_f64(x.to_f64()))))
                .collect()
        };
        ParamStore {
            weights: conv(&self.weights),
            buffers: conv(&self.buffers),
        }
    }

    pub fn all_finite(&self) -> bool {
        self.weights
            .values()
            .chain(self.buffers.values())
            .all(|a| a.iter().all(|v| v.is_finite()))
    }

    pub fn parameter_count(&self) -> usize {
        self.weights.values().map(|a| a.len()).sum()
    }
}

/// Kaiming-normal init for a conv weight `[Cout, Cin, kh, kw]`.
pub fn kaiming_conv<F: Scalar, R: Rng>(
    rng: &mut R,
    cout: usize,
    cin: usize,
    kh: usize,
    kw: usize,
    negative_slope: f64,
) -> Array4<F> {
    let fan_in = (cin * kh * kw) as f64;
    let gain = (2.0 / (1.0 + negative_slope * negative_slope)).sqrt();
    let std = gain / fan_in.sqrt();
    let normal = StandardNormal;
    Array4::from_shape_simple_fn((cout, cin, kh, kw), || {
        let z: f64 = normal.sample(rng);
        F::from_f64(z * std)
    })
}

pub fn zeros_bias<F: Scalar>(c: usize) -> Array4<F> {
    Array4::zeros((1, c, 1, 1))
}

pub fn ones_scale<F: Scalar>(c: usize) -> Array4<F> {
    Array4::from_elem((1, c, 1, 1), F::one())
}

/// Collect gradients of the graph's named leaves into a map. A parameter
/// bound several times (shared weights) accumulates the sum of all of its
/// bindings' gradients.
pub fn named_grads<F: Scalar>(graph: &Graph<F>, grads: &Grads<F>) -> ParamMap<F> {
    let mut out = ParamMap::new();
    for (name, id) in graph.named_leaves() {
        if let Some(g) = grads.get(*id) {
            match out.get_mut(name) {
                Some(existing) => *existing = &*existing + g,
                None => {
                    out.insert(name.clone(), g.clone());
                }
            }
        }
    }
    out
}
