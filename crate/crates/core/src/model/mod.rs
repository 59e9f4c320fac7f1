//! Generator and discriminator graph builders plus checkpoint I/O.

pub mod checkpoint;
pub mod discriminator;
pub mod generator;

use ndarray::{Array1, Array4};

use crate::nn::graph::{Graph, NodeId};
use crate::nn::params::ParamStore;
use crate::nn::scalar::Scalar;
use crate::nn::PadMode;

/// Batch-norm running-stat momentum (fraction of the new batch statistic).
pub const BN_MOMENTUM: f64 = 0.1;
pub const BN_EPS: f64 = 1e-5;

/// Binds a parameter store into a graph, either as trainable leaves or frozen
/// constants, and collects batch-norm statistics for buffer updates.
pub struct ModelCtx<'g, F: Scalar> {
    pub graph: &'g mut Graph<F>,
    pub store: &'g ParamStore<F>,
    pub trainable: bool,
    /// `(bn name, batch mean, batch var)` recorded during training forwards.
    pub bn_updates: Vec<(String, Array1<F>, Array1<F>)>,
}

impl<'g, F: Scalar> ModelCtx<'g, F> {
    pub fn new(graph: &'g mut Graph<F>, store: &'g ParamStore<F>, trainable: bool) -> Self {
        ModelCtx {
            graph,
            store,
            trainable,
            bn_updates: Vec::new(),
        }
    }

    /// Bind a named weight.
    pub fn weight(&mut self, name: &str) -> NodeId {
        let value = self
            .store
            .weights
            .get(name)
            .unwrap_or_else(|| panic!("missing parameter `{name}`"))
            .clone();
        if self.trainable {
            self.graph.param(name, value)
        } else {
            self.graph.input(value)
        }
    }

    /// Convolution layer with bias.
    pub fn conv(&mut self, x: NodeId, name: &str, stride: usize, pad: usize) -> NodeId {
        let w = self.weight(&format!("{name}.w"));
        let b = self.weight(&format!("{name}.b"));
        self.graph.conv2d(x, w, Some(b), stride, pad, PadMode::Zero)
    }

    /// Batch normalization; picks batch or running statistics from the graph
    /// mode and records batch stats for the trainer.
    pub fn bn(&mut self, x: NodeId, name: &str) -> NodeId {
        let gamma = self.weight(&format!("{name}.gamma"));
        let beta = self.weight(&format!("{name}.beta"));
        let to1 = |a: &Array4<F>| -> Array1<F> {
            Array1::from_iter(a.iter().copied())
        };
        let rm = to1(
            self.store
                .buffers
                .get(&format!("{name}.running_mean"))
                .unwrap_or_else(|| panic!("missing buffer `{name}.running_mean`")),
        );
        let rv = to1(
            self.store
                .buffers
                .get(&format!("{name}.running_var"))
                .unwrap_or_else(|| panic!("missing buffer `{name}.running_var`")),
        );
        let running = if self.graph.training() {
            None
        } else {
            Some((&rm, &rv))
        };
        let (y, stats) = self
            .graph
            .batch_norm(x, gamma, beta, running, F::from_f64(BN_EPS));
        if let Some((m, v)) = stats {
            self.bn_updates.push((name.to_string(), m, v));
        }
        y
    }
}

/// Fold collected batch statistics into running buffers.
pub fn apply_bn_updates<F: Scalar>(
    store: &mut ParamStore<F>,
    updates: &[(String, Array1<F>, Array1<F>)],
) {
    let momentum = F::from_f64(BN_MOMENTUM);
    let keep = F::one() - momentum;
    for (name, mean, var) in updates {
        for (suffix, stat) in [("running_mean", mean), ("running_var", var)] {
            let key = format!("{name}.{suffix}");
            let buf = store
                .buffers
                .get_mut(&key)
                .unwrap_or_else(|| panic!("missing buffer `{key}`"));
            for (b, s) in buf.iter_mut().zip(stat.iter()) {
                *b = keep * *b + momentum * *s;
            }
        }
    }
}
