//! Central finite-difference verification of analytic gradients.
//!
//! Rebuilds the same graph under coordinate perturbations in `f64` and compares
//! against the gradients produced by `backward`. Used by unit tests for every
//! op and by the acceptance suite for the full composite loss.

use ndarray::Array4;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::nn::graph::{Graph, NodeId};

#[derive(Debug, Clone, Copy)]
pub struct GradCheckReport {
    pub max_rel_err: f64,
    pub checked: usize,
}

/// Relative error with a small floor so zero-against-zero comparisons pass.
pub fn rel_err(a: f64, n: f64) -> f64 {
    (a - n).abs() / a.abs().max(n.abs()).max(1e-6)
}

/// Compare analytic gradients of `build`'s scalar output against central
/// finite differences.
///
/// `build` receives one gradient leaf per input array and must return the loss
/// node. At most `max_coords` coordinates per input are probed (seeded
/// subsample when the tensor is larger).
pub fn check_gradients(
    inputs: &[Array4<f64>],
    build: &dyn Fn(&mut Graph<f64>, &[NodeId]) -> NodeId,
    step: f64,
    max_coords: usize,
    seed: u64,
) -> GradCheckReport {
    let eval = |arrays: &[Array4<f64>]| -> f64 {
        let mut g = Graph::<f64>::new(true);
        let ids: Vec<NodeId> = arrays.iter().map(|a| g.leaf(a.clone())).collect();
        let loss = build(&mut g, &ids);
        g.scalar(loss)
    };

    // Analytic pass.
    let mut g = Graph::<f64>::new(true);
    let ids: Vec<NodeId> = inputs.iter().map(|a| g.leaf(a.clone())).collect();
    let loss = build(&mut g, &ids);
    let grads = g.backward(loss);

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut max_err = 0f64;
    let mut checked = 0usize;
    for (i, input) in inputs.iter().enumerate() {
        let analytic = grads
            .get(ids[i])
            .cloned()
            .unwrap_or_else(|| Array4::zeros(input.dim()));
        let len = input.len();
        let coords: Vec<usize> = if len <= max_coords {
            (0..len).collect()
        } else {
            (0..max_coords).map(|_| rng.random_range(0..len)).collect()
        };
        for flat in coords {
            let x0 = input.as_slice().expect("contiguous")[flat];
            let h = step * x0.abs().max(1.0);
            let mut plus = inputs.to_vec();
            plus[i].as_slice_mut().expect("contiguous")[flat] = x0 + h;
            let mut minus = inputs.to_vec();
            minus[i].as_slice_mut().expect("contiguous")[flat] = x0 - h;
            let numeric = (eval(&plus) - eval(&minus)) / (2.0 * h);
            let a = analytic.as_slice().expect("contiguous")[flat];
            max_err = max_err.max(rel_err(a, numeric));
            checked += 1;
        }
    }
    GradCheckReport {
        max_rel_err: max_err,
        checked,
    }
}

/// Deterministic pseudo-random array for tests, offset keeps streams distinct.
pub fn test_array(shape: (usize, usize, usize, usize), seed: u64) -> Array4<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Array4::from_shape_simple_fn(shape, || rng.random_range(-1.0..1.0))
}
