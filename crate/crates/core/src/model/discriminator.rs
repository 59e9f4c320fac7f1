//! Conditional patch-level critic: the mid-resolution LST patch is
//! concatenated with the coarse target-date condition and passed through a
//! stack of strided convolutions to a raw score map, each score judging one
//! receptive-field patch. Scores are unbounded reals consumed by the
//! least-squares objective; a sigmoid probability view exists for reporting
//! only.

use ndarray::Array4;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::ModelCtx;
use crate::nn::graph::NodeId;
use crate::nn::params::{kaiming_conv, ones_scale, zeros_bias, ParamStore};
use crate::nn::scalar::Scalar;

pub const DISC_SLOPE: f64 = 0.2;

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct DiscriminatorConfig {
    /// Channels per convolution level.
    pub channels: Vec<usize>,
    /// Stride per level; the final score convolution always has stride 1.
    pub strides: Vec<usize>,
}

impl Default for DiscriminatorConfig {
    fn default() -> Self {
        DiscriminatorConfig {
            channels: vec![64, 128, 256, 512],
            strides: vec![2, 2, 2, 1],
        }
    }
}

impl DiscriminatorConfig {
    pub fn small() -> Self {
        DiscriminatorConfig {
            channels: vec![16, 32, 64],
            strides: vec![2, 2, 1],
        }
    }

    pub fn tiny() -> Self {
        DiscriminatorConfig {
            channels: vec![4, 6],
            strides: vec![2, 1],
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.channels.is_empty() || self.channels.len() != self.strides.len() {
            return Err(Error::invalid(
                "discriminator channels/strides must be equal-length and non-empty",
            ));
        }
        Ok(())
    }

    /// Spatial side of the score map for a square input.
    pub fn score_map_side(&self, input: usize) -> usize {
        let mut s = input;
        for stride in &self.strides {
            s = (s + 2 - 4) / stride + 1;
        }
        (s + 2 - 4) + 1
    }
}

pub fn init_discriminator_params<F: Scalar, R: Rng>(
    cfg: &DiscriminatorConfig,
    rng: &mut R,
) -> ParamStore<F> {
    let mut store = ParamStore::new();
    let mut cin = 2usize; // LST patch + coarse condition
    for (k, &cout) in cfg.channels.iter().enumerate() {
        store.weights.insert(
            format!("d.l{k}.conv.w"),
            kaiming_conv(rng, cout, cin, 4, 4, DISC_SLOPE),
        );
        store
            .weights
            .insert(format!("d.l{k}.conv.b"), zeros_bias(cout));
        if k > 0 {
            store
                .weights
                .insert(format!("d.l{k}.bn.gamma"), ones_scale(cout));
            store
                .weights
                .insert(format!("d.l{k}.bn.beta"), zeros_bias(cout));
            store
                .buffers
                .insert(format!("d.l{k}.bn.running_mean"), zeros_bias(cout));
            store
                .buffers
                .insert(format!("d.l{k}.bn.running_var"), ones_scale(cout));
        }
        cin = cout;
    }
    store
        .weights
        .insert("d.head.w".to_string(), kaiming_conv(rng, 1, cin, 4, 4, DISC_SLOPE));
    store.weights.insert("d.head.b".to_string(), zeros_bias(1));
    store
}

/// Build the discriminator graph on co-located normalized patches. Returns the
/// raw score map node.
pub fn discriminate_graph<F: Scalar>(
    ctx: &mut ModelCtx<'_, F>,
    cfg: &DiscriminatorConfig,
    lst: NodeId,
    condition: NodeId,
) -> Result<NodeId> {
    cfg.validate()?;
    let dl = ctx.graph.value(lst).dim();
    let dc = ctx.graph.value(condition).dim();
    if dl != dc {
        return Err(Error::ShapeMismatch(format!(
            "discriminator inputs differ: {dl:?} vs {dc:?}"
        )));
    }
    if dl.1 != 1 {
        return Err(Error::ShapeMismatch(format!(
            "discriminator expects single-channel inputs, got {} channels",
            dl.1
        )));
    }
    let slope = F::from_f64(DISC_SLOPE);
    let mut x = ctx.graph.concat(lst, condition);
    for (k, stride) in cfg.strides.iter().enumerate() {
        let c = ctx.conv(x, &format!("d.l{k}.conv"), *stride, 1);
        let c = if k > 0 { ctx.bn(c, &format!("d.l{k}.bn")) } else { c };
        x = ctx.graph.leaky_relu(c, slope);
    }
    Ok(ctx.conv(x, "d.head", 1, 1))
}

/// Reporting-only probability view of a raw score map.
pub fn score_probabilities<F: Scalar>(scores: &Array4<F>) -> Array4<F> {
    scores.mapv(|v| F::one() / (F::one() + (-v).exp()))
}
