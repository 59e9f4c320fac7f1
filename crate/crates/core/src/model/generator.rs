//! Four-stage generator: five encoders, cosine-similarity refinement, adaptive
//! instance normalization, temporal attention, U-Net-style decoder and a fixed
//! Gaussian noise-suppression stage.

use ndarray::Array4;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::ModelCtx;
use crate::nn::graph::{Graph, NodeId};
use crate::nn::params::{kaiming_conv, ones_scale, zeros_bias, ParamStore};
use crate::nn::scalar::Scalar;
use crate::raster::gaussian_kernel_1d;

/// Leaky-ReLU slope used throughout the encoders.
pub const ENCODER_SLOPE: f64 = 0.2;
/// Norm guard of the cosine-similarity refinement.
pub const COSINE_EPS: f64 = 1e-8;
/// Variance guard of adaptive instance normalization.
pub const ADAIN_EPS: f64 = 1e-5;
/// Fixed smoothing sigma of the noise-suppression stage.
pub const SMOOTH_SIGMA: f64 = 1.0;

/// Channel counts of the five encoders: two 3-band index encoders followed by
/// three single-band LST encoders.
pub const ENCODER_INPUT_CHANNELS: [usize; 5] = [3, 3, 1, 1, 1];

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct GeneratorConfig {
    /// Pyramid levels; level 0 is full resolution, each further level halves.
    pub levels: usize,
    /// Feature channels per level; length must equal `levels`.
    pub channels: Vec<usize>,
    /// Residual blocks per level in encoders and decoder.
    pub res_blocks: usize,
    /// Training patch side on the fine grid.
    pub base_size: usize,
}

impl Default for GeneratorConfig {
    fn default() -> Self {
        GeneratorConfig {
            levels: 5,
            channels: vec![32, 64, 128, 192, 256],
            res_blocks: 2,
            base_size: 96,
        }
    }
}

impl GeneratorConfig {
    /// Desk-scale configuration used by the synthetic benchmarks.
    pub fn small() -> Self {
        GeneratorConfig {
            levels: 4,
            channels: vec![8, 12, 16, 24],
            res_blocks: 1,
            base_size: 96,
        }
    }

    /// Minimal configuration for gradient verification.
    pub fn tiny() -> Self {
        GeneratorConfig {
            levels: 3,
            channels: vec![3, 4, 5],
            res_blocks: 1,
            base_size: 12,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.levels < 2 {
            return Err(Error::invalid("generator needs at least 2 levels"));
        }
        if self.channels.len() != self.levels {
            return Err(Error::invalid(format!(
                "channels list has {} entries for {} levels",
                self.channels.len(),
                self.levels
            )));
        }
        let down = 1usize << (self.levels - 1);
        if self.base_size % down != 0 {
            return Err(Error::invalid(format!(
                "base size {} not divisible by 2^{}",
                self.base_size,
                self.levels - 1
            )));
        }
        if self.base_size % 3 != 0 {
            return Err(Error::invalid(
                "base size must be divisible by 3 for weak-supervision pooling",
            ));
        }
        if self.base_size / down < 1 {
            return Err(Error::invalid("base size too small for level count"));
        }
        Ok(())
    }

    pub fn level_size(&self, level: usize) -> usize {
        self.base_size >> level
    }
}

/// Normalized input patch group for one batch: everything lives on the fine
/// grid at `base_size`, mid-resolution members having been upsampled 3x.
#[derive(Debug, Clone)]
pub struct GeneratorInputs<F: Scalar> {
    pub fine_indices_t1: Array4<F>,
    pub mid_indices_t1: Array4<F>,
    pub mid_lst_t1: Array4<F>,
    pub coarse_lst_t1: Array4<F>,
    pub coarse_lst_t2: Array4<F>,
}

impl<F: Scalar> GeneratorInputs<F> {
    pub fn validate(&self, cfg: &GeneratorConfig) -> Result<()> {
        let s = cfg.base_size;
        let b = self.fine_indices_t1.dim().0;
        let expect = [
            ("fine_indices_t1", self.fine_indices_t1.dim(), (b, 3, s, s)),
            ("mid_indices_t1", self.mid_indices_t1.dim(), (b, 3, s, s)),
            ("mid_lst_t1", self.mid_lst_t1.dim(), (b, 1, s, s)),
            ("coarse_lst_t1", self.coarse_lst_t1.dim(), (b, 1, s, s)),
            ("coarse_lst_t2", self.coarse_lst_t2.dim(), (b, 1, s, s)),
        ];
        for (name, got, want) in expect {
            if got != want {
                return Err(Error::ShapeMismatch(format!(
                    "{name}: got {got:?}, expected {want:?}"
                )));
            }
        }
        Ok(())
    }
}

/// Initialize all generator parameters (five encoders, temporal attention,
/// decoder) with seeded Kaiming-normal weights.
pub fn init_generator_params<F: Scalar, R: Rng>(cfg: &GeneratorConfig, rng: &mut R) -> ParamStore<F> {
    let mut store = ParamStore::new();
    let ch = &cfg.channels;

    let conv = |store: &mut ParamStore<F>, rng: &mut R, name: String, cout, cin, k| {
        store
            .weights
            .insert(format!("{name}.w"), kaiming_conv(rng, cout, cin, k, k, ENCODER_SLOPE));
        store.weights.insert(format!("{name}.b"), zeros_bias(cout));
    };
    let bn = |store: &mut ParamStore<F>, name: String, c: usize| {
        store.weights.insert(format!("{name}.gamma"), ones_scale(c));
        store.weights.insert(format!("{name}.beta"), zeros_bias(c));
        store
            .buffers
            .insert(format!("{name}.running_mean"), zeros_bias(c));
        store
            .buffers
            .insert(format!("{name}.running_var"), ones_scale(c));
    };

    // Encoders.
    for (e, &in_ch) in ENCODER_INPUT_CHANNELS.iter().enumerate() {
        let enc = format!("enc{}", e + 1);
        for level in 0..cfg.levels {
            let cin = if level == 0 { in_ch } else { ch[level - 1] };
            conv(&mut store, rng, format!("{enc}.l{level}.conv"), ch[level], cin, 3);
            for r in 0..cfg.res_blocks {
                conv(
                    &mut store,
                    rng,
                    format!("{enc}.l{level}.res{r}.c1"),
                    ch[level],
                    ch[level],
                    3,
                );
                conv(
                    &mut store,
                    rng,
                    format!("{enc}.l{level}.res{r}.c2"),
                    ch[level],
                    ch[level],
                    3,
                );
            }
        }
    }

    // Temporal attention: one shared projection per level plus the mask conv.
    for level in 0..cfg.levels {
        conv(
            &mut store,
            rng,
            format!("att.l{level}.proj"),
            ch[level],
            ch[level],
            1,
        );
        bn(&mut store, format!("att.l{level}.proj.bn"), ch[level]);
        conv(&mut store, rng, format!("att.l{level}.mask"), 1, ch[level], 1);
        bn(&mut store, format!("att.l{level}.mask.bn"), 1);
    }

    // Decoder.
    let top = cfg.levels - 1;
    conv(
        &mut store,
        rng,
        "dec.bottom".to_string(),
        ch[top],
        2 * ch[top],
        3,
    );
    for level in (0..top).rev() {
        conv(
            &mut store,
            rng,
            format!("dec.l{level}.up"),
            ch[level],
            ch[level + 1],
            3,
        );
        conv(
            &mut store,
            rng,
            format!("dec.l{level}.fuse"),
            ch[level],
            2 * ch[level],
            3,
        );
        for r in 0..cfg.res_blocks {
            conv(
                &mut store,
                rng,
                format!("dec.l{level}.res{r}.c1"),
                ch[level],
                ch[level],
                3,
            );
            conv(
                &mut store,
                rng,
                format!("dec.l{level}.res{r}.c2"),
                ch[level],
                ch[level],
                3,
            );
        }
    }
    conv(&mut store, rng, "dec.head".to_string(), 1, ch[0], 3);
    store
}

fn res_block<F: Scalar>(
    ctx: &mut ModelCtx<'_, F>,
    prefix: &str,
    x: NodeId,
    leaky: bool,
) -> NodeId {
    let t = ctx.conv(x, &format!("{prefix}.c1"), 1, 1);
    let t = if leaky {
        ctx.graph.leaky_relu(t, F::from_f64(ENCODER_SLOPE))
    } else {
        ctx.graph.relu(t)
    };
    let t = ctx.conv(t, &format!("{prefix}.c2"), 1, 1);
    ctx.graph.add(x, t)
}

/// One encoder: strided-convolution downsampling plus residual blocks, no
/// normalization layers. Returns the `levels`-deep feature pyramid.
pub fn encode<F: Scalar>(
    ctx: &mut ModelCtx<'_, F>,
    cfg: &GeneratorConfig,
    encoder_id: usize,
    x: NodeId,
) -> Result<Vec<NodeId>> {
    if encoder_id == 0 || encoder_id > 5 {
        return Err(Error::invalid("encoder_id must be in 1..=5"));
    }
    let expect_ch = ENCODER_INPUT_CHANNELS[encoder_id - 1];
    let dim = ctx.graph.value(x).dim();
    if dim.1 != expect_ch {
        return Err(Error::ShapeMismatch(format!(
            "encoder {encoder_id} expects {expect_ch} input channels, got {}",
            dim.1
        )));
    }
    if dim.2 != cfg.base_size || dim.3 != cfg.base_size {
        return Err(Error::ShapeMismatch(format!(
            "encoder {encoder_id} expects {0}x{0} input, got {1}x{2}",
            cfg.base_size, dim.2, dim.3
        )));
    }
    let prefix = format!("enc{encoder_id}");
    let slope = F::from_f64(ENCODER_SLOPE);
    let mut pyramid = Vec::with_capacity(cfg.levels);
    let mut cur = x;
    for level in 0..cfg.levels {
        let stride = if level == 0 { 1 } else { 2 };
        let c = ctx.conv(cur, &format!("{prefix}.l{level}.conv"), stride, 1);
        let mut h = ctx.graph.leaky_relu(c, slope);
        for r in 0..cfg.res_blocks {
            h = res_block(ctx, &format!("{prefix}.l{level}.res{r}"), h, true);
        }
        pyramid.push(h);
        cur = h;
    }
    Ok(pyramid)
}

/// Per-pixel cosine similarity of two feature maps along the channel axis.
/// Zero-norm vectors yield 0 through an epsilon guard on each norm.
pub fn cosine_similarity_map<F: Scalar>(g: &mut Graph<F>, u: NodeId, v: NodeId) -> Result<NodeId> {
    let (du, dv) = (g.value(u).dim(), g.value(v).dim());
    if du != dv {
        return Err(Error::ShapeMismatch(format!(
            "cosine similarity inputs differ: {du:?} vs {dv:?}"
        )));
    }
    let eps = F::from_f64(COSINE_EPS);
    let tiny = F::from_f64(1e-16);
    let prod = g.mul(u, v);
    let dot = g.channel_sum(prod);
    let u2 = g.square(u);
    let su = g.channel_sum(u2);
    let su = g.add_const(su, tiny);
    let nu = g.sqrt(su);
    let nu = g.add_const(nu, eps);
    let v2 = g.square(v);
    let sv = g.channel_sum(v2);
    let sv = g.add_const(sv, tiny);
    let nv = g.sqrt(sv);
    let nv = g.add_const(nv, eps);
    let denom = g.mul(nu, nv);
    Ok(g.div(dot, denom))
}

/// Refine mid-resolution LST features by the cosine similarity between the two
/// index pyramids, broadcast across channels.
pub fn refine_features<F: Scalar>(
    g: &mut Graph<F>,
    f_mid: &[NodeId],
    l_mid: &[NodeId],
    l_fine: &[NodeId],
) -> Result<Vec<NodeId>> {
    if f_mid.len() != l_mid.len() || l_mid.len() != l_fine.len() {
        return Err(Error::ShapeMismatch(format!(
            "pyramid level counts differ: {} / {} / {}",
            f_mid.len(),
            l_mid.len(),
            l_fine.len()
        )));
    }
    let mut out = Vec::with_capacity(f_mid.len());
    for i in 0..f_mid.len() {
        let sim = cosine_similarity_map(g, l_mid[i], l_fine[i])?;
        out.push(g.mul(f_mid[i], sim));
    }
    Ok(out)
}

/// Adaptive instance normalization: per level and channel, shift the content
/// statistics onto the style statistics over the spatial dims.
pub fn adain<F: Scalar>(
    g: &mut Graph<F>,
    content: &[NodeId],
    style: &[NodeId],
) -> Result<Vec<NodeId>> {
    if content.len() != style.len() {
        return Err(Error::ShapeMismatch(format!(
            "adain level counts differ: {} vs {}",
            content.len(),
            style.len()
        )));
    }
    let eps = F::from_f64(ADAIN_EPS);
    let mut out = Vec::with_capacity(content.len());
    for (&c, &s) in content.iter().zip(style) {
        if g.value(c).dim() != g.value(s).dim() {
            return Err(Error::ShapeMismatch(format!(
                "adain level shapes differ: {:?} vs {:?}",
                g.value(c).dim(),
                g.value(s).dim()
            )));
        }
        let mu_c = g.spatial_mean(c);
        let cen = g.sub(c, mu_c);
        let cen2 = g.square(cen);
        let var_c = g.spatial_mean(cen2);
        let var_c = g.add_const(var_c, eps);
        let sig_c = g.sqrt(var_c);

        let mu_s = g.spatial_mean(s);
        let cen_s = g.sub(s, mu_s);
        let cen_s2 = g.square(cen_s);
        let var_s = g.spatial_mean(cen_s2);
        let var_s = g.add_const(var_s, eps);
        let sig_s = g.sqrt(var_s);

        let normed = g.div(cen, sig_c);
        let scaled = g.mul(normed, sig_s);
        out.push(g.add(scaled, mu_s));
    }
    Ok(out)
}

/// Temporal attention: project both coarse pyramids through a shared 1x1
/// convolution with batch normalization, derive a sigmoid mask from their
/// difference and blend the target-date coarse features with the normalized
/// spatial features. The mask keeps every output elementwise between its two
/// sources.
pub fn temporal_attention<F: Scalar>(
    ctx: &mut ModelCtx<'_, F>,
    f1_coarse: &[NodeId],
    f2_coarse: &[NodeId],
    f_norm: &[NodeId],
) -> Result<Vec<NodeId>> {
    if f1_coarse.len() != f2_coarse.len() || f2_coarse.len() != f_norm.len() {
        return Err(Error::ShapeMismatch(format!(
            "attention level counts differ: {} / {} / {}",
            f1_coarse.len(),
            f2_coarse.len(),
            f_norm.len()
        )));
    }
    let mut out = Vec::with_capacity(f_norm.len());
    for i in 0..f_norm.len() {
        let shapes = [
            ctx.graph.value(f1_coarse[i]).dim(),
            ctx.graph.value(f2_coarse[i]).dim(),
            ctx.graph.value(f_norm[i]).dim(),
        ];
        if shapes[0] != shapes[1] || shapes[1] != shapes[2] {
            return Err(Error::ShapeMismatch(format!(
                "attention level {i} shapes differ: {shapes:?}"
            )));
        }
        let p1 = ctx.conv(f1_coarse[i], &format!("att.l{i}.proj"), 1, 0);
        let p1 = ctx.bn(p1, &format!("att.l{i}.proj.bn"));
        let p2 = ctx.conv(f2_coarse[i], &format!("att.l{i}.proj"), 1, 0);
        let p2 = ctx.bn(p2, &format!("att.l{i}.proj.bn"));
        let delta = ctx.graph.sub(p1, p2);
        let m = ctx.conv(delta, &format!("att.l{i}.mask"), 1, 0);
        let m = ctx.bn(m, &format!("att.l{i}.mask.bn"));
        let theta = ctx.graph.sigmoid(m);
        let neg = ctx.graph.mul_const(theta, F::from_f64(-1.0));
        let one_minus = ctx.graph.add_const(neg, F::one());
        let a = ctx.graph.mul(f2_coarse[i], theta);
        let b = ctx.graph.mul(f_norm[i], one_minus);
        out.push(ctx.graph.add(a, b));
    }
    Ok(out)
}

/// U-Net-style decoder: deepest fused and coarse features concatenated, then
/// upsampling with skip connections from the fused pyramid at every level.
/// Returns the unsmoothed single-channel map at full patch resolution.
pub fn decode<F: Scalar>(
    ctx: &mut ModelCtx<'_, F>,
    cfg: &GeneratorConfig,
    fused: &[NodeId],
    coarse_t2: &[NodeId],
) -> Result<NodeId> {
    if fused.len() != cfg.levels || coarse_t2.len() != cfg.levels {
        return Err(Error::ShapeMismatch(format!(
            "decoder expects {} levels, got {} / {}",
            cfg.levels,
            fused.len(),
            coarse_t2.len()
        )));
    }
    let top = cfg.levels - 1;
    let cat = ctx.graph.concat(fused[top], coarse_t2[top]);
    let x = ctx.conv(cat, "dec.bottom", 1, 1);
    let mut x = ctx.graph.relu(x);
    for level in (0..top).rev() {
        let up = ctx.graph.upsample2(x);
        let c = ctx.conv(up, &format!("dec.l{level}.up"), 1, 1);
        let c = ctx.graph.relu(c);
        let cat = ctx.graph.concat(c, fused[level]);
        let f = ctx.conv(cat, &format!("dec.l{level}.fuse"), 1, 1);
        let mut h = ctx.graph.relu(f);
        for r in 0..cfg.res_blocks {
            h = res_block(ctx, &format!("dec.l{level}.res{r}"), h, false);
        }
        x = h;
    }
    Ok(ctx.conv(x, "dec.head", 1, 1))
}

/// One inference forward pass: compose the full generator on a normalized
/// patch group and denormalize the smoothed output back to Kelvin.
pub fn generator_forward(
    store: &ParamStore<f32>,
    cfg: &GeneratorConfig,
    inputs: &GeneratorInputs<f32>,
    range: &crate::dataset::NormRange,
) -> Result<Array4<f32>> {
    range.validate()?;
    let mut graph = Graph::new(false);
    let mut ctx = ModelCtx::new(&mut graph, store, false);
    let out = generator_graph(&mut ctx, cfg, inputs)?;
    let normalized = graph.value(out);
    Ok(normalized.mapv(|v| range.denormalize(v as f64) as f32))
}

/// Full generator graph on normalized inputs: five encoders, refinement,
/// adaptive instance normalization, temporal attention, decoding and Gaussian
/// noise suppression. Returns the normalized fine-LST node `[B,1,S,S]`.
pub fn generator_graph<F: Scalar>(
    ctx: &mut ModelCtx<'_, F>,
    cfg: &GeneratorConfig,
    inputs: &GeneratorInputs<F>,
) -> Result<NodeId> {
    cfg.validate()?;
    inputs.validate(cfg)?;
    let fine_idx = ctx.graph.input(inputs.fine_indices_t1.clone());
    let mid_idx = ctx.graph.input(inputs.mid_indices_t1.clone());
    let mid_lst = ctx.graph.input(inputs.mid_lst_t1.clone());
    let coarse1 = ctx.graph.input(inputs.coarse_lst_t1.clone());
    let coarse2 = ctx.graph.input(inputs.coarse_lst_t2.clone());

    let l_fine = encode(ctx, cfg, 1, fine_idx)?;
    let l_mid = encode(ctx, cfg, 2, mid_idx)?;
    let f_mid = encode(ctx, cfg, 3, mid_lst)?;
    let f1_coarse = encode(ctx, cfg, 4, coarse1)?;
    let f2_coarse = encode(ctx, cfg, 5, coarse2)?;

    let refined = refine_features(ctx.graph, &f_mid, &l_mid, &l_fine)?;
    let normed = adain(ctx.graph, &refined, &f2_coarse)?;
    let fused = temporal_attention(ctx, &f1_coarse, &f2_coarse, &normed)?;
    let raw = decode(ctx, cfg, &fused, &f2_coarse)?;

    let radius = (3.0 * SMOOTH_SIGMA).ceil() as usize;
    let kernel: Vec<F> = gaussian_kernel_1d(SMOOTH_SIGMA, radius)
        .into_iter()
        .map(F::from_f64)
        .collect();
    Ok(ctx.graph.depthwise_fixed(raw, kernel))
}
