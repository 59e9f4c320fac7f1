//! Weakly-supervised adversarial training: the generated fine map enters the
//! objective only through its 3x3 block average, compared against the
//! mid-resolution reference under a least-squares adversarial game plus
//! content / spectrum / vision terms.

pub mod msssim;

use std::path::{Path, PathBuf};

use ndarray::{Array3, Array4, Axis};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::dataset::patches::{upsample3, PatchSet};
use crate::dataset::NormRange;
use crate::error::{Error, Result};
use crate::model::discriminator::{
    discriminate_graph, init_discriminator_params, DiscriminatorConfig,
};
use crate::model::generator::{
    generator_graph, init_generator_params, GeneratorConfig, GeneratorInputs,
};
use crate::model::{apply_bn_updates, checkpoint, ModelCtx};
use crate::nn::graph::{Graph, NodeId};
use crate::nn::params::{named_grads, ParamStore};
use crate::nn::scalar::Scalar;
use crate::nn::Adam;
use crate::training::msssim::ms_ssim_graph;

/// Norm guard of the spectrum loss.
pub const SPECTRUM_EPS: f64 = 1e-8;
/// Dynamic range of normalized LST (values live in `[-1, 1]`).
pub const NORMALIZED_RANGE: f64 = 2.0;

#[derive(Debug, Clone, Copy, Serialize, Deserialize, PartialEq)]
pub struct LossWeights {
    pub alpha: f64,
    pub beta: f64,
    pub gamma: f64,
    pub delta: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        LossWeights {
            alpha: 1.0,
            beta: 100.0,
            gamma: 1.0,
            delta: 1.0,
        }
    }
}

impl LossWeights {
    pub fn validate(&self) -> Result<()> {
        let all = [self.alpha, self.beta, self.gamma, self.delta];
        if all.iter().any(|w| *w < 0.0 || !w.is_finite()) {
            return Err(Error::invalid("loss weights must be non-negative and finite"));
        }
        if all.iter().all(|w| *w == 0.0) {
            return Err(Error::invalid("at least one loss weight must be positive"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub batch_size: usize,
    pub beta1: f64,
    pub beta2: f64,
    pub steps: usize,
    pub seed: u64,
    /// Save a checkpoint every this many steps (0 = only the final one).
    pub checkpoint_every: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            learning_rate: 2e-4,
            batch_size: 32,
            beta1: 0.5,
            beta2: 0.999,
            steps: 2000,
            seed: 7,
            checkpoint_every: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0) {
            return Err(Error::invalid("learning rate must be positive"));
        }
        if self.batch_size == 0 {
            return Err(Error::invalid("batch size must be at least 1"));
        }
        if self.steps == 0 {
            return Err(Error::invalid("step count must be positive"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, Serialize)]
pub struct LossRecord {
    pub step: usize,
    pub loss_g: f64,
    pub loss_d: f64,
    pub l_gan: f64,
    pub l_content: f64,
    pub l_spectrum: f64,
    pub l_vision: f64,
}

#[derive(Debug, Clone, Default)]
pub struct LossTrace {
    records: Vec<LossRecord>,
}

impl LossTrace {
    pub fn push(&mut self, record: LossRecord) -> Result<()> {
        let values = [
            record.loss_g,
            record.loss_d,
            record.l_gan,
            record.l_content,
            record.l_spectrum,
            record.l_vision,
        ];
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFiniteLoss {
                step: record.step,
                detail: format!("{record:?}"),
            });
        }
        if let Some(last) = self.records.last() {
            if record.step <= last.step {
                return Err(Error::invalid("loss trace steps must increase"));
            }
        }
        self.records.push(record);
        Ok(())
    }

    pub fn records(&self) -> &[LossRecord] {
        &self.records
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("step,loss_G,loss_D,l_gan,l_content,l_spectrum,l_vision\n");
        for r in &self.records {
            out.push_str(&format!(
                "{},{},{},{},{},{},{}\n",
                r.step, r.loss_g, r.loss_d, r.l_gan, r.l_content, r.l_spectrum, r.l_vision
            ));
        }
        out
    }

    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path.as_ref(), self.to_csv()).map_err(Error::Io)
    }
}

/// Non-overlapping 3x3 block means of a `[B,1,H,W]` node; gradients distribute
/// 1/9 to each contributor.
pub fn weak_supervision_pool<F: Scalar>(g: &mut Graph<F>, x: NodeId) -> Result<NodeId> {
    let (_, _, h, w) = g.value(x).dim();
    if h % 3 != 0 || w % 3 != 0 {
        return Err(Error::NotDivisible {
            width: w,
            height: h,
            factor: 3,
        });
    }
    Ok(g.avg_pool(x, 3))
}

/// Least-squares critic objective: `0.5 mean(fake^2) + 0.5 mean((real-1)^2)`.
pub fn discriminator_loss<F: Scalar>(
    g: &mut Graph<F>,
    real_scores: NodeId,
    fake_scores: NodeId,
) -> Result<NodeId> {
    if g.value(real_scores).dim() != g.value(fake_scores).dim() {
        return Err(Error::ShapeMismatch(
            "score maps must share one shape".into(),
        ));
    }
    let f2 = g.square(fake_scores);
    let mf = g.mean_all(f2);
    let rm = g.add_const(real_scores, F::from_f64(-1.0));
    let r2 = g.square(rm);
    let mr = g.mean_all(r2);
    let sum = g.add(mf, mr);
    Ok(g.mul_const(sum, F::from_f64(0.5)))
}

#[derive(Debug, Clone, Copy)]
pub struct GenLossValues {
    pub total: f64,
    pub gan: f64,
    pub content: f64,
    pub spectrum: f64,
    pub vision: f64,
}

pub struct GenLoss {
    pub total: NodeId,
    pub values: GenLossValues,
}

/// Composite generator objective on pooled output vs the mid reference:
/// `alpha * mean((fake-1)^2) + beta * L1 + gamma * (1 - cos) +
/// delta * (1 - MS-SSIM)`. Zero-weighted terms are evaluated for the breakdown
/// but never enter the total, so they contribute exactly zero gradient.
pub fn generator_loss<F: Scalar>(
    g: &mut Graph<F>,
    fake_scores: NodeId,
    gen_pooled: NodeId,
    ref_mid: NodeId,
    w: &LossWeights,
) -> Result<GenLoss> {
    w.validate()?;
    if g.value(gen_pooled).dim() != g.value(ref_mid).dim() {
        return Err(Error::ShapeMismatch(
            "pooled output and reference must be co-located".into(),
        ));
    }

    // Adversarial term.
    let fm1 = g.add_const(fake_scores, F::from_f64(-1.0));
    let f2 = g.square(fm1);
    let gan = g.mean_all(f2);

    // Content term: mean absolute difference.
    let diff = g.sub(gen_pooled, ref_mid);
    let adiff = g.abs(diff);
    let content = g.mean_all(adiff);

    // Spectrum term: one minus the per-sample cosine similarity, averaged.
    let prod = g.mul(gen_pooled, ref_mid);
    let dot = g.sample_sum(prod);
    let g2 = g.square(gen_pooled);
    let sg = g.sample_sum(g2);
    let sg = g.add_const(sg, F::from_f64(1e-16));
    let ng = g.sqrt(sg);
    let r2 = g.square(ref_mid);
    let sr = g.sample_sum(r2);
    let sr = g.add_const(sr, F::from_f64(1e-16));
    let nr = g.sqrt(sr);
    let min_norm = g
        .value(ng)
        .iter()
        .chain(g.value(nr).iter())
        .fold(f64::INFINITY, |acc, v| acc.min(Scalar::to_f64(*v)));
    if min_norm < SPECTRUM_EPS * 10.0 {
        log::warn!("spectrum loss hit a near-zero patch norm ({min_norm:.3e}); epsilon guard active");
    }
    let ng = g.add_const(ng, F::from_f64(SPECTRUM_EPS));
    let nr = g.add_const(nr, F::from_f64(SPECTRUM_EPS));
    let denom = g.mul(ng, nr);
    let cos = g.div(dot, denom);
    let mean_cos = g.mean_all(cos);
    let neg = g.mul_const(mean_cos, F::from_f64(-1.0));
    let spectrum = g.add_const(neg, F::one());

    // Vision term: one minus MS-SSIM.
    let ms = ms_ssim_graph(g, gen_pooled, ref_mid, NORMALIZED_RANGE);
    let msn = g.mul_const(ms, F::from_f64(-1.0));
    let vision = g.add_const(msn, F::one());

    let mut total: Option<NodeId> = None;
    for (weight, term) in [
        (w.alpha, gan),
        (w.beta, content),
        (w.gamma, spectrum),
        (w.delta, vision),
    ] {
        if weight == 0.0 {
            continue;
        }
        let scaled = g.mul_const(term, F::from_f64(weight));
        total = Some(match total {
            None => scaled,
            Some(t) => g.add(t, scaled),
        });
    }
    let total = total.expect("at least one weight positive");
    let values = GenLossValues {
        total: g.scalar(total).to_f64(),
        gan: g.scalar(gan).to_f64(),
        content: g.scalar(content).to_f64(),
        spectrum: g.scalar(spectrum).to_f64(),
        vision: g.scalar(vision).to_f64(),
    };
    Ok(GenLoss { total, values })
}

// ---------------------------------------------------------------------------
// Input preparation
// ---------------------------------------------------------------------------

/// Patch arrays lifted onto the fine grid and ready for batching: mid members
/// upsampled 3x, the discriminator condition pooled back to the mid grid.
#[derive(Debug, Clone)]
pub struct PreparedPatches {
    pub fine_indices: Array4<f32>,
    pub mid_indices_up: Array4<f32>,
    pub mid_lst_up: Array4<f32>,
    pub coarse_t1: Array4<f32>,
    pub coarse_t2: Array4<f32>,
    /// Coarse target-date LST on the mid grid (discriminator condition).
    pub condition_mid: Array4<f32>,
    pub ref_mid: Option<Array4<f32>>,
    pub normalization: NormRange,
}

impl PreparedPatches {
    pub fn len(&self) -> usize {
        self.fine_indices.dim().0
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

fn upsample_batch3(x: &Array4<f32>) -> Array4<f32> {
    let (p, c, h, w) = x.dim();
    let mut out = Array4::zeros((p, c, h * 3, w * 3));
    for k in 0..p {
        let up = upsample3(&x.index_axis(Axis(0), k).to_owned());
        out.index_axis_mut(Axis(0), k).assign(&up);
    }
    out
}

fn pool_batch3(x: &Array4<f32>) -> Array4<f32> {
    let (p, c, h, w) = x.dim();
    let (ho, wo) = (h / 3, w / 3);
    let mut out = Array4::zeros((p, c, ho, wo));
    for k in 0..p {
        for ch in 0..c {
            for i in 0..ho {
                for j in 0..wo {
                    let mut acc = 0f64;
                    for di in 0..3 {
                        for dj in 0..3 {
                            acc += x[(k, ch, i * 3 + di, j * 3 + dj)] as f64;
                        }
                    }
                    out[(k, ch, i, j)] = (acc / 9.0) as f32;
                }
            }
        }
    }
    out
}

pub fn prepare_inputs(patches: &PatchSet) -> Result<PreparedPatches> {
    if patches.is_empty() {
        return Err(Error::invalid("patch set is empty"));
    }
    Ok(PreparedPatches {
        fine_indices: patches.t1_indices_fine.clone(),
        mid_indices_up: upsample_batch3(&patches.t1_indices_mid),
        mid_lst_up: upsample_batch3(&patches.t1_lst_mid),
        coarse_t1: patches.t1_lst_coarse.clone(),
        coarse_t2: patches.t2_lst_coarse.clone(),
        condition_mid: pool_batch3(&patches.t2_lst_coarse),
        ref_mid: patches.t2_lst_mid.clone(),
        normalization: patches.normalization,
    })
}

fn select_rows(x: &Array4<f32>, rows: &[usize]) -> Array4<f32> {
    x.select(Axis(0), rows)
}

/// Gather one batch as generator inputs plus condition / reference.
pub fn batch_inputs(
    prep: &PreparedPatches,
    rows: &[usize],
) -> (GeneratorInputs<f32>, Array4<f32>, Option<Array4<f32>>) {
    let inputs = GeneratorInputs {
        fine_indices_t1: select_rows(&prep.fine_indices, rows),
        mid_indices_t1: select_rows(&prep.mid_indices_up, rows),
        mid_lst_t1: select_rows(&prep.mid_lst_up, rows),
        coarse_lst_t1: select_rows(&prep.coarse_t1, rows),
        coarse_lst_t2: select_rows(&prep.coarse_t2, rows),
    };
    let cond = select_rows(&prep.condition_mid, rows);
    let reference = prep.ref_mid.as_ref().map(|r| select_rows(r, rows));
    (inputs, cond, reference)
}

// ---------------------------------------------------------------------------
// Training loop
// ---------------------------------------------------------------------------

pub struct TrainOutput {
    pub generator: ParamStore<f32>,
    pub discriminator: ParamStore<f32>,
    pub trace: LossTrace,
    pub checkpoints: Vec<PathBuf>,
}

/// Alternating least-squares adversarial training: one discriminator step and
/// one generator step per batch, adaptive-moment updates, fully seeded.
pub fn train(
    patches: &PatchSet,
    gcfg: &GeneratorConfig,
    dcfg: &DiscriminatorConfig,
    tcfg: &TrainConfig,
    weights: &LossWeights,
    out_dir: Option<&Path>,
) -> Result<TrainOutput> {
    gcfg.validate()?;
    dcfg.validate()?;
    tcfg.validate()?;
    weights.validate()?;
    if patches.is_empty() {
        return Err(Error::invalid("cannot train on an empty patch set"));
    }
    if patches.fine_size != gcfg.base_size {
        return Err(Error::invalid(format!(
            "patch size {} does not match generator base size {}",
            patches.fine_size, gcfg.base_size
        )));
    }
    let prep = prepare_inputs(patches)?;
    if prep.ref_mid.is_none() {
        return Err(Error::invalid(
            "training requires target-date mid-resolution LST references",
        ));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(tcfg.seed);
    let mut gen_store: ParamStore<f32> = init_generator_params(gcfg, &mut rng);
    let mut disc_store: ParamStore<f32> = init_discriminator_params(dcfg, &mut rng);
    let mut adam_g = Adam::<f32>::new(tcfg.learning_rate, tcfg.beta1, tcfg.beta2);
    let mut adam_d = Adam::<f32>::new(tcfg.learning_rate, tcfg.beta1, tcfg.beta2);

    let n = prep.len();
    let mut order: Vec<usize> = (0..n).collect();
    let mut trace = LossTrace::default();
    let mut checkpoints = Vec::new();
    if let Some(dir) = out_dir {
        std::fs::create_dir_all(dir)?;
    }

    let mut step = 0usize;
    'steps: loop {
        order.shuffle(&mut rng);
        let mut cursor = 0usize;
        while cursor < n {
            let end = (cursor + tcfg.batch_size).min(n);
            let rows = &order[cursor..end];
            cursor = end;
            if rows.len() < 2 && n >= 2 {
                continue; // avoid degenerate batch statistics
            }
            step += 1;

            let (inputs, cond, reference) = batch_inputs(&prep, rows);
            let reference = reference.expect("checked above");

            match train_step(
                &inputs,
                &cond,
                &reference,
                gcfg,
                dcfg,
                weights,
                &mut gen_store,
                &mut disc_store,
                &mut adam_g,
                &mut adam_d,
            ) {
                Ok((loss_d, gen_values)) => {
                    trace.push(LossRecord {
                        step,
                        loss_g: gen_values.total,
                        loss_d,
                        l_gan: gen_values.gan,
                        l_content: gen_values.content,
                        l_spectrum: gen_values.spectrum,
                        l_vision: gen_values.vision,
                    })?;
                }
                Err(e) => {
                    if let Some(dir) = out_dir {
                        snapshot_batch(dir, step, &inputs, &cond, &reference)?;
                    }
                    return Err(match e {
                        Error::NonFiniteLoss { detail, .. } => Error::NonFiniteLoss {
                            step,
                            detail,
                        },
                        other => other,
                    });
                }
            }

            if let Some(dir) = out_dir {
                if tcfg.checkpoint_every > 0 && step % tcfg.checkpoint_every == 0 {
                    let path = dir.join(format!("checkpoint_{step:06}.ckpt"));
                    checkpoint::save(
                        &path,
                        gcfg,
                        Some(dcfg),
                        &prep.normalization,
                        step,
                        &gen_store,
                        Some(&disc_store),
                    )?;
                    checkpoints.push(path);
                }
            }
            if step >= tcfg.steps {
                break 'steps;
            }
        }
    }

    if let Some(dir) = out_dir {
        let path = dir.join("model.ckpt");
        checkpoint::save(
            &path,
            gcfg,
            Some(dcfg),
            &prep.normalization,
            step,
            &gen_store,
            Some(&disc_store),
        )?;
        checkpoints.push(path);
    }

    Ok(TrainOutput {
        generator: gen_store,
        discriminator: disc_store,
        trace,
        checkpoints,
    })
}

#[allow(clippy::too_many_arguments)]
fn train_step(
    inputs: &GeneratorInputs<f32>,
    cond: &Array4<f32>,
    reference: &Array4<f32>,
    gcfg: &GeneratorConfig,
    dcfg: &DiscriminatorConfig,
    weights: &LossWeights,
    gen_store: &mut ParamStore<f32>,
    disc_store: &mut ParamStore<f32>,
    adam_g: &mut Adam<f32>,
    adam_d: &mut Adam<f32>,
) -> Result<(f64, GenLossValues)> {
    let mut graph = Graph::<f32>::new(true);

    // Generator forward (trainable).
    let (fake_fine, gen_bn_updates) = {
        let mut ctx = ModelCtx::new(&mut graph, gen_store, true);
        let out = generator_graph(&mut ctx, gcfg, inputs)?;
        (out, ctx.bn_updates)
    };
    let fake_pooled = weak_supervision_pool(&mut graph, fake_fine)?;

    let cond_node = graph.input(cond.clone());
    let real_node = graph.input(reference.clone());

    // Discriminator phase on detached fake.
    let fake_detached = {
        let v = graph.value(fake_pooled).clone();
        graph.input(v)
    };
    let (d_real, d_fake_det, disc_bn_updates) = {
        let mut ctx = ModelCtx::new(&mut graph, disc_store, true);
        let r = discriminate_graph(&mut ctx, dcfg, real_node, cond_node)?;
        let f = discriminate_graph(&mut ctx, dcfg, fake_detached, cond_node)?;
        (r, f, ctx.bn_updates)
    };
    let loss_d = discriminator_loss(&mut graph, d_real, d_fake_det)?;
    let loss_d_value = graph.scalar(loss_d) as f64;
    if !loss_d_value.is_finite() {
        return Err(Error::NonFiniteLoss {
            step: 0,
            detail: format!("discriminator loss {loss_d_value}"),
        });
    }
    let d_grads = named_grads(&graph, &graph.backward(loss_d));
    adam_d.step(&mut disc_store.weights, &d_grads);
    apply_bn_updates(disc_store, &disc_bn_updates);

    // Generator phase against the updated critic (frozen parameters, batch
    // statistics still active).
    let (d_fake, disc_bn_updates2) = {
        let mut ctx = ModelCtx::new(&mut graph, disc_store, false);
        let f = discriminate_graph(&mut ctx, dcfg, fake_pooled, cond_node)?;
        (f, ctx.bn_updates)
    };
    let gen_loss = generator_loss(&mut graph, d_fake, fake_pooled, real_node, weights)?;
    if !gen_loss.values.total.is_finite() {
        return Err(Error::NonFiniteLoss {
            step: 0,
            detail: format!("generator loss {:?}", gen_loss.values),
        });
    }
    let g_grads = named_grads(&graph, &graph.backward(gen_loss.total));
    adam_g.step(&mut gen_store.weights, &g_grads);
    apply_bn_updates(gen_store, &gen_bn_updates);
    apply_bn_updates(disc_store, &disc_bn_updates2);

    Ok((loss_d_value, gen_loss.values))
}

fn snapshot_batch(
    dir: &Path,
    step: usize,
    inputs: &GeneratorInputs<f32>,
    cond: &Array4<f32>,
    reference: &Array4<f32>,
) -> Result<()> {
    let snap = dir.join(format!("diagnostic_step_{step:06}"));
    let to_entry = |a: &Array4<f32>| -> (Vec<usize>, Vec<f32>) {
        (a.shape().to_vec(), a.iter().copied().collect())
    };
    let entries = [
        ("fine_indices_t1", to_entry(&inputs.fine_indices_t1)),
        ("mid_indices_t1", to_entry(&inputs.mid_indices_t1)),
        ("mid_lst_t1", to_entry(&inputs.mid_lst_t1)),
        ("coarse_lst_t1", to_entry(&inputs.coarse_lst_t1)),
        ("coarse_lst_t2", to_entry(&inputs.coarse_lst_t2)),
        ("condition_mid", to_entry(cond)),
        ("ref_mid", to_entry(reference)),
    ];
    let arrays: Vec<(&str, Vec<usize>, &[f32])> = entries
        .iter()
        .map(|(n, (s, d))| (*n, s.clone(), d.as_slice()))
        .collect();
    crate::raster::archive::write_archive(
        &snap,
        &arrays,
        serde_json::json!({"step": step, "reason": "non-finite loss"}),
    )?;
    log::error!("non-finite loss at step {step}; batch snapshot written to {}", snap.display());
    Ok(())
}

/// Full-scene pooled view used by evaluation: 3x3 block means of a fine array.
pub fn pool_array3(x: &Array3<f32>) -> Result<Array3<f32>> {
    let (_c, h, w) = x.dim();
    if h % 3 != 0 || w % 3 != 0 {
        return Err(Error::NotDivisible {
            width: w,
            height: h,
            factor: 3,
        });
    }
    let x4 = x
        .to_owned()
        .insert_axis(Axis(0))
        .into_dimensionality::<ndarray::Ix4>()
        .expect("rank 4");
    let pooled = pool_batch3(&x4);
    Ok(pooled.index_axis(Axis(0), 0).to_owned())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::gradcheck::test_array;
    use approx::assert_abs_diff_eq;

    #[test]
    fn pool_constant_stays_constant() {
        let x = Array4::from_elem((1, 1, 96, 96), 7.0f64);
        let mut g = Graph::<f64>::new(true);
        let xi = g.input(x);
        let p = weak_supervision_pool(&mut g, xi).unwrap();
        assert_eq!(g.value(p).dim(), (1, 1, 32, 32));
        for v in g.value(p).iter() {
            assert_abs_diff_eq!(*v, 7.0, epsilon = 1e-12);
        }
    }

    #[test]
    fn pool_delta_spreads_over_block() {
        let mut x = Array4::zeros((1, 1, 6, 6));
        x[(0, 0, 1, 2)] = 9.0f64;
        let mut g = Graph::<f64>::new(true);
        let xi = g.input(x);
        let p = weak_supervision_pool(&mut g, xi).unwrap();
        assert_abs_diff_eq!(g.value(p)[(0, 0, 0, 0)], 1.0);
        assert_abs_diff_eq!(g.value(p)[(0, 0, 0, 1)], 0.0);
        assert_abs_diff_eq!(g.value(p)[(0, 0, 1, 0)], 0.0);
    }

    #[test]
    fn pool_matches_block_average() {
        let vals = test_array((1, 1, 12, 12), 3).mapv(|v| v as f32);
        let grid = crate::raster::simple_grid(12, 12, 10.0);
        let flat: Vec<f32> = vals.iter().copied().collect();
        let raster = crate::raster::Raster::from_values(grid, 1, flat).unwrap();
        let blocked = crate::raster::block_average(&raster, 3).unwrap();

        let mut g = Graph::<f32>::new(true);
        let xi = g.input(vals);
        let p = weak_supervision_pool(&mut g, xi).unwrap();
        for i in 0..4 {
            for j in 0..4 {
                assert_abs_diff_eq!(
                    g.value(p)[(0, 0, i, j)],
                    blocked.get(0, i, j),
                    epsilon = 1e-6
                );
            }
        }
    }

    #[test]
    fn pool_rejects_indivisible() {
        let x = Array4::<f64>::zeros((1, 1, 5, 6));
        let mut g = Graph::<f64>::new(true);
        let xi = g.input(x);
        assert!(weak_supervision_pool(&mut g, xi).is_err());
    }

    #[test]
    fn disc_loss_hand_values() {
        let mut g = Graph::<f64>::new(true);
        let real = g.input(Array4::from_elem((2, 1, 2, 2), 1.0));
        let fake = g.input(Array4::from_elem((2, 1, 2, 2), 0.0));
        let l = discriminator_loss(&mut g, real, fake).unwrap();
        assert_abs_diff_eq!(g.scalar(l), 0.0, epsilon = 1e-12);

        let mut g = Graph::<f64>::new(true);
        let real = g.input(Array4::from_elem((1, 1, 2, 2), 0.5));
        let fake = g.input(Array4::from_elem((1, 1, 2, 2), 0.5));
        let l = discriminator_loss(&mut g, real, fake).unwrap();
        assert_abs_diff_eq!(g.scalar(l), 0.25, epsilon = 1e-12);

        let mut g = Graph::<f64>::new(true);
        let real = g.input(Array4::from_elem((1, 1, 2, 2), 0.0));
        let fake = g.input(Array4::from_elem((1, 1, 2, 2), 1.0));
        let l = discriminator_loss(&mut g, real, fake).unwrap();
        assert_abs_diff_eq!(g.scalar(l), 1.0, epsilon = 1e-12);
    }

    #[test]
    fn gen_loss_joint_optimum_is_zero() {
        let reference = test_array((2, 1, 32, 32), 5);
        let mut g = Graph::<f64>::new(true);
        let fake_scores = g.input(Array4::from_elem((2, 1, 2, 2), 1.0));
        let gen = g.input(reference.clone());
        let refn = g.input(reference);
        let loss = generator_loss(&mut g, fake_scores, gen, refn, &LossWeights::default()).unwrap();
        assert!(loss.values.total.abs() < 1e-6, "{:?}", loss.values);
    }

    #[test]
    fn gen_loss_beta_only_constant_offset() {
        let reference = test_array((2, 1, 32, 32), 6);
        let gen_v = reference.mapv(|v| v + 0.1);
        let w = LossWeights {
            alpha: 0.0,
            beta: 1.0,
            gamma: 0.0,
            delta: 0.0,
        };
        let mut g = Graph::<f64>::new(true);
        let fake_scores = g.input(Array4::zeros((2, 1, 2, 2)));
        let gen = g.input(gen_v);
        let refn = g.input(reference);
        let loss = generator_loss(&mut g, fake_scores, gen, refn, &w).unwrap();
        assert_abs_diff_eq!(loss.values.total, 0.1, epsilon = 1e-9);
        assert_abs_diff_eq!(loss.values.content, 0.1, epsilon = 1e-9);
    }

    #[test]
    fn gen_loss_negated_reference_spectrum_two() {
        let reference = test_array((1, 1, 32, 32), 7);
        let gen_v = reference.mapv(|v| -v);
        let w = LossWeights {
            alpha: 0.0,
            beta: 0.0,
            gamma: 1.0,
            delta: 0.0,
        };
        let mut g = Graph::<f64>::new(true);
        let fake_scores = g.input(Array4::zeros((1, 1, 2, 2)));
        let gen = g.input(gen_v);
        let refn = g.input(reference);
        let loss = generator_loss(&mut g, fake_scores, gen, refn, &w).unwrap();
        assert_abs_diff_eq!(loss.values.spectrum, 2.0, epsilon = 1e-6);
        assert_abs_diff_eq!(loss.values.total, 2.0, epsilon = 1e-6);
    }

    #[test]
    fn term_bounds_hold() {
        let a = test_array((2, 1, 16, 16), 8);
        let b = test_array((2, 1, 16, 16), 9);
        let mut g = Graph::<f64>::new(true);
        let fake_scores = g.input(test_array((2, 1, 2, 2), 10));
        let gen = g.input(a);
        let refn = g.input(b);
        let loss = generator_loss(&mut g, fake_scores, gen, refn, &LossWeights::default()).unwrap();
        assert!(loss.values.gan >= 0.0);
        assert!(loss.values.content >= 0.0);
        assert!((0.0..=2.0).contains(&loss.values.spectrum));
        assert!((0.0..=2.0).contains(&loss.values.vision));
    }

    #[test]
    fn loss_trace_rejects_non_finite() {
        let mut trace = LossTrace::default();
        let bad = LossRecord {
            step: 1,
            loss_g: f64::NAN,
            loss_d: 0.0,
            l_gan: 0.0,
            l_content: 0.0,
            l_spectrum: 0.0,
            l_vision: 0.0,
        };
        assert!(trace.push(bad).is_err());
    }

    #[test]
    fn csv_header_is_stable() {
        let trace = LossTrace::default();
        assert!(trace
            .to_csv()
            .starts_with("step,loss_G,loss_D,l_gan,l_content,l_spectrum,l_vision"));
    }
}
