//! Contract tests for the generator stages and the discriminator: shape
//! guarantees, algebraic identities, brute-force oracles and gradient checks.

use ndarray::{Array4, Axis};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use thermofuse::dataset::NormRange;
use thermofuse::model::discriminator::{
    discriminate_graph, init_discriminator_params, score_probabilities, DiscriminatorConfig,
};
use thermofuse::model::generator::{
    adain, cosine_similarity_map, decode, encode, generator_forward, generator_graph,
    init_generator_params, refine_features, temporal_attention, GeneratorConfig, GeneratorInputs,
};
use thermofuse::model::{checkpoint, ModelCtx};
use thermofuse::nn::gradcheck::{rel_err, test_array};
use thermofuse::nn::graph::Graph;
use thermofuse::nn::params::ParamStore;

fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Nudge every parameter away from exact zeros so finite differences never
/// straddle a ReLU kink sitting exactly at the origin (zero-initialized
/// biases plus zero padding make that measure-nonzero otherwise).
fn jitter_params(store: &mut ParamStore<f64>, seed: u64) {
    use rand::Rng as _;
    let mut r = rng(seed);
    for value in store.weights.values_mut() {
        for v in value.iter_mut() {
            *v += r.random_range(0.01..0.05) * if r.random_bool(0.5) { 1.0 } else { -1.0 };
        }
    }
}

fn f32_inputs(cfg: &GeneratorConfig, batch: usize, seed: u64) -> GeneratorInputs<f32> {
    let s = cfg.base_size;
    let arr = |c: usize, k: u64| test_array((batch, c, s, s), seed + k).mapv(|v| v as f32 * 0.5);
    GeneratorInputs {
        fine_indices_t1: arr(3, 0),
        mid_indices_t1: arr(3, 1),
        mid_lst_t1: arr(1, 2),
        coarse_lst_t1: arr(1, 3),
        coarse_lst_t2: arr(1, 4),
    }
}

#[test]
fn encoder_level_shapes_match_contract() {
    let cfg = GeneratorConfig {
        levels: 4,
        channels: vec![4, 6, 8, 10],
        res_blocks: 1,
        base_size: 48,
    };
    let store: ParamStore<f32> = init_generator_params(&cfg, &mut rng(1));
    let mut graph = Graph::<f32>::new(false);
    let mut ctx = ModelCtx::new(&mut graph, &store, false);
    let x = test_array((2, 3, 48, 48), 5).mapv(|v| v as f32);
    let xid = ctx.graph.input(x);
    let pyramid = encode(&mut ctx, &cfg, 1, xid).unwrap();
    assert_eq!(pyramid.len(), 4);
    for (i, level) in pyramid.iter().enumerate() {
        let expect = (2, cfg.channels[i], 48 >> i, 48 >> i);
        assert_eq!(graph.value(*level).dim(), expect, "level {i}");
    }
}

#[test]
fn encoder_zero_input_gives_zero_pyramid() {
    // Convolutions are linear with zero biases, the leaky activation fixes 0,
    // and residual blocks add zero to zero.
    let cfg = GeneratorConfig::tiny();
    let store: ParamStore<f32> = init_generator_params(&cfg, &mut rng(2));
    let mut graph = Graph::<f32>::new(false);
    let mut ctx = ModelCtx::new(&mut graph, &store, false);
    let x = Array4::<f32>::zeros((1, 3, cfg.base_size, cfg.base_size));
    let xid = ctx.graph.input(x);
    let pyramid = encode(&mut ctx, &cfg, 1, xid).unwrap();
    for level in pyramid {
        assert!(graph.value(level).iter().all(|v| *v == 0.0));
    }
}

#[test]
fn encoder_rejects_wrong_channel_count() {
    let cfg = GeneratorConfig::tiny();
    let store: ParamStore<f32> = init_generator_params(&cfg, &mut rng(3));
    let mut graph = Graph::<f32>::new(false);
    let mut ctx = ModelCtx::new(&mut graph, &store, false);
    let x = Array4::<f32>::zeros((1, 1, cfg.base_size, cfg.base_size));
    let xid = ctx.graph.input(x);
    assert!(encode(&mut ctx, &cfg, 1, xid).is_err()); // encoder 1 wants 3 channels
}

#[test]
fn encoder_is_deterministic_bitwise() {
    let cfg = GeneratorConfig::tiny();
    let store: ParamStore<f32> = init_generator_params(&cfg, &mut rng(4));
    let x = test_array((1, 3, cfg.base_size, cfg.base_size), 6).mapv(|v| v as f32);
    let run = || -> Vec<Vec<u32>> {
        let mut graph = Graph::<f32>::new(false);
        let mut ctx = ModelCtx::new(&mut graph, &store, false);
        let xid = ctx.graph.input(x.clone());
        let pyramid = encode(&mut ctx, &cfg, 2, xid).unwrap();
        pyramid
            .iter()
            .map(|id| graph.value(*id).iter().map(|v| v.to_bits()).collect())
            .collect()
    };
    assert_eq!(run(), run());
}

#[test]
fn cosine_map_trivial_values() {
    let u = test_array((1, 4, 5, 5), 7).mapv(|v| v as f32 + 2.0);
    let mut g = Graph::<f32>::new(false);
    let ui = g.input(u.clone());
    let vi = g.input(u.clone());
    let same = cosine_similarity_map(&mut g, ui, vi).unwrap();
    for v in g.value(same).iter() {
        assert!((v - 1.0).abs() < 1e-6, "{v}");
    }
    let wi = g.input(u.mapv(|v| -v));
    let anti = cosine_similarity_map(&mut g, ui, wi).unwrap();
    for v in g.value(anti).iter() {
        assert!((v + 1.0).abs() < 1e-6, "{v}");
    }
    // Orthogonal 2-channel vectors: (1, 0) vs (0, 1) per pixel.
    let mut a = Array4::<f32>::zeros((1, 2, 3, 3));
    let mut b = Array4::<f32>::zeros((1, 2, 3, 3));
    a.index_axis_mut(Axis(1), 0).fill(1.0);
    b.index_axis_mut(Axis(1), 1).fill(1.0);
    let ai = g.input(a);
    let bi = g.input(b);
    let orth = cosine_similarity_map(&mut g, ai, bi).unwrap();
    for v in g.value(orth).iter() {
        assert!(v.abs() < 1e-6, "{v}");
    }
}

#[test]
fn cosine_map_zero_norm_guard() {
    let mut g = Graph::<f32>::new(false);
    let z = g.input(Array4::<f32>::zeros((1, 3, 4, 4)));
    let u = g.input(test_array((1, 3, 4, 4), 8).mapv(|v| v as f32));
    let c = cosine_similarity_map(&mut g, z, u).unwrap();
    for v in g.value(c).iter() {
        assert_eq!(*v, 0.0);
    }
}

#[test]
fn refine_identity_and_negation() {
    let mut g = Graph::<f32>::new(false);
    let f_mid: Vec<_> = (0..2)
        .map(|k| g.input(test_array((1, 3, 6, 6), 20 + k).mapv(|v| v as f32)))
        .collect();
    let l_fine: Vec<_> = (0..2)
        .map(|k| g.input(test_array((1, 4, 6, 6), 30 + k).mapv(|v| v as f32 + 1.5)))
        .collect();
    let l_same = l_fine.clone();
    let out = refine_features(&mut g, &f_mid, &l_same, &l_fine).unwrap();
    for (o, f) in out.iter().zip(&f_mid) {
        for (a, b) in g.value(*o).iter().zip(g.value(*f).iter()) {
            assert!((a - b).abs() < 1e-6, "{a} vs {b}");
        }
    }
    let l_neg: Vec<_> = l_fine
        .iter()
        .map(|id| {
            let v = g.value(*id).mapv(|x| -x);
            g.input(v)
        })
        .collect();
    let out = refine_features(&mut g, &f_mid, &l_neg, &l_fine).unwrap();
    for (o, f) in out.iter().zip(&f_mid) {
        for (a, b) in g.value(*o).iter().zip(g.value(*f).iter()) {
            assert!((a + b).abs() < 1e-6, "{a} vs {b}");
        }
    }
}

#[test]
fn refine_matches_bruteforce_oracle() {
    // Independent per-pixel dot/norm computation.
    let f = test_array((2, 3, 4, 4), 40);
    let u = test_array((2, 5, 4, 4), 41);
    let v = test_array((2, 5, 4, 4), 42);
    let mut g = Graph::<f64>::new(false);
    let fi = g.input(f.clone());
    let ui = g.input(u.clone());
    let vi = g.input(v.clone());
    let out = refine_features(&mut g, &[fi], &[ui], &[vi]).unwrap();
    let got = g.value(out[0]);
    for b in 0..2 {
        for i in 0..4 {
            for j in 0..4 {
                let mut dot = 0f64;
                let mut nu = 0f64;
                let mut nv = 0f64;
                for c in 0..5 {
                    dot += u[(b, c, i, j)] * v[(b, c, i, j)];
                    nu += u[(b, c, i, j)].powi(2);
                    nv += v[(b, c, i, j)].powi(2);
                }
                let cos = dot / ((nu.sqrt() + 1e-8) * (nv.sqrt() + 1e-8));
                for c in 0..3 {
                    let expect = f[(b, c, i, j)] * cos;
                    let have = got[(b, c, i, j)];
                    assert!((expect - have).abs() < 1e-6, "{expect} vs {have}");
                }
            }
        }
    }
}

#[test]
fn adain_identity_statistics_and_guard() {
    // style == content is the identity.
    let c = test_array((1, 3, 8, 8), 50);
    let mut g = Graph::<f64>::new(false);
    let ci = g.input(c.clone());
    let si = g.input(c.clone());
    let out = adain(&mut g, &[ci], &[si]).unwrap();
    for (a, b) in g.value(out[0]).iter().zip(c.iter()) {
        assert!((a - b).abs() < 1e-5);
    }

    // Content N(0,1)-standardized, style with mean 5 / std 2: output channel
    // statistics must match the style.
    let raw = test_array((1, 1, 16, 16), 51);
    let mean = raw.iter().sum::<f64>() / raw.len() as f64;
    let var = raw.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / raw.len() as f64;
    let content = raw.mapv(|v| (v - mean) / var.sqrt());
    let sraw = test_array((1, 1, 16, 16), 52);
    let smean = sraw.iter().sum::<f64>() / sraw.len() as f64;
    let svar = sraw.iter().map(|v| (v - smean).powi(2)).sum::<f64>() / sraw.len() as f64;
    let style = sraw.mapv(|v| (v - smean) / svar.sqrt() * 2.0 + 5.0);
    let ci = g.input(content);
    let si = g.input(style);
    let out = adain(&mut g, &[ci], &[si]).unwrap();
    let ov = g.value(out[0]);
    let omean = ov.iter().sum::<f64>() / ov.len() as f64;
    let ovar = ov.iter().map(|v| (v - omean).powi(2)).sum::<f64>() / ov.len() as f64;
    assert!((omean - 5.0).abs() < 1e-4, "mean {omean}");
    assert!((ovar.sqrt() - 2.0).abs() < 1e-4, "std {}", ovar.sqrt());

    // Constant content routes through the sigma guard to the style mean.
    let flat = g.input(Array4::from_elem((1, 2, 6, 6), 3.3));
    let sv = test_array((1, 2, 6, 6), 53);
    let si = g.input(sv.clone());
    let out = adain(&mut g, &[flat], &[si]).unwrap();
    for ch in 0..2 {
        let smean = sv.index_axis(Axis(1), ch).iter().sum::<f64>() / 36.0;
        for v in g.value(out[0]).index_axis(Axis(1), ch).iter() {
            assert!((v - smean).abs() < 1e-9, "{v} vs {smean}");
        }
    }
}

#[test]
fn attention_is_convex_combination_for_random_params() {
    let cfg = GeneratorConfig::tiny();
    for draw in 0..100u64 {
        let store: ParamStore<f32> = init_generator_params(&cfg, &mut rng(100 + draw));
        let mut graph = Graph::<f32>::new(true);
        let mut ctx = ModelCtx::new(&mut graph, &store, false);
        let mk = |ctx: &mut ModelCtx<f32>, seed: u64| -> Vec<_> {
            (0..cfg.levels)
                .map(|i| {
                    let s = cfg.base_size >> i;
                    let v = test_array((2, cfg.channels[i], s, s), seed + i as u64)
                        .mapv(|v| v as f32 * 2.0);
                    ctx.graph.input(v)
                })
                .collect()
        };
        let f1 = mk(&mut ctx, 200 + draw * 10);
        let f2 = mk(&mut ctx, 300 + draw * 10);
        let fnorm = mk(&mut ctx, 400 + draw * 10);
        let out = temporal_attention(&mut ctx, &f1, &f2, &fnorm).unwrap();
        for i in 0..cfg.levels {
            let o = graph.value(out[i]);
            let a = graph.value(f2[i]);
            let b = graph.value(fnorm[i]);
            for ((ov, av), bv) in o.iter().zip(a.iter()).zip(b.iter()) {
                let lo = av.min(*bv) - 1e-5;
                let hi = av.max(*bv) + 1e-5;
                assert!(*ov >= lo && *ov <= hi, "{ov} outside [{lo}, {hi}]");
            }
        }
    }
}

#[test]
fn attention_saturates_to_either_source() {
    // Forcing the mask head gives back one of the two sources: zero the mask
    // scale and push the shift far positive (theta -> 1) or negative
    // (theta -> 0).
    let cfg = GeneratorConfig::tiny();
    for (shift, pick_f2) in [(30.0f32, true), (-30.0f32, false)] {
        let mut store: ParamStore<f32> = init_generator_params(&cfg, &mut rng(7));
        for i in 0..cfg.levels {
            store
                .weights
                .get_mut(&format!("att.l{i}.mask.bn.gamma"))
                .unwrap()
                .fill(0.0);
            store
                .weights
                .get_mut(&format!("att.l{i}.mask.bn.beta"))
                .unwrap()
                .fill(shift);
        }
        let mut graph = Graph::<f32>::new(false); // eval: running stats
        let mut ctx = ModelCtx::new(&mut graph, &store, false);
        let mk = |ctx: &mut ModelCtx<f32>, seed: u64| -> Vec<_> {
            (0..cfg.levels)
                .map(|i| {
                    let s = cfg.base_size >> i;
                    let v = test_array((1, cfg.channels[i], s, s), seed + i as u64)
                        .mapv(|v| v as f32);
                    ctx.graph.input(v)
                })
                .collect()
        };
        let f1 = mk(&mut ctx, 500);
        let f2 = mk(&mut ctx, 600);
        let fnorm = mk(&mut ctx, 700);
        let out = temporal_attention(&mut ctx, &f1, &f2, &fnorm).unwrap();
        for i in 0..cfg.levels {
            let expect = if pick_f2 { f2[i] } else { fnorm[i] };
            for (a, b) in graph
                .value(out[i])
                .iter()
                .zip(graph.value(expect).iter())
            {
                assert!((a - b).abs() < 1e-5, "{a} vs {b}");
            }
        }
    }
}

#[test]
fn decoder_output_shape_and_determinism() {
    let cfg = GeneratorConfig::tiny();
    let store: ParamStore<f32> = init_generator_params(&cfg, &mut rng(8));
    let inputs = f32_inputs(&cfg, 2, 900);
    let run = || -> Array4<f32> {
        let mut graph = Graph::<f32>::new(false);
        let mut ctx = ModelCtx::new(&mut graph, &store, false);
        let out = generator_graph(&mut ctx, &cfg, &inputs).unwrap();
        graph.value(out).clone()
    };
    let a = run();
    assert_eq!(a.dim(), (2, 1, cfg.base_size, cfg.base_size));
    assert!(a.iter().all(|v| v.is_finite()));
    let b = run();
    assert!(a.iter().zip(b.iter()).all(|(x, y)| x.to_bits() == y.to_bits()));
}

#[test]
fn decoder_gradients_match_finite_differences() {
    // Four-level tiny configuration in double precision; every decoder
    // parameter is probed with central differences.
    let cfg = GeneratorConfig {
        levels: 4,
        channels: vec![2, 3, 3, 4],
        res_blocks: 1,
        base_size: 24,
    };
    let mut store64: ParamStore<f64> = init_generator_params(&cfg, &mut rng(9));
    jitter_params(&mut store64, 90);

    let build_pyramids = |g: &mut Graph<f64>| -> (Vec<_>, Vec<_>) {
        let fused: Vec<_> = (0..cfg.levels)
            .map(|i| {
                let s = cfg.base_size >> i;
                let v = test_array((1, cfg.channels[i], s, s), 1000 + i as u64);
                g.input(v)
            })
            .collect();
        let coarse: Vec<_> = (0..cfg.levels)
            .map(|i| {
                let s = cfg.base_size >> i;
                let v = test_array((1, cfg.channels[i], s, s), 2000 + i as u64);
                g.input(v)
            })
            .collect();
        (fused, coarse)
    };
    let eval = |store: &ParamStore<f64>| -> f64 {
        let mut graph = Graph::<f64>::new(true);
        let mut ctx = ModelCtx::new(&mut graph, store, false);
        let (fused, coarse) = build_pyramids(ctx.graph);
        let out = decode(&mut ctx, &cfg, &fused, &coarse).unwrap();
        let sq = graph.square(out);
        let loss = graph.mean_all(sq);
        graph.scalar(loss)
    };

    // Analytic gradients.
    let mut graph = Graph::<f64>::new(true);
    let mut ctx = ModelCtx::new(&mut graph, &store64, true);
    let (fused, coarse) = build_pyramids(ctx.graph);
    let out = decode(&mut ctx, &cfg, &fused, &coarse).unwrap();
    let sq = graph.square(out);
    let loss = graph.mean_all(sq);
    let grads = thermofuse::nn::params::named_grads(&graph, &graph.backward(loss));

    let h = 1e-5;
    let mut max_err = 0f64;
    let mut checked = 0usize;
    for (name, value) in &store64.weights {
        if !name.starts_with("dec.") {
            continue;
        }
        let analytic = grads.get(name).expect("decoder param has gradient");
        for flat in 0..value.len() {
            let x0 = value.as_slice().unwrap()[flat];
            let step = h * x0.abs().max(1.0);
            let mut plus = store64.clone();
            plus.weights.get_mut(name).unwrap().as_slice_mut().unwrap()[flat] = x0 + step;
            let mut minus = store64.clone();
            minus
                .weights
                .get_mut(name)
                .unwrap()
                .as_slice_mut()
                .unwrap()[flat] = x0 - step;
            let numeric = (eval(&plus) - eval(&minus)) / (2.0 * step);
            let a = analytic.as_slice().unwrap()[flat];
            max_err = max_err.max(rel_err(a, numeric));
            checked += 1;
        }
    }
    assert!(checked > 500, "expected to probe every decoder parameter");
    assert!(max_err < 1e-3, "max rel err {max_err} over {checked} params");
}

#[test]
fn generator_smoothing_reduces_high_frequency_energy() {
    // Mean squared Laplacian of the smoothed output must not exceed the
    // unsmoothed reconstruction's.
    let cfg = GeneratorConfig::tiny();
    let store: ParamStore<f32> = init_generator_params(&cfg, &mut rng(10));
    let inputs = f32_inputs(&cfg, 1, 950);

    let mut graph = Graph::<f32>::new(false);
    let mut ctx = ModelCtx::new(&mut graph, &store, false);
    let fine = ctx.graph.input(inputs.fine_indices_t1.clone());
    let midx = ctx.graph.input(inputs.mid_indices_t1.clone());
    let mlst = ctx.graph.input(inputs.mid_lst_t1.clone());
    let c1 = ctx.graph.input(inputs.coarse_lst_t1.clone());
    let c2 = ctx.graph.input(inputs.coarse_lst_t2.clone());
    let l_fine = encode(&mut ctx, &cfg, 1, fine).unwrap();
    let l_mid = encode(&mut ctx, &cfg, 2, midx).unwrap();
    let f_mid = encode(&mut ctx, &cfg, 3, mlst).unwrap();
    let f1 = encode(&mut ctx, &cfg, 4, c1).unwrap();
    let f2 = encode(&mut ctx, &cfg, 5, c2).unwrap();
    let refined = refine_features(ctx.graph, &f_mid, &l_mid, &l_fine).unwrap();
    let normed = adain(ctx.graph, &refined, &f2).unwrap();
    let fused = temporal_attention(&mut ctx, &f1, &f2, &normed).unwrap();
    let raw = decode(&mut ctx, &cfg, &fused, &f2).unwrap();
    let kernel: Vec<f32> = thermofuse::raster::gaussian_kernel_1d(1.0, 3)
        .into_iter()
        .map(|v| v as f32)
        .collect();
    let smooth = graph.depthwise_fixed(raw, kernel);

    let lap_energy = |a: &Array4<f32>| -> f64 {
        let (_, _, h, w) = a.dim();
        let mut acc = 0f64;
        for i in 1..h - 1 {
            for j in 1..w - 1 {
                let lap = a[(0, 0, i, j)] as f64 * 4.0
                    - a[(0, 0, i - 1, j)] as f64
                    - a[(0, 0, i + 1, j)] as f64
                    - a[(0, 0, i, j - 1)] as f64
                    - a[(0, 0, i, j + 1)] as f64;
                acc += lap * lap;
            }
        }
        acc / ((h - 2) * (w - 2)) as f64
    };
    let raw_e = lap_energy(graph.value(raw));
    let smooth_e = lap_energy(graph.value(smooth));
    assert!(
        smooth_e <= raw_e,
        "smoothing increased Laplacian energy: {smooth_e} > {raw_e}"
    );
}

#[test]
fn generator_forward_returns_kelvin() {
    let cfg = GeneratorConfig::tiny();
    let store: ParamStore<f32> = init_generator_params(&cfg, &mut rng(11));
    let inputs = f32_inputs(&cfg, 1, 960);
    let out = generator_forward(&store, &cfg, &inputs, &NormRange::default()).unwrap();
    assert_eq!(out.dim(), (1, 1, cfg.base_size, cfg.base_size));
    for v in out.iter() {
        assert!(v.is_finite());
        assert!(*v >= 200.0 && *v <= 380.0, "implausible Kelvin value {v}");
    }
}

#[test]
fn discriminator_score_map_is_2x2_on_32px_default() {
    let dcfg = DiscriminatorConfig::default();
    assert_eq!(dcfg.score_map_side(32), 2);
    let store: ParamStore<f32> = init_discriminator_params(&dcfg, &mut rng(12));
    let mut graph = Graph::<f32>::new(false);
    let mut ctx = ModelCtx::new(&mut graph, &store, false);
    let lst = ctx.graph.input(test_array((2, 1, 32, 32), 70).mapv(|v| v as f32));
    let cond = ctx.graph.input(test_array((2, 1, 32, 32), 71).mapv(|v| v as f32));
    let score = discriminate_graph(&mut ctx, &dcfg, lst, cond).unwrap();
    assert_eq!(graph.value(score).dim(), (2, 1, 2, 2));
    assert!(graph.value(score).iter().all(|v| v.is_finite()));
    // Determinism on identical inputs.
    let mut graph2 = Graph::<f32>::new(false);
    let mut ctx2 = ModelCtx::new(&mut graph2, &store, false);
    let lst2 = ctx2.graph.input(test_array((2, 1, 32, 32), 70).mapv(|v| v as f32));
    let cond2 = ctx2.graph.input(test_array((2, 1, 32, 32), 71).mapv(|v| v as f32));
    let score2 = discriminate_graph(&mut ctx2, &dcfg, lst2, cond2).unwrap();
    assert_eq!(graph.value(score), graph2.value(score2));
    // Probability view stays in (0, 1).
    let probs = score_probabilities(graph.value(score));
    assert!(probs.iter().all(|p| *p > 0.0 && *p < 1.0));
}

#[test]
fn discriminator_gradients_match_finite_differences() {
    let dcfg = DiscriminatorConfig::tiny();
    let mut store64: ParamStore<f64> = init_discriminator_params(&dcfg, &mut rng(13));
    jitter_params(&mut store64, 130);
    let lst = test_array((2, 1, 8, 8), 80);
    let cond = test_array((2, 1, 8, 8), 81);

    let eval = |store: &ParamStore<f64>, lst_v: &Array4<f64>| -> f64 {
        let mut graph = Graph::<f64>::new(true);
        let mut ctx = ModelCtx::new(&mut graph, store, false);
        let l = ctx.graph.input(lst_v.clone());
        let c = ctx.graph.input(cond.clone());
        let s = discriminate_graph(&mut ctx, &dcfg, l, c).unwrap();
        let sq = graph.square(s);
        let loss = graph.mean_all(sq);
        graph.scalar(loss)
    };

    let mut graph = Graph::<f64>::new(true);
    let mut ctx = ModelCtx::new(&mut graph, &store64, true);
    let l = ctx.graph.leaf(lst.clone());
    let c = ctx.graph.input(cond.clone());
    let s = discriminate_graph(&mut ctx, &dcfg, l, c).unwrap();
    let sq = graph.square(s);
    let loss = graph.mean_all(sq);
    let back = graph.backward(loss);
    let named = thermofuse::nn::params::named_grads(&graph, &back);
    let input_grad = back.get(l).unwrap().clone();

    let h = 1e-5;
    let mut max_err = 0f64;
    // Parameter gradients (subsample large tensors).
    let mut probe_rng = rng(14);
    for (name, value) in &store64.weights {
        let analytic = named.get(name).expect("param gradient");
        let len = value.len();
        let coords: Vec<usize> = if len <= 24 {
            (0..len).collect()
        } else {
            use rand::Rng as _;
            (0..24).map(|_| probe_rng.random_range(0..len)).collect()
        };
        for flat in coords {
            let x0 = value.as_slice().unwrap()[flat];
            let step = h * x0.abs().max(1.0);
            let mut plus = store64.clone();
            plus.weights.get_mut(name).unwrap().as_slice_mut().unwrap()[flat] = x0 + step;
            let mut minus = store64.clone();
            minus.weights.get_mut(name).unwrap().as_slice_mut().unwrap()[flat] = x0 - step;
            let numeric = (eval(&plus, &lst) - eval(&minus, &lst)) / (2.0 * step);
            max_err = max_err.max(rel_err(analytic.as_slice().unwrap()[flat], numeric));
        }
    }
    // Input gradients.
    for flat in 0..lst.len() {
        let x0 = lst.as_slice().unwrap()[flat];
        let step = h * x0.abs().max(1.0);
        let mut plus = lst.clone();
        plus.as_slice_mut().unwrap()[flat] = x0 + step;
        let mut minus = lst.clone();
        minus.as_slice_mut().unwrap()[flat] = x0 - step;
        let numeric = (eval(&store64, &plus) - eval(&store64, &minus)) / (2.0 * step);
        max_err = max_err.max(rel_err(input_grad.as_slice().unwrap()[flat], numeric));
    }
    assert!(max_err < 1e-3, "max rel err {max_err}");
}

#[test]
fn checkpoint_roundtrip_reproduces_forward_bitwise() {
    let cfg = GeneratorConfig::tiny();
    let dcfg = DiscriminatorConfig::tiny();
    let store: ParamStore<f32> = init_generator_params(&cfg, &mut rng(15));
    let dstore: ParamStore<f32> = init_discriminator_params(&dcfg, &mut rng(16));
    let inputs = f32_inputs(&cfg, 1, 970);
    let range = NormRange::default();

    let before = generator_forward(&store, &cfg, &inputs, &range).unwrap();

    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("model.ckpt");
    checkpoint::save(&path, &cfg, Some(&dcfg), &range, 1, &store, Some(&dstore)).unwrap();
    let loaded = checkpoint::load(&path).unwrap();
    let after = generator_forward(
        &loaded.generator,
        &loaded.generator_config,
        &inputs,
        &loaded.normalization,
    )
    .unwrap();
    assert!(before
        .iter()
        .zip(after.iter())
        .all(|(a, b)| a.to_bits() == b.to_bits()));
}
