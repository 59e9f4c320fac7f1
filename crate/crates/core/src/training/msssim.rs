//! Differentiable multi-scale structural similarity on the autodiff graph.
//!
//! Standard 11x11 Gaussian window (sigma 1.5), K1 = 0.01, K2 = 0.03, five-scale
//! weights truncated and renormalized to the number of scales that fit the
//! input (a scale must keep at least 8 pixels per side and even divisibility).
//! Windowed statistics use reflective padding, so every scale keeps its full
//! map size. Contrast-structure and luminance factors are clamped at a small
//! positive floor before exponentiation.

use crate::nn::graph::{Graph, NodeId};
use crate::nn::scalar::Scalar;
use crate::raster::gaussian_kernel_1d;

pub const MSSSIM_WEIGHTS: [f64; 5] = [0.0448, 0.2856, 0.3001, 0.2363, 0.1333];
pub const SSIM_K1: f64 = 0.01;
pub const SSIM_K2: f64 = 0.03;
pub const SSIM_WINDOW: usize = 11;
pub const SSIM_SIGMA: f64 = 1.5;
const POW_FLOOR: f64 = 1e-6;

/// Number of usable scales (1..=5) for an `h x w` image.
pub fn msssim_scales(h: usize, w: usize) -> usize {
    let mut level = 1usize;
    while level < 5 {
        let div = 1usize << level; // downsampling factor of the next scale
        if h.min(w) / div >= 8 && h % div == 0 && w % div == 0 {
            level += 1;
        } else {
            break;
        }
    }
    level
}

/// Truncated and renormalized scale weights.
pub fn msssim_weights(scales: usize) -> Vec<f64> {
    let w = &MSSSIM_WEIGHTS[..scales];
    let sum: f64 = w.iter().sum();
    w.iter().map(|v| v / sum).collect()
}

fn window_kernel<F: Scalar>() -> Vec<F> {
    gaussian_kernel_1d(SSIM_SIGMA, (SSIM_WINDOW - 1) / 2)
        .into_iter()
        .map(F::from_f64)
        .collect()
}

/// Mean MS-SSIM between two `[B,1,H,W]` The result is a `[1,1,1,1]` node in
/// `[0, 1]` (negative factors clamp to the floor).
pub fn ms_ssim_graph<F: Scalar>(
    g: &mut Graph<F>,
    x: NodeId,
    y: NodeId,
    data_range: f64,
) -> NodeId {
    let (_, _, h, w) = g.value(x).dim();
    assert_eq!(g.value(x).dim(), g.value(y).dim(), "ms-ssim shape mismatch");
    let scales = msssim_scales(h, w);
    let weights = msssim_weights(scales);
    let kernel = window_kernel::<F>();
    let c1 = F::from_f64((SSIM_K1 * data_range).powi(2));
    let c2 = F::from_f64((SSIM_K2 * data_range).powi(2));
    let floor = F::from_f64(POW_FLOOR);

    let (mut xs, mut ys) = (x, y);
    let mut product: Option<NodeId> = None;
    for (i, weight) in weights.iter().enumerate() {
        let mu_x = g.depthwise_fixed(xs, kernel.clone());
        let mu_y = g.depthwise_fixed(ys, kernel.clone());
        let xx = g.square(xs);
        let wxx = g.depthwise_fixed(xx, kernel.clone());
        let mu_x2 = g.square(mu_x);
        let sigma_x2 = g.sub(wxx, mu_x2);
        let yy = g.square(ys);
        let wyy = g.depthwise_fixed(yy, kernel.clone());
        let mu_y2 = g.square(mu_y);
        let sigma_y2 = g.sub(wyy, mu_y2);
        let xy = g.mul(xs, ys);
        let wxy = g.depthwise_fixed(xy, kernel.clone());
        let mu_xy = g.mul(mu_x, mu_y);
        let sigma_xy = g.sub(wxy, mu_xy);

        let num = g.mul_const(sigma_xy, F::from_f64(2.0));
        let num = g.add_const(num, c2);
        let den = g.add(sigma_x2, sigma_y2);
        let den = g.add_const(den, c2);
        let cs_map = g.div(num, den);
        let cs = g.mean_all(cs_map);

        let mut factor = g.pow_const(cs, F::from_f64(*weight), floor);
        if i == weights.len() - 1 {
            let lum_num = g.mul_const(mu_xy, F::from_f64(2.0));
            let lum_num = g.add_const(lum_num, c1);
            let lum_den = g.add(mu_x2, mu_y2);
            let lum_den = g.add_const(lum_den, c1);
            let l_map = g.div(lum_num, lum_den);
            let lum = g.mean_all(l_map);
            let lum_pow = g.pow_const(lum, F::from_f64(*weight), floor);
            factor = g.mul(factor, lum_pow);
        } else {
            xs = g.avg_pool(xs, 2);
            ys = g.avg_pool(ys, 2);
        }
        product = Some(match product {
            None => factor,
            Some(p) => g.mul(p, factor),
        });
    }
    product.expect("at least one scale")
}
