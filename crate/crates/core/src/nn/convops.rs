//! Low-level convolution kernels: padding, im2col/col2im and the separable
//! fixed-kernel passes used for Gaussian windows. All loops are sequential per
//! sample; batch-level parallelism happens in the graph layer with disjoint
//! output slices, so results never depend on scheduling.

use ndarray::{Array2, Array3, ArrayView3};

use crate::nn::scalar::Scalar;
use crate::raster::reflect_index;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PadMode {
    Zero,
    Reflect,
}

/// Pad one sample `[C, H, W] -> [C, H + 2p, W + 2p]`.
pub fn pad<F: Scalar>(x: &ArrayView3<F>, p: usize, mode: PadMode) -> Array3<F> {
    let (c, h, w) = x.dim();
    if p == 0 {
        return x.to_owned();
    }
    let (hp, wp) = (h + 2 * p, w + 2 * p);
    let mut out = Array3::zeros((c, hp, wp));
    match mode {
        PadMode::Zero => {
            for ch in 0..c {
                for row in 0..h {
                    for col in 0..w {
                        out[(ch, row + p, col + p)] = x[(ch, row, col)];
                    }
                }
            }
        }
        PadMode::Reflect => {
            for ch in 0..c {
                for row in 0..hp {
                    let sr = reflect_index(row as isize - p as isize, h);
                    for col in 0..wp {
                        let sc = reflect_index(col as isize - p as isize, w);
                        out[(ch, row, col)] = x[(ch, sr, sc)];
                    }
                }
            }
        }
    }
    out
}

/// Adjoint of [`pad`]: fold a padded gradient back onto the unpadded shape.
pub fn unpad_adjoint<F: Scalar>(
    dpadded: &Array3<F>,
    p: usize,
    mode: PadMode,
    h: usize,
    w: usize,
) -> Array3<F> {
    let (c, hp, wp) = dpadded.dim();
    if p == 0 {
        return dpadded.clone();
    }
    let mut out = Array3::zeros((c, h, w));
    match mode {
        PadMode::Zero => {
            for ch in 0..c {
                for row in 0..h {
                    for col in 0..w {
                        out[(ch, row, col)] = dpadded[(ch, row + p, col + p)];
                    }
                }
            }
        }
        PadMode::Reflect => {
            for ch in 0..c {
                for row in 0..hp {
                    let sr = reflect_index(row as isize - p as isize, h);
                    for col in 0..wp {
                        let sc = reflect_index(col as isize - p as isize, w);
                        out[(ch, sr, sc)] = out[(ch, sr, sc)] + dpadded[(ch, row, col)];
                    }
                }
            }
        }
    }
    out
}

/// Output spatial size of a valid convolution over a padded input.
pub fn conv_out_size(input: usize, pad: usize, kernel: usize, stride: usize) -> usize {
    (input + 2 * pad - kernel) / stride + 1
}

/// Unfold a padded sample into columns `[C * kh * kw, Ho * Wo]`.
pub fn im2col<F: Scalar>(xp: &Array3<F>, kh: usize, kw: usize, stride: usize) -> Array2<F> {
    let (c, hp, wp) = xp.dim();
    let ho = (hp - kh) / stride + 1;
    let wo = (wp - kw) / stride + 1;
    let mut cols = Array2::zeros((c * kh * kw, ho * wo));
    for ch in 0..c {
        for ki in 0..kh {
            for kj in 0..kw {
                let row_idx = ch * kh * kw + ki * kw + kj;
                for oi in 0..ho {
                    let src_row = oi * stride + ki;
                    for oj in 0..wo {
                        cols[(row_idx, oi * wo + oj)] = xp[(ch, src_row, oj * stride + kj)];
                    }
                }
            }
        }
    }
    cols
}

/// Adjoint of [`im2col`]: scatter-add columns back onto the padded shape.
pub fn col2im_add<F: Scalar>(
    dcols: &Array2<F>,
    c: usize,
    hp: usize,
    wp: usize,
    kh: usize,
    kw: usize,
    stride: usize,
    out: &mut Array3<F>,
) {
    let ho = (hp - kh) / stride + 1;
    let wo = (wp - kw) / stride + 1;
    for ch in 0..c {
        for ki in 0..kh {
            for kj in 0..kw {
                let row_idx = ch * kh * kw + ki * kw + kj;
                for oi in 0..ho {
                    let src_row = oi * stride + ki;
                    for oj in 0..wo {
                        let v = dcols[(row_idx, oi * wo + oj)];
                        let cell = &mut out[(ch, src_row, oj * stride + kj)];
                        *cell = *cell + v;
                    }
                }
            }
        }
    }
}

/// Separable fixed-kernel pass along an axis with reflective padding; output
/// shape equals input shape. `axis` is 1 for rows (vertical) and 2 for columns.
pub fn sep_pass_fwd<F: Scalar>(x: &ArrayView3<F>, kernel: &[F], axis: usize) -> Array3<F> {
    let (c, h, w) = x.dim();
    let radius = (kernel.len() - 1) / 2;
    let mut out = Array3::zeros((c, h, w));
    for ch in 0..c {
        for row in 0..h {
            for col in 0..w {
                let mut acc = F::zero();
                for (t, kv) in kernel.iter().enumerate() {
                    let off = t as isize - radius as isize;
                    let v = if axis == 1 {
                        x[(ch, reflect_index(row as isize + off, h), col)]
                    } else {
                        x[(ch, row, reflect_index(col as isize + off, w))]
                    };
                    acc = acc + *kv * v;
                }
                out[(ch, row, col)] = acc;
            }
        }
    }
    out
}

/// Adjoint of [`sep_pass_fwd`].
pub fn sep_pass_adj<F: Scalar>(dy: &ArrayView3<F>, kernel: &[F], axis: usize) -> Array3<F> {
    let (c, h, w) = dy.dim();
    let radius = (kernel.len() - 1) / 2;
    let mut out = Array3::zeros((c, h, w));
    for ch in 0..c {
        for row in 0..h {
            for col in 0..w {
                let g = dy[(ch, row, col)];
                for (t, kv) in kernel.iter().enumerate() {
                    let off = t as isize - radius as isize;
                    let (tr, tc) = if axis == 1 {
                        (reflect_index(row as isize + off, h), col)
                    } else {
                        (row, reflect_index(col as isize + off, w))
                    };
                    let cell = &mut out[(ch, tr, tc)];
                    *cell = *cell + *kv * g;
                }
            }
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::Array3;

    #[test]
    fn im2col_col2im_are_adjoint() {
        // <im2col(x), y> == <x, col2im_add(y)> for random-ish x, y.
        let (c, hp, wp, kh, kw, s) = (2usize, 6usize, 5usize, 3usize, 3usize, 1usize);
        let x = Array3::from_shape_fn((c, hp, wp), |(a, b, d)| {
            ((a * 31 + b * 7 + d * 13) % 17) as f64 * 0.21 - 1.0
        });
        let cols = im2col(&x, kh, kw, s);
        let y = Array2::from_shape_fn(cols.dim(), |(a, b)| ((a * 5 + b * 11) % 23) as f64 * 0.1);
        let lhs: f64 = (&cols * &y).sum();
        let mut back = Array3::zeros((c, hp, wp));
        col2im_add(&y, c, hp, wp, kh, kw, s, &mut back);
        let rhs: f64 = (&x * &back).sum();
        assert!((lhs - rhs).abs() < 1e-9, "{lhs} vs {rhs}");
    }

    #[test]
    fn pad_unpad_are_adjoint() {
        for mode in [PadMode::Zero, PadMode::Reflect] {
            let (c, h, w, p) = (1usize, 5usize, 4usize, 2usize);
            let x = Array3::from_shape_fn((c, h, w), |(_, b, d)| (b * 4 + d) as f64 * 0.37 - 1.5);
            let xp = pad(&x.view(), p, mode);
            let y = Array3::from_shape_fn(xp.dim(), |(_, b, d)| ((b * 3 + d * 7) % 11) as f64 * 0.2);
            let lhs: f64 = (&xp * &y).sum();
            let back = unpad_adjoint(&y, p, mode, h, w);
            let rhs: f64 = (&x * &back).sum();
            assert!((lhs - rhs).abs() < 1e-9, "{mode:?}: {lhs} vs {rhs}");
        }
    }

    #[test]
    fn sep_passes_are_adjoint() {
        let kernel = [0.25f64, 0.5, 0.25];
        for axis in [1usize, 2usize] {
            let x = Array3::from_shape_fn((2, 6, 7), |(a, b, d)| {
                ((a * 3 + b * 5 + d) % 13) as f64 * 0.3 - 1.0
            });
            let y = Array3::from_shape_fn((2, 6, 7), |(a, b, d)| {
                ((a + b * 2 + d * 3) % 7) as f64 * 0.5 - 1.2
            });
            let lhs: f64 = (&sep_pass_fwd(&x.view(), &kernel, axis) * &y).sum();
            let rhs: f64 = (&x * &sep_pass_adj(&y.view(), &kernel, axis)).sum();
            assert!((lhs - rhs).abs() < 1e-9, "axis {axis}: {lhs} vs {rhs}");
        }
    }
}
