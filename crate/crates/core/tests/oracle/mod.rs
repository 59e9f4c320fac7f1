//! Brute-force reference implementations used by the acceptance suite.
//!
//! Deliberately independent of the library: direct definitional loops, a
//! counting-based rank, an explicit mirror function. Shared only through the
//! metric definitions themselves (window size, constants, scale rule).

pub fn rmse(a: &[f64], b: &[f64]) -> f64 {
    let mut acc = 0f64;
    for k in 0..a.len() {
        acc += (a[k] - b[k]) * (a[k] - b[k]);
    }
    (acc / a.len() as f64).sqrt()
}

pub fn psnr(a: &[f64], b: &[f64]) -> f64 {
    let mut lo = f64::INFINITY;
    let mut hi = f64::NEG_INFINITY;
    for v in b {
        if *v < lo {
            lo = *v;
        }
        if *v > hi {
            hi = *v;
        }
    }
    let e = rmse(a, b);
    if e == 0.0 {
        f64::INFINITY
    } else {
        20.0 * ((hi - lo) / e).log10()
    }
}

pub fn ergas(a: &[f64], b: &[f64]) -> f64 {
    let mean: f64 = b.iter().sum::<f64>() / b.len() as f64;
    100.0 * (1.0 / 3.0) * ((rmse(a, b) / mean) * (rmse(a, b) / mean)).sqrt()
}

pub fn sam(a: &[f64], b: &[f64]) -> f64 {
    let mut dot = 0f64;
    let mut na = 0f64;
    let mut nb = 0f64;
    for k in 0..a.len() {
        dot += a[k] * b[k];
        na += a[k] * a[k];
        nb += b[k] * b[k];
    }
    let cos = (dot / (na.sqrt() * nb.sqrt())).clamp(-1.0, 1.0);
    cos.acos() * 180.0 / std::f64::consts::PI
}

pub fn pearson(a: &[f64], b: &[f64]) -> f64 {
    let n = a.len() as f64;
    let ma = a.iter().sum::<f64>() / n;
    let mb = b.iter().sum::<f64>() / n;
    let mut cov = 0f64;
    let mut va = 0f64;
    let mut vb = 0f64;
    for k in 0..a.len() {
        cov += (a[k] - ma) * (b[k] - mb);
        va += (a[k] - ma) * (a[k] - ma);
        vb += (b[k] - mb) * (b[k] - mb);
    }
    cov / (va.sqrt() * vb.sqrt())
}

/// Midrank by counting: 1 + #(smaller) + #(equal, excluding self) / 2.
fn counting_rank(values: &[f64], i: usize) -> f64 {
    let mut smaller = 0usize;
    let mut equal = 0usize;
    for (j, v) in values.iter().enumerate() {
        if *v < values[i] {
            smaller += 1;
        } else if *v == values[i] && j != i {
            equal += 1;
        }
    }
    1.0 + smaller as f64 + equal as f64 / 2.0
}

pub fn spearman(a: &[f64], b: &[f64]) -> f64 {
    let m = a.len() as f64;
    let mut d2 = 0f64;
    for i in 0..a.len() {
        let d = counting_rank(a, i) - counting_rank(b, i);
        d2 += d * d;
    }
    1.0 - 6.0 * d2 / (m * (m * m - 1.0))
}

/// Mirror about the edges without repeating the edge sample.
fn mirror(mut i: i64, n: i64) -> usize {
    loop {
        if i < 0 {
            i = -i;
        } else if i >= n {
            i = 2 * (n - 1) - i;
        } else {
            return i as usize;
        }
    }
}

fn gaussian_window(side: usize, sigma: f64) -> Vec<f64> {
    let r = (side as i64 - 1) / 2;
    let mut w = Vec::with_capacity(side * side);
    for dy in -r..=r {
        for dx in -r..=r {
            w.push((-((dx * dx + dy * dy) as f64) / (2.0 * sigma * sigma)).exp());
        }
    }
    let sum: f64 = w.iter().sum();
    for v in &mut w {
        *v /= sum;
    }
    w
}

struct LocalStats {
    mx: f64,
    my: f64,
    sx: f64,
    sy: f64,
    sxy: f64,
}

fn window_stats(a: &[f64], b: &[f64], h: usize, w: usize, ci: usize, cj: usize) -> LocalStats {
    let side = 11i64;
    let r = (side - 1) / 2;
    let win = gaussian_window(11, 1.5);
    let mut mx = 0f64;
    let mut my = 0f64;
    let mut xx = 0f64;
    let mut yy = 0f64;
    let mut xy = 0f64;
    let mut idx = 0usize;
    for dy in -r..=r {
        let row = mirror(ci as i64 + dy, h as i64);
        for dx in -r..=r {
            let col = mirror(cj as i64 + dx, w as i64);
            let (x, y) = (a[row * w + col], b[row * w + col]);
            let wt = win[idx];
            idx += 1;
            mx += wt * x;
            my += wt * y;
            xx += wt * x * x;
            yy += wt * y * y;
            xy += wt * x * y;
        }
    }
    LocalStats {
        mx,
        my,
        sx: xx - mx * mx,
        sy: yy - my * my,
        sxy: xy - mx * my,
    }
}

fn reference_range(b: &[f64]) -> f64 {
    let mut lo = f64::INFINITY;
    let mut hi = f64::NEG_INFINITY;
    for v in b {
        lo = lo.min(*v);
        hi = hi.max(*v);
    }
    hi - lo
}

pub fn ssim(a: &[f64], b: &[f64], h: usize, w: usize) -> f64 {
    let range = reference_range(b);
    let c1 = (0.01 * range) * (0.01 * range);
    let c2 = (0.03 * range) * (0.03 * range);
    let mut acc = 0f64;
    for i in 0..h {
        for j in 0..w {
            let s = window_stats(a, b, h, w, i, j);
            let num = (2.0 * s.mx * s.my + c1) * (2.0 * s.sxy + c2);
            let den = (s.mx * s.mx + s.my * s.my + c1) * (s.sx + s.sy + c2);
            acc += num / den;
        }
    }
    acc / (h * w) as f64
}

fn downsample2(a: &[f64], h: usize, w: usize) -> Vec<f64> {
    let (oh, ow) = (h / 2, w / 2);
    let mut out = vec![0f64; oh * ow];
    for i in 0..oh {
        for j in 0..ow {
            out[i * ow + j] = (a[(2 * i) * w + 2 * j]
                + a[(2 * i + 1) * w + 2 * j]
                + a[(2 * i) * w + 2 * j + 1]
                + a[(2 * i + 1) * w + 2 * j + 1])
                / 4.0;
        }
    }
    out
}

pub fn ms_ssim(a: &[f64], b: &[f64], h: usize, w: usize) -> f64 {
    // Scale count: largest L <= 5 keeping >= 8 px per side with divisibility.
    let mut scales = 1usize;
    while scales < 5 {
        let div = 1usize << scales;
        if h.min(w) / div >= 8 && h % div == 0 && w % div == 0 {
            scales += 1;
        } else {
            break;
        }
    }
    let full = [0.0448, 0.2856, 0.3001, 0.2363, 0.1333];
    let sum: f64 = full[..scales].iter().sum();
    let weights: Vec<f64> = full[..scales].iter().map(|v| v / sum).collect();

    let range = reference_range(b);
    let c1 = (0.01 * range) * (0.01 * range);
    let c2 = (0.03 * range) * (0.03 * range);

    let mut xa = a.to_vec();
    let mut xb = b.to_vec();
    let (mut ch, mut cw) = (h, w);
    let mut product = 1f64;
    for (level, weight) in weights.iter().enumerate() {
        let mut cs_acc = 0f64;
        let mut lum_acc = 0f64;
        for i in 0..ch {
            for j in 0..cw {
                let s = window_stats(&xa, &xb, ch, cw, i, j);
                cs_acc += (2.0 * s.sxy + c2) / (s.sx + s.sy + c2);
                lum_acc += (2.0 * s.mx * s.my + c1) / (s.mx * s.mx + s.my * s.my + c1);
            }
        }
        let cs = cs_acc / (ch * cw) as f64;
        product *= cs.max(1e-6).powf(*weight);
        if level == weights.len() - 1 {
            let lum = lum_acc / (ch * cw) as f64;
            product *= lum.max(1e-6).powf(*weight);
        } else {
            xa = downsample2(&xa, ch, cw);
            xb = downsample2(&xb, ch, cw);
            ch /= 2;
            cw /= 2;
        }
    }
    product
}
