//! Grid-aware raster representation and the resampling / averaging / filling /
//! smoothing primitives shared by the rest of the pipeline.
//!
//! Values are stored band-major (`bands * height * width`) in `f32`, Kelvin for
//! LST bands and unitless in `[-1, 1]` for index bands. A single per-pixel mask
//! marks valid pixels; masked pixels carry a NaN sentinel and are never read by
//! the arithmetic operations (which either reject masked inputs or treat the
//! mask explicitly).

pub mod archive;
pub mod geotiff;

use ndarray::{Array2, Array3, ArrayView2};

use crate::error::{Error, Result};

/// Geometry of a raster grid in a projected CRS.
///
/// `origin_x` / `origin_y` locate the outer corner of the top-left pixel;
/// world `y` decreases with increasing row (north-up convention). The world
/// center of pixel `(row, col)` is `(origin_x + (col + 0.5) * pixel_size,
/// origin_y - (row + 0.5) * pixel_size)`.
#[derive(Debug, Clone, PartialEq)]
pub struct GridSpec {
    pub width: usize,
    pub height: usize,
    /// Ground size of one pixel in meters.
    pub pixel_size: f64,
    pub origin_x: f64,
    pub origin_y: f64,
    /// Text CRS code, e.g. `"EPSG:32631"`.
    pub crs_id: String,
}

impl GridSpec {
    pub fn new(
        width: usize,
        height: usize,
        pixel_size: f64,
        origin_x: f64,
        origin_y: f64,
        crs_id: impl Into<String>,
    ) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(Error::invalid("grid width and height must be positive"));
        }
        if !(pixel_size > 0.0) {
            return Err(Error::invalid("pixel_size must be positive"));
        }
        Ok(GridSpec {
            width,
            height,
            pixel_size,
            origin_x,
            origin_y,
            crs_id: crs_id.into(),
        })
    }

    pub fn pixels(&self) -> usize {
        self.width * self.height
    }

    /// World coordinates of a pixel center.
    pub fn pixel_center(&self, row: usize, col: usize) -> (f64, f64) {
        (
            self.origin_x + (col as f64 + 0.5) * self.pixel_size,
            self.origin_y - (row as f64 + 0.5) * self.pixel_size,
        )
    }

    /// Extent as `(min_x, min_y, max_x, max_y)`.
    pub fn extent(&self) -> (f64, f64, f64, f64) {
        (
            self.origin_x,
            self.origin_y - self.height as f64 * self.pixel_size,
            self.origin_x + self.width as f64 * self.pixel_size,
            self.origin_y,
        )
    }

    pub fn overlaps(&self, other: &GridSpec) -> bool {
        let (ax0, ay0, ax1, ay1) = self.extent();
        let (bx0, by0, bx1, by1) = other.extent();
        ax0 < bx1 && bx0 < ax1 && ay0 < by1 && by0 < ay1
    }

    /// Grid covering the same extent with pixels `factor` times larger.
    pub fn coarsen(&self, factor: usize) -> Result<GridSpec> {
        if factor == 0 {
            return Err(Error::invalid("coarsen factor must be positive"));
        }
        if self.width % factor != 0 || self.height % factor != 0 {
            return Err(Error::NotDivisible {
                width: self.width,
                height: self.height,
                factor,
            });
        }
        GridSpec::new(
            self.width / factor,
            self.height / factor,
            self.pixel_size * factor as f64,
            self.origin_x,
            self.origin_y,
            self.crs_id.clone(),
        )
    }

    /// Grid covering the same extent with pixels `factor` times smaller.
    pub fn refine(&self, factor: usize) -> Result<GridSpec> {
        if factor == 0 {
            return Err(Error::invalid("refine factor must be positive"));
        }
        GridSpec::new(
            self.width * factor,
            self.height * factor,
            self.pixel_size / factor as f64,
            self.origin_x,
            self.origin_y,
            self.crs_id.clone(),
        )
    }

    /// Sub-grid of `size_h x size_w` pixels whose top-left pixel is `(row0, col0)`.
    pub fn window(&self, row0: usize, col0: usize, size_h: usize, size_w: usize) -> Result<GridSpec> {
        if row0 + size_h > self.height || col0 + size_w > self.width {
            return Err(Error::invalid(format!(
                "window {}x{} at ({},{}) exceeds grid {}x{}",
                size_h, size_w, row0, col0, self.height, self.width
            )));
        }
        GridSpec::new(
            size_w,
            size_h,
            self.pixel_size,
            self.origin_x + col0 as f64 * self.pixel_size,
            self.origin_y - row0 as f64 * self.pixel_size,
            self.crs_id.clone(),
        )
    }

    /// Geometric equality within an absolute tolerance (CRS ids must match).
    pub fn same_geometry(&self, other: &GridSpec, tol: f64) -> bool {
        self.width == other.width
            && self.height == other.height
            && (self.pixel_size - other.pixel_size).abs() <= tol
            && (self.origin_x - other.origin_x).abs() <= tol
            && (self.origin_y - other.origin_y).abs() <= tol
            && self.crs_id == other.crs_id
    }
}

/// Sentinel stored at masked pixels.
pub const MASKED_SENTINEL: f32 = f32::NAN;

/// A single- or multi-band georeferenced float grid with a per-pixel validity mask.
#[derive(Debug, Clone)]
pub struct Raster {
    pub grid: GridSpec,
    pub bands: usize,
    values: Vec<f32>,
    mask: Vec<bool>,
}

impl Raster {
    /// Build a raster from band-major values and a per-pixel mask. Masked pixels
    /// are overwritten with the NaN sentinel in every band.
    pub fn new(grid: GridSpec, bands: usize, mut values: Vec<f32>, mask: Vec<bool>) -> Result<Self> {
        if bands == 0 {
            return Err(Error::invalid("raster must have at least one band"));
        }
        if values.len() != bands * grid.pixels() {
            return Err(Error::ShapeMismatch(format!(
                "expected {} values ({} bands x {} pixels), got {}",
                bands * grid.pixels(),
                bands,
                grid.pixels(),
                values.len()
            )));
        }
        if mask.len() != grid.pixels() {
            return Err(Error::ShapeMismatch(format!(
                "expected {} mask entries, got {}",
                grid.pixels(),
                mask.len()
            )));
        }
        let pixels = grid.pixels();
        for (i, valid) in mask.iter().enumerate() {
            if !valid {
                for b in 0..bands {
                    values[b * pixels + i] = MASKED_SENTINEL;
                }
            }
        }
        Ok(Raster {
            grid,
            bands,
            values,
            mask,
        })
    }

    /// Fully valid raster from values only.
    pub fn from_values(grid: GridSpec, bands: usize, values: Vec<f32>) -> Result<Self> {
        let mask = vec![true; grid.pixels()];
        Raster::new(grid, bands, values, mask)
    }

    /// Fully valid single-band raster with a constant value.
    pub fn filled(grid: GridSpec, bands: usize, value: f32) -> Self {
        let pixels = grid.pixels();
        Raster {
            bands,
            values: vec![value; bands * pixels],
            mask: vec![true; pixels],
            grid,
        }
    }

    pub fn width(&self) -> usize {
        self.grid.width
    }

    pub fn height(&self) -> usize {
        self.grid.height
    }

    pub fn get(&self, band: usize, row: usize, col: usize) -> f32 {
        self.values[band * self.grid.pixels() + row * self.grid.width + col]
    }

    pub fn set(&mut self, band: usize, row: usize, col: usize, value: f32) {
        let i = band * self.grid.pixels() + row * self.grid.width + col;
        self.values[i] = value;
    }

    pub fn is_valid(&self, row: usize, col: usize) -> bool {
        self.mask[row * self.grid.width + col]
    }

    pub fn set_valid(&mut self, row: usize, col: usize, valid: bool) {
        self.mask[row * self.grid.width + col] = valid;
    }

    pub fn band(&self, band: usize) -> &[f32] {
        let pixels = self.grid.pixels();
        &self.values[band * pixels..(band + 1) * pixels]
    }

    pub fn band_mut(&mut self, band: usize) -> &mut [f32] {
        let pixels = self.grid.pixels();
        &mut self.values[band * pixels..(band + 1) * pixels]
    }

    pub fn band_view(&self, band: usize) -> ArrayView2<'_, f32> {
        ArrayView2::from_shape((self.grid.height, self.grid.width), self.band(band))
            .expect("band length matches grid")
    }

    pub fn values(&self) -> &[f32] {
        &self.values
    }

    pub fn mask(&self) -> &[bool] {
        &self.mask
    }

    pub fn masked_count(&self) -> usize {
        self.mask.iter().filter(|v| !**v).count()
    }

    pub fn is_fully_valid(&self) -> bool {
        self.mask.iter().all(|v| *v)
    }

    /// Values of one band as an owned `[height, width]` array.
    pub fn band_array(&self, band: usize) -> Array2<f32> {
        self.band_view(band).to_owned()
    }

    /// All bands as an owned `[bands, height, width]` array. The raster must be
    /// fully valid.
    pub fn to_array3(&self) -> Result<Array3<f32>> {
        self.require_fully_valid()?;
        Ok(
            Array3::from_shape_vec(
                (self.bands, self.grid.height, self.grid.width),
                self.values.clone(),
            )
            .expect("value length matches shape"),
        )
    }

    pub fn from_array3(grid: GridSpec, data: &Array3<f32>) -> Result<Raster> {
        let (bands, h, w) = data.dim();
        if h != grid.height || w != grid.width {
            return Err(Error::ShapeMismatch(format!(
                "array {}x{} does not match grid {}x{}",
                h, w, grid.height, grid.width
            )));
        }
        let values = data.iter().copied().collect();
        Raster::from_values(grid, bands, values)
    }

    /// Crop to a window; the mask is carried over.
    pub fn crop(&self, row0: usize, col0: usize, size_h: usize, size_w: usize) -> Result<Raster> {
        let grid = self.grid.window(row0, col0, size_h, size_w)?;
        let mut values = Vec::with_capacity(self.bands * size_h * size_w);
        for b in 0..self.bands {
            for r in row0..row0 + size_h {
                for c in col0..col0 + size_w {
                    values.push(self.get(b, r, c));
                }
            }
        }
        let mut mask = Vec::with_capacity(size_h * size_w);
        for r in row0..row0 + size_h {
            for c in col0..col0 + size_w {
                mask.push(self.is_valid(r, c));
            }
        }
        Raster::new(grid, self.bands, values, mask)
    }

    fn require_fully_valid(&self) -> Result<()> {
        let count = self.masked_count();
        if count > 0 {
            return Err(Error::MaskedInput { count });
        }
        Ok(())
    }
}

/// Non-overlapping `factor x factor` block means.
///
/// The input must be fully valid (gap-filled) and its dimensions divisible by
/// `factor`. Each output pixel is the arithmetic mean of its input block; the
/// output grid covers the same extent with `factor` times larger pixels.
pub fn block_average(r: &Raster, factor: usize) -> Result<Raster> {
    if factor == 0 {
        return Err(Error::invalid("block_average factor must be positive"));
    }
    r.require_fully_valid()?;
    let grid = r.grid.coarsen(factor)?;
    let (oh, ow) = (grid.height, grid.width);
    let mut values = vec![0f32; r.bands * oh * ow];
    let inv = 1.0 / (factor * factor) as f64;
    for b in 0..r.bands {
        let band = r.band(b);
        let out = &mut values[b * oh * ow..(b + 1) * oh * ow];
        for or in 0..oh {
            for oc in 0..ow {
                let mut acc = 0f64;
                for dr in 0..factor {
                    let row = or * factor + dr;
                    let base = row * r.grid.width + oc * factor;
                    for dc in 0..factor {
                        acc += band[base + dc] as f64;
                    }
                }
                out[or * ow + oc] = (acc * inv) as f32;
            }
        }
    }
    Raster::from_values(grid, r.bands, values)
}

/// Catmull-Rom cubic kernel (Keys, a = -0.5).
fn cubic_weight(t: f64) -> f64 {
    const A: f64 = -0.5;
    let t = t.abs();
    if t < 1.0 {
        (A + 2.0) * t * t * t - (A + 3.0) * t * t + 1.0
    } else if t < 2.0 {
        A * t * t * t - 5.0 * A * t * t + 8.0 * A * t - 4.0 * A
    } else {
        0.0
    }
}

/// Bicubic interpolation of a fully valid raster onto a target grid.
///
/// Each target pixel center is mapped into fractional source pixel coordinates
/// and interpolated from its 4x4 neighborhood with edge clamping. Errors if the
/// extents do not overlap. Sampling a raster onto its own grid is the identity.
pub fn resample_bicubic(r: &Raster, target: &GridSpec) -> Result<Raster> {
    r.require_fully_valid()?;
    if !r.grid.overlaps(target) {
        return Err(Error::NoOverlap);
    }
    let (sh, sw) = (r.grid.height as isize, r.grid.width as isize);
    let mut values = vec![0f32; r.bands * target.pixels()];
    for b in 0..r.bands {
        let band = r.band(b);
        let out = &mut values[b * target.pixels()..(b + 1) * target.pixels()];
        for tr in 0..target.height {
            for tc in 0..target.width {
                let (wx, wy) = target.pixel_center(tr, tc);
                // Fractional source pixel coordinates (pixel centers at integers).
                let sx = (wx - r.grid.origin_x) / r.grid.pixel_size - 0.5;
                let sy = (r.grid.origin_y - wy) / r.grid.pixel_size - 0.5;
                out[tr * target.width + tc] = bicubic_sample(band, sw, sh, sx, sy);
            }
        }
    }
    Raster::from_values(target.clone(), r.bands, values)
}

/// Bicubic sample at fractional pixel coordinates with edge clamping.
pub(crate) fn bicubic_sample(band: &[f32], width: isize, height: isize, sx: f64, sy: f64) -> f32 {
    let x0 = sx.floor() as isize;
    let y0 = sy.floor() as isize;
    let fx = sx - x0 as f64;
    let fy = sy - y0 as f64;
    let mut wy = [0f64; 4];
    let mut wx = [0f64; 4];
    for (k, w) in wx.iter_mut().enumerate() {
        *w = cubic_weight(fx - (k as f64 - 1.0));
    }
    for (k, w) in wy.iter_mut().enumerate() {
        *w = cubic_weight(fy - (k as f64 - 1.0));
    }
    let mut acc = 0f64;
    for (ky, wyk) in wy.iter().enumerate() {
        let row = (y0 + ky as isize - 1).clamp(0, height - 1);
        let base = row * width;
        for (kx, wxk) in wx.iter().enumerate() {
            let col = (x0 + kx as isize - 1).clamp(0, width - 1);
            acc += wyk * wxk * band[(base + col) as usize] as f64;
        }
    }
    acc as f32
}

/// Fill every masked pixel with the mean of valid pixels in an expanding
/// centered window (3x3, then 5x5, 7x7, ...) until at least one valid neighbor
/// is found. Only originally valid pixels contribute; previously valid pixels
/// are unchanged and the output mask is all-valid.
pub fn fill_gaps_adaptive(r: &Raster) -> Result<Raster> {
    let valid_count = r.grid.pixels() - r.masked_count();
    if valid_count == 0 {
        return Err(Error::AllMasked);
    }
    let mut out = r.clone();
    if r.is_fully_valid() {
        return Ok(out);
    }
    let (h, w) = (r.grid.height as isize, r.grid.width as isize);
    let max_radius = h.max(w);
    for row in 0..r.grid.height {
        for col in 0..r.grid.width {
            if r.is_valid(row, col) {
                continue;
            }
            let mut filled = vec![0f64; r.bands];
            let mut radius = 1isize;
            loop {
                let mut count = 0usize;
                let mut sums = vec![0f64; r.bands];
                let r0 = (row as isize - radius).max(0);
                let r1 = (row as isize + radius).min(h - 1);
                let c0 = (col as isize - radius).max(0);
                let c1 = (col as isize + radius).min(w - 1);
                for rr in r0..=r1 {
                    for cc in c0..=c1 {
                        if r.is_valid(rr as usize, cc as usize) {
                            count += 1;
                            for (b, sum) in sums.iter_mut().enumerate() {
                                *sum += r.get(b, rr as usize, cc as usize) as f64;
                            }
                        }
                    }
                }
                if count > 0 {
                    for (f, sum) in filled.iter_mut().zip(&sums) {
                        *f = sum / count as f64;
                    }
                    break;
                }
                radius += 1;
                if radius > max_radius {
                    // Unreachable with valid_count > 0, kept as a hard stop.
                    return Err(Error::AllMasked);
                }
            }
            for (b, f) in filled.iter().enumerate() {
                out.set(b, row, col, *f as f32);
            }
            out.set_valid(row, col, true);
        }
    }
    Ok(out)
}

/// Normalized 1D Gaussian samples at integer offsets `-radius..=radius`.
pub fn gaussian_kernel_1d(sigma: f64, radius: usize) -> Vec<f64> {
    let mut k: Vec<f64> = (0..=2 * radius)
        .map(|i| {
            let x = i as f64 - radius as f64;
            (-(x * x) / (2.0 * sigma * sigma)).exp()
        })
        .collect();
    let sum: f64 = k.iter().sum();
    for v in &mut k {
        *v /= sum;
    }
    k
}

/// Side length `2 * ceil(3 * sigma) + 1` of the Gaussian kernel for a given sigma.
pub fn gaussian_kernel_side(sigma: f64) -> usize {
    2 * (3.0 * sigma).ceil() as usize + 1
}

/// Square 2D Gaussian kernel: side `2 * ceil(3 * sigma) + 1`, sampled from the
/// centered isotropic Gaussian and renormalized to sum exactly 1.
pub fn gaussian_kernel(sigma: f64) -> Result<Array2<f64>> {
    if !(sigma > 0.0) {
        return Err(Error::invalid("sigma must be positive"));
    }
    let side = gaussian_kernel_side(sigma);
    let radius = (side - 1) / 2;
    let norm = 1.0 / (2.0 * std::f64::consts::PI * sigma * sigma);
    let mut k = Array2::zeros((side, side));
    for i in 0..side {
        for j in 0..side {
            let y = i as f64 - radius as f64;
            let x = j as f64 - radius as f64;
            k[(i, j)] = norm * (-(x * x + y * y) / (2.0 * sigma * sigma)).exp();
        }
    }
    let sum = k.sum();
    k.mapv_inplace(|v| v / sum);
    Ok(k)
}

/// Mirror an index about the array edges without repeating the edge sample
/// (`-1 -> 1`, `n -> n - 2`).
pub(crate) fn reflect_index(i: isize, n: usize) -> usize {
    let n = n as isize;
    debug_assert!(n >= 1);
    if n == 1 {
        return 0;
    }
    let period = 2 * (n - 1);
    let mut i = i.rem_euclid(period);
    if i >= n {
        i = period - i;
    }
    i as usize
}

/// Depthwise Gaussian smoothing of a `[channels, height, width]` map with
/// reflective padding. Separable 1D passes; output shape equals input shape.
pub fn gaussian_smooth(x: &Array3<f32>, sigma: f64) -> Result<Array3<f32>> {
    if !(sigma > 0.0) {
        return Err(Error::invalid("sigma must be positive"));
    }
    let side = gaussian_kernel_side(sigma);
    let (c, h, w) = x.dim();
    if h < side || w < side {
        return Err(Error::ShapeMismatch(format!(
            "input {}x{} smaller than kernel side {}",
            h, w, side
        )));
    }
    let radius = ((side - 1) / 2) as isize;
    let k = gaussian_kernel_1d(sigma, radius as usize);
    let mut tmp = Array3::<f32>::zeros((c, h, w));
    // Horizontal pass.
    for ch in 0..c {
        for row in 0..h {
            for col in 0..w {
                let mut acc = 0f64;
                for (ki, kv) in k.iter().enumerate() {
                    let src = reflect_index(col as isize + ki as isize - radius, w);
                    acc += kv * x[(ch, row, src)] as f64;
                }
                tmp[(ch, row, col)] = acc as f32;
            }
        }
    }
    // Vertical pass.
    let mut out = Array3::<f32>::zeros((c, h, w));
    for ch in 0..c {
        for row in 0..h {
            for col in 0..w {
                let mut acc = 0f64;
                for (ki, kv) in k.iter().enumerate() {
                    let src = reflect_index(row as isize + ki as isize - radius, h);
                    acc += kv * tmp[(ch, src, col)] as f64;
                }
                out[(ch, row, col)] = acc as f32;
            }
        }
    }
    Ok(out)
}

/// Convenience grid for tests and synthetic data.
pub fn simple_grid(width: usize, height: usize, pixel_size: f64) -> GridSpec {
    GridSpec::new(width, height, pixel_size, 0.0, height as f64 * pixel_size, "EPSG:32631")
        .expect("valid grid")
}
