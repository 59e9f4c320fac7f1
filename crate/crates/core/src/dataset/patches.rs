//! Sliding-window patch extraction with co-located fine/mid footprints, plus
//! overlap-add reassembly and the patch archive format.

use std::path::Path;

use ndarray::{Array2, Array3, Array4, Axis};
use serde::{Deserialize, Serialize};

use crate::dataset::{normalize_lst, NormRange, SampleTriple};
use crate::error::{Error, Result};
use crate::raster::{archive, bicubic_sample, resample_bicubic, Raster};

pub const FINE_PATCH: usize = 96;
pub const FINE_STRIDE: usize = 24;

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct PatchProvenance {
    pub sample_id: String,
    /// Top-left corner of the fine patch in scene pixel coordinates.
    pub row: usize,
    pub col: usize,
}

/// Aligned patch arrays for every sample member. Fine members are
/// `fine_size`-sided, mid members a third of that; LST members are normalized,
/// index members raw. Coarse members have been resampled onto the fine grid.
#[derive(Debug, Clone)]
pub struct PatchSet {
    pub fine_size: usize,
    pub fine_stride: usize,
    pub normalization: NormRange,
    pub provenance: Vec<PatchProvenance>,
    pub t1_indices_fine: Array4<f32>,
    pub t1_indices_mid: Array4<f32>,
    pub t1_lst_mid: Array4<f32>,
    pub t1_lst_coarse: Array4<f32>,
    pub t2_lst_coarse: Array4<f32>,
    pub t2_lst_mid: Option<Array4<f32>>,
}

impl PatchSet {
    pub fn len(&self) -> usize {
        self.provenance.len()
    }

    pub fn is_empty(&self) -> bool {
        self.provenance.is_empty()
    }

    pub fn mid_size(&self) -> usize {
        self.fine_size / 3
    }

    /// Concatenate patch sets from several samples.
    pub fn merge(mut sets: Vec<PatchSet>) -> Result<PatchSet> {
        if sets.is_empty() {
            return Err(Error::invalid("cannot merge zero patch sets"));
        }
        let first = sets.remove(0);
        let mut provenance = first.provenance;
        let mut parts = MergeParts::from(first.t1_indices_fine);
        let mut parts_mid_idx = MergeParts::from(first.t1_indices_mid);
        let mut parts_mid_lst = MergeParts::from(first.t1_lst_mid);
        let mut parts_c1 = MergeParts::from(first.t1_lst_coarse);
        let mut parts_c2 = MergeParts::from(first.t2_lst_coarse);
        let mut mid_t2: Option<MergeParts> = first.t2_lst_mid.map(MergeParts::from);
        for set in sets {
            if set.fine_size != first_size(&parts) {
                return Err(Error::invalid("patch sets disagree on patch size"));
            }
            provenance.extend(set.provenance);
            parts.push(set.t1_indices_fine);
            parts_mid_idx.push(set.t1_indices_mid);
            parts_mid_lst.push(set.t1_lst_mid);
            parts_c1.push(set.t1_lst_coarse);
            parts_c2.push(set.t2_lst_coarse);
            match (&mut mid_t2, set.t2_lst_mid) {
                (Some(acc), Some(more)) => acc.push(more),
                (None, None) => {}
                _ => {
                    return Err(Error::invalid(
                        "cannot merge patch sets with and without target mid LST",
                    ))
                }
            }
        }
        Ok(PatchSet {
            fine_size: first_size(&parts),
            fine_stride: FINE_STRIDE,
            normalization: NormRange::default(),
            provenance,
            t1_indices_fine: parts.concat()?,
            t1_indices_mid: parts_mid_idx.concat()?,
            t1_lst_mid: parts_mid_lst.concat()?,
            t1_lst_coarse: parts_c1.concat()?,
            t2_lst_coarse: parts_c2.concat()?,
            t2_lst_mid: mid_t2.map(|m| m.concat()).transpose()?,
        })
    }
}

struct MergeParts {
    parts: Vec<Array4<f32>>,
}

impl MergeParts {
    fn from(a: Array4<f32>) -> Self {
        MergeParts { parts: vec![a] }
    }
    fn push(&mut self, a: Array4<f32>) {
        self.parts.push(a);
    }
    fn concat(self) -> Result<Array4<f32>> {
        let views: Vec<_> = self.parts.iter().map(|a| a.view()).collect();
        ndarray::concatenate(Axis(0), &views)
            .map_err(|e| Error::ShapeMismatch(format!("patch concat: {e}")))
    }
}

fn first_size(parts: &MergeParts) -> usize {
    parts.parts[0].dim().2
}

/// Number of sliding-window positions along one axis.
pub fn patch_count_1d(extent: usize, size: usize, stride: usize) -> usize {
    if extent < size {
        0
    } else {
        (extent - size) / stride + 1
    }
}

/// Total patches for a scene of `height x width`.
pub fn patch_count(height: usize, width: usize, size: usize, stride: usize) -> usize {
    patch_count_1d(height, size, stride) * patch_count_1d(width, size, stride)
}

fn cut_patch(values: &Array3<f32>, row: usize, col: usize, size: usize) -> Array3<f32> {
    values
        .slice(ndarray::s![.., row..row + size, col..col + size])
        .to_owned()
}

/// Extract aligned sliding-window patches from one sample.
///
/// Fine members are cut at `fine_size`/`fine_stride`; mid members at one third
/// of both, on the co-located footprint. Coarse LST is resampled onto the fine
/// grid first. LST patches are normalized with the provided range.
pub fn extract_patches(
    sample: &SampleTriple,
    range: &NormRange,
    fine_size: usize,
    fine_stride: usize,
) -> Result<PatchSet> {
    if fine_size % 3 != 0 || fine_stride % 3 != 0 {
        return Err(Error::invalid(
            "fine patch size and stride must be divisible by 3",
        ));
    }
    let fine = &sample.t1_indices_fine;
    let (h, w) = (fine.grid.height, fine.grid.width);
    if h < fine_size || w < fine_size {
        return Err(Error::invalid(format!(
            "scene {h}x{w} smaller than patch size {fine_size}"
        )));
    }
    let fine_grid = fine.grid.clone();

    let norm = |r: &Raster| -> Result<Array3<f32>> {
        let (n, _) = normalize_lst(r, range)?;
        n.to_array3()
    };
    let fine_idx = fine.to_array3()?;
    let mid_idx = sample.t1_indices_mid.to_array3()?;
    let mid_lst = norm(&sample.t1_lst_mid)?;
    let coarse_t1 = norm(&resample_bicubic(&sample.t1_lst_coarse, &fine_grid)?)?;
    let coarse_t2 = norm(&resample_bicubic(&sample.t2_lst_coarse, &fine_grid)?)?;
    let mid_t2 = sample
        .t2_lst_mid
        .as_ref()
        .map(|r| norm(r))
        .transpose()?;

    let mid_size = fine_size / 3;
    let rows = patch_count_1d(h, fine_size, fine_stride);
    let cols = patch_count_1d(w, fine_size, fine_stride);
    let count = rows * cols;

    let mut provenance = Vec::with_capacity(count);
    let mut fine_idx_p = Vec::with_capacity(count);
    let mut mid_idx_p = Vec::with_capacity(count);
    let mut mid_lst_p = Vec::with_capacity(count);
    let mut c1_p = Vec::with_capacity(count);
    let mut c2_p = Vec::with_capacity(count);
    let mut mid_t2_p = Vec::with_capacity(if mid_t2.is_some() { count } else { 0 });

    for ri in 0..rows {
        for ci in 0..cols {
            let (row, col) = (ri * fine_stride, ci * fine_stride);
            let (mrow, mcol) = (row / 3, col / 3);
            provenance.push(PatchProvenance {
                sample_id: sample.id.clone(),
                row,
                col,
            });
            fine_idx_p.push(cut_patch(&fine_idx, row, col, fine_size));
            mid_idx_p.push(cut_patch(&mid_idx, mrow, mcol, mid_size));
            mid_lst_p.push(cut_patch(&mid_lst, mrow, mcol, mid_size));
            c1_p.push(cut_patch(&coarse_t1, row, col, fine_size));
            c2_p.push(cut_patch(&coarse_t2, row, col, fine_size));
            if let Some(m) = &mid_t2 {
                mid_t2_p.push(cut_patch(m, mrow, mcol, mid_size));
            }
        }
    }

    let stack = |parts: Vec<Array3<f32>>| -> Result<Array4<f32>> {
        let views: Vec<_> = parts.iter().map(|p| p.view()).collect();
        ndarray::stack(Axis(0), &views)
            .map_err(|e| Error::ShapeMismatch(format!("patch stack: {e}")))
    };

    Ok(PatchSet {
        fine_size,
        fine_stride,
        normalization: *range,
        provenance,
        t1_indices_fine: stack(fine_idx_p)?,
        t1_indices_mid: stack(mid_idx_p)?,
        t1_lst_mid: stack(mid_lst_p)?,
        t1_lst_coarse: stack(c1_p)?,
        t2_lst_coarse: stack(c2_p)?,
        t2_lst_mid: if mid_t2.is_some() {
            Some(stack(mid_t2_p)?)
        } else {
            None
        },
    })
}

/// Bicubic 3x upsampling of a `[C, H, W]` array on pixel-center alignment;
/// matches the grid-level resampler for a 3x refined grid over one extent.
pub fn upsample3(x: &Array3<f32>) -> Array3<f32> {
    let (c, h, w) = x.dim();
    let mut out = Array3::zeros((c, h * 3, w * 3));
    for ch in 0..c {
        let band: Vec<f32> = x.index_axis(Axis(0), ch).iter().copied().collect();
        for i in 0..h * 3 {
            let sy = (i as f64 + 0.5) / 3.0 - 0.5;
            for j in 0..w * 3 {
                let sx = (j as f64 + 0.5) / 3.0 - 0.5;
                out[(ch, i, j)] = bicubic_sample(&band, w as isize, h as isize, sx, sy);
            }
        }
    }
    out
}

/// Overlap-add reassembly of patches onto a scene, weighting each patch pixel
/// by `window` (uniform averaging when `None`), then normalizing by the
/// accumulated weight.
pub fn overlap_add(
    patches: &Array4<f32>,
    provenance: &[PatchProvenance],
    scene_h: usize,
    scene_w: usize,
    window: Option<&Array2<f32>>,
) -> Result<Array3<f32>> {
    let (p, c, ph, pw) = patches.dim();
    if p != provenance.len() {
        return Err(Error::ShapeMismatch(format!(
            "{p} patches but {} provenance entries",
            provenance.len()
        )));
    }
    if let Some(wd) = window {
        if wd.dim() != (ph, pw) {
            return Err(Error::ShapeMismatch(
                "window shape must match patch shape".into(),
            ));
        }
    }
    let mut acc = Array3::<f64>::zeros((c, scene_h, scene_w));
    let mut weight = Array2::<f64>::zeros((scene_h, scene_w));
    for (k, prov) in provenance.iter().enumerate() {
        if prov.row + ph > scene_h || prov.col + pw > scene_w {
            return Err(Error::ShapeMismatch(format!(
                "patch at ({}, {}) exceeds scene {scene_h}x{scene_w}",
                prov.row, prov.col
            )));
        }
        for i in 0..ph {
            for j in 0..pw {
                let wgt = window.map(|wd| wd[(i, j)] as f64).unwrap_or(1.0);
                weight[(prov.row + i, prov.col + j)] += wgt;
                for ch in 0..c {
                    acc[(ch, prov.row + i, prov.col + j)] +=
                        wgt * patches[(k, ch, i, j)] as f64;
                }
            }
        }
    }
    let mut out = Array3::<f32>::zeros((c, scene_h, scene_w));
    for i in 0..scene_h {
        for j in 0..scene_w {
            let wgt = weight[(i, j)];
            if wgt <= 0.0 {
                return Err(Error::invalid(format!(
                    "scene pixel ({i}, {j}) not covered by any patch"
                )));
            }
            for ch in 0..c {
                out[(ch, i, j)] = (acc[(ch, i, j)] / wgt) as f32;
            }
        }
    }
    Ok(out)
}

/// Separable triangular blending window (strictly positive everywhere).
pub fn hat_window(size: usize) -> Array2<f32> {
    let mut w1 = vec![0f32; size];
    for (i, v) in w1.iter_mut().enumerate() {
        *v = (i + 1).min(size - i) as f32;
    }
    let mut out = Array2::zeros((size, size));
    for i in 0..size {
        for j in 0..size {
            out[(i, j)] = w1[i] * w1[j];
        }
    }
    out
}

// ---------------------------------------------------------------------------
// Archive I/O
// ---------------------------------------------------------------------------

#[derive(Debug, Serialize, Deserialize)]
struct PatchArchiveMeta {
    fine_size: usize,
    fine_stride: usize,
    normalization: NormRange,
    provenance: Vec<PatchProvenance>,
}

pub fn write_patch_archive(dir: impl AsRef<Path>, set: &PatchSet) -> Result<()> {
    let meta = PatchArchiveMeta {
        fine_size: set.fine_size,
        fine_stride: set.fine_stride,
        normalization: set.normalization,
        provenance: set.provenance.clone(),
    };
    let to_entry = |a: &Array4<f32>| -> (Vec<usize>, Vec<f32>) {
        (a.shape().to_vec(), a.iter().copied().collect())
    };
    let fine_idx = to_entry(&set.t1_indices_fine);
    let mid_idx = to_entry(&set.t1_indices_mid);
    let mid_lst = to_entry(&set.t1_lst_mid);
    let c1 = to_entry(&set.t1_lst_coarse);
    let c2 = to_entry(&set.t2_lst_coarse);
    let mut arrays: Vec<(&str, Vec<usize>, &[f32])> = vec![
        ("t1_indices_fine", fine_idx.0.clone(), &fine_idx.1),
        ("t1_indices_mid", mid_idx.0.clone(), &mid_idx.1),
        ("t1_lst_mid", mid_lst.0.clone(), &mid_lst.1),
        ("t1_lst_coarse", c1.0.clone(), &c1.1),
        ("t2_lst_coarse", c2.0.clone(), &c2.1),
    ];
    let mid_t2 = set.t2_lst_mid.as_ref().map(to_entry);
    if let Some(m) = &mid_t2 {
        arrays.push(("t2_lst_mid", m.0.clone(), &m.1));
    }
    archive::write_archive(dir, &arrays, serde_json::to_value(&meta)?)
}

pub fn read_patch_archive(dir: impl AsRef<Path>) -> Result<PatchSet> {
    let dir = dir.as_ref();
    let header = archive::read_header(dir)?;
    let meta: PatchArchiveMeta = serde_json::from_value(header.metadata.clone())
        .map_err(|e| Error::Archive(format!("patch archive metadata: {e}")))?;
    let load = |name: &str| -> Result<Array4<f32>> {
        let (shape, data) = archive::read_array(dir, name)?;
        if shape.len() != 4 {
            return Err(Error::Archive(format!("array `{name}` is not 4D")));
        }
        Array4::from_shape_vec((shape[0], shape[1], shape[2], shape[3]), data)
            .map_err(|e| Error::Archive(format!("array `{name}`: {e}")))
    };
    let t2_lst_mid = if header.arrays.contains_key("t2_lst_mid") {
        Some(load("t2_lst_mid")?)
    } else {
        None
    };
    Ok(PatchSet {
        fine_size: meta.fine_size,
        fine_stride: meta.fine_stride,
        normalization: meta.normalization,
        provenance: meta.provenance,
        t1_indices_fine: load("t1_indices_fine")?,
        t1_indices_mid: load("t1_indices_mid")?,
        t1_lst_mid: load("t1_lst_mid")?,
        t1_lst_coarse: load("t1_lst_coarse")?,
        t2_lst_coarse: load("t2_lst_coarse")?,
        t2_lst_mid,
    })
}
