//! Full-scene inference: tiled generator forwards with linear-blend overlap
//! averaging, plus the bicubic upscaling baseline.

use ndarray::{Array3, Array4, Axis, s};

use crate::dataset::patches::{hat_window, overlap_add, upsample3, PatchProvenance};
use crate::dataset::{denormalize_lst, normalize_lst, NormRange, SampleTriple};
use crate::error::{Error, Result};
use crate::model::generator::{generator_graph, GeneratorConfig, GeneratorInputs};
use crate::model::ModelCtx;
use crate::nn::graph::Graph;
use crate::nn::params::ParamStore;
use crate::raster::{resample_bicubic, GridSpec, Raster};

/// Default tile stride for full-scene inference (half the patch side).
pub const TILE_STRIDE: usize = 48;
/// Tiles per forward pass.
pub const TILE_BATCH: usize = 8;

/// Normalized full-scene model inputs on the fine grid.
pub struct SceneInputs {
    pub grid: GridSpec,
    pub fine_indices: Array3<f32>,
    pub mid_indices_up: Array3<f32>,
    pub mid_lst_up: Array3<f32>,
    pub coarse_t1: Array3<f32>,
    pub coarse_t2: Array3<f32>,
}

/// Lift a sample onto the fine grid: bicubic coarse resampling, 3x mid
/// upsampling, LST normalization.
pub fn prepare_scene(sample: &SampleTriple, range: &NormRange) -> Result<SceneInputs> {
    let grid = sample.fine_grid().clone();
    let norm = |r: &Raster| -> Result<Array3<f32>> {
        let (n, _) = normalize_lst(r, range)?;
        n.to_array3()
    };
    Ok(SceneInputs {
        fine_indices: sample.t1_indices_fine.to_array3()?,
        mid_indices_up: upsample3(&sample.t1_indices_mid.to_array3()?),
        mid_lst_up: upsample3(&norm(&sample.t1_lst_mid)?),
        coarse_t1: norm(&resample_bicubic(&sample.t1_lst_coarse, &grid)?)?,
        coarse_t2: norm(&resample_bicubic(&sample.t2_lst_coarse, &grid)?)?,
        grid,
    })
}

/// Tile origins covering `extent` with `stride`, snapping the last tile to the
/// edge.
pub fn tile_positions(extent: usize, size: usize, stride: usize) -> Result<Vec<usize>> {
    if extent < size {
        return Err(Error::invalid(format!(
            "scene extent {extent} smaller than tile size {size}"
        )));
    }
    let mut positions: Vec<usize> = (0..=(extent - size)).step_by(stride).collect();
    if *positions.last().expect("non-empty") != extent - size {
        positions.push(extent - size);
    }
    Ok(positions)
}

fn cut3(x: &Array3<f32>, row: usize, col: usize, size: usize) -> Array3<f32> {
    x.slice(s![.., row..row + size, col..col + size]).to_owned()
}

fn stack_batch(parts: &[Array3<f32>]) -> Array4<f32> {
    let views: Vec<_> = parts.iter().map(|p| p.view()).collect();
    ndarray::stack(Axis(0), &views).expect("uniform tile shapes")
}

/// Run the generator over a full scene via overlapping tiles and blend the
/// overlaps with a separable triangular window. Returns fine-grid LST in
/// Kelvin.
pub fn infer_scene(
    generator: &ParamStore<f32>,
    cfg: &GeneratorConfig,
    sample: &SampleTriple,
    range: &NormRange,
) -> Result<Raster> {
    cfg.validate()?;
    let scene = prepare_scene(sample, range)?;
    let size = cfg.base_size;
    let (h, w) = (scene.grid.height, scene.grid.width);
    let rows = tile_positions(h, size, TILE_STRIDE)?;
    let cols = tile_positions(w, size, TILE_STRIDE)?;

    let mut provenance = Vec::new();
    for &r in &rows {
        for &c in &cols {
            provenance.push(PatchProvenance {
                sample_id: sample.id.clone(),
                row: r,
                col: c,
            });
        }
    }

    let mut outputs: Vec<Array3<f32>> = Vec::with_capacity(provenance.len());
    for chunk in provenance.chunks(TILE_BATCH) {
        let batch_of = |src: &Array3<f32>| -> Array4<f32> {
            let parts: Vec<Array3<f32>> = chunk
                .iter()
                .map(|p| cut3(src, p.row, p.col, size))
                .collect();
            stack_batch(&parts)
        };
        let inputs = GeneratorInputs {
            fine_indices_t1: batch_of(&scene.fine_indices),
            mid_indices_t1: batch_of(&scene.mid_indices_up),
            mid_lst_t1: batch_of(&scene.mid_lst_up),
            coarse_lst_t1: batch_of(&scene.coarse_t1),
            coarse_lst_t2: batch_of(&scene.coarse_t2),
        };
        let mut graph = Graph::<f32>::new(false);
        let mut ctx = ModelCtx::new(&mut graph, generator, false);
        let out = generator_graph(&mut ctx, cfg, &inputs)?;
        let values = graph.value(out);
        for k in 0..chunk.len() {
            outputs.push(values.index_axis(Axis(0), k).to_owned());
        }
    }

    let patches = stack_batch(&outputs);
    let window = hat_window(size);
    let blended = overlap_add(&patches, &provenance, h, w, Some(&window))?;
    let normalized = Raster::from_array3(scene.grid.clone(), &blended)?;
    denormalize_lst(&normalized, range)
}

/// The bicubic upscaling baseline: target-date coarse LST interpolated
/// directly onto the fine grid (Kelvin).
pub fn bicubic_baseline(sample: &SampleTriple) -> Result<Raster> {
    resample_bicubic(&sample.t2_lst_coarse, sample.fine_grid())
}
