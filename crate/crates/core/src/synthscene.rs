//! Seeded synthetic multi-resolution scenes with fine-grid ground truth, so
//! the full pipeline can be trained and verified at desk scale. Mid and coarse
//! observations are exact block means of the fine truth, which keeps the
//! physical averaging chain self-consistent across resolutions.

use std::path::{Path, PathBuf};

use chrono::NaiveDate;
use ndarray::Array2;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::dataset::{
    load_sample, AcquisitionTimes, Manifest, NormRange, SampleEntry, SampleTriple, SourceDecls,
    Split,
};
use crate::error::{Error, Result};
use crate::indices::Sensor;
use crate::raster::{block_average, gaussian_smooth, geotiff, GridSpec, Raster};

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SynthConfig {
    pub seed: u64,
    pub fine_size: usize,
    /// Land-cover classes in order: water, vegetation, urban, bare.
    pub class_offsets_k: Vec<f64>,
    /// Correlation length of the smooth fields, in fine pixels.
    pub correlation_length: f64,
    /// Amplitude of the reference-to-target temporal drift.
    pub drift_amplitude_k: f64,
    /// Reflectance noise added to the class band signatures.
    pub index_noise_sigma: f64,
    /// Fine-to-coarse resolution factor (desk-scale surrogate for the real
    /// two-orders gap; the fine-to-mid factor 3 is what the supervision
    /// depends on and stays exact).
    pub coarse_factor: usize,
    pub base_temp_k: f64,
    pub train_scenes: usize,
    pub test_scenes: usize,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            seed: 7,
            fine_size: 288,
            class_offsets_k: vec![-6.0, -2.0, 5.0, 2.0],
            correlation_length: 24.0,
            drift_amplitude_k: 3.0,
            index_noise_sigma: 0.02,
            coarse_factor: 12,
            base_temp_k: 293.15,
            train_scenes: 8,
            test_scenes: 2,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        if self.fine_size % 3 != 0 {
            return Err(Error::invalid("fine size must be divisible by 3"));
        }
        if self.coarse_factor < 2 || self.fine_size % self.coarse_factor != 0 {
            return Err(Error::invalid(
                "fine size must be divisible by the coarse factor (>= 2)",
            ));
        }
        if self.class_offsets_k.len() < 2 {
            return Err(Error::invalid("need at least 2 land-cover classes"));
        }
        if self.train_scenes + self.test_scenes == 0 {
            return Err(Error::invalid("need at least one scene"));
        }
        Ok(())
    }

    pub fn classes(&self) -> usize {
        self.class_offsets_k.len()
    }
}

/// Per-class reflectance signatures (green, red, nir, swir) for the four
/// default classes; extra classes reuse the bare signature with a shift.
const BAND_SIGNATURES: [[f64; 4]; 4] = [
    [0.06, 0.04, 0.02, 0.01], // water: high NDWI, low NDVI
    [0.08, 0.05, 0.45, 0.18], // vegetation: high NDVI
    [0.18, 0.20, 0.22, 0.30], // urban: high NDBI
    [0.20, 0.25, 0.30, 0.38], // bare soil
];

pub struct SynthScene {
    pub triple: SampleTriple,
    pub fine_bands_t1: Raster,
    pub mid_bands_t1: Raster,
    /// Land-cover class per fine pixel.
    pub landcover: Array2<u8>,
}

fn scene_rng(cfg: &SynthConfig, index: usize) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(cfg.seed.wrapping_mul(0x9e3779b97f4a7c15) ^ (index as u64 + 1))
}

/// Smooth zero-mean unit-variance random field via low-pass filtered white
/// noise.
fn smooth_field(rng: &mut ChaCha8Rng, size: usize, correlation_length: f64) -> Array2<f64> {
    let normal = StandardNormal;
    let mut noise = ndarray::Array3::<f32>::zeros((1, size, size));
    for v in noise.iter_mut() {
        let z: f64 = normal.sample(rng);
        *v = z as f32;
    }
    // Kernel side must fit inside the field.
    let max_sigma = ((size - 1) / 2) as f64 / 3.0;
    let sigma = (correlation_length / 3.0).clamp(0.5, max_sigma.max(0.5));
    let smoothed = gaussian_smooth(&noise, sigma).expect("field larger than kernel");
    let flat: Vec<f64> = smoothed.iter().map(|v| *v as f64).collect();
    let mean = flat.iter().sum::<f64>() / flat.len() as f64;
    let var = flat.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / flat.len() as f64;
    let std = var.sqrt().max(1e-9);
    Array2::from_shape_vec(
        (size, size),
        flat.iter().map(|v| (v - mean) / std).collect(),
    )
    .expect("shape")
}

/// Quantize a smooth field into equal-area classes.
fn classify(field: &Array2<f64>, classes: usize) -> Array2<u8> {
    let mut sorted: Vec<f64> = field.iter().copied().collect();
    sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let n = sorted.len();
    let thresholds: Vec<f64> = (1..classes)
        .map(|k| sorted[(n * k / classes).min(n - 1)])
        .collect();
    field.mapv(|v| {
        let mut class = 0u8;
        for t in &thresholds {
            if v > *t {
                class += 1;
            }
        }
        class
    })
}

fn fine_grid(cfg: &SynthConfig) -> GridSpec {
    GridSpec::new(
        cfg.fine_size,
        cfg.fine_size,
        10.0,
        600_000.0,
        5_300_000.0,
        "EPSG:32631",
    )
    .expect("valid grid")
}

/// Build one seeded scene: land-cover classes, smooth thermal fields at both
/// dates, class-signature reflectance bands, and the block-mean mid / coarse
/// observables derived from the fine truth.
pub fn generate_scene(cfg: &SynthConfig, index: usize) -> Result<SynthScene> {
    cfg.validate()?;
    let mut rng = scene_rng(cfg, index);
    let size = cfg.fine_size;
    let grid = fine_grid(cfg);

    let class_field = smooth_field(&mut rng, size, cfg.correlation_length);
    let landcover = classify(&class_field, cfg.classes());
    let thermal_t1 = smooth_field(&mut rng, size, cfg.correlation_length * 1.5);
    let drift = smooth_field(&mut rng, size, cfg.correlation_length * 2.0);
    let normal = StandardNormal;
    let class_drift: Vec<f64> = (0..cfg.classes())
        .map(|_| {
            let z: f64 = normal.sample(&mut rng);
            z * cfg.drift_amplitude_k * 0.3
        })
        .collect();

    let mut lst_t1 = vec![0f32; size * size];
    let mut lst_t2 = vec![0f32; size * size];
    for i in 0..size {
        for j in 0..size {
            let class = landcover[(i, j)] as usize;
            let t1 = cfg.base_temp_k
                + cfg.class_offsets_k[class]
                + 1.5 * thermal_t1[(i, j)];
            let t2 = t1 + cfg.drift_amplitude_k * drift[(i, j)] + class_drift[class];
            lst_t1[i * size + j] = t1 as f32;
            lst_t2[i * size + j] = t2 as f32;
        }
    }
    let fine_t1 = Raster::from_values(grid.clone(), 1, lst_t1)?;
    let fine_t2 = Raster::from_values(grid.clone(), 1, lst_t2)?;

    // Reflectance bands from class signatures plus noise.
    let mut band_vals = vec![0f32; 4 * size * size];
    for i in 0..size {
        for j in 0..size {
            let class = landcover[(i, j)] as usize;
            let sig = BAND_SIGNATURES[class.min(BAND_SIGNATURES.len() - 1)];
            for (b, base) in sig.iter().enumerate() {
                let z: f64 = normal.sample(&mut rng);
                let v = (base + cfg.index_noise_sigma * z).clamp(0.005, 1.0);
                band_vals[b * size * size + i * size + j] = v as f32;
            }
        }
    }
    let fine_bands = Raster::from_values(grid.clone(), 4, band_vals)?;
    let mid_bands = block_average(&fine_bands, 3)?;

    let mid_t1 = block_average(&fine_t1, 3)?;
    let mid_t2 = block_average(&fine_t2, 3)?;
    let coarse_t1 = block_average(&fine_t1, cfg.coarse_factor)?;
    let coarse_t2 = block_average(&fine_t2, cfg.coarse_factor)?;

    // Indices through the same path the ingestion pipeline uses.
    let fine_idx = crate::indices::compute_indices(&crate::indices::BandSet::from_preset(
        Sensor::Sentinel2,
        fine_bands.clone(),
    )?)?;
    let mid_idx = crate::indices::compute_indices(&crate::indices::BandSet::from_preset(
        Sensor::Landsat8,
        mid_bands.clone(),
    )?)?;

    let (t1, t2) = scene_dates(index);
    Ok(SynthScene {
        triple: SampleTriple {
            id: format!("s{index:02}"),
            t1,
            t2,
            split: Split::Train,
            t1_indices_fine: fine_idx,
            t1_indices_mid: mid_idx,
            t1_lst_mid: mid_t1,
            t1_lst_coarse: coarse_t1,
            t2_lst_coarse: coarse_t2,
            t2_lst_mid: Some(mid_t2),
            t2_lst_fine_truth: Some(fine_t2),
        },
        fine_bands_t1: fine_bands,
        mid_bands_t1: mid_bands,
        landcover,
    })
}

fn scene_dates(index: usize) -> (NaiveDate, NaiveDate) {
    let base = NaiveDate::from_ymd_opt(2024, 1, 1).expect("valid date");
    let t1 = base + chrono::Days::new(20 * index as u64);
    let t2 = t1 + chrono::Days::new(10);
    (t1, t2)
}

/// Emit a full dataset (GeoTIFF members plus `manifest.json`) in the exact
/// ingestion format, so synthetic and real data share one code path. Returns
/// the manifest path.
pub fn generate_dataset(cfg: &SynthConfig, out_dir: impl AsRef<Path>) -> Result<PathBuf> {
    cfg.validate()?;
    let out_dir = out_dir.as_ref();
    std::fs::create_dir_all(out_dir)?;
    let total = cfg.train_scenes + cfg.test_scenes;
    let mut samples = Vec::with_capacity(total);
    for k in 0..total {
        let scene = generate_scene(cfg, k)?;
        let id = scene.triple.id.clone();
        let dir = out_dir.join("scenes").join(&id);
        std::fs::create_dir_all(&dir)?;
        let rel = |name: &str| format!("scenes/{id}/{name}");
        geotiff::write(dir.join("t1_fine_bands.tif"), &scene.fine_bands_t1)?;
        geotiff::write(dir.join("t1_mid_bands.tif"), &scene.mid_bands_t1)?;
        geotiff::write(dir.join("t1_lst_mid.tif"), &scene.triple.t1_lst_mid)?;
        geotiff::write(dir.join("t1_lst_coarse.tif"), &scene.triple.t1_lst_coarse)?;
        geotiff::write(dir.join("t2_lst_coarse.tif"), &scene.triple.t2_lst_coarse)?;
        let mid_t2 = scene.triple.t2_lst_mid.as_ref().expect("synth emits mid t2");
        geotiff::write(dir.join("t2_lst_mid.tif"), mid_t2)?;
        let truth = scene
            .triple
            .t2_lst_fine_truth
            .as_ref()
            .expect("synth emits truth");
        geotiff::write(dir.join("t2_lst_fine_truth.tif"), truth)?;

        let mut paths = std::collections::BTreeMap::new();
        paths.insert("t1_fine_bands".to_string(), rel("t1_fine_bands.tif"));
        paths.insert("t1_mid_bands".to_string(), rel("t1_mid_bands.tif"));
        paths.insert("t1_lst_mid".to_string(), rel("t1_lst_mid.tif"));
        paths.insert("t1_lst_coarse".to_string(), rel("t1_lst_coarse.tif"));
        paths.insert("t2_lst_coarse".to_string(), rel("t2_lst_coarse.tif"));
        paths.insert("t2_lst_mid".to_string(), rel("t2_lst_mid.tif"));
        paths.insert("t2_lst_fine_truth".to_string(), rel("t2_lst_fine_truth.tif"));
        samples.push(SampleEntry {
            id,
            t1: scene.triple.t1,
            t2: scene.triple.t2,
            split: if k < cfg.train_scenes {
                Split::Train
            } else {
                Split::Test
            },
            t1_times: Some(AcquisitionTimes {
                coarse: "11:54".into(),
                mid: "10:40".into(),
                fine: "11:05".into(),
            }),
            paths,
        });
    }

    let mut band_roles = std::collections::BTreeMap::new();
    band_roles.insert("fine".to_string(), Sensor::Sentinel2.preset_roles());
    band_roles.insert("mid".to_string(), Sensor::Landsat8.preset_roles());
    let manifest = Manifest {
        normalization: NormRange::default(),
        sources: SourceDecls::default(),
        band_roles,
        co_acquisition_window_minutes: crate::dataset::DEFAULT_CO_ACQUISITION_MINUTES,
        samples,
    };
    let path = out_dir.join("manifest.json");
    std::fs::write(&path, serde_json::to_vec_pretty(&manifest)?)?;
    Ok(path)
}

/// Load a generated scene back through the ingestion path (for tests).
pub fn load_generated(manifest_path: &Path, id: &str) -> Result<SampleTriple> {
    let (manifest, base) = Manifest::load(manifest_path)?;
    let entry = manifest
        .sample(id)
        .ok_or_else(|| Error::Manifest(format!("no sample `{id}`")))?;
    load_sample(&manifest, &base, entry)
}
