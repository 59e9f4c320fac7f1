//! Evaluation metrics: RMSE, PSNR, ERGAS, SSIM, MS-SSIM, SAM, CC on pooled
//! predictions versus mid-resolution references, and PCC / SRCC against
//! ground-sensor series.
//!
//! All raster metrics are computed in degrees Celsius (ERGAS and SAM are
//! near-degenerate on Kelvin offsets); formulation choices are recorded in the
//! report metadata.

use std::collections::BTreeMap;
use std::path::Path;

use ndarray::{Array3, Array4};
use serde::ser::Serializer;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::convops::sep_pass_fwd;
use crate::nn::graph::Graph;
use crate::raster::{block_average, gaussian_kernel_1d, Raster};
use crate::training::msssim::{ms_ssim_graph, SSIM_K1, SSIM_K2, SSIM_SIGMA, SSIM_WINDOW};

/// Fine/mid pixel-size ratio entering ERGAS.
pub const ERGAS_RATIO: f64 = 1.0 / 3.0;
pub const KELVIN_OFFSET: f64 = 273.15;

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct MetricSet {
    pub rmse: f64,
    pub ssim: f64,
    #[serde(serialize_with = "serialize_maybe_inf")]
    pub psnr: f64,
    pub sam: f64,
    pub cc: f64,
    pub ergas: f64,
    pub ms_ssim: f64,
}

fn serialize_maybe_inf<S: Serializer>(v: &f64, s: S) -> std::result::Result<S::Ok, S::Error> {
    if v.is_infinite() {
        s.serialize_str("inf")
    } else {
        s.serialize_f64(*v)
    }
}

#[derive(Debug, Clone, Copy)]
pub struct ErrorMetrics {
    pub rmse: f64,
    /// `+inf` when the prediction matches the reference exactly.
    pub psnr: f64,
    pub ergas: f64,
}

#[derive(Debug, Clone, Copy)]
pub struct SimilarityMetrics {
    pub ssim: f64,
    pub ms_ssim: f64,
    /// Spectral angle in degrees between the flattened images.
    pub sam: f64,
    /// Pearson correlation of the flattened pairs.
    pub cc: f64,
}

fn require_comparable(pred: &Raster, reference: &Raster) -> Result<()> {
    if !pred.grid.same_geometry(&reference.grid, 1e-6) {
        return Err(Error::GridMismatch(
            "metrics require co-located rasters on one grid".into(),
        ));
    }
    if pred.bands != 1 || reference.bands != 1 {
        return Err(Error::ShapeMismatch(
            "metrics operate on single-band rasters".into(),
        ));
    }
    Ok(())
}

fn flat(r: &Raster) -> Vec<f64> {
    r.band(0).iter().map(|v| *v as f64).collect()
}

/// RMSE, PSNR (dynamic range = reference max - min) and single-band ERGAS
/// (`100 * (h/l) * rmse / mean(ref)`).
pub fn error_metrics(pred: &Raster, reference: &Raster) -> Result<ErrorMetrics> {
    require_comparable(pred, reference)?;
    let (p, r) = (flat(pred), flat(reference));
    let n = p.len() as f64;
    let mse = p
        .iter()
        .zip(&r)
        .map(|(a, b)| (a - b) * (a - b))
        .sum::<f64>()
        / n;
    let rmse = mse.sqrt();
    let lo = r.iter().cloned().fold(f64::INFINITY, f64::min);
    let hi = r.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let range = hi - lo;
    let psnr = if rmse == 0.0 {
        f64::INFINITY
    } else {
        20.0 * (range / rmse).log10()
    };
    let mean_ref = r.iter().sum::<f64>() / n;
    if mean_ref == 0.0 {
        return Err(Error::MetricUndefined(
            "ERGAS undefined: reference mean is zero".into(),
        ));
    }
    let ergas = 100.0 * ERGAS_RATIO * ((rmse / mean_ref).powi(2)).sqrt();
    Ok(ErrorMetrics { rmse, psnr, ergas })
}

/// Windowed SSIM with an 11x11 Gaussian window (sigma 1.5), reflective
/// padding, dynamic range from the reference; mean of the local SSIM map.
pub fn ssim(pred: &Raster, reference: &Raster) -> Result<f64> {
    require_comparable(pred, reference)?;
    let (h, w) = (pred.grid.height, pred.grid.width);
    let to_arr =
        |r: &Raster| -> Array3<f64> { Array3::from_shape_vec((1, h, w), flat(r)).expect("shape") };
    let x = to_arr(pred);
    let y = to_arr(reference);
    let lo = y.iter().cloned().fold(f64::INFINITY, f64::min);
    let hi = y.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let range = hi - lo;
    if range == 0.0 {
        return Err(Error::MetricUndefined(
            "SSIM undefined: reference has zero dynamic range".into(),
        ));
    }
    let c1 = (SSIM_K1 * range).powi(2);
    let c2 = (SSIM_K2 * range).powi(2);
    let kernel = gaussian_kernel_1d(SSIM_SIGMA, (SSIM_WINDOW - 1) / 2);
    let blur = |a: &Array3<f64>| -> Array3<f64> {
        let t = sep_pass_fwd(&a.view(), &kernel, 2);
        sep_pass_fwd(&t.view(), &kernel, 1)
    };
    let mu_x = blur(&x);
    let mu_y = blur(&y);
    let xx = blur(&(&x * &x));
    let yy = blur(&(&y * &y));
    let xy = blur(&(&x * &y));
    let mut acc = 0f64;
    for i in 0..h {
        for j in 0..w {
            let (mx, my) = (mu_x[(0, i, j)], mu_y[(0, i, j)]);
            let sx = xx[(0, i, j)] - mx * mx;
            let sy = yy[(0, i, j)] - my * my;
            let sxy = xy[(0, i, j)] - mx * my;
            let num = (2.0 * mx * my + c1) * (2.0 * sxy + c2);
            let den = (mx * mx + my * my + c1) * (sx + sy + c2);
            acc += num / den;
        }
    }
    Ok(acc / (h * w) as f64)
}

/// Multi-scale SSIM with the truncated-weight scale rule; dynamic range from
/// the reference. Runs the same formulation as the differentiable loss term.
pub fn ms_ssim(pred: &Raster, reference: &Raster) -> Result<f64> {
    require_comparable(pred, reference)?;
    let (h, w) = (pred.grid.height, pred.grid.width);
    let lo = reference
        .band(0)
        .iter()
        .cloned()
        .fold(f32::INFINITY, f32::min) as f64;
    let hi = reference
        .band(0)
        .iter()
        .cloned()
        .fold(f32::NEG_INFINITY, f32::max) as f64;
    let range = hi - lo;
    if range == 0.0 {
        return Err(Error::MetricUndefined(
            "MS-SSIM undefined: reference has zero dynamic range".into(),
        ));
    }
    let to4 =
        |r: &Raster| -> Array4<f64> { Array4::from_shape_vec((1, 1, h, w), flat(r)).expect("shape") };
    let mut g = Graph::<f64>::new(false);
    let a = g.input(to4(pred));
    let b = g.input(to4(reference));
    let s = ms_ssim_graph(&mut g, a, b, range);
    Ok(g.scalar(s))
}

/// Spectral angle (degrees) between the flattened images.
pub fn sam_degrees(pred: &Raster, reference: &Raster) -> Result<f64> {
    require_comparable(pred, reference)?;
    let (p, r) = (flat(pred), flat(reference));
    let dot: f64 = p.iter().zip(&r).map(|(a, b)| a * b).sum();
    let np = p.iter().map(|v| v * v).sum::<f64>().sqrt();
    let nr = r.iter().map(|v| v * v).sum::<f64>().sqrt();
    if np == 0.0 || nr == 0.0 {
        return Err(Error::MetricUndefined(
            "SAM undefined: zero-norm image".into(),
        ));
    }
    let cos = (dot / (np * nr)).clamp(-1.0, 1.0);
    Ok(cos.acos().to_degrees())
}

fn pearson(a: &[f64], b: &[f64]) -> Result<f64> {
    let n = a.len() as f64;
    let ma = a.iter().sum::<f64>() / n;
    let mb = b.iter().sum::<f64>() / n;
    let mut cov = 0f64;
    let mut va = 0f64;
    let mut vb = 0f64;
    for (x, y) in a.iter().zip(b) {
        cov += (x - ma) * (y - mb);
        va += (x - ma) * (x - ma);
        vb += (y - mb) * (y - mb);
    }
    if va == 0.0 || vb == 0.0 {
        return Err(Error::MetricUndefined(
            "correlation undefined for a constant series".into(),
        ));
    }
    Ok(cov / (va.sqrt() * vb.sqrt()))
}

/// Pearson correlation of the flattened pairs.
pub fn cc(pred: &Raster, reference: &Raster) -> Result<f64> {
    require_comparable(pred, reference)?;
    pearson(&flat(pred), &flat(reference))
}

pub fn similarity_metrics(pred: &Raster, reference: &Raster) -> Result<SimilarityMetrics> {
    Ok(SimilarityMetrics {
        ssim: ssim(pred, reference)?,
        ms_ssim: ms_ssim(pred, reference)?,
        sam: sam_degrees(pred, reference)?,
        cc: cc(pred, reference)?,
    })
}

// ---------------------------------------------------------------------------
// Rank correlations
// ---------------------------------------------------------------------------

/// One ground sensor paired with extracted fine-LST pixel values (Celsius).
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SensorSeries {
    pub sensor_id: String,
    pub lat: f64,
    pub lon: f64,
    /// `(timestamp, air temperature, extracted LST)` tuples, time-aligned.
    pub pairs: Vec<(String, f64, f64)>,
}

#[derive(Debug, Clone, Copy, Serialize)]
pub struct RankCorrelations {
    pub pcc: f64,
    pub srcc: f64,
}

/// Midranks (average rank for ties), 1-based.
fn midranks(values: &[f64]) -> Vec<f64> {
    let n = values.len();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| values[i].partial_cmp(&values[j]).expect("finite values"));
    let mut ranks = vec![0f64; n];
    let mut i = 0usize;
    while i < n {
        let mut j = i;
        while j + 1 < n && values[order[j + 1]] == values[order[i]] {
            j += 1;
        }
        let avg = (i + j) as f64 / 2.0 + 1.0;
        for k in i..=j {
            ranks[order[k]] = avg;
        }
        i = j + 1;
    }
    ranks
}

/// Pearson and Spearman rank correlation of two paired series (>= 3 pairs,
/// both non-constant). Spearman uses the rank-difference formula with midrank
/// tie handling.
pub fn rank_correlations(a: &[f64], b: &[f64]) -> Result<RankCorrelations> {
    if a.len() != b.len() {
        return Err(Error::ShapeMismatch("paired series differ in length".into()));
    }
    if a.len() < 3 {
        return Err(Error::MetricUndefined(
            "correlations require at least 3 pairs".into(),
        ));
    }
    let pcc = pearson(a, b)?;
    let ra = midranks(a);
    let rb = midranks(b);
    let m = a.len() as f64;
    let d2: f64 = ra.iter().zip(&rb).map(|(x, y)| (x - y) * (x - y)).sum();
    let srcc = 1.0 - 6.0 * d2 / (m * (m * m - 1.0));
    Ok(RankCorrelations { pcc, srcc })
}

pub fn sensor_correlations(series: &SensorSeries) -> Result<RankCorrelations> {
    let ta: Vec<f64> = series.pairs.iter().map(|p| p.1).collect();
    let lst: Vec<f64> = series.pairs.iter().map(|p| p.2).collect();
    rank_correlations(&ta, &lst)
}

/// Parse the sensor CSV (`sensor_id, lat, lon, timestamp_iso8601,
/// t_a_celsius`) into per-sensor observation lists (LST pairing is left to the
/// caller). The `lat`/`lon` columns carry northing/easting in the raster CRS.
pub fn read_sensor_csv(path: impl AsRef<Path>) -> Result<Vec<SensorObservationSet>> {
    let mut reader = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_path(path.as_ref())?;
    let mut by_sensor: BTreeMap<String, SensorObservationSet> = BTreeMap::new();
    for record in reader.deserialize() {
        let row: SensorCsvRow = record?;
        let entry = by_sensor
            .entry(row.sensor_id.clone())
            .or_insert_with(|| SensorObservationSet {
                sensor_id: row.sensor_id.clone(),
                lat: row.lat,
                lon: row.lon,
                observations: Vec::new(),
            });
        entry
            .observations
            .push((row.timestamp_iso8601, row.t_a_celsius));
    }
    Ok(by_sensor.into_values().collect())
}

#[derive(Debug, Deserialize)]
struct SensorCsvRow {
    sensor_id: String,
    lat: f64,
    lon: f64,
    timestamp_iso8601: String,
    t_a_celsius: f64,
}

#[derive(Debug, Clone)]
pub struct SensorObservationSet {
    pub sensor_id: String,
    pub lat: f64,
    pub lon: f64,
    pub observations: Vec<(String, f64)>,
}

// ---------------------------------------------------------------------------
// Report assembly
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Serialize)]
pub struct ReportEntry {
    pub date: String,
    pub method: String,
    pub metrics: MetricSet,
}

#[derive(Debug, Clone, Serialize)]
pub struct MetricsReport {
    pub metadata: BTreeMap<String, String>,
    pub entries: Vec<ReportEntry>,
    pub averages: BTreeMap<String, MetricSet>,
}

impl MetricsReport {
    pub fn new() -> Self {
        let mut metadata = BTreeMap::new();
        metadata.insert("units".into(), "celsius".into());
        metadata.insert(
            "sam".into(),
            "angle between whole flattened single-band images, degrees".into(),
        );
        metadata.insert("psnr_range".into(), "reference max-min per date".into());
        metadata.insert("ergas_ratio".into(), "1/3 (fine/mid pixel size)".into());
        metadata.insert("srcc_ties".into(), "midrank".into());
        MetricsReport {
            metadata,
            entries: Vec::new(),
            averages: BTreeMap::new(),
        }
    }

    pub fn push(&mut self, date: &str, method: &str, metrics: MetricSet) {
        self.entries.push(ReportEntry {
            date: date.to_string(),
            method: method.to_string(),
            metrics,
        });
        self.recompute_averages();
    }

    fn recompute_averages(&mut self) {
        self.averages.clear();
        let mut by_method: BTreeMap<String, Vec<&MetricSet>> = BTreeMap::new();
        for e in &self.entries {
            by_method
                .entry(e.method.clone())
                .or_default()
                .push(&e.metrics);
        }
        for (method, sets) in by_method {
            let n = sets.len() as f64;
            let mean = |f: &dyn Fn(&MetricSet) -> f64| sets.iter().map(|s| f(s)).sum::<f64>() / n;
            self.averages.insert(
                method,
                MetricSet {
                    rmse: mean(&|s| s.rmse),
                    ssim: mean(&|s| s.ssim),
                    psnr: mean(&|s| s.psnr),
                    sam: mean(&|s| s.sam),
                    cc: mean(&|s| s.cc),
                    ergas: mean(&|s| s.ergas),
                    ms_ssim: mean(&|s| s.ms_ssim),
                },
            );
        }
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    /// Aligned-column text table: one block per date plus the averages, six
    /// metric rows, one column per method.
    pub fn to_table(&self) -> String {
        let mut dates: Vec<String> = self.entries.iter().map(|e| e.date.clone()).collect();
        dates.sort();
        dates.dedup();
        let mut methods: Vec<String> = self.entries.iter().map(|e| e.method.clone()).collect();
        methods.sort();
        methods.dedup();

        let mut out = String::new();
        let fmt = |v: f64| -> String {
            if v.is_infinite() {
                "inf".to_string()
            } else {
                format!("{v:.3}")
            }
        };
        let rows: [(&str, &dyn Fn(&MetricSet) -> f64); 6] = [
            ("RMSE (C, down)", &|m| m.rmse),
            ("SSIM (up)", &|m| m.ssim),
            ("PSNR (dB, up)", &|m| m.psnr),
            ("SAM (deg, down)", &|m| m.sam),
            ("CC (up)", &|m| m.cc),
            ("ERGAS (down)", &|m| m.ergas),
        ];
        let mut blocks: Vec<(String, BTreeMap<String, MetricSet>)> = Vec::new();
        for date in &dates {
            let mut by_method = BTreeMap::new();
            for e in self.entries.iter().filter(|e| &e.date == date) {
                by_method.insert(e.method.clone(), e.metrics);
            }
            blocks.push((date.clone(), by_method));
        }
        if !self.averages.is_empty() && dates.len() > 1 {
            blocks.push(("Average".to_string(), self.averages.clone()));
        }
        for (title, by_method) in blocks {
            out.push_str(&format!("== {title} ==\n"));
            out.push_str(&format!("{:<18}", "Metric"));
            for m in &methods {
                out.push_str(&format!("{m:>12}"));
            }
            out.push('\n');
            for (label, getter) in &rows {
                out.push_str(&format!("{label:<18}"));
                for m in &methods {
                    match by_method.get(m) {
                        Some(set) => out.push_str(&format!("{:>12}", fmt(getter(set)))),
                        None => out.push_str(&format!("{:>12}", "-")),
                    }
                }
                out.push('\n');
            }
            out.push('\n');
        }
        out
    }
}

impl Default for MetricsReport {
    fn default() -> Self {
        Self::new()
    }
}

/// Convert a Kelvin raster to Celsius.
pub fn kelvin_to_celsius(r: &Raster) -> Raster {
    let mut out = r.clone();
    for b in 0..r.bands {
        for v in out.band_mut(b) {
            *v -= KELVIN_OFFSET as f32;
        }
    }
    out
}

/// Pool the fine prediction onto the mid grid (3x3 means), convert both to
/// Celsius and compute the full metric set.
pub fn evaluate_against_reference(pred_fine: &Raster, ref_mid: &Raster) -> Result<MetricSet> {
    let ratio = ref_mid.grid.pixel_size / pred_fine.grid.pixel_size;
    if (ratio - 3.0).abs() > 1e-6 {
        return Err(Error::GridMismatch(format!(
            "expected a 3x resolution ratio, got {ratio}"
        )));
    }
    let pooled = block_average(pred_fine, 3)?;
    if !pooled.grid.same_geometry(&ref_mid.grid, 1e-6) {
        return Err(Error::GridMismatch(
            "pooled prediction does not align with the reference grid".into(),
        ));
    }
    let p = kelvin_to_celsius(&pooled);
    let r = kelvin_to_celsius(ref_mid);
    let err = error_metrics(&p, &r)?;
    let sim = similarity_metrics(&p, &r)?;
    Ok(MetricSet {
        rmse: err.rmse,
        ssim: sim.ssim,
        psnr: err.psnr,
        sam: sim.sam,
        cc: sim.cc,
        ergas: err.ergas,
        ms_ssim: sim.ms_ssim,
    })
}
