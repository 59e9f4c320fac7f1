//! Manifest-driven assembly of training/inference samples: input-constraint
//! validation, LST normalization, gap filling, index computation, temporal
//! leakage checks and patch extraction.

pub mod patches;

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use chrono::{NaiveDate, NaiveTime};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::indices::{compute_indices, BandRole, BandSet, Sensor};
use crate::raster::{fill_gaps_adaptive, geotiff, Raster};

/// Fixed global normalization range mapping Kelvin onto `[-1, 1]`.
///
/// A global range (rather than per-scene min-max) keeps values comparable
/// across dates, which the temporal attention depends on.
#[derive(Debug, Clone, Copy, Serialize, Deserialize, PartialEq)]
pub struct NormRange {
    pub lo_k: f64,
    pub hi_k: f64,
}

impl Default for NormRange {
    fn default() -> Self {
        NormRange {
            lo_k: 263.15,
            hi_k: 323.15,
        }
    }
}

impl NormRange {
    pub fn validate(&self) -> Result<()> {
        if self.lo_k >= self.hi_k {
            return Err(Error::invalid(format!(
                "normalization range requires lo < hi, got {} >= {}",
                self.lo_k, self.hi_k
            )));
        }
        Ok(())
    }

    pub fn normalize(&self, kelvin: f64) -> f64 {
        (2.0 * (kelvin - self.lo_k) / (self.hi_k - self.lo_k) - 1.0).clamp(-1.0, 1.0)
    }

    pub fn denormalize(&self, unit: f64) -> f64 {
        (unit + 1.0) / 2.0 * (self.hi_k - self.lo_k) + self.lo_k
    }
}

/// Affine map `[lo, hi] -> [-1, 1]`; out-of-range values clamp and are counted.
pub fn normalize_lst(r: &Raster, range: &NormRange) -> Result<(Raster, usize)> {
    range.validate()?;
    let mut out = r.clone();
    let mut clamped = 0usize;
    let lo = range.lo_k;
    let hi = range.hi_k;
    for b in 0..r.bands {
        let band = out.band_mut(b);
        for (i, v) in band.iter_mut().enumerate() {
            if !r.mask()[i % r.grid.pixels()] {
                continue;
            }
            let x = *v as f64;
            if x < lo || x > hi {
                clamped += 1;
            }
            *v = range.normalize(x) as f32;
        }
    }
    if clamped > 0 {
        log::warn!(
            "normalize_lst clamped {clamped} values outside [{lo}, {hi}] K"
        );
    }
    Ok((out, clamped))
}

/// Exact inverse of [`normalize_lst`] on `[-1, 1]`.
pub fn denormalize_lst(r: &Raster, range: &NormRange) -> Result<Raster> {
    range.validate()?;
    let mut out = r.clone();
    for b in 0..r.bands {
        let band = out.band_mut(b);
        for (i, v) in band.iter_mut().enumerate() {
            if !r.mask()[i % r.grid.pixels()] {
                continue;
            }
            *v = range.denormalize(*v as f64) as f32;
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Test,
}

/// Declared properties of the three input sources, used by the Eq-style
/// constraint validation.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SourceDecl {
    pub cadence_days: u32,
    pub tir: bool,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SourceDecls {
    pub coarse: SourceDecl,
    pub mid: SourceDecl,
    pub fine: SourceDecl,
}

impl Default for SourceDecls {
    fn default() -> Self {
        SourceDecls {
            coarse: SourceDecl {
                cadence_days: 1,
                tir: true,
            },
            mid: SourceDecl {
                cadence_days: 16,
                tir: true,
            },
            fine: SourceDecl {
                cadence_days: 5,
                tir: false,
            },
        }
    }
}

/// Acquisition clock times of the three sources at the reference date.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AcquisitionTimes {
    pub coarse: String,
    pub mid: String,
    pub fine: String,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SampleEntry {
    pub id: String,
    pub t1: NaiveDate,
    pub t2: NaiveDate,
    pub split: Split,
    #[serde(default)]
    pub t1_times: Option<AcquisitionTimes>,
    pub paths: BTreeMap<String, String>,
}

/// Manifest member keys. Index members may be given either as 4-band stacks
/// (`*_bands`, indices computed at assembly) or as precomputed 3-band rasters
/// (`*_indices`).
pub const MEMBER_KEYS: [&str; 8] = [
    "t1_fine_bands",
    "t1_fine_indices",
    "t1_mid_bands",
    "t1_mid_indices",
    "t1_lst_mid",
    "t1_lst_coarse",
    "t2_lst_coarse",
    "t2_lst_mid",
];

/// Optional synthetic-only member: fine ground truth at the target date.
pub const TRUTH_KEY: &str = "t2_lst_fine_truth";

pub const DEFAULT_CO_ACQUISITION_MINUTES: i64 = 75;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Manifest {
    #[serde(default)]
    pub normalization: NormRange,
    #[serde(default)]
    pub sources: SourceDecls,
    /// Role name -> band position inside the band-stack members.
    #[serde(default)]
    pub band_roles: BTreeMap<String, BTreeMap<BandRole, usize>>,
    #[serde(default = "default_window_minutes")]
    pub co_acquisition_window_minutes: i64,
    pub samples: Vec<SampleEntry>,
}

fn default_window_minutes() -> i64 {
    DEFAULT_CO_ACQUISITION_MINUTES
}

impl Manifest {
    pub fn load(path: impl AsRef<Path>) -> Result<(Manifest, PathBuf)> {
        let path = path.as_ref();
        let bytes = fs::read(path).map_err(|e| {
            Error::Manifest(format!("cannot read manifest {}: {e}", path.display()))
        })?;
        let manifest: Manifest = serde_json::from_slice(&bytes)
            .map_err(|e| Error::Manifest(format!("{}: {e}", path.display())))?;
        let base = path
            .parent()
            .map(|p| p.to_path_buf())
            .unwrap_or_else(|| PathBuf::from("."));
        manifest.check_files_exist(&base)?;
        Ok((manifest, base))
    }

    pub fn check_files_exist(&self, base: &Path) -> Result<()> {
        let mut missing = Vec::new();
        for sample in &self.samples {
            for (key, rel) in &sample.paths {
                let p = base.join(rel);
                if !p.exists() {
                    missing.push(format!("{} ({key} of sample {})", p.display(), sample.id));
                }
            }
        }
        if missing.is_empty() {
            Ok(())
        } else {
            Err(Error::Manifest(format!(
                "missing referenced files: {}",
                missing.join(", ")
            )))
        }
    }

    pub fn sample(&self, id: &str) -> Option<&SampleEntry> {
        self.samples.iter().find(|s| s.id == id)
    }

    pub fn roles_for(&self, source: &str) -> BTreeMap<BandRole, usize> {
        self.band_roles
            .get(source)
            .cloned()
            .unwrap_or_else(|| Sensor::Sentinel2.preset_roles())
    }
}

// ---------------------------------------------------------------------------
// Constraint validation
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Serialize)]
pub struct Violation {
    pub sample_id: Option<String>,
    pub condition: String,
    pub detail: String,
}

#[derive(Debug, Clone, Default, Serialize)]
pub struct ValidationReport {
    pub violations: Vec<Violation>,
}

impl ValidationReport {
    pub fn is_valid(&self) -> bool {
        self.violations.is_empty()
    }

    fn push(&mut self, sample_id: Option<&str>, condition: &str, detail: String) {
        self.violations.push(Violation {
            sample_id: sample_id.map(|s| s.to_string()),
            condition: condition.to_string(),
            detail,
        });
    }
}

/// Upper bound of the "10 m-class" fine resolution.
pub const FINE_CLASS_MAX_M: f64 = 15.0;

/// Check the input constraints: resolution ordering (coarse > mid > fine),
/// 10 m-class fine grid, daily coarse cadence, thermal availability of the
/// coarse and mid sources, and the co-acquisition window at the reference
/// date. Violations become report entries; nothing is thrown.
pub fn validate_constraints(manifest: &Manifest, base: &Path) -> ValidationReport {
    let mut report = ValidationReport::default();

    if manifest.sources.coarse.cadence_days != 1 {
        report.push(
            None,
            "coarse_daily_cadence",
            format!(
                "coarse source declares a {}-day cadence, expected daily",
                manifest.sources.coarse.cadence_days
            ),
        );
    }
    if !manifest.sources.coarse.tir {
        report.push(None, "coarse_tir", "coarse source declares no TIR band".into());
    }
    if !manifest.sources.mid.tir {
        report.push(None, "mid_tir", "mid source declares no TIR band".into());
    }

    for sample in &manifest.samples {
        if sample.t1 >= sample.t2 {
            report.push(
                Some(&sample.id),
                "reference_before_target",
                format!("t1 {} is not before t2 {}", sample.t1, sample.t2),
            );
        }
        let grid_of = |keys: &[&str]| -> Option<f64> {
            for key in keys {
                if let Some(rel) = sample.paths.get(*key) {
                    if let Ok(r) = geotiff::read(base.join(rel)) {
                        return Some(r.grid.pixel_size);
                    }
                }
            }
            None
        };
        let fine_ps = grid_of(&["t1_fine_bands", "t1_fine_indices"]);
        let mid_ps = grid_of(&["t1_lst_mid", "t1_mid_bands", "t1_mid_indices"]);
        let coarse_ps = grid_of(&["t1_lst_coarse", "t2_lst_coarse"]);
        match (coarse_ps, mid_ps, fine_ps) {
            (Some(c), Some(m), Some(f)) => {
                if !(c > m && m > f) {
                    report.push(
                        Some(&sample.id),
                        "resolution_ordering",
                        format!("expected coarse > mid > fine, got {c} / {m} / {f} m"),
                    );
                }
                if f > FINE_CLASS_MAX_M {
                    report.push(
                        Some(&sample.id),
                        "fine_resolution_class",
                        format!("fine pixel size {f} m exceeds the 10 m class (<= {FINE_CLASS_MAX_M} m)"),
                    );
                }
            }
            _ => report.push(
                Some(&sample.id),
                "members_readable",
                "could not read grids of all required members".into(),
            ),
        }

        if let Some(times) = &sample.t1_times {
            match parse_times(times) {
                Ok(parsed) => {
                    let max_diff = max_pairwise_minutes(&parsed);
                    if max_diff > manifest.co_acquisition_window_minutes {
                        report.push(
                            Some(&sample.id),
                            "co_acquisition_window",
                            format!(
                                "reference-date acquisitions spread over {max_diff} min, window is {} min",
                                manifest.co_acquisition_window_minutes
                            ),
                        );
                    }
                }
                Err(e) => report.push(
                    Some(&sample.id),
                    "co_acquisition_window",
                    format!("unparseable acquisition times: {e}"),
                ),
            }
        }
    }
    report
}

fn parse_times(times: &AcquisitionTimes) -> Result<[NaiveTime; 3]> {
    let parse = |s: &str| -> Result<NaiveTime> {
        NaiveTime::parse_from_str(s, "%H:%M")
            .or_else(|_| NaiveTime::parse_from_str(s, "%H:%M:%S"))
            .map_err(|e| Error::Manifest(format!("bad time `{s}`: {e}")))
    };
    Ok([
        parse(&times.coarse)?,
        parse(&times.mid)?,
        parse(&times.fine)?,
    ])
}

fn max_pairwise_minutes(times: &[NaiveTime; 3]) -> i64 {
    let mut max = 0i64;
    for i in 0..3 {
        for j in i + 1..3 {
            let d = (times[i] - times[j]).num_minutes().abs();
            max = max.max(d);
        }
    }
    max
}

// ---------------------------------------------------------------------------
// Temporal leakage
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Serialize)]
pub struct LeakagePair {
    pub sample_a: String,
    pub sample_b: String,
    pub date: NaiveDate,
}

#[derive(Debug, Clone, Default, Serialize)]
pub struct LeakageReport {
    pub violations: Vec<LeakagePair>,
}

impl LeakageReport {
    pub fn is_clean(&self) -> bool {
        self.violations.is_empty()
    }
}

/// Flag training samples whose reference date collides with another training
/// sample's target date (checked across all pairs, both directions).
pub fn check_leakage(manifest: &Manifest) -> LeakageReport {
    let train: Vec<&SampleEntry> = manifest
        .samples
        .iter()
        .filter(|s| s.split == Split::Train)
        .collect();
    let mut report = LeakageReport::default();
    for a in &train {
        for b in &train {
            if a.id == b.id {
                continue;
            }
            if a.t1 == b.t2 {
                report.violations.push(LeakagePair {
                    sample_a: a.id.clone(),
                    sample_b: b.id.clone(),
                    date: a.t1,
                });
            }
        }
    }
    report
}

// ---------------------------------------------------------------------------
// Sample assembly
// ---------------------------------------------------------------------------

/// One training/inference unit: the reference triple plus the target-date
/// coarse LST (and the mid/fine target references when available). LST members
/// stay in Kelvin; normalization happens at patch preparation.
#[derive(Debug, Clone)]
pub struct SampleTriple {
    pub id: String,
    pub t1: NaiveDate,
    pub t2: NaiveDate,
    pub split: Split,
    pub t1_indices_fine: Raster,
    pub t1_indices_mid: Raster,
    pub t1_lst_mid: Raster,
    /// Native coarse grid; resampled to the fine grid lazily at patch time.
    pub t1_lst_coarse: Raster,
    pub t2_lst_coarse: Raster,
    pub t2_lst_mid: Option<Raster>,
    pub t2_lst_fine_truth: Option<Raster>,
}

impl SampleTriple {
    pub fn fine_grid(&self) -> &crate::raster::GridSpec {
        &self.t1_indices_fine.grid
    }

    pub fn mid_grid(&self) -> &crate::raster::GridSpec {
        &self.t1_lst_mid.grid
    }
}

fn load_member(base: &Path, sample: &SampleEntry, key: &str) -> Result<Option<Raster>> {
    match sample.paths.get(key) {
        None => Ok(None),
        Some(rel) => Ok(Some(geotiff::read(base.join(rel))?)),
    }
}

fn require_member(base: &Path, sample: &SampleEntry, key: &str) -> Result<Raster> {
    load_member(base, sample, key)?.ok_or_else(|| {
        Error::Manifest(format!("sample {} is missing member `{key}`", sample.id))
    })
}

/// Gap-fill a raster and compute indices from a band stack.
fn indices_from_stack(stack: Raster, roles: &BTreeMap<BandRole, usize>) -> Result<Raster> {
    let filled = fill_gaps_adaptive(&stack)?;
    // The sensor tag only selects preset band roles; the explicit role map has
    // already been resolved, so the enum value is irrelevant here.
    let bs = BandSet::new(Sensor::Sentinel2, filled, roles.clone())?;
    let idx = compute_indices(&bs)?;
    if idx.is_fully_valid() {
        Ok(idx)
    } else {
        fill_gaps_adaptive(&idx)
    }
}

fn load_indices(
    base: &Path,
    manifest: &Manifest,
    sample: &SampleEntry,
    source: &str,
) -> Result<Raster> {
    let bands_key = format!("t1_{source}_bands");
    let indices_key = format!("t1_{source}_indices");
    if let Some(stack) = load_member(base, sample, &bands_key)? {
        return indices_from_stack(stack, &manifest.roles_for(source));
    }
    if let Some(idx) = load_member(base, sample, &indices_key)? {
        if idx.bands != 3 {
            return Err(Error::Manifest(format!(
                "sample {}: `{indices_key}` must have 3 bands, found {}",
                sample.id, idx.bands
            )));
        }
        return if idx.is_fully_valid() {
            Ok(idx)
        } else {
            fill_gaps_adaptive(&idx)
        };
    }
    Err(Error::Manifest(format!(
        "sample {} provides neither `{bands_key}` nor `{indices_key}`",
        sample.id
    )))
}

/// Load one sample: read members, gap-fill everything, compute indices, crop
/// the fine/mid pair so fine dimensions are exact multiples of 3.
pub fn load_sample(manifest: &Manifest, base: &Path, entry: &SampleEntry) -> Result<SampleTriple> {
    if entry.t1 >= entry.t2 {
        return Err(Error::Manifest(format!(
            "sample {}: t1 {} must precede t2 {}",
            entry.id, entry.t1, entry.t2
        )));
    }
    let mut fine_idx = load_indices(base, manifest, entry, "fine")?;
    let mut mid_idx = load_indices(base, manifest, entry, "mid")?;
    let mut mid_lst = fill_gaps_adaptive(&require_member(base, entry, "t1_lst_mid")?)?;
    let coarse_t1 = fill_gaps_adaptive(&require_member(base, entry, "t1_lst_coarse")?)?;
    let coarse_t2 = fill_gaps_adaptive(&require_member(base, entry, "t2_lst_coarse")?)?;
    let mut mid_t2 = match load_member(base, entry, "t2_lst_mid")? {
        Some(r) => Some(fill_gaps_adaptive(&r)?),
        None => None,
    };
    let mut truth = load_member(base, entry, TRUTH_KEY)?;

    // Geometry: fine pixels must be exactly one third of mid pixels.
    let fine_ps = fine_idx.grid.pixel_size;
    let mid_ps = mid_lst.grid.pixel_size;
    if (fine_ps * 3.0 - mid_ps).abs() > 1e-6 * mid_ps {
        return Err(Error::GridMismatch(format!(
            "sample {}: fine pixel {fine_ps} m x3 != mid pixel {mid_ps} m",
            entry.id
        )));
    }

    // Crop to a common extent with fine dims divisible by 3 (cropping, not
    // padding, keeps the physical averaging identity intact).
    let mid_h = (fine_idx.grid.height / 3).min(mid_lst.grid.height);
    let mid_w = (fine_idx.grid.width / 3).min(mid_lst.grid.width);
    if mid_h == 0 || mid_w == 0 {
        return Err(Error::GridMismatch(format!(
            "sample {}: rasters too small to align",
            entry.id
        )));
    }
    let (fine_h, fine_w) = (mid_h * 3, mid_w * 3);
    if fine_idx.grid.height != fine_h || fine_idx.grid.width != fine_w {
        fine_idx = fine_idx.crop(0, 0, fine_h, fine_w)?;
    }
    for r in [&mut mid_idx, &mut mid_lst] {
        if r.grid.height != mid_h || r.grid.width != mid_w {
            *r = r.crop(0, 0, mid_h, mid_w)?;
        }
    }
    if let Some(r) = mid_t2.as_mut() {
        if r.grid.height != mid_h || r.grid.width != mid_w {
            *r = r.crop(0, 0, mid_h, mid_w)?;
        }
    }
    if let Some(r) = truth.as_mut() {
        if r.grid.height != fine_h || r.grid.width != fine_w {
            *r = r.crop(0, 0, fine_h, fine_w)?;
        }
        *r = fill_gaps_adaptive(r)?;
    }

    Ok(SampleTriple {
        id: entry.id.clone(),
        t1: entry.t1,
        t2: entry.t2,
        split: entry.split,
        t1_indices_fine: fine_idx,
        t1_indices_mid: mid_idx,
        t1_lst_mid: mid_lst,
        t1_lst_coarse: coarse_t1,
        t2_lst_coarse: coarse_t2,
        t2_lst_mid: mid_t2,
        t2_lst_fine_truth: truth,
    })
}
