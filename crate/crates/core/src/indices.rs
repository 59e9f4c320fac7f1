//! Spectral indices (NDVI, NDBI, NDWI) from sensor band stacks.
//!
//! All three are normalized differences `(a - b) / (a + b)` over reflectance
//! bands; only the band roles differ per index. The role-to-band assignment of
//! a given sensor lives in ingestion configuration, with the two supported
//! sensors shipped as presets.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::raster::Raster;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BandRole {
    Green,
    Red,
    Nir,
    Swir,
}

impl BandRole {
    pub const ALL: [BandRole; 4] = [BandRole::Green, BandRole::Red, BandRole::Nir, BandRole::Swir];

    pub fn name(&self) -> &'static str {
        match self {
            BandRole::Green => "green",
            BandRole::Red => "red",
            BandRole::Nir => "nir",
            BandRole::Swir => "swir",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Sensor {
    Landsat8,
    Sentinel2,
}

impl Sensor {
    /// Preset role-to-band-index mapping for a stack stored in ascending
    /// band-number order (green, red, nir, swir positions within the file).
    ///
    /// Landsat 8 surface reflectance uses B3/B4/B5/B6 and Sentinel-2 uses
    /// B3/B4/B8/B11 for those roles; both stack to the same positional order.
    pub fn preset_roles(&self) -> BTreeMap<BandRole, usize> {
        let mut m = BTreeMap::new();
        m.insert(BandRole::Green, 0);
        m.insert(BandRole::Red, 1);
        m.insert(BandRole::Nir, 2);
        m.insert(BandRole::Swir, 3);
        m
    }
}

/// A sensor band stack with named roles. All bands share one grid and mask;
/// reflectance values are expected in `[0, 1]` after ingest scaling.
#[derive(Debug, Clone)]
pub struct BandSet {
    pub sensor: Sensor,
    stack: Raster,
    roles: BTreeMap<BandRole, usize>,
}

impl BandSet {
    pub fn new(sensor: Sensor, stack: Raster, roles: BTreeMap<BandRole, usize>) -> Result<Self> {
        for role in BandRole::ALL {
            match roles.get(&role) {
                None => return Err(Error::MissingBand(role.name().to_string())),
                Some(&idx) if idx >= stack.bands => {
                    return Err(Error::MissingBand(format!(
                        "{} maps to band {idx} but stack has {} bands",
                        role.name(),
                        stack.bands
                    )))
                }
                _ => {}
            }
        }
        Ok(BandSet {
            sensor,
            stack,
            roles,
        })
    }

    pub fn from_preset(sensor: Sensor, stack: Raster) -> Result<Self> {
        let roles = sensor.preset_roles();
        BandSet::new(sensor, stack, roles)
    }

    pub fn band(&self, role: BandRole) -> Result<Raster> {
        let idx = *self
            .roles
            .get(&role)
            .ok_or_else(|| Error::MissingBand(role.name().to_string()))?;
        let pixels = self.stack.grid.pixels();
        let values = self.stack.values()[idx * pixels..(idx + 1) * pixels].to_vec();
        Raster::new(self.stack.grid.clone(), 1, values, self.stack.mask().to_vec())
    }
}

/// Per-pixel `(a - b) / (a + b)`.
///
/// Inputs must share a grid and are co-masked; pixels where `a + b == 0` are
/// masked in the output rather than clamped, so a fabricated value can never
/// enter the fusion. Unmasked outputs lie in `[-1, 1]` for non-negative inputs.
pub fn normalized_difference(a: &Raster, b: &Raster) -> Result<Raster> {
    if !a.grid.same_geometry(&b.grid, 1e-6) {
        return Err(Error::GridMismatch(
            "normalized_difference inputs must share one grid".into(),
        ));
    }
    if a.bands != 1 || b.bands != 1 {
        return Err(Error::ShapeMismatch(
            "normalized_difference expects single-band inputs".into(),
        ));
    }
    let pixels = a.grid.pixels();
    let mut values = vec![0f32; pixels];
    let mut mask = vec![true; pixels];
    let (av, bv) = (a.band(0), b.band(0));
    for i in 0..pixels {
        let valid = a.mask()[i] && b.mask()[i];
        if !valid {
            mask[i] = false;
            continue;
        }
        let (x, y) = (av[i] as f64, bv[i] as f64);
        let sum = x + y;
        if sum == 0.0 {
            mask[i] = false;
            continue;
        }
        values[i] = (((x - y) / sum) as f32).clamp(-1.0, 1.0);
    }
    Raster::new(a.grid.clone(), 1, values, mask)
}

/// Index band order in every 3-band index raster.
pub const INDEX_BAND_ORDER: [&str; 3] = ["ndvi", "ndbi", "ndwi"];

/// Compute the three-band index raster in the fixed order (NDVI, NDBI, NDWI):
/// NDVI = (NIR-Red)/(NIR+Red), NDBI = (SWIR-NIR)/(SWIR+NIR),
/// NDWI = (Green-NIR)/(Green+NIR).
pub fn compute_indices(bs: &BandSet) -> Result<Raster> {
    let green = bs.band(BandRole::Green)?;
    let red = bs.band(BandRole::Red)?;
    let nir = bs.band(BandRole::Nir)?;
    let swir = bs.band(BandRole::Swir)?;

    let ndvi = normalized_difference(&nir, &red)?;
    let ndbi = normalized_difference(&swir, &nir)?;
    let ndwi = normalized_difference(&green, &nir)?;

    let pixels = ndvi.grid.pixels();
    let mut values = Vec::with_capacity(3 * pixels);
    values.extend_from_slice(ndvi.band(0));
    values.extend_from_slice(ndbi.band(0));
    values.extend_from_slice(ndwi.band(0));
    let mask: Vec<bool> = (0..pixels)
        .map(|i| ndvi.mask()[i] && ndbi.mask()[i] && ndwi.mask()[i])
        .collect();
    Raster::new(ndvi.grid.clone(), 3, values, mask)
}
