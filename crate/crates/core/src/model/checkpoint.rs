//! Single-file checkpoint: a magic header, a JSON block describing configs and
//! the array index, then raw little-endian float32 blobs. Round-trips are
//! bit-exact.

use std::collections::BTreeMap;
use std::fs;
use std::io::Write;
use std::path::Path;

use ndarray::Array4;
use serde::{Deserialize, Serialize};

use crate::dataset::NormRange;
use crate::error::{Error, Result};
use crate::model::discriminator::DiscriminatorConfig;
use crate::model::generator::GeneratorConfig;
use crate::nn::params::{ParamMap, ParamStore};

const MAGIC: &[u8; 8] = b"TFCKPT01";

#[derive(Debug, Clone, Serialize, Deserialize)]
struct ArrayIndex {
    section: String,
    name: String,
    shape: Vec<usize>,
    /// Byte offset into the blob section.
    offset: usize,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct CheckpointHeader {
    generator: GeneratorConfig,
    discriminator: Option<DiscriminatorConfig>,
    normalization: NormRange,
    step: usize,
    arrays: Vec<ArrayIndex>,
}

#[derive(Debug, Clone)]
pub struct Checkpoint {
    pub generator_config: GeneratorConfig,
    pub discriminator_config: Option<DiscriminatorConfig>,
    pub normalization: NormRange,
    pub step: usize,
    pub generator: ParamStore<f32>,
    pub discriminator: Option<ParamStore<f32>>,
}

fn push_section(
    arrays: &mut Vec<ArrayIndex>,
    blobs: &mut Vec<u8>,
    section: &str,
    map: &ParamMap<f32>,
) {
    for (name, value) in map {
        arrays.push(ArrayIndex {
            section: section.to_string(),
            name: name.clone(),
            shape: value.shape().to_vec(),
            offset: blobs.len(),
        });
        for v in value.iter() {
            blobs.extend_from_slice(&v.to_le_bytes());
        }
    }
}

pub fn save(
    path: impl AsRef<Path>,
    generator_config: &GeneratorConfig,
    discriminator_config: Option<&DiscriminatorConfig>,
    normalization: &NormRange,
    step: usize,
    generator: &ParamStore<f32>,
    discriminator: Option<&ParamStore<f32>>,
) -> Result<()> {
    let mut arrays = Vec::new();
    let mut blobs = Vec::new();
    push_section(&mut arrays, &mut blobs, "gen_weights", &generator.weights);
    push_section(&mut arrays, &mut blobs, "gen_buffers", &generator.buffers);
    if let Some(d) = discriminator {
        push_section(&mut arrays, &mut blobs, "disc_weights", &d.weights);
        push_section(&mut arrays, &mut blobs, "disc_buffers", &d.buffers);
    }
    let header = CheckpointHeader {
        generator: generator_config.clone(),
        discriminator: discriminator_config.cloned(),
        normalization: *normalization,
        step,
        arrays,
    };
    let header_json = serde_json::to_vec(&header)?;
    let mut file = fs::File::create(path.as_ref())?;
    file.write_all(MAGIC)?;
    file.write_all(&(header_json.len() as u64).to_le_bytes())?;
    file.write_all(&header_json)?;
    file.write_all(&blobs)?;
    Ok(())
}

pub fn load(path: impl AsRef<Path>) -> Result<Checkpoint> {
    let bytes = fs::read(path.as_ref()).map_err(|e| {
        Error::Checkpoint(format!("cannot read {}: {e}", path.as_ref().display()))
    })?;
    if bytes.len() < 16 || &bytes[0..8] != MAGIC {
        return Err(Error::Checkpoint("not a checkpoint file".into()));
    }
    let header_len = u64::from_le_bytes(bytes[8..16].try_into().unwrap()) as usize;
    let header_end = 16 + header_len;
    if bytes.len() < header_end {
        return Err(Error::Checkpoint("truncated header".into()));
    }
    let header: CheckpointHeader = serde_json::from_slice(&bytes[16..header_end])?;
    let blobs = &bytes[header_end..];

    let mut sections: BTreeMap<String, ParamMap<f32>> = BTreeMap::new();
    for meta in &header.arrays {
        let count: usize = meta.shape.iter().product();
        let end = meta.offset + count * 4;
        if end > blobs.len() {
            return Err(Error::Checkpoint(format!(
                "array `{}` extends past the blob section",
                meta.name
            )));
        }
        let data: Vec<f32> = blobs[meta.offset..end]
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
            .collect();
        if meta.shape.len() != 4 {
            return Err(Error::Checkpoint(format!(
                "array `{}` is not 4D",
                meta.name
            )));
        }
        let arr = Array4::from_shape_vec(
            (meta.shape[0], meta.shape[1], meta.shape[2], meta.shape[3]),
            data,
        )
        .map_err(|e| Error::Checkpoint(format!("array `{}`: {e}", meta.name)))?;
        sections
            .entry(meta.section.clone())
            .or_default()
            .insert(meta.name.clone(), arr);
    }

    let generator = ParamStore {
        weights: sections.remove("gen_weights").unwrap_or_default(),
        buffers: sections.remove("gen_buffers").unwrap_or_default(),
    };
    if generator.weights.is_empty() {
        return Err(Error::Checkpoint("checkpoint has no generator weights".into()));
    }
    let disc_weights = sections.remove("disc_weights");
    let discriminator = disc_weights.map(|weights| ParamStore {
        weights,
        buffers: sections.remove("disc_buffers").unwrap_or_default(),
    });

    Ok(Checkpoint {
        generator_config: header.generator,
        discriminator_config: header.discriminator,
        normalization: header.normalization,
        step: header.step,
        generator,
        discriminator,
    })
}
