//! Minimal GeoTIFF I/O for float32 rasters.
//!
//! Covers exactly what the pipeline produces and consumes: classic TIFF,
//! uncompressed, stripped, IEEE float32 samples, single- or multi-band with
//! pixel-interleaved layout, plus the GeoTIFF georeferencing tags
//! (ModelPixelScale, ModelTiepoint, GeoKeyDirectory) and the GDAL nodata tag.
//! The reader accepts both byte orders; the writer always emits little-endian
//! with a fixed layout so identical rasters serialize to identical bytes.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::raster::{GridSpec, Raster};

const TAG_IMAGE_WIDTH: u16 = 256;
const TAG_IMAGE_LENGTH: u16 = 257;
const TAG_BITS_PER_SAMPLE: u16 = 258;
const TAG_COMPRESSION: u16 = 259;
const TAG_PHOTOMETRIC: u16 = 262;
const TAG_STRIP_OFFSETS: u16 = 273;
const TAG_SAMPLES_PER_PIXEL: u16 = 277;
const TAG_ROWS_PER_STRIP: u16 = 278;
const TAG_STRIP_BYTE_COUNTS: u16 = 279;
const TAG_PLANAR_CONFIG: u16 = 284;
const TAG_SAMPLE_FORMAT: u16 = 339;
const TAG_MODEL_PIXEL_SCALE: u16 = 33550;
const TAG_MODEL_TIEPOINT: u16 = 33922;
const TAG_GEO_KEY_DIRECTORY: u16 = 34735;
const TAG_GEO_ASCII_PARAMS: u16 = 34737;
const TAG_GDAL_NODATA: u16 = 42113;

const GEOKEY_MODEL_TYPE: u16 = 1024;
const GEOKEY_RASTER_TYPE: u16 = 1025;
const GEOKEY_CITATION: u16 = 1026;
const GEOKEY_PROJECTED_CS_TYPE: u16 = 3072;

const TYPE_ASCII: u16 = 2;
const TYPE_SHORT: u16 = 3;
const TYPE_LONG: u16 = 4;
const TYPE_DOUBLE: u16 = 12;

fn type_size(t: u16) -> Result<usize> {
    Ok(match t {
        1 | TYPE_ASCII | 6 | 7 => 1,
        TYPE_SHORT | 8 => 2,
        TYPE_LONG | 9 | 11 => 4,
        5 | 10 | TYPE_DOUBLE => 8,
        _ => return Err(Error::GeoTiff(format!("unsupported field type {t}"))),
    })
}

// ---------------------------------------------------------------------------
// Writer
// ---------------------------------------------------------------------------

struct TagEntry {
    tag: u16,
    field_type: u16,
    count: u32,
    /// Raw little-endian payload; inlined when it fits in 4 bytes.
    payload: Vec<u8>,
}

fn short_payload(values: &[u16]) -> Vec<u8> {
    values.iter().flat_map(|v| v.to_le_bytes()).collect()
}

fn long_payload(values: &[u32]) -> Vec<u8> {
    values.iter().flat_map(|v| v.to_le_bytes()).collect()
}

fn double_payload(values: &[f64]) -> Vec<u8> {
    values.iter().flat_map(|v| v.to_le_bytes()).collect()
}

/// Serialize a raster to GeoTIFF bytes. Masked pixels are written as NaN and the
/// GDAL nodata tag is set to `nan`.
pub fn to_bytes(raster: &Raster) -> Vec<u8> {
    let grid = &raster.grid;
    let (w, h, bands) = (grid.width as u32, grid.height as u32, raster.bands as u32);
    let pixel_bytes = raster.bands * 4;
    let data_len = grid.pixels() * pixel_bytes;

    // Pixel data directly after the 8-byte header, pixel-interleaved.
    let data_offset = 8u32;
    let mut data = Vec::with_capacity(data_len);
    for row in 0..grid.height {
        for col in 0..grid.width {
            for b in 0..raster.bands {
                data.extend_from_slice(&raster.get(b, row, col).to_le_bytes());
            }
        }
    }

    let epsg = parse_epsg(&grid.crs_id);
    let mut geo_keys: Vec<u16> = Vec::new();
    // Header: version, revision 1.0, number of keys (patched below).
    geo_keys.extend_from_slice(&[1, 1, 0, 0]);
    // Model type 1 = projected, raster type 1 = pixel-is-area.
    geo_keys.extend_from_slice(&[GEOKEY_MODEL_TYPE, 0, 1, 1]);
    geo_keys.extend_from_slice(&[GEOKEY_RASTER_TYPE, 0, 1, 1]);
    let mut ascii_params = format!("{}|", grid.crs_id);
    ascii_params.push('\0');
    geo_keys.extend_from_slice(&[
        GEOKEY_CITATION,
        TAG_GEO_ASCII_PARAMS,
        grid.crs_id.len() as u16 + 1,
        0,
    ]);
    if let Some(code) = epsg {
        geo_keys.extend_from_slice(&[GEOKEY_PROJECTED_CS_TYPE, 0, 1, code]);
    }
    let nkeys = (geo_keys.len() / 4 - 1) as u16;
    geo_keys[3] = nkeys;

    let mut entries = vec![
        TagEntry {
            tag: TAG_IMAGE_WIDTH,
            field_type: TYPE_LONG,
            count: 1,
            payload: long_payload(&[w]),
        },
        TagEntry {
            tag: TAG_IMAGE_LENGTH,
            field_type: TYPE_LONG,
            count: 1,
            payload: long_payload(&[h]),
        },
        TagEntry {
            tag: TAG_BITS_PER_SAMPLE,
            field_type: TYPE_SHORT,
            count: bands,
            payload: short_payload(&vec![32u16; raster.bands]),
        },
        TagEntry {
            tag: TAG_COMPRESSION,
            field_type: TYPE_SHORT,
            count: 1,
            payload: short_payload(&[1]),
        },
        TagEntry {
            tag: TAG_PHOTOMETRIC,
            field_type: TYPE_SHORT,
            count: 1,
            payload: short_payload(&[1]),
        },
        TagEntry {
            tag: TAG_STRIP_OFFSETS,
            field_type: TYPE_LONG,
            count: 1,
            payload: long_payload(&[data_offset]),
        },
        TagEntry {
            tag: TAG_SAMPLES_PER_PIXEL,
            field_type: TYPE_SHORT,
            count: 1,
            payload: short_payload(&[raster.bands as u16]),
        },
        TagEntry {
            tag: TAG_ROWS_PER_STRIP,
            field_type: TYPE_LONG,
            count: 1,
            payload: long_payload(&[h]),
        },
        TagEntry {
            tag: TAG_STRIP_BYTE_COUNTS,
            field_type: TYPE_LONG,
            count: 1,
            payload: long_payload(&[data_len as u32]),
        },
        TagEntry {
            tag: TAG_PLANAR_CONFIG,
            field_type: TYPE_SHORT,
            count: 1,
            payload: short_payload(&[1]),
        },
        TagEntry {
            tag: TAG_SAMPLE_FORMAT,
            field_type: TYPE_SHORT,
            count: bands,
            payload: short_payload(&vec![3u16; raster.bands]),
        },
        TagEntry {
            tag: TAG_MODEL_PIXEL_SCALE,
            field_type: TYPE_DOUBLE,
            count: 3,
            payload: double_payload(&[grid.pixel_size, grid.pixel_size, 0.0]),
        },
        TagEntry {
            tag: TAG_MODEL_TIEPOINT,
            field_type: TYPE_DOUBLE,
            count: 6,
            payload: double_payload(&[0.0, 0.0, 0.0, grid.origin_x, grid.origin_y, 0.0]),
        },
        TagEntry {
            tag: TAG_GEO_KEY_DIRECTORY,
            field_type: TYPE_SHORT,
            count: geo_keys.len() as u32,
            payload: short_payload(&geo_keys),
        },
        TagEntry {
            tag: TAG_GEO_ASCII_PARAMS,
            field_type: TYPE_ASCII,
            count: ascii_params.len() as u32,
            payload: ascii_params.into_bytes(),
        },
        TagEntry {
            tag: TAG_GDAL_NODATA,
            field_type: TYPE_ASCII,
            count: 4,
            payload: b"nan\0".to_vec(),
        },
    ];
    entries.sort_by_key(|e| e.tag);

    let ifd_offset = data_offset as usize + data_len;
    let ifd_len = 2 + entries.len() * 12 + 4;
    let mut overflow: Vec<u8> = Vec::new();
    let mut ifd: Vec<u8> = Vec::with_capacity(ifd_len);
    ifd.extend_from_slice(&(entries.len() as u16).to_le_bytes());
    for e in &entries {
        ifd.extend_from_slice(&e.tag.to_le_bytes());
        ifd.extend_from_slice(&e.field_type.to_le_bytes());
        ifd.extend_from_slice(&e.count.to_le_bytes());
        if e.payload.len() <= 4 {
            let mut inline = e.payload.clone();
            inline.resize(4, 0);
            ifd.extend_from_slice(&inline);
        } else {
            let mut off = ifd_offset + ifd_len + overflow.len();
            if off % 2 == 1 {
                overflow.push(0);
                off += 1;
            }
            ifd.extend_from_slice(&(off as u32).to_le_bytes());
            overflow.extend_from_slice(&e.payload);
        }
    }
    ifd.extend_from_slice(&0u32.to_le_bytes()); // no next IFD

    let mut out = Vec::with_capacity(8 + data_len + ifd_len + overflow.len());
    out.extend_from_slice(b"II");
    out.extend_from_slice(&42u16.to_le_bytes());
    out.extend_from_slice(&(ifd_offset as u32).to_le_bytes());
    out.extend_from_slice(&data);
    out.extend_from_slice(&ifd);
    out.extend_from_slice(&overflow);
    out
}

pub fn write(path: impl AsRef<Path>, raster: &Raster) -> Result<()> {
    fs::write(path.as_ref(), to_bytes(raster)).map_err(Error::Io)
}

fn parse_epsg(crs_id: &str) -> Option<u16> {
    crs_id
        .strip_prefix("EPSG:")
        .or_else(|| crs_id.strip_prefix("epsg:"))
        .and_then(|code| code.parse::<u16>().ok())
}

// ---------------------------------------------------------------------------
// Reader
// ---------------------------------------------------------------------------

struct Cursor<'a> {
    bytes: &'a [u8],
    little_endian: bool,
}

impl<'a> Cursor<'a> {
    fn u16_at(&self, off: usize) -> Result<u16> {
        let raw: [u8; 2] = self
            .bytes
            .get(off..off + 2)
            .ok_or_else(|| Error::GeoTiff("truncated file".into()))?
            .try_into()
            .unwrap();
        Ok(if self.little_endian {
            u16::from_le_bytes(raw)
        } else {
            u16::from_be_bytes(raw)
        })
    }

    fn u32_at(&self, off: usize) -> Result<u32> {
        let raw: [u8; 4] = self
            .bytes
            .get(off..off + 4)
            .ok_or_else(|| Error::GeoTiff("truncated file".into()))?
            .try_into()
            .unwrap();
        Ok(if self.little_endian {
            u32::from_le_bytes(raw)
        } else {
            u32::from_be_bytes(raw)
        })
    }

    fn f64_at(&self, off: usize) -> Result<f64> {
        let raw: [u8; 8] = self
            .bytes
            .get(off..off + 8)
            .ok_or_else(|| Error::GeoTiff("truncated file".into()))?
            .try_into()
            .unwrap();
        Ok(if self.little_endian {
            f64::from_le_bytes(raw)
        } else {
            f64::from_be_bytes(raw)
        })
    }

    fn f32_at(&self, off: usize) -> Result<f32> {
        let raw: [u8; 4] = self
            .bytes
            .get(off..off + 4)
            .ok_or_else(|| Error::GeoTiff("truncated file".into()))?
            .try_into()
            .unwrap();
        Ok(if self.little_endian {
            f32::from_le_bytes(raw)
        } else {
            f32::from_be_bytes(raw)
        })
    }
}

struct RawTag {
    field_type: u16,
    count: usize,
    /// Offset of the value block in the file.
    value_offset: usize,
}

fn tag_numbers(cur: &Cursor, tag: &RawTag) -> Result<Vec<f64>> {
    let size = type_size(tag.field_type)?;
    let mut out = Vec::with_capacity(tag.count);
    for i in 0..tag.count {
        let off = tag.value_offset + i * size;
        let v = match tag.field_type {
            1 | 6 | 7 => *cur
                .bytes
                .get(off)
                .ok_or_else(|| Error::GeoTiff("truncated tag value".into()))?
                as f64,
            TYPE_SHORT => cur.u16_at(off)? as f64,
            TYPE_LONG => cur.u32_at(off)? as f64,
            TYPE_DOUBLE => cur.f64_at(off)?,
            11 => cur.f32_at(off)? as f64,
            t => return Err(Error::GeoTiff(format!("unsupported numeric type {t}"))),
        };
        out.push(v);
    }
    Ok(out)
}

fn tag_ascii(cur: &Cursor, tag: &RawTag) -> Result<String> {
    let raw = cur
        .bytes
        .get(tag.value_offset..tag.value_offset + tag.count)
        .ok_or_else(|| Error::GeoTiff("truncated ascii tag".into()))?;
    let end = raw.iter().position(|b| *b == 0).unwrap_or(raw.len());
    Ok(String::from_utf8_lossy(&raw[..end]).into_owned())
}

/// Parse GeoTIFF bytes into a raster. Pixels equal to the GDAL nodata value
/// (or NaN) are masked.
pub fn from_bytes(bytes: &[u8]) -> Result<Raster> {
    if bytes.len() < 8 {
        return Err(Error::GeoTiff("file too short for TIFF header".into()));
    }
    let little_endian = match &bytes[0..2] {
        b"II" => true,
        b"MM" => false,
        _ => return Err(Error::GeoTiff("not a TIFF file (bad byte-order mark)".into())),
    };
    let cur = Cursor {
        bytes,
        little_endian,
    };
    if cur.u16_at(2)? != 42 {
        return Err(Error::GeoTiff("not a classic TIFF file".into()));
    }
    let ifd_offset = cur.u32_at(4)? as usize;
    let entry_count = cur.u16_at(ifd_offset)? as usize;
    let mut tags: BTreeMap<u16, RawTag> = BTreeMap::new();
    for i in 0..entry_count {
        let base = ifd_offset + 2 + i * 12;
        let tag = cur.u16_at(base)?;
        let field_type = cur.u16_at(base + 2)?;
        let count = cur.u32_at(base + 4)? as usize;
        let byte_len = count * type_size(field_type)?;
        let value_offset = if byte_len <= 4 {
            base + 8
        } else {
            cur.u32_at(base + 8)? as usize
        };
        tags.insert(
            tag,
            RawTag {
                field_type,
                count,
                value_offset,
            },
        );
    }

    let num = |tag: u16, name: &str| -> Result<Vec<f64>> {
        tags.get(&tag)
            .ok_or_else(|| Error::GeoTiff(format!("missing required tag {name}")))
            .and_then(|t| tag_numbers(&cur, t))
    };

    let width = num(TAG_IMAGE_WIDTH, "ImageWidth")?[0] as usize;
    let height = num(TAG_IMAGE_LENGTH, "ImageLength")?[0] as usize;
    let bands = tags
        .get(&TAG_SAMPLES_PER_PIXEL)
        .map(|t| tag_numbers(&cur, t).map(|v| v[0] as usize))
        .transpose()?
        .unwrap_or(1);
    if let Some(t) = tags.get(&TAG_COMPRESSION) {
        let c = tag_numbers(&cur, t)?[0] as u16;
        if c != 1 {
            return Err(Error::GeoTiff(format!(
                "unsupported compression {c}; only uncompressed TIFF is supported"
            )));
        }
    }
    let bits = num(TAG_BITS_PER_SAMPLE, "BitsPerSample")?;
    if bits.iter().any(|b| *b != 32.0) {
        return Err(Error::GeoTiff("only 32-bit samples are supported".into()));
    }
    if let Some(t) = tags.get(&TAG_SAMPLE_FORMAT) {
        let fmt = tag_numbers(&cur, t)?;
        if fmt.iter().any(|f| *f != 3.0) {
            return Err(Error::GeoTiff(
                "only IEEE float sample format is supported".into(),
            ));
        }
    }
    if let Some(t) = tags.get(&TAG_PLANAR_CONFIG) {
        let p = tag_numbers(&cur, t)?[0] as u16;
        if p != 1 {
            return Err(Error::GeoTiff(
                "only pixel-interleaved (chunky) layout is supported".into(),
            ));
        }
    }

    let offsets = num(TAG_STRIP_OFFSETS, "StripOffsets")?;
    let counts = num(TAG_STRIP_BYTE_COUNTS, "StripByteCounts")?;
    if offsets.len() != counts.len() {
        return Err(Error::GeoTiff("strip offsets/counts mismatch".into()));
    }
    let expected = width * height * bands * 4;
    let total: usize = counts.iter().map(|c| *c as usize).sum();
    if total != expected {
        return Err(Error::GeoTiff(format!(
            "strip data holds {total} bytes, expected {expected}"
        )));
    }

    let mut interleaved = Vec::with_capacity(width * height * bands);
    for (off, len) in offsets.iter().zip(&counts) {
        let (off, len) = (*off as usize, *len as usize);
        for i in 0..len / 4 {
            interleaved.push(cur.f32_at(off + i * 4)?);
        }
    }

    // Georeferencing.
    let scale = tags
        .get(&TAG_MODEL_PIXEL_SCALE)
        .map(|t| tag_numbers(&cur, t))
        .transpose()?;
    let tiepoint = tags
        .get(&TAG_MODEL_TIEPOINT)
        .map(|t| tag_numbers(&cur, t))
        .transpose()?;
    let (pixel_size, origin_x, origin_y) = match (scale, tiepoint) {
        (Some(s), Some(t)) if s.len() >= 2 && t.len() >= 6 => {
            // Tiepoint maps raster (i, j) to world (x, y): shift back to (0, 0).
            (s[0], t[3] - t[0] * s[0], t[4] + t[1] * s[1])
        }
        _ => (1.0, 0.0, height as f64),
    };

    let crs_id = read_crs(&cur, &tags)?;
    let nodata = tags
        .get(&TAG_GDAL_NODATA)
        .map(|t| tag_ascii(&cur, t))
        .transpose()?
        .and_then(|s| {
            let s = s.trim().to_ascii_lowercase();
            if s == "nan" {
                Some(f32::NAN)
            } else {
                s.parse::<f32>().ok()
            }
        });

    let pixels = width * height;
    let mut values = vec![0f32; bands * pixels];
    let mut mask = vec![true; pixels];
    for p in 0..pixels {
        for b in 0..bands {
            let v = interleaved[p * bands + b];
            let is_nodata = v.is_nan()
                || nodata
                    .map(|nd| !nd.is_nan() && v == nd)
                    .unwrap_or(false);
            if is_nodata {
                mask[p] = false;
            }
            values[b * pixels + p] = v;
        }
    }

    let grid = GridSpec::new(width, height, pixel_size, origin_x, origin_y, crs_id)?;
    Raster::new(grid, bands, values, mask)
}

fn read_crs(cur: &Cursor, tags: &BTreeMap<u16, RawTag>) -> Result<String> {
    if let Some(dir) = tags.get(&TAG_GEO_KEY_DIRECTORY) {
        let keys = tag_numbers(cur, dir)?;
        let nkeys = keys.get(3).copied().unwrap_or(0.0) as usize;
        for k in 0..nkeys {
            let base = 4 * (k + 1);
            if keys.len() < base + 4 {
                break;
            }
            let (key_id, location, value) = (
                keys[base] as u16,
                keys[base + 1] as u16,
                keys[base + 3] as u16,
            );
            if key_id == GEOKEY_PROJECTED_CS_TYPE && location == 0 {
                return Ok(format!("EPSG:{value}"));
            }
        }
        // Fall back to the citation text in the ascii params.
        for k in 0..nkeys {
            let base = 4 * (k + 1);
            if keys.len() < base + 4 {
                break;
            }
            let (key_id, location, count, value) = (
                keys[base] as u16,
                keys[base + 1] as u16,
                keys[base + 2] as usize,
                keys[base + 3] as usize,
            );
            if key_id == GEOKEY_CITATION && location == TAG_GEO_ASCII_PARAMS {
                if let Some(ascii) = tags.get(&TAG_GEO_ASCII_PARAMS) {
                    let text = tag_ascii(cur, ascii)?;
                    let chars: Vec<char> = text.chars().collect();
                    let end = (value + count).min(chars.len());
                    let slice: String = chars[value.min(chars.len())..end].iter().collect();
                    let cleaned = slice.trim_end_matches('|').to_string();
                    if !cleaned.is_empty() {
                        return Ok(cleaned);
                    }
                }
            }
        }
    }
    Ok("unknown".to_string())
}

pub fn read(path: impl AsRef<Path>) -> Result<Raster> {
    let bytes = fs::read(path.as_ref()).map_err(|e| {
        Error::GeoTiff(format!(
            "cannot read {}: {e}",
            path.as_ref().display()
        ))
    })?;
    from_bytes(&bytes).map_err(|e| match e {
        Error::GeoTiff(msg) => Error::GeoTiff(format!("{}: {msg}", path.as_ref().display())),
        other => other,
    })
}
