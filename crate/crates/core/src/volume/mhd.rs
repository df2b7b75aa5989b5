//! MetaImage (.mhd + .raw) reader and writer.
//!
//! Supported: 3D, uncompressed, little-endian, element types MET_UCHAR and
//! MET_FLOAT. Unknown header keys are ignored on read and never emitted on
//! write; `ElementDataFile` is resolved relative to the header's directory.

use std::fs;
use std::io::Write;
use std::path::Path;

use super::Volume;
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ElementType {
    Uint8,
    Float32,
}

impl ElementType {
    fn size(self) -> usize {
        match self {
            ElementType::Uint8 => 1,
            ElementType::Float32 => 4,
        }
    }

    fn met_name(self) -> &'static str {
        match self {
            ElementType::Uint8 => "MET_UCHAR",
            ElementType::Float32 => "MET_FLOAT",
        }
    }
}

/// Read an MHD header+raw pair into a `Volume`.
pub fn read_mhd(path: impl AsRef<Path>) -> Result<Volume> {
    let path = path.as_ref();
    let header = fs::read_to_string(path)?;

    let mut ndims = None;
    let mut dims: Option<[usize; 3]> = None;
    let mut spacing = [1.0f64; 3];
    let mut elem: Option<ElementType> = None;
    let mut data_file: Option<String> = None;

    for line in header.lines() {
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        let Some((key, value)) = line.split_once('=') else {
            continue;
        };
        let key = key.trim();
        let value = value.trim();
        match key {
            "ObjectType" => {
                if value != "Image" {
                    return Err(Error::UnsupportedMhd(format!("ObjectType {value}")));
                }
            }
            "NDims" => {
                ndims = Some(
                    value
                        .parse::<usize>()
                        .map_err(|_| Error::UnsupportedMhd(format!("NDims {value}")))?,
                );
            }
            "DimSize" => {
                let parts: Vec<usize> = value
                    .split_whitespace()
                    .map(|s| s.parse::<usize>())
                    .collect::<std::result::Result<_, _>>()
                    .map_err(|_| Error::UnsupportedMhd(format!("DimSize {value}")))?;
                if parts.len() != 3 || parts.iter().any(|&d| d == 0) {
                    return Err(Error::UnsupportedMhd(format!("DimSize {value}")));
                }
                dims = Some([parts[0], parts[1], parts[2]]);
            }
            "ElementSpacing" => {
                let parts: Vec<f64> = value
                    .split_whitespace()
                    .map(|s| s.parse::<f64>())
                    .collect::<std::result::Result<_, _>>()
                    .map_err(|_| Error::UnsupportedMhd(format!("ElementSpacing {value}")))?;
                if parts.len() != 3 || parts.iter().any(|&s| !(s > 0.0)) {
                    return Err(Error::UnsupportedMhd(format!("ElementSpacing {value}")));
                }
                spacing = [parts[0], parts[1], parts[2]];
            }
            "ElementType" => {
                elem = Some(match value {
                    "MET_UCHAR" => ElementType::Uint8,
                    "MET_FLOAT" => ElementType::Float32,
                    other => return Err(Error::UnsupportedMhd(format!("ElementType {other}"))),
                });
            }
            "CompressedData" => {
                if value.eq_ignore_ascii_case("true") {
                    return Err(Error::UnsupportedMhd("compressed data".into()));
                }
            }
            "BinaryDataByteOrderMSB" | "ElementByteOrderMSB" => {
                if value.eq_ignore_ascii_case("true") {
                    return Err(Error::UnsupportedMhd("big-endian data".into()));
                }
            }
            "ElementDataFile" => {
                if value == "LIST" || value == "LOCAL" {
                    return Err(Error::UnsupportedMhd(format!("ElementDataFile {value}")));
                }
                data_file = Some(value.to_string());
            }
            _ => {} // unknown keys ignored
        }
    }

    if let Some(n) = ndims {
        if n != 3 {
            return Err(Error::UnsupportedMhd(format!("NDims {n}")));
        }
    }
    let dims = dims.ok_or_else(|| Error::UnsupportedMhd("missing DimSize".into()))?;
    let elem = elem.ok_or_else(|| Error::UnsupportedMhd("missing ElementType".into()))?;
    let data_file = data_file.ok_or_else(|| Error::UnsupportedMhd("missing ElementDataFile".into()))?;

    let raw_path = path.parent().unwrap_or(Path::new(".")).join(data_file);
    let raw = fs::read(&raw_path)?;
    let n = dims[0] * dims[1] * dims[2];
    let expected = n * elem.size();
    if raw.len() != expected {
        return Err(Error::SizeMismatch {
            expected,
            actual: raw.len(),
        });
    }

    let data = match elem {
        ElementType::Uint8 => raw.iter().map(|&b| b as f32).collect(),
        ElementType::Float32 => raw
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
            .collect(),
    };

    Ok(Volume { dims, spacing, data })
}

/// Write a `Volume` as an MHD header plus raw file next to it.
///
/// The raw file gets the same stem with a `.raw` extension. For `Uint8` the
/// values are rounded; values outside [0, 255] after rounding are an error.
pub fn write_mhd(v: &Volume, path: impl AsRef<Path>, elem: ElementType) -> Result<()> {
    let path = path.as_ref();
    let raw_name = {
        let stem = path
            .file_stem()
            .ok_or_else(|| Error::UnsupportedMhd("path has no file name".into()))?;
        let mut name = stem.to_os_string();
        name.push(".raw");
        name
    };

    let raw: Vec<u8> = match elem {
        ElementType::Uint8 => {
            let mut out = Vec::with_capacity(v.data.len());
            for &x in &v.data {
                let r = x.round();
                if !(0.0..=255.0).contains(&r) {
                    return Err(Error::Uint8Range(x));
                }
                out.push(r as u8);
            }
            out
        }
        ElementType::Float32 => {
            let mut out = Vec::with_capacity(v.data.len() * 4);
            for &x in &v.data {
                out.extend_from_slice(&x.to_le_bytes());
            }
            out
        }
    };

    let header = format!(
        "ObjectType = Image\nNDims = 3\nDimSize = {} {} {}\nElementSpacing = {} {} {}\nElementType = {}\nElementDataFile = {}\n",
        v.dims[0],
        v.dims[1],
        v.dims[2],
        v.spacing[0],
        v.spacing[1],
        v.spacing[2],
        elem.met_name(),
        raw_name.to_string_lossy(),
    );

    let mut hf = fs::File::create(path)?;
    hf.write_all(header.as_bytes())?;
    fs::write(path.with_file_name(raw_name), raw)?;
    Ok(())
}
