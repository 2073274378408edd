//! Stack files: a UTF-8 JSON header plus a sibling `.raw` payload holding
//! little-endian `f32` values in band-sequential order.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::{DatasetError, SpectralStack};

pub const DTYPE: &str = "f32le";
pub const ORDER: &str = "band-sequential";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StackHeader {
    pub width: usize,
    pub height: usize,
    pub channels: usize,
    pub wavelengths_nm: Vec<f64>,
    pub dtype: String,
    pub order: String,
}

/// Payload path paired with a header path (`foo.json` -> `foo.raw`).
pub fn payload_path(header: &Path) -> PathBuf {
    header.with_extension("raw")
}

pub fn save_stack(stack: &SpectralStack, path: impl AsRef<Path>) -> Result<(), DatasetError> {
    let path = path.as_ref();
    let header = StackHeader {
        width: stack.width(),
        height: stack.height(),
        channels: stack.channels(),
        wavelengths_nm: stack.wavelengths_nm().to_vec(),
        dtype: DTYPE.into(),
        order: ORDER.into(),
    };
    let mut json = serde_json::to_string_pretty(&header)?;
    json.push('\n');
    fs::write(path, json).map_err(|e| DatasetError::io(path, e))?;
    let mut bytes = Vec::with_capacity(stack.data().len() * 4);
    for v in stack.data() {
        bytes.extend_from_slice(&v.to_le_bytes());
    }
    let raw = payload_path(path);
    fs::write(&raw, bytes).map_err(|e| DatasetError::io(&raw, e))
}

pub fn load_stack(path: impl AsRef<Path>) -> Result<SpectralStack, DatasetError> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| DatasetError::io(path, e))?;
    let header: StackHeader = serde_json::from_str(&text)?;
    if header.dtype != DTYPE || header.order != ORDER {
        return Err(DatasetError::Invalid(format!(
            "unsupported stack encoding dtype={} order={}",
            header.dtype, header.order
        )));
    }
    if header.channels != header.wavelengths_nm.len() {
        return Err(DatasetError::Invalid(format!(
            "header lists {} channels but {} wavelengths",
            header.channels,
            header.wavelengths_nm.len()
        )));
    }
    let raw = payload_path(path);
    let bytes = fs::read(&raw).map_err(|e| DatasetError::io(&raw, e))?;
    let expected = header.width * header.height * header.channels * 4;
    if bytes.len() != expected {
        return Err(DatasetError::SizeMismatch {
            expected,
            actual: bytes.len(),
        });
    }
    let data = bytes
        .chunks_exact(4)
        .map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]]))
        .collect();
    SpectralStack::new(header.width, header.height, header.wavelengths_nm, data)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::default_wavelengths;

    #[test]
    fn round_trip_bit_identical() {
        let dir = tempfile::tempdir().unwrap();
        let data: Vec<f32> = (0..4 * 3 * 24).map(|i| (i as f32 * 0.37) % 255.0).collect();
        let s = SpectralStack::new(4, 3, default_wavelengths(), data).unwrap();
        let p = dir.path().join("s.json");
        save_stack(&s, &p).unwrap();
        let back = load_stack(&p).unwrap();
        assert_eq!(back, s);
        let bits: Vec<u32> = back.data().iter().map(|v| v.to_bits()).collect();
        let orig: Vec<u32> = s.data().iter().map(|v| v.to_bits()).collect();
        assert_eq!(bits, orig);
    }

    #[test]
    fn short_payload_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("s.json");
        let s = SpectralStack::zeros(2, 2, default_wavelengths()).unwrap();
        save_stack(&s, &p).unwrap();
        // payload sized for 23 bands
        fs::write(payload_path(&p), vec![0u8; 2 * 2 * 23 * 4]).unwrap();
        assert!(matches!(
            load_stack(&p),
            Err(DatasetError::SizeMismatch { .. })
        ));
    }

    #[test]
    fn repeated_wavelength_in_header_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("s.json");
        fs::write(
            &p,
            r#"{"width":1,"height":1,"channels":2,"wavelengths_nm":[500,500],"dtype":"f32le","order":"band-sequential"}"#,
        )
        .unwrap();
        fs::write(payload_path(&p), vec![0u8; 8]).unwrap();
        assert!(matches!(
            load_stack(&p),
            Err(DatasetError::NonMonotoneWavelengths { .. })
        ));
    }
}
