//! On-disk dataset layout: a `manifest.json` listing, per sample, the four
//! stack files plus the spot CSV, next to the camera response used for RGB.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::{load_stack, save_stack, CameraResponse, DatasetError, DensityMap, Sample, SpotSet};

pub const MANIFEST_FILE: &str = "manifest.json";
pub const MANIFEST_SCHEMA: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ManifestEntry {
    pub id: String,
    pub hsi: String,
    pub rgb: String,
    pub density: String,
    pub sparse: String,
    pub spots: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetManifest {
    pub schema_version: u32,
    pub camera: String,
    pub stacks: Vec<ManifestEntry>,
}

pub fn save_dataset(dir: impl AsRef<Path>, samples: &[Sample], camera: &CameraResponse) -> Result<DatasetManifest, DatasetError> {
    let dir = dir.as_ref();
    fs::create_dir_all(dir).map_err(|e| DatasetError::io(dir, e))?;
    let camera_file = "camera.csv".to_string();
    let cam_path = dir.join(&camera_file);
    fs::write(&cam_path, camera.to_csv_string()).map_err(|e| DatasetError::io(&cam_path, e))?;
    let mut stacks = Vec::with_capacity(samples.len());
    for s in samples {
        let entry = ManifestEntry {
            id: s.id.clone(),
            hsi: format!("{}_hsi.json", s.id),
            rgb: format!("{}_rgb.json", s.id),
            density: format!("{}_density.json", s.id),
            sparse: format!("{}_sparse.json", s.id),
            spots: format!("{}_spots.csv", s.id),
        };
        save_stack(&s.hsi, dir.join(&entry.hsi))?;
        save_stack(&s.rgb, dir.join(&entry.rgb))?;
        save_stack(&s.density.to_stack(), dir.join(&entry.density))?;
        save_stack(&s.sparse, dir.join(&entry.sparse))?;
        let spots_path = dir.join(&entry.spots);
        fs::write(&spots_path, s.spots.to_csv_string()).map_err(|e| DatasetError::io(&spots_path, e))?;
        stacks.push(entry);
    }
    let manifest = DatasetManifest {
        schema_version: MANIFEST_SCHEMA,
        camera: camera_file,
        stacks,
    };
    let path = dir.join(MANIFEST_FILE);
    let mut json = serde_json::to_string_pretty(&manifest)?;
    json.push('\n');
    fs::write(&path, json).map_err(|e| DatasetError::io(&path, e))?;
    Ok(manifest)
}

pub fn read_manifest(dir: impl AsRef<Path>) -> Result<DatasetManifest, DatasetError> {
    let path = dir.as_ref().join(MANIFEST_FILE);
    let text = fs::read_to_string(&path).map_err(|e| DatasetError::io(&path, e))?;
    let m: DatasetManifest = serde_json::from_str(&text)?;
    if m.schema_version != MANIFEST_SCHEMA {
        return Err(DatasetError::Invalid(format!(
            "unsupported manifest schema {}",
            m.schema_version
        )));
    }
    Ok(m)
}

pub fn load_sample(dir: &Path, entry: &ManifestEntry) -> Result<Sample, DatasetError> {
    let p = |f: &str| -> PathBuf { dir.join(f) };
    let hsi = load_stack(p(&entry.hsi))?;
    let rgb = load_stack(p(&entry.rgb))?;
    let density = DensityMap::from_stack(&load_stack(p(&entry.density))?)?;
    let sparse = load_stack(p(&entry.sparse))?;
    let spots = SpotSet::load_csv(p(&entry.spots), hsi.width(), hsi.height())?;
    if !hsi.same_dims(&rgb) || !hsi.same_dims(&sparse) || density.width() != hsi.width() || density.height() != hsi.height() {
        return Err(DatasetError::DimMismatch {
            expected: (hsi.width(), hsi.height()),
            actual: (rgb.width(), rgb.height()),
        });
    }
    Ok(Sample {
        id: entry.id.clone(),
        hsi,
        rgb,
        density,
        sparse,
        spots,
    })
}

pub fn load_dataset(dir: impl AsRef<Path>) -> Result<(Vec<Sample>, CameraResponse), DatasetError> {
    let dir = dir.as_ref();
    let manifest = read_manifest(dir)?;
    let camera = CameraResponse::load_csv(dir.join(&manifest.camera))?;
    let samples = manifest
        .stacks
        .iter()
        .map(|e| load_sample(dir, e))
        .collect::<Result<Vec<_>, _>>()?;
    Ok((samples, camera))
}
