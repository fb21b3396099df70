use std::fs;
use std::path::{Path, PathBuf};

use ndarray::{Array2, Array3};
use serde::{Deserialize, Serialize};

use super::{GroundTruth, HsiCube};
use crate::error::{Error, Result};

/// On-disk description of a scene.
///
/// `cube_file` holds little-endian `float32` values in band-major order
/// (`L * H * W`); `labels_file` holds little-endian `uint16` labels (`H * W`).
/// Both paths are resolved relative to the manifest's directory.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub name: String,
    pub bands: usize,
    pub height: usize,
    pub width: usize,
    pub classes: usize,
    pub cube_file: String,
    pub labels_file: String,
    pub dtype: String,
    pub layout: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sensor: Option<String>,
}

const DTYPE: &str = "float32";
const LAYOUT: &str = "band-major";

fn read_bytes(path: &Path) -> Result<Vec<u8>> {
    fs::read(path).map_err(|e| Error::io(path, e))
}

pub fn load_dataset(manifest_path: impl AsRef<Path>) -> Result<(HsiCube, GroundTruth)> {
    let manifest_path = manifest_path.as_ref();
    let text = fs::read_to_string(manifest_path).map_err(|e| Error::io(manifest_path, e))?;
    let manifest: Manifest = serde_json::from_str(&text).map_err(|e| Error::Manifest {
        path: manifest_path.to_path_buf(),
        reason: e.to_string(),
    })?;
    let bad = |reason: String| Error::Manifest {
        path: manifest_path.to_path_buf(),
        reason,
    };
    if manifest.dtype != DTYPE {
        return Err(bad(format!(
            "unsupported dtype {:?}, expected {DTYPE:?}",
            manifest.dtype
        )));
    }
    if manifest.layout != LAYOUT {
        return Err(bad(format!(
            "unsupported layout {:?}, expected {LAYOUT:?}",
            manifest.layout
        )));
    }
    if manifest.bands == 0 || manifest.height == 0 || manifest.width == 0 {
        return Err(bad("bands, height and width must be positive".into()));
    }

    let base = manifest_path.parent().unwrap_or(Path::new("."));
    let cube_path = base.join(&manifest.cube_file);
    let labels_path = base.join(&manifest.labels_file);

    let (l, h, w) = (manifest.bands, manifest.height, manifest.width);
    let cube_bytes = read_bytes(&cube_path)?;
    if cube_bytes.len() != l * h * w * 4 {
        return Err(Error::ShapeMismatch(format!(
            "{}: manifest declares {l}x{h}x{w} float32 values ({} bytes) but file has {} bytes",
            cube_path.display(),
            l * h * w * 4,
            cube_bytes.len()
        )));
    }
    let values: Vec<f32> = cube_bytes
        .chunks_exact(4)
        .map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]]))
        .collect();

    let label_bytes = read_bytes(&labels_path)?;
    if label_bytes.len() != h * w * 2 {
        return Err(Error::ShapeMismatch(format!(
            "{}: manifest declares {h}x{w} uint16 labels ({} bytes) but file has {} bytes",
            labels_path.display(),
            h * w * 2,
            label_bytes.len()
        )));
    }
    let labels: Vec<u16> = label_bytes
        .chunks_exact(2)
        .map(|b| u16::from_le_bytes([b[0], b[1]]))
        .collect();

    let cube = HsiCube::new(
        manifest.name.clone(),
        Array3::from_shape_vec((l, h, w), values).expect("length checked"),
        manifest.sensor.clone(),
    )?;
    let gt = GroundTruth::new(
        Array2::from_shape_vec((h, w), labels).expect("length checked"),
        manifest.classes,
    )?;
    Ok((cube, gt))
}

/// Writes `<stem>.json`, `<stem>.cube.f32` and `<stem>.labels.u16` into `dir`
/// and returns the manifest path. Output bytes depend only on the inputs.
pub fn write_dataset(dir: impl AsRef<Path>, stem: &str, cube: &HsiCube, gt: &GroundTruth) -> Result<PathBuf> {
    let dir = dir.as_ref();
    if cube.height() != gt.height() || cube.width() != gt.width() {
        return Err(Error::ShapeMismatch(format!(
            "cube is {}x{} but labels are {}x{}",
            cube.height(),
            cube.width(),
            gt.height(),
            gt.width()
        )));
    }
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let cube_file = format!("{stem}.cube.f32");
    let labels_file = format!("{stem}.labels.u16");

    let mut cube_bytes = Vec::with_capacity(cube.values().len() * 4);
    for v in cube.values().iter() {
        cube_bytes.extend_from_slice(&v.to_le_bytes());
    }
    let mut label_bytes = Vec::with_capacity(gt.labels().len() * 2);
    for v in gt.labels().iter() {
        label_bytes.extend_from_slice(&v.to_le_bytes());
    }
    let cube_path = dir.join(&cube_file);
    fs::write(&cube_path, cube_bytes).map_err(|e| Error::io(&cube_path, e))?;
    let labels_path = dir.join(&labels_file);
    fs::write(&labels_path, label_bytes).map_err(|e| Error::io(&labels_path, e))?;

    let manifest = Manifest {
        name: cube.name.clone(),
        bands: cube.bands(),
        height: cube.height(),
        width: cube.width(),
        classes: gt.num_classes(),
        cube_file,
        labels_file,
        dtype: DTYPE.into(),
        layout: LAYOUT.into(),
        sensor: cube.sensor.clone(),
    };
    let manifest_path = dir.join(format!("{stem}.json"));
    let text = serde_json::to_string_pretty(&manifest).map_err(|e| Error::json("manifest", e))?;
    fs::write(&manifest_path, text + "\n").map_err(|e| Error::io(&manifest_path, e))?;
    Ok(manifest_path)
}
