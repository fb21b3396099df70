//! Hyperspectral scenes: loading, normalization, patch extraction, splits and batching.
//!
//! A scene is an `L x H x W` cube of band values plus an `H x W` label map in
//! which `0` marks unlabeled pixels and `1..=C` are class ids. Everything
//! downstream samples `L x S x S` neighbourhood patches from the normalized
//! cube on demand instead of materializing a patch tensor.

mod batch;
mod manifest;
mod patch;
mod split;

pub use batch::{batch_iterator, BatchPlan};
pub use manifest::{load_dataset, write_dataset, Manifest};
pub use patch::{extract_patch, reflect_index};
pub use split::{
    holdout_per_class, make_split, proportional_allocation, split_with_counts, DatasetSplit, SplitMode, SplitSpec,
};

use ndarray::{Array2, Array3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::{Real, Tensor};

/// A full scene as a band-major value grid.
#[derive(Clone, Debug, PartialEq)]
pub struct HsiCube {
    pub name: String,
    pub sensor: Option<String>,
    values: Array3<f32>,
}

impl HsiCube {
    pub fn new(name: impl Into<String>, values: Array3<f32>, sensor: Option<String>) -> Result<Self> {
        let (l, h, w) = values.dim();
        if l == 0 || h == 0 || w == 0 {
            return Err(Error::ShapeMismatch(format!(
                "cube dimensions must be positive, got {l}x{h}x{w}"
            )));
        }
        if let Some(pos) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "cube contains a non-finite value at flat index {pos}"
            )));
        }
        Ok(HsiCube {
            name: name.into(),
            sensor,
            values: values.as_standard_layout().into_owned(),
        })
    }

    pub fn bands(&self) -> usize {
        self.values.dim().0
    }

    pub fn height(&self) -> usize {
        self.values.dim().1
    }

    pub fn width(&self) -> usize {
        self.values.dim().2
    }

    pub fn values(&self) -> &Array3<f32> {
        &self.values
    }

    pub fn spectrum(&self, row: usize, col: usize) -> Vec<f32> {
        self.values.slice(ndarray::s![.., row, col]).to_vec()
    }
}

/// Per-pixel class labels; `0` is unlabeled.
#[derive(Clone, Debug, PartialEq)]
pub struct GroundTruth {
    labels: Array2<u16>,
    num_classes: usize,
}

impl GroundTruth {
    /// Validates that labels stay within `0..=num_classes` and that every
    /// class owns at least one pixel.
    pub fn new(labels: Array2<u16>, num_classes: usize) -> Result<Self> {
        if num_classes == 0 {
            return Err(Error::InvalidArgument("num_classes must be positive".into()));
        }
        let mut seen = vec![false; num_classes + 1];
        for &label in labels.iter() {
            let label = label as usize;
            if label > num_classes {
                return Err(Error::LabelOutOfRange { label, num_classes });
            }
            seen[label] = true;
        }
        if let Some(class) = (1..=num_classes).find(|&c| !seen[c]) {
            return Err(Error::MissingClass { class });
        }
        Ok(GroundTruth {
            labels: labels.as_standard_layout().into_owned(),
            num_classes,
        })
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    pub fn height(&self) -> usize {
        self.labels.dim().0
    }

    pub fn width(&self) -> usize {
        self.labels.dim().1
    }

    pub fn labels(&self) -> &Array2<u16> {
        &self.labels
    }

    pub fn label(&self, row: usize, col: usize) -> usize {
        self.labels[[row, col]] as usize
    }

    /// Labeled pixels of each class in row-major order; index 0 is class 1.
    pub fn pixels_by_class(&self) -> Vec<Vec<Pixel>> {
        let mut out = vec![Vec::new(); self.num_classes];
        for ((row, col), &label) in self.labels.indexed_iter() {
            if label > 0 {
                out[label as usize - 1].push(Pixel {
                    row,
                    col,
                    label: label as usize,
                });
            }
        }
        out
    }

    pub fn labeled_count(&self) -> usize {
        self.labels.iter().filter(|&&l| l > 0).count()
    }
}

/// A labeled pixel coordinate.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct Pixel {
    pub row: usize,
    pub col: usize,
    pub label: usize,
}

/// An `L x S x S` patch centred on a labeled pixel.
#[derive(Clone, Debug, PartialEq)]
pub struct PatchSample {
    pub cube: Array3<f32>,
    pub label: usize,
    pub center: (usize, usize),
    pub dataset: String,
}

/// Emitted by [`normalize`] for bands whose values are all equal.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConstantBand {
    pub band: usize,
    pub value: f32,
}

/// Per-band min-max rescaling into `[0, 1]`.
///
/// Constant bands cannot be rescaled; they are mapped to zeros and reported.
pub fn normalize(cube: &HsiCube) -> (HsiCube, Vec<ConstantBand>) {
    let mut values = cube.values.clone();
    let mut warnings = Vec::new();
    for (band, mut plane) in values.outer_iter_mut().enumerate() {
        let (min, max) = plane.iter().fold((f32::INFINITY, f32::NEG_INFINITY), |(lo, hi), &v| {
            (lo.min(v), hi.max(v))
        });
        if max > min {
            let range = max - min;
            plane.mapv_inplace(|v| (v - min) / range);
        } else {
            log::warn!("{}: band {band} is constant ({min}); mapped to zeros", cube.name);
            warnings.push(ConstantBand { band, value: min });
            plane.fill(0.0);
        }
    }
    let normalized = HsiCube {
        name: cube.name.clone(),
        sensor: cube.sensor.clone(),
        values,
    };
    (normalized, warnings)
}

/// A normalized cube paired with its ground truth; the unit every sampler,
/// trainer and evaluator works on.
#[derive(Clone, Debug)]
pub struct Scene {
    pub cube: HsiCube,
    pub gt: GroundTruth,
}

impl Scene {
    /// Normalizes `cube` and checks that it lines up with `gt`.
    pub fn new(cube: HsiCube, gt: GroundTruth) -> Result<Self> {
        if cube.height() != gt.height() || cube.width() != gt.width() {
            return Err(Error::ShapeMismatch(format!(
                "cube is {}x{} but labels are {}x{}",
                cube.height(),
                cube.width(),
                gt.height(),
                gt.width()
            )));
        }
        let (cube, _) = normalize(&cube);
        Ok(Scene { cube, gt })
    }

    pub fn load(manifest_path: impl AsRef<std::path::Path>) -> Result<Self> {
        let (cube, gt) = load_dataset(manifest_path)?;
        Scene::new(cube, gt)
    }

    pub fn name(&self) -> &str {
        &self.cube.name
    }

    pub fn num_classes(&self) -> usize {
        self.gt.num_classes()
    }

    pub fn bands(&self) -> usize {
        self.cube.bands()
    }

    pub fn patch(&self, pixel: Pixel, patch_size: usize) -> Result<PatchSample> {
        Ok(PatchSample {
            cube: extract_patch(&self.cube, pixel.row, pixel.col, patch_size)?,
            label: pixel.label,
            center: (pixel.row, pixel.col),
            dataset: self.cube.name.clone(),
        })
    }

    /// Packs patches around `pixels` into a `B x 1 x L x S x S` network input.
    pub fn batch_tensor<T: Real>(&self, pixels: &[Pixel], patch_size: usize) -> Result<Tensor<T>> {
        patch::check_patch_args(&self.cube, patch_size)?;
        let l = self.cube.bands();
        let per_sample = l * patch_size * patch_size;
        let mut data = vec![T::zero(); pixels.len() * per_sample];
        for (pixel, chunk) in pixels.iter().zip(data.chunks_exact_mut(per_sample)) {
            patch::fill_patch(&self.cube, pixel.row, pixel.col, patch_size, chunk)?;
        }
        Tensor::from_vec(&[pixels.len(), 1, l, patch_size, patch_size], data)
    }
}
