//! Deterministic synthetic scenes for tests, demos and the self-check.
//!
//! Each class gets a smooth random spectral signature. The label map is a
//! Voronoi partition of the image with every class owning at least one
//! region, and a fraction of pixels left unlabeled.

use ndarray::{Array2, Array3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::hsi_data::{GroundTruth, HsiCube, Pixel, Scene};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SyntheticConfig {
    pub name: String,
    pub bands: usize,
    pub height: usize,
    pub width: usize,
    pub classes: usize,
    /// Voronoi regions per class.
    pub regions_per_class: usize,
    /// Standard deviation of the per-value Gaussian noise, relative to a
    /// signature range of about 1.
    pub noise: f64,
    pub unlabeled_fraction: f64,
    pub seed: u64,
}

impl Default for SyntheticConfig {
    fn default() -> Self {
        SyntheticConfig {
            name: "synthetic".into(),
            bands: 16,
            height: 24,
            width: 24,
            classes: 3,
            regions_per_class: 2,
            noise: 0.05,
            unlabeled_fraction: 0.1,
            seed: 0,
        }
    }
}

pub struct SyntheticScene {
    /// Values before normalization.
    pub raw: HsiCube,
    pub scene: Scene,
}

fn signature(bands: usize, rng: &mut ChaCha8Rng) -> Vec<f64> {
    let bumps: Vec<(f64, f64, f64)> = (0..3)
        .map(|_| {
            (
                rng.random::<f64>(),
                rng.random_range(0.05..0.3),
                rng.random_range(0.2..1.0),
            )
        })
        .collect();
    (0..bands)
        .map(|b| {
            let x = b as f64 / bands.max(2).saturating_sub(1) as f64;
            bumps
                .iter()
                .map(|(c, w, a)| a * (-((x - c) / w).powi(2)).exp())
                .sum::<f64>()
        })
        .collect()
}

impl SyntheticScene {
    pub fn generate(config: &SyntheticConfig) -> Result<Self> {
        let c = config.classes;
        if c == 0 || c > u16::MAX as usize {
            return Err(Error::InvalidConfig(format!("invalid class count {c}")));
        }
        if config.regions_per_class == 0 || !(0.0..1.0).contains(&config.unlabeled_fraction) {
            return Err(Error::InvalidConfig(
                "need at least one region per class and unlabeled_fraction in [0, 1)".into(),
            ));
        }
        let (h, w, l) = (config.height, config.width, config.bands);
        if h * w < c * config.regions_per_class {
            return Err(Error::InvalidConfig(format!(
                "{h}x{w} image is too small for {c} classes"
            )));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let signatures: Vec<Vec<f64>> = (0..c).map(|_| signature(l, &mut rng)).collect();

        // distinct centre pixels so every region owns at least its centre
        let mut cells: Vec<usize> = (0..h * w).collect();
        rand::seq::SliceRandom::shuffle(cells.as_mut_slice(), &mut rng);
        let centres: Vec<(usize, usize, u16)> = cells[..c * config.regions_per_class]
            .iter()
            .enumerate()
            .map(|(i, &cell)| (cell / w, cell % w, (i % c) as u16 + 1))
            .collect();

        let mut labels = Array2::<u16>::zeros((h, w));
        for ((r, col), label) in labels.indexed_iter_mut() {
            let nearest = centres
                .iter()
                .min_by_key(|(cr, cc, _)| (cr.abs_diff(r).pow(2) + cc.abs_diff(col).pow(2), *cr, *cc))
                .expect("at least one centre");
            let is_centre = nearest.0 == r && nearest.1 == col;
            *label = if !is_centre && rng.random::<f64>() < config.unlabeled_fraction {
                0
            } else {
                nearest.2
            };
        }

        let noise = Normal::new(0.0, config.noise).map_err(|e| Error::InvalidConfig(e.to_string()))?;
        let background = signature(l, &mut rng);
        let mut values = Array3::<f32>::zeros((l, h, w));
        for r in 0..h {
            for col in 0..w {
                let sig = match labels[[r, col]] {
                    0 => &background,
                    k => &signatures[k as usize - 1],
                };
                for (b, s) in sig.iter().enumerate() {
                    values[[b, r, col]] = (s + noise.sample(&mut rng)) as f32;
                }
            }
        }
        let raw = HsiCube::new(config.name.clone(), values, Some("synthetic".into()))?;
        let gt = GroundTruth::new(labels, c)?;
        let scene = Scene::new(raw.clone(), gt)?;
        Ok(SyntheticScene { raw, scene })
    }

    /// Every labeled pixel in row-major order.
    pub fn pixels(&self) -> Vec<Pixel> {
        let mut pixels: Vec<Pixel> = self.scene.gt.pixels_by_class().into_iter().flatten().collect();
        pixels.sort();
        pixels
    }
}
