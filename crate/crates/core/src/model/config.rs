use serde::{Deserialize, Serialize};

use super::ops::PoolGeometry;
use crate::error::{Error, Result};

/// Channel widths of the three parallel paths of an inception sub-unit.
///
/// Path one is a single pointwise convolution; path two is pointwise then one
/// asymmetric convolution; path three is pointwise then two asymmetric
/// convolutions.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct PathSplit {
    pub p1: usize,
    pub p2_pw: usize,
    pub p2_conv: usize,
    pub p3_pw: usize,
    pub p3_a: usize,
    pub p3_b: usize,
}

impl PathSplit {
    pub fn total(&self) -> usize {
        self.p1 + self.p2_conv + self.p3_b
    }
}

/// Splits a unit width `w` 1:2:1 across the paths, with each pointwise
/// reduction half as wide as the convolutions after it.
pub fn path_widths(width: usize) -> Result<PathSplit> {
    if width == 0 || width % 8 != 0 {
        return Err(Error::InvalidConfig(format!(
            "unit width {width} is not a positive multiple of 8"
        )));
    }
    Ok(PathSplit {
        p1: width / 4,
        p2_pw: width / 4,
        p2_conv: width / 2,
        p3_pw: width / 8,
        p3_a: width / 4,
        p3_b: width / 4,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SubUnitKind {
    /// `1 x 3 x 3` kernels on paths two and three.
    Space,
    /// `3 x 1 x 1` kernels on paths two and three.
    Spectrum,
}

impl SubUnitKind {
    pub fn kernel(self) -> [usize; 3] {
        match self {
            SubUnitKind::Space => [1, 3, 3],
            SubUnitKind::Spectrum => [3, 1, 1],
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            SubUnitKind::Space => "space",
            SubUnitKind::Spectrum => "spectrum",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ShortcutKind {
    Identity,
    PointwiseProjection,
}

/// Which sub-units get a pointwise projection on their shortcut.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ShortcutRule {
    /// Project only where the channel count changes.
    OnWidthChange,
    /// Identity inside the first unit (fed by the equal-width stem), projection
    /// in every sub-unit of the later units.
    ProjectAfterFirstUnit,
}

/// One inception sub-unit as laid out by an [`AINetConfig`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct AIUnitSpec {
    /// 1-based position of the AI unit this sub-unit belongs to.
    pub unit: usize,
    pub in_channels: usize,
    pub width: usize,
    pub kind: SubUnitKind,
    pub shortcut: ShortcutKind,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct StemSpec {
    pub kernel: [usize; 3],
    pub out_channels: usize,
}

/// Declarative description of the network.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct AINetConfig {
    pub unit_widths: Vec<usize>,
    /// Sub-unit sequence contributed by each unit position.
    pub stacking: Vec<Vec<SubUnitKind>>,
    /// 1-based unit indices followed by a max pooling layer.
    pub pool_after: Vec<usize>,
    pub pool: PoolGeometry,
    /// Spectral bin counts of the pyramid pooling levels.
    pub pyramid_levels: Vec<usize>,
    pub patch_size: usize,
    pub num_classes: usize,
    /// Band count the network is validated against at build time. Other band
    /// counts are accepted at run time as long as the pooling schedule leaves
    /// enough spectral bins.
    pub bands: usize,
    pub stem: StemSpec,
    pub shortcut: ShortcutRule,
}

pub const NUM_UNITS: usize = 6;
pub const NUM_POOLS: usize = 4;

impl AINetConfig {
    /// The published network: widths 32-64-64-128-128-256, middle pairs as
    /// space/spectrum/spectrum, pooling after units 1, 3, 5 and 6, pyramid
    /// levels 1-2-3, 27x27 patches.
    pub fn standard(bands: usize, num_classes: usize) -> Self {
        use SubUnitKind::{Space, Spectrum};
        AINetConfig {
            unit_widths: vec![32, 64, 64, 128, 128, 256],
            stacking: vec![
                vec![Space, Spectrum],
                vec![Space, Spectrum],
                vec![Spectrum],
                vec![Space, Spectrum],
                vec![Spectrum],
                vec![Space, Spectrum],
            ],
            pool_after: vec![1, 3, 5, 6],
            pool: PoolGeometry::default(),
            pyramid_levels: vec![1, 2, 3],
            patch_size: 27,
            num_classes,
            bands,
            stem: StemSpec {
                kernel: [3, 3, 3],
                out_channels: 32,
            },
            shortcut: ShortcutRule::ProjectAfterFirstUnit,
        }
    }

    /// The same topology at width 8 everywhere. Spectral pooling stride is 1
    /// so that short spectra survive all four pooling layers.
    pub fn micro(bands: usize, num_classes: usize, patch_size: usize) -> Self {
        let mut cfg = Self::standard(bands, num_classes);
        cfg.unit_widths = vec![8; NUM_UNITS];
        cfg.stem.out_channels = 8;
        cfg.patch_size = patch_size;
        cfg.pool.stride = [1, 2, 2];
        cfg
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidConfig(msg));
        if self.unit_widths.len() != NUM_UNITS {
            return bad(format!(
                "expected {NUM_UNITS} unit widths, got {}",
                self.unit_widths.len()
            ));
        }
        for &w in &self.unit_widths {
            path_widths(w)?;
        }
        if self.stacking.len() != NUM_UNITS || self.stacking.iter().any(Vec::is_empty) {
            return bad(format!(
                "stacking must list a non-empty sub-unit sequence for each of the {NUM_UNITS} units"
            ));
        }
        let mut pools = self.pool_after.clone();
        pools.sort_unstable();
        pools.dedup();
        if pools.len() != NUM_POOLS
            || pools.len() != self.pool_after.len()
            || pools.iter().any(|&u| u == 0 || u > NUM_UNITS)
        {
            return bad(format!(
                "pool_after must hold {NUM_POOLS} distinct unit indices in 1..={NUM_UNITS}, got {:?}",
                self.pool_after
            ));
        }
        for i in 0..3 {
            if self.pool.kernel[i] == 0 || self.pool.stride[i] == 0 || self.pool.padding[i] >= self.pool.kernel[i] {
                return bad(format!("invalid pooling geometry {:?}", self.pool));
            }
        }
        if self.pyramid_levels.is_empty() || self.pyramid_levels.contains(&0) {
            return bad(format!("invalid pyramid levels {:?}", self.pyramid_levels));
        }
        if self.patch_size % 2 == 0 {
            return bad(format!("patch size must be odd, got {}", self.patch_size));
        }
        if self.num_classes < 2 {
            return bad(format!("need at least 2 classes, got {}", self.num_classes));
        }
        if self.stem.out_channels == 0 || self.stem.kernel.iter().any(|k| k % 2 == 0) {
            return bad(format!("invalid stem {:?}", self.stem));
        }
        self.feature_map_shape(self.bands)?;
        Ok(())
    }

    /// The ordered sub-units with their input widths and shortcut forms.
    pub fn sub_units(&self) -> Vec<AIUnitSpec> {
        let mut specs = Vec::new();
        let mut in_channels = self.stem.out_channels;
        for (idx, (kinds, &width)) in self.stacking.iter().zip(&self.unit_widths).enumerate() {
            let unit = idx + 1;
            for &kind in kinds {
                let project = in_channels != width
                    || match self.shortcut {
                        ShortcutRule::OnWidthChange => false,
                        ShortcutRule::ProjectAfterFirstUnit => unit > 1,
                    };
                specs.push(AIUnitSpec {
                    unit,
                    in_channels,
                    width,
                    kind,
                    shortcut: if project {
                        ShortcutKind::PointwiseProjection
                    } else {
                        ShortcutKind::Identity
                    },
                });
                in_channels = width;
            }
        }
        specs
    }

    pub fn feature_channels(&self) -> usize {
        *self.unit_widths.last().expect("validated")
    }

    /// Length of the pooled feature vector fed to the classifier.
    pub fn feature_len(&self) -> usize {
        self.feature_channels() * self.pyramid_levels.iter().sum::<usize>()
    }

    /// `[channels, D, H, W]` entering the pyramid pooling for `bands` input
    /// bands, or an error if the pooling schedule cannot be applied.
    pub fn feature_map_shape(&self, bands: usize) -> Result<[usize; 4]> {
        let mut dims = [bands, self.patch_size, self.patch_size];
        for unit in 1..=NUM_UNITS {
            if self.pool_after.contains(&unit) {
                dims = self.pool.out_dims(dims).ok_or_else(|| {
                    Error::InvalidConfig(format!("pooling after unit {unit} does not fit a {dims:?} feature map"))
                })?;
            }
        }
        let max_level = self.pyramid_levels.iter().copied().max().unwrap_or(1);
        if dims[0] < max_level {
            return Err(Error::InvalidConfig(format!(
                "{bands} bands leave {} spectral positions after pooling, fewer than the {max_level} pyramid bins",
                dims[0]
            )));
        }
        Ok([self.feature_channels(), dims[0], dims[1], dims[2]])
    }

    /// Smallest band count the pooling schedule accepts.
    pub fn min_bands(&self) -> usize {
        (1..=4096)
            .find(|&l| self.feature_map_shape(l).is_ok())
            .unwrap_or(usize::MAX)
    }
}

/// Convolution layer census of a configuration.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct LayerCensus {
    pub sub_units: usize,
    /// Convolutions on all paths and shortcuts, plus the stem.
    pub conv_layers: usize,
    /// Weighted layers on the longest input-to-output path (stem, three per
    /// sub-unit, classifier).
    pub depth: usize,
}

impl AINetConfig {
    pub fn census(&self) -> LayerCensus {
        let subs = self.sub_units();
        let shortcuts = subs
            .iter()
            .filter(|s| s.shortcut == ShortcutKind::PointwiseProjection)
            .count();
        LayerCensus {
            sub_units: subs.len(),
            conv_layers: 1 + 6 * subs.len() + shortcuts,
            depth: 1 + 3 * subs.len() + 1,
        }
    }
}
