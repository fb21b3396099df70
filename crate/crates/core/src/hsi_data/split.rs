use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{GroundTruth, Pixel};
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SplitMode {
    /// A fixed number of training pixels from every class.
    PerClassCount,
    /// A total training budget spread over classes in proportion to their size.
    TotalCountProportional,
}

/// How to draw training pixels from a labeled scene. Every remaining labeled
/// pixel becomes a test pixel.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitSpec {
    pub mode: SplitMode,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub per_class: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub total: Option<usize>,
    pub seed: u64,
}

impl SplitSpec {
    pub fn per_class(count: usize, seed: u64) -> Self {
        SplitSpec {
            mode: SplitMode::PerClassCount,
            per_class: Some(count),
            total: None,
            seed,
        }
    }

    pub fn total(count: usize, seed: u64) -> Self {
        SplitSpec {
            mode: SplitMode::TotalCountProportional,
            per_class: None,
            total: Some(count),
            seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        match (self.mode, self.per_class, self.total) {
            (SplitMode::PerClassCount, Some(_), None) | (SplitMode::TotalCountProportional, None, Some(_)) => Ok(()),
            _ => Err(Error::InvalidConfig(format!(
                "split mode {:?} needs exactly its own count field (per_class={:?}, total={:?})",
                self.mode, self.per_class, self.total
            ))),
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct DatasetSplit {
    pub train: Vec<Pixel>,
    pub test: Vec<Pixel>,
}

impl DatasetSplit {
    pub fn train_counts(&self, num_classes: usize) -> Vec<usize> {
        let mut counts = vec![0; num_classes];
        for p in &self.train {
            counts[p.label - 1] += 1;
        }
        counts
    }
}

/// Splits class sizes `counts` into per-class quotas summing to `total`:
/// proportional shares, floored, at least one per class, with the leftover
/// handed out by largest remainder (ties to the lower class index).
pub fn proportional_allocation(counts: &[usize], total: usize) -> Result<Vec<usize>> {
    let n: usize = counts.iter().sum();
    if total > n {
        return Err(Error::InvalidArgument(format!(
            "requested {total} samples but only {n} are labeled"
        )));
    }
    if total < counts.len() {
        return Err(Error::InvalidArgument(format!(
            "total {total} cannot give each of {} classes one sample",
            counts.len()
        )));
    }
    // exact integer quotas: total * count = floor * n + remainder
    let mut alloc: Vec<usize> = counts.iter().map(|&c| (total * c / n).max(1).min(c)).collect();
    let remainder: Vec<usize> = counts.iter().map(|&c| total * c % n).collect();
    let mut assigned: usize = alloc.iter().sum();

    if assigned < total {
        let mut order: Vec<usize> = (0..counts.len()).collect();
        order.sort_by(|&a, &b| remainder[b].cmp(&remainder[a]).then(a.cmp(&b)));
        while assigned < total {
            for &c in &order {
                if assigned < total && alloc[c] < counts[c] {
                    alloc[c] += 1;
                    assigned += 1;
                }
            }
        }
    } else if assigned > total {
        let mut order: Vec<usize> = (0..counts.len()).collect();
        order.sort_by(|&a, &b| remainder[a].cmp(&remainder[b]).then(a.cmp(&b)));
        while assigned > total {
            for &c in &order {
                if assigned > total && alloc[c] > 1 {
                    alloc[c] -= 1;
                    assigned -= 1;
                }
            }
        }
    }
    Ok(alloc)
}

fn shuffled_classes(gt: &GroundTruth, seed: u64) -> Vec<Vec<Pixel>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut classes = gt.pixels_by_class();
    for pixels in &mut classes {
        pixels.shuffle(&mut rng);
    }
    classes
}

/// Stratified split with an explicit training count per class (index 0 is
/// class 1).
pub fn split_with_counts(gt: &GroundTruth, train_counts: &[usize], seed: u64) -> Result<DatasetSplit> {
    if train_counts.len() != gt.num_classes() {
        return Err(Error::InvalidArgument(format!(
            "{} training counts for {} classes",
            train_counts.len(),
            gt.num_classes()
        )));
    }
    let classes = shuffled_classes(gt, seed);
    let mut split = DatasetSplit::default();
    for (idx, (pixels, &want)) in classes.into_iter().zip(train_counts).enumerate() {
        if want > pixels.len() {
            return Err(Error::InsufficientSamples {
                class: idx + 1,
                available: pixels.len(),
                requested: want,
            });
        }
        split.train.extend_from_slice(&pixels[..want]);
        split.test.extend_from_slice(&pixels[want..]);
    }
    split.test.sort();
    Ok(split)
}

/// Stratified random split of the labeled pixels. Deterministic in `spec.seed`.
pub fn make_split(gt: &GroundTruth, spec: &SplitSpec) -> Result<DatasetSplit> {
    spec.validate()?;
    let counts = match spec.mode {
        SplitMode::PerClassCount => vec![spec.per_class.unwrap_or_default(); gt.num_classes()],
        SplitMode::TotalCountProportional => {
            let sizes: Vec<usize> = gt.pixels_by_class().iter().map(Vec::len).collect();
            proportional_allocation(&sizes, spec.total.unwrap_or_default())?
        }
    };
    split_with_counts(gt, &counts, spec.seed)
}

/// Holds out `test_per_class` random pixels of every class for testing and
/// trains on the rest (the source-dataset protocol for pretraining).
pub fn holdout_per_class(gt: &GroundTruth, test_per_class: usize, seed: u64) -> Result<DatasetSplit> {
    if test_per_class == 0 {
        return Err(Error::InvalidArgument("test_per_class must be at least 1".into()));
    }
    let classes = shuffled_classes(gt, seed);
    let mut split = DatasetSplit::default();
    for (idx, pixels) in classes.into_iter().enumerate() {
        if test_per_class > pixels.len() {
            return Err(Error::InsufficientSamples {
                class: idx + 1,
                available: pixels.len(),
                requested: test_per_class,
            });
        }
        split.test.extend_from_slice(&pixels[..test_per_class]);
        split.train.extend_from_slice(&pixels[test_per_class..]);
    }
    split.test.sort();
    Ok(split)
}
