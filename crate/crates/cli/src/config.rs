//! Run configuration: one JSON document plus `--set key=value` overrides.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use ainet::hsi_data::SplitSpec;
use ainet::model::AINetConfig;
use ainet::train_engine::TrainConfig;
use ainet::transfer::{SourcePair, SourceSplitRule, SuiteConfig, TransferPlan, VariantTag};
use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::error::{CliError, CliResult};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Preset {
    /// Published widths, 27x27 patches.
    #[default]
    Default,
    /// Width 8 everywhere with spectral pooling stride 1.
    Micro,
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelSettings {
    pub preset: Preset,
    pub patch_size: Option<usize>,
    pub unit_widths: Option<Vec<usize>>,
}

impl ModelSettings {
    pub fn template(&self, bands: usize, num_classes: usize) -> AINetConfig {
        let mut cfg = match self.preset {
            Preset::Default => AINetConfig::standard(bands, num_classes),
            Preset::Micro => AINetConfig::micro(bands, num_classes, 9),
        };
        if let Some(s) = self.patch_size {
            cfg.patch_size = s;
        }
        if let Some(w) = &self.unit_widths {
            cfg.unit_widths = w.clone();
            if let Some(&first) = w.first() {
                cfg.stem.out_channels = first;
            }
        }
        cfg
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TransferSettings {
    pub variant: VariantTag,
    pub sources: SourcePair,
    /// Stage-one epochs; stage two runs `ceil(n / 2)`.
    pub n: usize,
    pub feature_lr_ratio: f64,
    /// Test pixels held out per class on each source scene.
    pub source_test_per_class: BTreeMap<String, usize>,
    /// Checkpoint directory that `finetune` starts from.
    pub pretrained: Option<PathBuf>,
}

impl Default for TransferSettings {
    fn default() -> Self {
        TransferSettings {
            variant: VariantTag::T3,
            sources: SourcePair::default(),
            n: 10,
            feature_lr_ratio: 0.1,
            source_test_per_class: SourceSplitRule::published()
                .into_iter()
                .map(|r| (r.dataset, r.test_per_class))
                .collect(),
            pretrained: None,
        }
    }
}

impl TransferSettings {
    pub fn plan(&self, target: &str) -> ainet::Result<TransferPlan> {
        let mut plan = TransferPlan::for_variant(self.variant, &self.sources, target)?.with_epochs(self.n);
        plan.feature_lr_ratio = self.feature_lr_ratio;
        plan.validate()?;
        Ok(plan)
    }

    pub fn rule_for(&self, dataset: &str) -> SourceSplitRule {
        SourceSplitRule {
            dataset: dataset.to_string(),
            test_per_class: self.source_test_per_class.get(dataset).copied().unwrap_or(100),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SuiteSettings {
    pub samples_per_class: usize,
    pub seeds: Vec<u64>,
    pub variants: Vec<VariantTag>,
    pub pretrain_seed: u64,
}

impl Default for SuiteSettings {
    fn default() -> Self {
        let d = SuiteConfig::default();
        SuiteSettings {
            samples_per_class: d.samples_per_class,
            seeds: d.seeds,
            variants: d.variants,
            pretrain_seed: d.pretrain_seed,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    /// Dataset id to manifest path. Relative paths resolve against the
    /// working directory.
    pub datasets: BTreeMap<String, PathBuf>,
    /// Dataset id that `train`, `finetune`, `evaluate` and `suite` work on.
    pub target: Option<String>,
    pub split: SplitSpec,
    pub model: ModelSettings,
    pub train: TrainConfig,
    pub transfer: TransferSettings,
    pub suite: SuiteSettings,
    pub output_dir: Option<PathBuf>,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            datasets: BTreeMap::new(),
            target: None,
            split: SplitSpec::per_class(200, 0),
            model: ModelSettings::default(),
            train: TrainConfig::default(),
            transfer: TransferSettings::default(),
            suite: SuiteSettings::default(),
            output_dir: None,
        }
    }
}

impl RunConfig {
    /// Reads `path` (or starts from defaults) and applies `overrides` in order.
    pub fn load(path: Option<&Path>, overrides: &[String]) -> CliResult<Self> {
        let mut cfg = match path {
            Some(p) => {
                let text = fs::read_to_string(p)
                    .map_err(|e| CliError::Usage(format!("cannot read config {}: {e}", p.display())))?;
                serde_json::from_str(&text)
                    .map_err(|e| CliError::Usage(format!("invalid config {}: {e}", p.display())))?
            }
            None => RunConfig::default(),
        };
        for o in overrides {
            cfg = apply_override(&cfg, o)?;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> CliResult<()> {
        self.split.validate()?;
        self.train.validate()?;
        if !(0.0..=1.0).contains(&self.transfer.feature_lr_ratio) {
            return Err(CliError::Usage(format!(
                "transfer.feature_lr_ratio {} outside [0, 1]",
                self.transfer.feature_lr_ratio
            )));
        }
        Ok(())
    }

    pub fn target(&self) -> CliResult<&str> {
        self.target
            .as_deref()
            .ok_or_else(|| CliError::Usage("no target dataset; set `target`".into()))
    }

    pub fn manifest(&self, id: &str) -> ainet::Result<&Path> {
        self.datasets
            .get(id)
            .map(PathBuf::as_path)
            .ok_or_else(|| ainet::Error::MissingDataset(id.to_string()))
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes") + "\n"
    }
}

fn parse_value(raw: &str) -> Value {
    serde_json::from_str(raw).unwrap_or_else(|_| Value::String(raw.to_string()))
}

/// Applies one `a.b.c=value` override. The value is parsed as JSON and falls
/// back to a plain string. Keys that do not survive a round trip through
/// [`RunConfig`] are rejected, so typos never pass silently.
pub fn apply_override(cfg: &RunConfig, spec: &str) -> CliResult<RunConfig> {
    let (key, raw) = spec
        .split_once('=')
        .ok_or_else(|| CliError::Usage(format!("override {spec:?} is not of the form key=value")))?;
    let path: Vec<&str> = key.split('.').collect();
    if path.iter().any(|p| p.is_empty()) {
        return Err(CliError::Usage(format!("malformed override key {key:?}")));
    }
    let value = parse_value(raw);

    let mut doc = serde_json::to_value(cfg).expect("config serializes");
    let mut node = &mut doc;
    for part in &path[..path.len() - 1] {
        node = node
            .get_mut(*part)
            .filter(|n| n.is_object())
            .ok_or_else(|| CliError::Usage(format!("unknown config key {key:?}")))?;
    }
    let obj = node
        .as_object_mut()
        .ok_or_else(|| CliError::Usage(format!("unknown config key {key:?}")))?;
    obj.insert(path[path.len() - 1].to_string(), value.clone());

    let updated: RunConfig =
        serde_json::from_value(doc).map_err(|e| CliError::Usage(format!("override {key}={raw}: {e}")))?;
    let back = serde_json::to_value(&updated).expect("config serializes");
    let pointer = format!("/{}", path.join("/"));
    if back.pointer(&pointer) != Some(&value) {
        return Err(CliError::Usage(format!("unknown config key {key:?}")));
    }
    Ok(updated)
}
