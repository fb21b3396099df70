//! Two-source pre-training, classifier surgery and fine-tuning.
//!
//! A fresh network is trained for `N` epochs on a first source scene. Its
//! classifier is then replaced for a second source scene and both parts are
//! trained for `ceil(N / 2)` epochs, the feature extractor at a reduced
//! learning rate. For a target scene the feature extractor is kept, a new
//! classifier is drawn, and everything is fine-tuned.
//!
//! Variants: `T1` pre-trains on the first source only, `T2` on the second
//! only, `T3` on first then second and `T4` on second then first.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::hsi_data::{holdout_per_class, make_split, Pixel, Scene, SplitSpec};
use crate::metrics::{mean_std, MeanStd};
use crate::model::{build_ainet, reinit_classifier, AINetConfig, ModelState};
use crate::tensor::Real;
use crate::train_engine::{evaluate, train, TrainConfig, TrainData, TrainReport};

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum VariantTag {
    /// Trained on the target only.
    #[serde(rename = "none")]
    Baseline,
    T1,
    T2,
    T3,
    T4,
}

impl VariantTag {
    pub const ALL: [VariantTag; 5] = [
        VariantTag::Baseline,
        VariantTag::T1,
        VariantTag::T2,
        VariantTag::T3,
        VariantTag::T4,
    ];

    /// Display name used in tables and charts.
    pub fn label(self) -> &'static str {
        match self {
            VariantTag::Baseline => "AINet",
            VariantTag::T1 => "AINet+T1",
            VariantTag::T2 => "AINet+T2",
            VariantTag::T3 => "AINet+T3",
            VariantTag::T4 => "AINet+T4",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "none" | "baseline" | "ainet" => Ok(VariantTag::Baseline),
            "t1" | "ainet+t1" => Ok(VariantTag::T1),
            "t2" | "ainet+t2" => Ok(VariantTag::T2),
            "t3" | "ainet+t3" => Ok(VariantTag::T3),
            "t4" | "ainet+t4" => Ok(VariantTag::T4),
            _ => Err(Error::InvalidArgument(format!("unknown variant {s:?}"))),
        }
    }
}

/// Dataset ids of the two pre-training sources.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SourcePair {
    pub first: String,
    pub second: String,
}

impl Default for SourcePair {
    fn default() -> Self {
        SourcePair {
            first: "pavia-center".into(),
            second: "salinas".into(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TransferPlan {
    pub source_a: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub source_b: Option<String>,
    /// Stage-one epochs.
    pub n: usize,
    pub stage2_epochs: usize,
    /// Feature-extractor learning-rate multiplier in stage two. `0` freezes it.
    pub feature_lr_ratio: f64,
    pub target: String,
    pub order_tag: VariantTag,
}

impl TransferPlan {
    /// The plan for `tag` with `N = 10` and a stage-two ratio of `0.1`.
    /// Fails for [`VariantTag::Baseline`], which has no pre-training.
    pub fn for_variant(tag: VariantTag, sources: &SourcePair, target: impl Into<String>) -> Result<Self> {
        let (a, b) = match tag {
            VariantTag::Baseline => {
                return Err(Error::InvalidArgument(
                    "the baseline variant has no transfer plan".into(),
                ));
            }
            VariantTag::T1 => (&sources.first, None),
            VariantTag::T2 => (&sources.second, None),
            VariantTag::T3 => (&sources.first, Some(&sources.second)),
            VariantTag::T4 => (&sources.second, Some(&sources.first)),
        };
        Ok(TransferPlan {
            source_a: a.clone(),
            source_b: b.cloned(),
            n: 10,
            stage2_epochs: 5,
            feature_lr_ratio: 0.1,
            target: target.into(),
            order_tag: tag,
        })
    }

    /// Sets `N` and the matching `ceil(N / 2)` stage-two length.
    pub fn with_epochs(mut self, n: usize) -> Self {
        self.n = n;
        self.stage2_epochs = n.div_ceil(2);
        self
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidConfig(m));
        if self.stage2_epochs != self.n.div_ceil(2) {
            return bad(format!(
                "stage2_epochs {} must equal ceil({} / 2)",
                self.stage2_epochs, self.n
            ));
        }
        if !(0.0..=1.0).contains(&self.feature_lr_ratio) {
            return bad(format!("feature_lr_ratio {} outside [0, 1]", self.feature_lr_ratio));
        }
        let two = self.source_b.is_some();
        match self.order_tag {
            VariantTag::T1 | VariantTag::T2 if two => bad(format!("{:?} uses a single source", self.order_tag)),
            VariantTag::T3 | VariantTag::T4 if !two => bad(format!("{:?} needs two sources", self.order_tag)),
            VariantTag::Baseline => bad("the baseline variant has no transfer plan".into()),
            _ => Ok(()),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SourceSplitRule {
    pub dataset: String,
    pub test_per_class: usize,
}

impl SourceSplitRule {
    /// 200 test pixels per class for Pavia Center, 100 for Salinas.
    pub fn published() -> Vec<SourceSplitRule> {
        vec![
            SourceSplitRule {
                dataset: "pavia-center".into(),
                test_per_class: 200,
            },
            SourceSplitRule {
                dataset: "salinas".into(),
                test_per_class: 100,
            },
        ]
    }

    pub fn validate(&self) -> Result<()> {
        if self.test_per_class == 0 {
            return Err(Error::InvalidConfig(format!(
                "{}: test_per_class must be at least 1",
                self.dataset
            )));
        }
        Ok(())
    }
}

/// A source scene with its pre-training pixels.
pub struct SourceSet<'a> {
    pub scene: &'a Scene,
    pub train: Vec<Pixel>,
    pub test: Vec<Pixel>,
}

impl<'a> SourceSet<'a> {
    /// Holds out `rule.test_per_class` pixels per class; the rest train.
    pub fn from_rule(scene: &'a Scene, rule: &SourceSplitRule, seed: u64) -> Result<Self> {
        rule.validate()?;
        let split = holdout_per_class(&scene.gt, rule.test_per_class, seed)?;
        Ok(SourceSet {
            scene,
            train: split.train,
            test: split.test,
        })
    }
}

pub type SourceMap<'a> = BTreeMap<String, SourceSet<'a>>;

fn source<'m, 'a>(sources: &'m SourceMap<'a>, id: &str) -> Result<&'m SourceSet<'a>> {
    sources.get(id).ok_or_else(|| Error::MissingDataset(id.to_string()))
}

/// `template` resized for a scene's band and class counts.
pub fn architecture_for(template: &AINetConfig, scene: &Scene) -> AINetConfig {
    let mut cfg = template.clone();
    cfg.bands = scene.bands();
    cfg.num_classes = scene.num_classes();
    cfg
}

/// A constant-rate copy of `base` running `epochs` epochs.
fn stage_config(base: &TrainConfig, epochs: usize) -> TrainConfig {
    TrainConfig {
        epochs,
        final_phase_epochs: 0,
        ..base.clone()
    }
}

pub struct Pretrained<T> {
    pub model: ModelState<T>,
    /// One report per stage that ran.
    pub stages: Vec<TrainReport>,
}

/// Runs both pre-training stages of `plan`. Stages train at the constant
/// rate `train.lr_initial`; the stage-two classifier is drawn from
/// `train.seed + 1`.
pub fn pretrain_fusion<T: Real>(
    template: &AINetConfig,
    plan: &TransferPlan,
    sources: &SourceMap<'_>,
    train_config: &TrainConfig,
) -> Result<Pretrained<T>> {
    plan.validate()?;
    let a = source(sources, &plan.source_a)?;
    let b = plan.source_b.as_deref().map(|id| source(sources, id)).transpose()?;
    for s in std::iter::once(a).chain(b) {
        if s.scene.num_classes() < 2 {
            return Err(Error::InvalidConfig(format!(
                "source {} has fewer than 2 classes",
                s.scene.name()
            )));
        }
    }

    let model: ModelState<T> = build_ainet(&architecture_for(template, a.scene), train_config.seed)?;
    let stage_a = TrainData {
        scene: a.scene,
        train: &a.train,
        test: Some(&a.test),
    };
    let (mut model, report) = train(model, stage_a, &stage_config(train_config, plan.n))?;
    let mut stages = vec![report];

    if let Some(b) = b {
        model = reinit_classifier(model, b.scene.num_classes(), train_config.seed.wrapping_add(1))?;
        model.set_bands(b.scene.bands())?;
        model.set_feature_lr_scale(plan.feature_lr_ratio)?;
        let stage_b = TrainData {
            scene: b.scene,
            train: &b.train,
            test: Some(&b.test),
        };
        let (m, report) = train(model, stage_b, &stage_config(train_config, plan.stage2_epochs))?;
        model = m;
        model.set_feature_lr_scale(1.0)?;
        stages.push(report);
    }
    Ok(Pretrained { model, stages })
}

/// Keeps the feature extractor of `pretrained`, draws a classifier for the
/// target scene from `head_seed`, and trains every part at the full rate.
pub fn prepare_fine_tune<T: Real>(pretrained: ModelState<T>, target: &Scene, head_seed: u64) -> Result<ModelState<T>> {
    let mut model = reinit_classifier(pretrained, target.num_classes(), head_seed)?;
    model.set_bands(target.bands())?;
    model.set_feature_lr_scale(1.0)?;
    Ok(model)
}

pub fn fine_tune<T: Real>(
    pretrained: ModelState<T>,
    data: TrainData<'_>,
    config: &TrainConfig,
) -> Result<(ModelState<T>, TrainReport)> {
    let model = prepare_fine_tune(pretrained, data.scene, config.seed)?;
    train(model, data, config)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SuiteConfig {
    pub samples_per_class: usize,
    pub seeds: Vec<u64>,
    pub variants: Vec<VariantTag>,
    pub sources: SourcePair,
    /// Stage-one epochs; stage two runs `ceil(n / 2)`.
    pub n: usize,
    pub feature_lr_ratio: f64,
    /// Seed of the pre-training runs, shared by all target seeds.
    pub pretrain_seed: u64,
    pub train: TrainConfig,
}

impl Default for SuiteConfig {
    fn default() -> Self {
        SuiteConfig {
            samples_per_class: 15,
            seeds: vec![0, 1, 2],
            variants: VariantTag::ALL.to_vec(),
            sources: SourcePair::default(),
            n: 10,
            feature_lr_ratio: 0.1,
            pretrain_seed: 0,
            train: TrainConfig::default(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct VariantRun {
    pub variant: VariantTag,
    pub seed: u64,
    pub overall_accuracy: f64,
    pub average_accuracy: f64,
    pub kappa: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct VariantSummary {
    pub variant: VariantTag,
    pub overall_accuracy: MeanStd,
    pub average_accuracy: MeanStd,
    pub kappa: MeanStd,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ComparisonTable {
    pub target: String,
    pub samples_per_class: usize,
    pub runs: Vec<VariantRun>,
    pub summary: Vec<VariantSummary>,
}

impl ComparisonTable {
    pub fn new(target: impl Into<String>, samples_per_class: usize, runs: Vec<VariantRun>) -> Self {
        let mut variants: Vec<VariantTag> = runs.iter().map(|r| r.variant).collect();
        variants.sort_unstable();
        variants.dedup();
        let summary = variants
            .into_iter()
            .filter_map(|v| {
                let rows: Vec<&VariantRun> = runs.iter().filter(|r| r.variant == v).collect();
                let col = |f: fn(&VariantRun) -> f64| mean_std(&rows.iter().map(|r| f(r)).collect::<Vec<_>>());
                Some(VariantSummary {
                    variant: v,
                    overall_accuracy: col(|r| r.overall_accuracy)?,
                    average_accuracy: col(|r| r.average_accuracy)?,
                    kappa: col(|r| r.kappa)?,
                })
            })
            .collect();
        ComparisonTable {
            target: target.into(),
            samples_per_class,
            runs,
            summary,
        }
    }

    pub fn summary_for(&self, variant: VariantTag) -> Option<&VariantSummary> {
        self.summary.iter().find(|s| s.variant == variant)
    }

    /// `variant,seed,oa,aa,kappa` rows, metrics in `[0, 1]`.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("variant,seed,oa,aa,kappa\n");
        for r in &self.runs {
            let _ = writeln!(
                out,
                "{},{},{},{},{}",
                r.variant.label(),
                r.seed,
                r.overall_accuracy,
                r.average_accuracy,
                r.kappa
            );
        }
        out
    }

    /// Mean and standard deviation per variant, in percent.
    pub fn summary_csv(&self) -> String {
        let mut out = String::from("variant,runs,oa_mean,oa_std,aa_mean,aa_std,kappa_mean,kappa_std\n");
        for s in &self.summary {
            let pct = |m: &MeanStd| format!("{:.2},{:.2}", 100.0 * m.mean, 100.0 * m.std);
            let _ = writeln!(
                out,
                "{},{},{},{},{}",
                s.variant.label(),
                s.overall_accuracy.n,
                pct(&s.overall_accuracy),
                pct(&s.average_accuracy),
                pct(&s.kappa)
            );
        }
        out
    }

    pub fn to_json(&self) -> Result<String> {
        serde_json::to_string_pretty(self)
            .map(|s| s + "\n")
            .map_err(|e| Error::json("comparison table", e))
    }
}

/// Trains every requested variant for every seed on `samples_per_class`
/// target pixels per class and scores it on the remaining labeled pixels.
/// Pre-training runs once per variant and is shared across seeds.
pub fn run_variant_suite<T: Real>(
    target_id: &str,
    target: &Scene,
    sources: &SourceMap<'_>,
    template: &AINetConfig,
    config: &SuiteConfig,
) -> Result<ComparisonTable> {
    if config.seeds.is_empty() || config.variants.is_empty() {
        return Err(Error::InvalidConfig(
            "the suite needs at least one seed and one variant".into(),
        ));
    }
    let mut pretrained: BTreeMap<VariantTag, ModelState<T>> = BTreeMap::new();
    for &tag in &config.variants {
        if tag == VariantTag::Baseline || pretrained.contains_key(&tag) {
            continue;
        }
        let mut plan = TransferPlan::for_variant(tag, &config.sources, target_id)?.with_epochs(config.n);
        plan.feature_lr_ratio = config.feature_lr_ratio;
        let pre_cfg = TrainConfig {
            seed: config.pretrain_seed,
            ..config.train.clone()
        };
        log::info!(
            "pre-training {} ({:?} then {:?})",
            tag.label(),
            plan.source_a,
            plan.source_b
        );
        pretrained.insert(tag, pretrain_fusion(template, &plan, sources, &pre_cfg)?.model);
    }

    let mut runs = Vec::new();
    for &seed in &config.seeds {
        let split = make_split(&target.gt, &SplitSpec::per_class(config.samples_per_class, seed))?;
        let train_cfg = TrainConfig {
            seed,
            ..config.train.clone()
        };
        let data = TrainData {
            scene: target,
            train: &split.train,
            test: None,
        };
        for &tag in &config.variants {
            let model = match pretrained.get(&tag) {
                Some(p) => prepare_fine_tune(p.clone(), target, seed)?,
                None => build_ainet(&architecture_for(template, target), seed)?,
            };
            let (model, _) = train(model, data, &train_cfg)?;
            let m = evaluate(&model, target, &split.test, train_cfg.batch_size)?;
            log::info!("{} seed {seed}: OA {:.4}", tag.label(), m.overall_accuracy);
            runs.push(VariantRun {
                variant: tag,
                seed,
                overall_accuracy: m.overall_accuracy,
                average_accuracy: m.average_accuracy,
                kappa: m.kappa,
            });
        }
    }
    Ok(ComparisonTable::new(target_id, config.samples_per_class, runs))
}

#[cfg(test)]
mod tests;
