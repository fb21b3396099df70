//! One entry point per subcommand. Each writes its artifacts and returns the
//! lines worth printing.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use ainet::hsi_data::{make_split, Scene, SplitMode};
use ainet::metrics::MetricsReport;
use ainet::model::{build_ainet, count_parameters, load_checkpoint, save_checkpoint, ModelState, ParamScope};
use ainet::selfcheck::{run_selfcheck, SelfcheckOptions};
use ainet::train_engine::{self, TrainData, TrainReport};
use ainet::transfer::{
    fine_tune, pretrain_fusion, run_variant_suite, ComparisonTable, SourceMap, SourceSet, SuiteConfig, VariantRun,
    VariantTag,
};

use crate::chart::grouped_bars_svg;
use crate::config::{ModelSettings, RunConfig};
use crate::error::{io_error, CliError, CliResult};
use crate::rundir::{sha256_file, RunDir, RunRecord, RUN_RECORD};

pub const METRICS_FILE: &str = "metrics.json";
pub const COMPARISON_FILE: &str = "comparison.json";

#[derive(Clone, Debug, Default)]
pub struct Outcome {
    /// Directory the command wrote, if any.
    pub dir: Option<PathBuf>,
    pub lines: Vec<String>,
}

/// `OA 99.42  AA 98.10  K 0.9901`-style line, accuracies in percent.
pub fn metrics_line(m: &MetricsReport) -> String {
    format!(
        "OA {:.2}  AA {:.2}  K {:.2}  ({} test pixels)",
        100.0 * m.overall_accuracy,
        100.0 * m.average_accuracy,
        100.0 * m.kappa,
        m.test_samples
    )
}

fn load_scene(cfg: &RunConfig, id: &str) -> CliResult<Scene> {
    Ok(Scene::load(cfg.manifest(id)?)?)
}

fn write_training(dir: &RunDir, model: &ModelState<f32>, report: &TrainReport) -> CliResult<()> {
    save_checkpoint(model, dir.join("checkpoint"))?;
    dir.write("train_report.json", report.to_json()?)?;
    dir.write("train_log.csv", report.to_csv())?;
    Ok(())
}

fn write_metrics(dir: &RunDir, metrics: &MetricsReport) -> CliResult<()> {
    dir.write(METRICS_FILE, metrics.to_json()?)?;
    dir.write("confusion.csv", metrics.confusion_matrix()?.to_csv())?;
    Ok(())
}

fn start_run(root: &Path, command: &str, record: &RunRecord) -> CliResult<RunDir> {
    let dir = RunDir::create(root, command)?;
    dir.write_json(RUN_RECORD, record)?;
    dir.write("config.json", record.config.to_json())?;
    Ok(dir)
}

fn require_metrics(report: &TrainReport) -> CliResult<&MetricsReport> {
    report
        .metrics
        .as_ref()
        .ok_or_else(|| CliError::Data("the split left no test pixels to evaluate".into()))
}

/// Trains a freshly initialized network on the target split and scores it on
/// the held-out pixels.
pub fn train(cfg: &RunConfig, root: &Path) -> CliResult<Outcome> {
    let target = cfg.target()?;
    let scene = load_scene(cfg, target)?;
    let split = make_split(&scene.gt, &cfg.split)?;
    let arch = cfg.model.template(scene.bands(), scene.num_classes());
    let model: ModelState<f32> = build_ainet(&arch, cfg.train.seed)?;

    let mut record = RunRecord::new("train", cfg);
    record.target = Some(target.to_string());
    record.variant = Some(VariantTag::Baseline);
    record.seeds.split = Some(cfg.split.seed);
    record.seeds.train = Some(cfg.train.seed);
    record.hash_datasets([target])?;
    let dir = start_run(root, "train", &record)?;

    let data = TrainData {
        scene: &scene,
        train: &split.train,
        test: Some(&split.test),
    };
    let (model, report) = train_engine::train(model, data, &cfg.train)?;
    write_training(&dir, &model, &report)?;
    let metrics = require_metrics(&report)?;
    write_metrics(&dir, metrics)?;
    Ok(Outcome {
        dir: Some(dir.path().to_path_buf()),
        lines: vec![
            format!(
                "{target}: {} training pixels, {} steps",
                split.train.len(),
                report.steps
            ),
            metrics_line(metrics),
        ],
    })
}

/// Runs the source stages of the configured transfer variant.
pub fn pretrain(cfg: &RunConfig, root: &Path) -> CliResult<Outcome> {
    let target = cfg.target.clone().unwrap_or_default();
    let plan = cfg.transfer.plan(&target)?;
    let ids: Vec<&str> = std::iter::once(plan.source_a.as_str())
        .chain(plan.source_b.as_deref())
        .collect();
    let scenes = ids
        .iter()
        .map(|id| load_scene(cfg, id))
        .collect::<CliResult<Vec<_>>>()?;
    let mut sources = SourceMap::new();
    for (id, scene) in ids.iter().zip(&scenes) {
        sources.insert(
            id.to_string(),
            SourceSet::from_rule(scene, &cfg.transfer.rule_for(id), cfg.train.seed)?,
        );
    }

    let mut record = RunRecord::new("pretrain", cfg);
    record.variant = Some(plan.order_tag);
    record.seeds.pretrain = Some(cfg.train.seed);
    record.hash_datasets(ids.iter().copied())?;
    let dir = start_run(root, "pretrain", &record)?;
    dir.write_json("plan.json", &plan)?;

    let template = cfg.model.template(0, 0);
    let pre = pretrain_fusion::<f32>(&template, &plan, &sources, &cfg.train)?;
    save_checkpoint(&pre.model, dir.join("checkpoint"))?;
    let mut lines = Vec::new();
    for (i, (report, id)) in pre.stages.iter().zip(&ids).enumerate() {
        let stage = i + 1;
        dir.write(&format!("stage{stage}_report.json"), report.to_json()?)?;
        dir.write(&format!("stage{stage}_log.csv"), report.to_csv())?;
        let held_out = report.metrics.as_ref().map(metrics_line).unwrap_or_default();
        lines.push(format!(
            "stage {stage} on {id}: {} epochs  {held_out}",
            report.epochs.len()
        ));
    }
    Ok(Outcome {
        dir: Some(dir.path().to_path_buf()),
        lines,
    })
}

/// Fine-tunes a pre-trained checkpoint on the target split.
pub fn finetune(cfg: &RunConfig, pretrained: Option<&Path>, root: &Path) -> CliResult<Outcome> {
    let ckpt = pretrained
        .map(Path::to_path_buf)
        .or_else(|| cfg.transfer.pretrained.clone())
        .ok_or_else(|| {
            CliError::Usage("no pre-trained checkpoint; pass --pretrained or set transfer.pretrained".into())
        })?;
    let target = cfg.target()?;
    let model: ModelState<f32> = load_checkpoint(&ckpt)?;
    let scene = load_scene(cfg, target)?;
    let split = make_split(&scene.gt, &cfg.split)?;

    let mut record = RunRecord::new("finetune", cfg);
    record.target = Some(target.to_string());
    record.variant = Some(cfg.transfer.variant);
    record.seeds.split = Some(cfg.split.seed);
    record.seeds.train = Some(cfg.train.seed);
    record.hash_datasets([target])?;
    record.pretrained = Some(sha256_file(&ckpt.join("parameters.f32"))?);
    let dir = start_run(root, "finetune", &record)?;

    let data = TrainData {
        scene: &scene,
        train: &split.train,
        test: Some(&split.test),
    };
    let (model, report) = fine_tune(model, data, &cfg.train)?;
    write_training(&dir, &model, &report)?;
    let metrics = require_metrics(&report)?;
    write_metrics(&dir, metrics)?;
    Ok(Outcome {
        dir: Some(dir.path().to_path_buf()),
        lines: vec![
            format!(
                "{target} from {}: {} training pixels",
                ckpt.display(),
                split.train.len()
            ),
            metrics_line(metrics),
        ],
    })
}

/// Scores a checkpoint on the test side of the configured split.
pub fn evaluate(cfg: &RunConfig, checkpoint: &Path, root: &Path) -> CliResult<Outcome> {
    let target = cfg.target()?;
    let mut model: ModelState<f32> = load_checkpoint(checkpoint)?;
    let scene = load_scene(cfg, target)?;
    if model.num_classes() != scene.num_classes() {
        return Err(CliError::Data(format!(
            "checkpoint predicts {} classes but {target} has {}",
            model.num_classes(),
            scene.num_classes()
        )));
    }
    model.set_bands(scene.bands())?;
    let split = make_split(&scene.gt, &cfg.split)?;

    let mut record = RunRecord::new("evaluate", cfg);
    record.target = Some(target.to_string());
    record.seeds.split = Some(cfg.split.seed);
    record.hash_datasets([target])?;
    record.pretrained = Some(sha256_file(&checkpoint.join("parameters.f32"))?);
    let dir = start_run(root, "evaluate", &record)?;

    let metrics = train_engine::evaluate(&model, &scene, &split.test, cfg.train.batch_size)?;
    write_metrics(&dir, &metrics)?;
    Ok(Outcome {
        dir: Some(dir.path().to_path_buf()),
        lines: vec![metrics_line(&metrics)],
    })
}

pub const PARAM_BUDGET: (usize, usize) = ainet::selfcheck::PARAM_BUDGET;

/// Convolution and total parameter counts of the configured network.
pub fn param_count(model: &ModelSettings, bands: usize, classes: usize) -> CliResult<Outcome> {
    let arch = model.template(bands, classes);
    let net: ModelState<f32> = build_ainet(&arch, 0)?;
    let conv = count_parameters(&net, ParamScope::ConvOnly);
    let all = count_parameters(&net, ParamScope::All);
    let (lo, hi) = PARAM_BUDGET;
    Ok(Outcome {
        dir: None,
        lines: vec![
            format!("conv parameters: {conv} ({:.3}M)", conv as f64 / 1e6),
            format!("all parameters: {all}"),
            format!("feature length: {}", arch.feature_len()),
            format!(
                "conv count within [{lo}, {hi}]: {}",
                if (lo..=hi).contains(&conv) { "yes" } else { "no" }
            ),
        ],
    })
}

pub fn selfcheck(options: &SelfcheckOptions) -> CliResult<Outcome> {
    let report = run_selfcheck(options)?;
    let lines = report
        .checks
        .iter()
        .map(|c| format!("{} {}: {}", if c.passed { "PASS" } else { "FAIL" }, c.name, c.detail))
        .collect::<Vec<_>>();
    if !report.passed() {
        for l in &lines {
            println!("{l}");
        }
        let failed = report.checks.iter().filter(|c| !c.passed).count();
        return Err(CliError::Failed(format!("{failed} self-check(s) failed")));
    }
    Ok(Outcome { dir: None, lines })
}

fn suite_config(cfg: &RunConfig) -> SuiteConfig {
    SuiteConfig {
        samples_per_class: cfg.suite.samples_per_class,
        seeds: cfg.suite.seeds.clone(),
        variants: cfg.suite.variants.clone(),
        sources: cfg.transfer.sources.clone(),
        n: cfg.transfer.n,
        feature_lr_ratio: cfg.transfer.feature_lr_ratio,
        pretrain_seed: cfg.suite.pretrain_seed,
        train: cfg.train.clone(),
    }
}

fn write_table(dir: &Path, table: &ComparisonTable) -> CliResult<()> {
    fs::create_dir_all(dir).map_err(|e| io_error(dir, e))?;
    let put = |name: &str, text: String| {
        let p = dir.join(name);
        fs::write(&p, text).map_err(|e| io_error(&p, e))
    };
    put(COMPARISON_FILE, table.to_json()?)?;
    put("runs.csv", table.to_csv())?;
    put("summary.csv", table.summary_csv())?;
    grouped_bars_svg(table, &dir.join("chart.svg"))
}

fn summary_lines(table: &ComparisonTable) -> Vec<String> {
    let mut lines = vec![format!("{} ({} per class)", table.target, table.samples_per_class)];
    for s in &table.summary {
        lines.push(format!(
            "  {:<9} OA {:6.2} ± {:5.2}  AA {:6.2} ± {:5.2}  K {:6.2} ± {:5.2}  (n={})",
            s.variant.label(),
            100.0 * s.overall_accuracy.mean,
            100.0 * s.overall_accuracy.std,
            100.0 * s.average_accuracy.mean,
            100.0 * s.average_accuracy.std,
            100.0 * s.kappa.mean,
            100.0 * s.kappa.std,
            s.overall_accuracy.n
        ));
    }
    lines
}

/// Trains every configured variant for every seed on the target and writes
/// the comparison table and chart.
pub fn suite(cfg: &RunConfig, root: &Path) -> CliResult<Outcome> {
    let target = cfg.target()?;
    let suite = suite_config(cfg);
    let scene = load_scene(cfg, target)?;
    let mut ids: Vec<&str> = Vec::new();
    if suite
        .variants
        .iter()
        .any(|v| matches!(v, VariantTag::T1 | VariantTag::T3 | VariantTag::T4))
    {
        ids.push(&suite.sources.first);
    }
    if suite
        .variants
        .iter()
        .any(|v| matches!(v, VariantTag::T2 | VariantTag::T3 | VariantTag::T4))
    {
        ids.push(&suite.sources.second);
    }
    let scenes = ids
        .iter()
        .map(|id| load_scene(cfg, id))
        .collect::<CliResult<Vec<_>>>()?;
    let mut sources = SourceMap::new();
    for (id, s) in ids.iter().zip(&scenes) {
        sources.insert(
            id.to_string(),
            SourceSet::from_rule(s, &cfg.transfer.rule_for(id), suite.pretrain_seed)?,
        );
    }

    let mut record = RunRecord::new("suite", cfg);
    record.target = Some(target.to_string());
    record.seeds.pretrain = Some(suite.pretrain_seed);
    record.seeds.suite = suite.seeds.clone();
    record.hash_datasets(std::iter::once(target).chain(ids.iter().copied()))?;
    let dir = start_run(root, "suite", &record)?;

    let template = cfg.model.template(0, 0);
    let table = run_variant_suite::<f32>(target, &scene, &sources, &template, &suite)?;
    write_table(dir.path(), &table)?;
    Ok(Outcome {
        dir: Some(dir.path().to_path_buf()),
        lines: summary_lines(&table),
    })
}

fn run_from_dir(dir: &Path) -> CliResult<Option<(String, usize, VariantRun)>> {
    let metrics_path = dir.join(METRICS_FILE);
    if !metrics_path.is_file() || !dir.join(RUN_RECORD).is_file() {
        return Ok(None);
    }
    let record = RunRecord::load(dir)?;
    let (Some(target), Some(variant)) = (record.target.clone(), record.variant) else {
        return Ok(None);
    };
    let text = fs::read_to_string(&metrics_path).map_err(|e| io_error(&metrics_path, e))?;
    let m: MetricsReport =
        serde_json::from_str(&text).map_err(|e| CliError::Data(format!("{}: {e}", metrics_path.display())))?;
    let per_class = match record.config.split.mode {
        SplitMode::PerClassCount => record.config.split.per_class.unwrap_or(0),
        SplitMode::TotalCountProportional => 0,
    };
    Ok(Some((
        target,
        per_class,
        VariantRun {
            variant,
            seed: record.seeds.train.unwrap_or(0),
            overall_accuracy: m.overall_accuracy,
            average_accuracy: m.average_accuracy,
            kappa: m.kappa,
        },
    )))
}

fn table_from_dir(dir: &Path) -> CliResult<Option<ComparisonTable>> {
    let p = dir.join(COMPARISON_FILE);
    if !p.is_file() {
        return Ok(None);
    }
    let text = fs::read_to_string(&p).map_err(|e| io_error(&p, e))?;
    serde_json::from_str(&text)
        .map(Some)
        .map_err(|e| CliError::Data(format!("{}: {e}", p.display())))
}

#[derive(Default)]
struct Collected {
    runs: BTreeMap<String, (usize, Vec<VariantRun>)>,
}

impl Collected {
    fn add(&mut self, target: String, per_class: usize, run: VariantRun) {
        let entry = self.runs.entry(target).or_insert((per_class, Vec::new()));
        if !entry.1.contains(&run) {
            entry.1.push(run);
        }
    }

    /// Takes runs from `dir` itself, or from its immediate subdirectories.
    fn scan(&mut self, dir: &Path, depth: usize) -> CliResult<()> {
        if let Some(t) = table_from_dir(dir)? {
            for r in t.runs {
                self.add(t.target.clone(), t.samples_per_class, r);
            }
            return Ok(());
        }
        if let Some((target, per_class, run)) = run_from_dir(dir)? {
            self.add(target, per_class, run);
            return Ok(());
        }
        if depth == 0 {
            return Ok(());
        }
        let mut children: Vec<PathBuf> = fs::read_dir(dir)
            .map_err(|e| io_error(dir, e))?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| p.is_dir())
            .collect();
        children.sort();
        for c in children {
            self.scan(&c, depth - 1)?;
        }
        Ok(())
    }
}

/// Aggregates run and suite directories into per-target tables and charts.
pub fn report(dirs: &[PathBuf], root: &Path) -> CliResult<Outcome> {
    if dirs.is_empty() {
        return Err(CliError::Usage("report needs at least one run directory".into()));
    }
    let mut collected = Collected::default();
    for d in dirs {
        if !d.is_dir() {
            return Err(CliError::Data(format!("{} is not a directory", d.display())));
        }
        collected.scan(d, 1)?;
    }
    if collected.runs.is_empty() {
        return Err(CliError::Data(format!(
            "no finished runs found under {}",
            dirs.iter()
                .map(|d| d.display().to_string())
                .collect::<Vec<_>>()
                .join(", ")
        )));
    }

    let dir = RunDir::create(root, "report")?;
    let mut lines = Vec::new();
    for (target, (per_class, runs)) in collected.runs {
        let table = ComparisonTable::new(target.clone(), per_class, runs);
        let safe: String = target
            .chars()
            .map(|c| {
                if c.is_ascii_alphanumeric() || c == '-' || c == '_' {
                    c
                } else {
                    '_'
                }
            })
            .collect();
        write_table(&dir.join(&safe), &table)?;
        lines.extend(summary_lines(&table));
    }
    Ok(Outcome {
        dir: Some(dir.path().to_path_buf()),
        lines,
    })
}
