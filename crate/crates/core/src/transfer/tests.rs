use super::*;
use crate::model::ParamGroup;
use crate::synthetic::{SyntheticConfig, SyntheticScene};
use crate::tensor::Tensor;
use crate::train_engine::predict;

fn scene(classes: usize, bands: usize, seed: u64) -> Scene {
    let cfg = SyntheticConfig {
        name: format!("s{seed}"),
        classes,
        bands,
        height: 16,
        width: 16,
        seed,
        ..Default::default()
    };
    SyntheticScene::generate(&cfg).unwrap().scene
}

fn quick() -> TrainConfig {
    TrainConfig {
        epochs: 2,
        final_phase_epochs: 1,
        batch_size: 16,
        seed: 5,
        ..TrainConfig::default()
    }
}

fn sources<'a>(a: &'a Scene, b: &'a Scene) -> SourceMap<'a> {
    let rule = |d: &str| SourceSplitRule {
        dataset: d.into(),
        test_per_class: 3,
    };
    let mut m = SourceMap::new();
    m.insert(
        "pavia-center".into(),
        SourceSet::from_rule(a, &rule("pavia-center"), 0).unwrap(),
    );
    m.insert("salinas".into(), SourceSet::from_rule(b, &rule("salinas"), 0).unwrap());
    m
}

fn learnable_features(m: &ModelState<f32>) -> Vec<Tensor<f32>> {
    m.infos()
        .iter()
        .zip(m.values())
        .filter(|(i, _)| i.kind.is_learnable() && i.group == ParamGroup::FeatureExtractor)
        .map(|(_, v)| v.clone())
        .collect()
}

fn template() -> AINetConfig {
    AINetConfig::micro(16, 2, 5)
}

#[test]
fn plans_follow_variant_definitions() {
    let s = SourcePair::default();
    let t1 = TransferPlan::for_variant(VariantTag::T1, &s, "pavia-university").unwrap();
    assert_eq!((t1.source_a.as_str(), t1.source_b.as_deref()), ("pavia-center", None));
    let t2 = TransferPlan::for_variant(VariantTag::T2, &s, "indian-pines").unwrap();
    assert_eq!((t2.source_a.as_str(), t2.source_b.as_deref()), ("salinas", None));
    let t3 = TransferPlan::for_variant(VariantTag::T3, &s, "x").unwrap();
    let t4 = TransferPlan::for_variant(VariantTag::T4, &s, "x").unwrap();
    assert_eq!(
        (t3.source_a.as_str(), t3.source_b.as_deref()),
        ("pavia-center", Some("salinas"))
    );
    assert_eq!(
        (t4.source_a.as_str(), t4.source_b.as_deref()),
        ("salinas", Some("pavia-center"))
    );
    assert_eq!((t3.n, t3.stage2_epochs, t3.feature_lr_ratio), (10, 5, 0.1));
    assert!(t3.validate().is_ok());
    assert_eq!(t3.clone().with_epochs(7).stage2_epochs, 4);
    assert!(TransferPlan::for_variant(VariantTag::Baseline, &s, "x").is_err());

    let mut broken = t1.clone();
    broken.source_b = Some("salinas".into());
    assert!(broken.validate().is_err());
    let mut broken = t3;
    broken.stage2_epochs = 4;
    assert!(broken.validate().is_err());
    assert_eq!(VariantTag::parse("AINet+T3").unwrap(), VariantTag::T3);
    assert_eq!(serde_json::to_string(&VariantTag::Baseline).unwrap(), "\"none\"");
}

#[test]
fn published_source_rules() {
    let rules = SourceSplitRule::published();
    assert_eq!(rules[0].test_per_class, 200);
    assert_eq!(rules[1].test_per_class, 100);
    let bad = SourceSplitRule {
        dataset: "x".into(),
        test_per_class: 0,
    };
    assert!(bad.validate().is_err());
}

#[test]
fn two_stage_pretraining_sizes_head_for_second_source() {
    let (a, b) = (scene(3, 16, 1), scene(5, 20, 2));
    let src = sources(&a, &b);
    let plan = TransferPlan::for_variant(VariantTag::T3, &SourcePair::default(), "t")
        .unwrap()
        .with_epochs(2);
    let pre: Pretrained<f32> = pretrain_fusion(&template(), &plan, &src, &quick()).unwrap();
    assert_eq!(pre.model.num_classes(), 5);
    assert_eq!(pre.stages.len(), 2);
    assert_eq!(pre.stages[0].losses().len(), 2);
    assert_eq!(pre.stages[1].losses().len(), 1);
    assert!(pre.stages.iter().all(|r| r.epochs.iter().all(|e| e.lr == 0.01)));
    assert_eq!(pre.model.feature_lr_scale(), 1.0);
}

#[test]
fn single_source_plan_is_plain_training() {
    let (a, b) = (scene(3, 16, 1), scene(4, 16, 2));
    let src = sources(&a, &b);
    let plan = TransferPlan::for_variant(VariantTag::T1, &SourcePair::default(), "t")
        .unwrap()
        .with_epochs(2);
    let pre: Pretrained<f32> = pretrain_fusion(&template(), &plan, &src, &quick()).unwrap();

    let s = &src["pavia-center"];
    let fresh: ModelState<f32> = build_ainet(&architecture_for(&template(), &a), quick().seed).unwrap();
    let cfg = TrainConfig {
        epochs: 2,
        final_phase_epochs: 0,
        ..quick()
    };
    let data = TrainData {
        scene: &a,
        train: &s.train,
        test: None,
    };
    let (plain, _) = train(fresh, data, &cfg).unwrap();
    assert_eq!(plain.values(), pre.model.values());
}

#[test]
fn frozen_stage_two_keeps_features_bitwise() {
    let (a, b) = (scene(3, 16, 1), scene(4, 16, 2));
    let src = sources(&a, &b);
    let mut plan = TransferPlan::for_variant(VariantTag::T3, &SourcePair::default(), "t")
        .unwrap()
        .with_epochs(1);
    let single = TransferPlan {
        source_b: None,
        order_tag: VariantTag::T1,
        ..plan.clone()
    };
    let after_a: Pretrained<f32> = pretrain_fusion(&template(), &single, &src, &quick()).unwrap();
    plan.feature_lr_ratio = 0.0;
    let both: Pretrained<f32> = pretrain_fusion(&template(), &plan, &src, &quick()).unwrap();
    assert_eq!(learnable_features(&after_a.model), learnable_features(&both.model));
    assert_ne!(
        after_a.model.param("classifier.weight").unwrap().shape(),
        both.model.param("classifier.weight").unwrap().shape()
    );
}

#[test]
fn missing_source_is_a_data_error() {
    let a = scene(3, 16, 1);
    let mut src = SourceMap::new();
    let rule = SourceSplitRule {
        dataset: "pavia-center".into(),
        test_per_class: 2,
    };
    src.insert("pavia-center".into(), SourceSet::from_rule(&a, &rule, 0).unwrap());
    let plan = TransferPlan::for_variant(VariantTag::T4, &SourcePair::default(), "t").unwrap();
    let err = pretrain_fusion::<f32>(&template(), &plan, &src, &quick())
        .err()
        .unwrap();
    assert!(matches!(err, Error::MissingDataset(ref d) if d == "salinas"));
    assert!(err.is_data_error());
}

#[test]
fn fine_tune_surgery() {
    let (a, b, target) = (scene(3, 16, 1), scene(5, 16, 2), scene(4, 24, 3));
    let src = sources(&a, &b);
    let plan = TransferPlan::for_variant(VariantTag::T4, &SourcePair::default(), "t")
        .unwrap()
        .with_epochs(1);
    let pre: Pretrained<f32> = pretrain_fusion(&template(), &plan, &src, &quick()).unwrap();
    assert_eq!(pre.model.num_classes(), 3);

    let prepared = prepare_fine_tune(pre.model.clone(), &target, 9).unwrap();
    assert_eq!(prepared.feature_extractor(), pre.model.feature_extractor());
    assert_eq!(prepared.num_classes(), 4);
    assert_eq!(prepared.config().bands, 24);

    let split = make_split(&target.gt, &SplitSpec::per_class(4, 0)).unwrap();
    let data = TrainData {
        scene: &target,
        train: &split.train,
        test: None,
    };
    let idle = TrainConfig {
        epochs: 0,
        final_phase_epochs: 0,
        seed: 9,
        ..quick()
    };
    let (tuned, _) = fine_tune(pre.model.clone(), data, &idle).unwrap();
    assert_eq!(
        predict(&tuned, &target, &split.test, 16).unwrap(),
        predict(&prepared, &target, &split.test, 16).unwrap()
    );
    let (trained, report) = fine_tune(pre.model, data, &quick()).unwrap();
    assert_ne!(trained.feature_extractor(), prepared.feature_extractor());
    assert_eq!(report.losses().len(), 2);
}

#[test]
fn suite_table_shape_and_determinism() {
    let (a, b, target) = (scene(3, 16, 1), scene(4, 16, 2), scene(3, 16, 3));
    let src = sources(&a, &b);
    let cfg = SuiteConfig {
        samples_per_class: 4,
        seeds: vec![0, 1],
        variants: vec![VariantTag::Baseline, VariantTag::T3],
        n: 1,
        train: quick(),
        ..SuiteConfig::default()
    };
    let t1 = run_variant_suite::<f32>("target", &target, &src, &template(), &cfg).unwrap();
    let t2 = run_variant_suite::<f32>("target", &target, &src, &template(), &cfg).unwrap();
    assert_eq!(t1, t2);
    assert_eq!(t1.runs.len(), 4);
    assert_eq!(t1.summary.len(), 2);
    assert_eq!(t1.summary_for(VariantTag::T3).unwrap().overall_accuracy.n, 2);
    assert!(t1.to_csv().starts_with("variant,seed,oa,aa,kappa\nAINet,0,"));
    assert_eq!(t1.summary_csv().lines().count(), 3);
    let back: ComparisonTable = serde_json::from_str(&t1.to_json().unwrap()).unwrap();
    assert_eq!(back, t1);
}

#[test]
fn table_statistics() {
    let run = |variant, seed, oa| VariantRun {
        variant,
        seed,
        overall_accuracy: oa,
        average_accuracy: oa,
        kappa: oa,
    };
    let t = ComparisonTable::new(
        "x",
        15,
        vec![
            run(VariantTag::T4, 0, 0.5),
            run(VariantTag::Baseline, 0, 0.25),
            run(VariantTag::T4, 1, 0.7),
        ],
    );
    assert_eq!(t.summary[0].variant, VariantTag::Baseline);
    let t4 = t.summary_for(VariantTag::T4).unwrap();
    assert!((t4.overall_accuracy.mean - 0.6).abs() < 1e-12);
    assert!((t4.overall_accuracy.std - 0.02f64.sqrt()).abs() < 1e-12);
}
