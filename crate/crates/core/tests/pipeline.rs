use ainet::hsi_data::{make_split, split_with_counts, write_dataset, Scene, SplitSpec};
use ainet::model::{build_ainet, load_checkpoint, save_checkpoint, AINetConfig, ModelState};
use ainet::synthetic::{SyntheticConfig, SyntheticScene};
use ainet::train_engine::{evaluate, predict, train, TrainConfig, TrainData};
use ainet::Error;

fn scene_on_disk(dir: &std::path::Path) -> Scene {
    let s = SyntheticScene::generate(&SyntheticConfig {
        name: "pipeline".into(),
        bands: 20,
        classes: 3,
        seed: 4,
        ..Default::default()
    })
    .unwrap();
    let manifest = write_dataset(dir, "pipeline", &s.raw, &s.scene.gt).unwrap();
    Scene::load(manifest).unwrap()
}

#[test]
fn train_save_load_predict() {
    let tmp = tempfile::tempdir().unwrap();
    let scene = scene_on_disk(tmp.path());
    let split = make_split(&scene.gt, &SplitSpec::per_class(10, 0)).unwrap();
    let arch = AINetConfig::micro(scene.bands(), scene.num_classes(), 7);
    let model: ModelState<f32> = build_ainet(&arch, 1).unwrap();
    let cfg = TrainConfig {
        epochs: 3,
        final_phase_epochs: 1,
        batch_size: 10,
        ..TrainConfig::default()
    };
    let data = TrainData {
        scene: &scene,
        train: &split.train,
        test: Some(&split.test),
    };
    let (model, report) = train(model, data, &cfg).unwrap();
    assert_eq!(report.steps, 9);
    let metrics = report.metrics.clone().unwrap();
    assert_eq!(metrics.test_samples as usize, split.test.len());

    let dir = tmp.path().join("ckpt");
    save_checkpoint(&model, &dir).unwrap();
    let back: ModelState<f32> = load_checkpoint(&dir).unwrap();
    assert_eq!(
        predict(&model, &scene, &split.test, 32).unwrap(),
        predict(&back, &scene, &split.test, 7).unwrap()
    );
    assert_eq!(evaluate(&back, &scene, &split.test, 16).unwrap(), metrics);
}

#[test]
fn explicit_counts_split() {
    let tmp = tempfile::tempdir().unwrap();
    let scene = scene_on_disk(tmp.path());
    let split = split_with_counts(&scene.gt, &[1, 2, 3], 9).unwrap();
    assert_eq!(split.train_counts(3), vec![1, 2, 3]);
    assert_eq!(split.train.len() + split.test.len(), scene.gt.labeled_count());
    assert!(matches!(
        split_with_counts(&scene.gt, &[1, 2], 9),
        Err(Error::InvalidArgument(_))
    ));
    assert!(matches!(
        split_with_counts(&scene.gt, &[1, 2, 100_000], 9),
        Err(Error::InsufficientSamples { class: 3, .. })
    ));
}
