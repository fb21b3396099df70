mod common;

use std::fs;
use std::path::Path;

use ainet::hsi_data::{load_dataset, Scene};
use common::*;

fn root_arg(p: &Path) -> String {
    p.display().to_string()
}

#[test]
fn prepare_converts_mat_files_deterministically() {
    let tmp = tempfile::tempdir().unwrap();
    let (h, w, l) = (4, 5, 3);
    let cube: Vec<f64> = (0..h * w * l).map(|i| (i as f64).sin()).collect();
    let labels: Vec<f64> = (0..h * w).map(|i| (i % 3) as f64).collect();
    let mat = tmp.path().join("scene.mat");
    write_mat(&mat, &[("cube", &[h, w, l], &cube), ("gt", &[h, w], &labels)]);

    let out_a = tmp.path().join("a");
    let out_b = tmp.path().join("b");
    for out in [&out_a, &out_b] {
        let o = run(&[
            "prepare",
            "--cube",
            mat.to_str().unwrap(),
            "--name",
            "tiny",
            "--out",
            out.to_str().unwrap(),
        ]);
        assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    }
    for f in ["tiny.json", "tiny.cube.f32", "tiny.labels.u16"] {
        assert_eq!(
            fs::read(out_a.join(f)).unwrap(),
            fs::read(out_b.join(f)).unwrap(),
            "{f}"
        );
    }

    let (c, gt) = load_dataset(out_a.join("tiny.json")).unwrap();
    assert_eq!((c.bands(), c.height(), c.width(), gt.num_classes()), (l, h, w, 2));
    for b in 0..l {
        for r in 0..h {
            for col in 0..w {
                assert_eq!(c.values()[[b, r, col]], cube[r + h * (col + w * b)] as f32);
            }
        }
    }
    assert_eq!(gt.label(1, 2) as f64, labels[1 + h * 2]);
}

#[test]
fn prepare_reports_corrupt_input_with_its_path() {
    let tmp = tempfile::tempdir().unwrap();
    let bad = tmp.path().join("broken.mat");
    fs::write(&bad, b"not a mat file at all").unwrap();
    let o = run(&[
        "prepare",
        "--cube",
        bad.to_str().unwrap(),
        "--name",
        "x",
        "--out",
        tmp.path().to_str().unwrap(),
    ]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("broken.mat"));
}

#[test]
fn prepare_with_separate_label_file_and_named_variables() {
    let tmp = tempfile::tempdir().unwrap();
    let cube: Vec<f64> = (0..2 * 2 * 4).map(|i| i as f64).collect();
    let c = tmp.path().join("c.mat");
    let g = tmp.path().join("g.mat");
    write_mat(&c, &[("a", &[2, 2, 4], &cube), ("b", &[2, 2, 4], &cube)]);
    write_mat(&g, &[("labels", &[2, 2], &[1.0, 2.0, 0.0, 1.0])]);
    let base = [
        "prepare",
        "--cube",
        c.to_str().unwrap(),
        "--labels",
        g.to_str().unwrap(),
        "--name",
        "s",
    ];
    let out = tmp.path().join("o");
    let ambiguous = run(&[&base[..], &["--out", out.to_str().unwrap()]].concat());
    assert_eq!(ambiguous.status.code(), Some(1));
    let ok = run(&[
        &base[..],
        &["--cube-var", "b", "--classes", "2", "--out", out.to_str().unwrap()],
    ]
    .concat());
    assert!(ok.status.success(), "{}", String::from_utf8_lossy(&ok.stderr));
    assert_eq!(load_dataset(out.join("s.json")).unwrap().1.num_classes(), 2);
    let short = run(&[
        &base[..],
        &["--cube-var", "b", "--classes", "1", "--out", out.to_str().unwrap()],
    ]
    .concat());
    assert_eq!(short.status.code(), Some(2));
}

#[test]
fn train_writes_a_reproducible_run_directory() {
    let tmp = tempfile::tempdir().unwrap();
    let m = dataset(tmp.path(), "scene", 3, 16, 7);
    let cfg = config(tmp.path(), &[("scene", &m)], "scene");
    let root = tmp.path().join("runs");
    let args = ["train", "-c", cfg.to_str().unwrap(), "--output-root", &root_arg(&root)];

    let a = run(&args);
    assert!(a.status.success(), "{}", String::from_utf8_lossy(&a.stderr));
    assert!(stdout(&a).contains("OA "));
    let b = run(&args);
    let (da, db) = (output_dir(&a), output_dir(&b));
    assert_ne!(da, db);
    for f in [
        "run.json",
        "config.json",
        "metrics.json",
        "confusion.csv",
        "train_report.json",
        "train_log.csv",
    ] {
        assert!(da.join(f).is_file(), "{f}");
    }
    assert!(da.join("checkpoint/parameters.f32").is_file());
    assert_eq!(
        fs::read(da.join("metrics.json")).unwrap(),
        fs::read(db.join("metrics.json")).unwrap()
    );
    assert_eq!(
        fs::read(da.join("checkpoint/parameters.f32")).unwrap(),
        fs::read(db.join("checkpoint/parameters.f32")).unwrap()
    );

    let record: serde_json::Value = serde_json::from_str(&fs::read_to_string(da.join("run.json")).unwrap()).unwrap();
    assert_eq!(record["seeds"]["split"], 1);
    assert_eq!(record["seeds"]["train"], 3);
    assert_eq!(record["variant"], "none");
    assert_eq!(record["datasets"][0]["cube"]["sha256"].as_str().unwrap().len(), 64);
    assert_eq!(record["config"]["train"]["epochs"], 2);
}

#[test]
fn output_root_comes_from_the_environment() {
    let tmp = tempfile::tempdir().unwrap();
    let m = dataset(tmp.path(), "scene", 3, 16, 7);
    let cfg = config(tmp.path(), &[("scene", &m)], "scene");
    let root = tmp.path().join("env-root");
    let o = bin()
        .args([
            "train",
            "-c",
            cfg.to_str().unwrap(),
            "--set",
            "train.epochs=1",
            "--set",
            "train.final_phase_epochs=0",
        ])
        .env("AINET_OUTPUT_ROOT", &root)
        .output()
        .unwrap();
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    assert!(output_dir(&o).starts_with(&root));
}

#[test]
fn exit_codes_distinguish_usage_and_data_errors() {
    let tmp = tempfile::tempdir().unwrap();
    let m = dataset(tmp.path(), "scene", 3, 16, 7);
    let cfg = config(tmp.path(), &[("scene", &m)], "scene");
    let c = cfg.to_str().unwrap();
    let root = root_arg(&tmp.path().join("runs"));

    assert_eq!(
        run(&["train", "-c", c, "--set", "train.epochz=1"]).status.code(),
        Some(1)
    );
    assert_eq!(run(&["frobnicate"]).status.code(), Some(1));
    assert_eq!(run(&["--help"]).status.code(), Some(0));
    let missing = run(&["train", "-c", c, "--set", "target=elsewhere", "--output-root", &root]);
    assert_eq!(missing.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&missing.stderr).contains("elsewhere"));
    let gone = run(&[
        "train",
        "-c",
        c,
        "--set",
        "datasets.scene=/nonexistent/x.json",
        "--output-root",
        &root,
    ]);
    assert_eq!(gone.status.code(), Some(2));
    let diverge = run(&[
        "train",
        "-c",
        c,
        "--set",
        "train.lr_initial=1e30",
        "--set",
        "train.lr_final=1e30",
        "--output-root",
        &root,
    ]);
    assert_eq!(
        diverge.status.code(),
        Some(3),
        "{}",
        String::from_utf8_lossy(&diverge.stderr)
    );
}

#[test]
fn transfer_pipeline_end_to_end() {
    let tmp = tempfile::tempdir().unwrap();
    let a = dataset(tmp.path(), "pc", 3, 16, 1);
    let b = dataset(tmp.path(), "sa", 4, 20, 2);
    let t = dataset(tmp.path(), "tg", 3, 18, 3);
    let cfg = config(
        tmp.path(),
        &[("pavia-center", &a), ("salinas", &b), ("target", &t)],
        "target",
    );
    let c = cfg.to_str().unwrap();
    let root = root_arg(&tmp.path().join("runs"));

    let pre = run(&["pretrain", "-c", c, "--output-root", &root]);
    assert!(pre.status.success(), "{}", String::from_utf8_lossy(&pre.stderr));
    let pdir = output_dir(&pre);
    for f in [
        "plan.json",
        "stage1_report.json",
        "stage2_report.json",
        "checkpoint/config.json",
    ] {
        assert!(pdir.join(f).is_file(), "{f}");
    }
    let plan: serde_json::Value = serde_json::from_str(&fs::read_to_string(pdir.join("plan.json")).unwrap()).unwrap();
    assert_eq!(
        (plan["source_a"].as_str(), plan["source_b"].as_str()),
        (Some("pavia-center"), Some("salinas"))
    );
    assert_eq!(plan["stage2_epochs"], 1);

    let single = run(&[
        "pretrain",
        "-c",
        c,
        "--set",
        "transfer.variant=T1",
        "--output-root",
        &root,
    ]);
    assert!(single.status.success());
    let sdir = output_dir(&single);
    assert!(sdir.join("stage1_report.json").is_file());
    assert!(!sdir.join("stage2_report.json").exists());

    let ckpt = pdir.join("checkpoint");
    let ft = run(&[
        "finetune",
        "-c",
        c,
        "--pretrained",
        ckpt.to_str().unwrap(),
        "--output-root",
        &root,
    ]);
    assert!(ft.status.success(), "{}", String::from_utf8_lossy(&ft.stderr));
    let fdir = output_dir(&ft);
    let record: serde_json::Value = serde_json::from_str(&fs::read_to_string(fdir.join("run.json")).unwrap()).unwrap();
    assert_eq!(record["variant"], "T3");
    assert_eq!(record["pretrained"]["sha256"].as_str().unwrap().len(), 64);

    let ev = run(&[
        "evaluate",
        "-c",
        c,
        "--checkpoint",
        fdir.join("checkpoint").to_str().unwrap(),
        "--output-root",
        &root,
    ]);
    assert!(ev.status.success(), "{}", String::from_utf8_lossy(&ev.stderr));
    assert_eq!(
        fs::read(output_dir(&ev).join("metrics.json")).unwrap(),
        fs::read(fdir.join("metrics.json")).unwrap()
    );

    let bogus = tmp.path().join("bogus");
    fs::create_dir(&bogus).unwrap();
    let bad = run(&[
        "finetune",
        "-c",
        c,
        "--pretrained",
        bogus.to_str().unwrap(),
        "--output-root",
        &root,
    ]);
    assert_eq!(bad.status.code(), Some(2));
    let wrong = run(&[
        "evaluate",
        "-c",
        c,
        "--checkpoint",
        ckpt.to_str().unwrap(),
        "--output-root",
        &root,
    ]);
    assert_eq!(wrong.status.code(), Some(2), "source head has 4 classes, target has 3");
    let no_ckpt = run(&["finetune", "-c", c, "--output-root", &root]);
    assert_eq!(no_ckpt.status.code(), Some(1));
}

#[test]
fn suite_and_report_build_comparison_charts() {
    let tmp = tempfile::tempdir().unwrap();
    let a = dataset(tmp.path(), "pc", 3, 16, 1);
    let b = dataset(tmp.path(), "sa", 4, 16, 2);
    let t = dataset(tmp.path(), "tg", 3, 16, 3);
    let cfg = config(
        tmp.path(),
        &[("pavia-center", &a), ("salinas", &b), ("target", &t)],
        "target",
    );
    let c = cfg.to_str().unwrap();
    let root = tmp.path().join("runs");
    let r = root_arg(&root);

    let suite = run(&["suite", "-c", c, "--output-root", &r]);
    assert!(suite.status.success(), "{}", String::from_utf8_lossy(&suite.stderr));
    let sdir = output_dir(&suite);
    let runs = fs::read_to_string(sdir.join("runs.csv")).unwrap();
    assert_eq!(runs.lines().count(), 1 + 2 * 2);
    assert!(fs::read_to_string(sdir.join("chart.svg")).unwrap().contains("<svg"));

    let train = run(&["train", "-c", c, "--output-root", &r]);
    assert!(train.status.success());

    let rep = run(&[
        "report",
        root.to_str().unwrap(),
        "--output-root",
        &root_arg(&tmp.path().join("reports")),
    ]);
    assert!(rep.status.success(), "{}", String::from_utf8_lossy(&rep.stderr));
    let out = output_dir(&rep).join("target");
    let table: ainet::transfer::ComparisonTable =
        serde_json::from_str(&fs::read_to_string(out.join("comparison.json")).unwrap()).unwrap();
    assert_eq!(table.runs.len(), 5);
    assert_eq!(table.summary.len(), 2);
    assert!(out.join("chart.svg").is_file());
    assert!(fs::read_to_string(out.join("summary.csv"))
        .unwrap()
        .starts_with("variant,runs,"));

    let single = run(&[
        "report",
        output_dir(&train).to_str().unwrap(),
        "--output-root",
        &root_arg(&tmp.path().join("r2")),
    ]);
    assert!(single.status.success());
    let one: ainet::transfer::ComparisonTable =
        serde_json::from_str(&fs::read_to_string(output_dir(&single).join("target/comparison.json")).unwrap()).unwrap();
    assert_eq!((one.runs.len(), one.summary.len()), (1, 1));

    let empty = tmp.path().join("empty");
    fs::create_dir(&empty).unwrap();
    assert_eq!(run(&["report", empty.to_str().unwrap()]).status.code(), Some(2));
}

#[test]
fn param_count_reports_the_default_network() {
    let o = run(&["param-count"]);
    assert!(o.status.success());
    let out = stdout(&o);
    assert!(out.contains("conv parameters: 487008 (0.487M)"), "{out}");
    assert!(out.contains("feature length: 1536"));
    assert!(out.contains("within [440000, 540000]: yes"));
    let micro = stdout(&run(&[
        "param-count",
        "--set",
        "model.preset=micro",
        "--bands",
        "16",
        "--classes",
        "3",
    ]));
    assert!(micro.contains("conv parameters: 1884"), "{micro}");
}

#[test]
fn selfcheck_passes_and_catches_a_planted_fault() {
    let ok = run(&["selfcheck", "--samples", "24"]);
    assert!(ok.status.success(), "{}", stdout(&ok));
    assert_eq!(stdout(&ok).lines().filter(|l| l.starts_with("PASS")).count(), 5);
    let bad = run(&["selfcheck", "--samples", "24", "--inject-fault", "1.5"]);
    assert_eq!(bad.status.code(), Some(3));
    assert!(stdout(&bad).contains("FAIL gradient check"));
}

#[test]
fn prepared_scene_loads_normalized() {
    let tmp = tempfile::tempdir().unwrap();
    let m = dataset(tmp.path(), "scene", 3, 16, 7);
    let s = Scene::load(&m).unwrap();
    assert!(s.cube.values().iter().all(|v| (0.0..=1.0).contains(v)));
}
