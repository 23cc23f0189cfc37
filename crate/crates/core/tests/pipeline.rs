use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use kgalign::pipeline::{evaluate_files, run_pipeline, run_stages, DatasetConfig, PipelineConfig, Stage, Strategy};
use kgalign::simmat::{BrayCurtisForm, DistanceMeasure, FeatureTag};
use kgalign::synth::{gen_synthetic, SynthConfig};
use kgalign::Error;

fn toy_dir() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/data/toy")
}

fn toy_config(out: &Path) -> PipelineConfig {
    let mut cfg = PipelineConfig {
        dataset: DatasetConfig::from_dir(toy_dir()),
        output_dir: out.to_path_buf(),
        measure: DistanceMeasure::BrayCurtis(BrayCurtisForm::Pooled),
        ..PipelineConfig::default()
    };
    cfg.embedding.dim = 32;
    cfg.embedding.epochs = 60;
    cfg.rl.epochs = 50;
    cfg
}

fn snapshot(dir: &Path) -> BTreeMap<String, Vec<u8>> {
    std::fs::read_dir(dir)
        .unwrap()
        .map(|e| e.unwrap().path())
        .filter(|p| p.is_file())
        .map(|p| (p.file_name().unwrap().to_string_lossy().into_owned(), std::fs::read(&p).unwrap()))
        .collect()
}

#[test]
fn toy_run_writes_report_with_bounded_metrics() {
    let out = tempfile::tempdir().unwrap();
    let outcome = run_pipeline(&toy_config(out.path()), false).unwrap();
    let report = outcome.report.unwrap();
    for v in [report.precision, report.recall, report.f1] {
        assert!((0.0..=1.0).contains(&v));
    }
    assert_eq!(outcome.gold.len(), 28);
    let files = snapshot(out.path());
    for name in [
        "rows.tsv",
        "cols.tsv",
        "gold.tsv",
        "structural.bin",
        "semantic.bin",
        "string.bin",
        "fused.bin",
        "alignment.tsv",
        "ranked.tsv",
        "report.txt",
        "report.json",
        "table.txt",
    ] {
        assert!(files.contains_key(name), "missing {name}");
    }
    let text = String::from_utf8(files["report.txt"].clone()).unwrap();
    assert!(text.contains("precision = "));
}

#[test]
fn fresh_runs_are_byte_identical() {
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    run_pipeline(&toy_config(a.path()), false).unwrap();
    let mut cfg = toy_config(b.path());
    cfg.threads = Some(1);
    run_pipeline(&cfg, false).unwrap();
    assert_eq!(snapshot(a.path()), snapshot(b.path()));
}

#[test]
fn resume_reuses_matching_stages_only() {
    let out = tempfile::tempdir().unwrap();
    let cfg = toy_config(out.path());
    let first = run_pipeline(&cfg, false).unwrap();
    assert!(first.reused.is_empty());
    let before = snapshot(out.path());

    let again = run_pipeline(&cfg, true).unwrap();
    assert_eq!(again.reused, vec![Stage::Features, Stage::Fusion, Stage::Align]);
    assert_eq!(snapshot(out.path()), before);
    assert_eq!(again.report, first.report);

    let mut changed = cfg.clone();
    changed.fusion.theta2 = 0.3;
    let partial = run_pipeline(&changed, true).unwrap();
    assert_eq!(partial.reused, vec![Stage::Features]);
    assert_eq!(snapshot(out.path())["structural.bin"], before["structural.bin"]);

    let mut reseeded = cfg.clone();
    reseeded.seed = 5;
    assert!(run_pipeline(&reseeded, true).unwrap().reused.is_empty());
}

#[test]
fn features_stage_stops_early() {
    let out = tempfile::tempdir().unwrap();
    let outcome = run_stages(&toy_config(out.path()), false, Stage::Features).unwrap();
    assert_eq!(outcome.matrices.len(), 3);
    assert!(outcome.fused.is_none() && outcome.report.is_none());
    assert!(!out.path().join("fused.bin").exists());
}

#[test]
fn noiseless_names_align_perfectly_by_string_alone() {
    let data_dir = tempfile::tempdir().unwrap();
    let cfg = SynthConfig {
        n: 80,
        name_noise: 0.0,
        edge_perturbation: 0.0,
        seed: 3,
        ..SynthConfig::default()
    };
    let data = gen_synthetic(&cfg).unwrap();
    assert_eq!(data.gold.len(), 80);
    data.write(data_dir.path()).unwrap();

    let out = tempfile::tempdir().unwrap();
    let run = PipelineConfig {
        dataset: DatasetConfig::from_dir(data_dir.path()),
        output_dir: out.path().to_path_buf(),
        features: vec![FeatureTag::String],
        strategy: Strategy::Greedy,
        ..PipelineConfig::default()
    };
    let report = run_pipeline(&run, false).unwrap().report.unwrap();
    assert_eq!(report.precision, 1.0);
    assert_eq!(report.recall, 1.0);
}

#[test]
fn relative_paths_in_config_files_follow_the_file() {
    let root = tempfile::tempdir().unwrap();
    let data = gen_synthetic(&SynthConfig { n: 20, ..SynthConfig::default() }).unwrap();
    data.write(&root.path().join("data")).unwrap();
    let path = root.path().join("run.toml");
    std::fs::write(
        &path,
        "output_dir = \"out\"\nseed = 4\nfeatures = [\"string\"]\nstrategy = \"stable\"\n[dataset]\ndir = \"data\"\n",
    )
    .unwrap();
    let cfg = PipelineConfig::from_toml_file(&path).unwrap();
    assert_eq!(cfg.output_dir, root.path().join("out"));
    assert_eq!(cfg.dataset.dir.as_deref(), Some(root.path().join("data").as_path()));
    assert_eq!(cfg.strategy, Strategy::Stable);
    run_pipeline(&cfg, false).unwrap();
    assert!(root.path().join("out/report.json").is_file());

    let round = PipelineConfig::from_toml_str(&cfg.to_toml_string().unwrap()).unwrap();
    assert_eq!(round, cfg);
}

#[test]
fn bad_configs_are_rejected() {
    assert!(matches!(PipelineConfig::from_toml_str("sed = 1"), Err(Error::Config(_))));
    assert!(matches!(
        PipelineConfig::from_toml_str("measure = \"hamming\""),
        Err(Error::Config(_))
    ));
    let missing = PipelineConfig {
        dataset: DatasetConfig::from_dir("/nonexistent/dataset"),
        ..PipelineConfig::default()
    };
    assert!(matches!(missing.validate(), Err(Error::Config(_))));
    let mut dup = toy_config(Path::new("unused"));
    dup.features = vec![FeatureTag::String, FeatureTag::String];
    assert!(matches!(dup.validate(), Err(Error::Config(_))));
}

#[test]
fn divergent_decoder_reports_its_stage() {
    let out = tempfile::tempdir().unwrap();
    let mut cfg = toy_config(out.path());
    cfg.rl.actor_lr = 1e12;
    cfg.rl.critic_lr = 1e12;
    cfg.rl.preliminary_rounds = 0;
    match run_pipeline(&cfg, false) {
        Err(Error::Stage { stage, source }) => {
            assert_eq!(stage, "align");
            assert!(matches!(*source, Error::Training { .. }), "{source}");
        }
        other => panic!("expected an align failure, got {other:?}"),
    }
}

#[test]
fn evaluates_id_files() {
    let dir = tempfile::tempdir().unwrap();
    let write = |name: &str, text: &str| {
        let p = dir.path().join(name);
        std::fs::write(&p, text).unwrap();
        p
    };
    let gold = write("gold.tsv", "a\tx\nb\ty\nc\tz\nd\tw\n");
    let pred = write("pred.tsv", "a\tx\tgreedy\nb\tx\tgreedy\nc\tz\trl\n");
    let ranked = write("ranked.tsv", "a\tx\ty\nb\tx\ty\nc\tz\nd\tz\tw\n");
    let r = evaluate_files(&pred, &gold, Some(&ranked), &[1, 2]).unwrap();
    assert_eq!(r.precision, 2.0 / 3.0);
    assert_eq!(r.recall, 0.5);
    assert_eq!(r.hits[&1], 0.5);
    assert_eq!(r.hits[&2], 1.0);
    assert!((r.mrr.unwrap() - (1.0 + 0.5 + 1.0 + 0.5) / 4.0).abs() < 1e-12);
    assert_eq!((r.mulse, r.multe), (2, 1));

    let dup = write("dup.tsv", "a\tx\na\ty\n");
    assert!(matches!(evaluate_files(&dup, &gold, None, &[1]), Err(Error::Integrity(_))));
}
