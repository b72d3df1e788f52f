use std::fs;
use std::path::Path;

use oneshot_core::pipeline::{run_ablation, run_pipeline, FeatureSource, Module, PipelineConfig, PipelineInputs};
use oneshot_core::segmenter::OracleBackend;
use oneshot_core::synth::{generate, DatasetLayout, SynthConfig};

fn dataset(dir: &Path, n: usize, seed: u64) -> DatasetLayout {
    let cfg = SynthConfig {
        seed,
        num_queries: n,
        ..Default::default()
    };
    generate(&cfg).unwrap().write(dir.join("data")).unwrap()
}

fn inputs(layout: &DatasetLayout, out: &Path) -> PipelineInputs {
    PipelineInputs {
        support_image: layout.support_image.clone(),
        support_mask: layout.support_mask.clone(),
        query_dir: layout.query_dir.clone(),
        gt_dir: Some(layout.gt_dir.clone()),
        features: FeatureSource::Dir(layout.features_dir.clone()),
        out_dir: out.to_path_buf(),
    }
}

#[test]
fn smoke_five_pairs() {
    let dir = tempfile::tempdir().unwrap();
    let layout = dataset(dir.path(), 5, 1);
    let backend = OracleBackend::from_dir(&layout.scene_dir);
    let out = dir.path().join("out");
    let summary = run_pipeline(&PipelineConfig::default(), &inputs(&layout, &out), &backend).unwrap();
    assert_eq!(summary.records.len(), 5);
    assert_eq!(summary.num_failed, 0);
    for id in ["q000", "q004"] {
        assert!(out.join("masks").join(format!("{id}.png")).exists());
        assert!(out.join("traces").join(format!("{id}.json")).exists());
        assert!(out.join("gas").join(format!("{id}.csv")).exists());
    }
    assert!(out.join("results.csv").exists());
    assert!(out.join("summary.json").exists());
    assert!(!out.join("heatmaps").exists());
    assert!(summary.m_iou.unwrap() > 0.9);
}

#[test]
fn missing_features_isolated() {
    let dir = tempfile::tempdir().unwrap();
    let layout = dataset(dir.path(), 3, 2);
    fs::remove_file(layout.features_dir.join("q001.npy")).unwrap();
    let backend = OracleBackend::from_dir(&layout.scene_dir);
    let cfg = PipelineConfig {
        emit_heatmaps: true,
        ..Default::default()
    };
    let out = dir.path().join("out");
    let summary = run_pipeline(&cfg, &inputs(&layout, &out), &backend).unwrap();
    assert_eq!(summary.num_failed, 1);
    assert_eq!(summary.failures[0].image_id, "q001");
    let failed = summary.records.iter().find(|r| r.image_id == "q001").unwrap();
    assert_eq!((failed.iou, failed.dice), (0.0, 0.0));
    assert!(out.join("heatmaps/q000.npy").exists());
    assert!(out.join("heatmaps/q000.png").exists());
}

#[test]
fn ablation_table() {
    let dir = tempfile::tempdir().unwrap();
    let layout = dataset(dir.path(), 20, 0);
    let backend = OracleBackend::from_dir(&layout.scene_dir);
    let out = dir.path().join("out");
    let rows = run_ablation(
        &PipelineConfig::default(),
        &inputs(&layout, &out),
        &backend,
        &[Module::Bg, Module::Rwpm, Module::Gas, Module::Pir],
    )
    .unwrap();
    assert_eq!(rows.len(), 6);
    assert!(rows[0].m_iou >= rows[5].m_iou);
    assert!(out.join("ablation.csv").exists());
}

#[test]
fn per_query_outputs_independent_of_other_queries() {
    let dir = tempfile::tempdir().unwrap();
    let layout = dataset(dir.path(), 6, 4);
    let backend = OracleBackend::from_dir(&layout.scene_dir);
    let cfg = PipelineConfig::default();
    let full_out = dir.path().join("full");
    run_pipeline(&cfg, &inputs(&layout, &full_out), &backend).unwrap();

    let solo_dir = dir.path().join("solo");
    fs::create_dir_all(&solo_dir).unwrap();
    fs::copy(layout.query_dir.join("q003.png"), solo_dir.join("q003.png")).unwrap();
    let solo_out = dir.path().join("solo_out");
    let mut solo = inputs(&layout, &solo_out);
    solo.query_dir = solo_dir;
    run_pipeline(&cfg, &solo, &backend).unwrap();

    for sub in ["masks/q003.png", "priors/q003.png", "traces/q003.json", "gas/q003.csv"] {
        assert_eq!(fs::read(full_out.join(sub)).unwrap(), fs::read(solo_out.join(sub)).unwrap(), "{sub}");
    }
}

#[test]
fn ablation_baseline_matches_plain_run() {
    let dir = tempfile::tempdir().unwrap();
    let layout = dataset(dir.path(), 3, 5);
    let backend = OracleBackend::from_dir(&layout.scene_dir);
    let cfg = PipelineConfig::default();
    let plain = dir.path().join("plain");
    run_pipeline(&cfg, &inputs(&layout, &plain), &backend).unwrap();
    let abl = dir.path().join("abl");
    run_ablation(&cfg, &inputs(&layout, &abl), &backend, &[Module::Pir]).unwrap();
    for id in ["q000", "q001", "q002"] {
        let name = format!("masks/{id}.png");
        assert_eq!(fs::read(plain.join(&name)).unwrap(), fs::read(abl.join("ablation/full").join(&name)).unwrap());
        // without refinement the final mask is the prior
        assert_eq!(
            fs::read(abl.join("ablation/no_pir/priors").join(format!("{id}.png"))).unwrap(),
            fs::read(abl.join("ablation/no_pir").join(&name)).unwrap()
        );
    }
    assert!(!abl.join("ablation/no_pir/traces/q000.json").exists());
}
