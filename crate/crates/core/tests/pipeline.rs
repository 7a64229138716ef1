use std::path::Path;

use clts::oracles::TemplateRegistry;
use clts::pipeline::{
    build_stream, infer, run_clts, run_clts_detailed, write_run_outputs, DatasetSpec, ExperimentConfig,
};
use clts::predictor::{PredictorConfig, TaskPredictor};
use clts::specialist::TaskSpecialist;
use clts::CltsError;

fn small_config() -> ExperimentConfig {
    ExperimentConfig::from_json(
        r#"{
            "dataset": { "kind": "synthetic", "samples_per_class": 40 },
            "caption_batch_size": 16,
            "repetitions": 2,
            "specialist": { "vae": { "epochs": 6, "hidden": [32, 16] } },
            "predictor": { "epochs": 6, "hidden": [32] }
        }"#,
    )
    .unwrap()
}

#[test]
fn reports_are_reproducible_and_seed_sensitive() {
    let config = small_config();
    let stream = build_stream(&config).unwrap();
    let a = run_clts(&stream, &config).unwrap().to_json().unwrap();
    let b = run_clts(&stream, &config).unwrap().to_json().unwrap();
    assert_eq!(a, b);

    let other = ExperimentConfig {
        seed: 11,
        ..config.clone()
    };
    let c = run_clts(&build_stream(&other).unwrap(), &other).unwrap().to_json().unwrap();
    assert_ne!(a, c);
}

#[test]
fn checkpoints_reload_to_identical_predictions() {
    let config = ExperimentConfig {
        repetitions: 1,
        ..small_config()
    };
    let stream = build_stream(&config).unwrap();
    let run = run_clts_detailed(&stream, &config).unwrap();
    let dir = tempfile::tempdir().unwrap();
    write_run_outputs(dir.path(), &run).unwrap();

    let k = stream.len();
    let specialists: Vec<TaskSpecialist> = (1..=k)
        .map(|t| TaskSpecialist::read_checkpoint(&dir.path().join(format!("checkpoints/task-{t}"))).unwrap())
        .collect();
    let tp_file = clts::checkpoint::read_json(&dir.path().join(format!("checkpoints/task-{k}/tp.json"))).unwrap();
    let tp = TaskPredictor::from_param_file(tp_file).unwrap();
    assert_eq!(&tp, run.artifacts.predictors.last().unwrap());

    for task in stream.tasks() {
        for s in &task.test {
            assert_eq!(
                infer(&specialists, &tp, &s.features).unwrap(),
                infer(&run.artifacts.specialists, &tp, &s.features).unwrap()
            );
        }
    }
}

#[test]
fn widened_predictor_keeps_routing_earlier_tasks() {
    // The small config's predictor is too briefly trained to lift a freshly
    // added head row; the default one is used here.
    let config = ExperimentConfig {
        repetitions: 1,
        predictor: PredictorConfig::default(),
        ..small_config()
    };
    let stream = build_stream(&config).unwrap();
    let run = run_clts_detailed(&stream, &config).unwrap();
    let routing = run.report.repetitions[0].routing_matrix.as_ref().unwrap();
    for (t, row) in routing.rows.iter().enumerate() {
        for (j, &r) in row.iter().enumerate() {
            assert!(r >= 0.8, "after task {}: task {} routed at {r}", t + 1, j + 1);
        }
    }
    for (t, p) in run.artifacts.predictors.iter().enumerate() {
        assert_eq!(p.tasks(), t + 1);
    }
}

#[test]
fn infer_rejects_mismatched_router() {
    let config = ExperimentConfig {
        repetitions: 1,
        ..small_config()
    };
    let stream = build_stream(&config).unwrap();
    let run = run_clts_detailed(&stream, &config).unwrap();
    let x = &stream.test_set(1)[0].features;
    let early = &run.artifacts.predictors[1];
    assert!(matches!(infer(&run.artifacts.specialists, early, x), Err(CltsError::Contract(_))));
    assert!(matches!(infer(&[], early, x), Err(CltsError::Contract(_))));
}

/// Renders every template grid point to an 8-bit PNG and lists it in a
/// manifest next to the config.
fn write_png_dataset(dir: &Path, registry: &TemplateRegistry) {
    std::fs::create_dir_all(dir.join("images")).unwrap();
    let mut manifest = String::new();
    for t in &registry.templates {
        for (i, a) in t.params[0].values().enumerate() {
            for (j, b) in t.params[1].values().enumerate() {
                let pixels: Vec<u8> = registry
                    .render(t.pattern, [a, b])
                    .iter()
                    .map(|v| (v * 255.0).round() as u8)
                    .collect();
                let name = format!("images/c{}_{i}_{j}.png", t.class);
                image::GrayImage::from_raw(registry.width as u32, registry.height as u32, pixels)
                    .unwrap()
                    .save(dir.join(&name))
                    .unwrap();
                manifest.push_str(&format!("{name},{}\n", t.class));
            }
        }
    }
    std::fs::write(dir.join("manifest.csv"), manifest).unwrap();
}

#[test]
fn manifest_dataset_runs_end_to_end() {
    let dir = tempfile::tempdir().unwrap();
    let registry = TemplateRegistry::default();
    write_png_dataset(dir.path(), &registry);
    std::fs::write(
        dir.path().join("config.json"),
        r#"{
            "dataset": { "kind": "manifest", "root": ".", "manifest": "manifest.csv" },
            "caption_batch_size": 8,
            "repetitions": 1,
            "specialist": { "vae": { "epochs": 10, "hidden": [32, 16] } },
            "predictor": { "epochs": 8, "hidden": [32] }
        }"#,
    )
    .unwrap();

    let config = ExperimentConfig::load(&dir.path().join("config.json")).unwrap();
    assert!(matches!(config.dataset, DatasetSpec::Manifest { .. }));
    let stream = build_stream(&config).unwrap();
    assert_eq!(stream.len(), 5);
    assert_eq!(stream.feature_len(), 64);
    let report = run_clts(&stream, &config).unwrap();
    assert!(report.acc.mean > 0.5, "ACC {}", report.acc.mean);
    assert!(report.audit_violations.is_empty());
}
