use std::fs;
use std::sync::Arc;

use ktm::engine::{self, EngineError, ModelState, TrainConfig};
use ktm::kernels::{self, FeaturePoint, FeatureSpace, KernelSpec};
use ktm::synthetic::{self, SyntheticConfig};

fn trained(sweeps: usize) -> ModelState {
    let s = synthetic::generate(&SyntheticConfig { docs: 30, ..Default::default() });
    let config = TrainConfig {
        topics: 3,
        max_sweeps: sweeps,
        hyperopt_every: 3,
        hyperopt_steps: 5,
        seed: 7,
        ..Default::default()
    };
    engine::train(&s.corpus, Arc::new(s.features), &KernelSpec::default(), &config).unwrap()
}

fn assert_same(a: &ModelState, b: &ModelState) {
    assert_eq!(a.config, b.config);
    assert_eq!(a.kernel, b.kernel);
    assert_eq!(a.hypers, b.hypers);
    assert_eq!(a.features, b.features);
    assert_eq!(a.topic_word, b.topic_word);
    assert_eq!(a.responsibilities, b.responsibilities);
    assert_eq!(a.doc_words, b.doc_words);
    assert_eq!(a.messages, b.messages);
    assert_eq!(a.doc_beliefs, b.doc_beliefs);
    assert_eq!(a.sweep_index, b.sweep_index);
    assert_eq!(a.perplexity_trace, b.perplexity_trace);
    assert_eq!(a.optimization_reports, b.optimization_reports);
}

#[test]
fn round_trip_preserves_state_and_predictions() {
    let state = trained(6);
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("model");
    engine::save(&state, &path).unwrap();
    let loaded = engine::load(&path).unwrap();
    assert_same(&state, &loaded);
    for t in [-2.0, 0.5, 4.0, 9.5] {
        let q = FeaturePoint::Euclidean { values: vec![t], author: None };
        assert_eq!(state.predict_topics(&q).unwrap(), loaded.predict_topics(&q).unwrap());
    }
    // Saving the loaded model reproduces the files byte for byte.
    let again = dir.path().join("again");
    engine::save(&loaded, &again).unwrap();
    for entry in fs::read_dir(&path).unwrap() {
        let name = entry.unwrap().file_name();
        assert_eq!(fs::read(path.join(&name)).unwrap(), fs::read(again.join(&name)).unwrap(), "{name:?}");
    }
}

#[test]
fn training_resumes_identically_after_load() {
    let mut state = trained(5);
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("model");
    engine::save(&state, &path).unwrap();
    let mut loaded = engine::load(&path).unwrap();
    let corpus = engine::training_corpus(&state).unwrap();
    for _ in 0..2 {
        state.step(&corpus).unwrap();
        loaded.step(&corpus).unwrap();
    }
    assert_same(&state, &loaded);
}

#[test]
fn untrained_model_round_trips() {
    let state = trained(0);
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("m");
    engine::save(&state, &path).unwrap();
    assert_same(&state, &engine::load(&path).unwrap());
}

#[test]
fn manifest_records_seed_and_format() {
    let state = trained(2);
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("model");
    engine::save(&state, &path).unwrap();
    let m: serde_json::Value = serde_json::from_slice(&fs::read(path.join("manifest.json")).unwrap()).unwrap();
    assert_eq!(m["seed"], 7);
    assert_eq!(m["format"], engine::FORMAT_NAME);
    assert_eq!(m["version"], engine::FORMAT_VERSION);
    assert!(m["checksums"]["theta.csv"].as_str().unwrap().len() == 64);
}

#[test]
fn corrupted_or_truncated_files_are_rejected() {
    let state = trained(3);
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("model");
    engine::save(&state, &path).unwrap();

    let beliefs = path.join("beliefs.csv");
    let original = fs::read(&beliefs).unwrap();
    fs::write(&beliefs, &original[..original.len() / 2]).unwrap();
    assert!(matches!(engine::load(&path), Err(EngineError::Checksum(_))));

    let mut flipped = original.clone();
    let i = flipped.iter().rposition(|b| b.is_ascii_digit() && *b != b'9').unwrap();
    flipped[i] += 1;
    fs::write(&beliefs, &flipped).unwrap();
    assert!(matches!(engine::load(&path), Err(EngineError::Checksum(_))));

    fs::write(&beliefs, &original).unwrap();
    engine::load(&path).unwrap();

    fs::remove_file(path.join("messages.csv")).unwrap();
    assert!(engine::load(&path).is_err());

    fs::write(path.join("manifest.json"), b"{\"format\": ").unwrap();
    assert!(engine::load(&path).is_err());
}

#[test]
fn version_mismatch_is_rejected() {
    let state = trained(2);
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("model");
    engine::save(&state, &path).unwrap();
    let manifest = path.join("manifest.json");
    let mut m: serde_json::Value = serde_json::from_slice(&fs::read(&manifest).unwrap()).unwrap();
    m["version"] = (engine::FORMAT_VERSION + 1).into();
    fs::write(&manifest, serde_json::to_vec(&m).unwrap()).unwrap();
    assert!(matches!(engine::load(&path), Err(EngineError::Version { .. })));
}

#[test]
fn refuses_to_overwrite_foreign_directory() {
    let state = trained(1);
    let dir = tempfile::tempdir().unwrap();
    fs::write(dir.path().join("notes.txt"), b"keep").unwrap();
    assert!(engine::save(&state, dir.path()).is_err());
    assert_eq!(fs::read(dir.path().join("notes.txt")).unwrap(), b"keep");
}

#[test]
fn graph_model_round_trips() {
    let s = synthetic::generate(&SyntheticConfig { docs: 24, ..Default::default() });
    let names: Vec<String> = ["a", "b", "c", "d", "e"].iter().map(|s| s.to_string()).collect();
    let e = kernels::graph_embed(5, &[(0, 1), (1, 2), (2, 3)]).unwrap();
    assert!(e.disconnected);
    let f = FeatureSpace::graph(names, e, (0..24).map(|d| d % 5).collect()).unwrap();
    let config = TrainConfig {
        topics: 3,
        max_sweeps: 4,
        hyperopt_every: 2,
        hyperopt_steps: 3,
        ..Default::default()
    };
    let state = engine::train(&s.corpus, Arc::new(f), &KernelSpec::default_graph(5), &config).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("graph");
    engine::save(&state, &path).unwrap();
    assert!(path.join("embedding.csv").exists());
    let loaded = engine::load(&path).unwrap();
    assert_same(&state, &loaded);
    for n in 0..5 {
        let q = FeaturePoint::Node(n);
        assert_eq!(state.predict_topics(&q).unwrap(), loaded.predict_topics(&q).unwrap());
    }
}
