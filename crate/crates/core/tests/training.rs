//! End-to-end behaviour of the training loops on tiny synthetic sets.

use endospec::dataset::{default_wavelengths, generate_synthetic_dataset, Sample, SyntheticConfig};
use endospec::models::{build_model1, ArchConfig, MODEL1_PREFIX};
use endospec::training::{run_loocv, train_model1, train_model2, transfer_matrix, CvConfig, TrainConfig};

fn arch() -> ArchConfig {
    ArchConfig::for_bands(3, default_wavelengths(), 8).unwrap()
}

fn data(n: usize, seed: u64) -> Vec<Sample> {
    generate_synthetic_dataset(n, (12, 12), seed, &SyntheticConfig::default()).unwrap()
}

fn quick() -> TrainConfig {
    TrainConfig {
        lr: 3e-3,
        batch_size: 64,
        max_epochs: 4,
        stage_a_epochs: Some(3),
        stage_b_epochs: Some(3),
        pixels_per_epoch: Some(512),
        monitor_pixels: Some(512),
        ..Default::default()
    }
}

#[test]
fn model1_is_deterministic_and_finite() {
    let d = data(2, 1);
    let run = || train_model1(&d, build_model1(&arch(), 5).unwrap(), &quick()).unwrap();
    let (a, b) = (run(), run());
    assert_eq!(a.params, b.params);
    assert!(a.log.rows.iter().all(|r| r.loss.is_finite()));
    assert!(a.final_loss <= a.log.rows[0].loss);
}

#[test]
fn stage_a_keeps_core_and_stage_b_does_not_lose_ground() {
    let d = data(3, 2);
    let m1 = train_model1(&d, build_model1(&arch(), 1).unwrap(), &quick()).unwrap().params;
    let cfg = TrainConfig {
        stage_b_epochs: Some(0),
        ..quick()
    };
    let only_a = train_model2(&d, &m1, &cfg).unwrap();
    for e in m1.entries() {
        assert!(e.name.starts_with(MODEL1_PREFIX));
        assert_eq!(only_a.params.entry(&e.name).unwrap().tensor, e.tensor, "{}", e.name);
    }
    let full = train_model2(&d, &m1, &quick()).unwrap();
    assert!(full.stage_b.final_loss <= full.stage_a.final_loss);
}

#[test]
fn folds_partition_the_stacks() {
    let d = data(5, 3);
    let cfg = TrainConfig {
        max_epochs: 1,
        stage_a_epochs: Some(1),
        stage_b_epochs: Some(1),
        ..quick()
    };
    let cv = CvConfig { k: 5, ..Default::default() };
    let report = run_loocv(&d, &arch(), &cfg, &cv).unwrap();
    assert_eq!(report.folds.len(), 5);
    let mut seen: Vec<String> = report.folds.iter().flat_map(|f| f.test_ids.clone()).collect();
    seen.sort();
    let mut all: Vec<String> = d.iter().map(|s| s.id.clone()).collect();
    all.sort();
    assert_eq!(seen, all);
    for f in &report.folds {
        assert!(f.test_ids.iter().all(|t| !f.train_ids.contains(t)));
        assert!(f.model2.is_some());
    }
}

#[test]
fn transfer_table_is_square() {
    let species = |lib: u64| {
        let cfg = SyntheticConfig {
            library_seed: lib,
            ..Default::default()
        };
        generate_synthetic_dataset(2, (8, 8), lib, &cfg).unwrap()
    };
    let named = vec![("a".to_string(), species(1)), ("b".to_string(), species(2))];
    let cfg = TrainConfig {
        max_epochs: 1,
        stage_a_epochs: Some(1),
        stage_b_epochs: Some(1),
        ..quick()
    };
    let cv = CvConfig { k: 2, ..Default::default() };
    let t = transfer_matrix(&named, &arch(), &cfg, &cv).unwrap();
    assert_eq!(t.sources, ["a", "b"]);
    for table in [&t.model1, &t.model2] {
        assert_eq!(table.len(), 2);
        assert!(table.iter().all(|row| row.len() == 2 && row.iter().all(|c| c.is_some())));
    }
}
