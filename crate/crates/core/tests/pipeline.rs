//! Whole-library runs: synthetic data, label noise, filtered training and
//! evaluation through the public API only.

use prism_core::dataeval::{generate_synthetic, precision_at_1, NoiseIdCounter, SyntheticSpec};
use prism_core::model::Layout;
use prism_core::noise::{NoiseModel, NoiseSpec};
use prism_core::numkit::normalize_rows;
use prism_core::prism::{Scoring, ThresholdMode};
use prism_core::train::{LossKind, SoftTripleConfig, Trainer, TrainerConfig};

fn config(loss: LossKind, scoring: Scoring) -> TrainerConfig {
    TrainerConfig {
        layout: Layout::linear(12, 8),
        loss,
        contrastive_margin: 0.5,
        soft_triple: SoftTripleConfig {
            proxies_per_class: 2,
            ..SoftTripleConfig::default()
        },
        scoring,
        threshold_mode: ThresholdMode::Strm,
        filter_rate: 0.25,
        window: 5,
        p: 4,
        k: 8,
        bank_capacity: 400,
        base_lr: 1e-3,
        min_lr: 0.0,
        weight_decay: 1e-4,
        momentum: 0.0,
        total_iters: 300,
        seed: 9,
    }
}

fn data() -> (prism_core::dataeval::Dataset, prism_core::dataeval::Dataset) {
    let mut spec = SyntheticSpec::new(40, 20, 12, 1.0, 0.2, 4);
    spec.nuisance_dims = 4;
    spec.nuisance_std = 0.6;
    generate_synthetic(&spec).unwrap().split_by_class(20).unwrap()
}

#[test]
fn filtered_training_flags_noise_and_learns() {
    let (train, test) = data();
    let unit = normalize_rows(&train.features).unwrap();
    let noisy = NoiseSpec::new(NoiseModel::SmallCluster, 0.25, 2, 1)
        .unwrap()
        .apply(&unit, &train.labels, train.num_classes)
        .unwrap();
    let cfg = config(LossKind::MemoryContrastive, Scoring::Centers);
    let mut trainer = Trainer::new(cfg.clone(), &noisy.labels, train.num_classes).unwrap();
    let before = precision_at_1(&trainer.embed(&test.features).unwrap(), &test.labels).unwrap();
    let mut counter = NoiseIdCounter::default();
    for _ in 0..cfg.total_iters {
        let rep = trainer.step(&train.features, &noisy.labels).unwrap();
        for &i in &rep.partition.noisy {
            counter.record(true, noisy.corrupted_mask[rep.batch[i]]);
        }
        for &i in &rep.partition.clean {
            counter.record(false, noisy.corrupted_mask[rep.batch[i]]);
        }
    }
    let after = precision_at_1(&trainer.embed(&test.features).unwrap(), &test.labels).unwrap();
    assert!(after > before + 0.1, "{before} -> {after}");
    let m = counter.metrics();
    // a random filter at the same rate would sit near the 25% base rate
    assert!(m.precision > 0.5, "{m:?}");
    assert!(m.recall > 0.5, "{m:?}");
    assert_eq!(trainer.bank().len(), trainer.bank().capacity());
}

#[test]
fn every_loss_trains_end_to_end() {
    let (train, test) = data();
    for loss in [LossKind::Contrastive, LossKind::MemoryContrastive, LossKind::SoftTriple] {
        let mut cfg = config(loss, Scoring::Full);
        cfg.total_iters = 150;
        if loss == LossKind::SoftTriple {
            cfg.base_lr = 1e-2;
        }
        let mut trainer = Trainer::new(cfg.clone(), &train.labels, train.num_classes).unwrap();
        let before = precision_at_1(&trainer.embed(&test.features).unwrap(), &test.labels).unwrap();
        for _ in 0..cfg.total_iters {
            trainer.step(&train.features, &train.labels).unwrap();
        }
        let after = precision_at_1(&trainer.embed(&test.features).unwrap(), &test.labels).unwrap();
        assert!(after > before, "{loss:?}: {before} -> {after}");
        assert_eq!(trainer.proxies().is_some(), loss == LossKind::SoftTriple);
    }
}

#[test]
fn identical_configs_replay_bitwise() {
    let (train, _) = data();
    let cfg = config(LossKind::MemoryContrastive, Scoring::Centers);
    let run = || {
        let mut t = Trainer::new(cfg.clone(), &train.labels, train.num_classes).unwrap();
        for _ in 0..40 {
            t.step(&train.features, &train.labels).unwrap();
        }
        t.net().clone()
    };
    assert_eq!(run(), run());
}
