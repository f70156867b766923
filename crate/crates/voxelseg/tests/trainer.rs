use std::path::Path;

use voxelseg::config::{AugmentMode, TrainConfig};
use voxelseg::source::InMemory;
use voxelseg::trainer::{train, validate, StopReason, TrainOutcome, TrainSetup, BEST_CHECKPOINT};
use voxelseg_core::data::{ellipsoid_phantom, PhantomSpec, ScanRecord};
use voxelseg_core::loss::LossParams;
use voxelseg_core::net::NetworkConfig;
use voxelseg_core::optim::OptimizerConfig;
use voxelseg_core::Mask;

fn phantoms(n: usize, seed: u64) -> Vec<ScanRecord> {
    (0..n).map(|i| ellipsoid_phantom(&PhantomSpec::default(), i, seed)).collect()
}

fn config(max_epochs: usize, patience: usize) -> TrainConfig {
    TrainConfig {
        optimizer: OptimizerConfig::adam(1e-3),
        max_epochs,
        patience,
        batch_size: 2,
        augment: AugmentMode::None,
        streaming: false,
        target_dice: None,
    }
}

fn run(cfg: &TrainConfig, train_set: &[ScanRecord], val: &[ScanRecord], dir: &Path, resume: bool) -> TrainOutcome<f64> {
    let net = NetworkConfig::toy();
    let setup = TrainSetup {
        network: &net,
        train: cfg,
        loss: &LossParams::default(),
        seed: 11,
        output_dir: dir,
        resume,
    };
    train::<f64>(&setup, &InMemory::new(train_set.to_vec()), &InMemory::new(val.to_vec()), &mut |_| {}).unwrap()
}

fn inverted(scans: &[ScanRecord]) -> Vec<ScanRecord> {
    scans
        .iter()
        .map(|s| {
            let flipped = s.mask.data().iter().map(|&v| 1 - v).collect();
            let mut s = s.clone();
            s.mask = Mask::new(s.mask.shape(), flipped).unwrap();
            s
        })
        .collect()
}

#[test]
fn patience_one_stops_after_two_epochs_with_first_checkpoint() {
    let dir = tempfile::tempdir().unwrap();
    let scans = phantoms(2, 3);
    // learning the training labels makes the inverted labels ever less likely
    let out = run(&config(10, 1), &scans, &inverted(&scans), dir.path(), false);
    assert_eq!(out.stop, StopReason::Patience);
    assert_eq!(out.log.records.len(), 2);
    assert!(out.log.records[1].val_loss > out.log.records[0].val_loss);
    assert_eq!(out.log.best_epoch, Some(1));
    let best = std::fs::read(dir.path().join(BEST_CHECKPOINT)).unwrap();
    let first = std::fs::read(dir.path().join(&out.log.records[0].checkpoint)).unwrap();
    assert_eq!(best, first);
    assert_eq!(voxelseg::format::checkpoint::encode_checkpoint(&out.best), first);
}

#[test]
fn best_checkpoint_is_never_beaten_later() {
    let dir = tempfile::tempdir().unwrap();
    let scans = phantoms(2, 4);
    let out = run(&config(6, 2), &scans, &scans[..1], dir.path(), false);
    let best = out.log.best().unwrap();
    for r in &out.log.records {
        assert!(best.val_loss <= r.val_loss, "epoch {} beats best", r.epoch);
    }
    assert!(out.log.records.windows(2).all(|w| w[1].epoch == w[0].epoch + 1));
}

#[test]
fn resumed_run_equals_uninterrupted_run() {
    let scans = phantoms(2, 5);
    let whole = tempfile::tempdir().unwrap();
    let full = run(&config(4, 10), &scans, &scans[..1], whole.path(), false);

    let split = tempfile::tempdir().unwrap();
    let first = run(&config(2, 10), &scans, &scans[..1], split.path(), false);
    assert_eq!(first.log.records.len(), 2);
    let resumed = run(&config(4, 10), &scans, &scans[..1], split.path(), true);

    assert_eq!(resumed.log.to_tsv_untimed(), full.log.to_tsv_untimed());
    assert_eq!(resumed.best.entries(), full.best.entries());
    for name in ["best.ckpt", "checkpoints/epoch_0004.ckpt"] {
        assert_eq!(
            std::fs::read(whole.path().join(name)).unwrap(),
            std::fs::read(split.path().join(name)).unwrap(),
            "{name}"
        );
    }
}

#[test]
fn results_do_not_depend_on_thread_count() {
    let scans = phantoms(2, 6);
    let cfg = TrainConfig {
        batch_size: 4,
        ..config(2, 10)
    };
    let logs: Vec<String> = [1, 3]
        .iter()
        .map(|&threads| {
            let dir = tempfile::tempdir().unwrap();
            let pool = rayon::ThreadPoolBuilder::new().num_threads(threads).build().unwrap();
            let out = pool.install(|| run(&cfg, &scans, &scans[..1], dir.path(), false));
            out.log.to_tsv_untimed()
        })
        .collect();
    assert_eq!(logs[0], logs[1]);
}

#[test]
fn divergence_names_the_step() {
    let scans = phantoms(1, 7);
    let net = NetworkConfig::toy();
    let cfg = TrainConfig {
        optimizer: OptimizerConfig::sgd(1e300, 0.9),
        ..config(3, 3)
    };
    let dir = tempfile::tempdir().unwrap();
    let setup = TrainSetup {
        network: &net,
        train: &cfg,
        loss: &LossParams::default(),
        seed: 1,
        output_dir: dir.path(),
        resume: false,
    };
    let src = InMemory::new(scans);
    let err = train::<f64>(&setup, &src, &src, &mut |_| {}).err().expect("training diverges");
    let msg = format!("{err:#}");
    assert!(msg.contains("divergence at step"), "{msg}");
}

#[test]
fn validation_is_deterministic_and_needs_scans() {
    let params = voxelseg_core::net::NetworkParams::<f64>::build(&NetworkConfig::toy(), 2).unwrap();
    let src = InMemory::new(phantoms(2, 8));
    let a = validate(&params, &src, &LossParams::default()).unwrap();
    let b = validate(&params, &src, &LossParams::default()).unwrap();
    assert_eq!(a.0.to_bits(), b.0.to_bits());
    assert_eq!(a.1.to_bits(), b.1.to_bits());
    let err = validate(&params, &InMemory::new(Vec::new()), &LossParams::default()).unwrap_err();
    assert!(err.to_string().contains("configuration error"), "{err}");
}

#[test]
fn target_dice_stops_early() {
    let dir = tempfile::tempdir().unwrap();
    let scans = phantoms(2, 9);
    let cfg = TrainConfig {
        target_dice: Some(0.0),
        ..config(50, 50)
    };
    let out = run(&cfg, &scans, &scans, dir.path(), false);
    assert_eq!(out.stop, StopReason::TargetDice);
    assert_eq!(out.log.records.len(), 1);
}
