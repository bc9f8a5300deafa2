use std::time::{Duration, Instant};

use sambg_core::eval::{load_dataset, run_cv, run_fold, run_pretrain, run_ssl, RunContext, Variant};
use sambg_core::gradsuite::{grad_check_suite, straight_through_identity};
use sambg_core::train::{ExperimentConfig, ModelState, Phase, Stage, TrainLog};

fn small() -> ExperimentConfig {
    let mut cfg = ExperimentConfig::default();
    cfg.seeds = vec![1, 2];
    cfg.folds = 2;
    cfg.data.synth.n_subjects = 48;
    cfg.pretrain.optim.epochs = 4;
    cfg.ssl.optim.epochs = 6;
    cfg.probe.epochs = 40;
    cfg
}

#[test]
fn cross_validation_is_bit_reproducible() {
    let cfg = small();
    let ds = load_dataset(&cfg).unwrap();
    for v in [Variant::Full, Variant::Vanilla, Variant::Only] {
        let a = run_cv(&ds, &cfg, v).unwrap();
        let b = run_cv(&load_dataset(&cfg).unwrap(), &cfg, v).unwrap();
        assert_eq!(a.to_json().unwrap(), b.to_json().unwrap());
        assert_eq!(a.metrics.acc.raw.len(), 4);
        assert_eq!(a.variant, v.as_str());
    }
}

#[test]
fn different_seeds_give_different_models() {
    let cfg = small();
    let ds = load_dataset(&cfg).unwrap();
    let a = run_fold(&RunContext::new(&ds, &cfg, Variant::Full, 1, 0).unwrap()).unwrap();
    let b = run_fold(&RunContext::new(&ds, &cfg, Variant::Full, 2, 0).unwrap()).unwrap();
    assert_ne!(a.state.encoder, b.state.encoder);
}

#[test]
fn self_supervision_freezes_masker_and_stays_finite() {
    let cfg = small();
    let ds = load_dataset(&cfg).unwrap();
    let ctx = RunContext::new(&ds, &cfg, Variant::Full, 1, 1).unwrap();
    let mut seen = Vec::new();
    let (pre, mut log) = run_pretrain(&ctx, &mut |s: &ModelState| {
        seen.push((s.stage, s.epoch));
        Ok(())
    })
    .unwrap();
    assert_eq!(seen, (1..=4).map(|e| (Stage::Pretrain, e)).collect::<Vec<_>>());
    let (post, ssl) = run_ssl(&ctx, &pre, &mut |s: &ModelState| {
        assert_eq!(s.masker, pre.masker);
        Ok(())
    })
    .unwrap();
    assert_eq!(post.masker, pre.masker);
    assert_ne!(post.encoder, pre.encoder);
    log.extend(ssl).unwrap();
    assert_eq!(log.phase(Phase::Pretrain).count(), 4);
    let losses: Vec<f64> = log.phase(Phase::Ssl).map(|r| r.total).collect();
    assert_eq!(losses.len(), 6);
    assert!(losses.last().unwrap() < &losses[0], "ssl loss {losses:?}");
    for r in &log.records {
        assert!([r.mi, r.ce, r.invariance, r.decorrelation, r.total].iter().all(|v| v.is_finite()));
    }
}

#[test]
fn only_variant_skips_self_supervision_and_vanilla_skips_masker() {
    let cfg = small();
    let ds = load_dataset(&cfg).unwrap();
    let only = run_fold(&RunContext::new(&ds, &cfg, Variant::Only, 1, 0).unwrap()).unwrap();
    assert_eq!(only.log.phase(Phase::Ssl).count(), 0);
    assert_eq!(only.state.stage, Stage::Pretrain);
    let vanilla = run_fold(&RunContext::new(&ds, &cfg, Variant::Vanilla, 1, 0).unwrap()).unwrap();
    assert!(vanilla.state.masker.is_none());
    assert_eq!(vanilla.log.phase(Phase::Pretrain).count(), 0);
}

#[test]
fn checkpoint_and_log_round_trip_bit_exactly() {
    let cfg = small();
    let ds = load_dataset(&cfg).unwrap();
    let out = run_fold(&RunContext::new(&ds, &cfg, Variant::Full, 2, 1).unwrap()).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("model.json");
    out.state.save(&path).unwrap();
    let back = ModelState::load(&path).unwrap();
    assert_eq!(back, out.state);
    assert_eq!(back.to_json().unwrap(), out.state.to_json().unwrap());
    let bits = |s: &ModelState| -> Vec<u64> {
        s.encoder.tensors().iter().flat_map(|t| t.data().iter().map(|v| v.to_bits())).collect()
    };
    assert_eq!(bits(&back), bits(&out.state));

    let log_path = dir.path().join("train_log.csv");
    out.log.write_csv(&log_path).unwrap();
    let header = std::fs::read_to_string(&log_path).unwrap();
    assert!(header.starts_with("epoch,phase,mi,ce,invariance,decorrelation,total"));
    let log = TrainLog::read_csv(&log_path).unwrap();
    assert_eq!(log, out.log);
}

#[test]
fn gradient_suite_passes_quickly() {
    let start = Instant::now();
    let checks = grad_check_suite(10, 3).unwrap();
    for c in &checks {
        assert!(c.passed(), "{} max rel error {:e}", c.name, c.max_rel_error);
    }
    assert_eq!(straight_through_identity(10, 3).unwrap(), 0.0);
    assert!(start.elapsed() < Duration::from_secs(60));
}
