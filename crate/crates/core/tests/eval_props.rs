use proptest::prelude::*;
use sambg_core::eval::{auc_midrank, compute_metrics, probe_train, HeldOut, MetricsReport, Metrics, Summary};
use sambg_core::rng::RngStream;
use sambg_core::tensor::Tensor;
use sambg_core::train::ExperimentConfig;

fn pairwise_auc(scores: &[f64], labels: &[u8]) -> f64 {
    let (mut wins, mut pairs) = (0.0, 0.0);
    for (i, &yi) in labels.iter().enumerate() {
        for (j, &yj) in labels.iter().enumerate() {
            if yi == 1 && yj == 0 {
                pairs += 1.0;
                wins += match scores[i].partial_cmp(&scores[j]).unwrap() {
                    std::cmp::Ordering::Greater => 1.0,
                    std::cmp::Ordering::Equal => 0.5,
                    std::cmp::Ordering::Less => 0.0,
                };
            }
        }
    }
    wins / pairs
}

fn tie_heavy() -> impl Strategy<Value = (Vec<f64>, Vec<u8>)> {
    (2usize..60, 1u32..6).prop_flat_map(|(n, levels)| {
        (
            prop::collection::vec((0..levels).prop_map(move |l| l as f64 / levels as f64), n),
            prop::collection::vec(0u8..2, n - 2),
        )
            .prop_map(|(s, mut y)| {
                y.push(0);
                y.push(1);
                (s, y)
            })
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn auc_equals_pairwise_oracle_exactly((scores, labels) in tie_heavy()) {
        prop_assert_eq!(auc_midrank(&scores, &labels).unwrap(), pairwise_auc(&scores, &labels));
    }

    #[test]
    fn metrics_stay_in_unit_interval((scores, labels) in tie_heavy(), t in 0.0f64..1.0) {
        let m = compute_metrics(&scores, &labels, t).unwrap();
        for v in [m.acc, m.auc, m.recall, m.f1] {
            prop_assert!((0.0..=1.0).contains(&v));
        }
    }
}

#[test]
fn single_class_auc_is_an_error() {
    assert_eq!(auc_midrank(&[0.1, 0.2], &[1, 1]).unwrap_err().kind(), "single_class");
}

#[test]
fn report_uses_sample_std_and_keeps_raw_order() {
    let runs: Vec<Metrics> = [0.5, 0.7, 0.9]
        .iter()
        .map(|&a| Metrics { acc: a, auc: a, recall: a, f1: a })
        .collect();
    let r = MetricsReport::from_runs("full", 3, &[0], &runs);
    assert_eq!(r.metrics.acc.raw, vec![0.5, 0.7, 0.9]);
    assert!((r.metrics.acc.mean - 0.7).abs() < 1e-15);
    assert!((r.metrics.acc.std - 0.2).abs() < 1e-12);
    let back = MetricsReport::from_json(&r.to_json().unwrap()).unwrap();
    assert_eq!(back, r);
    assert_eq!(Summary::from_values(vec![3.0]).std, 0.0);
}

#[test]
fn probe_on_shuffled_labels_is_near_chance() {
    let cfg = ExperimentConfig::default().probe;
    let mut accs = Vec::new();
    for seed in 0..10 {
        let mut rng = RngStream::new(seed);
        let x = Tensor::from_fn(200, 8, |_, _| rng.normal());
        let mut y: Vec<u8> = (0..200).map(|i| (i % 2) as u8).collect();
        rng.shuffle(&mut y);
        let (tr, va, te) = (0..120, 120..160, 160..200);
        let rows = |r: std::ops::Range<usize>| Tensor::from_fn(r.len(), 8, |i, j| x.get(r.start + i, j));
        let probe = probe_train(&rows(tr.clone()), &y[tr], &rows(va.clone()), &y[va], &cfg).unwrap();
        let held = HeldOut::new(rows(te.clone()), y[te].to_vec()).unwrap();
        let p = probe.predict(held.embeddings()).unwrap();
        accs.push(held.evaluate(&p, cfg.threshold).unwrap().acc);
    }
    let mean = accs.iter().sum::<f64>() / accs.len() as f64;
    assert!((mean - 0.5).abs() <= 0.1, "mean accuracy {mean} on shuffled labels");
}

#[test]
fn probe_separates_separable_classes() {
    let cfg = ExperimentConfig::default().probe;
    let mut rng = RngStream::new(3);
    let y: Vec<u8> = (0..80).map(|i| (i % 2) as u8).collect();
    let x = Tensor::from_fn(80, 3, |i, _| rng.normal() * 0.3 + if y[i] == 1 { 2.0 } else { -2.0 });
    let probe = probe_train(&x, &y, &x, &y, &cfg).unwrap();
    let held = HeldOut::new(x.clone(), y.clone()).unwrap();
    let m = held.evaluate(&probe.predict(&x).unwrap(), 0.5).unwrap();
    assert_eq!(m.acc, 1.0);
}
