use proptest::prelude::*;
use sambg_core::mi::{
    batch_entropy, gaussian_gram, median_bandwidth, mutual_information, renyi_entropy, renyi_entropy_spectral,
};
use sambg_core::rng::RngStream;
use sambg_core::tensor::Tensor;

fn batch(seed: u64, b: usize, d: usize) -> Tensor {
    let mut rng = RngStream::new(seed);
    Tensor::from_fn(b, d, |_, _| rng.normal())
}

fn normalized_gram(z: &Tensor) -> Tensor {
    let g = gaussian_gram(z, median_bandwidth(z).unwrap()).unwrap().values;
    let t = g.trace();
    g.map(|v| v / t)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(50))]

    #[test]
    fn frobenius_shortcut_matches_spectrum(seed in 0u64..10_000, b in 2usize..=32, d in 1usize..6) {
        let a = normalized_gram(&batch(seed, b, d));
        let diff = (renyi_entropy(&a, 2.0).unwrap() - renyi_entropy_spectral(&a, 2.0).unwrap()).abs();
        prop_assert!(diff < 1e-10, "diff {}", diff);
    }

    #[test]
    fn entropy_is_bounded_by_log_batch(seed in 0u64..10_000, b in 2usize..=24, alpha in prop::sample::select(vec![0.5, 2.0, 3.0])) {
        let a = normalized_gram(&batch(seed, b, 3));
        let s = renyi_entropy(&a, alpha).unwrap();
        prop_assert!(s >= -1e-9 && s <= (b as f64).log2() + 1e-9);
    }

    #[test]
    fn mi_is_symmetric_and_nonnegative(seed in 0u64..10_000, b in 8usize..=32) {
        let x = batch(seed, b, 4);
        let y = batch(seed + 50_000, b, 3);
        let xy = mutual_information(&x, &y, 2.0).unwrap();
        let yx = mutual_information(&y, &x, 2.0).unwrap();
        prop_assert_eq!(xy, yx);
        prop_assert!(xy >= -1e-8);
        // self-information equals the marginal entropy up to the joint term
        prop_assert!(mutual_information(&x, &x, 2.0).unwrap() <= batch_entropy(&x, 2.0).unwrap() + 1e-9);
    }
}

#[test]
fn uniform_spectrum_gives_log_batch_size() {
    for b in [2usize, 4, 8, 16] {
        let a = Tensor::eye(b).map(|v| v / b as f64);
        for alpha in [0.5, 2.0, 3.0] {
            assert!((renyi_entropy(&a, alpha).unwrap() - (b as f64).log2()).abs() < 1e-12);
        }
    }
}

#[test]
fn dependence_raises_mi_over_independent_batches() {
    let (mut ind, mut same, mut h) = (0.0, 0.0, f64::INFINITY);
    for seed in 0..20 {
        let x = batch(seed, 32, 4);
        let y = batch(seed + 777, 32, 4);
        ind += mutual_information(&x, &y, 2.0).unwrap() / 20.0;
        same += mutual_information(&x, &x, 2.0).unwrap() / 20.0;
        h = h.min(batch_entropy(&x, 2.0).unwrap()).min(batch_entropy(&y, 2.0).unwrap());
    }
    assert!(ind < 0.15 * h, "independent {ind} vs entropy {h}");
    assert!(same >= 2.0 * ind);
}

#[test]
fn order_one_is_rejected() {
    let a = normalized_gram(&batch(0, 4, 2));
    assert_eq!(renyi_entropy(&a, 1.0).unwrap_err().kind(), "unsupported_order");
}
