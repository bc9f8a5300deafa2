use proptest::prelude::*;
use sambg_core::tensor::{sym_eigen, Tape, Tensor};

fn matrix(max: usize) -> impl Strategy<Value = Tensor> {
    (1..=max, 1..=max).prop_flat_map(|(r, c)| {
        prop::collection::vec(-3.0f64..3.0, r * c).prop_map(move |d| Tensor::new(vec![r, c], d).unwrap())
    })
}

fn naive_matmul(a: &Tensor, b: &Tensor) -> Tensor {
    Tensor::from_fn(a.rows(), b.cols(), |i, j| (0..a.cols()).map(|k| a.get(i, k) * b.get(k, j)).sum())
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn matmul_matches_triple_loop((a, b) in (1..8usize, 1..8usize, 1..8usize).prop_flat_map(|(r, k, c)| (
        prop::collection::vec(-3.0f64..3.0, r * k).prop_map(move |d| Tensor::new(vec![r, k], d).unwrap()),
        prop::collection::vec(-3.0f64..3.0, k * c).prop_map(move |d| Tensor::new(vec![k, c], d).unwrap()),
    ))) {
        let got = a.matmul(&b).unwrap();
        prop_assert!(got.max_abs_diff(&naive_matmul(&a, &b)) < 1e-12);
    }

    #[test]
    fn transpose_is_an_involution(m in matrix(9)) {
        prop_assert_eq!(m.transpose().transpose(), m.clone());
        prop_assert_eq!(m.transpose().dims(), (m.cols(), m.rows()));
    }

    #[test]
    fn eigen_reconstructs_symmetric_matrices(m in matrix(10)) {
        let n = m.rows().min(m.cols());
        let s = Tensor::from_fn(n, n, |i, j| 0.5 * (m.get(i, j) + m.get(j, i)));
        let e = sym_eigen(&s).unwrap();
        let v = &e.vectors;
        let back = Tensor::from_fn(n, n, |i, j| (0..n).map(|k| v.get(i, k) * e.values[k] * v.get(j, k)).sum());
        prop_assert!(back.max_abs_diff(&s) < 1e-9);
        let gram = v.transpose().matmul(v).unwrap();
        prop_assert!(gram.max_abs_diff(&Tensor::eye(n)) < 1e-9);
        prop_assert!((e.values.iter().sum::<f64>() - s.trace()).abs() < 1e-9);
    }

    #[test]
    fn tape_forward_matches_direct_ops(m in matrix(6)) {
        let mut tape = Tape::new();
        let x = tape.constant(m.clone());
        let xt = tape.transpose(x);
        let p = tape.matmul(x, xt).unwrap();
        let direct = m.matmul(&m.transpose()).unwrap();
        prop_assert!(tape.value(p).max_abs_diff(&direct) < 1e-12);
        let f = tape.frob_sq(x);
        prop_assert!((tape.value(f).item() - m.frobenius_sq()).abs() < 1e-12);
    }
}

#[test]
fn mismatched_shapes_are_rejected() {
    let a = Tensor::zeros(2, 3);
    assert!(a.matmul(&Tensor::zeros(2, 3)).is_err());
    assert!(Tensor::new(vec![2, 2], vec![1.0; 3]).is_err());
}
