use super::Tensor;
use crate::error::{Error, Result};

const SYMMETRY_TOL: f64 = 1e-10;
const OFF_DIAGONAL_TOL: f64 = 1e-12;
const MAX_SWEEPS: usize = 100;

/// Eigen-decomposition of a symmetric matrix; column `k` of `vectors`
/// belongs to `values[k]`, values ascending.
#[derive(Clone, Debug)]
pub struct SymEigen {
    pub values: Vec<f64>,
    pub vectors: Tensor,
}

/// Eigenvalues of a symmetric matrix in ascending order.
pub fn sym_eigenvalues(m: &Tensor) -> Result<Vec<f64>> {
    Ok(sym_eigen(m)?.values)
}

/// Cyclic Jacobi rotations until the off-diagonal Frobenius norm drops
/// below `1e-12` (relative to the matrix norm when that exceeds one).
pub fn sym_eigen(m: &Tensor) -> Result<SymEigen> {
    let (n, c) = m.dims();
    if n != c {
        return Err(Error::Shape {
            op: "sym_eigen",
            lhs: vec![n, c],
            rhs: vec![c, n],
        });
    }
    if !m.is_symmetric(SYMMETRY_TOL) {
        return Err(Error::Contract(
            "sym_eigen requires a symmetric matrix".into(),
        ));
    }
    let mut a: Vec<f64> = m.data().to_vec();
    // symmetrize exactly so rotations see a consistent matrix
    for i in 0..n {
        for j in i + 1..n {
            let v = 0.5 * (a[i * n + j] + a[j * n + i]);
            a[i * n + j] = v;
            a[j * n + i] = v;
        }
    }
    let mut v = Tensor::eye(n).into_data();
    let threshold = OFF_DIAGONAL_TOL * m.frobenius_sq().sqrt().max(1.0);

    for _ in 0..MAX_SWEEPS {
        let off: f64 = (0..n)
            .flat_map(|i| (0..n).filter(move |&j| j != i).map(move |j| (i, j)))
            .map(|(i, j)| a[i * n + j] * a[i * n + j])
            .sum::<f64>()
            .sqrt();
        if off < threshold {
            break;
        }
        for p in 0..n {
            for q in p + 1..n {
                let apq = a[p * n + q];
                if apq == 0.0 {
                    continue;
                }
                let app = a[p * n + p];
                let aqq = a[q * n + q];
                let theta = (aqq - app) / (2.0 * apq);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let t = if theta == 0.0 { 1.0 } else { t };
                let cos = 1.0 / (t * t + 1.0).sqrt();
                let sin = t * cos;
                for k in 0..n {
                    let akp = a[k * n + p];
                    let akq = a[k * n + q];
                    a[k * n + p] = cos * akp - sin * akq;
                    a[k * n + q] = sin * akp + cos * akq;
                }
                for k in 0..n {
                    let apk = a[p * n + k];
                    let aqk = a[q * n + k];
                    a[p * n + k] = cos * apk - sin * aqk;
                    a[q * n + k] = sin * apk + cos * aqk;
                }
                for k in 0..n {
                    let vkp = v[k * n + p];
                    let vkq = v[k * n + q];
                    v[k * n + p] = cos * vkp - sin * vkq;
                    v[k * n + q] = sin * vkp + cos * vkq;
                }
            }
        }
    }

    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| a[i * n + i].total_cmp(&a[j * n + j]));
    let values = order.iter().map(|&i| a[i * n + i]).collect();
    let vectors = Tensor::from_fn(n, n, |r, k| v[r * n + order[k]]);
    Ok(SymEigen { values, vectors })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn diagonal_matrix() {
        let m = Tensor::from_fn(3, 3, |i, j| if i == j { [3.0, 1.0, 2.0][i] } else { 0.0 });
        assert_eq!(sym_eigenvalues(&m).unwrap(), vec![1.0, 2.0, 3.0]);
    }

    #[test]
    fn half_ones_rank_one() {
        let m = Tensor::full(2, 2, 0.5);
        let ev = sym_eigenvalues(&m).unwrap();
        assert!(ev[0].abs() < 1e-15);
        assert!((ev[1] - 1.0).abs() < 1e-15);
    }

    #[test]
    fn asymmetric_is_rejected() {
        let m = Tensor::new(vec![2, 2], vec![1.0, 2.0, 0.0, 1.0]).unwrap();
        assert!(matches!(sym_eigen(&m), Err(Error::Contract(_))));
    }
}
