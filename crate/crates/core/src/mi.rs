//! Matrix-based Rényi α-order entropy and mutual information over a batch
//! of embeddings.
//!
//! Each batch `Z (B×D)` is turned into a Gaussian Gram matrix, normalized to
//! unit trace, and its entropy is read off the eigenvalue spectrum:
//! `S_α(A) = log2(Σ λ_i^α) / (1 − α)`. For `α = 2` the sum of squared
//! eigenvalues equals the squared Frobenius norm, so no eigendecomposition is
//! needed. Joint entropy uses the trace-normalized Hadamard product of the two
//! Grams. All entropies are in bits.

use log::warn;

use crate::error::{Error, Result};
use crate::tensor::{Tape, Tensor, Var};

/// Gram matrix together with the bandwidth that produced it.
#[derive(Clone, Debug, PartialEq)]
pub struct GramMatrix {
    pub values: Tensor,
    pub sigma: f64,
}

fn check_sigma(sigma: f64) -> Result<()> {
    if sigma > 0.0 && sigma.is_finite() {
        Ok(())
    } else {
        Err(Error::Config(format!("kernel bandwidth {sigma} must be positive")))
    }
}

/// `G_ij = exp(−||z_i − z_j||² / (2σ²))`.
pub fn gaussian_gram(z: &Tensor, sigma: f64) -> Result<GramMatrix> {
    let mut tape = Tape::new();
    let zv = tape.constant(z.clone());
    let g = gaussian_gram_on_tape(&mut tape, zv, sigma)?;
    Ok(GramMatrix {
        values: tape.value(g).clone(),
        sigma,
    })
}

pub fn gaussian_gram_on_tape(tape: &mut Tape, z: Var, sigma: f64) -> Result<Var> {
    check_sigma(sigma)?;
    if tape.value(z).rows() < 2 {
        return Err(Error::Contract("Gram matrix needs a batch of at least 2".into()));
    }
    let d = tape.sq_dists(z);
    let s = tape.scale(d, -1.0 / (2.0 * sigma * sigma));
    tape.exp(s)
}

/// Median of the nonzero pairwise distances between rows; `1.0` (with a
/// warning) when every row coincides. Treated as a constant by callers.
pub fn median_bandwidth(z: &Tensor) -> Result<f64> {
    let b = z.rows();
    if b < 2 {
        return Err(Error::Contract("bandwidth needs a batch of at least 2".into()));
    }
    let mut dists: Vec<f64> = (0..b)
        .flat_map(|i| (i + 1..b).map(move |j| (i, j)))
        .map(|(i, j)| {
            z.row(i)
                .iter()
                .zip(z.row(j))
                .map(|(a, c)| (a - c) * (a - c))
                .sum::<f64>()
                .sqrt()
        })
        .filter(|&d| d > 0.0)
        .collect();
    if dists.is_empty() {
        warn!("all embeddings coincide; falling back to bandwidth 1.0");
        return Ok(1.0);
    }
    dists.sort_by(f64::total_cmp);
    let m = dists.len();
    Ok(if m % 2 == 1 {
        dists[m / 2]
    } else {
        0.5 * (dists[m / 2 - 1] + dists[m / 2])
    })
}

fn check_alpha(alpha: f64) -> Result<()> {
    if !(alpha > 0.0) || !alpha.is_finite() || alpha == 1.0 {
        Err(Error::UnsupportedOrder(alpha))
    } else {
        Ok(())
    }
}

/// `A / trace(A)`.
pub fn normalize_trace_on_tape(tape: &mut Tape, a: Var) -> Result<Var> {
    let t = tape.trace(a)?;
    tape.div_scalar_var(a, t)
}

/// Rényi entropy (bits) of a trace-normalized PSD matrix.
pub fn renyi_entropy_on_tape(tape: &mut Tape, a_norm: Var, alpha: f64) -> Result<Var> {
    check_alpha(alpha)?;
    let inv_ln2 = 1.0 / std::f64::consts::LN_2;
    if alpha == 2.0 {
        let f = tape.frob_sq(a_norm);
        let l = tape.log(f)?;
        return Ok(tape.scale(l, -inv_ln2));
    }
    let ev = tape.sym_eigvals(a_norm)?;
    let ev = tape.relu(ev);
    let pw = tape.pow(ev, alpha)?;
    let s = tape.sum(pw);
    let l = tape.log(s)?;
    Ok(tape.scale(l, inv_ln2 / (1.0 - alpha)))
}

pub fn renyi_entropy(a_norm: &Tensor, alpha: f64) -> Result<f64> {
    let mut tape = Tape::new();
    let a = tape.constant(a_norm.clone());
    let s = renyi_entropy_on_tape(&mut tape, a, alpha)?;
    Ok(tape.value(s).item())
}

/// Entropy through the eigenvalue formula regardless of `alpha`.
pub fn renyi_entropy_spectral(a_norm: &Tensor, alpha: f64) -> Result<f64> {
    check_alpha(alpha)?;
    let ev = crate::tensor::sym_eigenvalues(a_norm)?;
    let s: f64 = ev.iter().map(|l| l.max(0.0).powf(alpha)).sum();
    Ok(s.log2() / (1.0 - alpha))
}

/// Marginal and joint entropies making up one mutual-information estimate.
#[derive(Clone, Copy, Debug)]
pub struct MiTerms {
    pub mi: Var,
    pub entropy_x: Var,
    pub entropy_y: Var,
    pub joint: Var,
}

/// `I(X;Y) = S(Ax) + S(Ay) − S(Ax∘Ay / tr(Ax∘Ay))` with median-heuristic
/// bandwidths computed from the current values and held constant.
pub fn mutual_information_on_tape(tape: &mut Tape, zx: Var, zy: Var, alpha: f64) -> Result<MiTerms> {
    mutual_information_with_bandwidth(tape, zx, zy, alpha, None)
}

/// As [`mutual_information_on_tape`], optionally with fixed bandwidths `(σx, σy)`.
pub fn mutual_information_with_bandwidth(
    tape: &mut Tape,
    zx: Var,
    zy: Var,
    alpha: f64,
    bandwidths: Option<(f64, f64)>,
) -> Result<MiTerms> {
    let (bx, by) = (tape.value(zx).rows(), tape.value(zy).rows());
    if bx != by {
        return Err(Error::Contract(format!(
            "mutual information over batches of {bx} and {by}"
        )));
    }
    check_alpha(alpha)?;
    let (sx, sy) = match bandwidths {
        Some(b) => b,
        None => (median_bandwidth(tape.value(zx))?, median_bandwidth(tape.value(zy))?),
    };
    let gx = gaussian_gram_on_tape(tape, zx, sx)?;
    let gy = gaussian_gram_on_tape(tape, zy, sy)?;
    let ax = normalize_trace_on_tape(tape, gx)?;
    let ay = normalize_trace_on_tape(tape, gy)?;
    let hx = renyi_entropy_on_tape(tape, ax, alpha)?;
    let hy = renyi_entropy_on_tape(tape, ay, alpha)?;
    let prod = tape.mul(ax, ay)?;
    let axy = normalize_trace_on_tape(tape, prod)?;
    let hxy = renyi_entropy_on_tape(tape, axy, alpha)?;
    let marg = tape.add(hx, hy)?;
    let mi = tape.sub(marg, hxy)?;
    Ok(MiTerms {
        mi,
        entropy_x: hx,
        entropy_y: hy,
        joint: hxy,
    })
}

/// Mutual information value in bits; round-off negatives down to `-1e-8`
/// are clamped to zero.
pub fn mutual_information(zx: &Tensor, zy: &Tensor, alpha: f64) -> Result<f64> {
    let mut tape = Tape::new();
    let x = tape.constant(zx.clone());
    let y = tape.constant(zy.clone());
    let terms = mutual_information_on_tape(&mut tape, x, y, alpha)?;
    let v = tape.value(terms.mi).item();
    if v < 0.0 && v >= -1e-8 {
        warn!("clamping mutual information {v:e} to zero");
        return Ok(0.0);
    }
    Ok(v)
}

/// Marginal entropy (bits) of one batch under its median bandwidth.
pub fn batch_entropy(z: &Tensor, alpha: f64) -> Result<f64> {
    let g = gaussian_gram(z, median_bandwidth(z)?)?;
    let b = g.values.rows() as f64;
    renyi_entropy(&g.values.map(|v| v / b), alpha)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::RngStream;

    #[test]
    fn identical_rows_give_all_ones() {
        let z = Tensor::from_fn(4, 3, |_, j| j as f64);
        let g = gaussian_gram(&z, 0.7).unwrap();
        assert_eq!(g.values, Tensor::full(4, 4, 1.0));
    }

    #[test]
    fn huge_bandwidth_tends_to_ones() {
        let mut rng = RngStream::new(1);
        let z = Tensor::from_fn(5, 2, |_, _| rng.normal());
        let g = gaussian_gram(&z, 1e6).unwrap();
        assert!(g.values.max_abs_diff(&Tensor::full(5, 5, 1.0)) < 1e-10);
    }

    #[test]
    fn nonpositive_bandwidth_is_config_error() {
        let z = Tensor::zeros(3, 2);
        assert!(matches!(gaussian_gram(&z, 0.0), Err(Error::Config(_))));
    }

    #[test]
    fn median_bandwidth_cases() {
        let two = Tensor::new(vec![2, 1], vec![0.0, 2.0]).unwrap();
        assert_eq!(median_bandwidth(&two).unwrap(), 2.0);
        let three = Tensor::new(vec![3, 1], vec![0.0, 1.0, 2.0]).unwrap();
        assert_eq!(median_bandwidth(&three).unwrap(), 1.0);
        let same = Tensor::full(4, 2, 3.0);
        assert_eq!(median_bandwidth(&same).unwrap(), 1.0);
    }

    #[test]
    fn uniform_spectrum_entropy() {
        for alpha in [0.5, 1.01, 2.0, 3.0] {
            let a = Tensor::eye(4).map(|v| v / 4.0);
            assert!((renyi_entropy(&a, alpha).unwrap() - 2.0).abs() < 1e-12);
        }
    }

    #[test]
    fn rank_one_entropy_is_zero() {
        let a = Tensor::full(5, 5, 0.2);
        assert!(renyi_entropy(&a, 2.0).unwrap().abs() < 1e-12);
        assert!(renyi_entropy(&a, 1.5).unwrap().abs() < 1e-9);
    }

    #[test]
    fn shannon_order_unsupported() {
        let a = Tensor::eye(2).map(|v| v / 2.0);
        assert!(matches!(renyi_entropy(&a, 1.0), Err(Error::UnsupportedOrder(_))));
    }

    #[test]
    fn batch_mismatch_is_contract_error() {
        let x = Tensor::zeros(4, 2);
        let y = Tensor::zeros(5, 2);
        assert!(matches!(
            mutual_information(&x, &y, 2.0),
            Err(Error::Contract(_))
        ));
    }
}
