use super::{Tape, Tensor, Var};
use crate::error::{Error, Result};

/// Outcome of comparing reverse-mode gradients with central differences.
#[derive(Clone, Debug, PartialEq)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    /// Components left out because the function has a kink within `eps`.
    pub skipped: usize,
    pub checked: usize,
}

/// Maximum over components of `|analytic − numeric|` relative to the gradient scale.
pub fn grad_check<F>(f: F, x: &Tensor, eps: f64) -> Result<f64>
where
    F: Fn(&mut Tape, Var) -> Result<Var>,
{
    Ok(grad_check_report(f, x, eps)?.max_rel_error)
}

/// Like [`grad_check`], with counts of checked and skipped components.
///
/// The numeric derivative is the fourth-order central stencil
/// `(8(f(x+e) − f(x−e)) − (f(x+2e) − f(x−2e))) / 12e`. Errors are relative to
/// the gradient's scale at the point, `max(‖analytic‖∞, ‖numeric‖∞)`, so
/// components many orders below it are not judged on round-off alone.
///
/// A component is skipped when the stencil straddles a kink (e.g. a relu
/// input within `2e` of zero): either the one-sided slopes at `±e` disagree by
/// more than `1e-3` relative, or the central differences at steps `e` and `2e`
/// disagree by more than `1e-6` of the scale.
pub fn grad_check_report<F>(f: F, x: &Tensor, eps: f64) -> Result<GradCheckReport>
where
    F: Fn(&mut Tape, Var) -> Result<Var>,
{
    let eval = |t: &Tensor| -> Result<f64> {
        let mut tape = Tape::new();
        let v = tape.constant(t.clone());
        let out = f(&mut tape, v)?;
        let value = tape.value(out);
        if value.numel() != 1 {
            return Err(Error::Contract("grad_check needs a scalar function".into()));
        }
        Ok(value.item())
    };

    let mut tape = Tape::new();
    let xv = tape.param(x.clone());
    let out = f(&mut tape, xv)?;
    let f0 = tape.value(out).item();
    let grads = tape.backward(out)?;
    let analytic = grads.wrt(xv, x);

    struct Probe {
        numeric: f64,
        one_sided_gap: f64,
        one_sided_mag: f64,
        step_gap: f64,
    }
    let mut probe = x.clone();
    let mut probes = Vec::with_capacity(x.numel());
    for k in 0..x.numel() {
        let orig = x.data()[k];
        let mut at = |h: f64| -> Result<f64> {
            probe.data_mut()[k] = orig + h;
            let v = eval(&probe);
            probe.data_mut()[k] = orig;
            v
        };
        let (fp, fm) = (at(eps)?, at(-eps)?);
        let (fp2, fm2) = (at(2.0 * eps)?, at(-2.0 * eps)?);
        let right = (fp - f0) / eps;
        let left = (f0 - fm) / eps;
        let c1 = (fp - fm) / (2.0 * eps);
        let c2 = (fp2 - fm2) / (4.0 * eps);
        probes.push(Probe {
            numeric: (8.0 * (fp - fm) - (fp2 - fm2)) / (12.0 * eps),
            one_sided_gap: (right - left).abs(),
            one_sided_mag: right.abs().max(left.abs()),
            step_gap: (c1 - c2).abs(),
        });
    }

    let scale = analytic
        .data()
        .iter()
        .chain(probes.iter().map(|p| &p.numeric))
        .fold(1e-8_f64, |m, v| m.max(v.abs()));
    let mut report = GradCheckReport {
        max_rel_error: 0.0,
        skipped: 0,
        checked: 0,
    };
    for (p, a) in probes.iter().zip(analytic.data()) {
        if p.one_sided_gap > 1e-3 * p.one_sided_mag.max(scale) || p.step_gap > 1e-6 * scale {
            report.skipped += 1;
            continue;
        }
        report.max_rel_error = report.max_rel_error.max((a - p.numeric).abs() / scale);
        report.checked += 1;
    }
    Ok(report)
}
