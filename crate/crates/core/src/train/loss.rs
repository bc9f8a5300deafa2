use crate::error::{Error, Result};
use crate::tensor::{Tape, Tensor, Var};

/// Guard added inside the square root of each column variance.
pub const STD_EPS: f64 = 1e-8;

/// Column-centre, divide by `sqrt(var + eps²)` and scale by `1/sqrt(B)`.
pub fn standardize_on_tape(tape: &mut Tape, z: Var) -> Result<Var> {
    let b = tape.value(z).rows();
    if b < 2 {
        return Err(Error::Contract(format!("standardizing a batch of {b}")));
    }
    let mean = tape.col_mean(z);
    let neg = tape.scale(mean, -1.0);
    let centred = tape.add_row(z, neg)?;
    let std = tape.col_std(z, STD_EPS);
    let inv = tape.pow(std, -1.0)?;
    let scaled = tape.mul_row(centred, inv)?;
    Ok(tape.scale(scaled, 1.0 / (b as f64).sqrt()))
}

pub fn standardize(z: &Tensor) -> Result<Tensor> {
    let mut tape = Tape::new();
    let v = tape.constant(z.clone());
    let s = standardize_on_tape(&mut tape, v)?;
    Ok(tape.value(s).clone())
}

#[derive(Clone, Copy, Debug)]
pub struct CcaTerms {
    pub invariance: Var,
    pub decorrelation: Var,
    pub total: Var,
}

/// `||Za − Zb||² + λ(||ZaᵀZa − I||² + ||ZbᵀZb − I||²)` on standardized inputs.
pub fn cca_loss_on_tape(tape: &mut Tape, za: Var, zb: Var, lambda: f64) -> Result<CcaTerms> {
    let (sa, sb) = (tape.value(za).shape(), tape.value(zb).shape());
    if sa != sb {
        return Err(Error::Contract(format!(
            "CCA loss over views of shape {sa:?} and {sb:?}"
        )));
    }
    let d = tape.value(za).cols();
    let diff = tape.sub(za, zb)?;
    let invariance = tape.frob_sq(diff);
    let eye = tape.constant(Tensor::eye(d));
    let mut dec = Vec::with_capacity(2);
    for z in [za, zb] {
        let zt = tape.transpose(z);
        let c = tape.matmul(zt, z)?;
        let off = tape.sub(c, eye)?;
        dec.push(tape.frob_sq(off));
    }
    let decorrelation = tape.add(dec[0], dec[1])?;
    let weighted = tape.scale(decorrelation, lambda);
    let total = tape.add(invariance, weighted)?;
    Ok(CcaTerms {
        invariance,
        decorrelation,
        total,
    })
}

/// Loss value for already standardized embeddings.
pub fn cca_loss(za: &Tensor, zb: &Tensor, lambda: f64) -> Result<f64> {
    let mut tape = Tape::new();
    let a = tape.constant(za.clone());
    let b = tape.constant(zb.clone());
    let t = cca_loss_on_tape(&mut tape, a, b, lambda)?;
    Ok(tape.value(t.total).item())
}
