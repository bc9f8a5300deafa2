//! Supervised information-bottleneck pre-training, structure-aware
//! augmentation and self-supervised CCA training.

pub mod augment;
pub mod config;
pub mod log;
pub mod loss;
pub mod optim;
pub mod pretrain;
pub mod ssl;
pub mod state;

pub use augment::{augment, augment_view, remove_salient, view_mask, AugmentPolicy};
pub use config::{ExperimentConfig, MIN_BATCH, SCHEMA_VERSION};
pub use log::{EpochRecord, Phase, TrainLog};
pub use loss::{cca_loss, cca_loss_on_tape, standardize, standardize_on_tape, CcaTerms};
pub use optim::{sgd_step, OptimizerKind, Optimizer};
pub use pretrain::{ib_loss_on_tape, init_models, pretrain_ib, IbBatch, IbTerms, PretrainOutput, Pretrainer};
pub use ssl::{ssl_loss_on_tape, train_ssl, FrozenMasker, SslTrainer};
pub use state::{ModelState, Stage};

use crate::error::{Error, Result};
use crate::rng::RngStream;
use crate::tensor::Tensor;

/// Shuffled mini-batches of `0..n`; a trailing batch smaller than
/// [`MIN_BATCH`] is merged into the one before it.
pub fn batches(n: usize, batch_size: usize, rng: &mut RngStream) -> Vec<Vec<usize>> {
    let mut order: Vec<usize> = (0..n).collect();
    rng.shuffle(&mut order);
    let mut out: Vec<Vec<usize>> = order.chunks(batch_size.max(1)).map(<[usize]>::to_vec).collect();
    if out.len() > 1 && out.last().is_some_and(|b| b.len() < MIN_BATCH) {
        let tail = out.pop().unwrap();
        out.last_mut().unwrap().extend(tail);
    }
    out
}

fn check_grads(phase: &'static str, epoch: usize, grads: &[Tensor]) -> Result<()> {
    match grads.iter().position(|g| !g.is_finite()) {
        None => Ok(()),
        Some(i) => Err(Error::NonFinite {
            phase,
            epoch,
            detail: format!("gradient of parameter {i} is not finite"),
        }),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn batches_cover_everything_once() {
        let mut rng = RngStream::new(0);
        let b = batches(70, 32, &mut rng);
        assert_eq!(b.iter().map(Vec::len).collect::<Vec<_>>(), vec![32, 38]);
        let mut all: Vec<usize> = b.concat();
        all.sort_unstable();
        assert_eq!(all, (0..70).collect::<Vec<_>>());
    }

    #[test]
    fn short_tail_kept_when_alone() {
        let mut rng = RngStream::new(0);
        assert_eq!(batches(5, 32, &mut rng).len(), 1);
        assert_eq!(batches(72, 32, &mut rng).len(), 3);
    }
}
