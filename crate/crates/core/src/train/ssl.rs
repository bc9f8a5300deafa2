use std::time::Instant;

use crate::data::BrainGraph;
use crate::encoder::{encode_on_tape, EncoderParams, EncoderVars};
use crate::error::{Error, Result};
use crate::masker::{sample_mask, GroupLayout, MaskerParams};
use crate::rng::RngStream;
use crate::tensor::{Tape, Tensor, Var};

use super::augment::{augment, AugmentPolicy};
use super::config::ExperimentConfig;
use super::log::{EpochRecord, Phase, TrainLog};
use super::loss::{cca_loss_on_tape, standardize_on_tape, CcaTerms};
use super::optim::Optimizer;
use super::{batches, check_grads};

/// Frozen masker used to pick the salient edges of each graph.
#[derive(Clone, Copy, Debug)]
pub struct FrozenMasker<'m> {
    pub params: &'m MaskerParams,
    pub layout: &'m GroupLayout,
    pub tau: f64,
}

impl FrozenMasker<'_> {
    /// One hard selection sample for `graph`.
    pub fn sample(&self, graph: &BrainGraph, rng: &mut RngStream) -> Result<Tensor> {
        Ok(sample_mask(graph, self.params, self.layout, self.tau, rng)?.selection)
    }
}

/// Encode two stacked batches of views, standardize them and return the CCA terms.
pub fn ssl_loss_on_tape(
    tape: &mut Tape,
    views: &[(BrainGraph, BrainGraph)],
    encoder: &EncoderVars,
    lambda: f64,
) -> Result<CcaTerms> {
    let mut za = Vec::with_capacity(views.len());
    let mut zb = Vec::with_capacity(views.len());
    for (a, b) in views {
        for (g, out) in [(a, &mut za), (b, &mut zb)] {
            let adj = tape.constant(g.adjacency.clone());
            let x = tape.constant(g.features.clone());
            out.push(encode_on_tape(tape, adj, x, encoder)?);
        }
    }
    let za = tape.concat_rows(&za)?;
    let zb = tape.concat_rows(&zb)?;
    let sa = standardize_on_tape(tape, za)?;
    let sb = standardize_on_tape(tape, zb)?;
    cca_loss_on_tape(tape, sa, sb, lambda)
}

/// Epoch-at-a-time self-supervised training of the encoder.
pub struct SslTrainer<'a> {
    graphs: Vec<&'a BrainGraph>,
    masker: Option<FrozenMasker<'a>>,
    policy: AugmentPolicy,
    pub encoder: EncoderParams,
    cfg: ExperimentConfig,
    opt: Optimizer,
    rng: RngStream,
    epoch: usize,
    pub log: TrainLog,
}

impl<'a> SslTrainer<'a> {
    /// `masker` may only be absent for the uniform policy.
    pub fn new(
        graphs: &[&'a BrainGraph],
        masker: Option<FrozenMasker<'a>>,
        policy: AugmentPolicy,
        encoder: EncoderParams,
        cfg: &ExperimentConfig,
        rng: RngStream,
    ) -> Result<Self> {
        if graphs.len() < 2 {
            return Err(Error::Config(
                "self-supervised training needs at least 2 graphs".into(),
            ));
        }
        if masker.is_none() && policy != AugmentPolicy::Uniform {
            return Err(Error::Config(format!(
                "augmentation policy {policy:?} needs a trained masker"
            )));
        }
        let o = &cfg.ssl.optim;
        Ok(SslTrainer {
            graphs: graphs.to_vec(),
            masker,
            policy,
            encoder,
            cfg: cfg.clone(),
            opt: Optimizer::from_config(o),
            rng,
            epoch: 0,
            log: TrainLog::default(),
        })
    }

    pub fn epoch(&self) -> usize {
        self.epoch
    }

    pub fn run_epoch(&mut self) -> Result<EpochRecord> {
        let start = Instant::now();
        self.epoch += 1;
        let epoch = self.epoch;
        let order = batches(self.graphs.len(), self.cfg.ssl.optim.batch_size, &mut self.rng);
        let (mut inv_sum, mut dec_sum, mut tot_sum) = (0.0, 0.0, 0.0);
        for (bi, idx) in order.iter().enumerate() {
            let mut views = Vec::with_capacity(idx.len());
            for &i in idx {
                let g = self.graphs[i];
                let salient = match &self.masker {
                    Some(m) => m.sample(g, &mut self.rng)?,
                    None => Tensor::zeros(g.node_count(), g.node_count()),
                };
                views.push(augment(g, &salient, self.policy, self.cfg.ssl.epsilon, &mut self.rng)?);
            }
            let mut tape = Tape::new();
            let ev = self.encoder.bind(&mut tape, true);
            let terms = ssl_loss_on_tape(&mut tape, &views, &ev, self.cfg.ssl.lambda).map_err(|err| match err {
                Error::Domain { op, detail } => Error::NonFinite {
                    phase: "ssl",
                    epoch,
                    detail: format!("batch {bi}: {op}: {detail}"),
                },
                other => other,
            })?;
            let (inv, dec, total) = (
                tape.value(terms.invariance).item(),
                tape.value(terms.decorrelation).item(),
                tape.value(terms.total).item(),
            );
            if !total.is_finite() {
                return Err(Error::NonFinite {
                    phase: "ssl",
                    epoch,
                    detail: format!("batch {bi}: invariance={inv} decorrelation={dec}"),
                });
            }
            let grads = tape.backward(terms.total)?;
            let vars: Vec<Var> = ev.all();
            let params: Vec<&mut Tensor> = self.encoder.tensors_mut();
            let g: Vec<Tensor> = vars.iter().zip(&params).map(|(&v, p)| grads.wrt(v, p)).collect();
            check_grads("ssl", epoch, &g)?;
            self.opt.step(params, &g)?;
            inv_sum += inv;
            dec_sum += dec;
            tot_sum += total;
        }
        let nb = order.len() as f64;
        let rec = EpochRecord {
            epoch,
            phase: Phase::Ssl,
            mi: 0.0,
            ce: 0.0,
            invariance: inv_sum / nb,
            decorrelation: dec_sum / nb,
            total: tot_sum / nb,
            wall_ms: start.elapsed().as_secs_f64() * 1e3,
        };
        self.log.push(rec.clone())?;
        Ok(rec)
    }

    pub fn finish(self) -> (EncoderParams, TrainLog) {
        (self.encoder, self.log)
    }
}

/// Run every configured self-supervised epoch.
pub fn train_ssl(
    graphs: &[&BrainGraph],
    masker: Option<FrozenMasker<'_>>,
    policy: AugmentPolicy,
    encoder: EncoderParams,
    cfg: &ExperimentConfig,
    rng: RngStream,
) -> Result<(EncoderParams, TrainLog)> {
    let mut t = SslTrainer::new(graphs, masker, policy, encoder, cfg, rng)?;
    for _ in 0..cfg.ssl.optim.epochs {
        t.run_epoch()?;
    }
    Ok(t.finish())
}
