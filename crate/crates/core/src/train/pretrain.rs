use std::time::Instant;

use crate::data::BrainGraph;
use crate::encoder::{cross_entropy, encode_on_tape, head_logits, ClassifierHead, EncoderParams, EncoderVars, HeadVars};
use crate::error::{Error, Result};
use crate::masker::{edge_probabilities_on_tape, gumbel_select_with_noise, GroupLayout, MaskerParams, MaskerVars};
use crate::mi::mutual_information_with_bandwidth;
use crate::rng::{gumbel_sample, RngStream};
use crate::tensor::{Tape, Tensor, Var};

use super::config::ExperimentConfig;
use super::loss::standardize_on_tape;
use super::log::{EpochRecord, Phase, TrainLog};
use super::optim::Optimizer;
use super::{batches, check_grads};

/// Freshly initialized masker, encoder and head for `n`-node graphs with
/// `d`-wide features.
pub fn init_models(
    n: usize,
    d: usize,
    cfg: &ExperimentConfig,
    rng: &RngStream,
) -> Result<(MaskerParams, EncoderParams, ClassifierHead)> {
    let masker = MaskerParams::init(n, cfg.masker.hidden, &mut rng.split(10));
    let encoder = EncoderParams::init(d, &cfg.encoder, &mut rng.split(11))?;
    let head = ClassifierHead::init(encoder.out_dim(), &mut rng.split(12));
    Ok((masker, encoder, head))
}

/// Scalar terms of the pre-training objective.
#[derive(Clone, Copy, Debug)]
pub struct IbTerms {
    pub mi: Var,
    pub ce: Var,
    pub total: Var,
}

/// Inputs of one pre-training batch with its Gumbel noise already drawn.
pub struct IbBatch<'a> {
    pub graphs: &'a [&'a BrainGraph],
    pub noise: &'a [Tensor],
    /// Fixed kernel bandwidths; median heuristic when absent.
    pub bandwidths: Option<(f64, f64)>,
}

/// `β·I(Z_sub, Z) + CE(head(Z_sub), y)` over one batch; the head sees
/// batch-standardized substructure embeddings.
#[allow(clippy::too_many_arguments)]
pub fn ib_loss_on_tape(
    tape: &mut Tape,
    batch: &IbBatch<'_>,
    masker: &MaskerVars,
    encoder: &EncoderVars,
    head: &HeadVars,
    layout: &GroupLayout,
    tau: f64,
    beta: f64,
    alpha: f64,
    hard: bool,
) -> Result<IbTerms> {
    if batch.graphs.len() != batch.noise.len() {
        return Err(Error::Contract("one noise row per graph required".into()));
    }
    let mut labels = Vec::with_capacity(batch.graphs.len());
    let mut full = Vec::with_capacity(batch.graphs.len());
    let mut sub = Vec::with_capacity(batch.graphs.len());
    for (g, noise) in batch.graphs.iter().zip(batch.noise) {
        labels.push(g.label.ok_or_else(|| {
            Error::Config(format!("pre-training graph {} is unlabeled", g.id))
        })?);
        let a = tape.constant(g.adjacency.clone());
        let x = tape.constant(g.features.clone());
        let p = edge_probabilities_on_tape(tape, a, masker)?;
        let sel = gumbel_select_with_noise(tape, p, layout, tau, noise, hard)?;
        let a_sub = tape.mul(a, sel.mask)?;
        full.push(encode_on_tape(tape, a, x, encoder)?);
        sub.push(encode_on_tape(tape, a_sub, x, encoder)?);
    }
    let z = tape.concat_rows(&full)?;
    let z_sub = tape.concat_rows(&sub)?;
    let mi = mutual_information_with_bandwidth(tape, z_sub, z, alpha, batch.bandwidths)?.mi;
    let b = batch.graphs.len() as f64;
    let normed = standardize_on_tape(tape, z_sub)?;
    let normed = tape.scale(normed, b.sqrt());
    let logits = head_logits(tape, normed, head)?;
    let ce = cross_entropy(tape, logits, &labels)?;
    let weighted = tape.scale(mi, beta);
    let total = tape.add(weighted, ce)?;
    Ok(IbTerms { mi, ce, total })
}

/// Output of supervised pre-training.
#[derive(Clone, Debug)]
pub struct PretrainOutput {
    pub masker: MaskerParams,
    pub encoder: EncoderParams,
    pub head: ClassifierHead,
    pub log: TrainLog,
}

/// Epoch-at-a-time pre-training of masker, encoder and head.
pub struct Pretrainer<'a> {
    graphs: Vec<&'a BrainGraph>,
    pub masker: MaskerParams,
    pub encoder: EncoderParams,
    pub head: ClassifierHead,
    pub layout: GroupLayout,
    cfg: ExperimentConfig,
    opt: Optimizer,
    rng: RngStream,
    epoch: usize,
    pub log: TrainLog,
}

impl<'a> Pretrainer<'a> {
    pub fn new(
        graphs: &[&'a BrainGraph],
        init: (MaskerParams, EncoderParams, ClassifierHead),
        cfg: &ExperimentConfig,
        rng: RngStream,
    ) -> Result<Self> {
        let first = graphs
            .first()
            .ok_or_else(|| Error::Config("pre-training needs a non-empty labeled set".into()))?;
        if let Some(g) = graphs.iter().find(|g| g.label.is_none()) {
            return Err(Error::Config(format!("pre-training graph {} is unlabeled", g.id)));
        }
        if graphs.len() < 2 {
            return Err(Error::Config("pre-training needs at least 2 labeled graphs".into()));
        }
        let n = first.node_count();
        let layout = GroupLayout::new(n, cfg.group_k(n), cfg.masker.grouping)?;
        let o = &cfg.pretrain.optim;
        Ok(Pretrainer {
            graphs: graphs.to_vec(),
            masker: init.0,
            encoder: init.1,
            head: init.2,
            layout,
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
        let e = self.layout.edge_count();
        let order = batches(self.graphs.len(), self.cfg.pretrain.optim.batch_size, &mut self.rng);
        let (mut mi_sum, mut ce_sum, mut tot_sum) = (0.0, 0.0, 0.0);
        for (bi, idx) in order.iter().enumerate() {
            let graphs: Vec<&BrainGraph> = idx.iter().map(|&i| self.graphs[i]).collect();
            let noise: Vec<Tensor> = idx.iter().map(|_| gumbel_sample(&mut self.rng, 1, e)).collect();
            let mut tape = Tape::new();
            let mv = self.masker.bind(&mut tape, true);
            let ev = self.encoder.bind(&mut tape, true);
            let hv = self.head.bind(&mut tape, true);
            let batch = IbBatch {
                graphs: &graphs,
                noise: &noise,
                bandwidths: None,
            };
            let terms = ib_loss_on_tape(
                &mut tape,
                &batch,
                &mv,
                &ev,
                &hv,
                &self.layout,
                self.cfg.masker.tau,
                self.cfg.pretrain.beta,
                self.cfg.alpha,
                true,
            )
            .map_err(|err| non_finite(epoch, bi, err))?;
            let (mi, ce, total) = (
                tape.value(terms.mi).item(),
                tape.value(terms.ce).item(),
                tape.value(terms.total).item(),
            );
            if !total.is_finite() {
                return Err(Error::NonFinite {
                    phase: "pretrain",
                    epoch,
                    detail: format!("batch {bi}: mi={mi} ce={ce} total={total}"),
                });
            }
            let grads = tape.backward(terms.total)?;
            let mut vars: Vec<Var> = mv.all().to_vec();
            vars.extend(ev.all());
            vars.extend([hv.w, hv.b]);
            let mut params: Vec<&mut Tensor> = self.masker.tensors_mut().into_iter().collect();
            params.extend(self.encoder.tensors_mut());
            params.extend(self.head.tensors_mut());
            let g: Vec<Tensor> = vars.iter().zip(&params).map(|(&v, p)| grads.wrt(v, p)).collect();
            check_grads("pretrain", epoch, &g)?;
            self.opt.step(params, &g)?;
            mi_sum += mi;
            ce_sum += ce;
            tot_sum += total;
        }
        let nb = order.len() as f64;
        let rec = EpochRecord {
            epoch,
            phase: Phase::Pretrain,
            mi: mi_sum / nb,
            ce: ce_sum / nb,
            invariance: 0.0,
            decorrelation: 0.0,
            total: tot_sum / nb,
            wall_ms: start.elapsed().as_secs_f64() * 1e3,
        };
        self.log.push(rec.clone())?;
        Ok(rec)
    }

    pub fn finish(self) -> PretrainOutput {
        PretrainOutput {
            masker: self.masker,
            encoder: self.encoder,
            head: self.head,
            log: self.log,
        }
    }
}

fn non_finite(epoch: usize, batch: usize, err: Error) -> Error {
    match err {
        Error::Domain { op, detail } => Error::NonFinite {
            phase: "pretrain",
            epoch,
            detail: format!("batch {batch}: {op}: {detail}"),
        },
        other => other,
    }
}

/// Run every configured pre-training epoch from fresh parameters.
pub fn pretrain_ib(graphs: &[&BrainGraph], cfg: &ExperimentConfig, rng: &RngStream) -> Result<PretrainOutput> {
    let first = graphs
        .first()
        .ok_or_else(|| Error::Config("pre-training needs a non-empty labeled set".into()))?;
    let init = init_models(first.node_count(), first.features.cols(), cfg, rng)?;
    let mut t = Pretrainer::new(graphs, init, cfg, rng.split(13))?;
    for _ in 0..cfg.pretrain.optim.epochs {
        t.run_epoch()?;
    }
    Ok(t.finish())
}
