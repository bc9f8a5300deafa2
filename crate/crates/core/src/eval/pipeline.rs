use std::fmt;
use std::path::Path;
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::{build_graph, load_manifest, split_kfold, synth_generate, BrainGraph, FoldSplit};
use crate::encoder::{encode, encode_batch, cross_entropy, encode_on_tape, head_logits, ClassifierHead, EncoderParams};
use crate::error::{Error, Result};
use crate::masker::{extract_substructure, salient_edges, GroupLayout, MaskerParams};
use crate::rng::RngStream;
use crate::tensor::{Tape, Tensor};
use crate::train::{
    batches, init_models, remove_salient, AugmentPolicy, ExperimentConfig, FrozenMasker, ModelState, Pretrainer,
    Optimizer, SslTrainer, Stage, TrainLog,
};

use super::metrics::{Metrics, MetricsReport};
use super::probe::{probe_train, HeldOut};

/// Pipeline modification under comparison.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Variant {
    Full,
    Sub,
    Rest,
    Only,
    Vanilla,
}

impl Variant {
    pub const ALL: [Variant; 5] = [
        Variant::Full,
        Variant::Sub,
        Variant::Rest,
        Variant::Only,
        Variant::Vanilla,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Variant::Full => "full",
            Variant::Sub => "sub",
            Variant::Rest => "rest",
            Variant::Only => "only",
            Variant::Vanilla => "vanilla",
        }
    }

    pub fn description(self) -> &'static str {
        match self {
            Variant::Full => "salient edges preserved, remaining edges perturbed",
            Variant::Sub => "only salient edges perturbed, remaining edges protected",
            Variant::Rest => "salient edges deleted, remaining edges perturbed",
            Variant::Only => "salient substructure alone, no self-supervised phase",
            Variant::Vanilla => "uniform random edge dropout, no masker",
        }
    }

    pub fn uses_masker(self) -> bool {
        self != Variant::Vanilla
    }

    pub fn uses_ssl(self) -> bool {
        self != Variant::Only
    }

    pub fn policy(self) -> AugmentPolicy {
        match self {
            Variant::Full | Variant::Only => AugmentPolicy::ProtectSalient,
            Variant::Sub => AugmentPolicy::PerturbSalient,
            Variant::Rest => AugmentPolicy::RemoveSalient,
            Variant::Vanilla => AugmentPolicy::Uniform,
        }
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Variant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Variant::ALL
            .into_iter()
            .find(|v| v.as_str() == s)
            .ok_or_else(|| Error::Config(format!("unknown variant '{s}' (expected full, sub, rest, only or vanilla)")))
    }
}

/// Graphs of an experiment plus the planted edges when synthetic.
#[derive(Clone, Debug)]
pub struct Dataset {
    pub graphs: Vec<BrainGraph>,
    pub motif_edges: Option<Vec<(usize, usize)>>,
}

impl Dataset {
    pub fn ids(&self) -> Vec<String> {
        self.graphs.iter().map(|g| g.id.clone()).collect()
    }

    pub fn labels(&self) -> Vec<Option<u8>> {
        self.graphs.iter().map(|g| g.label).collect()
    }

    fn pick(&self, idx: &[usize]) -> Vec<&BrainGraph> {
        idx.iter().map(|&i| &self.graphs[i]).collect()
    }
}

/// Load the manifest named by the config, or generate its synthetic cohort.
pub fn load_dataset(cfg: &ExperimentConfig) -> Result<Dataset> {
    let d = &cfg.data;
    match &d.manifest {
        Some(path) => {
            let (_, records) = load_manifest(Path::new(path))?;
            let graphs = records
                .iter()
                .map(|r| build_graph(r.id.clone(), &r.connectivity()?, r.label, d.feature_mode, d.keep_fraction))
                .collect::<Result<Vec<_>>>()?;
            Ok(Dataset {
                graphs,
                motif_edges: None,
            })
        }
        None => {
            let ds = synth_generate(&d.synth, &RngStream::new(d.seed))?;
            let graphs = ds
                .graphs
                .iter()
                .zip(&ds.connectivity)
                .map(|(g, c)| build_graph(g.id.clone(), c, g.label, d.feature_mode, d.keep_fraction))
                .collect::<Result<Vec<_>>>()?;
            Ok(Dataset {
                graphs,
                motif_edges: Some(ds.motif_edges),
            })
        }
    }
}

/// One (seed, fold) run of one variant.
#[derive(Clone, Debug)]
pub struct RunContext<'a> {
    pub dataset: &'a Dataset,
    pub cfg: &'a ExperimentConfig,
    pub variant: Variant,
    pub seed: u64,
    pub split: FoldSplit,
}

impl<'a> RunContext<'a> {
    pub fn new(
        dataset: &'a Dataset,
        cfg: &'a ExperimentConfig,
        variant: Variant,
        seed: u64,
        fold: usize,
    ) -> Result<Self> {
        let spec = split_kfold(&dataset.ids(), &dataset.labels(), cfg.folds, seed, cfg.labeled_fraction)?;
        let split = spec.fold(fold)?;
        split.assert_hygiene();
        Ok(RunContext {
            dataset,
            cfg,
            variant,
            seed,
            split,
        })
    }

    fn rng(&self) -> RngStream {
        RngStream::new(self.seed).split(0x666f_6c64_0000 + self.split.fold as u64)
    }

    pub fn labeled_graphs(&self) -> Vec<&'a BrainGraph> {
        self.dataset.pick(&self.split.labeled)
    }

    /// Fine-tune pool stripped of labels.
    pub fn unlabeled_graphs(&self) -> Vec<BrainGraph> {
        self.split
            .finetune
            .iter()
            .map(|&i| BrainGraph {
                label: None,
                ..self.dataset.graphs[i].clone()
            })
            .collect()
    }
}

/// Supervised pre-training, or plain initialization for the vanilla variant.
/// `on_epoch` sees the state after every epoch.
pub fn run_pretrain(
    ctx: &RunContext<'_>,
    on_epoch: &mut dyn FnMut(&ModelState) -> Result<()>,
) -> Result<(ModelState, TrainLog)> {
    let g0 = &ctx.dataset.graphs[0];
    let rng = ctx.rng().split(1);
    let init = init_models(g0.node_count(), g0.features.cols(), ctx.cfg, &rng)?;
    if !ctx.variant.uses_masker() {
        let state = ModelState::new(Stage::Init, 0, None, &init.1, None);
        return Ok((state, TrainLog::default()));
    }
    let labeled = ctx.labeled_graphs();
    let mut t = Pretrainer::new(&labeled, init, ctx.cfg, rng.split(13))?;
    let tau = ctx.cfg.masker.tau;
    for _ in 0..ctx.cfg.pretrain.optim.epochs {
        t.run_epoch()?;
        on_epoch(&ModelState::new(
            Stage::Pretrain,
            t.epoch(),
            Some((&t.masker, &t.layout, tau)),
            &t.encoder,
            Some(&t.head),
        ))?;
    }
    let state = ModelState::new(
        Stage::Pretrain,
        t.epoch(),
        Some((&t.masker, &t.layout, tau)),
        &t.encoder,
        Some(&t.head),
    );
    Ok((state, t.finish().log))
}

/// Self-supervised training from a pre-training state; the masker is frozen.
pub fn run_ssl(
    ctx: &RunContext<'_>,
    state: &ModelState,
    on_epoch: &mut dyn FnMut(&ModelState) -> Result<()>,
) -> Result<(ModelState, TrainLog)> {
    if !ctx.variant.uses_ssl() {
        return Ok((state.clone(), TrainLog::default()));
    }
    let parts = state.masker_parts()?;
    if ctx.variant.uses_masker() && parts.is_none() {
        return Err(Error::Config(format!(
            "variant {} needs a pre-trained masker",
            ctx.variant
        )));
    }
    let frozen = match (&parts, ctx.variant.uses_masker()) {
        (Some((params, layout, tau)), true) => Some(FrozenMasker {
            params,
            layout,
            tau: *tau,
        }),
        _ => None,
    };
    let pool = ctx.unlabeled_graphs();
    let refs: Vec<&BrainGraph> = pool.iter().collect();
    let mut t = SslTrainer::new(
        &refs,
        frozen,
        ctx.variant.policy(),
        state.encoder.clone(),
        ctx.cfg,
        ctx.rng().split(2),
    )?;
    let snapshot = |epoch: usize, enc: &EncoderParams| ModelState {
        stage: Stage::Ssl,
        epoch,
        encoder: enc.clone(),
        ..state.clone()
    };
    for _ in 0..ctx.cfg.ssl.optim.epochs {
        t.run_epoch()?;
        on_epoch(&snapshot(t.epoch(), &t.encoder))?;
    }
    let epoch = t.epoch();
    let (encoder, log) = t.finish();
    Ok((snapshot(epoch, &encoder), log))
}

/// Graph as presented to the encoder at evaluation time under `variant`.
pub fn probe_view(
    graph: &BrainGraph,
    variant: Variant,
    masker: Option<(&MaskerParams, &GroupLayout)>,
) -> Result<BrainGraph> {
    match (variant, masker) {
        (Variant::Rest, Some((p, l))) => remove_salient(graph, &salient_edges(graph, p, l)?),
        (Variant::Only, Some((p, l))) => Ok(extract_substructure(graph, &salient_edges(graph, p, l)?)?.0),
        (Variant::Rest | Variant::Only, None) => Err(Error::Config(format!(
            "variant {variant} needs a pre-trained masker"
        ))),
        _ => Ok(graph.clone()),
    }
}

fn labels_of(graphs: &[&BrainGraph]) -> Result<Vec<u8>> {
    graphs
        .iter()
        .map(|g| g.label.ok_or_else(|| Error::Split(format!("graph {} has no label", g.id))))
        .collect()
}

/// Probe (or fine-tune) on the labeled subset, select on validation and
/// score the test subjects.
pub fn evaluate_state(ctx: &RunContext<'_>, state: &ModelState) -> Result<Metrics> {
    let parts = state.masker_parts()?;
    let masker = parts.as_ref().map(|(p, l, _)| (p, l));
    let view = |idx: &[usize]| -> Result<Vec<BrainGraph>> {
        idx.iter()
            .map(|&i| probe_view(&ctx.dataset.graphs[i], ctx.variant, masker))
            .collect()
    };
    let train = view(&ctx.split.labeled)?;
    let val = view(&ctx.split.validation)?;
    let test = view(&ctx.split.test)?;
    let train_refs: Vec<&BrainGraph> = train.iter().collect();
    let val_refs: Vec<&BrainGraph> = val.iter().collect();
    let train_y = labels_of(&train_refs)?;
    let val_y = labels_of(&val_refs)?;
    // test labels move straight into the held-out container
    let test_y: Vec<u8> = ctx.split.test.iter().map(|&i| ctx.dataset.graphs[i].label.unwrap_or(0)).collect();
    let test_unlabeled: Vec<BrainGraph> = test.into_iter().map(|g| BrainGraph { label: None, ..g }).collect();
    let test_refs: Vec<&BrainGraph> = test_unlabeled.iter().collect();

    let threshold = ctx.cfg.probe.threshold;
    if ctx.cfg.probe.fine_tune_encoder {
        let (encoder, head) = fine_tune(ctx, &state.encoder, &train_refs, &train_y, &val_refs, &val_y)?;
        let held = HeldOut::new(encode_batch(&test_refs, &encoder)?, test_y)?;
        let probs = class_one_probabilities(held.embeddings(), &head)?;
        return held.evaluate(&probs, threshold);
    }
    let z_train = encode_batch(&train_refs, &state.encoder)?;
    let z_val = encode_batch(&val_refs, &state.encoder)?;
    let held = HeldOut::new(encode_batch(&test_refs, &state.encoder)?, test_y)?;
    let probe = probe_train(&z_train, &train_y, &z_val, &val_y, &ctx.cfg.probe)?;
    held.evaluate(&probe.predict(held.embeddings())?, threshold)
}

fn class_one_probabilities(z: &Tensor, head: &ClassifierHead) -> Result<Vec<f64>> {
    let logits = z.matmul(&head.w)?;
    Ok((0..z.rows())
        .map(|i| {
            let d = logits.get(i, 1) + head.b.get(0, 1) - logits.get(i, 0) - head.b.get(0, 0);
            crate::tensor::sigmoid(d)
        })
        .collect())
}

fn fine_tune(
    ctx: &RunContext<'_>,
    encoder: &EncoderParams,
    train: &[&BrainGraph],
    train_y: &[u8],
    val: &[&BrainGraph],
    val_y: &[u8],
) -> Result<(EncoderParams, ClassifierHead)> {
    let mut rng = ctx.rng().split(3);
    let mut enc = encoder.clone();
    let mut head = ClassifierHead::init(enc.out_dim(), &mut rng.split(0));
    let o = &ctx.cfg.pretrain.optim;
    let mut opt = Optimizer::from_config(o);
    let mut best = (enc.clone(), head.clone());
    let mut best_acc = f64::NEG_INFINITY;
    for _ in 0..o.epochs {
        for idx in batches(train.len(), o.batch_size, &mut rng) {
            let mut tape = Tape::new();
            let ev = enc.bind(&mut tape, true);
            let hv = head.bind(&mut tape, true);
            let mut zs = Vec::with_capacity(idx.len());
            for &i in &idx {
                let a = tape.constant(train[i].adjacency.clone());
                let x = tape.constant(train[i].features.clone());
                zs.push(encode_on_tape(&mut tape, a, x, &ev)?);
            }
            let z = tape.concat_rows(&zs)?;
            let logits = head_logits(&mut tape, z, &hv)?;
            let y: Vec<u8> = idx.iter().map(|&i| train_y[i]).collect();
            let loss = cross_entropy(&mut tape, logits, &y)?;
            let grads = tape.backward(loss)?;
            let mut vars = ev.all();
            vars.extend([hv.w, hv.b]);
            let mut params = enc.tensors_mut();
            params.extend(head.tensors_mut());
            let g: Vec<Tensor> = vars.iter().zip(&params).map(|(&v, p)| grads.wrt(v, p)).collect();
            opt.step(params, &g)?;
        }
        let acc = if val.is_empty() {
            0.0
        } else {
            let z = encode_batch(val, &enc)?;
            let p = class_one_probabilities(&z, &head)?;
            let hits = p
                .iter()
                .zip(val_y)
                .filter(|(p, &y)| (**p >= ctx.cfg.probe.threshold) == (y == 1))
                .count();
            hits as f64 / val.len() as f64
        };
        if acc > best_acc {
            best_acc = acc;
            best = (enc.clone(), head.clone());
        }
    }
    Ok(best)
}

/// Artifacts of one complete run.
#[derive(Clone, Debug)]
pub struct FoldOutcome {
    pub metrics: Metrics,
    pub state: ModelState,
    pub log: TrainLog,
}

pub fn run_fold(ctx: &RunContext<'_>) -> Result<FoldOutcome> {
    let mut noop = |_: &ModelState| Ok(());
    let (pre, mut log) = run_pretrain(ctx, &mut noop)?;
    let (state, ssl_log) = run_ssl(ctx, &pre, &mut noop)?;
    log.extend(ssl_log)?;
    let metrics = evaluate_state(ctx, &state)?;
    Ok(FoldOutcome { metrics, state, log })
}

/// Every fold of every seed, in parallel; results are ordered seed-major.
pub fn run_cv(dataset: &Dataset, cfg: &ExperimentConfig, variant: Variant) -> Result<MetricsReport> {
    let runs = cv_metrics(dataset, cfg, variant)?;
    Ok(MetricsReport::from_runs(variant.as_str(), cfg.folds, &cfg.seeds, &runs))
}

pub(crate) fn cv_metrics(dataset: &Dataset, cfg: &ExperimentConfig, variant: Variant) -> Result<Vec<Metrics>> {
    let jobs: Vec<(u64, usize)> = cfg
        .seeds
        .iter()
        .flat_map(|&s| (0..cfg.folds).map(move |f| (s, f)))
        .collect();
    jobs.par_iter()
        .map(|&(seed, fold)| {
            let ctx = RunContext::new(dataset, cfg, variant, seed, fold)?;
            Ok(run_fold(&ctx)?.metrics)
        })
        .collect()
}

/// Embedding of a single graph under a stored state, as used by the probe.
pub fn embed(graph: &BrainGraph, state: &ModelState, variant: Variant) -> Result<Tensor> {
    let parts = state.masker_parts()?;
    let g = probe_view(graph, variant, parts.as_ref().map(|(p, l, _)| (p, l)))?;
    encode(&g, &state.encoder)
}
