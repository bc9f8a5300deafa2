use std::path::Path;

use anyhow::{bail, Context, Result};
use sambg_core::data::{ingest as ingest_manifest, synth_generate, write_synth_dataset, BrainGraph};
use sambg_core::eval::{
    evaluate_state, export_explanation, load_dataset, run_ablation, run_pretrain, run_ssl, sweep as run_sweep,
    write_ablation_csv, write_explanation_csv, write_sweep_csv, Metrics, MetricsReport, RunContext, SweepParam,
    Variant,
};
use sambg_core::gradsuite::{grad_check_suite, straight_through_identity, GRAD_TOLERANCE};
use sambg_core::masker::GroupLayout;
use sambg_core::rng::RngStream;
use sambg_core::train::{pretrain_ib, ExperimentConfig, ModelState, Stage, TrainLog};
use sambg_core::Error;

use crate::rundir::{self, RunIndex, RunRecord};
use crate::{AblateArgs, Common, ExplainArgs, GradArgs, RunArgs, SslArgs, SweepArgs};

/// `error: kind=<kind> msg=<message>` on a single line.
pub fn error_line(e: &anyhow::Error) -> String {
    let kind = e
        .chain()
        .find_map(|c| c.downcast_ref::<Error>().map(Error::kind))
        .or_else(|| e.chain().find_map(|c| c.downcast_ref::<std::io::Error>().map(|_| "io")))
        .or_else(|| e.chain().find_map(|c| c.downcast_ref::<serde_json::Error>().map(|_| "json")))
        .unwrap_or("cli");
    let msg = e
        .chain()
        .map(ToString::to_string)
        .collect::<Vec<_>>()
        .join(": ")
        .replace(['\n', '\r'], " ");
    format!("error: kind={kind} msg={msg}")
}

fn variant(tag: &str) -> Result<Variant> {
    Ok(tag.parse::<Variant>()?)
}

fn cv_config(common: &Common) -> Result<ExperimentConfig> {
    let mut cfg = rundir::load_config(common.config.as_deref())?;
    if let Some(s) = common.seed {
        cfg.seeds = vec![s];
    }
    Ok(cfg)
}

fn single_config(common: &Common, fold: Option<usize>) -> Result<ExperimentConfig> {
    let mut cfg = rundir::load_config(common.config.as_deref())?;
    if let Some(s) = common.seed {
        cfg.seed = s;
    }
    if let Some(f) = fold {
        cfg.fold = f;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn write_metrics(dir: &Path, report: &MetricsReport) -> Result<String> {
    let text = report.to_json()?;
    rundir::write_text(&dir.join(rundir::METRICS), &text)?;
    Ok(text)
}

pub fn synth(a: &Common) -> Result<()> {
    let mut cfg = rundir::load_config(a.config.as_deref())?;
    let seed = a.seed.unwrap_or(cfg.data.seed);
    let dir = rundir::out_dir(a.out.as_deref())?;
    let ds = synth_generate(&cfg.data.synth, &RngStream::new(seed))?;
    let manifest = write_synth_dataset(&ds, &dir, &format!("synthetic planted-motif cohort, seed {seed}"))?;
    cfg.data.seed = seed;
    cfg.data.manifest = Some("manifest.json".into());
    rundir::write_config(&dir, &cfg)?;
    println!(
        "wrote {} subjects ({} planted edges) to {}",
        ds.graphs.len(),
        ds.motif_edges.len(),
        manifest.display()
    );
    Ok(())
}

pub fn ingest(a: &Common) -> Result<()> {
    let cfg = rundir::load_config(a.config.as_deref())?;
    let Some(manifest) = cfg.data.manifest.as_deref() else {
        return Err(Error::Config("ingest needs data.manifest in the config".into()).into());
    };
    let report = ingest_manifest(Path::new(manifest))?;
    for d in &report.subjects {
        match &d.error {
            None => println!(
                "{}\t{:?}\t{}x{}\tlabel={}\tmean_abs_fc={:.4}",
                d.id,
                d.kind,
                d.rows,
                d.cols,
                d.label.map_or("-".to_string(), |l| l.to_string()),
                d.mean_abs_connectivity.unwrap_or(f64::NAN)
            ),
            Some(err) => println!("{}\t{:?}\tFAILED\t{}", d.id, d.kind, err),
        }
    }
    if let Some(out) = &a.out {
        let dir = rundir::out_dir(Some(out))?;
        rundir::write_text(&dir.join("ingest.json"), &(serde_json::to_string_pretty(&report)? + "\n"))?;
    }
    let failed = report.failures();
    if failed > 0 {
        return Err(Error::Parse {
            path: manifest.to_string(),
            detail: format!("{failed} of {} subjects failed validation", report.subjects.len()),
        }
        .into());
    }
    println!("{} subjects valid (atlas N = {})", report.subjects.len(), report.atlas_n);
    Ok(())
}

fn finish_single(
    command: &str,
    dir: &Path,
    ctx: &RunContext<'_>,
    state: &ModelState,
    log: &TrainLog,
) -> Result<()> {
    rundir::save_state(&dir.join(rundir::MODEL), state)?;
    log.write_csv(&dir.join(rundir::LOG))?;
    let metrics = evaluate_state(ctx, state)?;
    let report = MetricsReport::from_runs(ctx.variant.as_str(), ctx.cfg.folds, &[ctx.seed], &[metrics]);
    rundir::write_index(
        dir,
        &RunIndex {
            command: command.into(),
            variant: ctx.variant.as_str().into(),
            folds: ctx.cfg.folds,
            seeds: vec![ctx.seed],
            runs: vec![RunRecord {
                seed: ctx.seed,
                fold: ctx.split.fold,
                model: rundir::MODEL.into(),
                log: rundir::LOG.into(),
            }],
        },
    )?;
    print!("{}", write_metrics(dir, &report)?);
    Ok(())
}

pub fn pretrain(a: &RunArgs) -> Result<()> {
    let cfg = single_config(&a.common, a.fold)?;
    let v = variant(&a.variant)?;
    let dir = rundir::out_dir(a.common.out.as_deref())?;
    rundir::write_config(&dir, &cfg)?;
    let ds = load_dataset(&cfg)?;
    let ctx = RunContext::new(&ds, &cfg, v, cfg.seed, cfg.fold)?;
    let mut ck = rundir::checkpointer(&dir, cfg.checkpoint_every);
    let (state, log) = run_pretrain(&ctx, &mut ck)?;
    finish_single("pretrain", &dir, &ctx, &state, &log)
}

pub fn ssl(a: &SslArgs) -> Result<()> {
    let common = &a.run.common;
    let cfg = match (&common.config, &a.from) {
        (None, Some(from)) => {
            let mut c = rundir::load_config(Some(&from.join(rundir::CONFIG)))?;
            if let Some(s) = common.seed {
                c.seed = s;
            }
            if let Some(f) = a.run.fold {
                c.fold = f;
            }
            c.validate()?;
            c
        }
        _ => single_config(common, a.run.fold)?,
    };
    let v = variant(&a.run.variant)?;
    let dir = rundir::out_dir(common.out.as_deref())?;
    let ds = load_dataset(&cfg)?;
    let ctx = RunContext::new(&ds, &cfg, v, cfg.seed, cfg.fold)?;
    let (pre, mut log) = match &a.from {
        Some(from) => {
            let index = rundir::read_index(from)?;
            let run = index.runs.first().context("source run directory lists no runs")?;
            if run.seed != cfg.seed || run.fold != cfg.fold || index.variant != v.as_str() {
                return Err(Error::Config(format!(
                    "source run is {} seed {} fold {}, requested {} seed {} fold {}",
                    index.variant, run.seed, run.fold, v, cfg.seed, cfg.fold
                ))
                .into());
            }
            let state = ModelState::load(&from.join(&run.model))?;
            let log = TrainLog::read_csv(&from.join(&run.log))?;
            (state, log)
        }
        None => {
            let mut ck = rundir::checkpointer(&dir, cfg.checkpoint_every);
            run_pretrain(&ctx, &mut ck)?
        }
    };
    rundir::write_config(&dir, &cfg)?;
    let mut ck = rundir::checkpointer(&dir, cfg.checkpoint_every);
    let (state, ssl_log) = run_ssl(&ctx, &pre, &mut ck)?;
    log.extend(ssl_log)?;
    finish_single("ssl", &dir, &ctx, &state, &log)
}

pub fn eval(a: &RunArgs) -> Result<()> {
    let dir = rundir::out_dir(a.common.out.as_deref())?;
    if a.common.config.is_none() && dir.join(rundir::INDEX).exists() {
        return reproduce(&dir);
    }
    let cfg = cv_config(&a.common)?;
    let v = variant(&a.variant)?;
    rundir::write_config(&dir, &cfg)?;
    let ds = load_dataset(&cfg)?;
    let mut runs = Vec::new();
    let mut metrics: Vec<Metrics> = Vec::new();
    for &seed in &cfg.seeds {
        for fold in 0..cfg.folds {
            let ctx = RunContext::new(&ds, &cfg, v, seed, fold)?;
            let sub = format!("runs/seed{seed}_fold{fold}");
            let run_dir = dir.join(&sub);
            let mut ck = rundir::checkpointer(&run_dir, cfg.checkpoint_every);
            let (pre, mut log) = run_pretrain(&ctx, &mut ck)?;
            let (state, ssl_log) = run_ssl(&ctx, &pre, &mut ck)?;
            log.extend(ssl_log)?;
            rundir::save_state(&run_dir.join(rundir::MODEL), &state)?;
            log.write_csv(&run_dir.join(rundir::LOG))?;
            let m = evaluate_state(&ctx, &state)?;
            log::info!("{v} seed {seed} fold {fold}: acc {:.3} auc {:.3}", m.acc, m.auc);
            metrics.push(m);
            runs.push(RunRecord {
                seed,
                fold,
                model: format!("{sub}/{}", rundir::MODEL),
                log: format!("{sub}/{}", rundir::LOG),
            });
        }
    }
    let report = MetricsReport::from_runs(v.as_str(), cfg.folds, &cfg.seeds, &metrics);
    rundir::write_index(
        &dir,
        &RunIndex {
            command: "eval".into(),
            variant: v.as_str().into(),
            folds: cfg.folds,
            seeds: cfg.seeds.clone(),
            runs,
        },
    )?;
    print!("{}", write_metrics(&dir, &report)?);
    Ok(())
}

/// Re-evaluate every stored model of a run directory and require the
/// result to equal its stored metrics byte for byte.
fn reproduce(dir: &Path) -> Result<()> {
    let cfg = rundir::load_config(Some(&dir.join(rundir::CONFIG)))?;
    let index = rundir::read_index(dir)?;
    let v = variant(&index.variant)?;
    let ds = load_dataset(&cfg)?;
    let metrics = index
        .runs
        .iter()
        .map(|r| {
            let ctx = RunContext::new(&ds, &cfg, v, r.seed, r.fold)?;
            let state = ModelState::load(&dir.join(&r.model))?;
            Ok(evaluate_state(&ctx, &state)?)
        })
        .collect::<Result<Vec<_>>>()?;
    let report = MetricsReport::from_runs(v.as_str(), index.folds, &index.seeds, &metrics);
    let text = report.to_json()?;
    let stored_path = dir.join(rundir::METRICS);
    let stored = std::fs::read_to_string(&stored_path)
        .with_context(|| format!("reading {}", stored_path.display()))?;
    if text != stored {
        return Err(Error::Contract(format!(
            "re-evaluated metrics differ from {}",
            stored_path.display()
        ))
        .into());
    }
    print!("{text}");
    Ok(())
}

pub fn ablate(a: &AblateArgs) -> Result<()> {
    let cfg = cv_config(&a.common)?;
    let variants = match &a.variant {
        None => Variant::ALL.to_vec(),
        Some(list) => list.split(',').map(|t| variant(t.trim())).collect::<Result<Vec<_>>>()?,
    };
    let dir = rundir::out_dir(a.common.out.as_deref())?;
    rundir::write_config(&dir, &cfg)?;
    let ds = load_dataset(&cfg)?;
    let reports = run_ablation(&ds, &cfg, &variants)?;
    write_ablation_csv(&dir.join("ablation.csv"), &reports)?;
    for r in &reports {
        rundir::write_text(&dir.join(format!("metrics_{}.json", r.variant)), &r.to_json()?)?;
        let m = &r.metrics;
        println!(
            "{:<8} acc {:.3}±{:.3}  auc {:.3}±{:.3}  recall {:.3}  f1 {:.3}",
            r.variant, m.acc.mean, m.acc.std, m.auc.mean, m.auc.std, m.recall.mean, m.f1.mean
        );
    }
    Ok(())
}

fn parse_grid(text: &str) -> Result<Vec<f64>> {
    text.split(',')
        .filter(|t| !t.trim().is_empty())
        .map(|t| {
            t.trim()
                .parse::<f64>()
                .map_err(|_| Error::Config(format!("grid value '{t}' is not a number")).into())
        })
        .collect()
}

pub fn sweep(a: &SweepArgs) -> Result<()> {
    let cfg = cv_config(&a.common)?;
    let param: SweepParam = a.param.parse()?;
    let grid = parse_grid(&a.grid)?;
    let v = variant(&a.variant)?;
    let dir = rundir::out_dir(a.common.out.as_deref())?;
    rundir::write_config(&dir, &cfg)?;
    let ds = load_dataset(&cfg)?;
    let rows = run_sweep(&ds, &cfg, param, &grid, v)?;
    write_sweep_csv(&dir.join(format!("sweep_{}.csv", param.as_str())), &rows)?;
    for r in &rows {
        println!(
            "{}={} seed {}: acc {:.3} auc {:.3} recall {:.3} f1 {:.3}",
            param.as_str(),
            r.param_value,
            r.seed,
            r.acc,
            r.auc,
            r.recall,
            r.f1
        );
    }
    Ok(())
}

pub fn explain(a: &ExplainArgs) -> Result<()> {
    let cfg = match (&a.common.config, &a.from) {
        (None, Some(from)) => rundir::load_config(Some(&from.join(rundir::CONFIG)))?,
        _ => rundir::load_config(a.common.config.as_deref())?,
    };
    let seed = a.common.seed.unwrap_or(cfg.seed);
    let dir = rundir::out_dir(a.common.out.as_deref())?;
    let ds = load_dataset(&cfg)?;
    let labeled: Vec<&BrainGraph> = ds.graphs.iter().filter(|g| g.label.is_some()).collect();
    let (params, layout, tau) = match &a.from {
        Some(from) => {
            let model = if from.join(rundir::INDEX).exists() {
                let index = rundir::read_index(from)?;
                index.runs.first().context("source run directory lists no runs")?.model.clone()
            } else {
                rundir::MODEL.to_string()
            };
            let state = ModelState::load(&from.join(model))?;
            state
                .masker_parts()?
                .ok_or_else(|| Error::Config(format!("{} holds no trained masker", from.display())))?
        }
        None => {
            rundir::write_config(&dir, &cfg)?;
            let out = pretrain_ib(&labeled, &cfg, &RngStream::new(seed))?;
            let n = labeled.first().map_or(0, |g| g.node_count());
            let layout = GroupLayout::new(n, cfg.group_k(n), cfg.masker.grouping)?;
            let tau = cfg.masker.tau;
            let epochs = cfg.pretrain.optim.epochs;
            let state = ModelState::new(
                Stage::Pretrain,
                epochs,
                Some((&out.masker, &layout, tau)),
                &out.encoder,
                Some(&out.head),
            );
            rundir::save_state(&dir.join(rundir::MODEL), &state)?;
            out.log.write_csv(&dir.join(rundir::LOG))?;
            (out.masker, layout, tau)
        }
    };
    let edges = export_explanation(
        &labeled,
        &params,
        &layout,
        tau,
        cfg.explain.top_k,
        cfg.explain.samples,
        &RngStream::new(seed).split(0x6578_706c),
    )?;
    write_explanation_csv(&dir.join("explanation.csv"), &edges)?;
    for class in 0..2u8 {
        let top: Vec<_> = edges.iter().filter(|e| e.class == class).collect();
        if top.is_empty() {
            continue;
        }
        match &ds.motif_edges {
            Some(motif) => {
                let hits = top
                    .iter()
                    .take(10)
                    .filter(|e| motif.contains(&(e.roi_i, e.roi_j)))
                    .count();
                println!(
                    "class {class}: {} edges exported, {hits} of the top {} are planted",
                    top.len(),
                    top.len().min(10)
                );
            }
            None => println!("class {class}: {} edges exported", top.len()),
        }
    }
    Ok(())
}

pub fn gradcheck(a: &GradArgs) -> Result<()> {
    let seed = a.common.seed.unwrap_or(0);
    let checks = grad_check_suite(a.points, seed)?;
    let st = straight_through_identity(a.points, seed)?;
    let mut csv = String::from("op,max_rel_error,checked,skipped,passed\n");
    let mut failed = 0;
    for c in &checks {
        let ok = c.passed();
        failed += usize::from(!ok);
        println!(
            "{:<24} max_rel_error={:.3e} checked={} skipped={} {}",
            c.name,
            c.max_rel_error,
            c.checked,
            c.skipped,
            if ok { "PASS" } else { "FAIL" }
        );
        csv.push_str(&format!("{},{:e},{},{},{}\n", c.name, c.max_rel_error, c.checked, c.skipped, ok));
    }
    let st_ok = st == 0.0;
    failed += usize::from(!st_ok);
    println!(
        "{:<24} max_abs_deviation={:.3e} {}",
        "straight_through",
        st,
        if st_ok { "PASS" } else { "FAIL" }
    );
    csv.push_str(&format!("straight_through,{st:e},{},0,{st_ok}\n", a.points));
    if let Some(out) = &a.common.out {
        let dir = rundir::out_dir(Some(out))?;
        rundir::write_text(&dir.join("gradcheck.csv"), &csv)?;
    }
    if failed > 0 {
        bail!(Error::Contract(format!(
            "{failed} gradient checks exceed the {GRAD_TOLERANCE:e} tolerance"
        )));
    }
    Ok(())
}
