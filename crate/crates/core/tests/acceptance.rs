//! Acceptance suite: one PASS/FAIL line per criterion, nonzero exit on any failure.
//!
//! Run alone with `cargo test -p sambg-core --test acceptance`.

use std::process::ExitCode;
use std::time::{Duration, Instant};

use sambg_core::data::BrainGraph;
use sambg_core::encoder::{EncoderConfig, EncoderParams};
use sambg_core::eval::{
    auc_midrank, load_dataset, ranked_edges, run_ablation, run_cv, run_pretrain, run_ssl, Dataset, MetricsReport,
    RunContext, Variant,
};
use sambg_core::gradsuite::{grad_check_suite, straight_through_identity, GRAD_TOLERANCE};
use sambg_core::masker::{
    edge_probabilities, gumbel_select_with_noise, sample_mask, selection_frequency, upper_pairs, GroupLayout,
    Grouping, MaskerParams,
};
use sambg_core::mi::{batch_entropy, gaussian_gram, median_bandwidth, mutual_information, renyi_entropy,
    renyi_entropy_spectral};
use sambg_core::rng::{gumbel_sample, RngStream};
use sambg_core::tensor::{Tape, Tensor};
use sambg_core::train::{pretrain_ib, view_mask, AugmentPolicy, ExperimentConfig, ModelState, Phase, Stage};
use sambg_core::Result;

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: String) -> Result<Outcome> {
    Ok(Outcome { pass, detail })
}

fn random(rng: &mut RngStream, rows: usize, cols: usize) -> Tensor {
    Tensor::from_fn(rows, cols, |_, _| rng.normal())
}

fn gradient_integrity() -> Result<Outcome> {
    let start = Instant::now();
    let checks = grad_check_suite(10, 0)?;
    let st = straight_through_identity(10, 0)?;
    let elapsed = start.elapsed();
    let failed: Vec<&str> = checks.iter().filter(|c| !c.passed()).map(|c| c.name.as_str()).collect();
    let worst = checks.iter().map(|c| c.max_rel_error).fold(0.0, f64::max);
    let composite = ["ib_loss/masker", "ib_loss/encoder", "ssl_loss/encoder"]
        .iter()
        .all(|n| checks.iter().any(|c| c.name == *n));
    outcome(
        failed.is_empty() && composite && st == 0.0 && elapsed < Duration::from_secs(60),
        format!(
            "{} checks, worst rel err {worst:.2e} (tol {GRAD_TOLERANCE:e}), straight-through {st:e}, failed {failed:?}, {:.2}s",
            checks.len(),
            elapsed.as_secs_f64()
        ),
    )
}

fn renyi_consistency() -> Result<Outcome> {
    let mut rng = RngStream::new(11);
    let mut worst: f64 = 0.0;
    for _ in 0..50 {
        let b = 2 + rng.below(31);
        let d = 1 + rng.below(8);
        let z = random(&mut rng, b, d);
        let g = gaussian_gram(&z, median_bandwidth(&z)?)?.values;
        let tr = g.trace();
        let a = g.map(|v| v / tr);
        worst = worst.max((renyi_entropy(&a, 2.0)? - renyi_entropy_spectral(&a, 2.0)?).abs());
    }
    let mut uniform_err: f64 = 0.0;
    for b in [2usize, 4, 8, 16] {
        let a = Tensor::eye(b).map(|v| v / b as f64);
        for alpha in [0.5, 2.0, 3.0] {
            uniform_err = uniform_err.max((renyi_entropy(&a, alpha)? - (b as f64).log2()).abs());
        }
    }
    outcome(
        worst < 1e-10 && uniform_err < 1e-12,
        format!("shortcut vs spectral max diff {worst:.2e}, uniform spectrum max diff {uniform_err:.2e}"),
    )
}

fn mi_sanity() -> Result<Outcome> {
    let mut independent = Vec::new();
    let mut identical = Vec::new();
    let mut min_entropy = f64::INFINITY;
    let mut asym: f64 = 0.0;
    let mut lowest = f64::INFINITY;
    for seed in 0..20 {
        let mut rng = RngStream::new(1000 + seed);
        let x = random(&mut rng, 32, 4);
        let y = random(&mut rng, 32, 4);
        let xy = mutual_information(&x, &y, 2.0)?;
        let yx = mutual_information(&y, &x, 2.0)?;
        asym = asym.max((xy - yx).abs());
        lowest = lowest.min(xy);
        independent.push(xy);
        identical.push(mutual_information(&x, &x, 2.0)?);
        min_entropy = min_entropy.min(batch_entropy(&x, 2.0)?.min(batch_entropy(&y, 2.0)?));
    }
    let mean_ind = independent.iter().sum::<f64>() / 20.0;
    let mean_same = identical.iter().sum::<f64>() / 20.0;
    outcome(
        asym == 0.0 && lowest >= -1e-8 && mean_ind < 0.15 * min_entropy && mean_same >= 2.0 * mean_ind,
        format!(
            "asymmetry {asym:e}, min {lowest:.3e}, independent mean {mean_ind:.3} vs 0.15·H {:.3}, identical mean {mean_same:.3}",
            0.15 * min_entropy
        ),
    )
}

fn mask_structure() -> Result<Outcome> {
    let (n, k) = (20, 10);
    let layout = GroupLayout::new(n, k, Grouping::Size)?;
    let mut rng = RngStream::new(5);
    let params = MaskerParams::init(n, 16, &mut rng);
    let c = Tensor::from_fn(n, n, |i, j| if i == j { 0.0 } else { ((i * 7 + j * 7) % 11) as f64 / 11.0 - 0.5 });
    let graph = BrainGraph {
        id: "g".into(),
        adjacency: c.clone(),
        features: c,
        label: Some(0),
    };
    let probs = edge_probabilities(&graph.adjacency, &params)?;
    let symmetric = probs.is_symmetric(0.0);

    let a = sample_mask(&graph, &params, &layout, 1.0, &mut RngStream::new(9))?;
    let b = sample_mask(&graph, &params, &layout, 1.0, &mut RngStream::new(9))?;
    let deterministic = a == b;
    let idx: Vec<(usize, usize)> = upper_pairs(n);
    let size = layout.groups()[0].len();
    let one_per_group = layout
        .groups()
        .iter()
        .filter(|g| g.len() == size)
        .all(|g| g.clone().filter(|&e| a.selection.get(idx[e].0, idx[e].1) == 1.0).count() == 1);

    let mut agree = true;
    for s in 0..20 {
        let mut tape = Tape::new();
        let p = tape.constant(probs.clone());
        let noise = gumbel_sample(&mut RngStream::new(s), 1, layout.edge_count());
        let sel = gumbel_select_with_noise(&mut tape, p, &layout, 1e-6, &noise, true)?;
        let soft = tape.value(sel.soft).data().to_vec();
        for g in layout.groups() {
            let soft_best = g.clone().max_by(|&x, &y| soft[x].total_cmp(&soft[y])).unwrap();
            agree &= sel.hard.get(idx[soft_best].0, idx[soft_best].1) == 1.0;
        }
    }
    outcome(
        symmetric && deterministic && one_per_group && agree,
        format!(
            "{} complete groups, one edge each {one_per_group}, symmetric {symmetric}, deterministic {deterministic}, hard/soft agree {agree}",
            layout.complete_groups()
        ),
    )
}

fn augmentation_statistics() -> Result<Outcome> {
    let n = 20;
    let mut rng = RngStream::new(21);
    let salient = {
        let mut s = Tensor::zeros(n, n);
        for (i, j) in upper_pairs(n) {
            if rng.bernoulli(0.1) {
                s.set(i, j, 1.0);
                s.set(j, i, 1.0);
            }
        }
        s
    };
    let pairs = upper_pairs(n);
    let mut lines = Vec::new();
    let mut pass = true;
    for eps in [0.1, 0.2, 0.5] {
        let mut salient_kept = true;
        let (mut kept, mut total) = (0usize, 0usize);
        let mut view_rng = RngStream::new(22).split((eps * 10.0) as u64);
        for _ in 0..10_000 {
            let m = view_mask(&salient, AugmentPolicy::ProtectSalient, eps, &mut view_rng)?;
            for &(i, j) in &pairs {
                if salient.get(i, j) != 0.0 {
                    salient_kept &= m.get(i, j) == 1.0;
                } else {
                    total += 1;
                    kept += (m.get(i, j) == 1.0) as usize;
                }
            }
        }
        let frac = kept as f64 / total as f64;
        pass &= salient_kept && (frac - (1.0 - eps)).abs() <= 0.01;
        lines.push(format!("eps {eps}: salient kept {salient_kept}, kept fraction {frac:.4}"));
    }
    outcome(pass, lines.join("; "))
}

fn motif_recovery(cfg: &ExperimentConfig, dataset: &Dataset) -> Result<Outcome> {
    let motif = dataset.motif_edges.clone().unwrap_or_default();
    let graphs: Vec<&BrainGraph> = dataset.graphs.iter().collect();
    let n = graphs[0].node_count();
    let top = motif.len();
    let mut hits = Vec::new();
    let mut slowest = Duration::ZERO;
    for seed in 0..5u64 {
        let start = Instant::now();
        let out = pretrain_ib(&graphs, cfg, &RngStream::new(seed))?;
        slowest = slowest.max(start.elapsed());
        let layout = GroupLayout::new(n, cfg.group_k(n), cfg.masker.grouping)?;
        let freq = selection_frequency(
            &out.masker,
            &layout,
            cfg.masker.tau,
            &graphs,
            cfg.explain.samples,
            &mut RngStream::new(seed).split(7),
        )?;
        let h = ranked_edges(&freq)
            .into_iter()
            .take(top)
            .filter(|(i, j, _)| motif.contains(&(*i, *j)))
            .count();
        hits.push(h);
    }
    let good = hits.iter().filter(|&&h| h >= 6).count();
    outcome(
        top == 10 && good >= 4 && slowest < Duration::from_secs(180),
        format!("planted edges in top {top} per seed {hits:?}, slowest seed {:.1}s", slowest.as_secs_f64()),
    )
}

fn acc(reports: &[MetricsReport], v: Variant) -> f64 {
    reports.iter().find(|r| r.variant == v.as_str()).map_or(f64::NAN, |r| r.metrics.acc.mean)
}

fn label_efficiency(reports: &[MetricsReport]) -> Result<Outcome> {
    let (full, vanilla) = (acc(reports, Variant::Full), acc(reports, Variant::Vanilla));
    outcome(
        full - vanilla >= 0.03,
        format!("labeled fraction 0.2: full {full:.4}, vanilla {vanilla:.4}, gap {:.1} points", 100.0 * (full - vanilla)),
    )
}

fn ablation_order(reports: &[MetricsReport]) -> Result<Outcome> {
    let (only, sub, rest) = (acc(reports, Variant::Only), acc(reports, Variant::Sub), acc(reports, Variant::Rest));
    outcome(only > sub && sub > rest, format!("only {only:.4}, sub {sub:.4}, rest {rest:.4}"))
}

fn training_health(cfg: &ExperimentConfig, dataset: &Dataset) -> Result<Outcome> {
    let ctx = RunContext::new(dataset, cfg, Variant::Full, 0, 0)?;
    let mut noop = |_: &ModelState| Ok(());
    let (pre, mut log) = run_pretrain(&ctx, &mut noop)?;
    let (post, ssl_log) = run_ssl(&ctx, &pre, &mut noop)?;
    log.extend(ssl_log)?;
    let ssl: Vec<f64> = log.phase(Phase::Ssl).map(|r| r.total).collect();
    let (first, last) = (ssl[0], *ssl.last().unwrap_or(&f64::NAN));
    let finite = log
        .records
        .iter()
        .all(|r| [r.mi, r.ce, r.invariance, r.decorrelation, r.total].iter().all(|v| v.is_finite()));
    let masker_same = pre.masker.is_some() && pre.masker == post.masker && post.stage == Stage::Ssl;
    outcome(
        last < 0.5 * first && finite && masker_same,
        format!("ssl loss epoch 1 {first:.3} -> final {last:.3}, all finite {finite}, masker unchanged {masker_same}"),
    )
}

fn small_config() -> ExperimentConfig {
    let mut cfg = ExperimentConfig::default();
    cfg.seeds = vec![3];
    cfg.folds = 3;
    cfg.data.synth.n_subjects = 60;
    cfg.pretrain.optim.epochs = 5;
    cfg.ssl.optim.epochs = 5;
    cfg.probe.epochs = 50;
    cfg
}

fn pairwise_auc(scores: &[f64], labels: &[u8]) -> f64 {
    let (mut wins, mut pairs) = (0.0, 0.0);
    for (sp, _) in scores.iter().zip(labels).filter(|(_, &y)| y == 1) {
        for (sn, _) in scores.iter().zip(labels).filter(|(_, &y)| y == 0) {
            pairs += 1.0;
            wins += if sp > sn { 1.0 } else if sp == sn { 0.5 } else { 0.0 };
        }
    }
    wins / pairs
}

fn determinism() -> Result<Outcome> {
    let cfg = small_config();
    let dataset = load_dataset(&cfg)?;
    let a = run_cv(&dataset, &cfg, Variant::Full)?.to_json()?;
    let b = run_cv(&load_dataset(&cfg)?, &cfg, Variant::Full)?.to_json()?;
    let same_metrics = a == b;

    let mut rng = RngStream::new(31);
    let enc = EncoderParams::init(20, &EncoderConfig::default(), &mut rng)?;
    let masker = MaskerParams::init(20, 8, &mut rng);
    let layout = GroupLayout::half_n(20)?;
    let state = ModelState::new(Stage::Ssl, 7, Some((&masker, &layout, 0.3)), &enc, None);
    let dir = tempfile::tempdir().map_err(sambg_core::Error::from)?;
    let path = dir.path().join("state.json");
    state.save(&path)?;
    let loaded = ModelState::load(&path)?;
    let bits = |s: &ModelState| -> Result<Vec<u64>> {
        let mut v: Vec<u64> = s.encoder.tensors().iter().flat_map(|t| t.data().iter().map(|x| x.to_bits())).collect();
        if let Some((p, _, tau)) = s.masker_parts()? {
            v.extend(p.tensors().iter().flat_map(|t| t.data().iter().map(|x| x.to_bits())));
            v.push(tau.to_bits());
        }
        Ok(v)
    };
    let round_trip = loaded == state && bits(&loaded)? == bits(&state)?;

    let mut auc_exact = 0;
    for case in 0..200u64 {
        let mut r = RngStream::new(4000 + case);
        let n = 2 + r.below(40);
        let levels = 1 + r.below(5);
        let mut labels: Vec<u8> = (0..n).map(|_| r.bernoulli(0.5) as u8).collect();
        labels[0] = 0;
        labels[1] = 1;
        let scores: Vec<f64> = (0..n).map(|_| r.below(levels) as f64 / levels as f64).collect();
        auc_exact += (auc_midrank(&scores, &labels)? == pairwise_auc(&scores, &labels)) as usize;
    }
    outcome(
        same_metrics && round_trip && auc_exact == 200,
        format!("metrics JSON identical {same_metrics}, checkpoint bit-exact {round_trip}, AUC exact {auc_exact}/200"),
    )
}

fn main() -> ExitCode {
    let cfg = ExperimentConfig::default();
    let dataset = match load_dataset(&cfg) {
        Ok(d) => d,
        Err(e) => {
            println!("acceptance: cannot build default dataset: {e}");
            return ExitCode::FAILURE;
        }
    };
    let start = Instant::now();
    let ablation = run_ablation(&dataset, &cfg, &Variant::ALL);
    let ablation_secs = start.elapsed().as_secs_f64();

    let mut results: Vec<(&str, Result<Outcome>)> = vec![
        ("gradient integrity", gradient_integrity()),
        ("renyi consistency", renyi_consistency()),
        ("mi sanity", mi_sanity()),
        ("mask structure", mask_structure()),
        ("augmentation statistics", augmentation_statistics()),
        ("motif recovery", motif_recovery(&cfg, &dataset)),
    ];
    match &ablation {
        Ok(reports) => {
            results.push(("label efficiency", label_efficiency(reports)));
            results.push(("ablation order", ablation_order(reports)));
        }
        Err(e) => {
            let msg = format!("ablation failed: {e}");
            results.push(("label efficiency", Err(sambg_core::Error::Contract(msg.clone()))));
            results.push(("ablation order", Err(sambg_core::Error::Contract(msg))));
        }
    }
    results.push(("training health", training_health(&cfg, &dataset)));
    results.push(("determinism and round-trips", determinism()));

    let mut failures = 0;
    for (i, (name, r)) in results.into_iter().enumerate() {
        let (pass, detail) = match r {
            Ok(o) => (o.pass, o.detail),
            Err(e) => (false, format!("error: {e}")),
        };
        failures += !pass as usize;
        println!("criterion {:>2} {name}: {} ({detail})", i + 1, if pass { "PASS" } else { "FAIL" });
    }
    println!("ablation wall time {ablation_secs:.0}s");
    println!("acceptance: {} of 10 criteria passed", 10 - failures);
    if failures == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
