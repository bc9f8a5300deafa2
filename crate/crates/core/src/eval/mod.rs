//! Linear-probe evaluation, cross-validation, ablations, sweeps and
//! explanation export.

pub mod experiments;
pub mod metrics;
pub mod pipeline;
pub mod probe;

pub use experiments::{
    export_explanation, ranked_edges, run_ablation, sweep, write_ablation_csv, write_explanation_csv,
    write_sweep_csv, ExplainedEdge, SweepParam, SweepRow,
};
pub use metrics::{auc_midrank, compute_metrics, MetricSummaries, Metrics, MetricsReport, Summary};
pub use pipeline::{
    embed, evaluate_state, load_dataset, probe_view, run_cv, run_fold, run_pretrain, run_ssl, Dataset,
    FoldOutcome, RunContext, Variant,
};
pub use probe::{probe_train, HeldOut, LogisticProbe};
