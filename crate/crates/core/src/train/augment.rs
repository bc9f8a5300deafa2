use serde::{Deserialize, Serialize};

use crate::data::BrainGraph;
use crate::error::{Error, Result};
use crate::masker::upper_pairs;
use crate::rng::RngStream;
use crate::tensor::Tensor;

/// Which edges an augmented view may drop.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AugmentPolicy {
    /// Salient edges kept, the rest dropped with probability ε.
    ProtectSalient,
    /// Salient edges dropped with probability ε, the rest kept.
    PerturbSalient,
    /// Salient edges removed, the rest dropped with probability ε.
    RemoveSalient,
    /// Every edge dropped with probability ε.
    Uniform,
}

/// Binary symmetric keep-mask for one view.
pub fn view_mask(
    salient: &Tensor,
    policy: AugmentPolicy,
    epsilon: f64,
    rng: &mut RngStream,
) -> Result<Tensor> {
    if !(0.0..1.0).contains(&epsilon) {
        return Err(Error::Config(format!("drop rate {epsilon} outside [0, 1)")));
    }
    let n = salient.rows();
    let mut m = Tensor::zeros(n, n);
    for (i, j) in upper_pairs(n) {
        let is_salient = salient.get(i, j) != 0.0;
        let keep = match (policy, is_salient) {
            (AugmentPolicy::ProtectSalient, true) => true,
            (AugmentPolicy::ProtectSalient, false) => rng.bernoulli(1.0 - epsilon),
            (AugmentPolicy::PerturbSalient, true) => rng.bernoulli(1.0 - epsilon),
            (AugmentPolicy::PerturbSalient, false) => true,
            (AugmentPolicy::RemoveSalient, true) => false,
            (AugmentPolicy::RemoveSalient, false) => rng.bernoulli(1.0 - epsilon),
            (AugmentPolicy::Uniform, _) => rng.bernoulli(1.0 - epsilon),
        };
        if keep {
            m.set(i, j, 1.0);
            m.set(j, i, 1.0);
        }
    }
    Ok(m)
}

/// One augmented view: `A' = A ⊙ M`.
pub fn augment_view(
    graph: &BrainGraph,
    salient: &Tensor,
    policy: AugmentPolicy,
    epsilon: f64,
    rng: &mut RngStream,
) -> Result<BrainGraph> {
    let m = view_mask(salient, policy, epsilon, rng)?;
    let a = graph.adjacency.zip_map(&m, "augment", |a, k| a * k)?;
    Ok(graph.with_adjacency(a))
}

/// Two views with independent mask draws around a shared salient set.
pub fn augment(
    graph: &BrainGraph,
    salient: &Tensor,
    policy: AugmentPolicy,
    epsilon: f64,
    rng: &mut RngStream,
) -> Result<(BrainGraph, BrainGraph)> {
    if salient.dims() != graph.adjacency.dims() {
        return Err(Error::Shape {
            op: "augment",
            lhs: graph.adjacency.shape().to_vec(),
            rhs: salient.shape().to_vec(),
        });
    }
    let a = augment_view(graph, salient, policy, epsilon, rng)?;
    let b = augment_view(graph, salient, policy, epsilon, rng)?;
    Ok((a, b))
}

/// Graph with the salient edges deleted.
pub fn remove_salient(graph: &BrainGraph, salient: &Tensor) -> Result<BrainGraph> {
    let a = graph
        .adjacency
        .zip_map(salient, "remove_salient", |a, s| if s != 0.0 { 0.0 } else { a })?;
    Ok(graph.with_adjacency(a))
}
