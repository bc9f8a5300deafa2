//! Learnable edge masker: row-wise MLP edge probabilities, grouped
//! Gumbel-Softmax selection and substructure extraction.

use std::ops::Range;

use serde::{Deserialize, Serialize};

use crate::data::BrainGraph;
use crate::error::{Error, Result};
use crate::rng::{gumbel_sample, RngStream};
use crate::tensor::{Tape, Tensor, Var};

/// Guards `log(p)` for probabilities that underflow to zero.
pub const LOGIT_EPS: f64 = 1e-12;

pub const CHECKPOINT_VERSION: u32 = 1;

/// How the upper triangle is cut into selection groups.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Grouping {
    /// `K` is the number of candidates per group.
    #[default]
    Size,
    /// `K` is the number of groups.
    Count,
}

/// Partition of the row-major upper-triangle edge list into consecutive groups.
#[derive(Clone, Debug, PartialEq)]
pub struct GroupLayout {
    n: usize,
    k: usize,
    grouping: Grouping,
    groups: Vec<Range<usize>>,
}

/// Row-major index of edge `(i, j)`, `i < j`, in the upper triangle of an `n`-node graph.
pub fn upper_index(n: usize, i: usize, j: usize) -> usize {
    debug_assert!(i < j && j < n);
    i * n - i * (i + 1) / 2 + (j - i - 1)
}

/// Inverse of [`upper_index`].
pub fn upper_pairs(n: usize) -> Vec<(usize, usize)> {
    (0..n)
        .flat_map(|i| (i + 1..n).map(move |j| (i, j)))
        .collect()
}

impl GroupLayout {
    pub fn new(n: usize, k: usize, grouping: Grouping) -> Result<Self> {
        let edges = n * n.saturating_sub(1) / 2;
        if edges == 0 {
            return Err(Error::Config(format!("graph with {n} nodes has no edges")));
        }
        if k == 0 {
            return Err(Error::Config("group parameter K must be positive".into()));
        }
        let size = match grouping {
            Grouping::Size => k,
            Grouping::Count => edges.div_ceil(k),
        };
        let groups = (0..edges)
            .step_by(size)
            .map(|start| start..(start + size).min(edges))
            .collect();
        Ok(GroupLayout {
            n,
            k,
            grouping,
            groups,
        })
    }

    /// Default group size `K = N/2`.
    pub fn half_n(n: usize) -> Result<Self> {
        Self::new(n, (n / 2).max(1), Grouping::Size)
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn grouping(&self) -> Grouping {
        self.grouping
    }

    pub fn groups(&self) -> &[Range<usize>] {
        &self.groups
    }

    pub fn edge_count(&self) -> usize {
        self.n * (self.n - 1) / 2
    }

    /// Number of groups holding the full group size.
    pub fn complete_groups(&self) -> usize {
        let size = self.groups[0].len();
        self.groups.iter().filter(|g| g.len() == size).count()
    }

    fn upper_gather(&self) -> Vec<Option<usize>> {
        upper_pairs(self.n)
            .into_iter()
            .map(|(i, j)| Some(i * self.n + j))
            .collect()
    }

    fn symmetric_scatter(&self) -> Vec<Option<usize>> {
        let n = self.n;
        (0..n * n)
            .map(|k| {
                let (i, j) = (k / n, k % n);
                match i.cmp(&j) {
                    std::cmp::Ordering::Less => Some(upper_index(n, i, j)),
                    std::cmp::Ordering::Greater => Some(upper_index(n, j, i)),
                    std::cmp::Ordering::Equal => None,
                }
            })
            .collect()
    }
}

/// Two-layer MLP applied to every row of the adjacency matrix.
#[derive(Clone, Debug, PartialEq)]
pub struct MaskerParams {
    pub w1: Tensor,
    pub b1: Tensor,
    pub w2: Tensor,
    pub b2: Tensor,
}

/// Masker parameters bound to a tape.
#[derive(Clone, Copy, Debug)]
pub struct MaskerVars {
    pub w1: Var,
    pub b1: Var,
    pub w2: Var,
    pub b2: Var,
}

impl MaskerVars {
    pub fn all(&self) -> [Var; 4] {
        [self.w1, self.b1, self.w2, self.b2]
    }
}

fn uniform_init(rng: &mut RngStream, rows: usize, cols: usize, fan_in: usize) -> Tensor {
    let bound = 1.0 / (fan_in as f64).sqrt();
    Tensor::from_fn(rows, cols, |_, _| rng.uniform_range(-bound, bound))
}

impl MaskerParams {
    pub fn init(n: usize, hidden: usize, rng: &mut RngStream) -> Self {
        MaskerParams {
            w1: uniform_init(rng, n, hidden, n),
            b1: uniform_init(rng, 1, hidden, n),
            w2: uniform_init(rng, hidden, n, hidden),
            b2: uniform_init(rng, 1, n, hidden),
        }
    }

    pub fn zeros(n: usize, hidden: usize) -> Self {
        MaskerParams {
            w1: Tensor::zeros(n, hidden),
            b1: Tensor::zeros(1, hidden),
            w2: Tensor::zeros(hidden, n),
            b2: Tensor::zeros(1, n),
        }
    }

    pub fn n(&self) -> usize {
        self.w1.rows()
    }

    pub fn hidden(&self) -> usize {
        self.w1.cols()
    }

    pub fn tensors(&self) -> [&Tensor; 4] {
        [&self.w1, &self.b1, &self.w2, &self.b2]
    }

    pub fn tensors_mut(&mut self) -> [&mut Tensor; 4] {
        [&mut self.w1, &mut self.b1, &mut self.w2, &mut self.b2]
    }

    /// Record the parameters on `tape`, as trainable leaves or constants.
    pub fn bind(&self, tape: &mut Tape, trainable: bool) -> MaskerVars {
        let mut leaf = |t: &Tensor| {
            if trainable {
                tape.param(t.clone())
            } else {
                tape.constant(t.clone())
            }
        };
        MaskerVars {
            w1: leaf(&self.w1),
            b1: leaf(&self.b1),
            w2: leaf(&self.w2),
            b2: leaf(&self.b2),
        }
    }
}

/// `P = sym(sigmoid(relu(A·W1 + b1)·W2 + b2))` with a zero diagonal.
pub fn edge_probabilities_on_tape(tape: &mut Tape, adjacency: Var, p: &MaskerVars) -> Result<Var> {
    let n = tape.value(adjacency).rows();
    if tape.value(p.w1).rows() != n || tape.value(p.w2).cols() != n {
        return Err(Error::Contract(format!(
            "masker built for {} nodes applied to a {n}-node graph",
            tape.value(p.w1).rows()
        )));
    }
    let h = tape.matmul(adjacency, p.w1)?;
    let h = tape.add_row(h, p.b1)?;
    let h = tape.relu(h);
    let o = tape.matmul(h, p.w2)?;
    let o = tape.add_row(o, p.b2)?;
    let s = tape.sigmoid(o);
    let st = tape.transpose(s);
    let sum = tape.add(s, st)?;
    let sym = tape.scale(sum, 0.5);
    let off_diag = tape.constant(Tensor::from_fn(n, n, |i, j| f64::from(u8::from(i != j))));
    tape.mul(sym, off_diag)
}

/// Edge probabilities without recording gradients.
pub fn edge_probabilities(adjacency: &Tensor, params: &MaskerParams) -> Result<Tensor> {
    let mut tape = Tape::new();
    let a = tape.constant(adjacency.clone());
    let vars = params.bind(&mut tape, false);
    let p = edge_probabilities_on_tape(&mut tape, a, &vars)?;
    Ok(tape.value(p).clone())
}

/// Result of grouped Gumbel-Softmax selection on a tape.
#[derive(Clone, Debug)]
pub struct Selection {
    /// `N×N` mask; binary with straight-through gradient in hard mode,
    /// soft weights otherwise.
    pub mask: Var,
    /// Binary one-hot-per-group selection, `N×N`.
    pub hard: Tensor,
    /// Soft weights over the upper triangle, `1×E`.
    pub soft: Var,
}

/// Grouped Gumbel-Softmax with externally supplied noise (`1×E`, upper triangle order).
pub fn gumbel_select_with_noise(
    tape: &mut Tape,
    probabilities: Var,
    layout: &GroupLayout,
    tau: f64,
    noise: &Tensor,
    hard: bool,
) -> Result<Selection> {
    if !(tau > 0.0) {
        return Err(Error::Config(format!("Gumbel temperature {tau} must be positive")));
    }
    let n = layout.n();
    let e = layout.edge_count();
    if tape.value(probabilities).dims() != (n, n) {
        return Err(Error::Shape {
            op: "gumbel_select",
            lhs: tape.value(probabilities).shape().to_vec(),
            rhs: vec![n, n],
        });
    }
    if noise.numel() != e {
        return Err(Error::Shape {
            op: "gumbel_select",
            lhs: noise.shape().to_vec(),
            rhs: vec![1, e],
        });
    }
    let upper = tape.gather(probabilities, layout.upper_gather(), vec![1, e])?;
    let shifted = tape.add_scalar(upper, LOGIT_EPS);
    let logits = tape.log(shifted)?;
    let g = tape.constant(noise.clone());
    let noisy = tape.add(logits, g)?;
    let scaled = tape.scale(noisy, 1.0 / tau);
    let soft = tape.group_softmax(scaled, layout.groups().to_vec())?;

    let mut onehot = vec![0.0; e];
    {
        let scores = tape.value(noisy).data();
        for grp in layout.groups() {
            let best = grp
                .clone()
                .max_by(|&a, &b| scores[a].total_cmp(&scores[b]).then(b.cmp(&a)))
                .expect("groups are non-empty");
            onehot[best] = 1.0;
        }
    }
    let onehot = Tensor::new(vec![1, e], onehot)?;
    let sel = if hard {
        tape.straight_through(onehot.clone(), soft)?
    } else {
        soft
    };
    let scatter = layout.symmetric_scatter();
    let mask = tape.gather(sel, scatter.clone(), vec![n, n])?;
    let hard_full = Tensor::from_fn(n, n, |i, j| match scatter[i * n + j] {
        Some(k) => onehot.data()[k],
        None => 0.0,
    });
    Ok(Selection {
        mask,
        hard: hard_full,
        soft,
    })
}

/// Grouped Gumbel-Softmax drawing its noise from `rng`.
pub fn gumbel_select(
    tape: &mut Tape,
    probabilities: Var,
    layout: &GroupLayout,
    tau: f64,
    rng: &mut RngStream,
    hard: bool,
) -> Result<Selection> {
    let noise = gumbel_sample(rng, 1, layout.edge_count());
    gumbel_select_with_noise(tape, probabilities, layout, tau, &noise, hard)
}

/// Probabilities and the binary selection sampled from them.
#[derive(Clone, Debug, PartialEq)]
pub struct EdgeMask {
    pub probabilities: Tensor,
    pub selection: Tensor,
}

impl EdgeMask {
    pub fn selected_count(&self) -> usize {
        let n = self.selection.rows();
        upper_pairs(n)
            .into_iter()
            .filter(|&(i, j)| self.selection.get(i, j) != 0.0)
            .count()
    }
}

/// Sample a hard mask for one graph without recording gradients.
pub fn sample_mask(
    graph: &BrainGraph,
    params: &MaskerParams,
    layout: &GroupLayout,
    tau: f64,
    rng: &mut RngStream,
) -> Result<EdgeMask> {
    let mut tape = Tape::new();
    let a = tape.constant(graph.adjacency.clone());
    let vars = params.bind(&mut tape, false);
    let p = edge_probabilities_on_tape(&mut tape, a, &vars)?;
    let sel = gumbel_select(&mut tape, p, layout, tau, rng, true)?;
    Ok(EdgeMask {
        probabilities: tape.value(p).clone(),
        selection: sel.hard,
    })
}

/// Noise-free selection: the most probable edge of every group.
pub fn salient_edges(graph: &BrainGraph, params: &MaskerParams, layout: &GroupLayout) -> Result<Tensor> {
    let mut tape = Tape::new();
    let a = tape.constant(graph.adjacency.clone());
    let vars = params.bind(&mut tape, false);
    let p = edge_probabilities_on_tape(&mut tape, a, &vars)?;
    let zero = Tensor::zeros(1, layout.edge_count());
    Ok(gumbel_select_with_noise(&mut tape, p, layout, 1.0, &zero, true)?.hard)
}

/// Diagnostics from substructure extraction.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct SubstructureInfo {
    /// No nonzero edge survived the mask.
    pub empty: bool,
}

/// `A_sub = A ⊙ P_edge`; features and label are carried over.
pub fn extract_substructure(
    graph: &BrainGraph,
    selection: &Tensor,
) -> Result<(BrainGraph, SubstructureInfo)> {
    let a_sub = graph
        .adjacency
        .zip_map(selection, "extract_substructure", |a, m| a * m)?;
    let empty = a_sub.data().iter().all(|&v| v == 0.0);
    Ok((graph.with_adjacency(a_sub), SubstructureInfo { empty }))
}

/// Mean hard selection over `graphs × samples` resamples.
pub fn selection_frequency(
    params: &MaskerParams,
    layout: &GroupLayout,
    tau: f64,
    graphs: &[&BrainGraph],
    samples: usize,
    rng: &mut RngStream,
) -> Result<Tensor> {
    let n = layout.n();
    let mut freq = Tensor::zeros(n, n);
    if graphs.is_empty() || samples == 0 {
        return Ok(freq);
    }
    for g in graphs {
        let mut tape = Tape::new();
        let a = tape.constant(g.adjacency.clone());
        let vars = params.bind(&mut tape, false);
        let p = edge_probabilities_on_tape(&mut tape, a, &vars)?;
        for _ in 0..samples {
            let noise = gumbel_sample(rng, 1, layout.edge_count());
            let sel = gumbel_select_with_noise(&mut tape, p, layout, tau, &noise, true)?;
            for (f, h) in freq.data_mut().iter_mut().zip(sel.hard.data()) {
                *f += h;
            }
        }
    }
    let total = (graphs.len() * samples) as f64;
    freq.data_mut().iter_mut().for_each(|f| *f /= total);
    Ok(freq)
}

/// On-disk masker: parameters as nested lists plus selection settings.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MaskerCheckpoint {
    pub version: u32,
    #[serde(rename = "N")]
    pub n: usize,
    pub h: usize,
    #[serde(rename = "K")]
    pub k: usize,
    #[serde(default)]
    pub grouping: Grouping,
    pub tau: f64,
    pub w1: Vec<Vec<f64>>,
    pub b1: Vec<f64>,
    pub w2: Vec<Vec<f64>>,
    pub b2: Vec<f64>,
}

impl MaskerCheckpoint {
    pub fn new(params: &MaskerParams, layout: &GroupLayout, tau: f64) -> Self {
        MaskerCheckpoint {
            version: CHECKPOINT_VERSION,
            n: params.n(),
            h: params.hidden(),
            k: layout.k(),
            grouping: layout.grouping(),
            tau,
            w1: params.w1.to_rows(),
            b1: params.b1.data().to_vec(),
            w2: params.w2.to_rows(),
            b2: params.b2.data().to_vec(),
        }
    }

    pub fn params(&self) -> Result<MaskerParams> {
        let p = MaskerParams {
            w1: Tensor::from_rows(&self.w1)?,
            b1: Tensor::new(vec![1, self.b1.len()], self.b1.clone())?,
            w2: Tensor::from_rows(&self.w2)?,
            b2: Tensor::new(vec![1, self.b2.len()], self.b2.clone())?,
        };
        if p.w1.dims() != (self.n, self.h)
            || p.b1.numel() != self.h
            || p.w2.dims() != (self.h, self.n)
            || p.b2.numel() != self.n
        {
            return Err(Error::Contract(
                "masker checkpoint arrays disagree with N and h".into(),
            ));
        }
        Ok(p)
    }

    pub fn layout(&self) -> Result<GroupLayout> {
        GroupLayout::new(self.n, self.k, self.grouping)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn random_sym(n: usize, seed: u64) -> Tensor {
        let mut rng = RngStream::new(seed);
        let mut a = Tensor::zeros(n, n);
        for i in 0..n {
            for j in i + 1..n {
                let v = rng.uniform_range(-1.0, 1.0);
                a.set(i, j, v);
                a.set(j, i, v);
            }
        }
        a
    }

    #[test]
    fn upper_index_round_trips() {
        for (k, (i, j)) in upper_pairs(7).into_iter().enumerate() {
            assert_eq!(upper_index(7, i, j), k);
        }
    }

    #[test]
    fn layout_covers_upper_triangle() {
        let l = GroupLayout::new(20, 10, Grouping::Size).unwrap();
        assert_eq!(l.groups().len(), 19);
        assert_eq!(l.complete_groups(), 19);
        let l = GroupLayout::new(7, 4, Grouping::Size).unwrap();
        let covered: usize = l.groups().iter().map(|g| g.len()).sum();
        assert_eq!(covered, 21);
        assert_eq!(l.groups().last().unwrap().len(), 1);
        let l = GroupLayout::new(20, 10, Grouping::Count).unwrap();
        assert_eq!(l.groups().len(), 10);
    }

    #[test]
    fn zero_params_give_one_half() {
        let p = edge_probabilities(&random_sym(6, 1), &MaskerParams::zeros(6, 4)).unwrap();
        for i in 0..6 {
            for j in 0..6 {
                assert_eq!(p.get(i, j), if i == j { 0.0 } else { 0.5 });
            }
        }
    }

    #[test]
    fn probabilities_symmetric() {
        let mut rng = RngStream::new(2);
        let params = MaskerParams::init(8, 16, &mut rng);
        let p = edge_probabilities(&random_sym(8, 3), &params).unwrap();
        assert!(p.is_symmetric(0.0));
    }

    #[test]
    fn wrong_size_graph_is_contract_error() {
        let params = MaskerParams::zeros(6, 4);
        assert!(matches!(
            edge_probabilities(&random_sym(5, 1), &params),
            Err(Error::Contract(_))
        ));
    }

    #[test]
    fn nonpositive_temperature_is_config_error() {
        let layout = GroupLayout::half_n(6).unwrap();
        let mut tape = Tape::new();
        let p = tape.constant(Tensor::full(6, 6, 0.5));
        let mut rng = RngStream::new(0);
        assert!(matches!(
            gumbel_select(&mut tape, p, &layout, 0.0, &mut rng, true),
            Err(Error::Config(_))
        ));
    }

    #[test]
    fn hard_selection_one_per_group_and_symmetric() {
        let n = 9;
        let layout = GroupLayout::new(n, 4, Grouping::Size).unwrap();
        let mut rng = RngStream::new(4);
        let params = MaskerParams::init(n, 8, &mut rng);
        let g = BrainGraph {
            id: "g".into(),
            adjacency: random_sym(n, 5),
            features: Tensor::eye(n),
            label: None,
        };
        let mask = sample_mask(&g, &params, &layout, 1.0, &mut rng).unwrap();
        assert!(mask.selection.is_symmetric(0.0));
        assert_eq!(mask.selected_count(), layout.groups().len());
        for grp in layout.groups() {
            let picked = upper_pairs(n)[grp.clone()]
                .iter()
                .filter(|&&(i, j)| mask.selection.get(i, j) == 1.0)
                .count();
            assert_eq!(picked, 1);
        }
    }

    #[test]
    fn substructure_edge_cases() {
        let n = 5;
        let g = BrainGraph {
            id: "g".into(),
            adjacency: random_sym(n, 6),
            features: Tensor::eye(n),
            label: Some(1),
        };
        let ones = Tensor::from_fn(n, n, |i, j| f64::from(u8::from(i != j)));
        let (sub, info) = extract_substructure(&g, &ones).unwrap();
        assert_eq!(sub.adjacency, g.adjacency);
        assert!(!info.empty);
        let (sub, info) = extract_substructure(&g, &Tensor::zeros(n, n)).unwrap();
        assert!(sub.adjacency.data().iter().all(|&v| v == 0.0));
        assert!(info.empty);
        assert_eq!(sub.label, Some(1));
        assert_eq!(sub.features, g.features);
    }

    #[test]
    fn single_sample_frequency_equals_the_mask() {
        let n = 6;
        let layout = GroupLayout::half_n(n).unwrap();
        let params = MaskerParams::init(n, 8, &mut RngStream::new(1));
        let g = BrainGraph {
            id: "g".into(),
            adjacency: random_sym(n, 7),
            features: Tensor::eye(n),
            label: None,
        };
        let freq =
            selection_frequency(&params, &layout, 1.0, &[&g], 1, &mut RngStream::new(8)).unwrap();
        let mask = sample_mask(&g, &params, &layout, 1.0, &mut RngStream::new(8)).unwrap();
        assert_eq!(freq, mask.selection);
    }
}
