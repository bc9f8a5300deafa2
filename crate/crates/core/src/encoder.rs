//! GIN encoder with bilinear second-order pooling, plus the linear
//! classification head used during supervised pre-training.

use serde::{Deserialize, Serialize};

use crate::data::BrainGraph;
use crate::error::{Error, Result};
use crate::rng::RngStream;
use crate::tensor::{Tape, Tensor, Var};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EncoderConfig {
    pub layers: usize,
    pub hidden: usize,
    pub out: usize,
    /// Half-width multiplier on the `1/sqrt(fan_in)` uniform init.
    pub init_scale: f64,
}

impl Default for EncoderConfig {
    fn default() -> Self {
        EncoderConfig {
            layers: 2,
            hidden: 32,
            out: 32,
            init_scale: 1.0,
        }
    }
}

/// One GIN layer: `H' = W_b·relu(W_a·((1 + ε)·H + A·H) + b_a) + b_b`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GinLayer {
    pub eps: Tensor,
    pub w_a: Tensor,
    pub b_a: Tensor,
    pub w_b: Tensor,
    pub b_b: Tensor,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EncoderParams {
    pub layers: Vec<GinLayer>,
    /// `d(d+1)/2 × d_out` map applied to the pooled upper triangle.
    pub proj_w: Tensor,
    pub proj_b: Tensor,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClassifierHead {
    pub w: Tensor,
    pub b: Tensor,
}

#[derive(Clone, Copy, Debug)]
pub struct GinLayerVars {
    pub eps: Var,
    pub w_a: Var,
    pub b_a: Var,
    pub w_b: Var,
    pub b_b: Var,
}

#[derive(Clone, Debug)]
pub struct EncoderVars {
    pub layers: Vec<GinLayerVars>,
    pub proj_w: Var,
    pub proj_b: Var,
}

impl EncoderVars {
    /// Leaves in the same order as [`EncoderParams::tensors_mut`].
    pub fn all(&self) -> Vec<Var> {
        let mut v = Vec::with_capacity(self.layers.len() * 5 + 2);
        for l in &self.layers {
            v.extend([l.eps, l.w_a, l.b_a, l.w_b, l.b_b]);
        }
        v.push(self.proj_w);
        v.push(self.proj_b);
        v
    }
}

#[derive(Clone, Copy, Debug)]
pub struct HeadVars {
    pub w: Var,
    pub b: Var,
}

fn uniform(rng: &mut RngStream, rows: usize, cols: usize, fan_in: usize, scale: f64) -> Tensor {
    let bound = scale / (fan_in as f64).sqrt();
    Tensor::from_fn(rows, cols, |_, _| rng.uniform_range(-bound, bound))
}

fn leaf(tape: &mut Tape, t: &Tensor, trainable: bool) -> Var {
    if trainable {
        tape.param(t.clone())
    } else {
        tape.constant(t.clone())
    }
}

pub fn pooled_width(d: usize) -> usize {
    d * (d + 1) / 2
}

impl EncoderParams {
    pub fn init(input_dim: usize, cfg: &EncoderConfig, rng: &mut RngStream) -> Result<Self> {
        if cfg.layers == 0 || cfg.hidden == 0 || cfg.out == 0 {
            return Err(Error::Config("encoder sizes must be positive".into()));
        }
        let s = cfg.init_scale;
        let mut layers = Vec::with_capacity(cfg.layers);
        let mut d_in = input_dim;
        for _ in 0..cfg.layers {
            let d = cfg.hidden;
            layers.push(GinLayer {
                eps: Tensor::scalar(0.0),
                w_a: uniform(rng, d_in, d, d_in, s),
                b_a: uniform(rng, 1, d, d_in, s),
                w_b: uniform(rng, d, d, d, s),
                b_b: uniform(rng, 1, d, d, s),
            });
            d_in = d;
        }
        let p = pooled_width(cfg.hidden);
        Ok(EncoderParams {
            layers,
            proj_w: uniform(rng, p, cfg.out, p, s),
            proj_b: uniform(rng, 1, cfg.out, p, s),
        })
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].w_a.rows()
    }

    pub fn hidden(&self) -> usize {
        self.layers.last().unwrap().w_b.cols()
    }

    pub fn out_dim(&self) -> usize {
        self.proj_w.cols()
    }

    pub fn tensors(&self) -> Vec<&Tensor> {
        let mut v: Vec<&Tensor> = Vec::new();
        for l in &self.layers {
            v.extend([&l.eps, &l.w_a, &l.b_a, &l.w_b, &l.b_b]);
        }
        v.push(&self.proj_w);
        v.push(&self.proj_b);
        v
    }

    pub fn tensors_mut(&mut self) -> Vec<&mut Tensor> {
        let mut v: Vec<&mut Tensor> = Vec::new();
        for l in &mut self.layers {
            v.extend([&mut l.eps, &mut l.w_a, &mut l.b_a, &mut l.w_b, &mut l.b_b]);
        }
        v.push(&mut self.proj_w);
        v.push(&mut self.proj_b);
        v
    }

    pub fn bind(&self, tape: &mut Tape, trainable: bool) -> EncoderVars {
        EncoderVars {
            layers: self
                .layers
                .iter()
                .map(|l| GinLayerVars {
                    eps: leaf(tape, &l.eps, trainable),
                    w_a: leaf(tape, &l.w_a, trainable),
                    b_a: leaf(tape, &l.b_a, trainable),
                    w_b: leaf(tape, &l.w_b, trainable),
                    b_b: leaf(tape, &l.b_b, trainable),
                })
                .collect(),
            proj_w: leaf(tape, &self.proj_w, trainable),
            proj_b: leaf(tape, &self.proj_b, trainable),
        }
    }
}

impl ClassifierHead {
    pub fn init(d_out: usize, rng: &mut RngStream) -> Self {
        ClassifierHead {
            w: uniform(rng, d_out, 2, d_out, 1.0),
            b: Tensor::zeros(1, 2),
        }
    }

    pub fn tensors_mut(&mut self) -> [&mut Tensor; 2] {
        [&mut self.w, &mut self.b]
    }

    pub fn bind(&self, tape: &mut Tape, trainable: bool) -> HeadVars {
        HeadVars {
            w: leaf(tape, &self.w, trainable),
            b: leaf(tape, &self.b, trainable),
        }
    }
}

pub fn gin_layer(tape: &mut Tape, h: Var, adjacency: Var, layer: &GinLayerVars) -> Result<Var> {
    let (n, _) = tape.value(h).dims();
    let (an, am) = tape.value(adjacency).dims();
    if an != n || am != n {
        return Err(Error::Contract(format!(
            "adjacency {an}×{am} does not match {n} node rows"
        )));
    }
    let one_plus_eps = tape.add_scalar(layer.eps, 1.0);
    let self_term = tape.mul_scalar_var(h, one_plus_eps)?;
    let neigh = tape.matmul(adjacency, h)?;
    let agg = tape.add(self_term, neigh)?;
    let z = tape.matmul(agg, layer.w_a)?;
    let z = tape.add_row(z, layer.b_a)?;
    let z = tape.relu(z);
    let z = tape.matmul(z, layer.w_b)?;
    tape.add_row(z, layer.b_b)
}

/// Flattened upper triangle (diagonal included) of `HᵀH / N`, as `1 × d(d+1)/2`.
pub fn bilinear_pool(tape: &mut Tape, h: Var) -> Result<Var> {
    let (n, d) = tape.value(h).dims();
    if n == 0 {
        return Err(Error::Contract("pooling an empty node set".into()));
    }
    let ht = tape.transpose(h);
    let s = tape.matmul(ht, h)?;
    let s = tape.scale(s, 1.0 / n as f64);
    let index = (0..d)
        .flat_map(|i| (i..d).map(move |j| Some(i * d + j)))
        .collect();
    tape.gather(s, index, vec![1, pooled_width(d)])
}

/// Graph embedding `1 × d_out` from node features and a (possibly masked) adjacency.
pub fn encode_on_tape(tape: &mut Tape, adjacency: Var, features: Var, p: &EncoderVars) -> Result<Var> {
    let mut h = features;
    let last = p.layers.len() - 1;
    for (l, layer) in p.layers.iter().enumerate() {
        h = gin_layer(tape, h, adjacency, layer)?;
        if l < last {
            h = tape.relu(h);
        }
    }
    let pooled = bilinear_pool(tape, h)?;
    let z = tape.matmul(pooled, p.proj_w)?;
    tape.add_row(z, p.proj_b)
}

/// Embedding of one graph without recording gradients.
pub fn encode(graph: &BrainGraph, params: &EncoderParams) -> Result<Tensor> {
    if graph.features.cols() != params.input_dim() {
        return Err(Error::Contract(format!(
            "graph features have width {}, encoder expects {}",
            graph.features.cols(),
            params.input_dim()
        )));
    }
    let mut tape = Tape::new();
    let a = tape.constant(graph.adjacency.clone());
    let x = tape.constant(graph.features.clone());
    let vars = params.bind(&mut tape, false);
    let z = encode_on_tape(&mut tape, a, x, &vars)?;
    Ok(tape.value(z).clone())
}

/// Stack embeddings of many graphs into a `B × d_out` matrix.
pub fn encode_batch(graphs: &[&BrainGraph], params: &EncoderParams) -> Result<Tensor> {
    let rows = graphs
        .iter()
        .map(|g| encode(g, params).map(|z| z.into_data()))
        .collect::<Result<Vec<_>>>()?;
    Tensor::from_rows(&rows)
}

pub fn head_logits(tape: &mut Tape, z: Var, head: &HeadVars) -> Result<Var> {
    let l = tape.matmul(z, head.w)?;
    tape.add_row(l, head.b)
}

/// Mean cross-entropy (nats) of integer labels under two-class logits.
pub fn cross_entropy(tape: &mut Tape, logits: Var, labels: &[u8]) -> Result<Var> {
    let labels: Vec<usize> = labels.iter().map(|&y| y as usize).collect();
    if let Some(bad) = labels.iter().find(|&&y| y > 1) {
        return Err(Error::Contract(format!("label {bad} is not 0 or 1")));
    }
    tape.cross_entropy(logits, &labels)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small_params(input: usize, rng: &mut RngStream) -> EncoderParams {
        EncoderParams::init(
            input,
            &EncoderConfig {
                layers: 2,
                hidden: 4,
                out: 3,
                init_scale: 1.0,
            },
            rng,
        )
        .unwrap()
    }

    #[test]
    fn empty_adjacency_zero_eps_is_pure_mlp() {
        let mut rng = RngStream::new(1);
        let params = small_params(3, &mut rng);
        let x = Tensor::from_fn(5, 3, |_, _| rng.normal());
        let mut tape = Tape::new();
        let a = tape.constant(Tensor::zeros(5, 5));
        let xv = tape.constant(x.clone());
        let vars = params.bind(&mut tape, false);
        let out = gin_layer(&mut tape, xv, a, &vars.layers[0]).unwrap();
        let l = &params.layers[0];
        let mut hidden = x.matmul(&l.w_a).unwrap();
        for i in 0..5 {
            for j in 0..4 {
                let v = (hidden.get(i, j) + l.b_a.data()[j]).max(0.0);
                hidden.set(i, j, v);
            }
        }
        let mut want = hidden.matmul(&l.w_b).unwrap();
        for i in 0..5 {
            for j in 0..4 {
                let v = want.get(i, j) + l.b_b.data()[j];
                want.set(i, j, v);
            }
        }
        assert!(tape.value(out).max_abs_diff(&want) < 1e-14);
    }

    #[test]
    fn single_node_pooling_is_outer_product() {
        let h = Tensor::new(vec![1, 3], vec![1.0, -2.0, 0.5]).unwrap();
        let mut tape = Tape::new();
        let hv = tape.constant(h);
        let p = bilinear_pool(&mut tape, hv).unwrap();
        assert_eq!(tape.value(p).data(), &[1.0, -2.0, 0.5, 4.0, -1.0, 0.25]);
    }

    #[test]
    fn identical_graphs_identical_embeddings() {
        let mut rng = RngStream::new(2);
        let params = small_params(4, &mut rng);
        let g = BrainGraph {
            id: "a".into(),
            adjacency: Tensor::from_fn(4, 4, |i, j| if i == j { 0.0 } else { 0.3 }),
            features: Tensor::eye(4),
            label: None,
        };
        assert_eq!(encode(&g, &params).unwrap(), encode(&g.clone(), &params).unwrap());
    }

    #[test]
    fn cross_entropy_rejects_label_two() {
        let mut tape = Tape::new();
        let l = tape.constant(Tensor::zeros(1, 2));
        assert!(matches!(cross_entropy(&mut tape, l, &[2]), Err(Error::Contract(_))));
    }
}
