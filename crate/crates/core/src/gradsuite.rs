//! Central-difference checks of every differentiable tape op and of both
//! training objectives at random points.

use crate::data::BrainGraph;
use crate::encoder::{encode_on_tape, gin_layer, bilinear_pool, ClassifierHead, EncoderConfig, EncoderParams, EncoderVars};
use crate::error::Result;
use crate::masker::{GroupLayout, Grouping, MaskerParams, MaskerVars};
use crate::mi::{gaussian_gram_on_tape, median_bandwidth, mutual_information_with_bandwidth, normalize_trace_on_tape, renyi_entropy_on_tape};
use crate::rng::{gumbel_sample, RngStream};
use crate::tensor::{grad_check_report, Tape, Tensor, Var};
use crate::train::{cca_loss_on_tape, ib_loss_on_tape, ssl_loss_on_tape, standardize_on_tape, IbBatch};

/// Acceptance bound on the maximum relative error.
pub const GRAD_TOLERANCE: f64 = 1e-5;

/// Finite-difference step.
pub const GRAD_EPS: f64 = 1e-5;

/// Aggregate of one check over all random points.
#[derive(Clone, Debug, PartialEq)]
pub struct OpCheck {
    pub name: String,
    pub max_rel_error: f64,
    pub checked: usize,
    pub skipped: usize,
}

impl OpCheck {
    pub fn passed(&self) -> bool {
        self.max_rel_error < GRAD_TOLERANCE && self.checked > 0
    }
}

type Objective = Box<dyn Fn(&mut Tape, Var) -> Result<Var>>;

struct Case {
    name: &'static str,
    point: Box<dyn Fn(&mut RngStream) -> Tensor>,
    f: Objective,
}

fn normal(rows: usize, cols: usize) -> Box<dyn Fn(&mut RngStream) -> Tensor> {
    Box::new(move |rng| Tensor::from_fn(rows, cols, |_, _| rng.normal()))
}

fn positive(rows: usize, cols: usize) -> Box<dyn Fn(&mut RngStream) -> Tensor> {
    Box::new(move |rng| Tensor::from_fn(rows, cols, |_, _| rng.uniform_range(0.5, 2.0)))
}

fn fixed(rng: &mut RngStream, rows: usize, cols: usize) -> Tensor {
    Tensor::from_fn(rows, cols, |_, _| rng.normal())
}

/// `Σ w ⊙ v`: a scalar with a generic gradient.
fn weighted(tape: &mut Tape, v: Var, w: &Tensor) -> Result<Var> {
    let wv = tape.constant(w.clone());
    let p = tape.mul(v, wv)?;
    Ok(tape.sum(p))
}

fn unary(name: &'static str, point: Box<dyn Fn(&mut RngStream) -> Tensor>, w: Tensor, op: fn(&mut Tape, Var) -> Result<Var>) -> Case {
    Case {
        name,
        point,
        f: Box::new(move |t, x| {
            let y = op(t, x)?;
            weighted(t, y, &w)
        }),
    }
}

fn op_cases(rng: &mut RngStream) -> Vec<Case> {
    let (r, c) = (4, 3);
    let w43 = fixed(rng, r, c);
    let w44 = fixed(rng, r, r);
    let w33 = fixed(rng, c, c);
    let w34 = fixed(rng, c, r);
    let w1c = fixed(rng, 1, c);
    let w23 = fixed(rng, 2, c);
    let w8c = fixed(rng, 2 * r, c);
    let other43 = fixed(rng, r, c);
    let other34 = fixed(rng, c, r);
    let row = fixed(rng, 1, c);
    let scalar = Tensor::scalar(1.7);
    let mut cases = vec![
        {
            let (b, w) = (other34.clone(), w44.clone());
            Case {
                name: "matmul/lhs",
                point: normal(r, c),
                f: Box::new(move |t, x| {
                    let bv = t.constant(b.clone());
                    let y = t.matmul(x, bv)?;
                    weighted(t, y, &w)
                }),
            }
        },
        {
            let (a, w) = (other43.clone(), w44.clone());
            Case {
                name: "matmul/rhs",
                point: normal(c, r),
                f: Box::new(move |t, x| {
                    let av = t.constant(a.clone());
                    let y = t.matmul(av, x)?;
                    weighted(t, y, &w)
                }),
            }
        },
        unary("transpose", normal(r, c), w34.clone(), |t, x| Ok(t.transpose(x))),
    ];
    for (name, k) in [("add", 0), ("sub/lhs", 1), ("sub/rhs", 2), ("mul", 3)] {
        let (o, w) = (other43.clone(), w43.clone());
        cases.push(Case {
            name,
            point: normal(r, c),
            f: Box::new(move |t, x| {
                let ov = t.constant(o.clone());
                let y = match k {
                    0 => t.add(x, ov)?,
                    1 => t.sub(x, ov)?,
                    2 => t.sub(ov, x)?,
                    _ => t.mul(x, ov)?,
                };
                weighted(t, y, &w)
            }),
        });
    }
    cases.push(unary("scale", normal(r, c), w43.clone(), |t, x| Ok(t.scale(x, -2.5))));
    cases.push(unary("add_scalar", normal(r, c), w43.clone(), |t, x| Ok(t.add_scalar(x, 0.75))));
    for (name, k) in [("add_row/matrix", 0), ("add_row/row", 1), ("mul_row/matrix", 2), ("mul_row/row", 3)] {
        let (m, rw, w) = (other43.clone(), row.clone(), w43.clone());
        cases.push(Case {
            name,
            point: if k % 2 == 0 { normal(r, c) } else { normal(1, c) },
            f: Box::new(move |t, x| {
                let y = match k {
                    0 => {
                        let v = t.constant(rw.clone());
                        t.add_row(x, v)?
                    }
                    1 => {
                        let v = t.constant(m.clone());
                        t.add_row(v, x)?
                    }
                    2 => {
                        let v = t.constant(rw.clone());
                        t.mul_row(x, v)?
                    }
                    _ => {
                        let v = t.constant(m.clone());
                        t.mul_row(v, x)?
                    }
                };
                weighted(t, y, &w)
            }),
        });
    }
    for (name, k) in [
        ("mul_scalar_var/matrix", 0),
        ("mul_scalar_var/scalar", 1),
        ("div_scalar_var/matrix", 2),
        ("div_scalar_var/scalar", 3),
    ] {
        let (m, s, w) = (other43.clone(), scalar.clone(), w43.clone());
        cases.push(Case {
            name,
            point: match k {
                0 | 2 => normal(r, c),
                _ => positive(1, 1),
            },
            f: Box::new(move |t, x| {
                let y = match k {
                    0 => {
                        let v = t.constant(s.clone());
                        t.mul_scalar_var(x, v)?
                    }
                    1 => {
                        let v = t.constant(m.clone());
                        t.mul_scalar_var(v, x)?
                    }
                    2 => {
                        let v = t.constant(s.clone());
                        t.div_scalar_var(x, v)?
                    }
                    _ => {
                        let v = t.constant(m.clone());
                        t.div_scalar_var(v, x)?
                    }
                };
                weighted(t, y, &w)
            }),
        });
    }
    cases.push(unary("row_softmax", normal(r, c), w43.clone(), |t, x| Ok(t.row_softmax(x))));
    cases.push(unary("group_softmax", normal(r, c), w43.clone(), |t, x| {
        t.group_softmax(x, vec![0..5, 5..7, 7..12])
    }));
    cases.push(unary("sigmoid", normal(r, c), w43.clone(), |t, x| Ok(t.sigmoid(x))));
    cases.push(unary("relu", normal(r, c), w43.clone(), |t, x| Ok(t.relu(x))));
    cases.push(unary("log", positive(r, c), w43.clone(), |t, x| t.log(x)));
    cases.push(unary("exp", normal(r, c), w43.clone(), |t, x| t.exp(x)));
    cases.push(unary("sqrt", positive(r, c), w43.clone(), |t, x| t.sqrt(x)));
    cases.push(unary("pow", positive(r, c), w43.clone(), |t, x| t.pow(x, -1.3)));
    cases.push(Case {
        name: "sum",
        point: normal(r, c),
        f: Box::new(|t, x| {
            let s = t.sum(x);
            t.mul(s, s)
        }),
    });
    cases.push(unary("mean", normal(r, c), Tensor::scalar(1.3), |t, x| Ok(t.mean(x))));
    cases.push(unary("trace", normal(r, r), Tensor::scalar(-0.7), |t, x| t.trace(x)));
    cases.push(unary("frob_sq", normal(r, c), Tensor::scalar(0.9), |t, x| Ok(t.frob_sq(x))));
    cases.push(unary("col_mean", normal(r, c), w1c.clone(), |t, x| Ok(t.col_mean(x))));
    cases.push(unary("col_std", normal(r, c), w1c.clone(), |t, x| Ok(t.col_std(x, 1e-8))));
    {
        let (o, w) = (other43.clone(), w8c.clone());
        cases.push(Case {
            name: "concat_rows",
            point: normal(r, c),
            f: Box::new(move |t, x| {
                let ov = t.constant(o.clone());
                let y = t.concat_rows(&[ov, x])?;
                weighted(t, y, &w)
            }),
        });
    }
    cases.push(unary("slice_rows", normal(r, c), w23.clone(), |t, x| t.slice_rows(x, 1, 3)));
    cases.push(unary("gather", normal(r, c), w33.clone(), |t, x| {
        let index = vec![Some(0), Some(4), None, Some(11), Some(4), Some(7), None, Some(2), Some(9)];
        t.gather(x, index, vec![3, 3])
    }));
    cases.push(unary("sq_dists", normal(r, c), w44.clone(), |t, x| Ok(t.sq_dists(x))));
    cases.push(Case {
        name: "cross_entropy",
        point: normal(r, c),
        f: Box::new(|t, x| t.cross_entropy(x, &[0, 2, 1, 2])),
    });
    cases.push(unary("sym_eigvals", normal(r, r), fixed(rng, 1, r), |t, x| {
        let xt = t.transpose(x);
        let s = t.add(x, xt)?;
        t.sym_eigvals(s)
    }));
    cases
}

struct Tiny {
    graphs: Vec<BrainGraph>,
    masker: MaskerParams,
    encoder: EncoderParams,
    head: ClassifierHead,
    layout: GroupLayout,
    noise: Vec<Tensor>,
    bandwidths: (f64, f64),
}

fn tiny_graph(id: usize, n: usize, label: u8, rng: &mut RngStream) -> BrainGraph {
    let mut a = Tensor::zeros(n, n);
    for i in 0..n {
        for j in i + 1..n {
            let v = rng.uniform_range(-0.9, 0.9);
            a.set(i, j, v);
            a.set(j, i, v);
        }
    }
    let features = Tensor::from_fn(n, n, |i, j| if i == j { 1.0 } else { a.get(i, j) });
    BrainGraph {
        id: format!("g{id}"),
        adjacency: a,
        features,
        label: Some(label),
    }
}

fn tiny(rng: &mut RngStream) -> Result<Tiny> {
    let n = 6;
    let graphs: Vec<BrainGraph> = (0..6).map(|i| tiny_graph(i, n, (i % 2) as u8, rng)).collect();
    let cfg = EncoderConfig {
        layers: 2,
        hidden: 4,
        out: 3,
        init_scale: 1.0,
    };
    let masker = MaskerParams::init(n, 4, rng);
    let encoder = EncoderParams::init(n, &cfg, rng)?;
    let head = ClassifierHead::init(encoder.out_dim(), rng);
    let layout = GroupLayout::new(n, 3, Grouping::Size)?;
    let noise = graphs.iter().map(|_| gumbel_sample(rng, 1, layout.edge_count())).collect();
    let mut tiny = Tiny {
        graphs,
        masker,
        encoder,
        head,
        layout,
        noise,
        bandwidths: (1.0, 1.0),
    };
    let mut tape = Tape::new();
    let ev = tiny.encoder.bind(&mut tape, false);
    let mut zs = Vec::new();
    for g in &tiny.graphs {
        let a = tape.constant(g.adjacency.clone());
        let x = tape.constant(g.features.clone());
        zs.push(encode_on_tape(&mut tape, a, x, &ev)?);
    }
    let z = tape.concat_rows(&zs)?;
    let bw = median_bandwidth(tape.value(z))?;
    tiny.bandwidths = (bw, bw);
    Ok(tiny)
}

/// Encoder leaves with `x` substituted for the first layer's `w_a`.
fn encoder_with(tape: &mut Tape, params: &EncoderParams, x: Var) -> EncoderVars {
    let mut ev = params.bind(tape, false);
    ev.layers[0].w_a = x;
    ev
}

fn masker_with(tape: &mut Tape, params: &MaskerParams, x: Var) -> MaskerVars {
    let mut mv = params.bind(tape, false);
    mv.w1 = x;
    mv
}

fn composite_cases(rng: &mut RngStream) -> Result<Vec<Case>> {
    let tiny = std::rc::Rc::new(tiny(rng)?);
    let mut cases = Vec::new();
    let d = tiny.encoder.layers[0].w_a.dims();
    let m = tiny.masker.w1.dims();

    {
        let t0 = tiny.clone();
        let w = fixed(rng, 6, 4);
        cases.push(Case {
            name: "gin_layer",
            point: normal(d.0, d.1),
            f: Box::new(move |t, x| {
                let ev = encoder_with(t, &t0.encoder, x);
                let g = &t0.graphs[0];
                let a = t.constant(g.adjacency.clone());
                let h = t.constant(g.features.clone());
                let y = gin_layer(t, h, a, &ev.layers[0])?;
                weighted(t, y, &w)
            }),
        });
    }
    {
        let w = fixed(rng, 1, 10);
        cases.push(Case {
            name: "bilinear_pool",
            point: normal(6, 4),
            f: Box::new(move |t, x| {
                let y = bilinear_pool(t, x)?;
                weighted(t, y, &w)
            }),
        });
    }
    cases.push(Case {
        name: "gaussian_gram",
        point: normal(5, 3),
        f: Box::new(|t, x| {
            let g = gaussian_gram_on_tape(t, x, 1.3)?;
            let w = Tensor::from_fn(5, 5, |i, j| ((i * 5 + j) as f64).sin());
            weighted(t, g, &w)
        }),
    });
    for (name, alpha) in [("renyi_entropy/alpha2", 2.0), ("renyi_entropy/alpha3", 3.0)] {
        cases.push(Case {
            name,
            point: normal(5, 3),
            f: Box::new(move |t, x| {
                let g = gaussian_gram_on_tape(t, x, 1.3)?;
                let a = normalize_trace_on_tape(t, g)?;
                renyi_entropy_on_tape(t, a, alpha)
            }),
        });
    }
    {
        let other = fixed(rng, 6, 3);
        cases.push(Case {
            name: "mutual_information",
            point: normal(6, 3),
            f: Box::new(move |t, x| {
                let y = t.constant(other.clone());
                Ok(mutual_information_with_bandwidth(t, x, y, 2.0, Some((1.4, 1.1)))?.mi)
            }),
        });
    }
    {
        let w = fixed(rng, 5, 3);
        cases.push(Case {
            name: "standardize",
            point: normal(5, 3),
            f: Box::new(move |t, x| {
                let s = standardize_on_tape(t, x)?;
                weighted(t, s, &w)
            }),
        });
    }
    {
        let other = fixed(rng, 6, 3);
        cases.push(Case {
            name: "cca_loss",
            point: normal(6, 3),
            f: Box::new(move |t, x| {
                let y = t.constant(other.clone());
                let sa = standardize_on_tape(t, x)?;
                let sb = standardize_on_tape(t, y)?;
                Ok(cca_loss_on_tape(t, sa, sb, 0.3)?.total)
            }),
        });
    }
    let ib = |tiny: std::rc::Rc<Tiny>, on_masker: bool| -> Objective {
        Box::new(move |t, x| {
            let graphs: Vec<&BrainGraph> = tiny.graphs.iter().collect();
            let batch = IbBatch {
                graphs: &graphs,
                noise: &tiny.noise,
                bandwidths: Some(tiny.bandwidths),
            };
            let (mv, ev) = if on_masker {
                (masker_with(t, &tiny.masker, x), tiny.encoder.bind(t, false))
            } else {
                (tiny.masker.bind(t, false), encoder_with(t, &tiny.encoder, x))
            };
            let hv = tiny.head.bind(t, false);
            Ok(ib_loss_on_tape(t, &batch, &mv, &ev, &hv, &tiny.layout, 0.5, 0.5, 2.0, false)?.total)
        })
    };
    let base_m = tiny.masker.w1.clone();
    let base_e = tiny.encoder.layers[0].w_a.clone();
    cases.push(Case {
        name: "ib_loss/masker",
        point: Box::new(move |rng| Tensor::from_fn(m.0, m.1, |i, j| base_m.get(i, j) + 0.3 * rng.normal())),
        f: ib(tiny.clone(), true),
    });
    cases.push(Case {
        name: "ib_loss/encoder",
        point: Box::new(move |rng| Tensor::from_fn(d.0, d.1, |i, j| base_e.get(i, j) + 0.3 * rng.normal())),
        f: ib(tiny.clone(), false),
    });
    {
        let t0 = tiny.clone();
        let mut vrng = rng.split(77);
        let views: Vec<(BrainGraph, BrainGraph)> = t0
            .graphs
            .iter()
            .map(|g| {
                let mut drop = |g: &BrainGraph| {
                    let n = g.node_count();
                    let mut a = g.adjacency.clone();
                    for i in 0..n {
                        for j in i + 1..n {
                            if vrng.bernoulli(0.3) {
                                a.set(i, j, 0.0);
                                a.set(j, i, 0.0);
                            }
                        }
                    }
                    g.with_adjacency(a)
                };
                (drop(g), drop(g))
            })
            .collect();
        let base = t0.encoder.layers[0].w_a.clone();
        cases.push(Case {
            name: "ssl_loss/encoder",
            point: Box::new(move |rng| Tensor::from_fn(d.0, d.1, |i, j| base.get(i, j) + 0.3 * rng.normal())),
            f: Box::new(move |t, x| {
                let ev = encoder_with(t, &t0.encoder, x);
                Ok(ssl_loss_on_tape(t, &views, &ev, 0.05)?.total)
            }),
        });
    }
    Ok(cases)
}

/// Run every check at `points` random points drawn from `seed`.
pub fn grad_check_suite(points: usize, seed: u64) -> Result<Vec<OpCheck>> {
    let root = RngStream::new(seed);
    let mut cases = op_cases(&mut root.split(1));
    cases.extend(composite_cases(&mut root.split(2))?);
    let mut out = Vec::with_capacity(cases.len());
    for (k, case) in cases.iter().enumerate() {
        let mut rng = root.split(100 + k as u64);
        let mut check = OpCheck {
            name: case.name.to_string(),
            max_rel_error: 0.0,
            checked: 0,
            skipped: 0,
        };
        for _ in 0..points {
            let x = (case.point)(&mut rng);
            let r = grad_check_report(&case.f, &x, GRAD_EPS)?;
            check.max_rel_error = check.max_rel_error.max(r.max_rel_error);
            check.checked += r.checked;
            check.skipped += r.skipped;
        }
        out.push(check);
    }
    Ok(out)
}

/// Backward of the straight-through estimator is the identity on the soft
/// input; returns the largest deviation over `points` random inputs.
pub fn straight_through_identity(points: usize, seed: u64) -> Result<f64> {
    let mut rng = RngStream::new(seed);
    let mut worst: f64 = 0.0;
    for _ in 0..points {
        let soft = Tensor::from_fn(3, 4, |_, _| rng.normal());
        let hard = soft.map(|v| f64::from(u8::from(v > 0.0)));
        let w = fixed(&mut rng, 3, 4);
        let mut tape = Tape::new();
        let s = tape.param(soft.clone());
        let st = tape.straight_through(hard.clone(), s)?;
        if tape.value(st) != &hard {
            return Ok(f64::INFINITY);
        }
        let loss = weighted(&mut tape, st, &w)?;
        let g = tape.backward(loss)?.wrt(s, &soft);
        worst = worst.max(g.max_abs_diff(&w));
    }
    Ok(worst)
}
