use proptest::prelude::*;
use sambg_core::data::BrainGraph;
use sambg_core::encoder::{encode, encode_batch, EncoderConfig, EncoderParams};
use sambg_core::rng::RngStream;
use sambg_core::tensor::Tensor;

fn graph(n: usize, d: usize, seed: u64) -> BrainGraph {
    let mut rng = RngStream::new(seed);
    let raw = Tensor::from_fn(n, n, |_, _| rng.uniform_range(-1.0, 1.0));
    let adjacency = Tensor::from_fn(n, n, |i, j| if i == j { 0.0 } else { raw.get(i.min(j), i.max(j)) });
    let features = Tensor::from_fn(n, d, |_, _| rng.normal());
    BrainGraph { id: "g".into(), adjacency, features, label: None }
}

fn permute(g: &BrainGraph, perm: &[usize]) -> BrainGraph {
    let n = perm.len();
    BrainGraph {
        id: g.id.clone(),
        adjacency: Tensor::from_fn(n, n, |i, j| g.adjacency.get(perm[i], perm[j])),
        features: Tensor::from_fn(n, g.features.cols(), |i, j| g.features.get(perm[i], j)),
        label: g.label,
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn embedding_is_invariant_to_node_order(n in 2usize..14, d in 1usize..6, layers in 1usize..4, seed in 0u64..1000) {
        let cfg = EncoderConfig { layers, hidden: 8, out: 5, init_scale: 1.0 };
        let params = EncoderParams::init(d, &cfg, &mut RngStream::new(seed)).unwrap();
        let g = graph(n, d, seed + 1);
        let mut perm: Vec<usize> = (0..n).collect();
        RngStream::new(seed + 2).shuffle(&mut perm);
        let z = encode(&g, &params).unwrap();
        let zp = encode(&permute(&g, &perm), &params).unwrap();
        prop_assert_eq!(z.dims(), (1, 5));
        let scale = z.data().iter().fold(1.0f64, |m, v| m.max(v.abs()));
        prop_assert!(z.max_abs_diff(&zp) <= 1e-10 * scale);
    }
}

#[test]
fn batch_stacks_single_embeddings() {
    let cfg = EncoderConfig::default();
    let params = EncoderParams::init(4, &cfg, &mut RngStream::new(0)).unwrap();
    let gs: Vec<BrainGraph> = (0..3).map(|s| graph(6, 4, s)).collect();
    let refs: Vec<&BrainGraph> = gs.iter().collect();
    let z = encode_batch(&refs, &params).unwrap();
    for (i, g) in gs.iter().enumerate() {
        assert_eq!(z.row(i), encode(g, &params).unwrap().row(0));
    }
}

#[test]
fn feature_width_mismatch_is_rejected() {
    let params = EncoderParams::init(4, &EncoderConfig::default(), &mut RngStream::new(0)).unwrap();
    assert!(encode(&graph(6, 3, 0), &params).is_err());
}
