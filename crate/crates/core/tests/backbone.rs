use leanstereo::backbone::{Backbone, BackboneConfig, FeatureMap, ImageBatch};
use leanstereo::nn::{Builder, Fwd, ParamStore};
use leanstereo::ops::testing::rand_tensor;
use leanstereo::profiler::count_parameters;
use leanstereo::{ops, Error, Graph, Tensor};

fn build(cfg: &BackboneConfig) -> (ParamStore, Backbone) {
    let mut store = ParamStore::new();
    let bb = Backbone::new(&mut Builder::new(&mut store, 11), cfg).unwrap();
    (store, bb)
}

fn shape(g: &Graph, fm: FeatureMap) -> Vec<usize> {
    g.value(fm.var).shape().to_vec()
}

#[test]
fn branch_output_shapes() {
    let (store, bb) = build(&BackboneConfig::default());
    let mut g = Graph::inference();
    let x = g.input(rand_tensor(&[1, 3, 64, 128], 1));
    let mut f = Fwd::new(&mut g, &store, false);
    let sh = bb.shallow.forward(&mut f, x).unwrap();
    let stem = bb.deep.stem_forward(&mut f, x).unwrap();
    let dp = bb.deep.forward(&mut f, x).unwrap();
    assert_eq!(shape(&g, sh), [1, 128, 8, 16]);
    assert_eq!(sh.level, 3);
    assert_eq!(shape(&g, stem), [1, 16, 16, 32]);
    assert_eq!(shape(&g, dp), [1, 128, 2, 4]);
    assert_eq!(dp.level, 5);
}

#[test]
fn batch_two_at_256x512() {
    let (store, bb) = build(&BackboneConfig::default());
    let mut g = Graph::inference();
    let x = g.input(rand_tensor(&[2, 3, 256, 512], 2));
    let mut f = Fwd::new(&mut g, &store, false);
    let sh = bb.shallow.forward(&mut f, x).unwrap();
    assert_eq!(shape(&g, sh), [2, 128, 32, 64]);
    sh.check_scale(&g, (256, 512)).unwrap();
}

#[test]
fn zero_input_stays_finite_and_is_deterministic() {
    let (store, bb) = build(&BackboneConfig::default());
    let img = ImageBatch::new(Tensor::zeros(&[1, 3, 64, 128]), (64, 128)).unwrap();
    let a = leanstereo::backbone::extract(&bb, &store, &img, false).unwrap();
    let b = leanstereo::backbone::extract(&bb, &store, &img, false).unwrap();
    assert!(a.all_finite());
    assert_eq!(a, b);
    let big = ImageBatch::new(Tensor::full(&[1, 3, 64, 128], 3.0), (64, 128)).unwrap();
    assert!(leanstereo::backbone::extract(&bb, &store, &big, false)
        .unwrap()
        .all_finite());
}

#[test]
fn aggregation_shape_and_half_gate() {
    let (store, bb) = build(&BackboneConfig::default());
    let mut g = Graph::inference();
    let s = g.input(rand_tensor(&[1, 128, 32, 64], 3));
    let d = g.input(Tensor::zeros(&[1, 128, 8, 16]));
    let mut f = Fwd::new(&mut g, &store, false);
    let gate = bb.aggregate.shallow_gate(&mut f, d, (32, 64)).unwrap();
    let out = bb
        .aggregate
        .forward(
            &mut f,
            FeatureMap { var: s, level: 3 },
            FeatureMap { var: d, level: 5 },
        )
        .unwrap();
    assert_eq!(shape(&g, out), [1, 128, 32, 64]);
    assert!(g.value(gate).data().iter().all(|&v| v == 0.5));
}

#[test]
fn aggregation_rejects_level_or_channel_mismatch() {
    let (store, bb) = build(&BackboneConfig::default());
    let mut g = Graph::inference();
    let s = g.input(rand_tensor(&[1, 128, 32, 64], 3));
    let d = g.input(rand_tensor(&[1, 64, 8, 16], 4));
    let d5 = g.input(rand_tensor(&[1, 128, 8, 16], 4));
    let mut f = Fwd::new(&mut g, &store, false);
    let r = bb.aggregate.forward(
        &mut f,
        FeatureMap { var: s, level: 3 },
        FeatureMap { var: d, level: 5 },
    );
    assert!(matches!(r, Err(Error::Contract(_))));
    let r = bb.aggregate.forward(
        &mut f,
        FeatureMap { var: s, level: 3 },
        FeatureMap { var: d5, level: 4 },
    );
    assert!(matches!(r, Err(Error::Contract(_))));
}

#[test]
fn aggregation_gradient_reaches_both_inputs() {
    let cfg = BackboneConfig {
        shallow_channels: [4, 4, 4],
        deep_channels: [2, 4, 4, 4],
        ge_expansion: 2,
        out_channels: 4,
    };
    let (store, bb) = build(&cfg);
    let mut g = Graph::training();
    let s = g.leaf(rand_tensor(&[1, 4, 8, 8], 5), true);
    let d = g.leaf(rand_tensor(&[1, 4, 2, 2], 6), true);
    let mut f = Fwd::new(&mut g, &store, true);
    let out = bb
        .aggregate
        .forward(
            &mut f,
            FeatureMap { var: s, level: 3 },
            FeatureMap { var: d, level: 5 },
        )
        .unwrap();
    let total = ops::sum_all(&mut g, out.var);
    let grads = g.backward(total);
    for v in [s, d] {
        let gr = grads.get(v).unwrap();
        assert!(gr.data().iter().any(|&x| x != 0.0));
    }
}

#[test]
fn shared_weights_give_equal_and_swappable_features() {
    let cfg = leanstereo::ModelConfig::desk().backbone;
    let (store, bb) = build(&cfg);
    let a = rand_tensor(&[1, 3, 64, 128], 7);
    let b = rand_tensor(&[1, 3, 64, 128], 8);
    let run = |l: &Tensor, r: &Tensor| {
        let mut g = Graph::inference();
        let (lv, rv) = (g.input(l.clone()), g.input(r.clone()));
        let mut f = Fwd::new(&mut g, &store, false);
        let (lf, rf) = bb.forward(&mut f, lv, rv).unwrap();
        (g.value(lf.var).clone(), g.value(rf.var).clone())
    };
    let (l1, r1) = run(&a, &a);
    assert_eq!(l1, r1);
    let (l2, r2) = run(&a, &b);
    let (l3, r3) = run(&b, &a);
    assert_eq!(l2, r3);
    assert_eq!(r2, l3);
}

#[test]
fn mismatched_pair_is_rejected() {
    let (store, bb) = build(&leanstereo::ModelConfig::desk().backbone);
    let mut g = Graph::inference();
    let l = g.input(Tensor::zeros(&[1, 3, 64, 128]));
    let r = g.input(Tensor::zeros(&[1, 3, 64, 96]));
    let mut f = Fwd::new(&mut g, &store, false);
    assert!(matches!(bb.forward(&mut f, l, r), Err(Error::Shape(_))));
}

#[test]
fn image_batch_requires_multiples_of_32() {
    assert!(ImageBatch::new(Tensor::zeros(&[1, 3, 60, 128]), (60, 128)).is_err());
    assert!(ImageBatch::new(Tensor::zeros(&[1, 3, 64, 128]), (70, 128)).is_err());
    assert!(ImageBatch::new(Tensor::zeros(&[1, 3, 64, 128]), (60, 120)).is_ok());
}

#[test]
fn analytic_parameter_count_equals_live_count() {
    for cfg in [
        BackboneConfig::default(),
        leanstereo::ModelConfig::desk().backbone,
    ] {
        let (store, bb) = build(&cfg);
        let mut layers = Vec::new();
        bb.describe((64, 128), &mut layers).unwrap();
        assert_eq!(count_parameters(&layers) as usize, bb.param_count(&store));
        assert_eq!(bb.param_count(&store), store.count());
    }
}
