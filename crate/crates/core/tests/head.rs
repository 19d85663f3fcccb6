use leanstereo::backbone::ImageBatch;
use leanstereo::cost_volume::CostVolume;
use leanstereo::head::{AggregationHead, HeadConfig, HeadResult, Mode};
use leanstereo::nn::{Builder, Fwd, ParamStore};
use leanstereo::ops::testing::rand_tensor;
use leanstereo::ops::{disparity_probabilities, regress_apply, soft_argmax};
use leanstereo::{ops, Graph, LeanStereo, ModelConfig, Tensor};

fn head(cin: usize, base: usize) -> (ParamStore, AggregationHead) {
    let mut store = ParamStore::new();
    let cfg = HeadConfig {
        base_width: base,
        separable: false,
    };
    let h = AggregationHead::new(&mut Builder::new(&mut store, 3), &cfg, cin).unwrap();
    (store, h)
}

#[test]
fn pre_aggregate_sets_base_width_and_keeps_grid() {
    let (store, h) = head(24, 32);
    let x = rand_tensor(&[1, 24, 24, 8, 16], 1);
    let run = || {
        let mut g = Graph::inference();
        let v = g.input(x.clone());
        let mut f = Fwd::new(&mut g, &store, false);
        let y = h.pre.forward(&mut f, v).unwrap();
        g.value(y).clone()
    };
    let a = run();
    assert_eq!(a.shape(), [1, 32, 24, 8, 16]);
    assert_eq!(a, run());
}

#[test]
fn hourglass_preserves_shape_with_quarter_bottleneck() {
    let (store, h) = head(24, 32);
    let mut g = Graph::inference();
    let v = g.input(rand_tensor(&[1, 32, 24, 8, 16], 2));
    let mut f = Fwd::new(&mut g, &store, false);
    let (out, bottleneck) = h.hourglass[0].forward_with_bottleneck(&mut f, v).unwrap();
    assert_eq!(g.value(out).shape(), [1, 32, 24, 8, 16]);
    assert_eq!(g.value(bottleneck).shape(), [1, 128, 6, 2, 4]);
}

#[test]
fn hourglass_rejects_grids_not_divisible_by_four() {
    let (store, h) = head(8, 8);
    let mut g = Graph::inference();
    let v = g.input(rand_tensor(&[1, 8, 6, 4, 4], 2));
    let mut f = Fwd::new(&mut g, &store, false);
    assert!(matches!(
        h.hourglass[0].forward(&mut f, v),
        Err(leanstereo::Error::Config(_))
    ));
}

#[test]
fn hourglass_gradient_reaches_input_through_skip_and_trunk() {
    let (store, h) = head(4, 4);
    let mut g = Graph::training();
    let x = g.leaf(rand_tensor(&[1, 4, 4, 4, 4], 3), true);
    let mut f = Fwd::new(&mut g, &store, true);
    let y = h.hourglass[0].forward(&mut f, x).unwrap();
    let s = ops::sum_all(&mut g, y);
    let grads = g.backward(s);
    let gx = grads.get(x).unwrap();
    assert!(gx.data().iter().filter(|v| **v != 0.0).count() > gx.numel() / 2);
    let pg = grads.param_grads();
    for part in ["hourglass1.redir1", "hourglass1.conv1"] {
        let ids: Vec<_> = store
            .params()
            .filter(|(_, n, _)| n.contains(part))
            .map(|(i, _, _)| i)
            .collect();
        assert!(!ids.is_empty());
        let touched = pg
            .iter()
            .filter(|(id, _)| ids.contains(id))
            .any(|(_, t)| t.data().iter().any(|v| *v != 0.0));
        assert!(touched, "no gradient in {}", part);
    }
}

#[test]
fn regression_unit_cases() {
    let d = 192;
    let uniform = Tensor::full(&[1, d, 1, 1], 1.0 / d as f32);
    assert!((soft_argmax(&uniform).unwrap().data()[0] - 95.5).abs() < 1e-4);
    let mut one_hot = Tensor::zeros(&[1, d, 1, 1]);
    one_hot.set(&[0, 24, 0, 0], 1.0);
    assert!((soft_argmax(&one_hot).unwrap().data()[0] - 24.0).abs() < 1e-4);
    let mut pair = Tensor::zeros(&[1, d, 1, 1]);
    pair.set(&[0, 10, 0, 0], 0.5);
    pair.set(&[0, 20, 0, 0], 0.5);
    assert!((soft_argmax(&pair).unwrap().data()[0] - 15.0).abs() < 1e-4);
    let flat = regress_apply(&Tensor::zeros(&[1, 1, 24, 2, 2]), (16, 16), d).unwrap();
    assert!(flat.data().iter().all(|v| (v - 95.5).abs() < 1e-3));
}

#[test]
fn probabilities_sum_to_one_and_match_fused_path() {
    let logits = rand_tensor(&[1, 1, 24, 4, 8], 4).map(|v| 6.0 * v);
    let p = disparity_probabilities(&logits, (32, 64), 192).unwrap();
    for y in 0..32 {
        for x in 0..64 {
            let s: f32 = (0..192).map(|d| p.at(&[0, d, y, x])).sum();
            assert!((s - 1.0).abs() < 1e-5);
        }
    }
    let fused = regress_apply(&logits, (32, 64), 192).unwrap();
    assert!(soft_argmax(&p).unwrap().max_abs_diff(&fused) < 1e-3);
    assert!(fused.data().iter().all(|v| (0.0..=191.0).contains(v)));
}

fn pair(seed: u64) -> (ImageBatch, ImageBatch) {
    let l = rand_tensor(&[1, 3, 64, 128], seed);
    let r = rand_tensor(&[1, 3, 64, 128], seed + 1);
    (
        ImageBatch::unpadded(l).unwrap(),
        ImageBatch::unpadded(r).unwrap(),
    )
}

#[test]
fn train_mode_returns_three_maps_and_eval_matches_out2() {
    let mut cfg = ModelConfig::desk();
    cfg.cost_volume.max_disparity = 192;
    cfg.cost_volume.disp_stride = 8;
    let model = LeanStereo::new(&cfg, 9).unwrap();
    let (l, r) = pair(5);
    let mut g = Graph::inference();
    let (lv, rv) = (g.input(l.data().clone()), g.input(r.data().clone()));
    let outs = match model.forward(&mut g, lv, rv, Mode::Train, false).unwrap() {
        HeadResult::Train(o) => o,
        HeadResult::Eval(_) => panic!("train mode must return three outputs"),
    };
    for v in outs.as_array() {
        let t = g.value(v);
        assert_eq!(t.shape(), [1, 64, 128]);
        assert!(t.data().iter().all(|d| (0.0..=191.0).contains(d)));
    }
    let train_regressions = g.stats().regress_calls;
    let out2 = g.value(outs.out2).clone();

    let mut ge = Graph::inference();
    let (lv, rv) = (ge.input(l.data().clone()), ge.input(r.data().clone()));
    let res = model.forward(&mut ge, lv, rv, Mode::Eval, false).unwrap();
    assert!(matches!(res, HeadResult::Eval(_)));
    assert_eq!(ge.value(res.final_output()), &out2);
    assert_eq!(train_regressions, 3);
    assert_eq!(ge.stats().regress_calls, 1);
    assert!(ge.stats().conv_calls < g.stats().conv_calls);
}

#[test]
fn regression_feeds_from_volume_grid() {
    let (store, h) = head(8, 8);
    let mut g = Graph::inference();
    let var = g.input(rand_tensor(&[1, 8, 8, 4, 8], 6));
    let mut f = Fwd::new(&mut g, &store, false);
    let out = h
        .forward(
            &mut f,
            CostVolume {
                var,
                level: 3,
                disp_stride: 8,
            },
            (32, 64),
            64,
            Mode::Eval,
        )
        .unwrap();
    let t = g.value(out.final_output());
    assert_eq!(t.shape(), [1, 32, 64]);
    assert!(t
        .data()
        .iter()
        .all(|d| (0.0..=63.0).contains(d) && d.is_finite()));
}
